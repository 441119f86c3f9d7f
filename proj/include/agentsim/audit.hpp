#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace agentsim::audit {

using json = nlohmann::json;

struct ControlRow {
    std::string area;
    std::string obligation;  // "MUST" | "SHOULD"
    std::string status;      // "pass" | "fail" | "not-checkable"
    std::string detail;
    std::vector<int64_t> evidence;  // trace seq refs (offending or probed)

    json to_json() const;
};

struct HardeningReport {
    bool pass = false;  // every automatable MUST row passed
    std::vector<ControlRow> rows;

    json to_json() const;
    std::string to_text() const;
};

/// Checks a corpus of completed traces (one vector of parsed events per
/// run) against the hardening checklist. Six rows are machine-checkable
/// from traces alone; the other four report not-checkable with the reason.
/// Registry and rule digests come from the scenario that produced the
/// corpus.
/// errors: "invalid-corpus" when any trace fails chain verification.
HardeningReport run_audit(
    const std::vector<std::vector<json>>& traces,
    const std::vector<std::pair<std::string, std::string>>& registry_digests,
    const std::vector<std::pair<std::string, std::string>>& rule_digests);

}  // namespace agentsim::audit
