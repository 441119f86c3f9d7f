#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agentsim/scenario.hpp"
#include "agentsim/trace.hpp"

namespace agentsim::runner {

using json = nlohmann::json;

/// Command-line overrides layered on a scenario. Injection / mitigation
/// toggles are keyed by failure mode name ("all" matches every mode).
/// Recorded in each RunStarted payload so replay can re-apply them.
struct Overrides {
    std::optional<uint64_t> seed;
    std::optional<int64_t> k_max;
    std::optional<int64_t> t_max;
    std::map<std::string, bool> inject;
    std::map<std::string, bool> mitigate;

    json to_json() const;
    static Overrides from_json(const json& j);
};

struct UnitOutcome {
    std::string unit;
    std::string run_id;
    json report;  // RunResult (runs) or SimReport (sim)
    std::vector<trace::TraceEvent> events;
};

/// Deterministic: the run id is a digest of (scenario digest, unit,
/// effective overrides), so re-execution reproduces the chain bit for bit.
/// errors: "unknown-unit", "unknown-injection" (an --inject toggle names a
/// mode the scenario does not declare), plus module validation codes.
UnitOutcome execute_unit(const scenario::ScenarioConfig& cfg,
                         const std::string& unit, const Overrides& ov);

std::vector<UnitOutcome> execute_all(const scenario::ScenarioConfig& cfg,
                                     const Overrides& ov);

std::string trace_filename(const std::string& scenario_id,
                           const std::string& unit);

/// Executes every unit and writes <id>__<unit>.trace.jsonl plus
/// <id>__<unit>.report.json under out_dir. Returns a manifest.
json run_to_files(const scenario::ScenarioConfig& cfg, const Overrides& ov,
                  const std::string& out_dir);

/// Re-executes the unit recorded in the trace and compares chains.
/// errors: "scenario-mismatch" when the recorded digest differs, "io",
/// "invalid-corpus" when the trace has no readable RunStarted.
trace::ReplayVerdict replay_trace(const scenario::ScenarioConfig& cfg,
                                  const std::string& trace_path);

/// One simulation per seed; files carry a __s<seed> suffix.
json sweep_to_files(const scenario::ScenarioConfig& cfg,
                    const std::vector<uint64_t>& seeds, const Overrides& ov,
                    const std::string& out_dir);

}  // namespace agentsim::runner
