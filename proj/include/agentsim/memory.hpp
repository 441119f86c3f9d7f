#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/error.hpp"
#include "agentsim/policy.hpp"

namespace agentsim::memory {

using nlohmann::json;

enum class Tier { Working, Episodic, Semantic, Preference };

const char* to_string(Tier t);
Tier tier_from_string(const std::string& s);

enum class Sensitivity { Public, Restricted };

const char* to_string(Sensitivity s);
Sensitivity sensitivity_from_string(const std::string& s);

struct MemoryRecord {
    std::string id;  // assigned by the store when empty
    Tier tier = Tier::Working;
    std::map<std::string, std::string> content;
    std::vector<std::string> tags;
    std::string scope = "shared";  // principal id or "shared"
    Sensitivity sensitivity = Sensitivity::Public;
    int64_t created_at = 0;
    std::optional<int64_t> retention_class;  // steps-to-live; nullopt = infinite

    json to_json() const;
    static MemoryRecord from_json(const json& j);
};

struct MemoryQuery {
    std::vector<std::string> terms;
    std::optional<Tier> tier;
    std::string principal;
    std::string purpose;
    int64_t limit = 5;
};

/// Lowercased alphanumeric word split shared by scoring and its test oracle.
std::vector<std::string> tokenize(const std::string& text);

/// Score on [0,1]: fraction of distinct query terms found among the
/// record's content words.
double overlap_score(const std::vector<std::string>& terms,
                     const MemoryRecord& record);

/// One store per run. Single writer; reads are const.
class MemoryStore {
public:
    explicit MemoryStore(int64_t working_cap = 8) : working_cap_(working_cap) {}

    /// errors: "invalid-record" (negative retention, empty content).
    /// At capacity the oldest Working record is evicted first.
    std::string write(MemoryRecord record);

    /// Candidates match the tier filter and visible scope; Restricted
    /// records require the "restricted-reader" role. Ranked by
    /// (score desc, created_at desc, id asc); zero scores excluded.
    std::vector<MemoryRecord> retrieve(const MemoryQuery& query,
                                       const policy::Principal& principal) const;

    /// Drops every record with created_at + retention_class <= now.
    int64_t purge_expired(int64_t now);

    const MemoryRecord* find(const std::string& id) const;
    int64_t count(Tier tier) const;
    int64_t size() const { return static_cast<int64_t>(records_.size()); }
    const std::vector<MemoryRecord>& records() const { return records_; }

private:
    int64_t working_cap_;
    std::vector<MemoryRecord> records_;  // insertion order = FIFO order
    int64_t next_id_ = 1;
};

/// Structural digest of a terminated run: goal, terminal status, steps,
/// executed tools in order, budget consumed. errors: "run-not-terminated".
MemoryRecord summarize_episode(const std::vector<json>& trace_events,
                               int64_t now);

}  // namespace agentsim::memory
