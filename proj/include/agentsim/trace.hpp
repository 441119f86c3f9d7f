#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/error.hpp"

namespace agentsim::trace {

using nlohmann::json;

enum class EventKind {
    RunStarted,
    PlanProposed,
    PolicyEvaluated,
    ApprovalGranted,
    ToolExecuted,
    MemoryOp,
    BudgetCharged,
    HeartbeatSent,
    MessageSent,
    MessageAcked,
    AlarmRaised,
    Escalation,
    RunTerminated,
};

const char* to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

/// Mandatory attribution carried by every event. tool_name/tool_version,
/// decision_id and memory_op_ids appear only where applicable.
struct Provenance {
    std::string planner_id;
    std::string planner_version;
    std::string principal;
    json budget = json::object();  // {"caps": .., "consumed": ..}
    std::string tool_name;
    std::string tool_version;
    std::string decision_id;
    std::vector<std::string> memory_op_ids;

    json to_json() const;
};

struct TraceEvent {
    int64_t seq = 0;
    std::string run_id;
    int64_t step = 0;
    EventKind kind = EventKind::RunStarted;
    json payload = json::object();
    json provenance = json::object();
    std::string prev_hash;
    std::string hash;

    json to_json() const;
};

/// Canonical serialization of everything under the hash: all stored fields
/// except the hash itself. A flip anywhere in the event breaks the chain.
std::string hash_body(const json& event);
std::string compute_hash(const json& event);

/// Single-writer, append-only event log for one run.
class TraceSink {
public:
    explicit TraceSink(std::string run_id) : run_id_(std::move(run_id)) {}

    /// errors: "run-terminated" once a RunTerminated event has been emitted.
    int64_t emit(int64_t step, EventKind kind, json payload, const Provenance& prov);

    const std::vector<TraceEvent>& events() const { return events_; }
    const std::string& run_id() const { return run_id_; }
    bool terminated() const { return terminated_; }
    std::string head_hash() const;

private:
    std::string run_id_;
    std::vector<TraceEvent> events_;
    bool terminated_ = false;
};

struct ChainVerdict {
    bool ok = true;
    int64_t broken_at = -1;

    json to_json() const;
};

ChainVerdict verify_chain(const std::vector<json>& events);

/// Parses then verifies; a malformed line i reports BrokenAt(i). Parsed
/// events are returned through `out` when given.
ChainVerdict verify_chain_lines(const std::vector<std::string>& lines,
                                std::vector<json>* out = nullptr);
ChainVerdict verify_chain_file(const std::string& path,
                               std::vector<json>* out = nullptr);

struct MissingField {
    int64_t seq = -1;
    std::string field;

    json to_json() const;
};

struct CompletenessReport {
    bool pass = true;
    std::vector<MissingField> missing;

    json to_json() const;
};

/// Per-kind mandatory provenance: every event needs planner_id,
/// planner_version, principal and a budget snapshot; ToolExecuted also
/// tool name+version and decision_id; PolicyEvaluated a decision_id.
/// A trace not ending in RunTerminated fails with "unterminated-run".
CompletenessReport verify_completeness(const std::vector<json>& events);

struct ReplayVerdict {
    bool identical = true;
    int64_t seq = -1;
    std::string field;

    json to_json() const;
};

/// Event-by-event, field-by-field comparison of two chains; reports the
/// first divergence. Length mismatch reports field "truncated".
ReplayVerdict compare_chains(const std::vector<json>& recorded,
                             const std::vector<json>& reproduced);

std::vector<json> events_to_json(const std::vector<TraceEvent>& events);

/// JSON-lines persistence. save overwrites; errors: "io".
void save_jsonl(const std::string& path, const std::vector<TraceEvent>& events);
std::vector<std::string> read_lines(const std::string& path);

}  // namespace agentsim::trace
