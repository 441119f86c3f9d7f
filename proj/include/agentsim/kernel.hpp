#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/error.hpp"
#include "agentsim/memory.hpp"
#include "agentsim/policy.hpp"
#include "agentsim/tools.hpp"
#include "agentsim/trace.hpp"

namespace agentsim::kernel {

using nlohmann::json;

struct Goal {
    std::string id;
    std::string description;
    std::vector<std::string> constraints;
    std::optional<std::string> success_tag;  // a FinalAnswer counts as success
                                             // only if its text carries this

    json to_json() const;
};

enum class ProposalKind { ToolCall, FinalAnswer };

const char* to_string(ProposalKind k);

struct PlanProposal {
    ProposalKind kind = ProposalKind::FinalAnswer;
    std::optional<tools::ToolCall> call;   // iff kind == ToolCall
    std::optional<std::string> answer;     // iff kind == FinalAnswer
    std::string rationale;
    std::vector<std::string> evidence;  // "seq:<n>" | "mem:<id>" | "dec:<id>"
    double confidence = 1.0;

    json to_json() const;
    std::string digest() const;
    bool well_formed() const;  // exactly one of call/answer, confidence in [0,1]
};

struct HistoryEntry {
    PlanProposal proposal;
    std::optional<tools::ToolResult> result;

    json to_json() const;
};

enum class Status { Running, Finalized, Stopped, FailedSafe, BudgetExhausted };

const char* to_string(Status s);
bool is_terminal(Status s);

struct AgentState {
    Goal goal;
    int64_t k = 0;
    int64_t k_max = 1;
    std::vector<HistoryEntry> history;  // one entry per completed step
    Status status = Status::Running;
    std::string run_id;
};

struct Context {
    Goal goal;
    std::vector<HistoryEntry> window;
    std::vector<memory::MemoryRecord> retrieved;
    std::vector<std::string> policy_summary;  // rule digests
    policy::BudgetVec budget_snapshot;        // remaining, not consumed

    json to_json() const;
    std::string digest() const;
};

/// Deterministic stand-in for the planning model: proposals keyed by
/// context digest (most specific), then step index, then a default.
/// Repairs are keyed by "rule_id|proposal_digest", then bare rule_id.
struct PlannerScript {
    std::string planner_id = "scripted";
    std::string version = "1";
    std::map<int64_t, PlanProposal> steps;
    std::map<std::string, PlanProposal> by_digest;
    std::optional<PlanProposal> default_proposal;
    std::map<std::string, PlanProposal> repairs;
};

struct StopConfig {
    int64_t n_low = 3;
    double theta = 0.2;
};

struct RunResult {
    Status status = Status::FailedSafe;
    std::string answer_or_summary;
    int64_t steps_used = 0;
    policy::BudgetVec budget_consumed;
    std::string trace_ref;  // run_id

    json to_json() const;
};

struct RunParams {
    int64_t window = 8;
    int64_t retrieve_limit = 5;
    StopConfig stop;
    tools::SandboxLimits limits;
    std::vector<policy::Principal> chain;  // delegation chain, head first
    policy::BreakerConfig breaker;
    bool breaker_enabled = true;
    json run_started_extra = json::object();  // merged into RunStarted payload
};

/// errors: "invalid-argument" on k_max < 1 or an invalid goal. Generates a
/// fresh run_id unless one is supplied (scenario runs pass a derived id so
/// identical inputs produce identical chains).
AgentState init_state(const Goal& goal, int64_t k_max, std::string run_id = "");

/// errors: "invalid-state" unless the state is Running. Retrieval runs
/// under the chain's effective privileges.
Context build_context(const AgentState& state, const memory::MemoryStore& mem,
                      const std::vector<policy::Principal>& chain,
                      const std::vector<std::string>& policy_summary,
                      int64_t window, int64_t retrieve_limit,
                      const policy::Budget& budget);

/// Pure lookup: context digest, then step index, then default.
/// errors: "invalid-argument" (step < 1), "script-exhausted".
PlanProposal plan_step(const PlannerScript& planner, const Context& context,
                       int64_t step_index);

/// Scripted repair for (blocking rule, proposal), else a "blocked-by-policy"
/// FinalAnswer citing the decision. Caller re-gates the result; one repair
/// per step.
PlanProposal repair_plan(const PlanProposal& proposal,
                         const policy::PolicyDecision& decision,
                         const PlannerScript& planner);

/// True iff the last two proposals have identical digests, or the last
/// cfg.n_low proposals all fall below cfg.theta confidence.
bool should_stop(const AgentState& state, const StopConfig& cfg);

/// Bounded instrumented loop. Never throws for in-run failures: every
/// outcome degrades to a terminal RunResult with matching trace events.
RunResult run_loop(AgentState state, const PlannerScript& planner,
                   const tools::ToolRegistry& registry, policy::GateSession& gate,
                   memory::MemoryStore& mem, tools::ToolHost& host,
                   trace::TraceSink& sink, policy::Budget budget,
                   const RunParams& params);

}  // namespace agentsim::kernel
