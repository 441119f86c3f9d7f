#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/error.hpp"

namespace agentsim::policy {

using nlohmann::json;

struct Principal {
    std::string id;
    std::vector<std::string> roles;
    std::map<std::string, std::string> attributes;
    int privilege_level = 0;

    bool has_role(const std::string& role) const;
    json to_json() const;
};

enum class Effect { Allow, Deny, RequireApproval };

const char* to_string(Effect e);
Effect effect_from_string(const std::string& s);

/// Conjunction of optional matchers; an absent matcher always holds.
/// Role/level matchers apply to the *effective* privileges of the whole
/// delegation chain, not to the head principal alone.
struct RuleMatch {
    std::optional<std::string> action_kind;  // "tool_call" | "final_answer"
    std::optional<std::string> tool;
    std::optional<std::string> risk_tier;  // "Low" | "High"
    std::vector<std::string> roles_any;
    std::optional<int> min_level;
    std::optional<int> max_level;
    std::optional<std::string> principal_id;  // originating principal (chain head)
    std::map<std::string, std::string> context_equals;

    json to_json() const;
};

struct PolicyRule {
    std::string rule_id;
    RuleMatch match;
    Effect effect = Effect::Deny;
    int priority = 0;

    std::string digest() const;
};

/// What the gate sees of a proposed action.
struct ActionRef {
    std::string kind;     // "tool_call" | "final_answer"
    std::string digest;   // tool spec digest or plan digest
    std::string tool_name;
    std::string risk_tier;  // empty when not applicable
    std::vector<std::string> access_tags;  // roles permitted by the tool; empty = unrestricted
};

struct PolicyDecision {
    std::string decision_id;
    Effect effect = Effect::Deny;
    std::string matched_rule;  // rule_id, "default-deny" or "access-tags"
    std::string principal;
    std::string action_digest;
    int step = 0;
    bool requires_approval_satisfied = false;

    json to_json() const;
};

struct ApprovalRecord {
    std::string decision_id;
    std::string approver;
    int step_granted = 0;
};

/// Approval staged in the scenario: grants the named approver's sign-off
/// for a RequireApproval decision on `tool` (optionally pinned to a step).
struct StagedApproval {
    std::string tool;
    std::optional<int> step;
    std::string approver;
};

struct EffectivePrivileges {
    std::vector<std::string> roles;  // intersection over the chain, sorted
    int level = 0;                   // minimum over the chain
};

/// Role intersection and minimum privilege level across a delegation chain.
/// Adding a delegate can only shrink the result.
EffectivePrivileges effective_privileges(const std::vector<Principal>& chain);

/// Immutable deny-by-default rule evaluator.
class PolicyEngine {
public:
    PolicyEngine() = default;
    explicit PolicyEngine(std::vector<PolicyRule> rules);

    /// Highest priority wins; ties break Deny > RequireApproval > Allow;
    /// no match means default-deny. Tool access tags are enforced ahead of
    /// the rule list and cannot be overridden by an Allow rule.
    PolicyDecision evaluate(const ActionRef& action, const std::vector<Principal>& chain,
                            const std::map<std::string, std::string>& context, int step,
                            const std::string& decision_id) const;

    const std::vector<PolicyRule>& rules() const { return rules_; }

    /// (rule_id, digest) pairs in declaration order, for context summaries
    /// and audits.
    std::vector<std::pair<std::string, std::string>> rule_digests() const;

private:
    std::vector<PolicyRule> rules_;
};

/// Per-run decision issuing on top of a shared immutable engine. Holds the
/// staged approvals and the approvals actually granted during the run.
class GateSession {
public:
    GateSession(const PolicyEngine* engine, std::string run_id,
                std::vector<StagedApproval> staged, std::map<std::string, Principal> principals);

    PolicyDecision evaluate(const ActionRef& action, const std::vector<Principal>& chain,
                            const std::map<std::string, std::string>& context, int step);

    /// Applies a matching staged approval to a RequireApproval decision, if
    /// one exists and its approver is authorized. Invalid staged entries are
    /// skipped rather than raised; direct approve() reports them as errors.
    std::optional<ApprovalRecord> try_staged_approval(PolicyDecision& decision,
                                                      const std::string& tool, int step);

    /// errors: "wrong-effect" unless decision requires approval;
    /// "unauthorized-approver" unless the approver holds the approver role.
    ApprovalRecord approve(PolicyDecision& decision, const Principal& approver, int step);

    const std::vector<ApprovalRecord>& approvals() const { return granted_; }
    const PolicyEngine& engine() const { return *engine_; }

private:
    const PolicyEngine* engine_;
    std::string run_id_;
    std::vector<StagedApproval> staged_;
    std::map<std::string, Principal> principals_;
    std::vector<ApprovalRecord> granted_;
    uint64_t counter_ = 0;
};

/// The four autonomy cap dimensions, in the fixed exhaustion-check order.
struct BudgetVec {
    int64_t tokens = 0;
    int64_t time_units = 0;
    int64_t tool_calls = 0;
    double cost_units = 0.0;

    json to_json() const;
    static BudgetVec from_json(const json& j);
};

struct Budget;

struct ChargeOutcome {
    bool charged = false;
    std::string exhausted_dimension;  // set when !charged
    BudgetVec consumed_after;         // meaningful when charged
};

struct Budget {
    BudgetVec caps;
    BudgetVec consumed;

    /// errors: "negative-cost". Exhaustion leaves consumed unchanged and
    /// names the first violated dimension in the order
    /// tokens, time_units, tool_calls, cost_units.
    ChargeOutcome charge(const BudgetVec& cost) const;

    /// Applies a ChargeOutcome produced by charge().
    void apply(const ChargeOutcome& outcome);

    BudgetVec remaining() const;
    json snapshot() const;  // {"caps": ..., "consumed": ...}
};

enum class BreakerMode { Closed, Open, HalfOpen };

const char* to_string(BreakerMode m);

struct BreakerConfig {
    int window = 5;
    int error_threshold = 3;
    int cooldown = 2;
};

/// Circuit breaker over execution outcomes. Value type: observe() returns
/// the successor state.
struct BreakerState {
    BreakerConfig cfg;
    BreakerMode mode = BreakerMode::Closed;
    std::deque<bool> window;  // true = error
    int cooldown_remaining = 0;

    /// Closed: record the outcome, trip Open once errors in the window reach
    /// the threshold. Open: ignore the outcome, count down one step, reach
    /// HalfOpen at zero. HalfOpen: the outcome is the probe; ok closes,
    /// error re-opens with a fresh cooldown.
    BreakerState observe(bool ok) const;

    int errors_in_window() const;
};

}  // namespace agentsim::policy
