#include "agentsim/policy.hpp"

#include <algorithm>
#include <set>

#include "agentsim/digest.hpp"

namespace agentsim::policy {

bool Principal::has_role(const std::string& role) const {
    return std::find(roles.begin(), roles.end(), role) != roles.end();
}

json Principal::to_json() const {
    return json{{"id", id},
                {"roles", roles},
                {"attributes", attributes},
                {"privilege_level", privilege_level}};
}

const char* to_string(Effect e) {
    switch (e) {
        case Effect::Allow: return "Allow";
        case Effect::Deny: return "Deny";
        case Effect::RequireApproval: return "RequireApproval";
    }
    return "Deny";
}

Effect effect_from_string(const std::string& s) {
    if (s == "Allow") return Effect::Allow;
    if (s == "Deny") return Effect::Deny;
    if (s == "RequireApproval") return Effect::RequireApproval;
    throw Error("invalid-effect", s);
}

json RuleMatch::to_json() const {
    json j = json::object();
    if (action_kind) j["action_kind"] = *action_kind;
    if (tool) j["tool"] = *tool;
    if (risk_tier) j["risk_tier"] = *risk_tier;
    if (!roles_any.empty()) j["roles_any"] = roles_any;
    if (min_level) j["min_level"] = *min_level;
    if (max_level) j["max_level"] = *max_level;
    if (principal_id) j["principal_id"] = *principal_id;
    if (!context_equals.empty()) j["context_equals"] = context_equals;
    return j;
}

std::string PolicyRule::digest() const {
    return digest::of_json(json{{"rule_id", rule_id},
                                {"match", match.to_json()},
                                {"effect", to_string(effect)},
                                {"priority", priority}});
}

json PolicyDecision::to_json() const {
    return json{{"decision_id", decision_id},
                {"effect", to_string(effect)},
                {"matched_rule", matched_rule},
                {"principal", principal},
                {"action_digest", action_digest},
                {"step", step},
                {"requires_approval_satisfied", requires_approval_satisfied}};
}

EffectivePrivileges effective_privileges(const std::vector<Principal>& chain) {
    EffectivePrivileges eff;
    if (chain.empty()) return eff;
    std::set<std::string> roles(chain.front().roles.begin(), chain.front().roles.end());
    eff.level = chain.front().privilege_level;
    for (size_t i = 1; i < chain.size(); ++i) {
        std::set<std::string> next;
        for (const auto& r : chain[i].roles)
            if (roles.count(r)) next.insert(r);
        roles = std::move(next);
        eff.level = std::min(eff.level, chain[i].privilege_level);
    }
    eff.roles.assign(roles.begin(), roles.end());
    return eff;
}

namespace {

bool intersects(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    for (const auto& x : a)
        if (std::find(b.begin(), b.end(), x) != b.end()) return true;
    return false;
}

bool rule_matches(const RuleMatch& m, const ActionRef& action, const EffectivePrivileges& eff,
                  const Principal& head, const std::map<std::string, std::string>& context) {
    if (m.action_kind && *m.action_kind != action.kind) return false;
    if (m.tool && *m.tool != action.tool_name) return false;
    if (m.risk_tier && *m.risk_tier != action.risk_tier) return false;
    if (!m.roles_any.empty() && !intersects(m.roles_any, eff.roles)) return false;
    if (m.min_level && eff.level < *m.min_level) return false;
    if (m.max_level && eff.level > *m.max_level) return false;
    if (m.principal_id && *m.principal_id != head.id) return false;
    for (const auto& [k, v] : m.context_equals) {
        auto it = context.find(k);
        if (it == context.end() || it->second != v) return false;
    }
    return true;
}

// Deny > RequireApproval > Allow at equal priority.
int effect_severity(Effect e) {
    switch (e) {
        case Effect::Deny: return 2;
        case Effect::RequireApproval: return 1;
        case Effect::Allow: return 0;
    }
    return 2;
}

}  // namespace

PolicyEngine::PolicyEngine(std::vector<PolicyRule> rules) : rules_(std::move(rules)) {
    std::set<std::string> ids;
    for (const auto& r : rules_) {
        if (!ids.insert(r.rule_id).second) throw Error("duplicate-rule", r.rule_id);
    }
}

PolicyDecision PolicyEngine::evaluate(const ActionRef& action, const std::vector<Principal>& chain,
                                      const std::map<std::string, std::string>& context, int step,
                                      const std::string& decision_id) const {
    if (chain.empty()) throw Error("empty-chain", "delegation chain must name the originator");
    PolicyDecision d;
    d.decision_id = decision_id;
    d.principal = chain.front().id;
    d.action_digest = action.digest;
    d.step = step;

    EffectivePrivileges eff = effective_privileges(chain);

    // Tool-level access tags are the tool's own access control; fail closed.
    if (!action.access_tags.empty() && !intersects(action.access_tags, eff.roles)) {
        d.effect = Effect::Deny;
        d.matched_rule = "access-tags";
        return d;
    }

    const PolicyRule* best = nullptr;
    for (const auto& r : rules_) {
        if (!rule_matches(r.match, action, eff, chain.front(), context)) continue;
        if (!best || r.priority > best->priority ||
            (r.priority == best->priority &&
             effect_severity(r.effect) > effect_severity(best->effect))) {
            best = &r;
        }
    }
    if (!best) {
        d.effect = Effect::Deny;
        d.matched_rule = "default-deny";
    } else {
        d.effect = best->effect;
        d.matched_rule = best->rule_id;
    }
    return d;
}

std::vector<std::pair<std::string, std::string>> PolicyEngine::rule_digests() const {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(rules_.size());
    for (const auto& r : rules_) out.emplace_back(r.rule_id, r.digest());
    return out;
}

GateSession::GateSession(const PolicyEngine* engine, std::string run_id,
                         std::vector<StagedApproval> staged,
                         std::map<std::string, Principal> principals)
    : engine_(engine),
      run_id_(std::move(run_id)),
      staged_(std::move(staged)),
      principals_(std::move(principals)) {}

PolicyDecision GateSession::evaluate(const ActionRef& action, const std::vector<Principal>& chain,
                                     const std::map<std::string, std::string>& context, int step) {
    std::string id = "d-" + digest::short_id(run_id_ + "|" + std::to_string(step) + "|" +
                                             action.digest + "|" + std::to_string(counter_++));
    return engine_->evaluate(action, chain, context, step, id);
}

std::optional<ApprovalRecord> GateSession::try_staged_approval(PolicyDecision& decision,
                                                               const std::string& tool, int step) {
    if (decision.effect != Effect::RequireApproval) return std::nullopt;
    for (const auto& s : staged_) {
        if (s.tool != tool) continue;
        if (s.step && *s.step != step) continue;
        auto it = principals_.find(s.approver);
        if (it == principals_.end() || !it->second.has_role("approver")) continue;
        return approve(decision, it->second, step);
    }
    return std::nullopt;
}

ApprovalRecord GateSession::approve(PolicyDecision& decision, const Principal& approver, int step) {
    if (decision.effect != Effect::RequireApproval)
        throw Error("wrong-effect", "approval applies only to RequireApproval decisions");
    if (!approver.has_role("approver"))
        throw Error("unauthorized-approver", approver.id);
    ApprovalRecord rec{decision.decision_id, approver.id, step};
    granted_.push_back(rec);
    decision.requires_approval_satisfied = true;
    return rec;
}

json BudgetVec::to_json() const {
    return json{{"tokens", tokens},
                {"time_units", time_units},
                {"tool_calls", tool_calls},
                {"cost_units", cost_units}};
}

BudgetVec BudgetVec::from_json(const json& j) {
    BudgetVec v;
    v.tokens = j.value("tokens", int64_t{0});
    v.time_units = j.value("time_units", int64_t{0});
    v.tool_calls = j.value("tool_calls", int64_t{0});
    v.cost_units = j.value("cost_units", 0.0);
    return v;
}

ChargeOutcome Budget::charge(const BudgetVec& cost) const {
    if (cost.tokens < 0 || cost.time_units < 0 || cost.tool_calls < 0 || cost.cost_units < 0)
        throw Error("negative-cost", "charge components must be non-negative");
    ChargeOutcome out;
    if (consumed.tokens + cost.tokens > caps.tokens) {
        out.exhausted_dimension = "tokens";
    } else if (consumed.time_units + cost.time_units > caps.time_units) {
        out.exhausted_dimension = "time_units";
    } else if (consumed.tool_calls + cost.tool_calls > caps.tool_calls) {
        out.exhausted_dimension = "tool_calls";
    } else if (consumed.cost_units + cost.cost_units > caps.cost_units) {
        out.exhausted_dimension = "cost_units";
    } else {
        out.charged = true;
        out.consumed_after = consumed;
        out.consumed_after.tokens += cost.tokens;
        out.consumed_after.time_units += cost.time_units;
        out.consumed_after.tool_calls += cost.tool_calls;
        out.consumed_after.cost_units += cost.cost_units;
    }
    return out;
}

void Budget::apply(const ChargeOutcome& outcome) {
    if (outcome.charged) consumed = outcome.consumed_after;
}

BudgetVec Budget::remaining() const {
    BudgetVec r;
    r.tokens = caps.tokens - consumed.tokens;
    r.time_units = caps.time_units - consumed.time_units;
    r.tool_calls = caps.tool_calls - consumed.tool_calls;
    r.cost_units = caps.cost_units - consumed.cost_units;
    return r;
}

json Budget::snapshot() const {
    return json{{"caps", caps.to_json()}, {"consumed", consumed.to_json()}};
}

const char* to_string(BreakerMode m) {
    switch (m) {
        case BreakerMode::Closed: return "Closed";
        case BreakerMode::Open: return "Open";
        case BreakerMode::HalfOpen: return "HalfOpen";
    }
    return "Closed";
}

BreakerState BreakerState::observe(bool ok) const {
    BreakerState next = *this;
    switch (mode) {
        case BreakerMode::Closed: {
            next.window.push_back(!ok);
            while (static_cast<int>(next.window.size()) > cfg.window) next.window.pop_front();
            if (next.errors_in_window() >= cfg.error_threshold) {
                next.mode = BreakerMode::Open;
                next.cooldown_remaining = cfg.cooldown;
                next.window.clear();
            }
            break;
        }
        case BreakerMode::Open: {
            next.cooldown_remaining -= 1;
            if (next.cooldown_remaining <= 0) {
                next.mode = BreakerMode::HalfOpen;
                next.cooldown_remaining = 0;
            }
            break;
        }
        case BreakerMode::HalfOpen: {
            if (ok) {
                next.mode = BreakerMode::Closed;
                next.window.clear();
            } else {
                next.mode = BreakerMode::Open;
                next.cooldown_remaining = cfg.cooldown;
            }
            break;
        }
    }
    return next;
}

int BreakerState::errors_in_window() const {
    int n = 0;
    for (bool e : window)
        if (e) ++n;
    return n;
}

}  // namespace agentsim::policy
