#include "agentsim/kernel.hpp"

#include <charconv>
#include <set>

#include "agentsim/digest.hpp"

namespace agentsim::kernel {

json Goal::to_json() const {
    json j{{"id", id},
           {"description", description},
           {"constraints", constraints}};
    if (success_tag) j["success_tag"] = *success_tag;
    return j;
}

const char* to_string(ProposalKind k) {
    return k == ProposalKind::ToolCall ? "ToolCall" : "FinalAnswer";
}

json PlanProposal::to_json() const {
    json j{{"kind", to_string(kind)},
           {"rationale", rationale},
           {"evidence", evidence},
           {"confidence", confidence}};
    if (call) j["call"] = call->to_json();
    if (answer) j["answer"] = *answer;
    return j;
}

std::string PlanProposal::digest() const { return digest::of_json(to_json()); }

bool PlanProposal::well_formed() const {
    if (confidence < 0.0 || confidence > 1.0) return false;
    if (kind == ProposalKind::ToolCall) return call.has_value() && !answer;
    return answer.has_value() && !call;
}

json HistoryEntry::to_json() const {
    json j{{"proposal", proposal.to_json()}};
    j["result"] = result ? result->to_json() : json(nullptr);
    return j;
}

const char* to_string(Status s) {
    switch (s) {
        case Status::Running: return "Running";
        case Status::Finalized: return "Finalized";
        case Status::Stopped: return "Stopped";
        case Status::FailedSafe: return "FailedSafe";
        case Status::BudgetExhausted: return "BudgetExhausted";
    }
    return "?";
}

bool is_terminal(Status s) { return s != Status::Running; }

json Context::to_json() const {
    json w = json::array();
    for (const auto& e : window) w.push_back(e.to_json());
    json r = json::array();
    for (const auto& rec : retrieved) r.push_back(rec.to_json());
    return json{{"goal", goal.to_json()},
                {"window", w},
                {"retrieved", r},
                {"policy_summary", policy_summary},
                {"budget_remaining", budget_snapshot.to_json()}};
}

std::string Context::digest() const { return digest::of_json(to_json()); }

json RunResult::to_json() const {
    return json{{"status", to_string(status)},
                {"answer_or_summary", answer_or_summary},
                {"steps_used", steps_used},
                {"budget_consumed", budget_consumed.to_json()},
                {"trace_ref", trace_ref}};
}

AgentState init_state(const Goal& goal, int64_t k_max, std::string run_id) {
    if (goal.id.empty() || goal.description.empty())
        throw Error("invalid-argument", "goal id and description required");
    if (k_max < 1) throw Error("invalid-argument", "k_max must be >= 1");
    AgentState st;
    st.goal = goal;
    st.k_max = k_max;
    st.run_id = run_id.empty() ? digest::fresh_id("run") : std::move(run_id);
    return st;
}

Context build_context(const AgentState& state, const memory::MemoryStore& mem,
                      const std::vector<policy::Principal>& chain,
                      const std::vector<std::string>& policy_summary,
                      int64_t window, int64_t retrieve_limit,
                      const policy::Budget& budget) {
    if (state.status != Status::Running) throw Error("invalid-state");
    if (chain.empty()) throw Error("invalid-argument", "empty principal chain");

    Context ctx;
    ctx.goal = state.goal;
    int64_t n = static_cast<int64_t>(state.history.size());
    int64_t take = std::min(window, n);
    ctx.window.assign(state.history.end() - take, state.history.end());

    // Retrieval runs with the chain's intersected roles so a delegate can
    // never widen what the originating principal may read.
    auto eff = policy::effective_privileges(chain);
    policy::Principal reader;
    reader.id = chain.front().id;
    reader.roles = eff.roles;
    reader.privilege_level = eff.level;

    memory::MemoryQuery query;
    query.terms = memory::tokenize(state.goal.description);
    query.principal = reader.id;
    query.purpose = "context";
    query.limit = retrieve_limit;
    ctx.retrieved = mem.retrieve(query, reader);

    ctx.policy_summary = policy_summary;
    ctx.budget_snapshot = budget.remaining();
    return ctx;
}

PlanProposal plan_step(const PlannerScript& planner, const Context& context,
                       int64_t step_index) {
    if (step_index < 1) throw Error("invalid-argument", "step index >= 1");
    if (auto it = planner.by_digest.find(context.digest());
        it != planner.by_digest.end())
        return it->second;
    if (auto it = planner.steps.find(step_index); it != planner.steps.end())
        return it->second;
    if (planner.default_proposal) return *planner.default_proposal;
    throw Error("script-exhausted",
                "no proposal for step " + std::to_string(step_index));
}

PlanProposal repair_plan(const PlanProposal& proposal,
                         const policy::PolicyDecision& decision,
                         const PlannerScript& planner) {
    if (auto it = planner.repairs.find(decision.matched_rule + "|" + proposal.digest());
        it != planner.repairs.end())
        return it->second;
    if (auto it = planner.repairs.find(decision.matched_rule);
        it != planner.repairs.end())
        return it->second;
    PlanProposal fallback;
    fallback.kind = ProposalKind::FinalAnswer;
    fallback.answer = "blocked-by-policy";
    fallback.rationale = "rule " + decision.matched_rule + " blocked the proposal";
    fallback.evidence = {"dec:" + decision.decision_id};
    fallback.confidence = 1.0;
    return fallback;
}

bool should_stop(const AgentState& state, const StopConfig& cfg) {
    int64_t n = static_cast<int64_t>(state.history.size());
    if (n >= 2 && state.history[n - 1].proposal.digest() ==
                      state.history[n - 2].proposal.digest())
        return true;
    if (cfg.n_low >= 1 && n >= cfg.n_low) {
        bool all_low = true;
        for (int64_t i = n - cfg.n_low; i < n; ++i)
            all_low = all_low && state.history[i].proposal.confidence < cfg.theta;
        if (all_low) return true;
    }
    return false;
}

namespace {

using policy::BudgetVec;
using tools::ToolResult;

int64_t token_count(const PlanProposal& p) {
    int64_t n = static_cast<int64_t>(memory::tokenize(p.rationale).size());
    if (p.answer) n += static_cast<int64_t>(memory::tokenize(*p.answer).size());
    return n;
}

/// Everything one bounded run needs in one place; run() is the loop.
struct Loop {
    AgentState& st;
    const PlannerScript& planner;
    const tools::ToolRegistry& registry;
    policy::GateSession& gate;
    memory::MemoryStore& mem;
    tools::ToolHost& host;
    trace::TraceSink& sink;
    policy::Budget& budget;
    const RunParams& params;

    std::vector<std::string> rule_digest_list;
    std::set<std::string> decision_ids;
    std::map<std::string, policy::BreakerState> breakers;
    std::vector<std::string> tools_used;
    std::string terminal_reason;
    std::string answer_text;

    trace::Provenance prov() const {
        trace::Provenance p;
        p.planner_id = planner.planner_id;
        p.planner_version = planner.version;
        p.principal = params.chain.front().id;
        p.budget = budget.snapshot();
        return p;
    }

    bool charge(const BudgetVec& cost, const std::string& label) {
        auto outcome = budget.charge(cost);
        if (!outcome.charged) {
            json payload{{"label", label},
                         {"attempted", cost.to_json()},
                         {"charged", false},
                         {"exhausted_dimension", outcome.exhausted_dimension}};
            sink.emit(st.k, trace::EventKind::BudgetCharged, payload, prov());
            sink.emit(st.k, trace::EventKind::Escalation,
                      json{{"reason", "budget-exhausted"},
                           {"dimension", outcome.exhausted_dimension}},
                      prov());
            st.status = Status::BudgetExhausted;
            terminal_reason = "budget-exhausted:" + outcome.exhausted_dimension;
            return false;
        }
        budget.apply(outcome);
        sink.emit(st.k, trace::EventKind::BudgetCharged,
                  json{{"label", label},
                       {"cost", cost.to_json()},
                       {"charged", true},
                       {"consumed", outcome.consumed_after.to_json()}},
                  prov());
        return true;
    }

    bool charge_tokens(const PlanProposal& p) {
        int64_t n = token_count(p);
        if (n == 0) return true;
        BudgetVec cost;
        cost.tokens = n;
        return charge(cost, "plan-tokens");
    }

    bool evidence_ok(const PlanProposal& p) const {
        for (const auto& ref : p.evidence) {
            auto colon = ref.find(':');
            if (colon == std::string::npos) return false;
            std::string scheme = ref.substr(0, colon);
            std::string rest = ref.substr(colon + 1);
            if (scheme == "seq") {
                int64_t n = -1;
                auto [ptr, ec] =
                    std::from_chars(rest.data(), rest.data() + rest.size(), n);
                if (ec != std::errc{} || ptr != rest.data() + rest.size())
                    return false;
                if (n < 0 || n >= static_cast<int64_t>(sink.events().size()))
                    return false;
            } else if (scheme == "mem") {
                if (!mem.find(rest)) return false;
            } else if (scheme == "dec") {
                if (!decision_ids.count(rest)) return false;
            } else {
                return false;
            }
        }
        return true;
    }

    void emit_plan(const PlanProposal& p, const std::string& repair_of) {
        json payload{{"proposal", p.to_json()}, {"digest", p.digest()}};
        if (!repair_of.empty()) payload["repair_of"] = repair_of;
        sink.emit(st.k, trace::EventKind::PlanProposed, payload, prov());
    }

    /// Gate round: emits PolicyEvaluated and, when a staged approval
    /// satisfies a RequireApproval decision, ApprovalGranted.
    policy::PolicyDecision gate_round(const policy::ActionRef& action) {
        std::map<std::string, std::string> ctx{{"goal_id", st.goal.id}};
        policy::PolicyDecision d =
            gate.evaluate(action, params.chain, ctx, static_cast<int>(st.k));
        decision_ids.insert(d.decision_id);
        trace::Provenance p = prov();
        p.decision_id = d.decision_id;
        sink.emit(st.k, trace::EventKind::PolicyEvaluated,
                  json{{"decision", d.to_json()},
                       {"action_kind", action.kind},
                       {"tool", action.tool_name}},
                  p);
        if (d.effect == policy::Effect::RequireApproval) {
            auto rec = gate.try_staged_approval(d, action.tool_name,
                                                static_cast<int>(st.k));
            if (rec) {
                trace::Provenance ap = prov();
                ap.decision_id = d.decision_id;
                sink.emit(st.k, trace::EventKind::ApprovalGranted,
                          json{{"decision_id", rec->decision_id},
                               {"approver", rec->approver},
                               {"step_granted", rec->step_granted}},
                          ap);
            }
        }
        return d;
    }

    static bool permits(const policy::PolicyDecision& d) {
        return d.effect == policy::Effect::Allow ||
               (d.effect == policy::Effect::RequireApproval &&
                d.requires_approval_satisfied);
    }

    const tools::ToolSpec* resolve(const PlanProposal& p) {
        try {
            return &registry.resolve(p.call->name, p.call->version_req);
        } catch (const Error& e) {
            st.history.push_back({p, ToolResult::failure(e.code())});
            return nullptr;
        }
    }

    policy::ActionRef action_for(const PlanProposal& p,
                                 const tools::ToolSpec* spec) const {
        policy::ActionRef act;
        act.digest = p.digest();
        if (p.kind == ProposalKind::ToolCall) {
            act.kind = "tool_call";
            act.tool_name = p.call->name;
            act.risk_tier = spec->risk_tier;
            act.access_tags = spec->access_tags;
        } else {
            act.kind = "final_answer";
        }
        return act;
    }

    void emit_retrieve(const Context& ctx) {
        std::vector<std::string> ids;
        for (const auto& rec : ctx.retrieved) ids.push_back(rec.id);
        trace::Provenance p = prov();
        p.memory_op_ids = ids;
        sink.emit(st.k, trace::EventKind::MemoryOp,
                  json{{"op", "retrieve"},
                       {"tier", "any"},
                       {"retention_class", "none"},
                       {"record_ids", ids}},
                  p);
    }

    void write_result_memory(const tools::ToolSpec& spec, const ToolResult& r) {
        memory::MemoryRecord rec;
        rec.tier = memory::Tier::Working;
        rec.content["tool"] = spec.id();
        rec.content["status"] = r.ok ? "ok" : r.error_kind;
        rec.content["output"] = digest::canonical(r.output);
        rec.scope = params.chain.front().id;
        rec.created_at = st.k;
        std::string rid = mem.write(std::move(rec));
        trace::Provenance p = prov();
        p.memory_op_ids = {rid};
        sink.emit(st.k, trace::EventKind::MemoryOp,
                  json{{"op", "write"},
                       {"tier", "Working"},
                       {"retention_class", "infinite"},
                       {"record_ids", json::array({rid})}},
                  p);
    }

    /// Allowed ToolCall: validate, pre-charge the invocation, pass the
    /// breaker, execute, post-charge actual usage, write memory.
    void execute_tool(const PlanProposal& p, const tools::ToolSpec& spec,
                      const policy::PolicyDecision& d) {
        tools::ToolCall call = *p.call;
        call.principal = params.chain.front().id;

        std::optional<tools::ValidatedCall> vc;
        try {
            vc = tools::validate(call, spec);
        } catch (const Error& e) {
            st.history.push_back({p, ToolResult::failure(e.code())});
            return;
        }

        BudgetVec invocation;
        invocation.tool_calls = 1;
        if (!charge(invocation, "tool-call")) return;

        policy::BreakerState fresh;
        fresh.cfg = params.breaker;
        policy::BreakerState& br = breakers.try_emplace(spec.name, fresh).first->second;

        ToolResult result;
        bool executed = false;
        if (params.breaker_enabled && br.mode == policy::BreakerMode::Open) {
            result = ToolResult::failure("breaker-open");
            br = br.observe(true);  // outcome ignored in Open; ticks cooldown
        } else {
            result = host.execute(*vc, params.limits);
            executed = true;
            if (params.breaker_enabled) br = br.observe(result.ok);
        }

        json payload = result.to_json();
        payload["mode"] = tools::to_string(call.mode);
        payload["executed"] = executed;
        trace::Provenance tp = prov();
        tp.tool_name = spec.name;
        tp.tool_version = spec.version.str();
        tp.decision_id = d.decision_id;
        sink.emit(st.k, trace::EventKind::ToolExecuted, payload, tp);

        tools_used.push_back(spec.id() + ":" +
                             (result.ok ? "ok" : result.error_kind));

        if (result.latency > 0 || result.cost_charged > 0) {
            BudgetVec usage;
            usage.time_units = result.latency;
            usage.cost_units = result.cost_charged;
            if (!charge(usage, "tool-usage")) {
                st.history.push_back({p, result});
                return;
            }
        }

        write_result_memory(spec, result);
        st.history.push_back({p, result});
    }

    /// One loop iteration; returns false when the run reached a terminal
    /// status inside the step.
    void step() {
        Context ctx = build_context(st, mem, params.chain, rule_digest_list,
                                    params.window, params.retrieve_limit, budget);
        emit_retrieve(ctx);

        PlanProposal proposal = plan_step(planner, ctx, st.k);
        if (!proposal.well_formed())
            throw Error("invalid-proposal", "step " + std::to_string(st.k));
        emit_plan(proposal, "");
        if (!charge_tokens(proposal)) return;

        if (!evidence_ok(proposal)) {
            st.history.push_back({proposal, ToolResult::failure("dangling-evidence")});
            return;
        }

        const tools::ToolSpec* spec = nullptr;
        if (proposal.kind == ProposalKind::ToolCall) {
            spec = resolve(proposal);
            if (!spec) return;
        }

        policy::PolicyDecision decision = gate_round(action_for(proposal, spec));
        PlanProposal active = proposal;

        if (!permits(decision)) {
            // one repair round per step, then the step counts as failed
            PlanProposal repaired = repair_plan(proposal, decision, planner);
            emit_plan(repaired, proposal.digest());
            if (!charge_tokens(repaired)) return;
            if (!repaired.well_formed() || !evidence_ok(repaired)) {
                st.history.push_back(
                    {repaired, ToolResult::failure("dangling-evidence")});
                return;
            }
            spec = nullptr;
            if (repaired.kind == ProposalKind::ToolCall) {
                spec = resolve(repaired);
                if (!spec) return;
            }
            policy::PolicyDecision second = gate_round(action_for(repaired, spec));
            if (!permits(second)) {
                st.history.push_back(
                    {repaired, ToolResult::failure("blocked-by-policy")});
                return;
            }
            decision = second;
            active = repaired;
        }

        if (active.kind == ProposalKind::FinalAnswer) {
            st.history.push_back({active, std::nullopt});
            st.status = Status::Finalized;
            answer_text = *active.answer;
            terminal_reason = "final-answer";
            return;
        }

        execute_tool(active, *spec, decision);

        if (st.status == Status::Running && should_stop(st, params.stop)) {
            st.status = Status::Stopped;
            terminal_reason = "should-stop";
        }
    }

    std::string summary_text() const {
        std::string tools_str;
        for (const auto& t : tools_used) {
            if (!tools_str.empty()) tools_str += ";";
            tools_str += t;
        }
        if (tools_str.empty()) tools_str = "none";
        return "goal=" + st.goal.id + " status=" + to_string(st.status) +
               " steps=" + std::to_string(st.k) + "/" +
               std::to_string(st.k_max) + " tools=" + tools_str;
    }

    RunResult run() {
        for (const auto& [rule_id, dg] : gate.engine().rule_digests())
            rule_digest_list.push_back(dg);

        json started{{"goal", st.goal.to_json()},
                     {"goal_id", st.goal.id},
                     {"k_max", st.k_max}};
        for (const auto& [key, value] : params.run_started_extra.items())
            started[key] = value;
        sink.emit(0, trace::EventKind::RunStarted, started, prov());

        for (int64_t k = 1; k <= st.k_max && st.status == Status::Running; ++k) {
            st.k = k;
            try {
                step();
            } catch (const Error& e) {
                sink.emit(st.k, trace::EventKind::Escalation,
                          json{{"reason", e.code()}, {"detail", e.what()}},
                          prov());
                st.status = Status::FailedSafe;
                terminal_reason = e.code();
            }
        }

        if (st.status == Status::Running) {
            st.status = Status::FailedSafe;
            terminal_reason = "k-max-exhausted";
            sink.emit(st.k, trace::EventKind::Escalation,
                      json{{"reason", "k-max-exhausted"}, {"k_max", st.k_max}},
                      prov());
        }

        std::string out = st.status == Status::Finalized ? answer_text
                                                         : summary_text();
        bool success = st.status == Status::Finalized &&
                       (!st.goal.success_tag ||
                        answer_text.find(*st.goal.success_tag) != std::string::npos);
        sink.emit(st.k, trace::EventKind::RunTerminated,
                  json{{"status", to_string(st.status)},
                       {"steps_used", st.k},
                       {"success", success},
                       {"summary", out},
                       {"reason", terminal_reason}},
                  prov());

        RunResult rr;
        rr.status = st.status;
        rr.answer_or_summary = out;
        rr.steps_used = st.k;
        rr.budget_consumed = budget.consumed;
        rr.trace_ref = sink.run_id();
        return rr;
    }
};

}  // namespace

RunResult run_loop(AgentState state, const PlannerScript& planner,
                   const tools::ToolRegistry& registry, policy::GateSession& gate,
                   memory::MemoryStore& mem, tools::ToolHost& host,
                   trace::TraceSink& sink, policy::Budget budget,
                   const RunParams& params) {
    if (state.k != 0 || state.status != Status::Running || !state.history.empty())
        throw Error("invalid-state", "run_loop needs a fresh state");
    if (params.chain.empty())
        throw Error("invalid-argument", "empty principal chain");
    Loop loop{state, planner, registry, gate,   mem, host,
              sink,  budget,  params,   {},     {},  {},
              {},    {},      {}};
    return loop.run();
}

}  // namespace agentsim::kernel
