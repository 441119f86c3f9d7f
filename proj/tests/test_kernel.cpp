#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "agentsim/kernel.hpp"

using namespace agentsim;
using namespace agentsim::kernel;
using nlohmann::json;

namespace {

policy::Principal operator_p() {
    policy::Principal p;
    p.id = "alice";
    p.roles = {"operator"};
    p.privilege_level = 3;
    return p;
}

tools::ToolSpec fetch_spec() {
    tools::ToolSpec s;
    s.name = "fetch";
    s.version = tools::SemVer{1, 0, 0};
    tools::FieldSpec text;
    text.type = tools::FieldType::Text;
    s.input_schema = {{"q", text}};
    s.output_schema = {{"out", text}};
    s.behavior.kind = "echo";
    s.behavior.latency = 2;
    s.cost = 0.5;
    return s;
}

tools::ToolSpec notify_spec() {
    tools::ToolSpec s;
    s.name = "notify";
    s.version = tools::SemVer{1, 0, 0};
    tools::FieldSpec text;
    text.type = tools::FieldType::Text;
    s.input_schema = {{"msg", text}};
    s.output_schema = {{"count", text}};
    s.side_effecting = true;
    s.idempotent = true;
    s.cost = 1.0;
    s.behavior.kind = "counter";
    s.behavior.params = {{"counter", "notified"}};
    return s;
}

PlanProposal tool_step(const std::string& name, json args,
                       const std::string& key = "") {
    PlanProposal p;
    p.kind = ProposalKind::ToolCall;
    tools::ToolCall c;
    c.name = name;
    c.version_req = tools::VersionReq::parse("^1");
    c.args = std::move(args);
    c.idempotency_key = key;
    p.call = c;
    return p;
}

PlanProposal answer_step(const std::string& text) {
    PlanProposal p;
    p.kind = ProposalKind::FinalAnswer;
    p.answer = text;
    return p;
}

std::vector<policy::PolicyRule> allow_all_rules() {
    policy::RuleMatch tools_m;
    tools_m.action_kind = "tool_call";
    policy::RuleMatch final_m;
    final_m.action_kind = "final_answer";
    return {policy::PolicyRule{"allow-tools", tools_m, policy::Effect::Allow, 1},
            policy::PolicyRule{"allow-final", final_m, policy::Effect::Allow, 1}};
}

struct Fixture {
    tools::ToolRegistry registry;
    tools::ToolHost host;
    memory::MemoryStore mem;
    policy::PolicyEngine engine;
    policy::Budget budget;
    RunParams params;

    explicit Fixture(std::vector<policy::PolicyRule> rules = allow_all_rules())
        : engine(std::move(rules)) {
        registry.register_tool(fetch_spec());
        registry.register_tool(notify_spec());
        budget.caps = policy::BudgetVec{5000, 1000, 100, 250.0};
        params.chain = {operator_p()};
    }

    RunResult run(const PlannerScript& planner, int64_t k_max,
                  trace::TraceSink& sink,
                  std::vector<policy::StagedApproval> staged = {}) {
        policy::GateSession gate(&engine, sink.run_id(), std::move(staged),
                                 {{"alice", operator_p()}});
        Goal goal;
        goal.id = "g-test";
        goal.description = "exercise the loop";
        auto st = init_state(goal, k_max, sink.run_id());
        return run_loop(std::move(st), planner, registry, gate, mem, host, sink,
                        budget, params);
    }
};

}  // namespace

TEST_CASE("init_state validates its inputs") {
    Goal g;
    g.id = "g";
    g.description = "probe";
    auto st = init_state(g, 4);
    CHECK(st.k == 0);
    CHECK(st.k_max == 4);
    CHECK(st.status == Status::Running);
    CHECK_FALSE(st.run_id.empty());
    CHECK(init_state(g, 1, "run-x").run_id == "run-x");
    CHECK_THROWS_WITH_AS(init_state(g, 0), doctest::Contains("invalid-argument"),
                         Error);
    Goal empty;
    CHECK_THROWS_AS(init_state(empty, 3), Error);
}

TEST_CASE("plan lookup prefers digest over step over default") {
    PlannerScript s;
    s.steps[1] = answer_step("step one");
    s.default_proposal = answer_step("fallback");

    Context ctx;
    ctx.goal.id = "g";
    CHECK(plan_step(s, ctx, 1).answer == "step one");
    CHECK(plan_step(s, ctx, 2).answer == "fallback");

    s.by_digest[ctx.digest()] = answer_step("pinned");
    CHECK(plan_step(s, ctx, 1).answer == "pinned");

    PlannerScript bare;
    CHECK_THROWS_WITH_AS(plan_step(bare, ctx, 1),
                         doctest::Contains("script-exhausted"), Error);
    CHECK_THROWS_AS(plan_step(s, ctx, 0), Error);
}

TEST_CASE("stop rule: repeated plans or sustained low confidence") {
    AgentState st;
    StopConfig cfg;  // n_low 3, theta 0.2
    auto push = [&](const PlanProposal& p) { st.history.push_back({p, {}}); };

    CHECK_FALSE(should_stop(st, cfg));
    push(answer_step("a"));
    CHECK_FALSE(should_stop(st, cfg));
    push(answer_step("a"));
    CHECK(should_stop(st, cfg));  // identical digests back to back

    st.history.clear();
    for (int i = 0; i < 3; ++i) {
        auto p = answer_step("distinct " + std::to_string(i));
        p.confidence = 0.1;
        push(p);
    }
    CHECK(should_stop(st, cfg));

    st.history.clear();
    for (int i = 0; i < 3; ++i) {
        auto p = answer_step("distinct " + std::to_string(i));
        p.confidence = i == 1 ? 0.9 : 0.1;  // one confident step resets
        push(p);
    }
    CHECK_FALSE(should_stop(st, cfg));
}

TEST_CASE("happy path: fetch, notify, finalize") {
    Fixture fx;
    PlannerScript planner;
    planner.steps[1] = tool_step("fetch", {{"q", "status"}});
    planner.steps[2] = tool_step("notify", {{"msg", "done"}}, "notify-1");
    planner.steps[3] = answer_step("all good");

    trace::TraceSink sink("run-happy");
    auto res = fx.run(planner, 8, sink);
    CHECK(res.status == Status::Finalized);
    CHECK(res.steps_used == 3);
    CHECK(res.answer_or_summary == "all good");
    CHECK(res.budget_consumed.tool_calls == 2);
    CHECK(fx.host.counter("notified") == 1);

    // trace carries the full event shape
    int tool_events = 0;
    for (const auto& ev : sink.events()) {
        if (ev.kind == trace::EventKind::ToolExecuted) tool_events++;
        CHECK_FALSE(ev.provenance["principal"].get<std::string>().empty());
    }
    CHECK(tool_events == 2);
    CHECK(sink.events().back().payload["status"] == "Finalized");
    CHECK(trace::verify_chain(trace::events_to_json(sink.events())).ok);
    CHECK(trace::verify_completeness(trace::events_to_json(sink.events())).pass);
}

TEST_CASE("final answer success tracks the goal tag") {
    Fixture fx;
    PlannerScript planner;
    planner.steps[1] = answer_step("done: deployed");

    policy::GateSession gate(&fx.engine, "run-tag", {}, {});
    Goal goal;
    goal.id = "g";
    goal.description = "ship it";
    goal.success_tag = "deployed";
    trace::TraceSink sink("run-tag");
    auto st = init_state(goal, 3, "run-tag");
    auto res = run_loop(std::move(st), planner, fx.registry, gate, fx.mem,
                        fx.host, sink, fx.budget, fx.params);
    CHECK(res.status == Status::Finalized);
    CHECK(sink.events().back().payload["success"] == true);

    // same answer, different tag
    Goal goal2;
    goal2.id = "g2";
    goal2.description = "ship it";
    goal2.success_tag = "rolled-back";
    trace::TraceSink sink2("run-tag2");
    policy::GateSession gate2(&fx.engine, "run-tag2", {}, {});
    auto res2 = run_loop(init_state(goal2, 3, "run-tag2"), planner, fx.registry,
                         gate2, fx.mem, fx.host, sink2, fx.budget, fx.params);
    CHECK(res2.status == Status::Finalized);
    CHECK(sink2.events().back().payload["success"] == false);
}

TEST_CASE("k_max bound: a never-finishing script fails safe") {
    for (int64_t k_max : {1, 3, 7}) {
        // distinct proposals per step so no stop heuristic can fire early
        PlannerScript planner;
        for (int64_t i = 1; i <= k_max; ++i)
            planner.steps[i] =
                tool_step("fetch", {{"q", "poll " + std::to_string(i)}});

        trace::TraceSink sink("run-bound-" + std::to_string(k_max));
        Fixture fresh;
        auto res = fresh.run(planner, k_max, sink);
        CHECK(res.status == Status::FailedSafe);
        CHECK(res.steps_used <= k_max);
        bool escalated = false;
        for (const auto& ev : sink.events())
            if (ev.kind == trace::EventKind::Escalation &&
                ev.payload["reason"] == "k-max-exhausted")
                escalated = true;
        CHECK(escalated);
    }
}

TEST_CASE("identical consecutive proposals stop the run") {
    Fixture fx;
    PlannerScript planner;
    planner.default_proposal = tool_step("fetch", {{"q", "same"}});

    trace::TraceSink sink("run-stop");
    auto res = fx.run(planner, 10, sink);
    CHECK(res.status == Status::Stopped);
    CHECK(res.steps_used == 2);
}

TEST_CASE("denied action takes the scripted repair") {
    policy::RuleMatch deny_fetch;
    deny_fetch.tool = "fetch";
    auto rules = allow_all_rules();
    rules.push_back(
        policy::PolicyRule{"deny-fetch", deny_fetch, policy::Effect::Deny, 50});
    Fixture fx(rules);

    PlannerScript planner;
    planner.steps[1] = tool_step("fetch", {{"q", "blocked"}});
    planner.steps[2] = answer_step("wrapped up");
    planner.repairs["deny-fetch"] = tool_step("notify", {{"msg", "fallback"}},
                                              "repair-1");

    trace::TraceSink sink("run-repair");
    auto res = fx.run(planner, 5, sink);
    CHECK(res.status == Status::Finalized);
    CHECK(fx.host.counter("notified") == 1);

    // the denied decision and the repair plan both appear
    bool denied = false, repaired = false;
    for (const auto& ev : sink.events()) {
        if (ev.kind == trace::EventKind::PolicyEvaluated &&
            ev.payload["decision"]["effect"] == "Deny")
            denied = true;
        if (ev.kind == trace::EventKind::PlanProposed &&
            ev.payload.contains("repair_of"))
            repaired = true;
    }
    CHECK(denied);
    CHECK(repaired);
}

TEST_CASE("denied action without a repair degrades to a blocked answer") {
    policy::RuleMatch deny_fetch;
    deny_fetch.tool = "fetch";
    auto rules = allow_all_rules();
    rules.push_back(
        policy::PolicyRule{"deny-fetch", deny_fetch, policy::Effect::Deny, 50});
    Fixture fx(rules);

    PlannerScript planner;
    planner.steps[1] = tool_step("fetch", {{"q", "blocked"}});
    planner.steps[2] = answer_step("gave up cleanly");

    trace::TraceSink sink("run-blocked");
    auto res = fx.run(planner, 5, sink);
    // the repair fallback is itself a final answer citing the decision
    CHECK(res.status == Status::Finalized);
    CHECK(res.answer_or_summary.find("blocked") != std::string::npos);
}

TEST_CASE("approval gate blocks until a staged approval lands") {
    policy::RuleMatch high;
    high.risk_tier = "High";
    auto rules = allow_all_rules();
    rules.push_back(policy::PolicyRule{"approve-high", high,
                                       policy::Effect::RequireApproval, 50});
    Fixture fx(rules);
    auto deploy = notify_spec();
    // a High-risk variant of the counter tool
    tools::ToolSpec high_spec = deploy;
    high_spec.name = "deploy";
    high_spec.risk_tier = "High";
    high_spec.behavior.params = {{"counter", "deployed"}};
    fx.registry.register_tool(high_spec);

    PlannerScript planner;
    planner.steps[1] = tool_step("deploy", {{"msg", "ship"}}, "dep-1");
    planner.steps[2] = answer_step("shipped");

    policy::Principal bob;
    bob.id = "bob";
    bob.roles = {"approver"};
    bob.privilege_level = 5;

    SUBCASE("staged approval present") {
        trace::TraceSink sink("run-approved");
        policy::GateSession gate(&fx.engine, sink.run_id(),
                                 {{"deploy", std::nullopt, "bob"}},
                                 {{"alice", operator_p()}, {"bob", bob}});
        Goal goal;
        goal.id = "g";
        goal.description = "deploy the build";
        auto res = run_loop(init_state(goal, 5, sink.run_id()), planner,
                            fx.registry, gate, fx.mem, fx.host, sink, fx.budget,
                            fx.params);
        CHECK(res.status == Status::Finalized);
        CHECK(fx.host.counter("deployed") == 1);
        bool granted = false;
        for (const auto& ev : sink.events())
            if (ev.kind == trace::EventKind::ApprovalGranted) granted = true;
        CHECK(granted);
    }
    SUBCASE("no staged approval: tool never runs") {
        trace::TraceSink sink("run-unapproved");
        policy::GateSession gate(&fx.engine, sink.run_id(), {},
                                 {{"alice", operator_p()}, {"bob", bob}});
        Goal goal;
        goal.id = "g";
        goal.description = "deploy the build";
        auto res = run_loop(init_state(goal, 5, sink.run_id()), planner,
                            fx.registry, gate, fx.mem, fx.host, sink, fx.budget,
                            fx.params);
        CHECK(fx.host.counter("deployed") == 0);
        for (const auto& ev : sink.events())
            if (ev.kind == trace::EventKind::ToolExecuted)
                CHECK(ev.provenance["tool_name"] != "deploy");
        (void)res;
    }
}

TEST_CASE("budget exhaustion terminates safely") {
    Fixture fx;
    fx.budget.caps = policy::BudgetVec{500, 100, 1, 10.0};  // one tool call

    PlannerScript planner;
    planner.steps[1] = tool_step("fetch", {{"q", "first"}});
    planner.steps[2] = tool_step("fetch", {{"q", "second"}});
    planner.steps[3] = answer_step("never reached");

    trace::TraceSink sink("run-budget");
    auto res = fx.run(planner, 8, sink);
    CHECK(res.status == Status::BudgetExhausted);
    CHECK(res.budget_consumed.tool_calls == 1);

    const auto& events = sink.events();
    // failed charge, then escalation, then termination
    bool failed_charge = false, escalated = false;
    for (const auto& ev : events) {
        if (ev.kind == trace::EventKind::BudgetCharged &&
            ev.payload["charged"] == false) {
            failed_charge = true;
            CHECK(ev.payload["exhausted_dimension"] == "tool_calls");
        }
        if (ev.kind == trace::EventKind::Escalation &&
            ev.payload["reason"] == "budget-exhausted")
            escalated = true;
    }
    CHECK(failed_charge);
    CHECK(escalated);
    CHECK(events.back().payload["status"] == "BudgetExhausted");
}

TEST_CASE("consumed never exceeds caps under random scripts") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 40; ++trial) {
        Fixture fx;
        fx.budget.caps = policy::BudgetVec{
            static_cast<int64_t>(rng() % 40), static_cast<int64_t>(rng() % 20),
            static_cast<int64_t>(rng() % 4),
            static_cast<double>(rng() % 40) / 10.0};
        PlannerScript planner;
        planner.default_proposal =
            tool_step("fetch", {{"q", "spin " + std::to_string(trial)}});
        planner.default_proposal->rationale = "poll the endpoint again";

        trace::TraceSink sink("run-fuzz-" + std::to_string(trial));
        auto res = fx.run(planner, 6, sink);
        CHECK(res.budget_consumed.tokens <= fx.budget.caps.tokens);
        CHECK(res.budget_consumed.time_units <= fx.budget.caps.time_units);
        CHECK(res.budget_consumed.tool_calls <= fx.budget.caps.tool_calls);
        CHECK(res.budget_consumed.cost_units <=
              fx.budget.caps.cost_units + 1e-12);
        if (res.status == Status::BudgetExhausted)
            CHECK(sink.events().back().payload["status"] == "BudgetExhausted");
    }
}

TEST_CASE("breaker opens after repeated tool errors") {
    Fixture fx;
    tools::ToolSpec bad;
    bad.name = "glitch";
    bad.version = tools::SemVer{1, 0, 0};
    tools::FieldSpec text;
    text.type = tools::FieldType::Text;
    bad.input_schema = {{"q", text}};
    bad.output_schema = {{"out", text}};
    bad.behavior.kind = "fail";
    bad.cost = 0.1;
    fx.registry.register_tool(bad);
    fx.params.breaker = policy::BreakerConfig{5, 3, 2};

    PlannerScript planner;
    for (int64_t i = 1; i <= 5; ++i) {
        auto p = tool_step("glitch", {{"q", "try " + std::to_string(i)}});
        p.confidence = 0.9;
        planner.steps[i] = p;
    }
    planner.steps[6] = answer_step("done retrying");

    trace::TraceSink sink("run-breaker");
    auto res = fx.run(planner, 8, sink);
    CHECK(res.status == Status::Finalized);

    std::vector<std::string> kinds;
    for (const auto& ev : sink.events())
        if (ev.kind == trace::EventKind::ToolExecuted)
            kinds.push_back(ev.payload["error_kind"].get<std::string>());
    REQUIRE(kinds.size() == 5);
    CHECK(kinds[0] == "tool-error");
    CHECK(kinds[1] == "tool-error");
    CHECK(kinds[2] == "tool-error");  // third error trips the breaker
    CHECK(kinds[3] == "breaker-open");
    CHECK(kinds[4] == "breaker-open");
}

TEST_CASE("dangling evidence is rejected") {
    Fixture fx;
    PlannerScript planner;
    auto p = tool_step("fetch", {{"q", "x"}});
    p.evidence = {"mem:no-such-record"};
    planner.steps[1] = p;
    planner.steps[2] = answer_step("after");

    trace::TraceSink sink("run-evidence");
    auto res = fx.run(planner, 4, sink);
    // step 1 fails internally, no tool runs
    CHECK(fx.host.counter("notified") == 0);
    int executed = 0;
    for (const auto& ev : sink.events())
        if (ev.kind == trace::EventKind::ToolExecuted) executed++;
    CHECK(executed == 0);
    CHECK(res.status == Status::Finalized);  // step 2 still reached
}

TEST_CASE("run_loop rejects a stale state") {
    Fixture fx;
    PlannerScript planner;
    planner.default_proposal = answer_step("x");
    Goal g;
    g.id = "g";
    g.description = "probe";
    auto st = init_state(g, 2);
    st.k = 1;
    trace::TraceSink sink("run-stale");
    policy::GateSession gate(&fx.engine, "run-stale", {}, {});
    CHECK_THROWS_WITH_AS(
        run_loop(std::move(st), planner, fx.registry, gate, fx.mem, fx.host,
                 sink, fx.budget, fx.params),
        doctest::Contains("invalid-state"), Error);
}

TEST_CASE("tool results land in working memory") {
    Fixture fx;
    PlannerScript planner;
    planner.steps[1] = tool_step("fetch", {{"q", "remember me"}});
    planner.steps[2] = answer_step("done");

    trace::TraceSink sink("run-memory");
    fx.run(planner, 4, sink);
    CHECK(fx.mem.count(memory::Tier::Working) == 1);
    bool write_seen = false;
    for (const auto& ev : sink.events()) {
        if (ev.kind == trace::EventKind::MemoryOp &&
            ev.payload["op"] == "write") {
            write_seen = true;
            CHECK(ev.payload["tier"] == "Working");
            CHECK_FALSE(
                ev.provenance["memory_op_ids"].get<std::vector<std::string>>()
                    .empty());
        }
    }
    CHECK(write_seen);
}
