// The acceptance gate: one test case per shipped guarantee, each printing a
// single PASS/FAIL line so the whole contract is readable at a glance.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "agentsim/audit.hpp"
#include "agentsim/kernel.hpp"
#include "agentsim/multiagent.hpp"
#include "agentsim/runner.hpp"
#include "agentsim/scenario.hpp"
#include "agentsim/trace.hpp"
#include "support.hpp"

using namespace agentsim;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kTol = 1e-9;

struct Criterion {
    std::string label;
    bool ok = true;
    std::vector<std::string> notes;

    explicit Criterion(std::string l) : label(std::move(l)) {}

    void expect(bool cond, const std::string& what) {
        if (cond) return;
        ok = false;
        if (notes.size() < 10) notes.push_back(what);
    }

    void conclude() {
        std::printf("ACCEPTANCE %s: %s\n", label.c_str(), ok ? "PASS" : "FAIL");
        std::fflush(stdout);
        for (const auto& n : notes) {
            INFO(n);
            CHECK(false);
        }
        CHECK(ok);
    }
};

// ---- shared corpus: every scenario executed once with defaults ----

struct ScenarioRun {
    scenario::ScenarioConfig cfg;
    std::vector<runner::UnitOutcome> units;
};

const std::vector<ScenarioRun>& corpus() {
    static const std::vector<ScenarioRun> runs = [] {
        std::vector<ScenarioRun> out;
        for (const auto& name : testsupport::all_scenarios()) {
            ScenarioRun r{testsupport::load(name), {}};
            r.units = runner::execute_all(r.cfg, {});
            out.push_back(std::move(r));
        }
        return out;
    }();
    return runs;
}

audit::HardeningReport audit_with(const scenario::ScenarioConfig& cfg,
                                  std::vector<std::vector<json>> traces) {
    tools::ToolRegistry registry;
    for (const auto& spec : cfg.tools) registry.register_tool(spec);
    policy::PolicyEngine engine(cfg.rules);
    std::vector<std::pair<std::string, std::string>> registry_digests;
    for (const auto& [id, d] : registry.digests())
        registry_digests.emplace_back(id, d);
    return audit::run_audit(traces, registry_digests, engine.rule_digests());
}

const audit::ControlRow* row_named(const audit::HardeningReport& rep,
                                   const std::string& area) {
    for (const auto& r : rep.rows)
        if (r.area == area) return &r;
    return nullptr;
}

// ---- minimal kernel rig for the loop and budget criteria ----

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

std::vector<policy::PolicyRule> allow_all_rules() {
    policy::RuleMatch tools_m;
    tools_m.action_kind = "tool_call";
    policy::RuleMatch final_m;
    final_m.action_kind = "final_answer";
    return {policy::PolicyRule{"allow-tools", tools_m, policy::Effect::Allow, 1},
            policy::PolicyRule{"allow-final", final_m, policy::Effect::Allow, 1}};
}

kernel::PlanProposal probe_step(const std::string& q, double confidence,
                                const std::string& rationale = "") {
    kernel::PlanProposal p;
    p.kind = kernel::ProposalKind::ToolCall;
    tools::ToolCall c;
    c.name = "fetch";
    c.version_req = tools::VersionReq::parse("^1");
    c.args = {{"q", q}};
    p.call = c;
    p.confidence = confidence;
    p.rationale = rationale;
    return p;
}

struct KernelRig {
    tools::ToolRegistry registry;
    policy::PolicyEngine engine;

    KernelRig() : engine(allow_all_rules()) { registry.register_tool(fetch_spec()); }

    kernel::RunResult run(const kernel::PlannerScript& planner, int64_t k_max,
                          policy::BudgetVec caps, trace::TraceSink& sink) {
        tools::ToolHost host;
        memory::MemoryStore mem;
        policy::Budget budget;
        budget.caps = caps;
        kernel::RunParams params;
        params.chain = {operator_p()};
        policy::GateSession gate(&engine, sink.run_id(), {},
                                 {{"alice", operator_p()}});
        kernel::Goal goal;
        goal.id = "g-acceptance";
        goal.description = "bounded autonomy probe";
        auto st = kernel::init_state(goal, k_max, sink.run_id());
        return kernel::run_loop(std::move(st), planner, registry, gate, mem,
                                host, sink, budget, params);
    }
};

// A script that keeps proposing fresh low-risk tool calls forever: distinct
// arguments defeat the repeat heuristic, high confidence defeats the
// low-confidence heuristic, and no step is a final answer.
kernel::PlannerScript never_stopping_script(std::mt19937_64& rng, int64_t steps,
                                            const std::string& rationale = "") {
    std::uniform_real_distribution<double> conf(0.55, 0.95);
    kernel::PlannerScript planner;
    for (int64_t i = 1; i <= steps; ++i)
        planner.steps[i] = probe_step(
            "poll-" + std::to_string(i) + "-" + std::to_string(rng()),
            conf(rng), rationale);
    return planner;
}

bool dfs_has_cycle(const std::map<std::string, std::vector<std::string>>& adj) {
    std::map<std::string, int> color;
    std::function<bool(const std::string&)> visit =
        [&](const std::string& u) -> bool {
        color[u] = 1;
        auto it = adj.find(u);
        if (it != adj.end()) {
            for (const auto& v : it->second) {
                if (color[v] == 1) return true;
                if (color[v] == 0 && visit(v)) return true;
            }
        }
        color[u] = 2;
        return false;
    };
    for (const auto& [u, _] : adj)
        if (color[u] == 0 && visit(u)) return true;
    return false;
}

double gini_pairwise_oracle(const std::vector<double>& x) {
    double sum = 0, diff = 0;
    for (double a : x) sum += a;
    double mu = sum / static_cast<double>(x.size());
    if (mu == 0) return 0.0;
    for (double a : x)
        for (double b : x) diff += std::abs(a - b);
    return diff / (2.0 * x.size() * x.size() * mu);
}

double entropy_oracle(const std::vector<double>& p) {
    double h = 0;
    for (double v : p)
        if (v > 0) h -= v * std::log(v) / std::log(2.0);
    return h;
}

}  // namespace

TEST_CASE("bounded loop fails safe under never-stopping planners") {
    Criterion c("01 loop-bound");
    KernelRig rig;
    std::mt19937_64 rng(101);
    policy::BudgetVec ample{1000000000, 1000000000, 1000000000, 1e9};

    for (int64_t k_max = 1; k_max <= 10; ++k_max) {
        for (int trial = 0; trial < 100; ++trial) {
            auto planner = never_stopping_script(rng, k_max);
            trace::TraceSink sink("acc01-" + std::to_string(k_max) + "-" +
                                  std::to_string(trial));
            auto res = rig.run(planner, k_max, ample, sink);

            c.expect(res.steps_used <= k_max,
                     "steps_used " + std::to_string(res.steps_used) +
                         " exceeds k_max " + std::to_string(k_max));
            c.expect(res.status == kernel::Status::FailedSafe,
                     "status not FailedSafe at k_max " + std::to_string(k_max));
            bool escalated = false;
            for (const auto& ev : sink.events())
                if (ev.kind == trace::EventKind::Escalation &&
                    ev.payload.value("reason", std::string{}) ==
                        "k-max-exhausted")
                    escalated = true;
            c.expect(escalated, "no k-max escalation event");

            auto events = trace::events_to_json(sink.events());
            c.expect(trace::verify_chain(events).ok, "chain broken");
            c.expect(trace::verify_completeness(events).pass,
                     "provenance incomplete");
        }
    }
    c.conclude();
}

TEST_CASE("every committed side effect passes the gate first") {
    Criterion c("02 gate-mediation");

    for (const auto& run : corpus()) {
        std::vector<std::vector<json>> traces;
        for (const auto& u : run.units)
            traces.push_back(trace::events_to_json(u.events));
        auto rep = audit_with(run.cfg, traces);
        const auto* row = row_named(rep, "Policy Enforcement");
        c.expect(row && row->status == "pass",
                 run.cfg.id + ": ungated side effect reported");
    }

    // forge one ungated side effect and demand it is named by seq
    const ScenarioRun* approval = nullptr;
    for (const auto& run : corpus())
        if (run.cfg.id == "approval-single") approval = &run;
    c.expect(approval != nullptr, "approval scenario missing");
    if (approval) {
        auto events = trace::events_to_json(approval->units[0].events);
        int64_t seq = -1;
        for (auto& ev : events) {
            if (ev["kind"] == "ToolExecuted" &&
                ev["payload"].value("side_effect_committed", false)) {
                ev["provenance"]["decision_id"] = "dec-forged";
                seq = ev["seq"].get<int64_t>();
                break;
            }
        }
        c.expect(seq >= 0, "no committed side effect to forge");
        auto rep = audit_with(approval->cfg,
                              {testsupport::rehash(std::move(events))});
        const auto* row = row_named(rep, "Policy Enforcement");
        c.expect(row && row->status == "fail", "forged violation not flagged");
        c.expect(row && row->evidence == std::vector<int64_t>{seq},
                 "violation not flagged at exactly its seq");
    }
    c.conclude();
}

TEST_CASE("budget charges never overshoot and exhaustion matches a replay oracle") {
    Criterion c("03 budget-fuzz");
    std::mt19937_64 rng(103);
    std::uniform_int_distribution<int64_t> cap_units(0, 30);
    std::uniform_int_distribution<int64_t> cost_units(0, 4);
    std::uniform_int_distribution<int> quarters(0, 8);
    std::uniform_int_distribution<int> seq_len(1, 40);

    for (int trial = 0; trial < 1000; ++trial) {
        policy::Budget b;
        b.caps = policy::BudgetVec{cap_units(rng), cap_units(rng),
                                   cap_units(rng), quarters(rng) * 2.5};
        // independent running totals, checked in the fixed dimension order
        int64_t tok = 0, time = 0, calls = 0;
        double cost = 0;
        int steps = seq_len(rng);
        for (int i = 0; i < steps; ++i) {
            policy::BudgetVec delta{cost_units(rng), cost_units(rng),
                                    cost_units(rng), quarters(rng) * 0.25};
            std::string expected;
            if (tok + delta.tokens > b.caps.tokens)
                expected = "tokens";
            else if (time + delta.time_units > b.caps.time_units)
                expected = "time_units";
            else if (calls + delta.tool_calls > b.caps.tool_calls)
                expected = "tool_calls";
            else if (cost + delta.cost_units > b.caps.cost_units)
                expected = "cost_units";

            auto outcome = b.charge(delta);
            if (expected.empty()) {
                c.expect(outcome.charged, "refusal the oracle allowed");
                b.apply(outcome);
                tok += delta.tokens;
                time += delta.time_units;
                calls += delta.tool_calls;
                cost += delta.cost_units;
            } else {
                c.expect(!outcome.charged, "charge the oracle refused");
                c.expect(outcome.exhausted_dimension == expected,
                         "dimension " + outcome.exhausted_dimension +
                             " != oracle " + expected);
            }
            c.expect(b.consumed.tokens <= b.caps.tokens &&
                         b.consumed.time_units <= b.caps.time_units &&
                         b.consumed.tool_calls <= b.caps.tool_calls &&
                         b.consumed.cost_units <= b.caps.cost_units,
                     "consumed exceeds caps");
            if (!c.ok) break;
        }
        if (!c.ok) break;
    }

    // exhausted kernel runs terminate safely, on every dimension in turn
    KernelRig rig;
    const char* dims[] = {"tokens", "time_units", "tool_calls", "cost_units"};
    for (int trial = 0; trial < 40; ++trial) {
        const std::string dim = dims[trial % 4];
        policy::BudgetVec caps{1000000000, 1000000000, 1000000000, 1e9};
        if (dim == "tokens") caps.tokens = 1 + trial % 6;
        if (dim == "time_units") caps.time_units = 1 + trial % 8;
        if (dim == "tool_calls") caps.tool_calls = 1 + trial % 5;
        if (dim == "cost_units") caps.cost_units = 0.2 + 0.5 * (trial % 5);

        auto planner = never_stopping_script(
            rng, 10, dim == "tokens" ? "alpha beta gamma delta" : "");
        trace::TraceSink sink("acc03-" + std::to_string(trial));
        auto res = rig.run(planner, 10, caps, sink);

        c.expect(res.status == kernel::Status::BudgetExhausted,
                 dim + ": run did not exhaust");
        c.expect(res.budget_consumed.tokens <= caps.tokens &&
                     res.budget_consumed.time_units <= caps.time_units &&
                     res.budget_consumed.tool_calls <= caps.tool_calls &&
                     res.budget_consumed.cost_units <= caps.cost_units,
                 dim + ": consumed exceeds caps");

        bool refused = false, escalated = false, terminated = false;
        for (const auto& ev : sink.events()) {
            if (ev.kind == trace::EventKind::BudgetCharged &&
                !ev.payload.value("charged", true))
                refused = ev.payload.value("exhausted_dimension",
                                           std::string{}) == dim;
            if (ev.kind == trace::EventKind::Escalation &&
                ev.payload.value("reason", std::string{}) == "budget-exhausted")
                escalated = true;
            if (ev.kind == trace::EventKind::RunTerminated)
                terminated = ev.payload.value("status", std::string{}) ==
                             "BudgetExhausted";
        }
        c.expect(refused, dim + ": no refused charge on that dimension");
        c.expect(escalated, dim + ": no budget escalation");
        c.expect(terminated, dim + ": no BudgetExhausted termination");
    }
    c.conclude();
}

TEST_CASE("chains verify clean and any flipped bit is caught in time") {
    Criterion c("04 trace-integrity");

    std::vector<std::vector<std::string>> dumped;
    for (const auto& run : corpus()) {
        for (const auto& u : run.units) {
            auto events = trace::events_to_json(u.events);
            c.expect(trace::verify_chain(events).ok,
                     run.cfg.id + "/" + u.unit + ": chain not ok");
            c.expect(trace::verify_completeness(events).pass,
                     run.cfg.id + "/" + u.unit + ": completeness fail");
            std::vector<std::string> lines;
            for (const auto& ev : events) lines.push_back(ev.dump());
            dumped.push_back(std::move(lines));
        }
    }

    std::mt19937_64 rng(104);
    for (int trial = 0; trial < 500; ++trial) {
        auto lines = dumped[rng() % dumped.size()];
        size_t line = rng() % lines.size();
        std::string& target = lines[line];
        size_t byte = rng() % target.size();
        target[byte] = static_cast<char>(target[byte] ^ (1u << (rng() % 7)));

        auto verdict = trace::verify_chain_lines(lines);
        c.expect(!verdict.ok, "tampered chain still verified");
        c.expect(verdict.broken_at <= static_cast<int64_t>(line),
                 "break reported after the tampered seq: " +
                     std::to_string(verdict.broken_at) + " > " +
                     std::to_string(line));
    }
    c.conclude();
}

TEST_CASE("fixed seeds reproduce byte-identical chains and replay agrees") {
    Criterion c("05 deterministic-replay");

    for (const auto& run : corpus()) {
        std::vector<std::string> base;
        for (const auto& u : run.units)
            for (const auto& ev : trace::events_to_json(u.events))
                base.push_back(ev.dump());

        for (int rep = 0; rep < 9; ++rep) {
            auto again = runner::execute_all(run.cfg, {});
            std::vector<std::string> lines;
            for (const auto& u : again)
                for (const auto& ev : trace::events_to_json(u.events))
                    lines.push_back(ev.dump());
            if (lines != base) {
                c.expect(false, run.cfg.id + ": rerun " + std::to_string(rep) +
                                    " diverged");
                break;
            }
        }
    }

    fs::path dir = fs::temp_directory_path() / "agentsim-acceptance-replay";
    fs::remove_all(dir);
    for (const auto& run : corpus()) {
        json manifest = runner::run_to_files(run.cfg, {}, dir.string());
        for (const auto& unit : manifest["units"]) {
            auto verdict = runner::replay_trace(
                run.cfg, unit["trace"].get<std::string>());
            c.expect(verdict.identical,
                     run.cfg.id + ": replay diverged at seq " +
                         std::to_string(verdict.seq));
        }
    }
    c.conclude();
}

TEST_CASE("each injected failure mode trips its own detector on schedule") {
    Criterion c("06 detection-matrix");

    struct Expect {
        const char* scenario;
        const char* mode;
        const char* detector;
        int64_t step;
    };
    const Expect matrix[] = {
        {"ow-silent", "SilentWorkerFailure", "HeartbeatMissing", 5},
        {"ow-mismatch", "CapabilityMismatch", "RejectionSpike", 4},
        {"ow-deadlock", "DelegationDeadlock", "PlanningTimeout", 3},
        {"rs-misroute", "Misrouting", "RerouteCycle", 4},
        {"rs-overload", "SolverOverloadCascade", "QueueDepth", 5},
        {"hier-distort", "CommandDistortion", "RootGoalDivergence", 2},
        {"swarm-herd", "Herding", "GiniBreach", 8},
        {"swarm-manip", "StrategicManipulation", "SybilCollusion", 2},
    };

    for (const auto& e : matrix) {
        const ScenarioRun* run = nullptr;
        for (const auto& r : corpus())
            if (r.cfg.id == e.scenario) run = &r;
        if (!run) {
            c.expect(false, std::string(e.scenario) + ": scenario missing");
            continue;
        }
        const json& report = run->units[0].report;
        bool found = false;
        for (const auto& det : report["detection"]) {
            if (det["mode"] != e.mode) continue;
            found = true;
            c.expect(det["detector"] == e.detector,
                     std::string(e.scenario) + ": detector " +
                         det["detector"].get<std::string>());
            c.expect(det["first_alarm_step"].get<int64_t>() == e.step,
                     std::string(e.scenario) + ": first alarm at step " +
                         std::to_string(det["first_alarm_step"].get<int64_t>()) +
                         " expected " + std::to_string(e.step));
        }
        c.expect(found, std::string(e.scenario) + ": no detection record");
    }

    // heartbeat schedule is exactly onset + interval x miss_threshold
    {
        auto cfg = testsupport::load("ow-silent");
        const auto& sim = *cfg.sim;
        const auto& inj = sim.injections[0];
        c.expect(inj.onset + sim.detect.heartbeat_interval *
                                 sim.detect.miss_threshold ==
                     5,
                 "shipped heartbeat bound is not onset + interval x threshold");

        // the worked example: onset 5, interval 1, threshold 3 -> step 8,
        // on a topology whose silent worker still has work queued at onset
        multiagent::AgentNode o;
        o.id = "o";
        o.role = multiagent::NodeRole::Orchestrator;
        o.principal = "sim";
        multiagent::AgentNode w;
        w.id = "w1";
        w.role = multiagent::NodeRole::Worker;
        w.capabilities = {"etl"};
        w.principal = "sim";
        w.script.work_steps = 3;
        auto topo = multiagent::build_topology(
            multiagent::TopologyKind::OrchestratorWorker, {o, w}, {{"o", "w1"}},
            "o");
        std::vector<multiagent::Task> tasks;
        for (int i = 1; i <= 4; ++i) {
            multiagent::Task t;
            t.id = "t" + std::to_string(i);
            t.required = {"etl"};
            t.deadline = 15;
            tasks.push_back(std::move(t));
        }
        multiagent::FailureInjection late;
        late.mode = multiagent::FailureMode::SilentWorkerFailure;
        late.targets = {"w1"};
        late.onset = 5;
        multiagent::SimConfig sc;
        sc.t_max = sim.t_max;
        sc.seed = cfg.seed;
        sc.detect = sim.detect;
        trace::TraceSink sink("acc06-late-onset");
        auto rep = multiagent::simulate(topo, tasks, {late}, sc, sink);
        int64_t first = -1;
        for (const auto& a : rep.alarms)
            if (a.detector == multiagent::kHeartbeatMissing && first < 0)
                first = a.step;
        c.expect(first == 8, "onset 5 heartbeat alarm at step " +
                                 std::to_string(first) + ", expected 8");
    }

    // deadlock alarms must land by the task deadline
    for (const auto& r : corpus()) {
        if (r.cfg.id != "ow-deadlock") continue;
        int64_t deadline = r.cfg.sim->workload[0].deadline;
        for (const auto& det : r.units[0].report["detection"])
            c.expect(det["first_alarm_step"].get<int64_t>() <= deadline,
                     "deadlock alarm after the task deadline");
    }

    // with everything off, healthy behavior raises nothing anywhere
    for (const auto& name : testsupport::sim_scenarios()) {
        auto cfg = testsupport::load(name);
        runner::Overrides off;
        off.inject["all"] = false;
        auto out = runner::execute_unit(cfg, "sim", off);
        c.expect(out.report["alarms"].empty(),
                 name + ": alarms despite injections off");
    }
    c.conclude();
}

TEST_CASE("mitigation strictly beats the same-seed unmitigated twin") {
    Criterion c("07 mitigation-efficacy");
    const char* pairs[][2] = {
        {"ow-silent", "SilentWorkerFailure"},
        {"ow-deadlock", "DelegationDeadlock"},
        {"rs-overload", "SolverOverloadCascade"},
        {"rs-misroute", "Misrouting"},
    };
    for (const auto& [name, mode] : pairs) {
        auto cfg = testsupport::load(name);
        runner::Overrides on;
        on.mitigate[mode] = true;
        auto off_run = runner::execute_unit(cfg, "sim", {});
        auto on_run = runner::execute_unit(cfg, "sim", on);
        int64_t off_done = off_run.report["tasks_done"].get<int64_t>();
        int64_t on_done = on_run.report["tasks_done"].get<int64_t>();
        c.expect(on_done > off_done,
                 std::string(name) + ": mitigation " + std::to_string(on_done) +
                     " not strictly above " + std::to_string(off_done));
    }
    c.conclude();
}

TEST_CASE("concentration metrics match direct-formula oracles to 1e-9") {
    Criterion c("08 numeric-oracles");

    c.expect(std::abs(multiagent::gini({1, 1, 1, 1}) - 0.0) < kTol,
             "gini uniform");
    c.expect(std::abs(multiagent::gini({0, 0, 0, 4}) - 0.75) < kTol,
             "gini point mass");
    c.expect(std::abs(multiagent::entropy_bits({0.25, 0.25, 0.25, 0.25}) -
                      2.0) < kTol,
             "entropy uniform-4");

    std::mt19937_64 rng(108);
    std::uniform_real_distribution<double> amount(0.001, 50.0);
    std::uniform_real_distribution<double> scale(0.1, 100.0);
    std::uniform_int_distribution<int> len(1, 16);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(len(rng));
        double total = 0;
        for (double& v : x) {
            v = amount(rng);
            total += v;
        }
        double g = multiagent::gini(x);
        c.expect(std::abs(g - gini_pairwise_oracle(x)) < kTol,
                 "gini oracle disagreement");

        std::vector<double> scaled(x);
        double k = scale(rng);
        for (double& v : scaled) v *= k;
        c.expect(std::abs(multiagent::gini(scaled) - g) < kTol,
                 "gini not scale invariant");

        std::vector<double> p(x);
        for (double& v : p) v /= total;
        c.expect(std::abs(multiagent::entropy_bits(p) - entropy_oracle(p)) <
                     kTol,
                 "entropy oracle disagreement");
        if (!c.ok) break;
    }
    c.conclude();
}

TEST_CASE("cycle detection agrees with brute-force DFS on 1000 digraphs") {
    Criterion c("09 cycle-oracle");
    std::mt19937_64 rng(109);
    std::uniform_int_distribution<int> n_nodes(1, 10);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    int agreements = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int n = n_nodes(rng);
        double density = coin(rng) * 0.4;
        std::map<std::string, std::vector<std::string>> adj;
        for (int i = 0; i < n; ++i) {
            std::string u = "n" + std::to_string(i);
            adj[u];
            for (int j = 0; j < n; ++j)
                if (coin(rng) < density)
                    adj[u].push_back("n" + std::to_string(j));
        }
        auto verdict = multiagent::detect_cycle(adj);
        if (verdict.acyclic == !dfs_has_cycle(adj)) agreements++;
    }
    c.expect(agreements == 1000,
             "agreement on " + std::to_string(agreements) + "/1000 digraphs");
    c.conclude();
}

TEST_CASE("one idempotency key commits exactly one side effect") {
    Criterion c("10 idempotency");

    auto side_effecting = [](const char* name, const char* kind, json params) {
        tools::ToolSpec s;
        s.name = name;
        s.version = tools::SemVer{1, 0, 0};
        tools::FieldSpec text;
        text.type = tools::FieldType::Text;
        s.input_schema = {{"msg", text}};
        s.output_schema = {{"out", text}};
        s.side_effecting = true;
        s.idempotent = true;
        s.cost = 1.0;
        s.behavior.kind = kind;
        s.behavior.params = std::move(params);
        return s;
    };
    std::vector<tools::ToolSpec> specs = {
        side_effecting("mark", "counter", {{"counter", "mark"}}),
        side_effecting("send", "echo", json::object()),
        side_effecting("post", "flaky", {{"fail_every", 5}}),
    };

    for (const auto& spec : specs) {
        for (int n : {2, 5, 10}) {
            tools::ToolHost host;
            tools::SandboxLimits limits;
            tools::ToolCall call;
            call.name = spec.name;
            call.version_req = tools::VersionReq::parse("1.0.0");
            call.args = json{{"msg", "once"}};
            call.idempotency_key = "retry-key";

            int committed = 0;
            for (int i = 0; i < n; ++i) {
                auto r = host.execute(tools::validate(call, spec), limits);
                c.expect(r.ok, spec.name + std::string(": call failed"));
                if (r.side_effect_committed) committed++;
            }
            c.expect(committed == 1,
                     spec.name + std::string(": ") + std::to_string(committed) +
                         " commits after " + std::to_string(n) + " retries");
            if (spec.behavior.kind == "counter")
                c.expect(host.counter("mark") == 1, "counter advanced twice");
        }
    }
    c.conclude();
}

TEST_CASE("delegation can only narrow privileges, never widen them") {
    Criterion c("11 delegation-privilege");
    std::mt19937_64 rng(111);
    const std::vector<std::string> role_pool = {"operator", "analyst", "admin",
                                                "auditor", "deployer"};
    std::uniform_int_distribution<int> level(0, 5);
    std::uniform_int_distribution<int> chain_len(1, 4);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    // the gate rule under test: allow only operator-role chains at level >= 2
    policy::RuleMatch m;
    m.action_kind = "tool_call";
    m.roles_any = {"operator"};
    m.min_level = 2;
    policy::PolicyEngine engine(
        {policy::PolicyRule{"allow-operators", m, policy::Effect::Allow, 10}});
    policy::ActionRef action;
    action.kind = "tool_call";
    action.tool_name = "fetch";
    action.digest = "d";
    action.risk_tier = "Low";

    int bypasses = 0;
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<policy::Principal> chain;
        int len = chain_len(rng);
        for (int i = 0; i < len; ++i) {
            policy::Principal p;
            p.id = "p" + std::to_string(trial) + "-" + std::to_string(i);
            p.privilege_level = level(rng);
            for (const auto& r : role_pool)
                if (coin(rng) < 0.5) p.roles.push_back(r);
            chain.push_back(std::move(p));
        }

        auto eff = policy::effective_privileges(chain);
        int min_level = chain[0].privilege_level;
        for (const auto& p : chain)
            min_level = std::min(min_level, p.privilege_level);
        if (eff.level != min_level) bypasses++;
        for (const auto& role : eff.roles)
            for (const auto& p : chain)
                if (!p.has_role(role)) bypasses++;

        auto decision = engine.evaluate(action, chain, {}, 1,
                                        "dec-" + std::to_string(trial));
        if (decision.effect == policy::Effect::Allow) {
            // the permitted action's requirements must hold for every member
            for (const auto& p : chain) {
                if (!p.has_role("operator")) bypasses++;
                if (p.privilege_level < 2) bypasses++;
            }
        } else {
            // refusals must be justified by some member lacking the privilege
            bool all_qualified = true;
            for (const auto& p : chain)
                if (!p.has_role("operator") || p.privilege_level < 2)
                    all_qualified = false;
            if (all_qualified) bypasses++;
        }
    }
    c.expect(bypasses == 0, std::to_string(bypasses) + " bypasses in 500 chains");
    c.conclude();
}

TEST_CASE("forged corpora trip exactly their own hardening rows") {
    Criterion c("12 hardening-audit");
    const char* automatable[] = {"Identity & Access",     "Policy Enforcement",
                                 "Tooling & Integrations", "Memory Management",
                                 "Observability & Tracing", "Budgeted Autonomy"};

    const ScenarioRun* approval = nullptr;
    const ScenarioRun* budget = nullptr;
    for (const auto& run : corpus()) {
        if (run.cfg.id == "approval-single") approval = &run;
        if (run.cfg.id == "budget-single") budget = &run;
    }
    REQUIRE(approval != nullptr);
    REQUIRE(budget != nullptr);
    std::vector<json> base = trace::events_to_json(approval->units[0].events);

    auto find_kind = [&](const std::string& kind) -> size_t {
        for (size_t i = 0; i < base.size(); ++i)
            if (base[i]["kind"] == kind) return i;
        return base.size();
    };
    auto check_exact = [&](const audit::HardeningReport& rep,
                           const std::string& failing, const char* what) {
        // the report-level pass flag only tracks MUST rows
        const auto* failing_row = row_named(rep, failing);
        bool must = failing_row && failing_row->obligation == "MUST";
        c.expect(rep.pass == !must,
                 std::string(what) + ": report pass flag wrong");
        for (const char* area : automatable) {
            const auto* row = row_named(rep, area);
            if (!row) {
                c.expect(false, std::string("missing row ") + area);
                continue;
            }
            if (area == failing)
                c.expect(row->status == "fail" && !row->evidence.empty(),
                         std::string(what) + ": target row did not fail");
            else
                c.expect(row->status == "pass",
                         std::string(what) + ": collateral failure in " + area);
        }
    };
    auto forged = [&](std::function<void(std::vector<json>&)> mutate) {
        std::vector<json> ev = base;
        mutate(ev);
        return audit_with(approval->cfg, {testsupport::rehash(std::move(ev))});
    };

    check_exact(forged([&](std::vector<json>& ev) {
                    ev[0]["provenance"]["principal"] = "";
                }),
                "Identity & Access", "anonymous event");
    check_exact(forged([&](std::vector<json>& ev) {
                    size_t i = find_kind("ToolExecuted");
                    ev[i]["provenance"]["decision_id"] = "dec-bogus";
                }),
                "Policy Enforcement", "phantom decision");
    check_exact(forged([&](std::vector<json>& ev) {
                    size_t i = find_kind("ToolExecuted");
                    ev[i]["provenance"]["tool_version"] = "9.9.9";
                }),
                "Tooling & Integrations", "unregistered version");
    check_exact(forged([&](std::vector<json>& ev) {
                    size_t i = find_kind("MemoryOp");
                    ev[i]["payload"].erase("retention_class");
                }),
                "Memory Management", "missing retention class");
    check_exact(forged([&](std::vector<json>& ev) {
                    size_t i = find_kind("PlanProposed");
                    ev[i]["provenance"].erase("planner_id");
                }),
                "Observability & Tracing", "stripped provenance");

    {
        std::vector<json> ev = trace::events_to_json(budget->units[0].events);
        ev.back()["payload"]["status"] = "Finalized";
        auto rep = audit_with(budget->cfg, {testsupport::rehash(std::move(ev))});
        check_exact(rep, "Budgeted Autonomy", "unsafe exhaustion");
    }

    // the compliant corpus passes every automatable row and the remainder
    // consistently reports not-checkable with a reason
    auto clean = audit_with(approval->cfg, {base});
    c.expect(clean.pass, "compliant corpus does not pass");
    for (const char* area : automatable) {
        const auto* row = row_named(clean, area);
        c.expect(row && row->status == "pass",
                 std::string("compliant corpus fails ") + area);
    }
    for (const char* area : {"Data Governance", "CI/CD & Evaluation",
                             "Security Testing", "Change Management"}) {
        const auto* row = row_named(clean, area);
        c.expect(row && row->status == "not-checkable" && !row->detail.empty(),
                 std::string(area) + " not reported as not-checkable");
    }
    c.conclude();
}
