#include "agentsim/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "agentsim/digest.hpp"
#include "agentsim/error.hpp"

namespace agentsim::scenario {

namespace {

[[noreturn]] void bad(const std::string& detail) {
    throw Error("parse-error", detail);
}

const json& need(const json& j, const std::string& key,
                 const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) bad(where + ": missing field " + key);
    return *it;
}

std::string need_string(const json& j, const std::string& key,
                        const std::string& where) {
    const json& v = need(j, key, where);
    if (!v.is_string()) bad(where + "." + key + ": expected string");
    return v.get<std::string>();
}

std::vector<std::string> string_list(const json& j, const std::string& key) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    for (const auto& e : j.at(key)) out.push_back(e.get<std::string>());
    return out;
}

tools::Schema schema_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) bad(where + ": expected object");
    tools::Schema schema;
    for (const auto& [field, fj] : j.items()) {
        tools::FieldSpec fs;
        fs.type = tools::field_type_from_string(
            fj.value("type", std::string("Text")));
        fs.required = fj.value("required", false);
        if (fj.contains("min")) fs.min = fj.at("min").get<double>();
        if (fj.contains("max")) fs.max = fj.at("max").get<double>();
        fs.enum_values = string_list(fj, "enum");
        schema.emplace(field, std::move(fs));
    }
    return schema;
}

}  // namespace

tools::ToolSpec tool_spec_from_json(const json& j) {
    tools::ToolSpec spec;
    spec.name = need_string(j, "name", "tool");
    spec.version = tools::SemVer::parse(need_string(j, "version", "tool"));
    spec.input_schema = schema_from_json(need(j, "input_schema", "tool"),
                                         spec.name + ".input_schema");
    spec.output_schema = schema_from_json(need(j, "output_schema", "tool"),
                                          spec.name + ".output_schema");
    for (const auto& pj : j.value("preconditions", json::array())) {
        tools::Precondition p;
        p.field = need_string(pj, "field", spec.name + ".precondition");
        p.kind = need_string(pj, "kind", spec.name + ".precondition");
        p.value = pj.value("value", json());
        spec.preconditions.push_back(std::move(p));
    }
    spec.side_effecting = j.value("side_effecting", false);
    spec.risk_tier = j.value("risk_tier", std::string("Low"));
    spec.cost = j.value("cost", 0.0);
    spec.idempotent = j.value("idempotent", false);
    spec.access_tags = string_list(j, "access_tags");
    if (j.contains("behavior")) {
        const json& bj = j.at("behavior");
        spec.behavior.kind = bj.value("kind", std::string("echo"));
        spec.behavior.latency = bj.value("latency", int64_t{1});
        spec.behavior.params = bj.value("params", json::object());
    }
    return spec;
}

policy::Principal principal_from_json(const json& j) {
    policy::Principal p;
    p.id = need_string(j, "id", "principal");
    p.roles = string_list(j, "roles");
    if (j.contains("attributes"))
        for (const auto& [k, v] : j.at("attributes").items())
            p.attributes[k] = v.get<std::string>();
    p.privilege_level = j.value("privilege_level", 0);
    return p;
}

policy::PolicyRule rule_from_json(const json& j) {
    policy::PolicyRule r;
    r.rule_id = need_string(j, "rule_id", "rule");
    r.effect = policy::effect_from_string(need_string(j, "effect", r.rule_id));
    r.priority = j.value("priority", 0);
    if (j.contains("match")) {
        const json& m = j.at("match");
        if (m.contains("action_kind"))
            r.match.action_kind = m.at("action_kind").get<std::string>();
        if (m.contains("tool")) r.match.tool = m.at("tool").get<std::string>();
        if (m.contains("risk_tier"))
            r.match.risk_tier = m.at("risk_tier").get<std::string>();
        r.match.roles_any = string_list(m, "roles_any");
        if (m.contains("min_level")) r.match.min_level = m.at("min_level").get<int>();
        if (m.contains("max_level")) r.match.max_level = m.at("max_level").get<int>();
        if (m.contains("principal_id"))
            r.match.principal_id = m.at("principal_id").get<std::string>();
        if (m.contains("context_equals"))
            for (const auto& [k, v] : m.at("context_equals").items())
                r.match.context_equals[k] = v.get<std::string>();
    }
    return r;
}

kernel::PlanProposal proposal_from_json(const json& j) {
    kernel::PlanProposal p;
    std::string kind = need_string(j, "kind", "proposal");
    if (kind == "tool_call") {
        p.kind = kernel::ProposalKind::ToolCall;
        const json& cj = need(j, "call", "proposal");
        tools::ToolCall call;
        call.name = need_string(cj, "name", "call");
        call.version_req =
            tools::VersionReq::parse(cj.value("version", std::string("^1")));
        call.args = cj.value("args", json::object());
        call.idempotency_key = cj.value("idempotency_key", std::string{});
        std::string mode = cj.value("mode", std::string("Commit"));
        if (mode == "Commit") {
            call.mode = tools::CallMode::Commit;
        } else if (mode == "Simulate") {
            call.mode = tools::CallMode::Simulate;
        } else {
            bad("call.mode: " + mode);
        }
        call.principal = cj.value("principal", std::string{});
        p.call = std::move(call);
    } else if (kind == "final_answer") {
        p.kind = kernel::ProposalKind::FinalAnswer;
        p.answer = need_string(j, "answer", "proposal");
    } else {
        bad("proposal.kind: " + kind);
    }
    p.rationale = j.value("rationale", std::string{});
    p.evidence = string_list(j, "evidence");
    p.confidence = j.value("confidence", 1.0);
    if (!p.well_formed()) bad("proposal fails well-formedness");
    return p;
}

kernel::PlannerScript planner_from_json(const json& j) {
    kernel::PlannerScript s;
    s.planner_id = j.value("planner_id", std::string("scripted"));
    s.version = j.value("version", std::string("1"));
    // json::value returns by value; a named copy keeps items() iterable
    const json steps = j.value("steps", json::object());
    for (const auto& [key, pj] : steps.items()) {
        size_t pos = 0;
        int64_t step = std::stoll(key, &pos);
        if (pos != key.size() || step < 1) bad("planner step key: " + key);
        s.steps.emplace(step, proposal_from_json(pj));
    }
    const json by_digest = j.value("by_digest", json::object());
    for (const auto& [d, pj] : by_digest.items())
        s.by_digest.emplace(d, proposal_from_json(pj));
    if (j.contains("default"))
        s.default_proposal = proposal_from_json(j.at("default"));
    const json repairs = j.value("repairs", json::object());
    for (const auto& [key, pj] : repairs.items())
        s.repairs.emplace(key, proposal_from_json(pj));
    return s;
}

multiagent::Task task_from_json(const json& j) {
    multiagent::Task t;
    t.id = need_string(j, "id", "task");
    t.required = string_list(j, "required");
    t.root_goal_digest = j.value("root_goal_digest", std::string{});
    t.deps = string_list(j, "deps");
    t.deadline = j.value("deadline", int64_t{12});
    return t;
}

multiagent::FailureInjection injection_from_json(const json& j) {
    multiagent::FailureInjection f;
    f.mode = multiagent::failure_mode_from_string(
        need_string(j, "mode", "injection"));
    f.targets = string_list(j, "targets");
    f.onset = j.value("onset", int64_t{0});
    f.params = j.value("params", json::object());
    return f;
}

multiagent::AgentNode node_from_json(const json& j) {
    multiagent::AgentNode n;
    n.id = need_string(j, "id", "node");
    n.role = multiagent::node_role_from_string(need_string(j, "role", n.id));
    n.capabilities = string_list(j, "capabilities");
    n.privilege_level = j.value("privilege_level", 0);
    n.principal = j.value("principal", std::string{});
    n.stake = j.value("stake", 0.0);
    n.quota = j.value("quota", int64_t{4});
    if (j.contains("script")) {
        const json& sj = j.at("script");
        n.script.work_steps = sj.value("work_steps", int64_t{1});
        for (const auto& b : sj.value("bids", json::array()))
            n.script.bids.push_back(b.get<double>());
        n.script.choices = string_list(sj, "choices");
    }
    for (const auto& cj : j.value("classifiers", json::array())) {
        multiagent::ScriptedClassifier c;
        c.id = cj.value("id", std::string("clf"));
        if (cj.contains("by_capability"))
            for (const auto& [k, v] : cj.at("by_capability").items())
                c.by_capability[k] = v.get<std::string>();
        c.fallback_class = cj.value("fallback_class", std::string{});
        n.classifiers.push_back(std::move(c));
    }
    return n;
}

namespace {

RunUnit run_from_json(const json& j, const json& doc,
                      const std::map<std::string, policy::BudgetVec>& budgets) {
    RunUnit r;
    r.name = need_string(j, "name", "run");
    const json& gj = need(j, "goal", "run " + r.name);
    r.goal.id = need_string(gj, "id", "goal");
    r.goal.description = need_string(gj, "description", "goal " + r.goal.id);
    r.goal.constraints = string_list(gj, "constraints");
    if (gj.contains("success_tag"))
        r.goal.success_tag = gj.at("success_tag").get<std::string>();

    r.k_max = j.value("k_max", doc.value("k_max", int64_t{8}));
    r.planner = need_string(j, "planner", "run " + r.name);
    r.chain = string_list(j, "chain");
    if (r.chain.empty()) bad("run " + r.name + ": empty chain");

    const json& bj = need(j, "budget", "run " + r.name);
    if (bj.is_string()) {
        auto it = budgets.find(bj.get<std::string>());
        if (it == budgets.end())
            bad("run " + r.name + ": unknown budget " + bj.get<std::string>());
        r.caps = it->second;
    } else {
        r.caps = policy::BudgetVec::from_json(bj);
    }

    r.window = j.value("window", int64_t{8});
    r.retrieve_limit = j.value("retrieve_limit", int64_t{5});
    if (j.contains("stop")) {
        r.stop.n_low = j.at("stop").value("n_low", r.stop.n_low);
        r.stop.theta = j.at("stop").value("theta", r.stop.theta);
    }
    if (j.contains("limits")) {
        r.limits.max_latency =
            j.at("limits").value("max_latency", r.limits.max_latency);
        r.limits.max_output_bytes =
            j.at("limits").value("max_output_bytes", r.limits.max_output_bytes);
    }
    const json* brk = nullptr;
    if (doc.contains("breakers")) brk = &doc.at("breakers");
    if (j.contains("breaker")) brk = &j.at("breaker");
    if (brk) {
        r.breaker.window = brk->value("window", r.breaker.window);
        r.breaker.error_threshold =
            brk->value("error_threshold", r.breaker.error_threshold);
        r.breaker.cooldown = brk->value("cooldown", r.breaker.cooldown);
        r.breaker_enabled = brk->value("enabled", true);
    }
    if (j.contains("breaker_enabled"))
        r.breaker_enabled = j.at("breaker_enabled").get<bool>();
    return r;
}

SimUnit sim_from_json(const json& doc) {
    SimUnit s;
    const json& tj = doc.at("topology");
    auto kind = multiagent::topology_kind_from_string(
        need_string(tj, "kind", "topology"));
    std::vector<multiagent::AgentNode> nodes;
    for (const auto& nj : need(tj, "nodes", "topology"))
        nodes.push_back(node_from_json(nj));
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& ej : tj.value("edges", json::array())) {
        if (!ej.is_array() || ej.size() != 2) bad("topology.edges entry");
        edges.emplace_back(ej[0].get<std::string>(), ej[1].get<std::string>());
    }
    s.topology = multiagent::build_topology(kind, std::move(nodes),
                                            std::move(edges),
                                            tj.value("root", std::string{}));

    std::set<std::string> task_ids;
    std::set<std::string> capability_union;
    for (const auto& n : s.topology.nodes)
        capability_union.insert(n.capabilities.begin(), n.capabilities.end());
    for (const auto& wj : doc.value("workload", json::array())) {
        auto task = task_from_json(wj);
        if (!task_ids.insert(task.id).second)
            bad("workload: duplicate task " + task.id);
        for (const auto& tag : task.required)
            if (!capability_union.count(tag))
                bad("task " + task.id + ": capability " + tag +
                    " not provided by any node");
        s.workload.push_back(std::move(task));
    }
    for (const auto& task : s.workload)
        for (const auto& d : task.deps)
            if (!task_ids.count(d))
                bad("task " + task.id + ": unknown dep " + d);

    for (const auto& ij : doc.value("injections", json::array())) {
        auto f = injection_from_json(ij);
        multiagent::validate_injection(s.topology, f);
        s.injections.push_back(std::move(f));
    }
    if (doc.contains("detectors"))
        s.detect = multiagent::DetectorConfig::from_json(doc.at("detectors"));
    s.mitigate = doc.value("mitigate", false);
    s.t_max = doc.value("t_max", int64_t{20});
    if (s.t_max < 1) bad("t_max must be >= 1");
    return s;
}

}  // namespace

std::vector<std::string> ScenarioConfig::unit_names() const {
    std::vector<std::string> names;
    for (const auto& r : runs) names.push_back(r.name);
    if (sim) names.push_back("sim");
    return names;
}

ScenarioConfig parse_scenario(const json& doc) {
    if (!doc.is_object()) bad("document must be an object");
    ScenarioConfig cfg;
    cfg.doc = doc;
    cfg.id = need_string(doc, "id", "scenario");
    cfg.description = doc.value("description", std::string{});
    cfg.seed = doc.value("seed", uint64_t{0});
    cfg.digest = digest::of_json(doc);

    if (!doc.contains("tools")) bad("missing section: tools");
    for (const auto& tj : doc.at("tools"))
        cfg.tools.push_back(tool_spec_from_json(tj));
    {
        // surfaces invalid-spec / duplicate-version at load time
        tools::ToolRegistry probe;
        for (const auto& spec : cfg.tools) probe.register_tool(spec);
    }

    for (const auto& pj : doc.value("principals", json::array())) {
        auto p = principal_from_json(pj);
        if (cfg.principals.count(p.id)) bad("duplicate principal " + p.id);
        cfg.principals.emplace(p.id, std::move(p));
    }
    for (const auto& rj : doc.value("policy_rules", json::array()))
        cfg.rules.push_back(rule_from_json(rj));
    {
        policy::PolicyEngine probe(cfg.rules);  // duplicate rule ids throw
    }
    for (const auto& aj : doc.value("staged_approvals", json::array())) {
        policy::StagedApproval a;
        a.tool = need_string(aj, "tool", "staged_approval");
        if (aj.contains("step")) a.step = aj.at("step").get<int>();
        a.approver = need_string(aj, "approver", "staged_approval");
        if (!cfg.principals.count(a.approver))
            bad("staged approval: unknown principal " + a.approver);
        cfg.staged.push_back(std::move(a));
    }

    std::set<std::string> tool_names;
    for (const auto& t : cfg.tools) tool_names.insert(t.name);
    const json planner_docs = doc.value("planners", json::object());
    for (const auto& [name, pj] : planner_docs.items()) {
        auto script = planner_from_json(pj);
        auto check = [&](const kernel::PlanProposal& p) {
            if (p.kind == kernel::ProposalKind::ToolCall &&
                !tool_names.count(p.call->name))
                bad("planner " + name + ": unknown tool " + p.call->name);
        };
        for (const auto& [k, p] : script.steps) check(p);
        for (const auto& [k, p] : script.by_digest) check(p);
        for (const auto& [k, p] : script.repairs) check(p);
        if (script.default_proposal) check(*script.default_proposal);
        cfg.planners.emplace(name, std::move(script));
    }

    for (const auto& mj : doc.value("memory_seed", json::array()))
        cfg.memory_seed.push_back(memory::MemoryRecord::from_json(mj));

    std::map<std::string, policy::BudgetVec> budgets;
    const json budget_docs = doc.value("budgets", json::object());
    for (const auto& [name, bj] : budget_docs.items())
        budgets.emplace(name, policy::BudgetVec::from_json(bj));

    std::set<std::string> run_names;
    for (const auto& rj : doc.value("runs", json::array())) {
        auto run = run_from_json(rj, doc, budgets);
        if (!run_names.insert(run.name).second)
            bad("duplicate run name " + run.name);
        if (run.name == "sim") bad("run name 'sim' is reserved");
        if (!cfg.planners.count(run.planner))
            bad("run " + run.name + ": unknown planner " + run.planner);
        for (const auto& pid : run.chain)
            if (!cfg.principals.count(pid))
                bad("run " + run.name + ": unknown principal " + pid);
        cfg.runs.push_back(std::move(run));
    }

    if (doc.contains("topology")) {
        if (!doc.contains("workload")) bad("missing section: workload");
        cfg.sim = sim_from_json(doc);
        for (const auto& n : cfg.sim->topology.nodes)
            if (!n.principal.empty() && !cfg.principals.count(n.principal))
                bad("node " + n.id + ": unknown principal " + n.principal);
    }

    if (cfg.runs.empty() && !cfg.sim)
        bad("scenario declares neither runs nor a topology");
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot read " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    json doc;
    try {
        doc = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw Error("parse-error", std::string(e.what()));
    }
    return parse_scenario(doc);
}

}  // namespace agentsim::scenario
