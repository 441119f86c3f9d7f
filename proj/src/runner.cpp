#include "agentsim/runner.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "agentsim/digest.hpp"
#include "agentsim/error.hpp"
#include "agentsim/kernel.hpp"

namespace agentsim::runner {

json Overrides::to_json() const {
    json j = json::object();
    if (seed) j["seed"] = *seed;
    if (k_max) j["k_max"] = *k_max;
    if (t_max) j["t_max"] = *t_max;
    if (!inject.empty()) j["inject"] = inject;
    if (!mitigate.empty()) j["mitigate"] = mitigate;
    return j;
}

Overrides Overrides::from_json(const json& j) {
    Overrides ov;
    if (j.contains("seed")) ov.seed = j.at("seed").get<uint64_t>();
    if (j.contains("k_max")) ov.k_max = j.at("k_max").get<int64_t>();
    if (j.contains("t_max")) ov.t_max = j.at("t_max").get<int64_t>();
    if (j.contains("inject"))
        for (const auto& [k, v] : j.at("inject").items())
            ov.inject[k] = v.get<bool>();
    if (j.contains("mitigate"))
        for (const auto& [k, v] : j.at("mitigate").items())
            ov.mitigate[k] = v.get<bool>();
    return ov;
}

namespace {

std::optional<bool> toggle(const std::map<std::string, bool>& m,
                           const std::string& mode) {
    if (auto it = m.find(mode); it != m.end()) return it->second;
    if (auto it = m.find("all"); it != m.end()) return it->second;
    return std::nullopt;
}

std::string derive_run_id(const scenario::ScenarioConfig& cfg,
                          const std::string& unit, const Overrides& ov,
                          uint64_t seed) {
    json key{{"scenario", cfg.digest},
             {"unit", unit},
             {"seed", seed},
             {"overrides", ov.to_json()}};
    return "run-" + digest::short_id(digest::canonical(key));
}

json started_extra(const scenario::ScenarioConfig& cfg,
                   const std::string& unit, const Overrides& ov,
                   uint64_t seed) {
    return json{{"scenario", cfg.id},
                {"scenario_digest", cfg.digest},
                {"unit", unit},
                {"seed", seed},
                {"overrides", ov.to_json()}};
}

UnitOutcome execute_run_unit(const scenario::ScenarioConfig& cfg,
                             const scenario::RunUnit& unit,
                             const Overrides& ov) {
    uint64_t seed = ov.seed.value_or(cfg.seed);
    std::string run_id = derive_run_id(cfg, unit.name, ov, seed);

    tools::ToolRegistry registry;
    for (const auto& spec : cfg.tools) registry.register_tool(spec);
    tools::ToolHost host;
    memory::MemoryStore mem;
    for (const auto& rec : cfg.memory_seed) mem.write(rec);

    policy::PolicyEngine engine(cfg.rules);
    policy::GateSession gate(&engine, run_id, cfg.staged, cfg.principals);

    std::vector<policy::Principal> chain;
    for (const auto& pid : unit.chain) chain.push_back(cfg.principals.at(pid));

    policy::Budget budget;
    budget.caps = unit.caps;

    kernel::RunParams params;
    params.window = unit.window;
    params.retrieve_limit = unit.retrieve_limit;
    params.stop = unit.stop;
    params.limits = unit.limits;
    params.chain = std::move(chain);
    params.breaker = unit.breaker;
    params.breaker_enabled = unit.breaker_enabled;
    params.run_started_extra = started_extra(cfg, unit.name, ov, seed);

    int64_t k_max = ov.k_max.value_or(unit.k_max);
    kernel::AgentState st = kernel::init_state(unit.goal, k_max, run_id);
    trace::TraceSink sink(run_id);
    kernel::RunResult res =
        kernel::run_loop(std::move(st), cfg.planners.at(unit.planner), registry,
                         gate, mem, host, sink, budget, params);

    UnitOutcome out;
    out.unit = unit.name;
    out.run_id = run_id;
    out.report = res.to_json();
    out.events = sink.events();
    return out;
}

UnitOutcome execute_sim_unit(const scenario::ScenarioConfig& cfg,
                             const Overrides& ov) {
    const scenario::SimUnit& sim = *cfg.sim;
    uint64_t seed = ov.seed.value_or(cfg.seed);
    std::string run_id = derive_run_id(cfg, "sim", ov, seed);

    std::set<std::string> declared;
    for (const auto& f : sim.injections)
        declared.insert(multiagent::to_string(f.mode));
    for (const auto& [mode, on] : ov.inject)
        if (mode != "all" && !declared.count(mode))
            throw Error("unknown-injection",
                        mode + " is not declared by this scenario");

    std::vector<multiagent::FailureInjection> injections;
    for (const auto& f : sim.injections) {
        auto t = toggle(ov.inject, multiagent::to_string(f.mode));
        if (t.has_value() && !*t) continue;
        injections.push_back(f);
    }

    for (const auto& [mode, on] : ov.mitigate)
        if (mode != "all" && !declared.count(mode))
            throw Error("unknown-injection",
                        mode + " is not declared by this scenario");

    multiagent::SimConfig sc;
    sc.t_max = ov.t_max.value_or(sim.t_max);
    sc.seed = seed;
    sc.detect = sim.detect;
    sc.mitigate = sim.mitigate;
    if (auto it = ov.mitigate.find("all"); it != ov.mitigate.end())
        sc.mitigate = it->second;
    for (const auto& f : sim.injections)
        if (auto it = ov.mitigate.find(multiagent::to_string(f.mode));
            it != ov.mitigate.end())
            sc.mitigate = it->second;
    sc.run_started_extra = started_extra(cfg, "sim", ov, seed);
    if (cfg.doc.contains("budgets") &&
        cfg.doc.at("budgets").contains("default"))
        sc.budget_caps = cfg.doc.at("budgets").at("default");

    trace::TraceSink sink(run_id);
    multiagent::SimReport rep =
        multiagent::simulate(sim.topology, sim.workload, injections, sc, sink);

    UnitOutcome out;
    out.unit = "sim";
    out.run_id = run_id;
    out.report = rep.to_json();
    out.events = sink.events();
    return out;
}

}  // namespace

UnitOutcome execute_unit(const scenario::ScenarioConfig& cfg,
                         const std::string& unit, const Overrides& ov) {
    for (const auto& r : cfg.runs)
        if (r.name == unit) return execute_run_unit(cfg, r, ov);
    if (unit == "sim" && cfg.sim) return execute_sim_unit(cfg, ov);
    throw Error("unknown-unit", unit);
}

std::vector<UnitOutcome> execute_all(const scenario::ScenarioConfig& cfg,
                                     const Overrides& ov) {
    std::vector<UnitOutcome> out;
    for (const auto& name : cfg.unit_names())
        out.push_back(execute_unit(cfg, name, ov));
    return out;
}

std::string trace_filename(const std::string& scenario_id,
                           const std::string& unit) {
    return scenario_id + "__" + unit + ".trace.jsonl";
}

namespace {

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + path);
    out << j.dump(2) << "\n";
    if (!out) throw Error("io", "write failed: " + path);
}

}  // namespace

json run_to_files(const scenario::ScenarioConfig& cfg, const Overrides& ov,
                  const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    json manifest{{"scenario", cfg.id},
                  {"scenario_digest", cfg.digest},
                  {"units", json::array()}};
    for (const auto& outcome : execute_all(cfg, ov)) {
        std::string trace_path =
            out_dir + "/" + trace_filename(cfg.id, outcome.unit);
        std::string report_path =
            out_dir + "/" + cfg.id + "__" + outcome.unit + ".report.json";
        trace::save_jsonl(trace_path, outcome.events);
        write_json_file(report_path, outcome.report);
        manifest["units"].push_back(json{{"unit", outcome.unit},
                                         {"run_id", outcome.run_id},
                                         {"trace", trace_path},
                                         {"report", report_path},
                                         {"events",
                                          outcome.events.size()}});
    }
    return manifest;
}

trace::ReplayVerdict replay_trace(const scenario::ScenarioConfig& cfg,
                                  const std::string& trace_path) {
    std::vector<std::string> lines = trace::read_lines(trace_path);
    if (lines.empty()) throw Error("invalid-corpus", "empty trace");
    json first;
    try {
        first = json::parse(lines.front());
    } catch (const json::parse_error&) {
        throw Error("invalid-corpus", "unparseable first event");
    }
    if (first.value("kind", std::string{}) != "RunStarted")
        throw Error("invalid-corpus", "trace does not begin with RunStarted");
    const json& payload = first.value("payload", json::object());
    std::string recorded_digest =
        payload.value("scenario_digest", std::string{});
    if (recorded_digest != cfg.digest)
        throw Error("scenario-mismatch",
                    "trace was produced by scenario digest " + recorded_digest);
    std::string unit = payload.value("unit", std::string{});
    Overrides ov = Overrides::from_json(payload.value("overrides",
                                                      json::object()));

    UnitOutcome reproduced = execute_unit(cfg, unit, ov);

    std::vector<json> recorded;
    for (const auto& line : lines) {
        try {
            recorded.push_back(json::parse(line));
        } catch (const json::parse_error&) {
            throw Error("invalid-corpus", "unparseable trace line");
        }
    }
    return trace::compare_chains(recorded,
                                 trace::events_to_json(reproduced.events));
}

json sweep_to_files(const scenario::ScenarioConfig& cfg,
                    const std::vector<uint64_t>& seeds, const Overrides& ov,
                    const std::string& out_dir) {
    if (!cfg.sim) throw Error("unknown-unit", "scenario has no simulation");
    std::filesystem::create_directories(out_dir);
    json manifest{{"scenario", cfg.id},
                  {"scenario_digest", cfg.digest},
                  {"sweeps", json::array()}};
    for (uint64_t seed : seeds) {
        Overrides per = ov;
        per.seed = seed;
        UnitOutcome outcome = execute_unit(cfg, "sim", per);
        std::string stem =
            out_dir + "/" + cfg.id + "__sim__s" + std::to_string(seed);
        trace::save_jsonl(stem + ".trace.jsonl", outcome.events);
        write_json_file(stem + ".report.json", outcome.report);
        manifest["sweeps"].push_back(json{{"seed", seed},
                                          {"run_id", outcome.run_id},
                                          {"trace", stem + ".trace.jsonl"},
                                          {"report", stem + ".report.json"}});
    }
    return manifest;
}

}  // namespace agentsim::runner
