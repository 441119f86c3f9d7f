// Command-line front end: run / replay / audit / sweep over scenario files.
// Exit codes: 0 success (run treats every terminal status as success of the
// contract, including FailedSafe), 1 divergence or a failed audit, 2 parse
// or validation errors, 3 io errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agentsim/audit.hpp"
#include "agentsim/error.hpp"
#include "agentsim/runner.hpp"
#include "agentsim/scenario.hpp"
#include "agentsim/trace.hpp"

namespace {

using agentsim::Error;
using json = nlohmann::json;

int exit_code_for(const Error& e) {
    return std::string(e.code()) == "io" ? 3 : 2;
}

struct CommonOpts {
    std::string scenario_path;
    std::string out_dir = ".";
    std::vector<std::string> inject;
    std::vector<std::string> mitigate;
    int64_t seed = -1;
    int64_t k_max = -1;
    int64_t t_max = -1;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("scenario", opts.scenario_path, "scenario file")
        ->required();
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "override RNG seed");
    cmd->add_option("--k-max", opts.k_max, "override per-run step bound");
    cmd->add_option("--t-max", opts.t_max, "override simulation horizon");
    cmd->add_option("--inject", opts.inject,
                    "<mode>=<on|off>: toggle a declared injection");
    cmd->add_option("--mitigate", opts.mitigate,
                    "<mode>=<on|off>: toggle mitigation for a mode");
}

bool parse_toggle(const std::string& arg, std::string& mode, bool& on) {
    auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0) return false;
    mode = arg.substr(0, eq);
    std::string value = arg.substr(eq + 1);
    if (value == "on") {
        on = true;
    } else if (value == "off") {
        on = false;
    } else {
        return false;
    }
    return true;
}

agentsim::runner::Overrides build_overrides(const CommonOpts& opts) {
    agentsim::runner::Overrides ov;
    if (opts.seed >= 0) ov.seed = static_cast<uint64_t>(opts.seed);
    if (opts.k_max >= 0) ov.k_max = opts.k_max;
    if (opts.t_max >= 0) ov.t_max = opts.t_max;
    for (const auto& arg : opts.inject) {
        std::string mode;
        bool on = false;
        if (!parse_toggle(arg, mode, on))
            throw Error("parse-error", "--inject expects <mode>=<on|off>: " + arg);
        ov.inject[mode] = on;
    }
    for (const auto& arg : opts.mitigate) {
        std::string mode;
        bool on = false;
        if (!parse_toggle(arg, mode, on))
            throw Error("parse-error",
                        "--mitigate expects <mode>=<on|off>: " + arg);
        ov.mitigate[mode] = on;
    }
    return ov;
}

int cmd_run(const CommonOpts& opts) {
    try {
        auto cfg = agentsim::scenario::load_scenario(opts.scenario_path);
        auto ov = build_overrides(opts);
        json manifest = agentsim::runner::run_to_files(cfg, ov, opts.out_dir);
        for (const auto& unit : manifest["units"]) {
            std::cout << cfg.id << "/" << unit["unit"].get<std::string>()
                      << ": " << unit["events"].get<int64_t>() << " events -> "
                      << unit["trace"].get<std::string>() << "\n";
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

int cmd_replay(const CommonOpts& opts, const std::string& trace_path) {
    try {
        auto cfg = agentsim::scenario::load_scenario(opts.scenario_path);
        auto verdict = agentsim::runner::replay_trace(cfg, trace_path);
        if (verdict.identical) {
            std::cout << "Identical\n";
            return 0;
        }
        std::cout << "DivergedAt(" << verdict.seq << ", " << verdict.field
                  << ")\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

int cmd_audit(const CommonOpts& opts,
              const std::vector<std::string>& trace_paths) {
    try {
        auto cfg = agentsim::scenario::load_scenario(opts.scenario_path);

        std::vector<std::vector<json>> corpus;
        for (const auto& path : trace_paths) {
            std::vector<json> events;
            auto lines = agentsim::trace::read_lines(path);
            for (const auto& line : lines) {
                try {
                    events.push_back(json::parse(line));
                } catch (const json::parse_error&) {
                    throw Error("invalid-corpus", "unparseable line in " + path);
                }
            }
            corpus.push_back(std::move(events));
        }

        agentsim::tools::ToolRegistry registry;
        for (const auto& spec : cfg.tools) registry.register_tool(spec);
        agentsim::policy::PolicyEngine engine(cfg.rules);

        std::vector<std::pair<std::string, std::string>> registry_digests;
        for (const auto& [id, d] : registry.digests())
            registry_digests.emplace_back(id, d);
        auto report = agentsim::audit::run_audit(corpus, registry_digests,
                                                 engine.rule_digests());
        std::cout << report.to_text();

        std::filesystem::create_directories(opts.out_dir);
        std::string report_path = opts.out_dir + "/" + cfg.id + ".audit.json";
        std::ofstream out(report_path, std::ios::trunc);
        if (!out) throw Error("io", "cannot write " + report_path);
        out << report.to_json().dump(2) << "\n";
        std::cout << "wrote " << report_path << "\n";
        return report.pass ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

int cmd_sweep(const CommonOpts& opts, const std::vector<int64_t>& seeds) {
    try {
        auto cfg = agentsim::scenario::load_scenario(opts.scenario_path);
        auto ov = build_overrides(opts);
        std::vector<uint64_t> seed_list;
        for (int64_t s : seeds) seed_list.push_back(static_cast<uint64_t>(s));
        if (seed_list.empty()) seed_list.push_back(cfg.seed);
        json manifest =
            agentsim::runner::sweep_to_files(cfg, seed_list, ov, opts.out_dir);
        for (const auto& sw : manifest["sweeps"]) {
            std::cout << cfg.id << " seed " << sw["seed"].get<uint64_t>()
                      << " -> " << sw["trace"].get<std::string>() << "\n";
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"governed agent runtime and topology simulator"};
    app.require_subcommand(1);

    CommonOpts run_opts;
    CLI::App* run_cmd =
        app.add_subcommand("run", "execute a scenario's runs and simulation");
    add_common(run_cmd, run_opts);

    CommonOpts replay_opts;
    std::string replay_trace_path;
    CLI::App* replay_cmd =
        app.add_subcommand("replay", "re-execute and compare against a trace");
    add_common(replay_cmd, replay_opts);
    replay_cmd->add_option("trace", replay_trace_path, "recorded trace file")
        ->required();

    CommonOpts audit_opts;
    std::vector<std::string> audit_traces;
    CLI::App* audit_cmd =
        app.add_subcommand("audit", "hardening checks over a trace corpus");
    add_common(audit_cmd, audit_opts);
    audit_cmd->add_option("traces", audit_traces, "trace files")->required();

    CommonOpts sweep_opts;
    std::vector<int64_t> sweep_seeds;
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "one simulation per seed");
    add_common(sweep_cmd, sweep_opts);
    sweep_cmd->add_option("--seeds", sweep_seeds, "seeds to sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (run_cmd->parsed()) return cmd_run(run_opts);
    if (replay_cmd->parsed()) return cmd_replay(replay_opts, replay_trace_path);
    if (audit_cmd->parsed()) return cmd_audit(audit_opts, audit_traces);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts, sweep_seeds);
    return 2;
}
