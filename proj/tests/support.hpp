#pragma once

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/digest.hpp"
#include "agentsim/scenario.hpp"
#include "agentsim/trace.hpp"

#ifndef AGENTSIM_SCENARIO_DIR
#define AGENTSIM_SCENARIO_DIR "scenarios"
#endif

namespace testsupport {

using nlohmann::json;

inline std::string scenario_path(const std::string& name) {
    return std::string(AGENTSIM_SCENARIO_DIR) + "/" + name + ".json";
}

inline agentsim::scenario::ScenarioConfig load(const std::string& name) {
    return agentsim::scenario::load_scenario(scenario_path(name));
}

// All shipped scenario ids, split by which unit they carry.
inline const std::vector<std::string>& run_scenarios() {
    static const std::vector<std::string> v{
        "healthy-single", "approval-single", "denied-single",
        "budget-single",  "breaker-single",
    };
    return v;
}

inline const std::vector<std::string>& sim_scenarios() {
    static const std::vector<std::string> v{
        "ow-silent",    "ow-mismatch", "ow-deadlock", "rs-misroute",
        "rs-overload",  "hier-distort", "swarm-herd",  "swarm-manip",
        "rs-healthy",   "hier-healthy",
    };
    return v;
}

inline std::vector<std::string> all_scenarios() {
    std::vector<std::string> v = run_scenarios();
    const auto& s = sim_scenarios();
    v.insert(v.end(), s.begin(), s.end());
    return v;
}

// Rechains a tampered event list so only the semantic edit is visible to
// the audit, not a broken hash chain.
inline std::vector<json> rehash(std::vector<json> events) {
    std::string prev = agentsim::digest::genesis();
    for (auto& ev : events) {
        ev["prev_hash"] = prev;
        ev["hash"] = agentsim::trace::compute_hash(ev);
        prev = ev["hash"].get<std::string>();
    }
    return events;
}

inline std::vector<json> parse_lines(const std::vector<std::string>& lines) {
    std::vector<json> out;
    for (const auto& l : lines) out.push_back(json::parse(l));
    return out;
}

}  // namespace testsupport
