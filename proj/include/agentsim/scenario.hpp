#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/kernel.hpp"
#include "agentsim/memory.hpp"
#include "agentsim/multiagent.hpp"
#include "agentsim/policy.hpp"
#include "agentsim/tools.hpp"

// One self-contained JSON document per experiment. The digest of its
// canonical serialization identifies the scenario; replay refuses traces
// whose recorded digest differs.

namespace agentsim::scenario {

using json = nlohmann::json;

struct RunUnit {
    std::string name;
    kernel::Goal goal;
    int64_t k_max = 8;
    std::string planner;             // key into ScenarioConfig::planners
    std::vector<std::string> chain;  // principal ids, head first
    policy::BudgetVec caps;
    int64_t window = 8;
    int64_t retrieve_limit = 5;
    kernel::StopConfig stop;
    tools::SandboxLimits limits;
    policy::BreakerConfig breaker;
    bool breaker_enabled = true;
};

struct SimUnit {
    multiagent::Topology topology;
    std::vector<multiagent::Task> workload;
    std::vector<multiagent::FailureInjection> injections;
    multiagent::DetectorConfig detect;
    bool mitigate = false;
    int64_t t_max = 20;
};

struct ScenarioConfig {
    std::string id;
    std::string description;
    uint64_t seed = 0;
    std::string digest;  // of the canonical document
    json doc;            // the parsed document, key-sorted

    std::vector<tools::ToolSpec> tools;
    std::map<std::string, policy::Principal> principals;
    std::vector<policy::PolicyRule> rules;
    std::vector<policy::StagedApproval> staged;
    std::map<std::string, kernel::PlannerScript> planners;
    std::vector<memory::MemoryRecord> memory_seed;
    std::vector<RunUnit> runs;
    std::optional<SimUnit> sim;

    /// Unit names in execution order: each run's name, then "sim".
    std::vector<std::string> unit_names() const;
};

/// Parsing helpers shared with tests; all throw Error("parse-error", ...)
/// on malformed input.
tools::ToolSpec tool_spec_from_json(const json& j);
policy::Principal principal_from_json(const json& j);
policy::PolicyRule rule_from_json(const json& j);
kernel::PlanProposal proposal_from_json(const json& j);
kernel::PlannerScript planner_from_json(const json& j);
multiagent::Task task_from_json(const json& j);
multiagent::FailureInjection injection_from_json(const json& j);
multiagent::AgentNode node_from_json(const json& j);

/// errors: "parse-error" (malformed document or missing section, detail
/// names it), plus the referenced modules' own validation codes
/// ("duplicate-version", "cycle-detected", "incompatible-injection", ...).
ScenarioConfig parse_scenario(const json& doc);

/// errors: "io" on unreadable path, otherwise as parse_scenario.
ScenarioConfig load_scenario(const std::string& path);

}  // namespace agentsim::scenario
