#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/error.hpp"
#include "agentsim/trace.hpp"

namespace agentsim::multiagent {

using nlohmann::json;

enum class NodeRole { Orchestrator, Manager, Worker, Router, Solver, SwarmAgent };

const char* to_string(NodeRole r);
NodeRole node_role_from_string(const std::string& s);

/// Deterministic behavior knobs standing in for a node's planner: how long
/// work takes, what it bids, which solution option it picks.
struct NodeScript {
    std::string id = "node-script";
    std::string version = "1";
    int64_t work_steps = 1;
    std::vector<double> bids;          // rotating bid scores (swarm)
    std::vector<std::string> choices;  // rotating solution options (swarm)

    json to_json() const;
};

/// Maps a task's first recognized capability tag to a solver class vote.
struct ScriptedClassifier {
    std::string id;
    std::map<std::string, std::string> by_capability;
    std::string fallback_class;

    json to_json() const;
};

struct AgentNode {
    std::string id;
    NodeRole role = NodeRole::Worker;
    std::vector<std::string> capabilities;
    int privilege_level = 0;
    std::string principal;
    double stake = 0.0;
    NodeScript script;
    std::vector<ScriptedClassifier> classifiers;  // Router role
    std::vector<std::string> queue;               // runtime pending task ids
    int64_t quota = 4;

    json to_json() const;
};

enum class TopologyKind { OrchestratorWorker, RouterSolver, Hierarchical, Swarm };

const char* to_string(TopologyKind k);
TopologyKind topology_kind_from_string(const std::string& s);

struct Topology {
    TopologyKind kind = TopologyKind::OrchestratorWorker;
    std::vector<AgentNode> nodes;
    std::vector<std::pair<std::string, std::string>> edges;
    std::string root;

    const AgentNode* find(const std::string& id) const;
};

struct IntentHop {
    std::string agent_id;
    std::string goal_digest;
    std::string tag;

    json to_json() const;
};

enum class AckState { Pending, Acked, Nacked };

const char* to_string(AckState a);

struct AgentMessage {
    std::string msg_id;
    std::string from;
    std::string to;
    json fields = json::object();  // {task, evidence, constraints}
    std::vector<IntentHop> intent_chain;
    AckState ack = AckState::Pending;
    int64_t sent_step = 0;
    int64_t sent_seq = -1;  // trace seq of the MessageSent event
};

enum class TaskStatus { Pending, Assigned, Done, Revoked, Failed };

const char* to_string(TaskStatus s);

struct Task {
    std::string id;
    std::vector<std::string> required;  // capability tags
    std::string root_goal_digest;
    std::vector<std::string> deps;
    int64_t deadline = 12;
    TaskStatus status = TaskStatus::Pending;
    // runtime
    std::string assigned_to;
    int64_t assigned_at = -1;
    int64_t completed_at = -1;
    int64_t work_remaining = 0;
    int64_t handoffs = 0;
    int64_t reroutes = 0;
    bool fallback = false;

    json to_json() const;
};

enum class FailureMode {
    SilentWorkerFailure,
    CapabilityMismatch,
    Misrouting,
    SolverOverloadCascade,
    CommandDistortion,
    DelegationDeadlock,
    Herding,
    StrategicManipulation,
};

const char* to_string(FailureMode m);
FailureMode failure_mode_from_string(const std::string& s);

/// onset is the target's last healthy step: the altered behavior applies to
/// every step strictly after it.
struct FailureInjection {
    FailureMode mode = FailureMode::SilentWorkerFailure;
    std::vector<std::string> targets;
    int64_t onset = 0;
    json params = json::object();

    json to_json() const;
};

struct Alarm {
    std::string detector;
    int64_t step = 0;
    std::vector<int64_t> evidence;  // trace seq refs, never empty
    std::string target;

    json to_json() const;
};

// Detector kind names used in Alarm.detector and AlarmRaised payloads.
inline constexpr const char* kHeartbeatMissing = "HeartbeatMissing";
inline constexpr const char* kRejectionSpike = "RejectionSpike";
inline constexpr const char* kRerouteCycle = "RerouteCycle";
inline constexpr const char* kQueueDepth = "QueueDepth";
inline constexpr const char* kRootGoalDivergence = "RootGoalDivergence";
inline constexpr const char* kPlanningTimeout = "PlanningTimeout";
inline constexpr const char* kGiniBreach = "GiniBreach";
inline constexpr const char* kSolutionCollapse = "SolutionCollapse";
inline constexpr const char* kSybilCollusion = "SybilCollusion";
inline constexpr const char* kBidRetraction = "BidRetraction";
inline constexpr const char* kReputationInflation = "ReputationInflation";

/// Detector kinds that count as detecting the given failure mode.
std::vector<std::string> matching_detectors(FailureMode mode);

struct DetectorConfig {
    int64_t heartbeat_interval = 1;
    int64_t miss_threshold = 3;
    double g_thresh = 0.6;
    double e_thresh = 1.0;  // bits
    int64_t r_max = 3;
    int64_t h_max = 3;
    double alert_fraction = 0.8;
    double slash_fraction = 0.5;
    int64_t fingerprint_k = 3;
    double theta = 0.6;  // routing confidence threshold
    int64_t align_interval = 2;
    int64_t rejection_threshold = 3;
    int64_t rejection_window = 8;
    int64_t metric_window = 8;  // herding win/choice window
    int64_t detection_window = 8;
    double collusion_threshold = 2.0;  // pairwise stake sum below = colluding
    double s0 = 1.0;                   // bonding curve shift
    double lambda = 0.5;               // anti-correlation penalty weight
    double epsilon = 0.25;             // exploration floor
    int64_t reputation_window = 8;

    json to_json() const;
    static DetectorConfig from_json(const json& j);
};

struct DetectionRecord {
    std::string mode;
    int64_t onset = 0;
    int64_t first_alarm_step = -1;  // -1 = never detected
    int64_t latency = -1;
    std::string detector;

    json to_json() const;
};

struct SimReport {
    uint64_t seed = 0;
    int64_t steps_run = 0;
    int64_t tasks_done = 0;
    int64_t tasks_failed = 0;
    int64_t tasks_revoked = 0;
    int64_t fallback_count = 0;    // tasks parked on the human queue
    int64_t revocation_events = 0;
    int64_t deps_rejected = 0;  // dep edges refused by DAG enforcement
    std::vector<Alarm> alarms;
    std::vector<DetectionRecord> detection;
    std::map<std::string, TaskStatus> task_status;
    std::map<std::string, int64_t> max_queue_depth;
    json market = json::object();
    std::string trace_ref;

    json to_json() const;
};

struct SimConfig {
    int64_t t_max = 20;
    uint64_t seed = 0;
    DetectorConfig detect;
    bool mitigate = false;
    std::string intent_key = "intent-key";
    std::string sim_principal = "sim";
    json budget_caps = json::object();  // provenance snapshot only
    json run_started_extra = json::object();
};

/// errors: "cycle-detected" (Hierarchical/OrchestratorWorker edge cycles),
/// "missing-stake" (Swarm), "unknown-node-in-edge", "invalid-node",
/// "missing-root".
Topology build_topology(TopologyKind kind, std::vector<AgentNode> nodes,
                        std::vector<std::pair<std::string, std::string>> edges,
                        std::string root);

struct CapabilityVerdict {
    bool match = true;
    std::vector<std::string> missing;
};

/// Match iff every required tag is among the node's capabilities.
CapabilityVerdict check_capability(const Task& task, const AgentNode& node);

struct RouteResult {
    bool fallback = false;
    std::string solver;
    double confidence = 0.0;
};

/// Plurality over classifier votes; ties break to the lexicographically
/// smallest class; confidence below theta falls back to the human queue.
RouteResult route_from_votes(const std::vector<std::string>& votes, double theta);
RouteResult route_task(const Task& task,
                       const std::vector<ScriptedClassifier>& ensemble,
                       double theta);

enum class AdmitVerdict { Admitted, Backpressure };

/// Admitted iff queue depth < quota.
AdmitVerdict admit(const AgentNode& solver);

struct IntentVerdict {
    bool ok = true;
    int64_t distorted_at = -1;  // 1-based hop index

    json to_json() const;
};

/// Appends a hop whose tag is the keyed hash over (previous tag, digest).
std::vector<IntentHop> extend_intent_chain(std::vector<IntentHop> chain,
                                           const std::string& agent_id,
                                           const std::string& goal_digest,
                                           const std::string& key);

/// Recomputes every hop tag and checks each hop's digest against the root
/// goal; reports the first bad hop (1-based).
IntentVerdict verify_intent_chain(const std::vector<IntentHop>& chain,
                                  const std::string& root_digest,
                                  const std::string& key);

struct CycleVerdict {
    bool acyclic = true;
    std::vector<std::string> cycle;  // witness, in edge order

    json to_json() const;
};

/// Kahn's algorithm plus witness extraction from the unpeeled remainder.
CycleVerdict detect_cycle(
    const std::map<std::string, std::vector<std::string>>& adjacency);

struct HerdingMetrics {
    double gini = 0.0;
    double entropy_bits = 0.0;
};

/// gini over the allocation vector (mean absolute difference form);
/// entropy in bits over the selection distribution.
/// errors: "invalid-distribution".
HerdingMetrics herding_metrics(const std::vector<double>& allocation,
                               const std::vector<double>& selections);

double gini(const std::vector<double>& allocation);
double entropy_bits(const std::vector<double>& distribution);

struct Bid {
    std::string agent;
    double score = 0.0;
    std::string fingerprint;
    bool retract = false;

    json to_json() const;
};

struct MarketParams {
    double s0 = 1.0;
    double slash_fraction = 0.5;
    int64_t fingerprint_k = 3;
    double collusion_threshold = 2.0;
    std::map<std::string, double> penalties;  // subtracted from scores
};

struct MarketOutcome {
    std::string winner;  // empty when the winning bid was retracted
    double winning_effective = 0.0;
    std::map<std::string, double> effective_bids;
    std::map<std::string, double> penalties;
    std::vector<std::pair<std::string, double>> slashes;  // (agent, amount)
    std::vector<std::string> retractions;
    std::vector<std::string> sybil_group;

    json to_json() const;
};

/// Effective bid = (score - penalty) x stake/(stake+s0); ties break to the
/// smallest agent id. Retraction forfeits the winner's slash share. A group
/// of >= k identical fingerprints whose pairwise stake sums all sit below
/// the collusion threshold is reported as sybil with per-member slashes.
/// Reported slashes are applied by the caller, not here.
/// errors: "unstaked-bidder".
MarketOutcome market_round(const Task& task, const std::vector<Bid>& bids,
                           const std::map<std::string, double>& stakes,
                           const MarketParams& params);

/// Lock-step deterministic simulation; every behavior change, alarm and
/// mitigation action shows up in the trace sink.
/// errors: "incompatible-injection" when a target's role cannot exhibit the
/// mode (e.g. CommandDistortion on a Worker).
void validate_injection(const Topology& topo, const FailureInjection& f);

SimReport simulate(const Topology& topology, std::vector<Task> workload,
                   const std::vector<FailureInjection>& injections,
                   const SimConfig& cfg, trace::TraceSink& sink);

}  // namespace agentsim::multiagent
