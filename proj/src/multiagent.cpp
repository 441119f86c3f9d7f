#include "agentsim/multiagent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <random>
#include <set>

#include "agentsim/digest.hpp"

namespace agentsim::multiagent {

const char* to_string(NodeRole r) {
    switch (r) {
        case NodeRole::Orchestrator: return "Orchestrator";
        case NodeRole::Manager: return "Manager";
        case NodeRole::Worker: return "Worker";
        case NodeRole::Router: return "Router";
        case NodeRole::Solver: return "Solver";
        case NodeRole::SwarmAgent: return "SwarmAgent";
    }
    return "?";
}

NodeRole node_role_from_string(const std::string& s) {
    if (s == "Orchestrator") return NodeRole::Orchestrator;
    if (s == "Manager") return NodeRole::Manager;
    if (s == "Worker") return NodeRole::Worker;
    if (s == "Router") return NodeRole::Router;
    if (s == "Solver") return NodeRole::Solver;
    if (s == "SwarmAgent") return NodeRole::SwarmAgent;
    throw Error("invalid-node", "unknown role: " + s);
}

json NodeScript::to_json() const {
    return json{{"id", id},
                {"version", version},
                {"work_steps", work_steps},
                {"bids", bids},
                {"choices", choices}};
}

json ScriptedClassifier::to_json() const {
    return json{{"id", id},
                {"by_capability", by_capability},
                {"fallback_class", fallback_class}};
}

json AgentNode::to_json() const {
    json cls = json::array();
    for (const auto& c : classifiers) cls.push_back(c.to_json());
    return json{{"id", id},
                {"role", to_string(role)},
                {"capabilities", capabilities},
                {"privilege_level", privilege_level},
                {"principal", principal},
                {"stake", stake},
                {"script", script.to_json()},
                {"classifiers", cls},
                {"quota", quota}};
}

const char* to_string(TopologyKind k) {
    switch (k) {
        case TopologyKind::OrchestratorWorker: return "OrchestratorWorker";
        case TopologyKind::RouterSolver: return "RouterSolver";
        case TopologyKind::Hierarchical: return "Hierarchical";
        case TopologyKind::Swarm: return "Swarm";
    }
    return "?";
}

TopologyKind topology_kind_from_string(const std::string& s) {
    if (s == "OrchestratorWorker") return TopologyKind::OrchestratorWorker;
    if (s == "RouterSolver") return TopologyKind::RouterSolver;
    if (s == "Hierarchical") return TopologyKind::Hierarchical;
    if (s == "Swarm") return TopologyKind::Swarm;
    throw Error("invalid-node", "unknown topology kind: " + s);
}

const AgentNode* Topology::find(const std::string& id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

json IntentHop::to_json() const {
    return json{{"agent_id", agent_id}, {"goal_digest", goal_digest}, {"tag", tag}};
}

const char* to_string(AckState a) {
    switch (a) {
        case AckState::Pending: return "Pending";
        case AckState::Acked: return "Acked";
        case AckState::Nacked: return "Nacked";
    }
    return "?";
}

const char* to_string(TaskStatus s) {
    switch (s) {
        case TaskStatus::Pending: return "Pending";
        case TaskStatus::Assigned: return "Assigned";
        case TaskStatus::Done: return "Done";
        case TaskStatus::Revoked: return "Revoked";
        case TaskStatus::Failed: return "Failed";
    }
    return "?";
}

json Task::to_json() const {
    return json{{"id", id},
                {"required", required},
                {"root_goal_digest", root_goal_digest},
                {"deps", deps},
                {"deadline", deadline},
                {"status", to_string(status)}};
}

const char* to_string(FailureMode m) {
    switch (m) {
        case FailureMode::SilentWorkerFailure: return "SilentWorkerFailure";
        case FailureMode::CapabilityMismatch: return "CapabilityMismatch";
        case FailureMode::Misrouting: return "Misrouting";
        case FailureMode::SolverOverloadCascade: return "SolverOverloadCascade";
        case FailureMode::CommandDistortion: return "CommandDistortion";
        case FailureMode::DelegationDeadlock: return "DelegationDeadlock";
        case FailureMode::Herding: return "Herding";
        case FailureMode::StrategicManipulation: return "StrategicManipulation";
    }
    return "?";
}

FailureMode failure_mode_from_string(const std::string& s) {
    static const std::pair<const char*, FailureMode> table[] = {
        {"SilentWorkerFailure", FailureMode::SilentWorkerFailure},
        {"CapabilityMismatch", FailureMode::CapabilityMismatch},
        {"Misrouting", FailureMode::Misrouting},
        {"SolverOverloadCascade", FailureMode::SolverOverloadCascade},
        {"CommandDistortion", FailureMode::CommandDistortion},
        {"DelegationDeadlock", FailureMode::DelegationDeadlock},
        {"Herding", FailureMode::Herding},
        {"StrategicManipulation", FailureMode::StrategicManipulation},
    };
    for (const auto& [name, mode] : table)
        if (s == name) return mode;
    throw Error("invalid-injection", "unknown failure mode: " + s);
}

json FailureInjection::to_json() const {
    return json{{"mode", to_string(mode)},
                {"targets", targets},
                {"onset", onset},
                {"params", params}};
}

json Alarm::to_json() const {
    return json{{"detector", detector},
                {"step", step},
                {"evidence", evidence},
                {"target", target}};
}

std::vector<std::string> matching_detectors(FailureMode mode) {
    switch (mode) {
        case FailureMode::SilentWorkerFailure: return {kHeartbeatMissing};
        case FailureMode::CapabilityMismatch: return {kRejectionSpike};
        case FailureMode::Misrouting: return {kRerouteCycle};
        case FailureMode::SolverOverloadCascade: return {kQueueDepth};
        case FailureMode::CommandDistortion: return {kRootGoalDivergence};
        case FailureMode::DelegationDeadlock: return {kPlanningTimeout};
        case FailureMode::Herding: return {kGiniBreach, kSolutionCollapse};
        case FailureMode::StrategicManipulation:
            return {kSybilCollusion, kBidRetraction, kReputationInflation};
    }
    return {};
}

json DetectorConfig::to_json() const {
    return json{{"heartbeat_interval", heartbeat_interval},
                {"miss_threshold", miss_threshold},
                {"g_thresh", g_thresh},
                {"e_thresh", e_thresh},
                {"r_max", r_max},
                {"h_max", h_max},
                {"alert_fraction", alert_fraction},
                {"slash_fraction", slash_fraction},
                {"fingerprint_k", fingerprint_k},
                {"theta", theta},
                {"align_interval", align_interval},
                {"rejection_threshold", rejection_threshold},
                {"rejection_window", rejection_window},
                {"metric_window", metric_window},
                {"detection_window", detection_window},
                {"collusion_threshold", collusion_threshold},
                {"s0", s0},
                {"lambda", lambda},
                {"epsilon", epsilon},
                {"reputation_window", reputation_window}};
}

DetectorConfig DetectorConfig::from_json(const json& j) {
    DetectorConfig c;
    c.heartbeat_interval = j.value("heartbeat_interval", c.heartbeat_interval);
    c.miss_threshold = j.value("miss_threshold", c.miss_threshold);
    c.g_thresh = j.value("g_thresh", c.g_thresh);
    c.e_thresh = j.value("e_thresh", c.e_thresh);
    c.r_max = j.value("r_max", c.r_max);
    c.h_max = j.value("h_max", c.h_max);
    c.alert_fraction = j.value("alert_fraction", c.alert_fraction);
    c.slash_fraction = j.value("slash_fraction", c.slash_fraction);
    c.fingerprint_k = j.value("fingerprint_k", c.fingerprint_k);
    c.theta = j.value("theta", c.theta);
    c.align_interval = j.value("align_interval", c.align_interval);
    c.rejection_threshold = j.value("rejection_threshold", c.rejection_threshold);
    c.rejection_window = j.value("rejection_window", c.rejection_window);
    c.metric_window = j.value("metric_window", c.metric_window);
    c.detection_window = j.value("detection_window", c.detection_window);
    c.collusion_threshold = j.value("collusion_threshold", c.collusion_threshold);
    c.s0 = j.value("s0", c.s0);
    c.lambda = j.value("lambda", c.lambda);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.reputation_window = j.value("reputation_window", c.reputation_window);
    return c;
}

json DetectionRecord::to_json() const {
    return json{{"mode", mode},
                {"onset", onset},
                {"first_alarm_step", first_alarm_step},
                {"latency", latency},
                {"detector", detector}};
}

json SimReport::to_json() const {
    json alarms_j = json::array();
    for (const auto& a : alarms) alarms_j.push_back(a.to_json());
    json det_j = json::array();
    for (const auto& d : detection) det_j.push_back(d.to_json());
    json status_j = json::object();
    for (const auto& [id, s] : task_status) status_j[id] = to_string(s);
    return json{{"seed", seed},
                {"steps_run", steps_run},
                {"tasks_done", tasks_done},
                {"tasks_failed", tasks_failed},
                {"tasks_revoked", tasks_revoked},
                {"fallback_count", fallback_count},
                {"revocation_events", revocation_events},
                {"deps_rejected", deps_rejected},
                {"alarms", alarms_j},
                {"detection", det_j},
                {"task_status", status_j},
                {"max_queue_depth", max_queue_depth},
                {"market", market},
                {"trace_ref", trace_ref}};
}

json IntentVerdict::to_json() const {
    json j{{"ok", ok}};
    if (!ok) j["distorted_at"] = distorted_at;
    return j;
}

json CycleVerdict::to_json() const {
    json j{{"acyclic", acyclic}};
    if (!acyclic) j["cycle"] = cycle;
    return j;
}

json Bid::to_json() const {
    return json{{"agent", agent},
                {"score", score},
                {"fingerprint", fingerprint},
                {"retract", retract}};
}

json MarketOutcome::to_json() const {
    json slashes_j = json::array();
    for (const auto& [agent, amount] : slashes)
        slashes_j.push_back(json{{"agent", agent}, {"amount", amount}});
    return json{{"winner", winner},
                {"winning_effective", winning_effective},
                {"effective_bids", effective_bids},
                {"penalties", penalties},
                {"slashes", slashes_j},
                {"retractions", retractions},
                {"sybil_group", sybil_group}};
}

Topology build_topology(TopologyKind kind, std::vector<AgentNode> nodes,
                        std::vector<std::pair<std::string, std::string>> edges,
                        std::string root) {
    std::set<std::string> ids;
    for (const auto& n : nodes) {
        if (n.id.empty()) throw Error("invalid-node", "empty node id");
        if (!ids.insert(n.id).second)
            throw Error("invalid-node", "duplicate node id: " + n.id);
        if ((n.role == NodeRole::Worker || n.role == NodeRole::Solver) &&
            n.capabilities.empty())
            throw Error("invalid-node", n.id + ": capabilities required");
        if (n.stake < 0) throw Error("invalid-node", n.id + ": negative stake");
        if (n.quota < 1) throw Error("invalid-node", n.id + ": quota must be >= 1");
    }
    for (const auto& [from, to] : edges) {
        if (!ids.count(from)) throw Error("unknown-node-in-edge", from);
        if (!ids.count(to)) throw Error("unknown-node-in-edge", to);
    }

    if (kind != TopologyKind::Swarm) {
        if (root.empty() || !ids.count(root)) throw Error("missing-root", root);
    }
    if (kind == TopologyKind::Hierarchical ||
        kind == TopologyKind::OrchestratorWorker) {
        std::map<std::string, std::vector<std::string>> adj;
        for (const auto& id : ids) adj[id];
        for (const auto& [from, to] : edges) adj[from].push_back(to);
        auto verdict = detect_cycle(adj);
        if (!verdict.acyclic) {
            std::string joined;
            for (const auto& n : verdict.cycle) {
                if (!joined.empty()) joined += ",";
                joined += n;
            }
            throw Error("cycle-detected", joined);
        }
    }
    if (kind == TopologyKind::Swarm) {
        for (const auto& n : nodes)
            if (n.role == NodeRole::SwarmAgent && n.stake <= 0)
                throw Error("missing-stake", n.id);
    }

    Topology t;
    t.kind = kind;
    t.nodes = std::move(nodes);
    t.edges = std::move(edges);
    t.root = std::move(root);
    return t;
}

CapabilityVerdict check_capability(const Task& task, const AgentNode& node) {
    CapabilityVerdict v;
    std::set<std::string> have(node.capabilities.begin(), node.capabilities.end());
    for (const auto& tag : task.required)
        if (!have.count(tag)) v.missing.push_back(tag);
    v.match = v.missing.empty();
    return v;
}

RouteResult route_from_votes(const std::vector<std::string>& votes, double theta) {
    if (votes.empty()) throw Error("invalid-argument", "empty vote set");
    std::map<std::string, int64_t> counts;
    for (const auto& v : votes) counts[v]++;
    std::string best;
    int64_t best_count = -1;
    for (const auto& [cls, count] : counts) {  // map order breaks ties low
        if (count > best_count) {
            best = cls;
            best_count = count;
        }
    }
    RouteResult r;
    r.confidence = static_cast<double>(best_count) /
                   static_cast<double>(votes.size());
    if (r.confidence < theta) {
        r.fallback = true;
        return r;
    }
    r.solver = best;
    return r;
}

RouteResult route_task(const Task& task,
                       const std::vector<ScriptedClassifier>& ensemble,
                       double theta) {
    if (ensemble.empty()) throw Error("invalid-argument", "empty ensemble");
    std::vector<std::string> votes;
    for (const auto& c : ensemble) {
        std::string vote = c.fallback_class;
        for (const auto& tag : task.required) {
            auto it = c.by_capability.find(tag);
            if (it != c.by_capability.end()) {
                vote = it->second;
                break;
            }
        }
        votes.push_back(vote);
    }
    return route_from_votes(votes, theta);
}

AdmitVerdict admit(const AgentNode& solver) {
    return static_cast<int64_t>(solver.queue.size()) < solver.quota
               ? AdmitVerdict::Admitted
               : AdmitVerdict::Backpressure;
}

std::vector<IntentHop> extend_intent_chain(std::vector<IntentHop> chain,
                                           const std::string& agent_id,
                                           const std::string& goal_digest,
                                           const std::string& key) {
    std::string prev = chain.empty() ? "" : chain.back().tag;
    IntentHop hop;
    hop.agent_id = agent_id;
    hop.goal_digest = goal_digest;
    hop.tag = digest::hmac_sha256_hex(key, prev + "|" + goal_digest);
    chain.push_back(std::move(hop));
    return chain;
}

IntentVerdict verify_intent_chain(const std::vector<IntentHop>& chain,
                                  const std::string& root_digest,
                                  const std::string& key) {
    std::string prev;
    for (size_t i = 0; i < chain.size(); ++i) {
        const IntentHop& hop = chain[i];
        std::string want = digest::hmac_sha256_hex(key, prev + "|" + hop.goal_digest);
        if (hop.tag != want || hop.goal_digest != root_digest)
            return {false, static_cast<int64_t>(i + 1)};
        prev = hop.tag;
    }
    return {true, -1};
}

CycleVerdict detect_cycle(
    const std::map<std::string, std::vector<std::string>>& adjacency) {
    // Kahn's algorithm: peel indegree-0 nodes until none remain.
    std::map<std::string, int64_t> indegree;
    for (const auto& [node, succs] : adjacency) {
        indegree.try_emplace(node, 0);
        for (const auto& s : succs) indegree[s]++;
    }
    std::set<std::string> remaining;
    for (const auto& [node, deg] : indegree) remaining.insert(node);
    bool progress = true;
    while (progress) {
        progress = false;
        for (auto it = remaining.begin(); it != remaining.end();) {
            if (indegree[*it] == 0) {
                auto adj_it = adjacency.find(*it);
                if (adj_it != adjacency.end())
                    for (const auto& s : adj_it->second)
                        if (remaining.count(s)) indegree[s]--;
                it = remaining.erase(it);
                progress = true;
            } else {
                ++it;
            }
        }
    }
    if (remaining.empty()) return {true, {}};

    // The remainder holds every cycle plus nodes downstream of one; strip
    // nodes with no successor inside the remainder, then a successor walk
    // must close a loop.
    bool stripped = true;
    while (stripped) {
        stripped = false;
        for (auto it = remaining.begin(); it != remaining.end();) {
            bool has_succ = false;
            auto adj_it = adjacency.find(*it);
            if (adj_it != adjacency.end())
                for (const auto& s : adj_it->second)
                    if (remaining.count(s)) has_succ = true;
            if (!has_succ) {
                it = remaining.erase(it);
                stripped = true;
            } else {
                ++it;
            }
        }
    }

    std::vector<std::string> walk;
    std::map<std::string, size_t> seen;
    std::string cur = *remaining.begin();
    while (!seen.count(cur)) {
        seen[cur] = walk.size();
        walk.push_back(cur);
        const auto& succs = adjacency.at(cur);
        std::string next;
        for (const auto& s : succs) {
            if (remaining.count(s) && (next.empty() || s < next)) next = s;
        }
        cur = next;
    }
    std::vector<std::string> cycle(walk.begin() + seen[cur], walk.end());
    return {false, cycle};
}

double gini(const std::vector<double>& allocation) {
    size_t n = allocation.size();
    double sum = 0, diff = 0;
    for (double x : allocation) sum += x;
    double mu = sum / static_cast<double>(n);
    if (mu == 0) return 0.0;
    for (double a : allocation)
        for (double b : allocation) diff += std::abs(a - b);
    return diff / (2.0 * static_cast<double>(n) * static_cast<double>(n) * mu);
}

double entropy_bits(const std::vector<double>& distribution) {
    double h = 0;
    for (double p : distribution)
        if (p > 0) h -= p * std::log2(p);
    return h;
}

HerdingMetrics herding_metrics(const std::vector<double>& allocation,
                               const std::vector<double>& selections) {
    if (allocation.empty())
        throw Error("invalid-distribution", "empty allocation");
    double total = 0;
    for (double x : allocation) {
        if (x < 0) throw Error("invalid-distribution", "negative allocation");
        total += x;
    }
    if (total == 0) throw Error("invalid-distribution", "all-zero allocation");
    double psum = 0;
    for (double p : selections) {
        if (p < 0) throw Error("invalid-distribution", "negative probability");
        psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-9)
        throw Error("invalid-distribution", "selections must sum to 1");
    return {gini(allocation), entropy_bits(selections)};
}

MarketOutcome market_round(const Task& task, const std::vector<Bid>& bids,
                           const std::map<std::string, double>& stakes,
                           const MarketParams& params) {
    (void)task;
    MarketOutcome out;
    for (const auto& b : bids) {
        auto it = stakes.find(b.agent);
        if (it == stakes.end() || it->second <= 0)
            throw Error("unstaked-bidder", b.agent);
        double penalty = 0;
        if (auto p = params.penalties.find(b.agent); p != params.penalties.end())
            penalty = p->second;
        if (penalty > 0) out.penalties[b.agent] = penalty;
        double weight = it->second / (it->second + params.s0);
        out.effective_bids[b.agent] = (b.score - penalty) * weight;
    }

    const Bid* winner = nullptr;
    for (const auto& b : bids) {
        double eff = out.effective_bids[b.agent];
        if (!winner || eff > out.winning_effective ||
            (eff == out.winning_effective && b.agent < winner->agent)) {
            winner = &b;
            out.winning_effective = eff;
        }
    }
    if (winner) {
        if (winner->retract) {
            out.retractions.push_back(winner->agent);
            out.slashes.emplace_back(
                winner->agent, params.slash_fraction * stakes.at(winner->agent));
        } else {
            out.winner = winner->agent;
        }
    }

    // Sybil screen: a fingerprint shared by >= k agents whose stakes are all
    // small enough that every pairwise sum stays under the threshold.
    std::map<std::string, std::vector<const Bid*>> by_fp;
    for (const auto& b : bids)
        if (!b.fingerprint.empty()) by_fp[b.fingerprint].push_back(&b);
    for (const auto& [fp, group] : by_fp) {
        if (static_cast<int64_t>(group.size()) < params.fingerprint_k) continue;
        double max_pair = 0;
        for (size_t i = 0; i < group.size(); ++i)
            for (size_t j = i + 1; j < group.size(); ++j)
                max_pair = std::max(max_pair, stakes.at(group[i]->agent) +
                                                  stakes.at(group[j]->agent));
        if (max_pair < params.collusion_threshold) {
            for (const Bid* b : group) {
                out.sybil_group.push_back(b->agent);
                out.slashes.emplace_back(
                    b->agent, params.slash_fraction * stakes.at(b->agent));
            }
        }
    }
    std::sort(out.sybil_group.begin(), out.sybil_group.end());
    return out;
}

namespace {

using trace::EventKind;

std::string pad6(int64_t n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(n));
    return buf;
}

json zero_budget_consumed() {
    return json{{"tokens", 0}, {"time_units", 0}, {"tool_calls", 0},
                {"cost_units", 0.0}};
}

struct NodeState {
    AgentNode node;
    double stake = 0;
    int64_t reputation = 0;
    int64_t last_heartbeat = 0;
    int64_t last_heartbeat_seq = -1;
    bool quarantined = false;
    int64_t busy_remaining = 0;
    std::deque<std::pair<int64_t, int64_t>> rejections;  // (step, nack seq)
    std::deque<int64_t> rep_increments;   // steps where reputation rose
    std::deque<int64_t> rep_completions;  // steps where a task finished
};

struct Sim {
    const Topology& topo;
    const SimConfig& cfg;
    trace::TraceSink& sink;

    std::map<std::string, NodeState> nodes;
    std::map<std::string, Task> tasks;
    std::map<std::string, std::vector<std::string>> dep_graph;
    std::map<std::string, std::vector<IntentHop>> task_chain;  // accepted chains
    std::vector<AgentMessage> in_flight;
    std::mt19937_64 rng;
    int64_t t = 0;
    int64_t msg_counter = 0;
    int64_t auction_count = 0;
    bool deadlock_deps_applied = false;
    SimReport report;
    std::set<std::string> alarm_keys;
    std::set<std::string> timeout_flagged;  // tasks with a PlanningTimeout alarm
    std::map<std::string, int64_t> last_task_seq;
    std::deque<std::pair<std::string, std::string>> wins;  // (agent, choice)
    std::map<std::string, std::vector<std::string>> subtree;  // node -> capability closure

    explicit Sim(const Topology& topo_, const SimConfig& cfg_,
                 trace::TraceSink& sink_)
        : topo(topo_), cfg(cfg_), sink(sink_), rng(cfg_.seed) {}

    // ---- injections ----

    const FailureInjection* injection(FailureMode m) const {
        for (const auto& f : injections_)
            if (f.mode == m) return &f;
        return nullptr;
    }

    bool active(const FailureInjection* f) const { return f && t > f->onset; }

    static bool targets_node(const FailureInjection& f, const std::string& id) {
        return std::find(f.targets.begin(), f.targets.end(), id) !=
               f.targets.end();
    }

    std::vector<FailureInjection> injections_;

    // ---- trace plumbing ----

    trace::Provenance prov(const std::string& node_id) const {
        trace::Provenance p;
        if (node_id.empty()) {
            p.planner_id = "scheduler";
            p.planner_version = "1";
            p.principal = cfg.sim_principal;
        } else {
            const NodeState& ns = nodes.at(node_id);
            p.planner_id = ns.node.script.id;
            p.planner_version = ns.node.script.version;
            p.principal =
                ns.node.principal.empty() ? cfg.sim_principal : ns.node.principal;
        }
        p.budget = json{{"caps", cfg.budget_caps}, {"consumed", zero_budget_consumed()}};
        return p;
    }

    int64_t emit(EventKind kind, json payload, const std::string& node_id = "") {
        return sink.emit(t, kind, std::move(payload), prov(node_id));
    }

    int64_t head_seq() const {
        return static_cast<int64_t>(sink.events().size()) - 1;
    }

    void raise(const std::string& detector, const std::string& target,
               std::vector<int64_t> evidence) {
        std::string key = detector + "|" + target;
        if (alarm_keys.count(key)) return;
        alarm_keys.insert(key);
        evidence.erase(std::remove_if(evidence.begin(), evidence.end(),
                                      [](int64_t s) { return s < 0; }),
                       evidence.end());
        if (evidence.empty()) evidence.push_back(0);  // RunStarted as witness
        emit(EventKind::AlarmRaised,
             json{{"detector", detector}, {"target", target}, {"evidence", evidence}});
        Alarm a;
        a.detector = detector;
        a.step = t;
        a.evidence = std::move(evidence);
        a.target = target;
        report.alarms.push_back(std::move(a));
    }

    void send(const std::string& from, const std::string& to,
              const std::string& kind, const std::string& task_id,
              std::vector<IntentHop> chain) {
        AgentMessage m;
        m.msg_id = "msg-" + pad6(msg_counter++);
        m.from = from;
        m.to = to;
        m.fields = json{{"task", task_id},
                        {"kind", kind},
                        {"evidence", json::array()},
                        {"constraints", json::array()}};
        m.intent_chain = std::move(chain);
        m.sent_step = t;
        m.sent_seq = emit(EventKind::MessageSent,
                          json{{"msg_id", m.msg_id},
                               {"from", from},
                               {"to", to},
                               {"task", task_id},
                               {"kind", kind},
                               {"intent_hops", m.intent_chain.size()}},
                          nodes.count(from) ? from : "");
        if (!task_id.empty()) last_task_seq[task_id] = m.sent_seq;
        in_flight.push_back(std::move(m));
    }

    int64_t ack(const AgentMessage& m, bool acked, const std::string& reason) {
        return emit(EventKind::MessageAcked,
                    json{{"msg_id", m.msg_id},
                         {"by", m.to},
                         {"ack", acked ? "Acked" : "Nacked"},
                         {"reason", reason}},
                    nodes.count(m.to) ? m.to : "");
    }

    // ---- task helpers ----

    bool deps_met(const Task& task) const {
        for (const auto& d : task.deps) {
            auto it = tasks.find(d);
            if (it != tasks.end() && it->second.status != TaskStatus::Done)
                return false;
        }
        return true;
    }

    bool dep_blocked(const Task& task) const {
        return task.status == TaskStatus::Pending && !deps_met(task);
    }

    bool terminal(const Task& task) const {
        return task.status == TaskStatus::Done ||
               task.status == TaskStatus::Failed ||
               task.status == TaskStatus::Revoked || task.fallback;
    }

    Task* first_pending() {
        for (auto& [id, task] : tasks) {
            if (task.status != TaskStatus::Pending || task.fallback) continue;
            if (deps_met(task)) return &task;
        }
        return nullptr;
    }

    void unassign(Task& task) {
        task.status = TaskStatus::Pending;
        task.assigned_to.clear();
    }

    // ---- phases ----

    void deliver_phase() {
        std::vector<AgentMessage> arriving;
        arriving.swap(in_flight);
        for (auto& m : arriving) {
            std::string kind = m.fields["kind"].get<std::string>();
            if (kind == "result") {
                ack(m, true, "result");
                continue;
            }
            deliver_task_message(m);
        }
    }

    void deliver_task_message(AgentMessage& m) {
        std::string task_id = m.fields["task"].get<std::string>();
        Task& task = tasks.at(task_id);
        NodeState& receiver = nodes.at(m.to);

        if (task.status != TaskStatus::Assigned || task.assigned_to != m.to) {
            ack(m, false, "stale");
            return;
        }
        if (receiver.quarantined) {
            ack(m, false, "quarantined");
            unassign(task);
            return;
        }
        if (cfg.mitigate && !m.intent_chain.empty()) {
            auto v = verify_intent_chain(m.intent_chain, task.root_goal_digest,
                                         cfg.intent_key);
            if (!v.ok) {
                ack(m, false, "intent-distorted");
                unassign(task);
                return;
            }
        }
        if (receiver.node.role == NodeRole::Worker ||
            receiver.node.role == NodeRole::Solver) {
            auto cap = check_capability(task, receiver.node);
            if (!cap.match) {
                int64_t seq = ack(m, false, "capability-mismatch");
                receiver.rejections.emplace_back(t, seq);
                unassign(task);
                task.reroutes++;
                return;
            }
            if (cfg.mitigate && admit(receiver.node) == AdmitVerdict::Backpressure) {
                int64_t seq = ack(m, false, "backpressure");
                (void)seq;
                unassign(task);
                task.reroutes++;
                return;
            }
        }
        ack(m, true, "accepted");
        receiver.node.queue.push_back(task_id);
        task.assigned_at = t;
        task_chain[task_id] = m.intent_chain;
    }

    void heartbeat_phase() {
        const FailureInjection* silent =
            injection(FailureMode::SilentWorkerFailure);
        for (auto& [id, ns] : nodes) {
            NodeRole r = ns.node.role;
            if (r != NodeRole::Worker && r != NodeRole::Solver &&
                r != NodeRole::SwarmAgent)
                continue;
            if (ns.quarantined) continue;
            if (active(silent) && targets_node(*silent, id)) continue;
            if (cfg.detect.heartbeat_interval < 1 ||
                t % cfg.detect.heartbeat_interval != 0)
                continue;
            ns.last_heartbeat = t;
            ns.last_heartbeat_seq =
                emit(EventKind::HeartbeatSent, json{{"node", id}}, id);
        }
    }

    void inject_phase() {
        const FailureInjection* dl = injection(FailureMode::DelegationDeadlock);
        if (!active(dl) || deadlock_deps_applied) return;
        deadlock_deps_applied = true;
        for (const auto& e : dl->params.value("deps", json::array())) {
            std::string from = e.value("task", std::string{});
            std::string on = e.value("on", std::string{});
            if (!tasks.count(from) || !tasks.count(on)) continue;
            if (cfg.mitigate) {
                auto candidate = dep_graph;
                candidate[from].push_back(on);
                if (!detect_cycle(candidate).acyclic) {
                    report.deps_rejected++;
                    emit(EventKind::Escalation,
                         json{{"reason", "dep-cycle-rejected"},
                              {"edge", json{{"task", from}, {"on", on}}}});
                    continue;
                }
            }
            dep_graph[from].push_back(on);
            tasks.at(from).deps.push_back(on);
        }
    }

    // A blocked task is in cyclic wait when the closure of its unmet deps
    // contains no task that can still progress (runnable or already running).
    bool cyclic_wait(const Task& task) const {
        std::vector<std::string> stack(task.deps.begin(), task.deps.end());
        std::set<std::string> seen;
        while (!stack.empty()) {
            std::string cur = stack.back();
            stack.pop_back();
            if (!seen.insert(cur).second) continue;
            auto it = tasks.find(cur);
            if (it == tasks.end()) continue;
            const Task& dep = it->second;
            if (dep.status == TaskStatus::Done) continue;
            if (dep.status != TaskStatus::Pending) return false;
            if (deps_met(dep)) return false;
            stack.insert(stack.end(), dep.deps.begin(), dep.deps.end());
        }
        return true;
    }

    void count_handoffs() {
        for (auto& [id, task] : tasks) {
            if (task.status != TaskStatus::Pending || task.fallback) continue;
            if (deps_met(task)) continue;
            if (!cyclic_wait(task)) continue;
            task.handoffs++;
            if (task.handoffs >= cfg.detect.h_max && !timeout_flagged.count(id)) {
                timeout_flagged.insert(id);
                raise(kPlanningTimeout, id,
                      {last_task_seq.count(id) ? last_task_seq[id] : 0});
            }
        }
    }

    // ---- control: orchestrator-worker ----

    std::string choose_worker(const Task& task) {
        const FailureInjection* mismatch =
            injection(FailureMode::CapabilityMismatch);
        if (active(mismatch) && !cfg.mitigate && !mismatch->targets.empty())
            return mismatch->targets.front();

        std::string best;
        int64_t best_depth = 0;
        for (const auto& [id, ns] : nodes) {
            if (ns.node.role != NodeRole::Worker || ns.quarantined) continue;
            if (!check_capability(task, ns.node).match) continue;
            int64_t depth = static_cast<int64_t>(ns.node.queue.size());
            if (best.empty() || depth < best_depth) {
                best = id;
                best_depth = depth;
            }
        }
        return best;
    }

    void control_orchestrator() {
        count_handoffs();
        Task* task = first_pending();
        if (!task) return;
        std::string target = choose_worker(*task);
        if (target.empty()) return;
        task->status = TaskStatus::Assigned;
        task->assigned_to = target;
        auto chain = extend_intent_chain({}, topo.root, task->root_goal_digest,
                                         cfg.intent_key);
        send(topo.root, target, "assign", task->id, std::move(chain));
    }

    // ---- control: router-solver ----

    std::string least_loaded_solver(const Task& task) {
        std::string best;
        int64_t best_depth = 0;
        for (const auto& [id, ns] : nodes) {
            if (ns.node.role != NodeRole::Solver || ns.quarantined) continue;
            if (!check_capability(task, ns.node).match) continue;
            int64_t depth = static_cast<int64_t>(ns.node.queue.size());
            if (cfg.mitigate && depth >= ns.node.quota) continue;
            if (best.empty() || depth < best_depth) {
                best = id;
                best_depth = depth;
            }
        }
        return best;
    }

    void control_router() {
        count_handoffs();
        Task* task = first_pending();
        if (!task) return;

        if (task->reroutes >= cfg.detect.r_max) {
            raise(kRerouteCycle, task->id,
                  {last_task_seq.count(task->id) ? last_task_seq[task->id] : 0});
            task->status = TaskStatus::Failed;
            return;
        }

        const NodeState& router = nodes.at(topo.root);
        const FailureInjection* overload =
            injection(FailureMode::SolverOverloadCascade);
        const FailureInjection* misroute = injection(FailureMode::Misrouting);

        std::string target;
        if (active(overload) && !overload->targets.empty() && !cfg.mitigate) {
            target = overload->targets.front();
        } else if (cfg.mitigate && active(overload)) {
            target = least_loaded_solver(*task);
        } else {
            std::vector<std::string> votes;
            for (const auto& c : router.node.classifiers) {
                std::string vote = c.fallback_class;
                for (const auto& tag : task->required) {
                    auto it = c.by_capability.find(tag);
                    if (it != c.by_capability.end()) {
                        vote = it->second;
                        break;
                    }
                }
                votes.push_back(vote);
            }
            if (active(misroute)) {
                int64_t n = misroute->params.value("perturbed", int64_t{2});
                std::string wrong = misroute->params.value("wrong_class",
                                                           std::string{});
                for (int64_t i = 0; i < n && i < static_cast<int64_t>(votes.size());
                     ++i)
                    votes[static_cast<size_t>(i)] = wrong;
            }
            if (!cfg.mitigate) {
                target = votes.front();  // single classifier, no threshold
            } else {
                auto rr = route_from_votes(votes, cfg.detect.theta);
                if (rr.fallback) {
                    task->fallback = true;
                    report.fallback_count++;
                    emit(EventKind::Escalation,
                         json{{"reason", "hitl-fallback"},
                              {"task", task->id},
                              {"confidence", rr.confidence}});
                    return;
                }
                target = rr.solver;
            }
        }
        if (target.empty() || !nodes.count(target)) return;
        task->status = TaskStatus::Assigned;
        task->assigned_to = target;
        auto chain = extend_intent_chain({}, topo.root, task->root_goal_digest,
                                         cfg.intent_key);
        send(topo.root, target, "assign", task->id, std::move(chain));
    }

    // ---- control: hierarchical ----

    void compute_subtrees() {
        std::map<std::string, std::vector<std::string>> children;
        for (const auto& [from, to] : topo.edges) children[from].push_back(to);
        for (const auto& n : topo.nodes) {
            std::set<std::string> caps;
            std::vector<std::string> stack{n.id};
            std::set<std::string> seen;
            while (!stack.empty()) {
                std::string cur = stack.back();
                stack.pop_back();
                if (!seen.insert(cur).second) continue;
                const AgentNode* cn = topo.find(cur);
                if (cn)
                    caps.insert(cn->capabilities.begin(), cn->capabilities.end());
                for (const auto& c : children[cur]) stack.push_back(c);
            }
            subtree[n.id].assign(caps.begin(), caps.end());
        }
    }

    bool subtree_covers(const std::string& node_id, const Task& task) const {
        std::set<std::string> have(subtree.at(node_id).begin(),
                                   subtree.at(node_id).end());
        for (const auto& tag : task.required)
            if (!have.count(tag)) return false;
        return true;
    }

    std::vector<std::string> children_of(const std::string& id) const {
        std::vector<std::string> out;
        for (const auto& [from, to] : topo.edges)
            if (from == id) out.push_back(to);
        std::sort(out.begin(), out.end());
        return out;
    }

    void forward_down(NodeState& holder) {
        if (holder.node.queue.empty()) return;
        std::string task_id = holder.node.queue.front();
        Task& task = tasks.at(task_id);
        if (terminal(task)) {
            holder.node.queue.erase(holder.node.queue.begin());
            return;
        }
        std::string target;
        for (const auto& c : children_of(holder.node.id)) {
            const NodeState& child = nodes.at(c);
            if (child.quarantined) continue;
            if (child.node.role == NodeRole::Worker) {
                if (check_capability(task, child.node).match) {
                    target = c;
                    break;
                }
            } else if (subtree_covers(c, task)) {
                target = c;
                break;
            }
        }
        if (target.empty()) return;
        holder.node.queue.erase(holder.node.queue.begin());

        std::string goal = task.root_goal_digest;
        const FailureInjection* distort =
            injection(FailureMode::CommandDistortion);
        if (active(distort) && targets_node(*distort, holder.node.id))
            goal = distort->params.value("distorted_digest",
                                         task.root_goal_digest + "-distorted");

        auto chain = task_chain.count(task_id) ? task_chain[task_id]
                                               : std::vector<IntentHop>{};
        chain = extend_intent_chain(std::move(chain), holder.node.id, goal,
                                    cfg.intent_key);
        task.status = TaskStatus::Assigned;
        task.assigned_to = target;
        send(holder.node.id, target, "assign", task_id, std::move(chain));
    }

    void control_hierarchical() {
        count_handoffs();
        // root picks one pending task and starts it down the tree
        Task* task = first_pending();
        if (task) {
            std::string target;
            for (const auto& c : children_of(topo.root)) {
                if (nodes.at(c).quarantined) continue;
                if (subtree_covers(c, *task)) {
                    target = c;
                    break;
                }
            }
            if (!target.empty()) {
                auto chain = extend_intent_chain({}, topo.root,
                                                 task->root_goal_digest,
                                                 cfg.intent_key);
                task->status = TaskStatus::Assigned;
                task->assigned_to = target;
                send(topo.root, target, "assign", task->id, std::move(chain));
            }
        }
        // managers forward one held task each
        for (auto& [id, ns] : nodes) {
            if (ns.node.role != NodeRole::Manager || id == topo.root) continue;
            forward_down(ns);
        }
    }

    // ---- control: swarm market ----

    void control_swarm() {
        count_handoffs();
        const FailureInjection* herd = injection(FailureMode::Herding);
        const FailureInjection* manip =
            injection(FailureMode::StrategicManipulation);

        // scripted reputation inflation: self-dealt increments, no completions
        if (active(manip) && manip->params.value("inflate", false)) {
            for (const auto& id : manip->targets) {
                if (!nodes.count(id)) continue;
                nodes.at(id).reputation++;
                nodes.at(id).rep_increments.push_back(t);
            }
        }

        Task* task = first_pending();
        if (!task) return;

        std::vector<Bid> bids;
        std::map<std::string, double> stakes;
        std::map<std::string, std::string> choice_of;
        for (auto& [id, ns] : nodes) {
            if (ns.node.role != NodeRole::SwarmAgent || ns.quarantined) continue;
            if (ns.stake <= 0) continue;
            stakes[id] = ns.stake;

            const auto& script = ns.node.script;
            size_t idx = static_cast<size_t>(auction_count);
            Bid b;
            b.agent = id;
            b.score = script.bids.empty()
                          ? 0.5
                          : script.bids[idx % script.bids.size()];
            b.fingerprint = "fp-" + id;
            std::string choice =
                script.choices.empty()
                    ? "opt-" + id
                    : script.choices[idx % script.choices.size()];

            if (active(herd) &&
                (herd->targets.empty() || targets_node(*herd, id))) {
                b.score = herd->params.value("bid", 1.0);
                choice = herd->params.value("herd_choice",
                                            std::string("opt-herd"));
                if (cfg.mitigate) {
                    // exploration floor: revert to the agent's own option
                    std::uniform_real_distribution<double> u(0.0, 1.0);
                    if (u(rng) < cfg.detect.epsilon) choice = "opt-" + id;
                }
            }
            if (active(manip) && targets_node(*manip, id)) {
                b.score = manip->params.value("bid", 0.95);
                b.fingerprint =
                    manip->params.value("fingerprint", std::string("fp-sybil"));
                b.retract = manip->params.value("retract", false);
            }
            choice_of[id] = choice;
            bids.push_back(std::move(b));
        }
        if (bids.empty()) return;

        MarketParams mp;
        mp.s0 = cfg.detect.s0;
        mp.slash_fraction = cfg.detect.slash_fraction;
        mp.fingerprint_k = cfg.detect.fingerprint_k;
        mp.collusion_threshold = cfg.detect.collusion_threshold;
        if (cfg.mitigate) {
            // anti-correlation penalty against crowding on one option
            std::map<std::string, int64_t> counts;
            for (const auto& [id, c] : choice_of) counts[c]++;
            for (const auto& [id, c] : choice_of) {
                double frac = static_cast<double>(counts[c]) /
                              static_cast<double>(choice_of.size());
                if (counts[c] > 1)
                    mp.penalties[id] = cfg.detect.lambda * frac;
            }
        }

        MarketOutcome out = market_round(*task, bids, stakes, mp);
        auction_count++;

        json market_ev = out.to_json();
        market_ev["task"] = task->id;
        market_ev["auction"] = auction_count;

        if (!out.winner.empty()) {
            task->status = TaskStatus::Assigned;
            task->assigned_to = out.winner;
            send("market", out.winner, "award", task->id,
                 extend_intent_chain({}, "market", task->root_goal_digest,
                                     cfg.intent_key));
            wins.emplace_back(out.winner, choice_of[out.winner]);
            while (static_cast<int64_t>(wins.size()) > cfg.detect.metric_window)
                wins.pop_front();
        }
        for (const auto& agent : out.retractions)
            raise(kBidRetraction, agent, {head_seq()});
        if (!out.sybil_group.empty()) {
            std::string fp;
            for (const auto& b : bids)
                if (b.agent == out.sybil_group.front()) fp = b.fingerprint;
            raise(kSybilCollusion, fp, {head_seq()});
        }
        if (cfg.mitigate) {
            for (const auto& [agent, amount] : out.slashes) {
                NodeState& ns = nodes.at(agent);
                ns.stake = std::max(0.0, ns.stake - amount);
                record_market("slashes", json{{"agent", agent},
                                              {"amount", amount},
                                              {"step", t}});
            }
        }
        for (const auto& agent : out.retractions)
            record_market("retractions", json{{"agent", agent}, {"step", t}});
        for (const auto& [agent, p] : out.penalties)
            record_market("penalties", json{{"agent", agent},
                                            {"amount", p},
                                            {"step", t}});
        if (!out.winner.empty())
            record_market("awards", json{{"agent", out.winner},
                                         {"task", task->id},
                                         {"step", t}});
    }

    void record_market(const std::string& key, json entry) {
        if (!report.market.contains(key)) report.market[key] = json::array();
        report.market[key].push_back(std::move(entry));
    }

    // ---- work ----

    void work_phase() {
        const FailureInjection* silent =
            injection(FailureMode::SilentWorkerFailure);
        const FailureInjection* overload =
            injection(FailureMode::SolverOverloadCascade);
        for (auto& [id, ns] : nodes) {
            NodeRole r = ns.node.role;
            if (r != NodeRole::Worker && r != NodeRole::Solver &&
                r != NodeRole::SwarmAgent)
                continue;
            if (ns.quarantined) continue;
            if (active(silent) && targets_node(*silent, id)) continue;
            // overloaded solvers keep heartbeating but stop making progress
            if (active(overload) && targets_node(*overload, id)) continue;
            bool popped_stale = false;
            while (!ns.node.queue.empty() &&
                   terminal(tasks.at(ns.node.queue.front()))) {
                ns.node.queue.erase(ns.node.queue.begin());
                popped_stale = true;
            }
            if (popped_stale) ns.busy_remaining = 0;
            if (ns.node.queue.empty()) continue;

            std::string task_id = ns.node.queue.front();
            Task& task = tasks.at(task_id);
            if (ns.busy_remaining == 0)
                ns.busy_remaining = std::max<int64_t>(1, ns.node.script.work_steps);
            if (--ns.busy_remaining > 0) continue;

            task.status = TaskStatus::Done;
            task.completed_at = t;
            ns.node.queue.erase(ns.node.queue.begin());
            ns.reputation++;
            ns.rep_increments.push_back(t);
            ns.rep_completions.push_back(t);
            std::string supervisor = supervisor_of(id);
            if (!supervisor.empty())
                send(id, supervisor, "result", task_id, {});
        }
    }

    std::string supervisor_of(const std::string& id) const {
        for (const auto& [from, to] : topo.edges)
            if (to == id) return from;
        if (topo.kind == TopologyKind::OrchestratorWorker ||
            topo.kind == TopologyKind::RouterSolver)
            return topo.root;
        return "";
    }

    // ---- detectors ----

    void detect_heartbeats() {
        for (auto& [id, ns] : nodes) {
            NodeRole r = ns.node.role;
            if (r != NodeRole::Worker && r != NodeRole::Solver &&
                r != NodeRole::SwarmAgent)
                continue;
            if (ns.quarantined) continue;
            int64_t gap = t - ns.last_heartbeat;
            if (gap < cfg.detect.heartbeat_interval * cfg.detect.miss_threshold)
                continue;
            raise(kHeartbeatMissing, id, {ns.last_heartbeat_seq});
            if (cfg.mitigate) revoke_tasks_of(id);
        }
    }

    void revoke_tasks_of(const std::string& node_id) {
        NodeState& ns = nodes.at(node_id);
        ns.quarantined = true;
        ns.busy_remaining = 0;
        std::vector<std::string> revoked;
        for (auto& [tid, task] : tasks) {
            if (task.assigned_to == node_id && task.status == TaskStatus::Assigned) {
                unassign(task);
                report.revocation_events++;
                revoked.push_back(tid);
            }
        }
        ns.node.queue.clear();
        emit(EventKind::Escalation,
             json{{"reason", "heartbeat-revocation"},
                  {"node", node_id},
                  {"tasks", revoked}});
    }

    void detect_rejections() {
        for (auto& [id, ns] : nodes) {
            while (!ns.rejections.empty() &&
                   ns.rejections.front().first <= t - cfg.detect.rejection_window)
                ns.rejections.pop_front();
            if (static_cast<int64_t>(ns.rejections.size()) <
                cfg.detect.rejection_threshold)
                continue;
            std::vector<int64_t> ev;
            for (const auto& [step, seq] : ns.rejections) ev.push_back(seq);
            raise(kRejectionSpike, id, ev);
        }
    }

    void detect_queue_depth() {
        for (auto& [id, ns] : nodes) {
            if (ns.node.role != NodeRole::Solver) continue;
            int64_t depth = static_cast<int64_t>(ns.node.queue.size());
            double limit = cfg.detect.alert_fraction *
                           static_cast<double>(ns.node.quota);
            if (static_cast<double>(depth) < limit) continue;
            raise(kQueueDepth, id,
                  {last_task_seq.count(ns.node.queue.back())
                       ? last_task_seq[ns.node.queue.back()]
                       : 0});
        }
    }

    void detect_alignment() {
        if (cfg.detect.align_interval < 1 || t % cfg.detect.align_interval != 0)
            return;
        for (const auto& m : in_flight) {
            if (m.intent_chain.empty()) continue;
            std::string task_id = m.fields["task"].get<std::string>();
            if (!tasks.count(task_id)) continue;
            auto v = verify_intent_chain(m.intent_chain,
                                         tasks.at(task_id).root_goal_digest,
                                         cfg.intent_key);
            if (!v.ok) raise(kRootGoalDivergence, task_id, {m.sent_seq});
        }
        for (const auto& [task_id, chain] : task_chain) {
            if (chain.empty() || !tasks.count(task_id)) continue;
            const Task& task = tasks.at(task_id);
            if (task.status != TaskStatus::Assigned &&
                task.status != TaskStatus::Done)
                continue;
            auto v = verify_intent_chain(chain, task.root_goal_digest,
                                         cfg.intent_key);
            if (!v.ok)
                raise(kRootGoalDivergence, task_id,
                      {last_task_seq.count(task_id) ? last_task_seq[task_id] : 0});
        }
    }

    void detect_herding() {
        if (topo.kind != TopologyKind::Swarm) return;
        int64_t agents = 0;
        for (const auto& [id, ns] : nodes)
            if (ns.node.role == NodeRole::SwarmAgent) agents++;
        if (agents == 0) return;
        if (static_cast<int64_t>(wins.size()) < cfg.detect.metric_window ||
            static_cast<int64_t>(wins.size()) < agents)
            return;

        std::map<std::string, double> alloc;
        for (const auto& [id, ns] : nodes)
            if (ns.node.role == NodeRole::SwarmAgent) alloc[id] = 0;
        std::map<std::string, double> selections;
        for (const auto& [agent, choice] : wins) {
            alloc[agent] += 1;
            selections[choice] += 1;
        }
        std::vector<double> alloc_v;
        for (const auto& [id, count] : alloc) alloc_v.push_back(count);
        std::vector<double> sel_v;
        for (const auto& [choice, count] : selections)
            sel_v.push_back(count / static_cast<double>(wins.size()));

        if (gini(alloc_v) > cfg.detect.g_thresh)
            raise(kGiniBreach, "allocation", {head_seq()});
        if (entropy_bits(sel_v) < cfg.detect.e_thresh)
            raise(kSolutionCollapse, "selection", {head_seq()});
    }

    void detect_reputation() {
        if (topo.kind != TopologyKind::Swarm) return;
        for (auto& [id, ns] : nodes) {
            auto trim = [&](std::deque<int64_t>& d) {
                while (!d.empty() && d.front() <= t - cfg.detect.reputation_window)
                    d.pop_front();
            };
            trim(ns.rep_increments);
            trim(ns.rep_completions);
            if (ns.rep_increments.size() > ns.rep_completions.size() &&
                static_cast<int64_t>(ns.rep_increments.size() -
                                     ns.rep_completions.size()) >= 2)
                raise(kReputationInflation, id, {head_seq()});
        }
    }

    void detect_phase() {
        detect_heartbeats();
        detect_rejections();
        detect_queue_depth();
        detect_alignment();
        detect_herding();
        detect_reputation();
    }

    void deadline_phase() {
        for (auto& [id, task] : tasks) {
            if (terminal(task)) continue;
            if (t < task.deadline) continue;
            bool unmet = !deps_met(task);
            task.status = unmet ? TaskStatus::Revoked : TaskStatus::Failed;
            if (unmet) report.revocation_events++;
            emit(EventKind::Escalation,
                 json{{"reason", "deadline"},
                      {"task", id},
                      {"outcome", to_string(task.status)}});
        }
    }

    void track_depths() {
        for (const auto& [id, ns] : nodes) {
            int64_t depth = static_cast<int64_t>(ns.node.queue.size());
            auto it = report.max_queue_depth.find(id);
            if (it == report.max_queue_depth.end())
                report.max_queue_depth[id] = depth;
            else
                it->second = std::max(it->second, depth);
        }
    }

    bool all_terminal() const {
        for (const auto& [id, task] : tasks)
            if (!terminal(task)) return false;
        return true;
    }

    // ---- top level ----

    SimReport run(std::vector<Task> workload,
                  const std::vector<FailureInjection>& injections) {
        injections_ = injections;
        for (const auto& n : topo.nodes) {
            NodeState ns;
            ns.node = n;
            ns.node.queue.clear();
            ns.stake = n.stake;
            nodes.emplace(n.id, std::move(ns));
        }
        for (auto& task : workload) {
            if (task.root_goal_digest.empty())
                task.root_goal_digest = digest::short_id("goal|" + task.id);
            dep_graph[task.id] = task.deps;
            tasks.emplace(task.id, std::move(task));
        }
        compute_subtrees();

        report.seed = cfg.seed;
        report.trace_ref = sink.run_id();

        json inj_j = json::array();
        for (const auto& f : injections_) inj_j.push_back(f.to_json());
        json started{{"topology", to_string(topo.kind)},
                     {"nodes", static_cast<int64_t>(topo.nodes.size())},
                     {"tasks", static_cast<int64_t>(tasks.size())},
                     {"seed", cfg.seed},
                     {"mitigate", cfg.mitigate},
                     {"t_max", cfg.t_max},
                     {"injections", inj_j}};
        for (const auto& [key, value] : cfg.run_started_extra.items())
            started[key] = value;
        emit(EventKind::RunStarted, started);

        report.steps_run = cfg.t_max;
        for (t = 1; t <= cfg.t_max; ++t) {
            deliver_phase();
            heartbeat_phase();
            inject_phase();
            switch (topo.kind) {
                case TopologyKind::OrchestratorWorker: control_orchestrator(); break;
                case TopologyKind::RouterSolver: control_router(); break;
                case TopologyKind::Hierarchical: control_hierarchical(); break;
                case TopologyKind::Swarm: control_swarm(); break;
            }
            work_phase();
            detect_phase();
            deadline_phase();
            track_depths();
            if (all_terminal()) {
                report.steps_run = t;
                break;
            }
        }
        if (t > cfg.t_max) t = cfg.t_max;

        for (const auto& [id, task] : tasks) {
            report.task_status[id] = task.status;
            switch (task.status) {
                case TaskStatus::Done: report.tasks_done++; break;
                case TaskStatus::Failed: report.tasks_failed++; break;
                case TaskStatus::Revoked: report.tasks_revoked++; break;
                default: break;
            }
        }
        json reputation = json::object();
        json stakes = json::object();
        for (const auto& [id, ns] : nodes) {
            if (ns.node.role != NodeRole::SwarmAgent) continue;
            reputation[id] = ns.reputation;
            stakes[id] = ns.stake;
        }
        if (topo.kind == TopologyKind::Swarm) {
            report.market["reputation"] = reputation;
            report.market["stakes"] = stakes;
            report.market["auctions"] = auction_count;
        }
        for (const auto& f : injections_) {
            DetectionRecord rec;
            rec.mode = to_string(f.mode);
            rec.onset = f.onset;
            auto match = matching_detectors(f.mode);
            for (const auto& a : report.alarms) {
                if (a.step < f.onset) continue;
                if (std::find(match.begin(), match.end(), a.detector) ==
                    match.end())
                    continue;
                rec.first_alarm_step = a.step;
                rec.latency = a.step - f.onset;
                rec.detector = a.detector;
                break;
            }
            report.detection.push_back(rec);
        }

        emit(EventKind::RunTerminated,
             json{{"status", "Completed"},
                  {"steps_used", report.steps_run},
                  {"tasks_done", report.tasks_done},
                  {"tasks_failed", report.tasks_failed},
                  {"tasks_revoked", report.tasks_revoked},
                  {"alarms", static_cast<int64_t>(report.alarms.size())}});
        return report;
    }
};

}  // namespace

void validate_injection(const Topology& topo, const FailureInjection& f) {
    auto role_of = [&](const std::string& id) -> std::optional<NodeRole> {
        const AgentNode* n = topo.find(id);
        if (!n) return std::nullopt;
        return n->role;
    };
    auto require_roles = [&](std::initializer_list<NodeRole> ok) {
        for (const auto& id : f.targets) {
            auto r = role_of(id);
            if (!r) throw Error("incompatible-injection",
                                std::string(to_string(f.mode)) +
                                    ": unknown target " + id);
            if (std::find(ok.begin(), ok.end(), *r) == ok.end())
                throw Error("incompatible-injection",
                            std::string(to_string(f.mode)) + ": target " + id +
                                " has role " + to_string(*r));
        }
    };
    switch (f.mode) {
        case FailureMode::SilentWorkerFailure:
            if (f.targets.empty())
                throw Error("incompatible-injection", "target required");
            require_roles({NodeRole::Worker, NodeRole::Solver,
                           NodeRole::SwarmAgent});
            break;
        case FailureMode::CapabilityMismatch:
            if (f.targets.empty())
                throw Error("incompatible-injection", "target required");
            require_roles({NodeRole::Worker});
            break;
        case FailureMode::Misrouting:
            require_roles({NodeRole::Router});
            break;
        case FailureMode::SolverOverloadCascade:
            if (f.targets.empty())
                throw Error("incompatible-injection", "target required");
            require_roles({NodeRole::Solver});
            break;
        case FailureMode::CommandDistortion:
            if (f.targets.empty())
                throw Error("incompatible-injection", "target required");
            require_roles({NodeRole::Manager});
            break;
        case FailureMode::DelegationDeadlock:
            break;  // operates on task deps, not nodes
        case FailureMode::Herding:
        case FailureMode::StrategicManipulation:
            require_roles({NodeRole::SwarmAgent});
            break;
    }
}

SimReport simulate(const Topology& topology, std::vector<Task> workload,
                   const std::vector<FailureInjection>& injections,
                   const SimConfig& cfg, trace::TraceSink& sink) {
    if (cfg.t_max < 1) throw Error("invalid-argument", "t_max must be >= 1");
    for (const auto& f : injections) validate_injection(topology, f);
    std::set<std::string> task_ids;
    for (const auto& task : workload) {
        if (task.id.empty()) throw Error("invalid-argument", "empty task id");
        if (!task_ids.insert(task.id).second)
            throw Error("invalid-argument", "duplicate task id: " + task.id);
    }
    std::map<std::string, std::vector<std::string>> deps;
    for (const auto& task : workload) deps[task.id] = task.deps;
    if (!detect_cycle(deps).acyclic)
        throw Error("invalid-argument", "workload dependency cycle");

    Sim sim(topology, cfg, sink);
    return sim.run(std::move(workload), injections);
}

}  // namespace agentsim::multiagent
