#include "agentsim/trace.hpp"

#include <fstream>
#include <string_view>

#include "agentsim/digest.hpp"

namespace agentsim::trace {

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::RunStarted: return "RunStarted";
        case EventKind::PlanProposed: return "PlanProposed";
        case EventKind::PolicyEvaluated: return "PolicyEvaluated";
        case EventKind::ApprovalGranted: return "ApprovalGranted";
        case EventKind::ToolExecuted: return "ToolExecuted";
        case EventKind::MemoryOp: return "MemoryOp";
        case EventKind::BudgetCharged: return "BudgetCharged";
        case EventKind::HeartbeatSent: return "HeartbeatSent";
        case EventKind::MessageSent: return "MessageSent";
        case EventKind::MessageAcked: return "MessageAcked";
        case EventKind::AlarmRaised: return "AlarmRaised";
        case EventKind::Escalation: return "Escalation";
        case EventKind::RunTerminated: return "RunTerminated";
    }
    return "?";
}

EventKind event_kind_from_string(const std::string& s) {
    static const std::pair<const char*, EventKind> table[] = {
        {"RunStarted", EventKind::RunStarted},
        {"PlanProposed", EventKind::PlanProposed},
        {"PolicyEvaluated", EventKind::PolicyEvaluated},
        {"ApprovalGranted", EventKind::ApprovalGranted},
        {"ToolExecuted", EventKind::ToolExecuted},
        {"MemoryOp", EventKind::MemoryOp},
        {"BudgetCharged", EventKind::BudgetCharged},
        {"HeartbeatSent", EventKind::HeartbeatSent},
        {"MessageSent", EventKind::MessageSent},
        {"MessageAcked", EventKind::MessageAcked},
        {"AlarmRaised", EventKind::AlarmRaised},
        {"Escalation", EventKind::Escalation},
        {"RunTerminated", EventKind::RunTerminated},
    };
    for (const auto& [name, kind] : table)
        if (s == name) return kind;
    throw Error("invalid-kind", s);
}

json Provenance::to_json() const {
    json j{
        {"planner_id", planner_id},
        {"planner_version", planner_version},
        {"principal", principal},
        {"budget", budget},
    };
    if (!tool_name.empty()) j["tool_name"] = tool_name;
    if (!tool_version.empty()) j["tool_version"] = tool_version;
    if (!decision_id.empty()) j["decision_id"] = decision_id;
    if (!memory_op_ids.empty()) j["memory_op_ids"] = memory_op_ids;
    return j;
}

json TraceEvent::to_json() const {
    return json{
        {"seq", seq},
        {"run_id", run_id},
        {"step", step},
        {"kind", to_string(kind)},
        {"payload", payload},
        {"provenance", provenance},
        {"prev_hash", prev_hash},
        {"hash", hash},
    };
}

std::string hash_body(const json& event) {
    json body = json::object();
    for (const char* key :
         {"seq", "run_id", "step", "kind", "payload", "provenance", "prev_hash"})
        body[key] = event.at(key);
    return digest::canonical(body);
}

std::string compute_hash(const json& event) {
    return digest::sha256_hex(hash_body(event));
}

int64_t TraceSink::emit(int64_t step, EventKind kind, json payload,
                        const Provenance& prov) {
    if (terminated_) throw Error("run-terminated", run_id_);
    TraceEvent ev;
    ev.seq = static_cast<int64_t>(events_.size());
    ev.run_id = run_id_;
    ev.step = step;
    ev.kind = kind;
    ev.payload = std::move(payload);
    ev.provenance = prov.to_json();
    ev.prev_hash = events_.empty() ? digest::genesis() : events_.back().hash;
    ev.hash = compute_hash(ev.to_json());
    events_.push_back(std::move(ev));
    if (kind == EventKind::RunTerminated) terminated_ = true;
    return events_.back().seq;
}

std::string TraceSink::head_hash() const {
    return events_.empty() ? digest::genesis() : events_.back().hash;
}

json ChainVerdict::to_json() const {
    json j{{"ok", ok}};
    if (!ok) j["broken_at"] = broken_at;
    return j;
}

namespace {

bool well_formed(const json& ev, int64_t expected_seq) {
    if (!ev.is_object()) return false;
    for (const char* key :
         {"seq", "run_id", "step", "kind", "payload", "provenance", "prev_hash", "hash"})
        if (!ev.contains(key)) return false;
    if (!ev["seq"].is_number_integer() || !ev["step"].is_number_integer())
        return false;
    if (!ev["run_id"].is_string() || !ev["kind"].is_string() ||
        !ev["prev_hash"].is_string() || !ev["hash"].is_string())
        return false;
    if (!ev["payload"].is_object() || !ev["provenance"].is_object()) return false;
    return ev["seq"].get<int64_t>() == expected_seq;
}

}  // namespace

ChainVerdict verify_chain(const std::vector<json>& events) {
    std::string prev = digest::genesis();
    for (size_t i = 0; i < events.size(); ++i) {
        const json& ev = events[i];
        int64_t at = static_cast<int64_t>(i);
        if (!well_formed(ev, at)) return {false, at};
        if (ev["prev_hash"].get<std::string>() != prev) return {false, at};
        if (compute_hash(ev) != ev["hash"].get<std::string>()) return {false, at};
        prev = ev["hash"].get<std::string>();
    }
    return {true, -1};
}

ChainVerdict verify_chain_lines(const std::vector<std::string>& lines,
                                std::vector<json>* out) {
    std::vector<json> events;
    events.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i) {
        json ev = json::parse(lines[i], nullptr, false);
        if (ev.is_discarded()) return {false, static_cast<int64_t>(i)};
        events.push_back(std::move(ev));
    }
    ChainVerdict v = verify_chain(events);
    if (out) *out = std::move(events);
    return v;
}

ChainVerdict verify_chain_file(const std::string& path, std::vector<json>* out) {
    return verify_chain_lines(read_lines(path), out);
}

json MissingField::to_json() const {
    return json{{"seq", seq}, {"field", field}};
}

json CompletenessReport::to_json() const {
    json m = json::array();
    for (const auto& f : missing) m.push_back(f.to_json());
    return json{{"pass", pass}, {"missing", m}};
}

CompletenessReport verify_completeness(const std::vector<json>& events) {
    CompletenessReport report;
    // Structural check only: the slot must exist. Whether the principal
    // actually names someone is the identity audit's concern, not this one's.
    auto require = [&](const json& ev, int64_t seq, const char* field) {
        const json& prov = ev["provenance"];
        bool present = prov.contains(field) && !prov[field].is_null();
        if (present && prov[field].is_string() &&
            std::string_view(field) != "principal")
            present = !prov[field].get<std::string>().empty();
        if (present && prov[field].is_object()) present = !prov[field].empty();
        if (!present) {
            report.missing.push_back({seq, field});
            report.pass = false;
        }
    };
    for (const auto& ev : events) {
        if (!ev.is_object() || !ev.contains("provenance") ||
            !ev["provenance"].is_object() || !ev.contains("kind")) {
            report.missing.push_back({ev.value("seq", int64_t{-1}), "provenance"});
            report.pass = false;
            continue;
        }
        int64_t seq = ev.value("seq", int64_t{-1});
        require(ev, seq, "planner_id");
        require(ev, seq, "planner_version");
        require(ev, seq, "principal");
        require(ev, seq, "budget");
        std::string kind = ev["kind"].get<std::string>();
        if (kind == "ToolExecuted") {
            require(ev, seq, "tool_name");
            require(ev, seq, "tool_version");
            require(ev, seq, "decision_id");
        }
        if (kind == "PolicyEvaluated") require(ev, seq, "decision_id");
    }
    if (events.empty() ||
        events.back().value("kind", std::string{}) != "RunTerminated") {
        report.missing.push_back(
            {events.empty() ? -1 : events.back().value("seq", int64_t{-1}),
             "unterminated-run"});
        report.pass = false;
    }
    return report;
}

json ReplayVerdict::to_json() const {
    json j{{"identical", identical}};
    if (!identical) {
        j["seq"] = seq;
        j["field"] = field;
    }
    return j;
}

ReplayVerdict compare_chains(const std::vector<json>& recorded,
                             const std::vector<json>& reproduced) {
    static const char* fields[] = {"seq",     "run_id",     "step",      "kind",
                                   "payload", "provenance", "prev_hash", "hash"};
    size_t n = std::min(recorded.size(), reproduced.size());
    for (size_t i = 0; i < n; ++i) {
        for (const char* f : fields) {
            const json& a = recorded[i];
            const json& b = reproduced[i];
            if (a.value(f, json{}) != b.value(f, json{}))
                return {false, static_cast<int64_t>(i), f};
        }
    }
    if (recorded.size() != reproduced.size())
        return {false, static_cast<int64_t>(n), "truncated"};
    return {true, -1, ""};
}

std::vector<json> events_to_json(const std::vector<TraceEvent>& events) {
    std::vector<json> out;
    out.reserve(events.size());
    for (const auto& ev : events) out.push_back(ev.to_json());
    return out;
}

void save_jsonl(const std::string& path, const std::vector<TraceEvent>& events) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("io", "cannot open " + path);
    for (const auto& ev : events) f << digest::canonical(ev.to_json()) << "\n";
    if (!f) throw Error("io", "write failed: " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("io", "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace agentsim::trace
