#include "agentsim/audit.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "agentsim/error.hpp"
#include "agentsim/trace.hpp"

namespace agentsim::audit {

json ControlRow::to_json() const {
    return json{{"area", area},
                {"obligation", obligation},
                {"status", status},
                {"detail", detail},
                {"evidence", evidence}};
}

json HardeningReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows) rows_j.push_back(r.to_json());
    return json{{"pass", pass}, {"rows", rows_j}};
}

std::string HardeningReport::to_text() const {
    std::ostringstream out;
    out << (pass ? "AUDIT PASS" : "AUDIT FAIL") << "\n";
    for (const auto& r : rows) {
        out << "  " << r.area;
        for (size_t i = r.area.size(); i < 26; ++i) out << ' ';
        out << r.obligation << (r.obligation.size() < 6 ? "   " : " ") << r.status;
        if (!r.detail.empty()) out << "  (" << r.detail << ")";
        if (!r.evidence.empty()) {
            out << "  seq:";
            for (int64_t s : r.evidence) out << ' ' << s;
        }
        out << "\n";
    }
    return out.str();
}

namespace {

std::string prov_str(const json& ev, const std::string& field) {
    const json& prov = ev.value("provenance", json::object());
    if (!prov.contains(field) || !prov.at(field).is_string()) return "";
    return prov.at(field).get<std::string>();
}

int64_t seq_of(const json& ev) { return ev.value("seq", int64_t{-1}); }

ControlRow check_identity(const std::vector<std::vector<json>>& traces) {
    ControlRow row{"Identity & Access", "MUST", "pass", "", {}};
    int64_t total = 0;
    for (const auto& trace : traces) {
        for (const auto& ev : trace) {
            total++;
            if (prov_str(ev, "principal").empty())
                row.evidence.push_back(seq_of(ev));
        }
    }
    if (row.evidence.empty()) {
        row.detail = "every event names a principal (" +
                     std::to_string(total) + " events)";
    } else {
        row.status = "fail";
        row.detail = "events without a principal id";
    }
    return row;
}

ControlRow check_policy(const std::vector<std::vector<json>>& traces,
                        const std::set<std::string>& rule_ids) {
    ControlRow row{"Policy Enforcement", "MUST", "pass", "", {}};
    int64_t gated = 0;
    for (const auto& trace : traces) {
        // decision_id -> (seq, step, effect); approvals by decision_id
        std::map<std::string, std::tuple<int64_t, int64_t, std::string>> decisions;
        std::map<std::string, int64_t> approvals;
        for (const auto& ev : trace) {
            const std::string kind = ev.value("kind", std::string{});
            const json& payload = ev.value("payload", json::object());
            if (kind == "PolicyEvaluated") {
                const json& d = payload.value("decision", json::object());
                std::string id = d.value("decision_id", std::string{});
                std::string matched = d.value("matched_rule", std::string{});
                if (!id.empty())
                    decisions[id] = {seq_of(ev), ev.value("step", int64_t{-1}),
                                     d.value("effect", std::string{})};
                if (!matched.empty() && matched != "default-deny" &&
                    matched != "access-tags" && !rule_ids.count(matched)) {
                    row.status = "fail";
                    row.detail = "decision cites unknown rule " + matched;
                    row.evidence.push_back(seq_of(ev));
                }
            } else if (kind == "ApprovalGranted") {
                std::string id = payload.value("decision_id", std::string{});
                if (!id.empty()) approvals[id] = seq_of(ev);
            } else if (kind == "ToolExecuted") {
                if (!payload.value("side_effect_committed", false)) continue;
                int64_t seq = seq_of(ev);
                int64_t step = ev.value("step", int64_t{-1});
                std::string did = prov_str(ev, "decision_id");
                bool ok = false;
                if (!did.empty()) {
                    auto it = decisions.find(did);
                    if (it != decisions.end()) {
                        auto [dseq, dstep, effect] = it->second;
                        if (dseq < seq && dstep == step) {
                            if (effect == "Allow") {
                                ok = true;
                            } else if (effect == "RequireApproval") {
                                auto ap = approvals.find(did);
                                ok = ap != approvals.end() && ap->second < seq;
                            }
                        }
                    }
                }
                if (ok) {
                    gated++;
                } else {
                    row.status = "fail";
                    row.detail = "side effect committed without a prior "
                                 "same-step allow or approval";
                    row.evidence.push_back(seq);
                }
            }
        }
    }
    if (row.status == "pass")
        row.detail = "all " + std::to_string(gated) +
                     " committed side effects were gated";
    return row;
}

ControlRow check_tooling(const std::vector<std::vector<json>>& traces,
                         const std::set<std::string>& registry_ids) {
    ControlRow row{"Tooling & Integrations", "MUST", "pass", "", {}};
    int64_t checked = 0;
    for (const auto& trace : traces) {
        for (const auto& ev : trace) {
            if (ev.value("kind", std::string{}) != "ToolExecuted") continue;
            checked++;
            std::string name = prov_str(ev, "tool_name");
            std::string version = prov_str(ev, "tool_version");
            if (name.empty() || version.empty() ||
                !registry_ids.count(name + "@" + version))
                row.evidence.push_back(seq_of(ev));
        }
    }
    if (row.evidence.empty()) {
        row.detail = "every execution names a registered tool@version (" +
                     std::to_string(checked) + " executions)";
    } else {
        row.status = "fail";
        row.detail = "executions of unregistered or unnamed tools";
    }
    return row;
}

ControlRow check_memory(const std::vector<std::vector<json>>& traces) {
    ControlRow row{"Memory Management", "SHOULD", "pass", "", {}};
    int64_t checked = 0;
    for (const auto& trace : traces) {
        for (const auto& ev : trace) {
            if (ev.value("kind", std::string{}) != "MemoryOp") continue;
            checked++;
            const json& payload = ev.value("payload", json::object());
            bool tier_ok = payload.contains("tier") &&
                           payload.at("tier").is_string() &&
                           !payload.at("tier").get<std::string>().empty();
            bool ret_ok = payload.contains("retention_class") &&
                          payload.at("retention_class").is_string() &&
                          !payload.at("retention_class").get<std::string>().empty();
            if (!tier_ok || !ret_ok) row.evidence.push_back(seq_of(ev));
        }
    }
    if (row.evidence.empty()) {
        row.detail = "every memory op names tier and retention class (" +
                     std::to_string(checked) + " ops)";
    } else {
        row.status = "fail";
        row.detail = "memory ops missing tier or retention class";
    }
    return row;
}

ControlRow check_observability(const std::vector<std::vector<json>>& traces) {
    ControlRow row{"Observability & Tracing", "MUST", "pass", "", {}};
    int64_t events = 0;
    for (const auto& trace : traces) {
        events += static_cast<int64_t>(trace.size());
        auto rep = trace::verify_completeness(trace);
        if (rep.pass) continue;
        row.status = "fail";
        for (const auto& m : rep.missing) row.evidence.push_back(m.seq);
    }
    if (row.status == "pass") {
        row.detail = "provenance completeness holds (" +
                     std::to_string(events) + " events)";
    } else {
        std::sort(row.evidence.begin(), row.evidence.end());
        row.evidence.erase(
            std::unique(row.evidence.begin(), row.evidence.end()),
            row.evidence.end());
        row.detail = "events missing mandatory provenance fields";
    }
    return row;
}

ControlRow check_budget(const std::vector<std::vector<json>>& traces) {
    ControlRow row{"Budgeted Autonomy", "MUST", "pass", "", {}};
    for (const auto& trace : traces) {
        int64_t exhausted_seq = -1;
        bool escalated_after = false;
        for (const auto& ev : trace) {
            const std::string kind = ev.value("kind", std::string{});
            const json& payload = ev.value("payload", json::object());
            if (kind == "BudgetCharged" && payload.contains("charged") &&
                !payload.at("charged").get<bool>() && exhausted_seq < 0)
                exhausted_seq = seq_of(ev);
            if (kind == "Escalation" && exhausted_seq >= 0)
                escalated_after = true;
        }
        const json& last = trace.back();
        bool terminated = last.value("kind", std::string{}) == "RunTerminated";
        std::string status =
            last.value("payload", json::object()).value("status", std::string{});
        if (exhausted_seq >= 0) {
            if (!escalated_after || !terminated || status != "BudgetExhausted") {
                row.status = "fail";
                row.detail = "exhausted charge without escalation and "
                             "BudgetExhausted termination";
                row.evidence.push_back(exhausted_seq);
            }
        } else if (!terminated) {
            row.status = "fail";
            row.detail = "run neither terminated nor budget-exhausted";
            row.evidence.push_back(seq_of(last));
        }
    }
    if (row.status == "pass")
        row.detail = "all runs terminate normally or escalate on exhaustion";
    return row;
}

}  // namespace

HardeningReport run_audit(
    const std::vector<std::vector<json>>& traces,
    const std::vector<std::pair<std::string, std::string>>& registry_digests,
    const std::vector<std::pair<std::string, std::string>>& rule_digests) {
    if (traces.empty()) throw Error("invalid-corpus", "empty corpus");
    for (size_t i = 0; i < traces.size(); ++i) {
        if (traces[i].empty())
            throw Error("invalid-corpus", "trace " + std::to_string(i) +
                                              " is empty");
        auto verdict = trace::verify_chain(traces[i]);
        if (!verdict.ok)
            throw Error("invalid-corpus",
                        "trace " + std::to_string(i) + " broken at seq " +
                            std::to_string(verdict.broken_at));
    }

    std::set<std::string> registry_ids;
    for (const auto& [id, d] : registry_digests) registry_ids.insert(id);
    std::set<std::string> rule_ids;
    for (const auto& [id, d] : rule_digests) rule_ids.insert(id);

    HardeningReport report;
    report.rows.push_back(check_identity(traces));
    report.rows.push_back(check_policy(traces, rule_ids));
    report.rows.push_back(check_tooling(traces, registry_ids));
    report.rows.push_back(check_memory(traces));
    report.rows.push_back(check_observability(traces));
    report.rows.push_back(check_budget(traces));

    report.rows.push_back(
        {"Data Governance", "MUST", "not-checkable",
         "needs encryption configuration and lineage records, which live "
         "outside the trace corpus",
         {}});
    report.rows.push_back(
        {"CI/CD & Evaluation", "SHOULD", "not-checkable",
         "needs evaluation pipeline history and benchmark runs, not "
         "derivable from traces",
         {}});
    report.rows.push_back(
        {"Security Testing", "SHOULD", "not-checkable",
         "needs red-team and injection test reports produced outside the "
         "runtime",
         {}});
    report.rows.push_back(
        {"Change Management", "SHOULD", "not-checkable",
         "needs signed change logs for prompts and policies, outside this "
         "corpus",
         {}});

    report.pass = true;
    for (const auto& row : report.rows)
        if (row.obligation == "MUST" && row.status == "fail")
            report.pass = false;
    return report;
}

}  // namespace agentsim::audit
