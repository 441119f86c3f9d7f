#include "agentsim/memory.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace agentsim::memory {

const char* to_string(Tier t) {
    switch (t) {
        case Tier::Working: return "Working";
        case Tier::Episodic: return "Episodic";
        case Tier::Semantic: return "Semantic";
        case Tier::Preference: return "Preference";
    }
    return "?";
}

Tier tier_from_string(const std::string& s) {
    if (s == "Working") return Tier::Working;
    if (s == "Episodic") return Tier::Episodic;
    if (s == "Semantic") return Tier::Semantic;
    if (s == "Preference") return Tier::Preference;
    throw Error("invalid-record", "unknown tier: " + s);
}

const char* to_string(Sensitivity s) {
    return s == Sensitivity::Public ? "Public" : "Restricted";
}

Sensitivity sensitivity_from_string(const std::string& s) {
    if (s == "Public") return Sensitivity::Public;
    if (s == "Restricted") return Sensitivity::Restricted;
    throw Error("invalid-record", "unknown sensitivity: " + s);
}

json MemoryRecord::to_json() const {
    json j{
        {"id", id},
        {"tier", to_string(tier)},
        {"content", content},
        {"tags", tags},
        {"scope", scope},
        {"sensitivity", to_string(sensitivity)},
        {"created_at", created_at},
    };
    j["retention_class"] = retention_class ? json(*retention_class) : json(nullptr);
    return j;
}

MemoryRecord MemoryRecord::from_json(const json& j) {
    MemoryRecord r;
    r.id = j.value("id", std::string{});
    r.tier = tier_from_string(j.value("tier", std::string("Working")));
    if (j.contains("content"))
        r.content = j["content"].get<std::map<std::string, std::string>>();
    if (j.contains("tags")) r.tags = j["tags"].get<std::vector<std::string>>();
    r.scope = j.value("scope", std::string("shared"));
    r.sensitivity =
        sensitivity_from_string(j.value("sensitivity", std::string("Public")));
    r.created_at = j.value("created_at", int64_t{0});
    if (j.contains("retention_class") && !j["retention_class"].is_null())
        r.retention_class = j["retention_class"].get<int64_t>();
    return r;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

double overlap_score(const std::vector<std::string>& terms,
                     const MemoryRecord& record) {
    if (terms.empty()) return 0.0;
    std::set<std::string> want;
    for (const auto& t : terms)
        for (const auto& w : tokenize(t)) want.insert(w);
    if (want.empty()) return 0.0;
    std::set<std::string> have;
    for (const auto& [field, text] : record.content)
        for (const auto& w : tokenize(text)) have.insert(w);
    int64_t hit = 0;
    for (const auto& w : want)
        if (have.count(w)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(want.size());
}

std::string MemoryStore::write(MemoryRecord record) {
    if (record.retention_class && *record.retention_class < 0)
        throw Error("invalid-record", "negative retention");
    if (record.content.empty()) throw Error("invalid-record", "empty content");
    if (record.id.empty()) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "m-%06lld",
                      static_cast<long long>(next_id_++));
        record.id = buf;
    }
    if (record.tier == Tier::Working) {
        int64_t working = count(Tier::Working);
        if (working >= working_cap_) {
            auto oldest = std::find_if(
                records_.begin(), records_.end(),
                [](const MemoryRecord& r) { return r.tier == Tier::Working; });
            if (oldest != records_.end()) records_.erase(oldest);
        }
    }
    records_.push_back(std::move(record));
    return records_.back().id;
}

std::vector<MemoryRecord> MemoryStore::retrieve(
    const MemoryQuery& query, const policy::Principal& principal) const {
    struct Scored {
        double score;
        const MemoryRecord* rec;
    };
    std::vector<Scored> scored;
    for (const auto& rec : records_) {
        if (query.tier && rec.tier != *query.tier) continue;
        if (rec.scope != "shared" && rec.scope != principal.id) continue;
        if (rec.sensitivity == Sensitivity::Restricted &&
            !principal.has_role("restricted-reader"))
            continue;
        double s = overlap_score(query.terms, rec);
        if (s <= 0.0) continue;
        scored.push_back({s, &rec});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const Scored& a, const Scored& b) {
                         if (a.score != b.score) return a.score > b.score;
                         if (a.rec->created_at != b.rec->created_at)
                             return a.rec->created_at > b.rec->created_at;
                         return a.rec->id < b.rec->id;
                     });
    int64_t limit = std::max<int64_t>(query.limit, 1);
    std::vector<MemoryRecord> out;
    for (const auto& s : scored) {
        if (static_cast<int64_t>(out.size()) >= limit) break;
        out.push_back(*s.rec);
    }
    return out;
}

int64_t MemoryStore::purge_expired(int64_t now) {
    int64_t before = size();
    records_.erase(std::remove_if(records_.begin(), records_.end(),
                                  [now](const MemoryRecord& r) {
                                      return r.retention_class &&
                                             r.created_at + *r.retention_class <=
                                                 now;
                                  }),
                   records_.end());
    return before - size();
}

const MemoryRecord* MemoryStore::find(const std::string& id) const {
    for (const auto& r : records_)
        if (r.id == id) return &r;
    return nullptr;
}

int64_t MemoryStore::count(Tier tier) const {
    return std::count_if(records_.begin(), records_.end(),
                         [tier](const MemoryRecord& r) { return r.tier == tier; });
}

MemoryRecord summarize_episode(const std::vector<json>& trace_events,
                               int64_t now) {
    if (trace_events.empty() ||
        trace_events.back().value("kind", std::string{}) != "RunTerminated")
        throw Error("run-not-terminated");

    const json& last = trace_events.back();
    MemoryRecord rec;
    rec.tier = Tier::Episodic;
    rec.created_at = now;
    rec.scope = last["provenance"].value("principal", std::string("shared"));

    std::string goal_id;
    if (!trace_events.empty() &&
        trace_events.front().value("kind", std::string{}) == "RunStarted")
        goal_id = trace_events.front()["payload"].value("goal_id", std::string{});

    std::string tools;
    for (const auto& ev : trace_events) {
        if (ev.value("kind", std::string{}) != "ToolExecuted") continue;
        const json& prov = ev["provenance"];
        const json& payload = ev["payload"];
        if (!tools.empty()) tools += ";";
        tools += prov.value("tool_name", std::string("?")) + "@" +
                 prov.value("tool_version", std::string("?")) + ":" +
                 (payload.value("ok", false) ? "ok" : "error");
    }

    rec.content["goal_id"] = goal_id;
    rec.content["status"] = last["payload"].value("status", std::string{});
    rec.content["steps_used"] =
        std::to_string(last["payload"].value("steps_used", int64_t{0}));
    rec.content["tools"] = tools;
    rec.content["budget_consumed"] =
        last["provenance"].contains("budget")
            ? last["provenance"]["budget"].value("consumed", json::object()).dump()
            : "{}";
    rec.tags = {"episode", last.value("run_id", std::string{})};
    return rec;
}

}  // namespace agentsim::memory
