#include "agentsim/tools.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "agentsim/digest.hpp"

namespace agentsim::tools {

namespace {

int parse_component(std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0)
        throw Error("invalid-version", std::string(s));
    return v;
}

}  // namespace

SemVer SemVer::parse(const std::string& s) {
    auto first = s.find('.');
    auto second = s.find('.', first == std::string::npos ? first : first + 1);
    if (first == std::string::npos || second == std::string::npos)
        throw Error("invalid-version", s);
    SemVer v;
    v.major = parse_component(std::string_view(s).substr(0, first));
    v.minor = parse_component(std::string_view(s).substr(first + 1, second - first - 1));
    v.patch = parse_component(std::string_view(s).substr(second + 1));
    return v;
}

std::string SemVer::str() const {
    return std::to_string(major) + "." + std::to_string(minor) + "." + std::to_string(patch);
}

VersionReq VersionReq::parse(const std::string& s) {
    VersionReq req;
    if (!s.empty() && s[0] == '^') {
        req.exact = false;
        req.compatible_major = parse_component(std::string_view(s).substr(1));
        return req;
    }
    req.exact = true;
    req.version = SemVer::parse(s);
    return req;
}

std::string VersionReq::str() const {
    return exact ? version.str() : "^" + std::to_string(compatible_major);
}

const char* to_string(FieldType t) {
    switch (t) {
        case FieldType::Int: return "int";
        case FieldType::Real: return "real";
        case FieldType::Text: return "text";
        case FieldType::Bool: return "bool";
        case FieldType::Enum: return "enum";
    }
    return "?";
}

FieldType field_type_from_string(const std::string& s) {
    if (s == "int") return FieldType::Int;
    if (s == "real") return FieldType::Real;
    if (s == "text") return FieldType::Text;
    if (s == "bool") return FieldType::Bool;
    if (s == "enum") return FieldType::Enum;
    throw Error("invalid-spec", "unknown field type: " + s);
}

json FieldSpec::to_json() const {
    json j{{"type", to_string(type)}, {"required", required}};
    if (min) j["min"] = *min;
    if (max) j["max"] = *max;
    if (!enum_values.empty()) j["enum"] = enum_values;
    return j;
}

std::string Precondition::describe() const {
    if (kind == "non-empty") return field + " non-empty";
    return field + " " + kind + " " + value.dump();
}

json Precondition::to_json() const {
    return json{{"field", field}, {"kind", kind}, {"value", value}};
}

json StubBehavior::to_json() const {
    return json{{"kind", kind}, {"latency", latency}, {"params", params}};
}

namespace {

json schema_to_json(const Schema& schema) {
    json j = json::object();
    for (const auto& [name, field] : schema) j[name] = field.to_json();
    return j;
}

}  // namespace

json ToolSpec::to_json() const {
    json pre = json::array();
    for (const auto& p : preconditions) pre.push_back(p.to_json());
    return json{
        {"name", name},
        {"version", version.str()},
        {"input_schema", schema_to_json(input_schema)},
        {"output_schema", schema_to_json(output_schema)},
        {"preconditions", pre},
        {"side_effecting", side_effecting},
        {"risk_tier", risk_tier},
        {"cost", cost},
        {"idempotent", idempotent},
        {"access_tags", access_tags},
        {"behavior", behavior.to_json()},
    };
}

std::string ToolSpec::digest() const { return digest::of_json(to_json()); }

const char* to_string(CallMode m) {
    return m == CallMode::Commit ? "commit" : "simulate";
}

json ToolCall::to_json() const {
    return json{
        {"name", name},
        {"version_req", version_req.str()},
        {"args", args},
        {"idempotency_key", idempotency_key},
        {"mode", to_string(mode)},
        {"principal", principal},
    };
}

ToolResult ToolResult::failure(const std::string& kind) {
    ToolResult r;
    r.ok = false;
    r.error_kind = kind;
    return r;
}

json ToolResult::to_json() const {
    return json{
        {"ok", ok},
        {"error_kind", error_kind},
        {"output", output},
        {"latency", latency},
        {"cost_charged", cost_charged},
        {"deduped", deduped},
        {"side_effect_committed", side_effect_committed},
    };
}

namespace {

bool type_matches(const FieldSpec& field, const json& v) {
    switch (field.type) {
        case FieldType::Int:
            return v.is_number_integer();
        case FieldType::Real:
            return v.is_number();
        case FieldType::Text:
            return v.is_string();
        case FieldType::Bool:
            return v.is_boolean();
        case FieldType::Enum:
            return v.is_string() &&
                   std::find(field.enum_values.begin(), field.enum_values.end(),
                             v.get<std::string>()) != field.enum_values.end();
    }
    return false;
}

bool in_range(const FieldSpec& field, const json& v) {
    if (!v.is_number()) return true;
    double x = v.get<double>();
    if (field.min && x < *field.min) return false;
    if (field.max && x > *field.max) return false;
    return true;
}

bool precondition_holds(const Precondition& p, const json& args) {
    if (!args.contains(p.field)) return true;  // absence is missing-field's job
    const json& v = args.at(p.field);
    if (p.kind == "non-empty")
        return !(v.is_string() && v.get<std::string>().empty());
    if (p.kind == "in") {
        if (!p.value.is_array()) return false;
        return std::find(p.value.begin(), p.value.end(), v) != p.value.end();
    }
    if (p.kind == "eq") return v == p.value;
    if (p.kind == "ne") return v != p.value;
    if (!v.is_number() || !p.value.is_number()) return false;
    double lhs = v.get<double>(), rhs = p.value.get<double>();
    if (p.kind == "ge") return lhs >= rhs;
    if (p.kind == "gt") return lhs > rhs;
    if (p.kind == "le") return lhs <= rhs;
    if (p.kind == "lt") return lhs < rhs;
    return false;
}

}  // namespace

ValidatedCall validate(const ToolCall& call, const ToolSpec& spec) {
    if (!call.args.is_object())
        throw Error("type-mismatch", "args must be an object");
    for (const auto& [key, value] : call.args.items()) {
        auto it = spec.input_schema.find(key);
        if (it == spec.input_schema.end()) throw Error("unknown-field", key);
        if (!type_matches(it->second, value) || !in_range(it->second, value))
            throw Error("type-mismatch", key);
    }
    for (const auto& [key, field] : spec.input_schema) {
        if (field.required && !call.args.contains(key))
            throw Error("missing-field", key);
    }
    for (const auto& p : spec.preconditions) {
        if (!precondition_holds(p, call.args))
            throw Error("precondition-failed", p.describe());
    }
    if (spec.side_effecting && call.idempotency_key.empty())
        throw Error("missing-idempotency-key", spec.name);
    return ValidatedCall(&spec, call);
}

std::string ToolRegistry::register_tool(ToolSpec spec) {
    if (spec.name.empty()) throw Error("invalid-spec", "empty name");
    if (spec.input_schema.empty() || spec.output_schema.empty())
        throw Error("invalid-spec", spec.name + ": empty schema");
    if (spec.cost < 0) throw Error("invalid-spec", spec.name + ": negative cost");
    if (spec.risk_tier != "Low" && spec.risk_tier != "High")
        throw Error("invalid-spec", spec.name + ": risk tier " + spec.risk_tier);
    std::lock_guard lock(mu_);
    for (const auto& existing : specs_) {
        if (existing.name == spec.name && existing.version == spec.version)
            throw Error("duplicate-version", spec.id());
    }
    specs_.push_back(std::move(spec));
    return specs_.back().id();
}

const ToolSpec& ToolRegistry::resolve(const std::string& name,
                                      const VersionReq& req) const {
    std::lock_guard lock(mu_);
    const ToolSpec* best = nullptr;
    for (const auto& spec : specs_) {
        if (spec.name != name) continue;
        if (req.exact) {
            if (spec.version == req.version) return spec;
        } else if (spec.version.major == req.compatible_major) {
            if (!best || best->version < spec.version) best = &spec;
        }
    }
    if (!best) throw Error("not-found", name + "@" + req.str());
    return *best;
}

bool ToolRegistry::has(const std::string& name) const {
    std::lock_guard lock(mu_);
    for (const auto& spec : specs_)
        if (spec.name == name) return true;
    return false;
}

std::vector<const ToolSpec*> ToolRegistry::list() const {
    std::lock_guard lock(mu_);
    std::vector<const ToolSpec*> out;
    for (const auto& spec : specs_) out.push_back(&spec);
    return out;
}

std::map<std::string, std::string> ToolRegistry::digests() const {
    std::lock_guard lock(mu_);
    std::map<std::string, std::string> out;
    for (const auto& spec : specs_) out[spec.id()] = spec.digest();
    return out;
}

ToolResult ToolHost::execute(const ValidatedCall& validated,
                             const SandboxLimits& limits) {
    const ToolSpec& spec = validated.spec();
    const ToolCall& call = validated.call();
    bool commit = call.mode == CallMode::Commit;

    std::lock_guard lock(mu_);

    std::string cache_key;
    if (commit && spec.side_effecting) {
        cache_key = spec.name + "|" + std::to_string(spec.version.major) + "|" +
                    call.idempotency_key;
        auto it = idem_cache_.find(cache_key);
        if (it != idem_cache_.end()) {
            ToolResult r = it->second;
            r.deduped = true;
            r.side_effect_committed = false;
            r.cost_charged = 0;
            r.latency = 0;
            return r;
        }
    }

    if (spec.behavior.latency > limits.max_latency) {
        ToolResult r = ToolResult::failure("limit-exceeded");
        r.latency = limits.max_latency;  // ran until the cap, then cut off
        return r;
    }

    ToolResult r = run_stub(validated, commit);
    if (r.ok && digest::canonical(r.output).size() > limits.max_output_bytes) {
        r = ToolResult::failure("limit-exceeded");
        r.latency = spec.behavior.latency;
        return r;
    }
    if (r.ok && commit) {
        r.cost_charged = spec.cost;
        if (!cache_key.empty()) idem_cache_[cache_key] = r;
    }
    return r;
}

ToolResult ToolHost::run_stub(const ValidatedCall& validated, bool commit) {
    const ToolSpec& spec = validated.spec();
    const json& args = validated.call().args;
    const StubBehavior& b = spec.behavior;

    ToolResult r;
    r.latency = b.latency;

    if (b.kind == "fail") {
        r = ToolResult::failure(
            b.params.value("error_kind", std::string("tool-error")));
        r.latency = b.latency;
        return r;
    }
    if (b.kind == "flaky") {
        int64_t every = b.params.value("fail_every", int64_t{2});
        int64_t n = invocations_[spec.id()] + 1;
        if (commit) invocations_[spec.id()] = n;
        if (every > 0 && n % every == 0) {
            r = ToolResult::failure("tool-error");
            r.latency = b.latency;
            return r;
        }
    }

    if (b.kind == "echo") {
        std::string joined;
        for (const auto& [key, value] : args.items()) {
            if (!joined.empty()) joined += " ";
            joined += value.is_string() ? value.get<std::string>() : value.dump();
        }
        r.output["out"] = joined;
    } else if (b.kind == "add") {
        double sum = 0;
        bool integral = true;
        for (const auto& [key, value] : args.items()) {
            if (value.is_number()) {
                sum += value.get<double>();
                integral = integral && value.is_number_integer();
            }
        }
        if (integral)
            r.output["sum"] = static_cast<int64_t>(sum);
        else
            r.output["sum"] = sum;
    } else if (b.kind == "counter") {
        std::string name = b.params.value("counter", spec.name);
        int64_t next = counters_[name] + 1;
        if (commit) {
            counters_[name] = next;
            r.side_effect_committed = true;
        }
        r.output["count"] = next;
    } else if (b.kind == "constant") {
        r.output = b.params.value("output", json::object());
    } else if (b.kind == "flaky") {
        r.output["attempt"] = invocations_[spec.id()];
    } else {
        return ToolResult::failure("tool-error");
    }

    if (commit && spec.side_effecting && b.kind != "counter")
        r.side_effect_committed = true;
    return r;
}

int64_t ToolHost::counter(const std::string& name) const {
    std::lock_guard lock(mu_);
    auto it = counters_.find(name);
    return it == counters_.end() ? 0 : it->second;
}

json ToolHost::state() const {
    std::lock_guard lock(mu_);
    return json{{"counters", counters_}, {"invocations", invocations_}};
}

}  // namespace agentsim::tools
