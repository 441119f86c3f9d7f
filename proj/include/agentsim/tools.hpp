#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentsim/error.hpp"

namespace agentsim::tools {

using nlohmann::json;

struct SemVer {
    int major = 0;
    int minor = 0;
    int patch = 0;

    static SemVer parse(const std::string& s);  // errors: "invalid-version"
    std::string str() const;
    auto operator<=>(const SemVer&) const = default;
};

/// "1.2.3" pins an exact version; "^1" means latest with major 1.
struct VersionReq {
    bool exact = true;
    SemVer version;          // when exact
    int compatible_major = 0;  // when !exact

    static VersionReq parse(const std::string& s);
    std::string str() const;
};

enum class FieldType { Int, Real, Text, Bool, Enum };

const char* to_string(FieldType t);
FieldType field_type_from_string(const std::string& s);

struct FieldSpec {
    FieldType type = FieldType::Text;
    bool required = false;
    std::optional<double> min;  // numeric range, inclusive
    std::optional<double> max;
    std::vector<std::string> enum_values;

    json to_json() const;
};

using Schema = std::map<std::string, FieldSpec>;

/// Input predicate beyond per-field typing: range, enum membership,
/// non-emptiness.
struct Precondition {
    std::string field;
    std::string kind;  // "ge" "gt" "le" "lt" "eq" "ne" "non-empty" "in"
    json value;        // rhs; array for "in"; ignored for "non-empty"

    std::string describe() const;
    json to_json() const;
};

/// Deterministic in-process behavior backing a tool: a stub kind plus
/// declared latency/failure parameters. No real connectors.
struct StubBehavior {
    std::string kind = "echo";  // echo | add | counter | fail | flaky | constant
    int64_t latency = 1;
    json params = json::object();

    json to_json() const;
};

struct ToolSpec {
    std::string name;
    SemVer version;
    Schema input_schema;
    Schema output_schema;
    std::vector<Precondition> preconditions;
    bool side_effecting = false;
    std::string risk_tier = "Low";  // "Low" | "High"
    double cost = 0.0;
    bool idempotent = false;
    std::vector<std::string> access_tags;
    StubBehavior behavior;

    std::string id() const { return name + "@" + version.str(); }
    json to_json() const;
    std::string digest() const;
};

enum class CallMode { Commit, Simulate };

const char* to_string(CallMode m);

struct ToolCall {
    std::string name;
    VersionReq version_req;
    json args = json::object();
    std::string idempotency_key;
    CallMode mode = CallMode::Commit;
    std::string principal;

    json to_json() const;
};

struct ToolResult {
    bool ok = true;
    std::string error_kind;  // "tool-error" "limit-exceeded" "breaker-open" ...
    json output = json::object();
    int64_t latency = 0;
    double cost_charged = 0.0;
    bool deduped = false;
    bool side_effect_committed = false;

    static ToolResult failure(const std::string& kind);
    json to_json() const;
};

/// A call that passed schema validation against a specific spec. Frozen:
/// the args can no longer be altered.
class ValidatedCall {
public:
    ValidatedCall(const ToolSpec* spec, ToolCall call)
        : spec_(spec), call_(std::move(call)) {}

    const ToolSpec& spec() const { return *spec_; }
    const ToolCall& call() const { return call_; }

private:
    const ToolSpec* spec_;
    ToolCall call_;
};

/// errors: "unknown-field", "missing-field", "type-mismatch",
/// "precondition-failed", each naming the offending element;
/// "missing-idempotency-key" for side-effecting tools.
ValidatedCall validate(const ToolCall& call, const ToolSpec& spec);

/// Append-only spec store. Safe for concurrent reads once a write returns.
class ToolRegistry {
public:
    /// errors: "duplicate-version", "invalid-spec".
    std::string register_tool(ToolSpec spec);

    /// errors: "not-found".
    const ToolSpec& resolve(const std::string& name, const VersionReq& req) const;

    bool has(const std::string& name) const;
    std::vector<const ToolSpec*> list() const;

    /// "name@version" -> spec digest, for the hardening audit.
    std::map<std::string, std::string> digests() const;

private:
    std::deque<ToolSpec> specs_;  // stable addresses
    mutable std::mutex mu_;
};

struct SandboxLimits {
    int64_t max_latency = 1000;
    size_t max_output_bytes = 65536;
};

/// Per-run execution context: owns the stub side-effect state and the
/// idempotency cache. Cleared between runs by constructing a fresh host.
class ToolHost {
public:
    ToolHost() = default;

    /// Commit runs the stub and charges its declared cost; a repeat Commit
    /// under the same idempotency key returns the cached result without a
    /// new side effect. Simulate evaluates the stub's effect predictor
    /// against current state, commits nothing and charges nothing.
    /// Limit violations and stub-declared failures come back as error
    /// results, never exceptions.
    ToolResult execute(const ValidatedCall& validated, const SandboxLimits& limits);

    int64_t counter(const std::string& name) const;
    json state() const;

private:
    ToolResult run_stub(const ValidatedCall& validated, bool commit);

    std::map<std::string, int64_t> counters_;     // side-effect counters
    std::map<std::string, int64_t> invocations_;  // per-tool commit count (flaky stubs)
    std::map<std::string, ToolResult> idem_cache_;
    mutable std::mutex mu_;
};

}  // namespace agentsim::tools
