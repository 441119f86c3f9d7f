#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace agentsim::digest {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

/// Lowercase hex HMAC-SHA256 with an arbitrary text key.
std::string hmac_sha256_hex(std::string_view key, std::string_view data);

/// Canonical serialization: key-sorted objects, no whitespace.
/// nlohmann::json already stores object keys sorted, so a plain dump
/// is canonical as long as everyone goes through this helper.
std::string canonical(const nlohmann::json& j);

/// sha256_hex over the canonical serialization.
std::string of_json(const nlohmann::json& j);

/// Digest of the empty string, used as the genesis prev_hash of a trace chain.
const std::string& genesis();

/// First 16 hex chars of sha256, for compact identifiers.
std::string short_id(std::string_view data);

/// Process-wide fresh identifier with a given prefix ("run-0001", ...).
/// Monotonic within a process; not stable across processes.
std::string fresh_id(std::string_view prefix);

}  // namespace agentsim::digest
