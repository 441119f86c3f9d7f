#include "agentsim/digest.hpp"

#include <atomic>
#include <array>
#include <cstdio>

#include <openssl/evp.h>
#include <openssl/hmac.h>

namespace agentsim::digest {

namespace {

std::string to_hex(const unsigned char* buf, size_t len) {
    static const char* alphabet = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (size_t i = 0; i < len; ++i) {
        out.push_back(alphabet[buf[i] >> 4]);
        out.push_back(alphabet[buf[i] & 0xf]);
    }
    return out;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> buf{};
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), buf.data(), &len, EVP_sha256(), nullptr);
    return to_hex(buf.data(), len);
}

std::string hmac_sha256_hex(std::string_view key, std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> buf{};
    unsigned int len = 0;
    HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
         reinterpret_cast<const unsigned char*>(data.data()), data.size(), buf.data(), &len);
    return to_hex(buf.data(), len);
}

std::string canonical(const nlohmann::json& j) {
    return j.dump();
}

std::string of_json(const nlohmann::json& j) {
    return sha256_hex(canonical(j));
}

const std::string& genesis() {
    static const std::string g = sha256_hex("");
    return g;
}

std::string short_id(std::string_view data) {
    return sha256_hex(data).substr(0, 16);
}

std::string fresh_id(std::string_view prefix) {
    static std::atomic<uint64_t> counter{0};
    uint64_t n = counter.fetch_add(1, std::memory_order_relaxed);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "-%06llu", static_cast<unsigned long long>(n));
    return std::string(prefix) + buf;
}

}  // namespace agentsim::digest
