#pragma once

#include <cstdint>
#include <cstddef>
#include <string>

namespace ampc {

/// Incremental FNV-1a (64 bit). Used to fingerprint artifacts for lineage checks.
class Fnv1a {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }

    std::uint64_t value() const { return hash_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t h = hash_;
        for (int i = 15; i >= 0; --i) {
            out[i] = digits[h & 0xf];
            h >>= 4;
        }
        return out;
    }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string checksum_hex(const std::string& content) {
    Fnv1a h;
    h.update(content);
    return h.hex();
}

}  // namespace ampc
