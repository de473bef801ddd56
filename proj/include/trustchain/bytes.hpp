#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trustchain {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView bytes);
Bytes from_hex(std::string_view hex);

/// Fixed-width byte string. The tag keeps hashes, addresses, keys and
/// signatures from being mixed up even though they share a representation.
template <std::size_t N, class Tag>
struct FixedBytes {
    static constexpr std::size_t size = N;
    std::array<std::uint8_t, N> bytes{};

    static FixedBytes from(ByteView src) {
        if (src.size() != N)
            throw std::invalid_argument("fixed-width value expects " + std::to_string(N) + " bytes");
        FixedBytes out;
        std::copy(src.begin(), src.end(), out.bytes.begin());
        return out;
    }

    static FixedBytes from_hex(std::string_view hex) { return from(trustchain::from_hex(hex)); }

    ByteView view() const { return {bytes.data(), N}; }
    std::string hex() const { return to_hex(view()); }
    bool is_zero() const {
        return std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t b) { return b == 0; });
    }

    auto operator<=>(const FixedBytes&) const = default;
};

struct HashTag;
struct AddressTag;
struct PublicKeyTag;
struct SignatureTag;
struct SeedTag;

using Hash32 = FixedBytes<32, HashTag>;
using Address = FixedBytes<20, AddressTag>;
using PublicKey = FixedBytes<32, PublicKeyTag>;
using Signature = FixedBytes<64, SignatureTag>;
using Seed32 = FixedBytes<32, SeedTag>;

/// First 8 hex digits; enough to tell values apart in logs.
template <std::size_t N, class Tag>
std::string short_hex(const FixedBytes<N, Tag>& value) {
    return value.hex().substr(0, 8);
}

}  // namespace trustchain

template <std::size_t N, class Tag>
struct std::hash<trustchain::FixedBytes<N, Tag>> {
    std::size_t operator()(const trustchain::FixedBytes<N, Tag>& v) const noexcept {
        std::size_t h = 1469598103934665603ull;
        for (auto b : v.bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
        return h;
    }
};
