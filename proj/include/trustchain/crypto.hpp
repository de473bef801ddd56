#pragma once

#include "trustchain/bytes.hpp"

namespace trustchain {

/// SHA-256 of the empty input.
inline constexpr std::string_view kEmptySha256Hex =
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

Hash32 sha256(ByteView data);

/// Ed25519 verification (RFC 8032). Malformed keys or signatures yield false.
/// Results are memoised per thread; the function is pure so this is observable
/// only as speed.
bool verify_signature(const PublicKey& public_key, ByteView message, const Signature& signature);

/// Account address: trailing 20 bytes of SHA-256(public key).
Address address_of(const PublicKey& public_key);

namespace detail {
// Only the vault holds secret seeds; these are the raw primitives it uses.
using ExpandedSecret = std::array<std::uint8_t, 64>;
/// Derives the keypair for a 32-byte seed; the expanded secret never leaves
/// the caller.
PublicKey ed25519_keypair(const Seed32& secret_seed, ExpandedSecret& expanded);
Signature ed25519_sign(const ExpandedSecret& expanded, ByteView message);
void chacha20_stream(const Seed32& key, std::uint64_t block_counter, std::uint8_t* out, std::size_t len);
void secure_wipe(void* p, std::size_t len);
}  // namespace detail

}  // namespace trustchain
