#include "trustchain/crypto.hpp"

#include <sodium.h>

#include <stdexcept>
#include <string>
#include <unordered_map>

namespace trustchain {

namespace {

void ensure_sodium() {
    static const bool ready = [] {
        if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
        return true;
    }();
    (void)ready;
}

constexpr std::size_t kVerifyCacheLimit = 1u << 20;

}  // namespace

Hash32 sha256(ByteView data) {
    ensure_sodium();
    Hash32 out;
    crypto_hash_sha256(out.bytes.data(), data.data(), data.size());
    return out;
}

bool verify_signature(const PublicKey& public_key, ByteView message, const Signature& signature) {
    ensure_sodium();
    thread_local std::unordered_map<std::string, bool> cache;

    std::string key;
    key.reserve(PublicKey::size + Signature::size + message.size());
    key.append(reinterpret_cast<const char*>(public_key.bytes.data()), PublicKey::size);
    key.append(reinterpret_cast<const char*>(signature.bytes.data()), Signature::size);
    key.append(reinterpret_cast<const char*>(message.data()), message.size());
    if (auto it = cache.find(key); it != cache.end()) return it->second;

    bool ok = crypto_sign_verify_detached(signature.bytes.data(), message.data(), message.size(),
                                          public_key.bytes.data()) == 0;
    if (cache.size() >= kVerifyCacheLimit) cache.clear();
    cache.emplace(std::move(key), ok);
    return ok;
}

Address address_of(const PublicKey& public_key) {
    auto digest = sha256(public_key.view());
    return Address::from(ByteView(digest.bytes).subspan(32 - Address::size));
}

namespace detail {

PublicKey ed25519_keypair(const Seed32& secret_seed, ExpandedSecret& expanded) {
    ensure_sodium();
    PublicKey pk;
    crypto_sign_seed_keypair(pk.bytes.data(), expanded.data(), secret_seed.bytes.data());
    return pk;
}

Signature ed25519_sign(const ExpandedSecret& expanded, ByteView message) {
    ensure_sodium();
    Signature sig;
    crypto_sign_detached(sig.bytes.data(), nullptr, message.data(), message.size(), expanded.data());
    return sig;
}

void chacha20_stream(const Seed32& key, std::uint64_t block_counter, std::uint8_t* out, std::size_t len) {
    ensure_sodium();
    static constexpr std::array<std::uint8_t, crypto_stream_chacha20_NONCEBYTES> nonce{};
    std::fill(out, out + len, std::uint8_t{0});
    crypto_stream_chacha20_xor_ic(out, out, len, nonce.data(), block_counter, key.bytes.data());
}

void secure_wipe(void* p, std::size_t len) { sodium_memzero(p, len); }

}  // namespace detail

}  // namespace trustchain
