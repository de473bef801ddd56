#pragma once

#include <cstdint>
#include <optional>

#include "trustchain/types.hpp"

namespace trustchain {

enum class KeySlot { Node, Endorsement };

/// Simulated security chip. Holds the endorsement key (fixed at manufacture,
/// derived from the device seed) and the node key (drawn from the on-chip
/// generator at first boot). Only public keys, signatures and random bytes
/// ever leave it.
class Vault {
public:
    /// Manufacture + first boot. The generator is keyed by entropy_seed only;
    /// it never touches process or OS randomness.
    static Vault provision(const Seed32& device_seed, const Seed32& entropy_seed);

    Vault(Vault&& other) noexcept;
    Vault& operator=(Vault&& other) noexcept;
    Vault(const Vault&) = delete;
    Vault& operator=(const Vault&) = delete;
    ~Vault();

    const PublicKey& public_key(KeySlot slot) const;
    /// Node address, derived from the node public key.
    const Address& address() const { return address_; }

    Signature sign(KeySlot slot, ByteView message) const;

    Bytes random(std::size_t n_bytes);

    /// Hashes the code and signs (code_hash, device, nonce) with the
    /// endorsement key. The nonce is fresh from the generator.
    AttestationReport attest_code(ByteView code);

private:
    friend struct VaultInspector;  // test-only peer, never defined in the library

    Vault() = default;
    void fill_random(std::uint8_t* out, std::size_t n);
    void wipe();

    detail::ExpandedSecret endorsement_secret_{};
    detail::ExpandedSecret node_secret_{};
    Seed32 entropy_key_;
    std::uint64_t stream_block_ = 0;
    std::array<std::uint8_t, 64> stream_buffer_{};
    std::size_t stream_used_ = 64;

    PublicKey endorsement_public_;
    PublicKey node_public_;
    Address address_;
};

inline Signature vault_sign(const Vault& vault, KeySlot slot, ByteView message) {
    return vault.sign(slot, message);
}
inline Bytes vault_random(Vault& vault, std::size_t n_bytes) { return vault.random(n_bytes); }
inline AttestationReport attest_code(Vault& vault, ByteView code) { return vault.attest_code(code); }

/// True iff the endorsement signature verifies and, when an expected key is
/// supplied, the report names that key.
bool verify_report(const AttestationReport& report,
                   const std::optional<PublicKey>& expected_endorsement_key = std::nullopt);

}  // namespace trustchain
