#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "trustchain/bytes.hpp"
#include "trustchain/crypto.hpp"
#include "trustchain/encoding.hpp"

namespace trustchain {

enum class Phase : std::uint8_t { Prepare = 0, PreCommit = 1, Commit = 2 };

std::string_view to_string(Phase phase);

struct AttestationReport {
    Hash32 code_hash;
    Address device;
    PublicKey endorsement_public_key;
    std::array<std::uint8_t, 8> nonce{};
    Signature signature;

    bool operator==(const AttestationReport&) const = default;
};

struct Transfer {
    Address to;
    std::uint64_t amount = 0;

    bool operator==(const Transfer&) const = default;
};

struct PublishReport {
    AttestationReport report;

    bool operator==(const PublishReport&) const = default;
};

using TransactionKind = std::variant<Transfer, PublishReport>;

struct Transaction {
    Address sender;
    std::uint64_t nonce = 0;
    TransactionKind kind;
    Signature signature;

    bool operator==(const Transaction&) const = default;
};

struct VoterSignature {
    Address voter;
    Signature signature;

    bool operator==(const VoterSignature&) const = default;
};

struct QuorumCertificate {
    Hash32 block_hash;
    Phase phase = Phase::Prepare;
    std::uint64_t epoch = 0;
    std::vector<VoterSignature> voters;

    bool operator==(const QuorumCertificate&) const = default;
};

struct Vote {
    Address voter;
    Hash32 block_hash;
    Phase phase = Phase::Prepare;
    std::uint64_t epoch = 0;
    Signature signature;

    bool operator==(const Vote&) const = default;
};

struct BlockHeader {
    Hash32 parent_hash;
    std::uint64_t height = 0;
    std::uint64_t epoch = 0;
    Address proposer;
    Hash32 tx_root;
    Hash32 state_root;
    std::optional<QuorumCertificate> commit_certificate;

    bool operator==(const BlockHeader&) const = default;
};

struct Block {
    BlockHeader header;
    std::vector<Transaction> transactions;

    bool operator==(const Block&) const = default;
};

// Canonical encoding. One write/read pair per domain type; fields in
// declaration order.
void write(Writer& w, const AttestationReport& v);
void write(Writer& w, const Transaction& v);
void write(Writer& w, const VoterSignature& v);
void write(Writer& w, const QuorumCertificate& v);
void write(Writer& w, const Vote& v);
void write(Writer& w, const BlockHeader& v);
void write(Writer& w, const Block& v);
void write(Writer& w, Phase v);
void write(Writer& w, std::uint64_t v);
void write(Writer& w, const std::vector<Transaction>& v);

void read(Reader& r, AttestationReport& v);
void read(Reader& r, Transaction& v);
void read(Reader& r, VoterSignature& v);
void read(Reader& r, QuorumCertificate& v);
void read(Reader& r, Vote& v);
void read(Reader& r, BlockHeader& v);
void read(Reader& r, Block& v);
void read(Reader& r, Phase& v);
void read(Reader& r, std::uint64_t& v);
void read(Reader& r, std::vector<Transaction>& v);

template <class T>
Bytes canonical_encode(const T& value) {
    Writer w;
    write(w, value);
    return std::move(w).take();
}

/// Throws DecodeError on malformed or trailing input.
template <class T>
T decode(ByteView bytes) {
    Reader r(bytes);
    T value{};
    read(r, value);
    r.expect_end();
    return value;
}

template <class T>
Hash32 hash_of(const T& value) {
    return sha256(canonical_encode(value));
}

/// Header encoding with the commit certificate omitted entirely.
Bytes header_identity_bytes(const BlockHeader& header);

/// Block identity: stable before and after the certificate is attached.
Hash32 block_hash(const BlockHeader& header);
inline Hash32 block_hash(const Block& block) { return block_hash(block.header); }

/// Digest of the canonical encoding of the ordered transaction-hash list.
Hash32 compute_tx_root(const std::vector<Transaction>& txs);

Hash32 transaction_id(const Transaction& tx);

// Bytes covered by each signature.
Bytes transaction_signing_bytes(const Transaction& tx);
Bytes vote_signing_bytes(const Hash32& block_hash, Phase phase, std::uint64_t epoch);
Bytes report_signing_bytes(const Hash32& code_hash, const Address& device,
                           const std::array<std::uint8_t, 8>& nonce);

bool verify_vote(const Vote& vote, const PublicKey& voter_key);

}  // namespace trustchain
