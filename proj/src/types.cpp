#include "trustchain/types.hpp"

namespace trustchain {

namespace {
constexpr std::uint8_t kTransferTag = 0;
constexpr std::uint8_t kPublishReportTag = 1;

void write_tx_body(Writer& w, const Transaction& v) {
    w.fixed(v.sender);
    w.u64(v.nonce);
    if (const auto* t = std::get_if<Transfer>(&v.kind)) {
        w.u8(kTransferTag);
        w.fixed(t->to);
        w.u64(t->amount);
    } else {
        w.u8(kPublishReportTag);
        write(w, std::get<PublishReport>(v.kind).report);
    }
}

void write_header_body(Writer& w, const BlockHeader& v) {
    w.fixed(v.parent_hash);
    w.u64(v.height);
    w.u64(v.epoch);
    w.fixed(v.proposer);
    w.fixed(v.tx_root);
    w.fixed(v.state_root);
}
}  // namespace

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::Prepare: return "PREPARE";
        case Phase::PreCommit: return "PRE_COMMIT";
        case Phase::Commit: return "COMMIT";
    }
    return "?";
}

void write(Writer& w, Phase v) { w.u8(static_cast<std::uint8_t>(v)); }
void write(Writer& w, std::uint64_t v) { w.u64(v); }

void write(Writer& w, const AttestationReport& v) {
    w.fixed(v.code_hash);
    w.fixed(v.device);
    w.fixed(v.endorsement_public_key);
    w.raw(v.nonce);
    w.fixed(v.signature);
}

void write(Writer& w, const Transaction& v) {
    write_tx_body(w, v);
    w.fixed(v.signature);
}

void write(Writer& w, const VoterSignature& v) {
    w.fixed(v.voter);
    w.fixed(v.signature);
}

void write(Writer& w, const QuorumCertificate& v) {
    w.fixed(v.block_hash);
    write(w, v.phase);
    w.u64(v.epoch);
    w.count(v.voters.size());
    for (const auto& s : v.voters) write(w, s);
}

void write(Writer& w, const Vote& v) {
    w.fixed(v.voter);
    w.fixed(v.block_hash);
    write(w, v.phase);
    w.u64(v.epoch);
    w.fixed(v.signature);
}

void write(Writer& w, const BlockHeader& v) {
    write_header_body(w, v);
    w.presence(v.commit_certificate.has_value());
    if (v.commit_certificate) write(w, *v.commit_certificate);
}

void write(Writer& w, const std::vector<Transaction>& v) {
    w.count(v.size());
    for (const auto& tx : v) write(w, tx);
}

void write(Writer& w, const Block& v) {
    write(w, v.header);
    write(w, v.transactions);
}

void read(Reader& r, Phase& v) {
    auto tag = r.u8();
    if (tag > static_cast<std::uint8_t>(Phase::Commit)) throw DecodeError("invalid phase tag");
    v = static_cast<Phase>(tag);
}

void read(Reader& r, std::uint64_t& v) { v = r.u64(); }

void read(Reader& r, AttestationReport& v) {
    r.fixed(v.code_hash);
    r.fixed(v.device);
    r.fixed(v.endorsement_public_key);
    for (auto& b : v.nonce) b = r.u8();
    r.fixed(v.signature);
}

void read(Reader& r, Transaction& v) {
    r.fixed(v.sender);
    v.nonce = r.u64();
    switch (r.u8()) {
        case kTransferTag: {
            Transfer t;
            r.fixed(t.to);
            t.amount = r.u64();
            v.kind = t;
            break;
        }
        case kPublishReportTag: {
            PublishReport p;
            read(r, p.report);
            v.kind = p;
            break;
        }
        default: throw DecodeError("invalid transaction kind");
    }
    r.fixed(v.signature);
}

void read(Reader& r, VoterSignature& v) {
    r.fixed(v.voter);
    r.fixed(v.signature);
}

void read(Reader& r, QuorumCertificate& v) {
    r.fixed(v.block_hash);
    read(r, v.phase);
    v.epoch = r.u64();
    auto n = r.count();
    v.voters.resize(n);
    for (auto& s : v.voters) read(r, s);
}

void read(Reader& r, Vote& v) {
    r.fixed(v.voter);
    r.fixed(v.block_hash);
    read(r, v.phase);
    v.epoch = r.u64();
    r.fixed(v.signature);
}

void read(Reader& r, BlockHeader& v) {
    r.fixed(v.parent_hash);
    v.height = r.u64();
    v.epoch = r.u64();
    r.fixed(v.proposer);
    r.fixed(v.tx_root);
    r.fixed(v.state_root);
    if (r.presence()) {
        QuorumCertificate qc;
        read(r, qc);
        v.commit_certificate = std::move(qc);
    } else {
        v.commit_certificate.reset();
    }
}

void read(Reader& r, std::vector<Transaction>& v) {
    auto n = r.count();
    v.resize(n);
    for (auto& tx : v) read(r, tx);
}

void read(Reader& r, Block& v) {
    read(r, v.header);
    read(r, v.transactions);
}

Bytes header_identity_bytes(const BlockHeader& header) {
    Writer w;
    write_header_body(w, header);
    return std::move(w).take();
}

Hash32 block_hash(const BlockHeader& header) { return sha256(header_identity_bytes(header)); }

Hash32 compute_tx_root(const std::vector<Transaction>& txs) {
    Writer w;
    w.count(txs.size());
    for (const auto& tx : txs) w.fixed(transaction_id(tx));
    return sha256(w.bytes());
}

Hash32 transaction_id(const Transaction& tx) { return hash_of(tx); }

Bytes transaction_signing_bytes(const Transaction& tx) {
    Writer w;
    write_tx_body(w, tx);
    return std::move(w).take();
}

Bytes vote_signing_bytes(const Hash32& block_hash, Phase phase, std::uint64_t epoch) {
    Writer w;
    w.fixed(block_hash);
    write(w, phase);
    w.u64(epoch);
    return std::move(w).take();
}

Bytes report_signing_bytes(const Hash32& code_hash, const Address& device,
                           const std::array<std::uint8_t, 8>& nonce) {
    Writer w;
    w.fixed(code_hash);
    w.fixed(device);
    w.raw(nonce);
    return std::move(w).take();
}

bool verify_vote(const Vote& vote, const PublicKey& voter_key) {
    return verify_signature(voter_key, vote_signing_bytes(vote.block_hash, vote.phase, vote.epoch),
                            vote.signature);
}

}  // namespace trustchain
