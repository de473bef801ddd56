#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "trustchain/ledger.hpp"
#include "trustchain/membership.hpp"
#include "trustchain/types.hpp"
#include "trustchain/vault.hpp"

namespace trustchain {

/// Simulated time in microseconds.
using SimTime = std::int64_t;
inline constexpr SimTime kMillisecond = 1000;

constexpr SimTime milliseconds(std::int64_t ms) { return ms * kMillisecond; }

// Wire messages ------------------------------------------------------------

struct Proposal {
    /// Epoch the proposal is made in. May exceed block.header.epoch when a
    /// locked block is re-proposed unchanged.
    std::uint64_t epoch = 0;
    Block block;
    std::optional<QuorumCertificate> justify;

    bool operator==(const Proposal&) const = default;
};

struct VoteMsg {
    Vote vote;
    bool operator==(const VoteMsg&) const = default;
};

struct CertMsg {
    QuorumCertificate cert;
    bool operator==(const CertMsg&) const = default;
};

struct NewEpoch {
    Address sender;
    std::uint64_t epoch = 0;
    std::optional<QuorumCertificate> highest_cert;
    /// The block highest_cert certifies, if the sender holds it. Bound to the
    /// certificate by hash, so it is not covered by the signature.
    std::optional<Block> locked_block;
    Signature signature;

    bool operator==(const NewEpoch&) const = default;
};

struct SyncRequest {
    std::uint64_t from_height = 0;
    bool operator==(const SyncRequest&) const = default;
};

/// Decided blocks, each with its COMMIT certificate embedded in the header.
struct SyncResponse {
    std::vector<Block> blocks;
    bool operator==(const SyncResponse&) const = default;
};

using ConsensusMessage = std::variant<Proposal, VoteMsg, CertMsg, NewEpoch, SyncRequest, SyncResponse>;

std::string_view message_kind(const ConsensusMessage& msg);

void write(Writer& w, const ConsensusMessage& msg);
void read(Reader& r, ConsensusMessage& msg);

Bytes new_epoch_signing_bytes(std::uint64_t epoch, const std::optional<QuorumCertificate>& highest_cert);

// Replica inputs/outputs ---------------------------------------------------

struct ConsensusConfig {
    ValidatorSet committee;
    std::uint64_t n = 0;
    std::uint64_t f = 0;
    SimTime base_timeout = milliseconds(200);
    std::uint64_t max_block_txs = 10;
    /// Simulated leader time spent executing/packaging each transaction.
    SimTime package_cost_per_tx = milliseconds(2);
    bool propose_empty_blocks = true;

    static ConsensusConfig for_committee(ValidatorSet committee);
};

enum class NoteKind { Drop, Package, Decide, EnterEpoch, Timeout, Lock, Sync };

std::string_view to_string(NoteKind kind);

/// Structured observation emitted alongside protocol messages; the simulator
/// turns these into trace records.
struct Note {
    NoteKind kind = NoteKind::Drop;
    std::string reason;
    Hash32 hash;
    std::uint64_t height = 0;
    std::uint64_t epoch = 0;
    SimTime at = 0;
    std::vector<Hash32> tx_ids;
};

struct Outgoing {
    /// Empty means broadcast to the rest of the committee; this replica's own
    /// address means local delivery after delay.
    std::optional<Address> to;
    ConsensusMessage message;
    /// Local processing time before the message leaves the node.
    SimTime delay = 0;
};

struct Actions {
    std::vector<Outgoing> sends;
    std::optional<SimTime> timer;
    std::vector<Note> notes;

    void merge(Actions&& other);
};

struct ConsensusState {
    std::uint64_t current_epoch = 0;
    Phase current_phase = Phase::Prepare;
    std::optional<Block> proposal;
    /// Populated only while this replica leads current_epoch.
    std::map<std::pair<Hash32, Phase>, std::map<Address, Signature>> vote_buffer;
    /// Highest PRE_COMMIT certificate this replica locked on.
    std::optional<QuorumCertificate> locked_cert;
    std::uint64_t last_decided_height = 0;
};

/// Arrival-ordered transaction pool.
class Mempool {
public:
    bool add(const Transaction& tx);
    bool empty() const { return queue_.empty(); }
    std::size_t size() const { return queue_.size(); }
    bool contains(const Hash32& id) const { return ids_.contains(id); }

    /// Up to max_txs transactions that execute in sequence on top of state,
    /// in arrival order. Transactions that can never become valid (bad
    /// signature, nonce already used) are evicted.
    std::vector<Transaction> select(const WorldState& state, const KeyDirectory& keys, std::size_t max_txs);

    void remove(const std::vector<Transaction>& txs);

private:
    std::vector<std::pair<Hash32, Transaction>> queue_;
    std::set<Hash32> ids_;
};

/// One validator's three-phase state machine. Single-threaded: each call
/// consumes one input and returns the resulting messages, timer and notes.
class Replica {
public:
    Replica(ConsensusConfig config, Vault vault, Ledger ledger);

    const Address& address() const { return vault_.address(); }
    const ConsensusConfig& config() const { return config_; }
    const ConsensusState& state() const { return state_; }
    const Ledger& ledger() const { return ledger_; }
    const Mempool& mempool() const { return mempool_; }
    const Vault& vault() const { return vault_; }
    bool is_leader() const { return config_.committee.leader_for_epoch(state_.current_epoch) == address(); }
    std::optional<SimTime> timer_deadline() const { return timer_deadline_; }
    SimTime current_timeout() const;

    /// Enters epoch 0 from genesis.
    Actions start(SimTime now);

    /// Epoch entry: arms the timer and, on the leader, packages and
    /// broadcasts a proposal.
    Actions start_epoch(SimTime now);

    Actions handle(const Address& from, const ConsensusMessage& msg, SimTime now);

    Actions on_proposal(const Address& from, const Proposal& msg, SimTime now);
    Actions on_vote(const Address& from, const Vote& vote, SimTime now);
    Actions on_certificate(const Address& from, const QuorumCertificate& cert, SimTime now);
    Actions on_new_epoch(const Address& from, const NewEpoch& msg, SimTime now);
    Actions on_sync_request(const Address& from, const SyncRequest& msg, SimTime now);
    Actions on_sync_response(const Address& from, const SyncResponse& msg, SimTime now);
    Actions on_timeout(SimTime now);

    /// Client submission into the mempool; rejects unknown senders, bad
    /// signatures and used nonces.
    bool submit(const Transaction& tx);

    /// Block extending the decided head with the given transactions, with
    /// tx_root and state_root filled in.
    Block build_block(const std::vector<Transaction>& txs, std::uint64_t epoch) const;
    Vote make_vote(const Hash32& block_hash, Phase phase, std::uint64_t epoch) const;
    NewEpoch make_new_epoch(std::uint64_t target) const;

private:
    Actions enter_epoch(std::uint64_t epoch, SimTime now, bool after_decision);
    Actions propose(SimTime now);
    void drop(Actions& a, std::string reason, const Hash32& hash = {}) const;
    void send_to_leader(Actions& a, const Vote& vote, SimTime now);
    void broadcast_cert(Actions& a, const QuorumCertificate& cert, SimTime now);
    bool apply_decision(Actions& a, const Block& block, const QuorumCertificate& cert, SimTime now,
                        std::string_view source);
    void request_sync(Actions& a, SimTime now);
    Actions evaluate_new_epochs(SimTime now);
    Actions retry_pending(SimTime now);
    bool extends_head(const Block& block) const;

    ConsensusConfig config_;
    Vault vault_;
    Ledger ledger_;
    Mempool mempool_;
    ConsensusState state_;

    std::optional<Hash32> proposal_hash_;
    std::set<Phase> acted_;    // phases this replica has voted in this epoch
    std::set<Phase> emitted_;  // certificates formed this epoch (leader)
    std::uint64_t lock_height_ = 0;
    std::uint64_t epochs_since_decision_ = 0;
    std::optional<SimTime> timer_deadline_;

    std::map<Address, std::uint64_t> new_epoch_targets_;
    std::uint64_t sent_new_epoch_target_ = 0;
    std::optional<QuorumCertificate> highest_cert_;
    std::map<Hash32, Block> known_blocks_;  // undecided candidates at head+1
    std::map<std::uint64_t, std::vector<std::pair<Address, Proposal>>> future_;
    std::optional<std::pair<Address, Proposal>> pending_proposal_;
    std::optional<std::pair<std::uint64_t, SimTime>> last_sync_request_;  // (from height, when)
};

}  // namespace trustchain
