#include "trustchain/consensus.hpp"

#include <algorithm>

namespace trustchain {

namespace {

constexpr std::uint64_t kFutureEpochWindow = 32;
constexpr std::size_t kSyncBatch = 16;
constexpr std::size_t kMaxSyncBlocks = 64;
constexpr std::uint64_t kMaxBackoffShift = 10;

enum MessageTag : std::uint8_t {
    kProposalTag = 0,
    kVoteTag = 1,
    kCertTag = 2,
    kNewEpochTag = 3,
    kSyncRequestTag = 4,
    kSyncResponseTag = 5,
};

template <class T>
void write_optional(Writer& w, const std::optional<T>& v) {
    w.presence(v.has_value());
    if (v) write(w, *v);
}

template <class T>
void read_optional(Reader& r, std::optional<T>& v) {
    if (r.presence()) {
        T value{};
        read(r, value);
        v = std::move(value);
    } else {
        v.reset();
    }
}

}  // namespace

std::string_view message_kind(const ConsensusMessage& msg) {
    static constexpr std::string_view kNames[] = {"PROPOSAL", "VOTE", "CERT", "NEW_EPOCH", "SYNC_REQ", "SYNC_RESP"};
    return kNames[msg.index()];
}

void write(Writer& w, const ConsensusMessage& msg) {
    w.u8(static_cast<std::uint8_t>(msg.index()));
    std::visit(
        [&w](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Proposal>) {
                w.u64(m.epoch);
                write(w, m.block);
                write_optional(w, m.justify);
            } else if constexpr (std::is_same_v<T, VoteMsg>) {
                write(w, m.vote);
            } else if constexpr (std::is_same_v<T, CertMsg>) {
                write(w, m.cert);
            } else if constexpr (std::is_same_v<T, NewEpoch>) {
                w.fixed(m.sender);
                w.u64(m.epoch);
                write_optional(w, m.highest_cert);
                write_optional(w, m.locked_block);
                w.fixed(m.signature);
            } else if constexpr (std::is_same_v<T, SyncRequest>) {
                w.u64(m.from_height);
            } else {
                w.count(m.blocks.size());
                for (const auto& b : m.blocks) write(w, b);
            }
        },
        msg);
}

void read(Reader& r, ConsensusMessage& msg) {
    switch (r.u8()) {
        case kProposalTag: {
            Proposal p;
            p.epoch = r.u64();
            read(r, p.block);
            read_optional(r, p.justify);
            msg = std::move(p);
            break;
        }
        case kVoteTag: {
            VoteMsg v;
            read(r, v.vote);
            msg = v;
            break;
        }
        case kCertTag: {
            CertMsg c;
            read(r, c.cert);
            msg = std::move(c);
            break;
        }
        case kNewEpochTag: {
            NewEpoch n;
            r.fixed(n.sender);
            n.epoch = r.u64();
            read_optional(r, n.highest_cert);
            read_optional(r, n.locked_block);
            r.fixed(n.signature);
            msg = std::move(n);
            break;
        }
        case kSyncRequestTag: msg = SyncRequest{r.u64()}; break;
        case kSyncResponseTag: {
            SyncResponse s;
            s.blocks.resize(r.count());
            for (auto& b : s.blocks) read(r, b);
            msg = std::move(s);
            break;
        }
        default: throw DecodeError("invalid consensus message tag");
    }
}

Bytes new_epoch_signing_bytes(std::uint64_t epoch, const std::optional<QuorumCertificate>& highest_cert) {
    Writer w;
    w.u64(epoch);
    write_optional(w, highest_cert);
    return std::move(w).take();
}

ConsensusConfig ConsensusConfig::for_committee(ValidatorSet committee) {
    ConsensusConfig c;
    c.n = committee.size();
    c.f = max_faulty(c.n);
    c.committee = std::move(committee);
    return c;
}

std::string_view to_string(NoteKind kind) {
    switch (kind) {
        case NoteKind::Drop: return "DROP_MSG";
        case NoteKind::Package: return "PACKAGE";
        case NoteKind::Decide: return "DECIDE";
        case NoteKind::EnterEpoch: return "EPOCH";
        case NoteKind::Timeout: return "TIMEOUT";
        case NoteKind::Lock: return "LOCK";
        case NoteKind::Sync: return "SYNC";
    }
    return "?";
}

void Actions::merge(Actions&& other) {
    for (auto& s : other.sends) sends.push_back(std::move(s));
    for (auto& n : other.notes) notes.push_back(std::move(n));
    if (other.timer) timer = other.timer;
}

// Mempool ------------------------------------------------------------------

bool Mempool::add(const Transaction& tx) {
    auto id = transaction_id(tx);
    if (!ids_.insert(id).second) return false;
    queue_.emplace_back(id, tx);
    return true;
}

std::vector<Transaction> Mempool::select(const WorldState& state, const KeyDirectory& keys, std::size_t max_txs) {
    std::vector<Transaction> picked;
    std::set<Hash32> picked_ids;
    std::set<Hash32> evict;
    WorldState scratch = state;

    // Out-of-order arrivals can make a later transaction valid only after an
    // earlier pass; a few passes settle typical jitter.
    for (int pass = 0; pass < 3 && picked.size() < max_txs; ++pass) {
        bool progressed = false;
        for (const auto& [id, tx] : queue_) {
            if (picked.size() >= max_txs) break;
            if (picked_ids.contains(id) || evict.contains(id)) continue;
            auto reject = execute_transaction(scratch, keys, tx);
            if (!reject) {
                picked.push_back(tx);
                picked_ids.insert(id);
                progressed = true;
            } else if (*reject == TxReject::BadSig ||
                       (*reject == TxReject::BadNonce && tx.nonce <= scratch.account(tx.sender).nonce &&
                        tx.nonce <= state.account(tx.sender).nonce)) {
                evict.insert(id);
            }
        }
        if (!progressed) break;
    }

    if (!evict.empty()) {
        std::erase_if(queue_, [&](const auto& entry) { return evict.contains(entry.first); });
        for (const auto& id : evict) ids_.erase(id);
    }
    return picked;
}

void Mempool::remove(const std::vector<Transaction>& txs) {
    if (txs.empty()) return;
    std::set<Hash32> gone;
    for (const auto& tx : txs) {
        auto id = transaction_id(tx);
        if (ids_.erase(id)) gone.insert(id);
    }
    if (!gone.empty()) std::erase_if(queue_, [&](const auto& entry) { return gone.contains(entry.first); });
}

// Replica ------------------------------------------------------------------

Replica::Replica(ConsensusConfig config, Vault vault, Ledger ledger)
    : config_(std::move(config)), vault_(std::move(vault)), ledger_(std::move(ledger)) {
    config_.n = config_.committee.size();
    config_.f = max_faulty(config_.n);
}

SimTime Replica::current_timeout() const {
    return config_.base_timeout << std::min(epochs_since_decision_, kMaxBackoffShift);
}

bool Replica::submit(const Transaction& tx) {
    auto key = ledger_.keys().find(tx.sender);
    if (key == ledger_.keys().end()) return false;
    if (tx.nonce <= ledger_.state().account(tx.sender).nonce) return false;
    if (!verify_signature(key->second, transaction_signing_bytes(tx), tx.signature)) return false;
    return mempool_.add(tx);
}

Block Replica::build_block(const std::vector<Transaction>& txs, std::uint64_t epoch) const {
    Block block;
    block.header.parent_hash = ledger_.head_hash();
    block.header.height = ledger_.height() + 1;
    block.header.epoch = epoch;
    block.header.proposer = address();
    block.header.tx_root = compute_tx_root(txs);
    WorldState scratch = ledger_.state();
    for (const auto& tx : txs) execute_transaction(scratch, ledger_.keys(), tx);
    block.header.state_root = scratch.root();
    block.transactions = txs;
    return block;
}

Vote Replica::make_vote(const Hash32& block_hash, Phase phase, std::uint64_t epoch) const {
    Vote v;
    v.voter = address();
    v.block_hash = block_hash;
    v.phase = phase;
    v.epoch = epoch;
    v.signature = vault_.sign(KeySlot::Node, vote_signing_bytes(block_hash, phase, epoch));
    return v;
}

NewEpoch Replica::make_new_epoch(std::uint64_t target) const {
    NewEpoch m;
    m.sender = address();
    m.epoch = target;
    m.highest_cert = state_.locked_cert;
    if (state_.locked_cert) {
        if (auto it = known_blocks_.find(state_.locked_cert->block_hash); it != known_blocks_.end())
            m.locked_block = it->second;
    }
    m.signature = vault_.sign(KeySlot::Node, new_epoch_signing_bytes(target, m.highest_cert));
    return m;
}

bool Replica::extends_head(const Block& block) const {
    return block.header.height == ledger_.height() + 1 && block.header.parent_hash == ledger_.head_hash();
}

void Replica::drop(Actions& a, std::string reason, const Hash32& hash) const {
    Note n;
    n.kind = NoteKind::Drop;
    n.reason = std::move(reason);
    n.hash = hash;
    n.epoch = state_.current_epoch;
    a.notes.push_back(std::move(n));
}

Actions Replica::start(SimTime now) { return enter_epoch(0, now, true); }

Actions Replica::enter_epoch(std::uint64_t epoch, SimTime now, bool after_decision) {
    if (!after_decision) ++epochs_since_decision_;
    state_.current_epoch = epoch;
    state_.current_phase = Phase::Prepare;
    state_.proposal.reset();
    state_.vote_buffer.clear();
    proposal_hash_.reset();
    acted_.clear();
    emitted_.clear();
    if (pending_proposal_ && pending_proposal_->second.epoch < epoch) pending_proposal_.reset();

    Actions a;
    Note n;
    n.kind = NoteKind::EnterEpoch;
    n.epoch = epoch;
    n.at = now;
    n.reason = after_decision ? "decided" : "advance";
    a.notes.push_back(std::move(n));

    a.merge(start_epoch(now));

    while (!future_.empty() && future_.begin()->first < epoch) future_.erase(future_.begin());
    if (auto it = future_.find(epoch); it != future_.end()) {
        auto buffered = std::move(it->second);
        future_.erase(it);
        for (const auto& [from, proposal] : buffered) {
            if (state_.current_epoch != epoch) break;
            a.merge(on_proposal(from, proposal, now));
        }
    }
    return a;
}

Actions Replica::start_epoch(SimTime now) {
    Actions a;
    timer_deadline_ = now + current_timeout();
    a.timer = timer_deadline_;
    if (is_leader()) a.merge(propose(now));
    return a;
}

Actions Replica::propose(SimTime now) {
    Actions a;
    const auto epoch = state_.current_epoch;

    std::optional<QuorumCertificate> justify = state_.locked_cert;
    if (highest_cert_ && (!justify || highest_cert_->epoch > justify->epoch)) justify = highest_cert_;
    if (justify && justify->epoch >= epoch) justify.reset();

    Block block;
    bool reproposal = false;
    if (justify) {
        if (auto it = known_blocks_.find(justify->block_hash); it != known_blocks_.end() && extends_head(it->second)) {
            block = it->second;
            reproposal = true;
        }
    }
    std::vector<Transaction> txs;
    if (!reproposal) {
        if (!config_.propose_empty_blocks && mempool_.empty()) return a;
        txs = mempool_.select(ledger_.state(), ledger_.keys(), config_.max_block_txs);
        block = build_block(txs, epoch);
    }

    const SimTime delay = reproposal ? 0 : static_cast<SimTime>(txs.size()) * config_.package_cost_per_tx;
    auto hash = block_hash(block);

    Note n;
    n.kind = NoteKind::Package;
    n.hash = hash;
    n.height = block.header.height;
    n.epoch = epoch;
    n.at = now + delay;
    n.reason = reproposal ? "reproposal" : "txs=" + std::to_string(block.transactions.size());
    for (const auto& tx : block.transactions) n.tx_ids.push_back(transaction_id(tx));
    a.notes.push_back(std::move(n));

    Proposal p{epoch, std::move(block), std::move(justify)};
    a.sends.push_back({std::nullopt, p, delay});
    if (delay > 0) {
        // Packaging is still running; the leader sees its own block when it
        // leaves, like everyone else.
        a.sends.push_back({address(), std::move(p), delay});
    } else {
        a.merge(on_proposal(address(), p, now));
    }
    return a;
}

Actions Replica::handle(const Address& from, const ConsensusMessage& msg, SimTime now) {
    return std::visit(
        [&](const auto& m) -> Actions {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Proposal>) return on_proposal(from, m, now);
            else if constexpr (std::is_same_v<T, VoteMsg>) return on_vote(from, m.vote, now);
            else if constexpr (std::is_same_v<T, CertMsg>) return on_certificate(from, m.cert, now);
            else if constexpr (std::is_same_v<T, NewEpoch>) return on_new_epoch(from, m, now);
            else if constexpr (std::is_same_v<T, SyncRequest>) return on_sync_request(from, m, now);
            else return on_sync_response(from, m, now);
        },
        msg);
}

Actions Replica::on_proposal(const Address& from, const Proposal& msg, SimTime now) {
    Actions a;
    const auto& header = msg.block.header;
    const auto epoch = state_.current_epoch;

    if (msg.epoch < epoch) {
        drop(a, "STALE");
        return a;
    }
    if (msg.epoch > epoch) {
        if (msg.epoch > epoch + kFutureEpochWindow || from != config_.committee.leader_for_epoch(msg.epoch)) {
            drop(a, "FUTURE");
            return a;
        }
        auto& slot = future_[msg.epoch];
        if (slot.size() < 2) slot.emplace_back(from, msg);
        if (header.height > ledger_.height() + 1) request_sync(a, now);
        return a;
    }
    if (from != config_.committee.leader_for_epoch(epoch)) {
        drop(a, "WRONG_LEADER");
        return a;
    }

    auto hash = block_hash(msg.block);
    if (proposal_hash_) {
        // A taller block may be legitimate once the current one is decided.
        if (*proposal_hash_ != hash && header.height > state_.proposal->header.height) pending_proposal_ = {from, msg};
        drop(a, *proposal_hash_ == hash ? "DUPLICATE" : "EQUIVOCATION", hash);
        return a;
    }
    if (header.height > ledger_.height() + 1) {
        pending_proposal_ = {from, msg};
        request_sync(a, now);
        drop(a, "BEHIND", hash);
        return a;
    }
    if (header.height != ledger_.height() + 1) {
        drop(a, "BAD_HEIGHT", hash);
        // The leader is behind; hand it what it missed.
        if (header.height >= 1 && from != address()) a.merge(on_sync_request(from, SyncRequest{header.height - 1}, now));
        return a;
    }
    if (header.parent_hash != ledger_.head_hash()) {
        drop(a, "WRONG_PARENT", hash);
        return a;
    }
    if (header.epoch > msg.epoch) {
        drop(a, "BAD_EPOCH", hash);
        return a;
    }
    if (msg.block.transactions.size() > config_.max_block_txs) {
        drop(a, "TOO_MANY_TXS", hash);
        return a;
    }
    if (compute_tx_root(msg.block.transactions) != header.tx_root) {
        drop(a, "BAD_TX_ROOT", hash);
        return a;
    }
    WorldState scratch = ledger_.state();
    for (const auto& tx : msg.block.transactions) {
        if (auto reject = execute_transaction(scratch, ledger_.keys(), tx)) {
            drop(a, "BAD_TX:" + std::string(to_string(*reject)), hash);
            return a;
        }
    }
    if (scratch.root() != header.state_root) {
        drop(a, "BAD_STATE_ROOT", hash);
        return a;
    }
    if (msg.justify) {
        const auto& j = *msg.justify;
        if (j.phase != Phase::PreCommit || j.epoch >= msg.epoch || config_.committee.verify(j) != CertCheck::Ok) {
            drop(a, "BAD_JUSTIFY", hash);
            return a;
        }
        if (!highest_cert_ || j.epoch > highest_cert_->epoch) highest_cert_ = j;
    }

    state_.proposal = msg.block;
    proposal_hash_ = hash;
    known_blocks_.emplace(hash, msg.block);
    if (pending_proposal_ && pending_proposal_->second.epoch == epoch) pending_proposal_.reset();

    // Safety rule: a lock is released only by the locked block itself or by
    // a newer PRE_COMMIT certificate for the proposed block.
    if (const auto& lock = state_.locked_cert) {
        bool same_block = lock->block_hash == hash;
        bool newer_justify = msg.justify && msg.justify->block_hash == hash && msg.justify->epoch > lock->epoch;
        if (!same_block && !newer_justify) {
            drop(a, "LOCK_CONFLICT", hash);
            return a;
        }
    }
    if (!acted_.insert(Phase::Prepare).second) return a;
    send_to_leader(a, make_vote(hash, Phase::Prepare, epoch), now);
    return a;
}

void Replica::send_to_leader(Actions& a, const Vote& vote, SimTime now) {
    const auto& leader = config_.committee.leader_for_epoch(state_.current_epoch);
    if (leader == address()) {
        a.merge(on_vote(address(), vote, now));
    } else {
        a.sends.push_back({leader, VoteMsg{vote}, 0});
    }
}

void Replica::broadcast_cert(Actions& a, const QuorumCertificate& cert, SimTime now) {
    a.sends.push_back({std::nullopt, CertMsg{cert}, 0});
    a.merge(on_certificate(address(), cert, now));
}

Actions Replica::on_vote(const Address& /*from*/, const Vote& vote, SimTime now) {
    Actions a;
    if (vote.epoch < state_.current_epoch) {
        drop(a, "STALE", vote.block_hash);
        return a;
    }
    if (vote.epoch > state_.current_epoch) {
        drop(a, "FUTURE", vote.block_hash);
        return a;
    }
    if (!is_leader()) {
        drop(a, "NOT_LEADER", vote.block_hash);
        return a;
    }
    auto key = config_.committee.public_key(vote.voter);
    if (!key) {
        drop(a, "NON_MEMBER", vote.block_hash);
        return a;
    }
    if (!proposal_hash_ || vote.block_hash != *proposal_hash_) {
        drop(a, "UNKNOWN_BLOCK", vote.block_hash);
        return a;
    }
    if (!verify_vote(vote, *key)) {
        drop(a, "BAD_SIG", vote.block_hash);
        return a;
    }
    if (emitted_.contains(vote.phase)) {
        drop(a, "LATE", vote.block_hash);
        return a;
    }
    auto& bucket = state_.vote_buffer[{vote.block_hash, vote.phase}];
    if (!bucket.emplace(vote.voter, vote.signature).second) {
        drop(a, "DUPLICATE", vote.block_hash);
        return a;
    }
    if (bucket.size() < config_.committee.quorum()) return a;

    QuorumCertificate cert;
    cert.block_hash = vote.block_hash;
    cert.phase = vote.phase;
    cert.epoch = vote.epoch;
    for (const auto& [voter, sig] : bucket) cert.voters.push_back({voter, sig});
    emitted_.insert(vote.phase);
    broadcast_cert(a, cert, now);
    return a;
}

Actions Replica::on_certificate(const Address& /*from*/, const QuorumCertificate& cert, SimTime now) {
    Actions a;
    if (auto check = config_.committee.verify(cert); check != CertCheck::Ok) {
        drop(a, "BAD_CERT:" + std::string(to_string(check)), cert.block_hash);
        return a;
    }
    if (cert.epoch < state_.current_epoch) {
        if (cert.phase == Phase::Commit) {
            auto it = known_blocks_.find(cert.block_hash);
            if (it != known_blocks_.end() && extends_head(it->second)) {
                Block block = it->second;
                apply_decision(a, block, cert, now, "catch-up");
                a.merge(retry_pending(now));
                return a;
            }
        }
        drop(a, "STALE", cert.block_hash);
        return a;
    }
    if (cert.epoch > state_.current_epoch) a.merge(enter_epoch(cert.epoch, now, false));

    const auto epoch = state_.current_epoch;
    if (cert.phase == Phase::Commit) {
        const Block* block = nullptr;
        if (proposal_hash_ && *proposal_hash_ == cert.block_hash) {
            block = &*state_.proposal;
        } else if (auto it = known_blocks_.find(cert.block_hash); it != known_blocks_.end()) {
            block = &it->second;
        }
        if (block && extends_head(*block)) {
            Block decided = *block;
            if (apply_decision(a, decided, cert, now, "commit")) a.merge(enter_epoch(epoch + 1, now, true));
            return a;
        }
        // The decision exists but this replica lacks the block: fetch it and
        // move on with the committee.
        drop(a, "UNKNOWN_BLOCK", cert.block_hash);
        request_sync(a, now);
        a.merge(enter_epoch(epoch + 1, now, false));
        return a;
    }

    if (!proposal_hash_ || *proposal_hash_ != cert.block_hash) {
        drop(a, "UNKNOWN_BLOCK", cert.block_hash);
        return a;
    }
    if (cert.phase == Phase::Prepare) {
        if (!acted_.insert(Phase::PreCommit).second) return a;
        state_.current_phase = Phase::PreCommit;
        send_to_leader(a, make_vote(cert.block_hash, Phase::PreCommit, epoch), now);
        return a;
    }

    // PRE_COMMIT certificate: lock, then vote COMMIT.
    if (!acted_.insert(Phase::Commit).second) return a;
    acted_.insert(Phase::PreCommit);
    state_.locked_cert = cert;
    lock_height_ = state_.proposal->header.height;
    state_.current_phase = Phase::Commit;
    Note n;
    n.kind = NoteKind::Lock;
    n.hash = cert.block_hash;
    n.epoch = epoch;
    n.height = lock_height_;
    n.at = now;
    a.notes.push_back(std::move(n));
    send_to_leader(a, make_vote(cert.block_hash, Phase::Commit, epoch), now);
    return a;
}

bool Replica::apply_decision(Actions& a, const Block& block, const QuorumCertificate& cert, SimTime now,
                             std::string_view source) {
    if (auto err = ledger_.append_block(block, cert)) {
        drop(a, "DECIDE_FAILED:" + std::string(to_string(*err)), cert.block_hash);
        return false;
    }
    const auto height = ledger_.height();
    Note n;
    n.kind = NoteKind::Decide;
    n.hash = cert.block_hash;
    n.height = height;
    n.epoch = cert.epoch;
    n.at = now;
    n.reason = std::string(source);
    for (const auto& tx : block.transactions) n.tx_ids.push_back(transaction_id(tx));
    a.notes.push_back(std::move(n));

    mempool_.remove(block.transactions);
    state_.last_decided_height = height;
    if (state_.proposal && state_.proposal->header.height <= height) {
        // This epoch's proposal is settled; a fresh one on the new head may
        // still come from the same leader.
        state_.proposal.reset();
        proposal_hash_.reset();
        acted_.clear();
        emitted_.clear();
        state_.vote_buffer.clear();
    }
    if (state_.locked_cert && lock_height_ <= height) state_.locked_cert.reset();
    highest_cert_.reset();
    std::erase_if(known_blocks_, [height](const auto& kv) { return kv.second.header.height <= height; });
    epochs_since_decision_ = 0;
    timer_deadline_ = now + current_timeout();
    a.timer = timer_deadline_;
    return true;
}

void Replica::request_sync(Actions& a, SimTime now) {
    const SimTime interval = config_.base_timeout / 2;
    if (last_sync_request_ && last_sync_request_->first == ledger_.height() && now - last_sync_request_->second < interval)
        return;
    last_sync_request_ = {ledger_.height(), now};
    a.sends.push_back({std::nullopt, SyncRequest{ledger_.height()}, 0});
    Note n;
    n.kind = NoteKind::Sync;
    n.height = ledger_.height();
    n.epoch = state_.current_epoch;
    n.at = now;
    n.reason = "request";
    a.notes.push_back(std::move(n));
}

Actions Replica::retry_pending(SimTime now) {
    Actions a;
    if (!pending_proposal_ || pending_proposal_->second.epoch != state_.current_epoch || proposal_hash_) return a;
    auto pending = std::move(*pending_proposal_);
    pending_proposal_.reset();
    a.merge(on_proposal(pending.first, pending.second, now));
    return a;
}

Actions Replica::on_sync_request(const Address& from, const SyncRequest& msg, SimTime /*now*/) {
    Actions a;
    if (msg.from_height >= ledger_.height()) return a;
    SyncResponse resp;
    auto last = std::min<std::uint64_t>(ledger_.height(), msg.from_height + kSyncBatch);
    for (auto h = msg.from_height + 1; h <= last; ++h) resp.blocks.push_back(ledger_.block_at(h));
    a.sends.push_back({from, std::move(resp), 0});
    return a;
}

Actions Replica::on_sync_response(const Address& /*from*/, const SyncResponse& msg, SimTime now) {
    Actions a;
    std::optional<std::uint64_t> newest_epoch;
    std::optional<QuorumCertificate> own_decided;
    std::size_t seen = 0;
    for (const auto& block : msg.blocks) {
        if (++seen > kMaxSyncBlocks) break;
        if (block.header.height <= ledger_.height()) continue;
        if (!block.header.commit_certificate) {
            drop(a, "BAD_SYNC");
            break;
        }
        auto cert = *block.header.commit_certificate;
        const bool was_proposal = proposal_hash_ && *proposal_hash_ == cert.block_hash;
        if (!apply_decision(a, block, cert, now, "sync")) break;
        if (was_proposal && is_leader()) own_decided = cert;
        newest_epoch = std::max(newest_epoch.value_or(0), cert.epoch);
    }
    // Replicas that voted for this leader's proposal learn it was decided.
    if (own_decided) a.sends.push_back({std::nullopt, CertMsg{*own_decided}, 0});
    if (newest_epoch && *newest_epoch >= state_.current_epoch) {
        a.merge(enter_epoch(*newest_epoch + 1, now, true));
    } else if (newest_epoch && is_leader() && !state_.proposal) {
        // The proposal for this epoch went out stale; propose on the new head.
        a.merge(propose(now));
    } else {
        a.merge(retry_pending(now));
    }
    return a;
}

Actions Replica::on_timeout(SimTime now) {
    Actions a;
    if (!timer_deadline_ || now < *timer_deadline_) return a;

    const auto target = state_.current_epoch + 1;
    Note n;
    n.kind = NoteKind::Timeout;
    n.epoch = state_.current_epoch;
    n.at = now;
    a.notes.push_back(std::move(n));

    sent_new_epoch_target_ = std::max(sent_new_epoch_target_, target);
    auto& own = new_epoch_targets_[address()];
    own = std::max(own, target);
    a.sends.push_back({std::nullopt, make_new_epoch(target), 0});

    timer_deadline_ = now + current_timeout();
    a.timer = timer_deadline_;
    a.merge(evaluate_new_epochs(now));
    return a;
}

Actions Replica::on_new_epoch(const Address& from, const NewEpoch& msg, SimTime now) {
    Actions a;
    if (from != msg.sender) {
        drop(a, "BAD_SENDER");
        return a;
    }
    auto key = config_.committee.public_key(msg.sender);
    if (!key) {
        drop(a, "NON_MEMBER");
        return a;
    }
    if (!verify_signature(*key, new_epoch_signing_bytes(msg.epoch, msg.highest_cert), msg.signature)) {
        drop(a, "BAD_SIG");
        return a;
    }
    if (msg.highest_cert) {
        const auto& cert = *msg.highest_cert;
        if (cert.phase != Phase::PreCommit || config_.committee.verify(cert) != CertCheck::Ok) {
            drop(a, "BAD_CERT", cert.block_hash);
            return a;
        }
        if (msg.locked_block && block_hash(*msg.locked_block) == cert.block_hash && extends_head(*msg.locked_block))
            known_blocks_.emplace(cert.block_hash, *msg.locked_block);
        if (!highest_cert_ || cert.epoch > highest_cert_->epoch) highest_cert_ = cert;
    }
    if (msg.epoch <= state_.current_epoch) return a;

    auto& target = new_epoch_targets_[msg.sender];
    target = std::max(target, msg.epoch);
    a.merge(evaluate_new_epochs(now));
    return a;
}

Actions Replica::evaluate_new_epochs(SimTime now) {
    Actions a;
    for (;;) {
        std::vector<std::uint64_t> targets;
        for (const auto& [sender, t] : new_epoch_targets_) {
            if (t > state_.current_epoch) targets.push_back(t);
        }
        std::sort(targets.begin(), targets.end(), std::greater<>());

        // f+1 replicas moving on means at least one honest one timed out.
        if (targets.size() >= config_.f + 1) {
            auto t = targets[config_.f];
            if (t > sent_new_epoch_target_) {
                sent_new_epoch_target_ = t;
                auto& own = new_epoch_targets_[address()];
                own = std::max(own, t);
                a.sends.push_back({std::nullopt, make_new_epoch(t), 0});
                continue;
            }
        }
        auto quorum = config_.committee.quorum();
        if (targets.size() >= quorum) a.merge(enter_epoch(targets[quorum - 1], now, false));
        return a;
    }
}

}  // namespace trustchain
