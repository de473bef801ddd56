#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace trustchain;
using namespace trustchain::testing;

namespace {

constexpr SimTime kBase = milliseconds(200);

const Address& member(const Fixture& fx, std::size_t i) { return fx.committee.members()[i].address; }

Proposal proposal_for(const Fixture& fx, const Block& block, std::uint64_t epoch,
                      std::optional<QuorumCertificate> justify = std::nullopt) {
    return Proposal{epoch, block, std::move(justify)};
}

/// Drives `r` (not member 0) to a PRE_COMMIT lock on `block` in epoch 0.
void lock_on(const Fixture& fx, Replica& r, const Block& block) {
    auto h = block_hash(block);
    r.on_proposal(member(fx, 0), proposal_for(fx, block, 0), 0);
    r.on_certificate(member(fx, 0), fx.cert(h, Phase::Prepare, 0, fx.committee.quorum()), 1);
    r.on_certificate(member(fx, 0), fx.cert(h, Phase::PreCommit, 0, fx.committee.quorum()), 2);
}

/// Moves `r` to `epoch` via NewEpoch messages from the first quorum members
/// other than r.
Actions advance_to(const Fixture& fx, Replica& r, std::uint64_t epoch, SimTime now) {
    Actions all;
    std::size_t sent = 0;
    for (std::size_t i = 0; i < fx.committee.size() && sent < fx.committee.quorum(); ++i) {
        if (member(fx, i) == r.address()) continue;
        auto peer = fx.replica(i);
        all.merge(r.on_new_epoch(member(fx, i), peer.make_new_epoch(epoch), now));
        ++sent;
    }
    return all;
}

}  // namespace

TEST(StartEpoch, LeaderPackagesMempoolInOrder) {
    Fixture fx(4);
    auto config = ConsensusConfig::for_committee(fx.committee);
    config.max_block_txs = 2000;
    auto leader = fx.replica(0, config);
    std::vector<Transaction> txs;
    for (std::uint64_t n = 1; n <= 3; ++n) {
        txs.push_back(fx.transfer(n, n, member(fx, 1)));
        ASSERT_TRUE(leader.submit(txs.back()));
    }
    auto a = leader.start(0);
    auto proposals = sent<Proposal>(a);
    ASSERT_FALSE(proposals.empty());
    const auto& p = *proposals.front();
    EXPECT_EQ(p.block.transactions, txs);
    EXPECT_EQ(p.block.header.height, 1u);
    EXPECT_EQ(p.block.header.parent_hash, leader.ledger().head_hash());
    EXPECT_EQ(p.epoch, 0u);
    EXPECT_FALSE(a.sends.front().to);  // broadcast
    auto package = std::find_if(a.notes.begin(), a.notes.end(), [](const Note& n) { return n.kind == NoteKind::Package; });
    ASSERT_NE(package, a.notes.end());
    EXPECT_EQ(package->tx_ids.size(), 3u);
    EXPECT_EQ(a.timer, kBase);
}

TEST(StartEpoch, EmptyMempoolGivesEmptyBlock) {
    Fixture fx(4);
    auto leader = fx.replica(0);
    auto a = leader.start(0);
    auto proposals = sent<Proposal>(a);
    ASSERT_EQ(proposals.size(), 1u);
    EXPECT_TRUE(proposals.front()->block.transactions.empty());
}

TEST(StartEpoch, NonLeaderOnlyArmsTimer) {
    Fixture fx(4);
    auto r = fx.replica(1);
    auto a = r.start(1000);
    EXPECT_TRUE(a.sends.empty());
    EXPECT_EQ(a.timer, 1000 + kBase);
    EXPECT_EQ(r.timer_deadline(), 1000 + kBase);
}

TEST(OnProposal, ValidProposalGetsPrepareVoteToLeader) {
    Fixture fx(4);
    auto r = fx.replica(1);
    r.start(0);
    auto block = fx.next_block(r.ledger(), {fx.transfer(1, 5, member(fx, 2))}, 0);
    auto a = r.on_proposal(member(fx, 0), proposal_for(fx, block, 0), 5);
    auto votes = sent<VoteMsg>(a);
    ASSERT_EQ(votes.size(), 1u);
    EXPECT_EQ(a.sends.front().to, member(fx, 0));
    const auto& v = votes.front()->vote;
    EXPECT_EQ(v.phase, Phase::Prepare);
    EXPECT_EQ(v.block_hash, block_hash(block));
    EXPECT_TRUE(verify_vote(v, *fx.committee.public_key(r.address())));
}

TEST(OnProposal, RejectionReasons) {
    Fixture fx(4);
    auto r = fx.replica(1);
    r.start(0);
    auto good = fx.next_block(r.ledger(), {fx.transfer(1, 5, member(fx, 2))}, 0);

    EXPECT_TRUE(has_drop(r.on_proposal(member(fx, 2), proposal_for(fx, good, 0), 1), "WRONG_LEADER"));

    auto wrong_parent = good;
    wrong_parent.header.parent_hash.bytes[0] ^= 1;
    EXPECT_TRUE(has_drop(r.on_proposal(member(fx, 0), proposal_for(fx, wrong_parent, 0), 1), "WRONG_PARENT"));

    auto bad_root = good;
    bad_root.header.tx_root.bytes[0] ^= 1;
    EXPECT_TRUE(has_drop(r.on_proposal(member(fx, 0), proposal_for(fx, bad_root, 0), 1), "BAD_TX_ROOT"));

    auto bad_state = good;
    bad_state.header.state_root.bytes[0] ^= 1;
    EXPECT_TRUE(has_drop(r.on_proposal(member(fx, 0), proposal_for(fx, bad_state, 0), 1), "BAD_STATE_ROOT"));

    auto bad_tx = fx.next_block(r.ledger(), {fx.transfer(2, 5, member(fx, 2))}, 0);
    EXPECT_TRUE(has_drop(r.on_proposal(member(fx, 0), proposal_for(fx, bad_tx, 0), 1), "BAD_TX:BAD_NONCE"));

    auto a = r.on_proposal(member(fx, 0), proposal_for(fx, good, 0), 1);
    EXPECT_EQ(sent<VoteMsg>(a).size(), 1u);
    EXPECT_TRUE(has_drop(r.on_proposal(member(fx, 0), proposal_for(fx, good, 0), 1), "DUPLICATE"));
}

TEST(OnProposal, MalformedInputNeverThrows) {
    Fixture fx(4);
    auto r = fx.replica(1);
    r.start(0);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 300; ++i) {
        auto block = random_block(rng);
        std::optional<QuorumCertificate> justify;
        if (rng() % 2) justify = random_cert(rng);
        EXPECT_NO_THROW(r.on_proposal(member(fx, rng() % 4), Proposal{rng() % 3, block, justify}, 1));
        EXPECT_NO_THROW(r.on_certificate(member(fx, 0), random_cert(rng), 1));
    }
    EXPECT_EQ(r.ledger().height(), 0u);
}

TEST(SafetyRule, LockConflictWithoutHigherJustify) {
    Fixture fx(4);
    auto locked_replica = [&] {
        auto r = fx.replica(2);
        r.start(0);
        lock_on(fx, r, fx.next_block(r.ledger(), {fx.transfer(1, 1, member(fx, 3))}, 0));
        advance_to(fx, r, 1, 10);
        return r;
    };
    auto r = locked_replica();
    ASSERT_TRUE(r.state().locked_cert);
    ASSERT_EQ(r.state().current_epoch, 1u);
    auto x_hash = r.state().locked_cert->block_hash;
    auto y = fx.next_block(r.ledger(), {fx.transfer(1, 2, member(fx, 3))}, 1);
    ASSERT_NE(block_hash(y), x_hash);

    auto a = r.on_proposal(member(fx, 1), proposal_for(fx, y, 1), 11);
    EXPECT_TRUE(has_drop(a, "LOCK_CONFLICT"));
    EXPECT_TRUE(sent<VoteMsg>(a).empty());

    // A justify no newer than the lock does not release it either.
    auto r2 = locked_replica();
    auto same_epoch = fx.cert(block_hash(y), Phase::PreCommit, 0, 3);
    auto b = r2.on_proposal(member(fx, 1), proposal_for(fx, y, 1, same_epoch), 12);
    EXPECT_TRUE(has_drop(b, "LOCK_CONFLICT"));
    EXPECT_TRUE(sent<VoteMsg>(b).empty());
}

TEST(SafetyRule, LockedBlockReproposedGetsVote) {
    Fixture fx(4);
    auto r = fx.replica(2);
    r.start(0);
    auto x = fx.next_block(r.ledger(), {fx.transfer(1, 1, member(fx, 3))}, 0);
    lock_on(fx, r, x);
    advance_to(fx, r, 1, 10);
    auto a = r.on_proposal(member(fx, 1), proposal_for(fx, x, 1, r.state().locked_cert), 11);
    EXPECT_EQ(sent<VoteMsg>(a).size(), 1u);
}

TEST(SafetyRule, HigherJustifyUnlocks) {
    Fixture fx(4);
    auto r = fx.replica(3);
    r.start(0);
    auto x = fx.next_block(r.ledger(), {fx.transfer(1, 1, member(fx, 3))}, 0);
    lock_on(fx, r, x);
    advance_to(fx, r, 2, 10);
    ASSERT_EQ(r.state().current_epoch, 2u);
    auto y = fx.next_block(r.ledger(), {fx.transfer(1, 2, member(fx, 3))}, 1);
    auto newer = fx.cert(block_hash(y), Phase::PreCommit, 1, 3);
    auto a = r.on_proposal(member(fx, 2), proposal_for(fx, y, 2, newer), 11);
    EXPECT_EQ(sent<VoteMsg>(a).size(), 1u) << (a.notes.empty() ? "" : a.notes.front().reason);
}

TEST(OnVote, FourthDistinctVoteFormsCertificateAtFive) {
    Fixture fx(5);
    ASSERT_EQ(fx.committee.quorum(), 4u);
    auto leader = fx.replica(0);
    auto start = leader.start(0);
    auto h = block_hash(sent<Proposal>(start).front()->block);
    // The leader's own PREPARE vote is already buffered.
    const auto key = std::pair{h, Phase::Prepare};
    EXPECT_EQ(leader.state().vote_buffer.at(key).size(), 1u);

    EXPECT_TRUE(sent<CertMsg>(leader.on_vote(member(fx, 1), fx.vote(1, h, Phase::Prepare, 0), 1)).empty());
    auto dup = leader.on_vote(member(fx, 1), fx.vote(1, h, Phase::Prepare, 0), 1);
    EXPECT_TRUE(sent<CertMsg>(dup).empty());
    EXPECT_TRUE(has_drop(dup, "DUPLICATE"));
    EXPECT_EQ(leader.state().vote_buffer.at(key).size(), 2u);
    EXPECT_TRUE(sent<CertMsg>(leader.on_vote(member(fx, 2), fx.vote(2, h, Phase::Prepare, 0), 1)).empty());

    auto a = leader.on_vote(member(fx, 3), fx.vote(3, h, Phase::Prepare, 0), 2);
    auto certs = sent<CertMsg>(a);
    ASSERT_EQ(certs.size(), 1u);
    const auto& cert = certs.front()->cert;
    EXPECT_EQ(cert.phase, Phase::Prepare);
    EXPECT_EQ(cert.voters.size(), 4u);
    EXPECT_EQ(fx.committee.verify(cert), CertCheck::Ok);

    auto late = leader.on_vote(member(fx, 4), fx.vote(4, h, Phase::Prepare, 0), 3);
    EXPECT_TRUE(sent<CertMsg>(late).empty());
}

TEST(OnVote, RejectsBadVotes) {
    Fixture fx(4);
    auto leader = fx.replica(0);
    auto start = leader.start(0);
    auto h = block_hash(sent<Proposal>(start).front()->block);

    auto forged = fx.vote(1, h, Phase::Prepare, 0);
    forged.signature.bytes[0] ^= 1;
    EXPECT_TRUE(has_drop(leader.on_vote(member(fx, 1), forged, 1), "BAD_SIG"));

    auto stranger = make_vault(99);
    Vote outsider{stranger.address(), h, Phase::Prepare, 0,
                  stranger.sign(KeySlot::Node, vote_signing_bytes(h, Phase::Prepare, 0))};
    EXPECT_TRUE(has_drop(leader.on_vote(stranger.address(), outsider, 1), "NON_MEMBER"));

    Hash32 unknown;
    unknown.bytes[3] = 1;
    EXPECT_TRUE(has_drop(leader.on_vote(member(fx, 1), fx.vote(1, unknown, Phase::Prepare, 0), 1), "UNKNOWN_BLOCK"));

    auto follower = fx.replica(1);
    follower.start(0);
    EXPECT_TRUE(has_drop(follower.on_vote(member(fx, 2), fx.vote(2, h, Phase::Prepare, 0), 1), "NOT_LEADER"));
}

TEST(OnCertificate, PhaseProgressionAndDecision) {
    Fixture fx(5);
    auto r = fx.replica(1);
    r.start(0);
    auto block = fx.next_block(r.ledger(), {fx.transfer(1, 7, member(fx, 2))}, 0);
    auto h = block_hash(block);
    r.on_proposal(member(fx, 0), proposal_for(fx, block, 0), 1);

    auto a = r.on_certificate(member(fx, 0), fx.cert(h, Phase::Prepare, 0, 4), 2);
    ASSERT_EQ(sent<VoteMsg>(a).size(), 1u);
    EXPECT_EQ(sent<VoteMsg>(a).front()->vote.phase, Phase::PreCommit);
    EXPECT_EQ(r.state().current_phase, Phase::PreCommit);

    auto precommit = fx.cert(h, Phase::PreCommit, 0, 4);
    a = r.on_certificate(member(fx, 0), precommit, 3);
    EXPECT_EQ(r.state().locked_cert, precommit);
    EXPECT_EQ(sent<VoteMsg>(a).front()->vote.phase, Phase::Commit);

    auto commit = fx.cert(h, Phase::Commit, 0, 4);
    a = r.on_certificate(member(fx, 0), commit, 4);
    EXPECT_EQ(r.ledger().height(), 1u);
    EXPECT_EQ(r.ledger().head_hash(), h);
    EXPECT_EQ(r.ledger().head().header.commit_certificate, commit);
    EXPECT_EQ(r.state().current_epoch, 1u);
    EXPECT_EQ(r.state().last_decided_height, 1u);
    EXPECT_FALSE(r.state().locked_cert);
}

TEST(OnCertificate, BelowThresholdAndStale) {
    Fixture fx(5);
    auto r = fx.replica(1);
    r.start(0);
    auto block = fx.next_block(r.ledger(), {}, 0);
    auto h = block_hash(block);
    r.on_proposal(member(fx, 0), proposal_for(fx, block, 0), 1);
    auto a = r.on_certificate(member(fx, 0), fx.cert(h, Phase::Prepare, 0, 3), 2);
    EXPECT_TRUE(has_drop(a, "BAD_CERT"));
    EXPECT_EQ(r.state().current_phase, Phase::Prepare);

    r.on_certificate(member(fx, 0), fx.cert(h, Phase::Commit, 0, 4), 3);
    ASSERT_EQ(r.state().current_epoch, 1u);
    EXPECT_TRUE(has_drop(r.on_certificate(member(fx, 0), fx.cert(h, Phase::Prepare, 0, 4), 4), "STALE"));
}

TEST(LockMonotonicity, LockEpochNeverDecreases) {
    Fixture fx(4);
    auto r = fx.replica(3);
    r.start(0);
    auto x = fx.next_block(r.ledger(), {}, 0);
    lock_on(fx, r, x);
    advance_to(fx, r, 2, 10);
    auto lock_epoch = r.state().locked_cert->epoch;
    // An older PRE_COMMIT certificate for another block arrives late.
    auto y = fx.next_block(r.ledger(), {fx.transfer(1, 1, member(fx, 0))}, 0);
    r.on_certificate(member(fx, 0), fx.cert(block_hash(y), Phase::PreCommit, 0, 3), 11);
    ASSERT_TRUE(r.state().locked_cert);
    EXPECT_GE(r.state().locked_cert->epoch, lock_epoch);
    EXPECT_EQ(r.state().locked_cert->block_hash, block_hash(x));
}

TEST(Pacemaker, TimeoutBroadcastsSignedNewEpoch) {
    Fixture fx(4);
    auto r = fx.replica(1);
    r.start(0);
    EXPECT_TRUE(r.on_timeout(kBase - 1).sends.empty());
    auto a = r.on_timeout(kBase);
    auto msgs = sent<NewEpoch>(a);
    ASSERT_EQ(msgs.size(), 1u);
    const auto& m = *msgs.front();
    EXPECT_EQ(m.epoch, 1u);
    EXPECT_EQ(m.sender, r.address());
    EXPECT_TRUE(verify_signature(*fx.committee.public_key(r.address()), new_epoch_signing_bytes(1, m.highest_cert),
                                 m.signature));
    EXPECT_EQ(r.state().current_epoch, 0u);
}

TEST(Pacemaker, QuorumOfNewEpochEntersNextEpoch) {
    Fixture fx(4);
    auto r = fx.replica(2);
    r.start(0);
    r.on_timeout(kBase);
    auto peer0 = fx.replica(0);
    r.on_new_epoch(member(fx, 0), peer0.make_new_epoch(1), kBase + 1);
    EXPECT_EQ(r.state().current_epoch, 0u);
    auto peer1 = fx.replica(1);
    r.on_new_epoch(member(fx, 1), peer1.make_new_epoch(1), kBase + 2);
    EXPECT_EQ(r.state().current_epoch, 1u);
}

TEST(Pacemaker, RejectsForgedNewEpoch) {
    Fixture fx(4);
    auto r = fx.replica(2);
    r.start(0);
    auto m = fx.replica(0).make_new_epoch(1);
    EXPECT_TRUE(has_drop(r.on_new_epoch(member(fx, 1), m, 1), "BAD_SENDER"));
    m.epoch = 5;
    EXPECT_TRUE(has_drop(r.on_new_epoch(member(fx, 0), m, 1), "BAD_SIG"));
}

TEST(Pacemaker, BackoffDoublesPerAdvanceAndResetsOnDecision) {
    Fixture fx(4);
    auto r = fx.replica(3);
    r.start(0);
    EXPECT_EQ(r.current_timeout(), kBase);
    advance_to(fx, r, 1, 10);
    EXPECT_EQ(r.current_timeout(), 2 * kBase);
    EXPECT_EQ(r.timer_deadline(), 10 + 2 * kBase);
    advance_to(fx, r, 2, 20);
    EXPECT_EQ(r.state().current_epoch, 2u);
    EXPECT_EQ(r.current_timeout(), 4 * kBase);

    auto block = fx.next_block(r.ledger(), {}, 2);
    auto h = block_hash(block);
    r.on_proposal(member(fx, 2), proposal_for(fx, block, 2), 30);
    r.on_certificate(member(fx, 2), fx.cert(h, Phase::Commit, 2, 3), 40);
    EXPECT_EQ(r.ledger().height(), 1u);
    EXPECT_EQ(r.current_timeout(), kBase);
}

TEST(Pacemaker, DecisionBeforeTimeoutSuppressesNewEpoch) {
    Fixture fx(4);
    auto r = fx.replica(1);
    r.start(0);
    auto block = fx.next_block(r.ledger(), {}, 0);
    r.on_proposal(member(fx, 0), proposal_for(fx, block, 0), 10);
    r.on_certificate(member(fx, 0), fx.cert(block_hash(block), Phase::Commit, 0, 3), 50);
    ASSERT_EQ(r.state().current_epoch, 1u);
    auto a = r.on_timeout(kBase);
    EXPECT_TRUE(sent<NewEpoch>(a).empty());
}

TEST(Mempool, ArrivalOrderDedupAndEviction) {
    Fixture fx(4);
    auto ledger = fx.ledger();
    Mempool pool;
    auto t1 = fx.transfer(1, 1, member(fx, 0));
    auto t2 = fx.transfer(2, 1, member(fx, 0));
    auto t3 = fx.transfer(3, 1, member(fx, 0));
    EXPECT_TRUE(pool.add(t2));
    EXPECT_TRUE(pool.add(t1));
    EXPECT_FALSE(pool.add(t1));
    EXPECT_TRUE(pool.add(t3));
    auto forged = t3;
    forged.kind = Transfer{member(fx, 1), 1};
    EXPECT_TRUE(pool.add(forged));

    auto picked = pool.select(ledger.state(), ledger.keys(), 10);
    EXPECT_EQ(picked, (std::vector<Transaction>{t1, t2, t3}));
    EXPECT_FALSE(pool.contains(transaction_id(forged)));
    EXPECT_EQ(pool.select(ledger.state(), ledger.keys(), 2).size(), 2u);
    pool.remove({t1, t2});
    EXPECT_EQ(pool.size(), 1u);
}

TEST(Messages, EncodingRoundTrip) {
    Fixture fx(4);
    std::mt19937_64 rng(40);
    auto r = fx.replica(0);
    std::vector<ConsensusMessage> msgs{
        Proposal{3, random_block(rng), random_cert(rng)},
        VoteMsg{fx.vote(1, random_fixed<Hash32>(rng), Phase::Commit, 9)},
        CertMsg{random_cert(rng)},
        r.make_new_epoch(4),
        SyncRequest{17},
        SyncResponse{{random_block(rng), random_block(rng)}},
    };
    for (const auto& m : msgs) {
        Writer w;
        write(w, m);
        Reader rd(w.bytes());
        ConsensusMessage back;
        read(rd, back);
        rd.expect_end();
        EXPECT_EQ(back, m) << message_kind(m);
    }
}
