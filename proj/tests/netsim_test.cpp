#include <gtest/gtest.h>

#include "test_support.hpp"
#include "trustchain/netsim.hpp"

using namespace trustchain;
using namespace trustchain::testing;

namespace {

ClusterSpec honest_spec(std::uint32_t validators, std::uint64_t seed) {
    ClusterSpec spec;
    spec.validators = validators;
    spec.seed = seed;
    return spec;
}

std::uint64_t message_id(const TraceRecord& r) {
    auto hash = r.reason.find('#');
    return std::stoull(r.reason.substr(hash + 1));
}

TraceRecord decide(SimTime t, NodeId node, std::uint64_t height, std::uint8_t tag) {
    Hash32 h;
    h.bytes[0] = tag;
    return {t, "DECIDE", node, kNoNode, h, "height=" + std::to_string(height) + ";epoch=0;cert"};
}

TraceRecord node_line(NodeId id, std::string role) { return {0, "NODE", id, kNoNode, std::nullopt, std::move(role)}; }

}  // namespace

TEST(Determinism, SameSeedSameTrace) {
    auto spec = honest_spec(5, 42);
    spec.link.jitter_ms = 20;
    spec.link.drop_probability = 0.05;
    auto a = run(spec, milliseconds(1500));
    auto b = run(spec, milliseconds(1500));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.serialize(), b.serialize());
    spec.seed = 43;
    EXPECT_NE(run(spec, milliseconds(1500)).serialize(), a.serialize());
}

TEST(Determinism, ChunkedRunMatchesSingleRun) {
    auto spec = honest_spec(4, 9);
    auto whole = build_cluster(spec);
    whole.sim->run_until(milliseconds(900));
    auto chunked = build_cluster(spec);
    chunked.sim->run_until(milliseconds(300));
    chunked.sim->run_until(milliseconds(900));
    auto strip_end = [](TraceLog t) {
        std::erase_if(t.records, [](const TraceRecord& r) { return r.kind == "END"; });
        return t;
    };
    EXPECT_EQ(strip_end(whole.sim->trace()), strip_end(chunked.sim->trace()));
}

TEST(Trace, SerializeParseRoundTrip) {
    auto trace = run(honest_spec(4, 1), milliseconds(500));
    auto text = trace.serialize();
    EXPECT_EQ(TraceLog::parse(text), trace);
    auto first = text.substr(0, text.find('\n'));
    EXPECT_EQ(std::count(first.begin(), first.end(), ','), 5);
    EXPECT_THROW(TraceLog::parse("1.000,SEND,0\n"), std::invalid_argument);
}

TEST(Trace, ConservationOfMessages) {
    auto spec = honest_spec(5, 3);
    spec.link.drop_probability = 0.1;
    spec.link.jitter_ms = 30;
    auto trace = run(spec, milliseconds(2000));
    std::map<std::uint64_t, int> sends, delivers, drops;
    for (const auto& r : trace.records) {
        if (r.kind == "SEND") ++sends[message_id(r)];
        else if (r.kind == "DELIVER") ++delivers[message_id(r)];
        else if (r.kind == "DROP") ++drops[message_id(r)];
    }
    ASSERT_FALSE(delivers.empty());
    ASSERT_FALSE(drops.empty());
    for (const auto& [id, n] : sends) EXPECT_EQ(n, 1);
    for (const auto& [id, n] : delivers) {
        EXPECT_EQ(n, 1);
        EXPECT_TRUE(sends.contains(id));
        EXPECT_FALSE(drops.contains(id));
    }
    for (const auto& [id, n] : drops) EXPECT_TRUE(sends.contains(id));
}

TEST(Trace, EventsInTimeOrder) {
    auto trace = run(honest_spec(4, 2), milliseconds(800));
    for (std::size_t i = 1; i < trace.records.size(); ++i)
        ASSERT_LE(trace.records[i - 1].time, trace.records[i].time);
}

TEST(Partition, NoCrossDeliveries) {
    auto cluster = build_cluster(honest_spec(6, 5));
    std::vector<NodeId> a{0, 1, 2}, b{3, 4, 5};
    cluster.sim->partition(a, b);
    cluster.sim->run_until(milliseconds(1500));
    const auto& trace = cluster.sim->trace();
    std::size_t cross_drops = 0;
    for (const auto& r : trace.records) {
        const bool cross = r.src != kNoNode && r.dst != kNoNode && ((r.src < 3) != (r.dst < 3));
        if (r.kind == "DELIVER") EXPECT_FALSE(cross) << r.src << "->" << r.dst;
        if (r.kind == "DROP" && cross) ++cross_drops;
        // Neither side holds a quorum of 5 out of 6.
        EXPECT_NE(r.kind, "DECIDE");
    }
    EXPECT_GT(cross_drops, 0u);
}

TEST(Checkers, SafetyOnSyntheticTraces) {
    TraceLog t;
    t.records = {node_line(0, "validator"), node_line(1, "validator"), node_line(2, "byzantine:Equivocate"),
                 decide(10, 0, 1, 1), decide(11, 1, 1, 1), decide(12, 2, 1, 9)};
    EXPECT_TRUE(check_safety(t).ok);
    t.records.push_back(decide(20, 0, 2, 3));
    t.records.push_back(decide(21, 1, 2, 4));
    t.records.push_back(decide(30, 1, 5, 5));
    t.records.push_back(decide(31, 0, 5, 6));
    auto verdict = check_safety(t);
    EXPECT_FALSE(verdict.ok);
    EXPECT_EQ(verdict.violating_heights, (std::vector<std::uint64_t>{2, 5}));
}

TEST(Checkers, LivenessOnSyntheticTraces) {
    TraceLog t;
    t.records = {node_line(0, "validator"), node_line(1, "validator"), node_line(2, "byzantine:Silent"),
                 decide(milliseconds(100), 0, 1, 1), decide(milliseconds(120), 1, 1, 1),
                 decide(milliseconds(400), 0, 2, 2), decide(milliseconds(450), 1, 2, 2),
                 {milliseconds(600), "END", kNoNode, kNoNode, std::nullopt, "messages=0"}};
    EXPECT_TRUE(check_liveness(t, milliseconds(350)).ok);
    auto v = check_liveness(t, milliseconds(250));
    EXPECT_FALSE(v.ok);
    EXPECT_EQ(v.stalled_node, 0u);
    EXPECT_EQ(v.stalled_from, milliseconds(100));
}

TEST(Run, HonestOnlyPassesBothCheckers) {
    auto trace = run(honest_spec(5, 11), milliseconds(3000));
    EXPECT_TRUE(check_safety(trace).ok);
    EXPECT_TRUE(check_liveness(trace, milliseconds(200)).ok);
}

TEST(Run, EquivocatingLeaderAtFiveIsSafe) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto spec = honest_spec(5, seed);
        spec.byzantine = 1;
        spec.strategy.kind = ByzantineStrategy::Kind::Equivocate;
        auto trace = run(spec, milliseconds(2000));
        auto verdict = check_safety(trace);
        EXPECT_TRUE(verdict.ok) << "seed " << seed;
        EXPECT_TRUE(check_liveness(trace, milliseconds(1500)).ok) << "seed " << seed;
    }
}

TEST(Run, SilentLeaderRecoveredByPacemaker) {
    auto spec = honest_spec(5, 1);
    spec.byzantine = 1;
    spec.strategy.kind = ByzantineStrategy::Kind::Silent;
    auto cluster = build_cluster(spec);
    cluster.sim->run_until(milliseconds(3000));
    const auto& trace = cluster.sim->trace();
    EXPECT_TRUE(check_safety(trace).ok);
    // One silent epoch costs one base timeout plus a few hops.
    EXPECT_TRUE(check_liveness(trace, milliseconds(400)).ok);
    std::size_t timeouts = 0;
    for (const auto& r : trace.records) timeouts += r.kind == "TIMEOUT";
    EXPECT_GT(timeouts, 0u);
}

TEST(Run, EveryStrategyIsSafeAtSeven) {
    for (auto kind : all_strategy_kinds()) {
        for (std::uint64_t seed = 1; seed <= 4; ++seed) {
            auto spec = honest_spec(7, seed);
            spec.byzantine = 2;
            spec.strategy.kind = kind;
            spec.link.jitter_ms = 40;
            spec.link.drop_probability = 0.05;
            EXPECT_TRUE(check_safety(run(spec, milliseconds(1500))).ok)
                << ByzantineStrategy{kind}.name() << " seed " << seed;
        }
    }
}

TEST(Ledger, HonestReplicasAgreeAndReplayMatches) {
    auto spec = honest_spec(5, 21);
    spec.byzantine = 1;
    spec.strategy.kind = ByzantineStrategy::Kind::RandomJunk;
    auto cluster = build_cluster(spec);
    cluster.sim->run_until(milliseconds(2000));
    std::map<std::uint64_t, Hash32> root_at_height;
    const Ledger* longest = nullptr;
    for (auto id : cluster.validator_ids()) {
        if (cluster.identities[id].faulty) continue;
        const auto& l = cluster.validator(id)->replica().ledger();
        auto [it, fresh] = root_at_height.emplace(l.height(), l.state().root());
        if (!fresh) EXPECT_EQ(it->second, l.state().root());
        if (!longest || l.height() > longest->height()) longest = &l;
        for (std::uint64_t h = 1; h <= l.height(); ++h) {
            const auto& cert = l.block_at(h).header.commit_certificate;
            ASSERT_TRUE(cert);
            EXPECT_EQ(cert->phase, Phase::Commit);
            EXPECT_EQ(l.committee().verify(*cert), CertCheck::Ok);
        }
    }
    ASSERT_NE(longest, nullptr);
    ASSERT_GT(longest->height(), 5u);
    auto fresh = cluster.genesis_ledger();
    std::vector<Block> decided(longest->blocks().begin() + 1, longest->blocks().end());
    EXPECT_EQ(replay_blocks(fresh, decided), std::nullopt);
    EXPECT_EQ(fresh.head_hash(), longest->head_hash());
    EXPECT_EQ(fresh.state().root(), longest->state().root());
}

TEST(Cluster, FaultyCountAndRoles) {
    auto spec = honest_spec(7, 8);
    spec.nodes = 10;
    spec.byzantine = 2;
    auto cluster = build_cluster(spec);
    EXPECT_EQ(cluster.validator_ids().size(), 7u);
    EXPECT_EQ(cluster.client_ids().size(), 3u);
    EXPECT_EQ(cluster.faulty_ids().size(), 2u);
    for (auto id : cluster.faulty_ids()) EXPECT_FALSE(cluster.sim->node(id).honest());
    EXPECT_EQ(cluster.committee.size(), 7u);
}

TEST(Strategy, ParseAndName) {
    EXPECT_EQ(ByzantineStrategy::parse("equivocate").kind, ByzantineStrategy::Kind::Equivocate);
    EXPECT_EQ(ByzantineStrategy::parse("Withhold-Votes").kind, ByzantineStrategy::Kind::WithholdVotes);
    auto d = ByzantineStrategy::parse("delay-all:75");
    EXPECT_EQ(d.kind, ByzantineStrategy::Kind::DelayAll);
    EXPECT_EQ(d.extra_ms, 75u);
    EXPECT_EQ(ByzantineStrategy::parse(d.name()), d);
    for (auto k : all_strategy_kinds()) EXPECT_EQ(ByzantineStrategy::parse(ByzantineStrategy{k}.name()).kind, k);
    EXPECT_THROW(ByzantineStrategy::parse("sneaky"), std::invalid_argument);
}

TEST(Random, HelpersAreStable) {
    std::mt19937_64 a(mix_seed(1, 2)), b(mix_seed(1, 2));
    for (int i = 0; i < 100; ++i) {
        auto u = uniform_unit(a);
        EXPECT_EQ(u, uniform_unit(b));
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        auto k = uniform_below(a, 7);
        EXPECT_EQ(k, uniform_below(b, 7));
        EXPECT_LT(k, 7u);
    }
    EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
}
