#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace trustchain;
using namespace trustchain::testing;

namespace {

/// Brute-force minimum overlap of two q-subsets of n, via the sizes alone:
/// enumerate every pair of overlap counts that fit and keep the smallest.
std::uint64_t min_overlap(std::uint64_t n, std::uint64_t q) {
    std::uint64_t best = q;
    for (std::uint64_t k = 0; k <= q; ++k) {
        if (2 * q - k <= n) best = std::min(best, k);
    }
    return best;
}

/// Largest f such that two quorums of n - f always share f + 1 members.
std::uint64_t reference_max_faulty(std::uint64_t n) {
    std::uint64_t f = 0;
    for (std::uint64_t c = 0; c < n; ++c) {
        if (3 * c < n && min_overlap(n, n - c) >= c + 1) f = c;
    }
    return f;
}

struct Staker {
    Address address;
    PublicKey key;
    std::uint64_t stake;
};

std::vector<Address> reference_committee(std::vector<Staker> stakers, std::size_t n) {
    std::erase_if(stakers, [](const Staker& s) { return s.stake == 0; });
    std::sort(stakers.begin(), stakers.end(), [](const Staker& a, const Staker& b) {
        return a.stake != b.stake ? a.stake > b.stake : a.address < b.address;
    });
    std::vector<Address> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(stakers[i].address);
    return out;
}

std::vector<Address> addresses(const ValidatorSet& set) {
    std::vector<Address> out;
    for (const auto& m : set.members()) out.push_back(m.address);
    return out;
}

}  // namespace

TEST(MaxFaulty, Examples) {
    EXPECT_EQ(max_faulty(1), 0u);
    EXPECT_EQ(max_faulty(4), 1u);
    EXPECT_EQ(max_faulty(5), 1u);
    EXPECT_EQ(max_faulty(10), 3u);
    EXPECT_EQ(max_faulty(20), 6u);
}

TEST(MaxFaulty, MatchesIntersectionOracle) {
    for (std::uint64_t n = 1; n <= 60; ++n) EXPECT_EQ(max_faulty(n), reference_max_faulty(n)) << "n=" << n;
}

TEST(QuorumThreshold, Examples) {
    EXPECT_EQ(quorum_threshold(1), 1u);
    EXPECT_EQ(quorum_threshold(5), 4u);
    EXPECT_EQ(quorum_threshold(20), 14u);
}

TEST(QuorumThreshold, ExhaustiveIntersectionUpToTwenty) {
    // Every pair of quorum-sized subsets of n validators, as bitmasks.
    for (unsigned n = 1; n <= 20; ++n) {
        const unsigned q = quorum_threshold(n);
        const unsigned f = max_faulty(n);
        if (n <= 12) {
            std::vector<std::uint32_t> quorums;
            for (std::uint32_t m = 0; m < (1u << n); ++m)
                if (static_cast<unsigned>(__builtin_popcount(m)) == q) quorums.push_back(m);
            unsigned worst = n;
            for (auto a : quorums)
                for (auto b : quorums) worst = std::min<unsigned>(worst, __builtin_popcount(a & b));
            EXPECT_GE(worst, f + 1) << "n=" << n;
        } else {
            // For larger n the pair count explodes; fixing one quorum loses no
            // generality by symmetry, so enumerate the other against it.
            const std::uint32_t first = (1u << q) - 1;
            unsigned worst = n;
            for (std::uint32_t m = 0; m < (1u << n); ++m)
                if (static_cast<unsigned>(__builtin_popcount(m)) == q)
                    worst = std::min<unsigned>(worst, __builtin_popcount(first & m));
            EXPECT_GE(worst, f + 1) << "n=" << n;
        }
    }
}

TEST(SelectCommittee, TopStakeWithAddressTieBreak) {
    std::vector<Vault> vaults;
    for (int i = 0; i < 4; ++i) vaults.push_back(make_vault(i));
    std::sort(vaults.begin(), vaults.end(), [](const Vault& a, const Vault& b) { return a.address() < b.address(); });
    // A < B < C < D by address; stakes {A:10, B:5, C:5, D:1}.
    StakeLedger ledger;
    const std::uint64_t stakes[] = {10, 5, 5, 1};
    for (int i = 0; i < 4; ++i) ledger.add(vaults[i].public_key(KeySlot::Node), stakes[i]);
    auto committee = select_committee(ledger, 2);
    EXPECT_EQ(addresses(committee), (std::vector<Address>{vaults[0].address(), vaults[1].address()}));
}

TEST(SelectCommittee, MatchesSortOracle) {
    std::mt19937_64 rng(5);
    for (int round = 0; round < 50; ++round) {
        StakeLedger ledger;
        std::vector<Staker> stakers;
        const std::size_t count = 3 + rng() % 30;
        for (std::size_t i = 0; i < count; ++i) {
            auto key = random_fixed<PublicKey>(rng);
            std::uint64_t stake = rng() % 3 == 0 ? 0 : rng() % 8;  // frequent ties
            stakers.push_back({ledger.add(key, stake), key, stake});
        }
        const auto positive = std::count_if(stakers.begin(), stakers.end(), [](auto& s) { return s.stake > 0; });
        for (std::size_t n = 1; n <= static_cast<std::size_t>(positive); ++n)
            EXPECT_EQ(addresses(select_committee(ledger, n)), reference_committee(stakers, n));
        EXPECT_EQ(select_committee(ledger, positive), select_committee(ledger, positive));
    }
}

TEST(SelectCommittee, AllPositiveStakersIncluded) {
    StakeLedger ledger;
    std::set<Address> all;
    for (int i = 0; i < 6; ++i) all.insert(ledger.add(make_vault(i).public_key(KeySlot::Node), 1 + i));
    auto committee = addresses(select_committee(ledger, 6));
    EXPECT_EQ(std::set<Address>(committee.begin(), committee.end()), all);
}

TEST(SelectCommittee, Errors) {
    StakeLedger ledger;
    ledger.add(make_vault(0).public_key(KeySlot::Node), 5);
    ledger.add(make_vault(1).public_key(KeySlot::Node), 0);
    try {
        select_committee(ledger, 0);
        FAIL();
    } catch (const MembershipError& e) {
        EXPECT_EQ(e.code(), MembershipError::Code::InvalidCommitteeSize);
    }
    try {
        select_committee(ledger, 2);
        FAIL();
    } catch (const MembershipError& e) {
        EXPECT_EQ(e.code(), MembershipError::Code::InsufficientStakers);
    }
}

TEST(LeaderForEpoch, RoundRobin) {
    Fixture five(5);
    EXPECT_EQ(leader_for_epoch(0, five.committee), five.committee.members()[0].address);
    EXPECT_EQ(leader_for_epoch(7, five.committee), five.committee.members()[2].address);
    Fixture twenty(20);
    EXPECT_EQ(leader_for_epoch(19, twenty.committee), twenty.committee.members()[19].address);

    std::map<Address, int> led;
    for (std::uint64_t e = 40; e < 60; ++e) ++led[leader_for_epoch(e, twenty.committee)];
    EXPECT_EQ(led.size(), 20u);
    for (const auto& [a, count] : led) EXPECT_EQ(count, 1);
}

TEST(ValidatorSet, RejectsEmptyAndDuplicates) {
    EXPECT_THROW(ValidatorSet(std::vector<Validator>{}), MembershipError);
    auto v = make_vault(0);
    Validator m{v.address(), v.public_key(KeySlot::Node)};
    EXPECT_THROW(ValidatorSet({m, m}), MembershipError);
}
