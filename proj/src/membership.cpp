#include "trustchain/membership.hpp"

#include <algorithm>
#include <set>

namespace trustchain {

Address StakeLedger::add(const PublicKey& key, std::uint64_t stake) {
    auto address = address_of(key);
    public_keys[address] = key;
    stakes[address] = stake;
    return address;
}

std::uint64_t max_faulty(std::uint64_t n) { return n == 0 ? 0 : (n - 1) / 3; }

std::uint64_t quorum_threshold(std::uint64_t n) { return n - max_faulty(n); }

std::string_view to_string(CertCheck check) {
    switch (check) {
        case CertCheck::Ok: return "OK";
        case CertCheck::BelowThreshold: return "BELOW_THRESHOLD";
        case CertCheck::DuplicateVoter: return "DUPLICATE_VOTER";
        case CertCheck::NonMember: return "NON_MEMBER";
        case CertCheck::BadSignature: return "BAD_SIGNATURE";
    }
    return "?";
}

ValidatorSet::ValidatorSet(std::vector<Validator> members) : members_(std::move(members)) {
    if (members_.empty())
        throw MembershipError(MembershipError::Code::InvalidValidatorSet, "validator set is empty");
    for (std::size_t i = 0; i < members_.size(); ++i) {
        if (!index_.emplace(members_[i].address, i).second)
            throw MembershipError(MembershipError::Code::InvalidValidatorSet, "duplicate validator");
    }
}

std::optional<std::size_t> ValidatorSet::index_of(const Address& address) const {
    auto it = index_.find(address);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::optional<PublicKey> ValidatorSet::public_key(const Address& address) const {
    auto idx = index_of(address);
    if (!idx) return std::nullopt;
    return members_[*idx].public_key;
}

const Address& ValidatorSet::leader_for_epoch(std::uint64_t epoch) const {
    return members_.at(epoch % members_.size()).address;
}

CertCheck ValidatorSet::verify(const QuorumCertificate& cert) const {
    if (cert.voters.size() < quorum()) return CertCheck::BelowThreshold;
    std::set<Address> seen;
    for (const auto& v : cert.voters) {
        if (!seen.insert(v.voter).second) return CertCheck::DuplicateVoter;
    }
    for (const auto& v : cert.voters) {
        if (!contains(v.voter)) return CertCheck::NonMember;
    }
    auto message = vote_signing_bytes(cert.block_hash, cert.phase, cert.epoch);
    for (const auto& v : cert.voters) {
        if (!verify_signature(*public_key(v.voter), message, v.signature)) return CertCheck::BadSignature;
    }
    return CertCheck::Ok;
}

ValidatorSet select_committee(const StakeLedger& ledger, std::size_t n) {
    if (n == 0) throw MembershipError(MembershipError::Code::InvalidCommitteeSize, "committee size must be >= 1");

    std::vector<std::pair<std::uint64_t, Address>> ranked;
    for (const auto& [address, stake] : ledger.stakes) {
        if (stake > 0 && ledger.public_keys.contains(address)) ranked.emplace_back(stake, address);
    }
    if (ranked.size() < n)
        throw MembershipError(MembershipError::Code::InsufficientStakers,
                              "need " + std::to_string(n) + " positive stakers, have " +
                                  std::to_string(ranked.size()));

    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), ranked.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<Validator> members;
    members.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& address = ranked[i].second;
        members.push_back({address, ledger.public_keys.at(address)});
    }
    return ValidatorSet(std::move(members));
}

}  // namespace trustchain
