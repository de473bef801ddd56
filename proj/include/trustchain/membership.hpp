#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "trustchain/types.hpp"

namespace trustchain {

class MembershipError : public std::runtime_error {
public:
    enum class Code { InsufficientStakers, InvalidCommitteeSize, InvalidValidatorSet };

    MembershipError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

/// Stake accounting seeded at genesis.
struct StakeLedger {
    std::map<Address, std::uint64_t> stakes;
    std::map<Address, PublicKey> public_keys;

    /// Registers a staker; the address is derived from the key.
    Address add(const PublicKey& key, std::uint64_t stake);
};

struct Validator {
    Address address;
    PublicKey public_key;

    bool operator==(const Validator&) const = default;
};

/// Tolerated Byzantine validators for a committee of n: floor((n-1)/3).
std::uint64_t max_faulty(std::uint64_t n);

/// Votes required for a certificate: n - max_faulty(n).
std::uint64_t quorum_threshold(std::uint64_t n);

enum class CertCheck { Ok, BelowThreshold, DuplicateVoter, NonMember, BadSignature };

std::string_view to_string(CertCheck check);

/// The consensus committee in canonical (round-robin) order.
class ValidatorSet {
public:
    ValidatorSet() = default;
    /// Throws MembershipError if empty or containing duplicates.
    explicit ValidatorSet(std::vector<Validator> members);

    const std::vector<Validator>& members() const { return members_; }
    std::size_t size() const { return members_.size(); }
    std::uint64_t max_faulty() const { return trustchain::max_faulty(size()); }
    std::uint64_t quorum() const { return quorum_threshold(size()); }

    bool contains(const Address& address) const { return index_.contains(address); }
    std::optional<std::size_t> index_of(const Address& address) const;
    std::optional<PublicKey> public_key(const Address& address) const;

    const Address& leader_for_epoch(std::uint64_t epoch) const;

    /// Checks threshold, voter distinctness, membership and every signature,
    /// in that order.
    CertCheck verify(const QuorumCertificate& cert) const;

    bool operator==(const ValidatorSet& other) const { return members_ == other.members_; }

private:
    std::vector<Validator> members_;
    std::map<Address, std::size_t> index_;
};

/// Top-n stakers by (stake descending, address ascending).
ValidatorSet select_committee(const StakeLedger& ledger, std::size_t n);

inline const Address& leader_for_epoch(std::uint64_t epoch, const ValidatorSet& committee) {
    return committee.leader_for_epoch(epoch);
}

}  // namespace trustchain
