#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "trustchain/membership.hpp"
#include "trustchain/types.hpp"

namespace trustchain {

struct Account {
    std::uint64_t nonce = 0;
    std::uint64_t balance = 0;

    bool operator==(const Account&) const = default;
};

/// Address -> public key for every account that may sign transactions.
using KeyDirectory = std::map<Address, PublicKey>;

enum class TxReject { BadSig, BadNonce, InsufficientBalance, BadReport, Duplicate };

std::string_view to_string(TxReject reject);

class WorldState;
std::optional<TxReject> execute_transaction(WorldState& state, const KeyDirectory& keys, const Transaction& tx);

class WorldState {
public:
    const std::map<Address, Account>& accounts() const { return accounts_; }
    const std::map<Hash32, AttestationReport>& registry() const { return registry_; }

    Account account(const Address& address) const;
    void credit(const Address& address, std::uint64_t amount) { accounts_[address].balance += amount; }

    std::optional<AttestationReport> lookup_report(const Hash32& code_hash) const;

    /// SHA-256 of the canonical encoding of the sorted accounts and registry.
    Hash32 root() const;

    bool operator==(const WorldState&) const = default;

private:
    friend std::optional<TxReject> execute_transaction(WorldState&, const KeyDirectory&, const Transaction&);

    std::map<Address, Account> accounts_;
    std::map<Hash32, AttestationReport> registry_;
};


/// Applies the transaction in place, or leaves the state untouched and
/// returns the rejection. Deterministic in (state, tx).
std::optional<TxReject> execute_transaction(WorldState& state, const KeyDirectory& keys, const Transaction& tx);

std::optional<AttestationReport> lookup_report(const WorldState& state, const Hash32& code_hash);

enum class AppendError { WrongParent, BadHeight, BadTxRoot, BadCert };

std::string_view to_string(AppendError error);

struct GenesisAccount {
    Address address;
    std::uint64_t balance = 0;
};

/// Chain storage plus the world state it produces. Single writer; all
/// accessors are const.
class Ledger {
public:
    Ledger(ValidatorSet committee, KeyDirectory keys, const std::vector<GenesisAccount>& allocations);

    const ValidatorSet& committee() const { return committee_; }
    const KeyDirectory& keys() const { return keys_; }
    const WorldState& state() const { return state_; }

    std::uint64_t height() const { return blocks_.size() - 1; }
    const Block& head() const { return blocks_.back(); }
    const Hash32& head_hash() const { return hashes_.back(); }
    const Block& block_at(std::uint64_t height) const { return blocks_.at(height); }
    const Hash32& hash_at(std::uint64_t height) const { return hashes_.at(height); }
    const Block* find(const Hash32& hash) const;
    const std::vector<Block>& blocks() const { return blocks_; }

    /// Verifies linkage, tx_root and the COMMIT certificate, then executes the
    /// transactions (skipping rejected ones) and stores the block with the
    /// certificate embedded. Rejections leave everything untouched.
    std::optional<AppendError> append_block(const Block& block, const QuorumCertificate& cert);

    /// Per-transaction outcome of the last append, parallel to its tx list.
    const std::vector<std::optional<TxReject>>& last_outcomes() const { return last_outcomes_; }

    void set_chain_file(std::filesystem::path path);

private:
    ValidatorSet committee_;
    KeyDirectory keys_;
    WorldState state_;
    std::vector<Block> blocks_;
    std::vector<Hash32> hashes_;
    std::map<Hash32, std::uint64_t> by_hash_;
    std::vector<std::optional<TxReject>> last_outcomes_;
    std::optional<std::filesystem::path> chain_file_;
};

/// Builds the genesis block for a state: height 0, zero parent, no certificate.
Block make_genesis_block(const WorldState& state);

inline std::optional<AppendError> append_block(Ledger& ledger, const Block& block, const QuorumCertificate& cert) {
    return ledger.append_block(block, cert);
}

// Chain file: concatenated records, each a 4-byte big-endian length followed by
// the canonical block encoding. Genesis is not stored.
void write_chain_file(const std::filesystem::path& path, const std::vector<Block>& blocks);
void append_chain_record(const std::filesystem::path& path, const Block& block);
std::vector<Block> read_chain_file(const std::filesystem::path& path);

/// Replays decided blocks (with embedded certificates) onto a fresh ledger.
/// Returns the index of the first block that failed, if any.
std::optional<std::size_t> replay_blocks(Ledger& fresh, const std::vector<Block>& blocks);

}  // namespace trustchain
