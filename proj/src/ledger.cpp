#include "trustchain/ledger.hpp"

#include <fstream>
#include <stdexcept>

#include "trustchain/vault.hpp"

namespace trustchain {

Account WorldState::account(const Address& address) const {
    auto it = accounts_.find(address);
    return it == accounts_.end() ? Account{} : it->second;
}

std::optional<AttestationReport> WorldState::lookup_report(const Hash32& code_hash) const {
    auto it = registry_.find(code_hash);
    if (it == registry_.end()) return std::nullopt;
    return it->second;
}

Hash32 WorldState::root() const {
    Writer w;
    w.count(accounts_.size());
    for (const auto& [address, account] : accounts_) {
        w.fixed(address);
        w.u64(account.nonce);
        w.u64(account.balance);
    }
    w.count(registry_.size());
    for (const auto& [code_hash, report] : registry_) {
        w.fixed(code_hash);
        write(w, report);
    }
    return sha256(w.bytes());
}

std::string_view to_string(TxReject reject) {
    switch (reject) {
        case TxReject::BadSig: return "BAD_SIG";
        case TxReject::BadNonce: return "BAD_NONCE";
        case TxReject::InsufficientBalance: return "INSUFFICIENT_BALANCE";
        case TxReject::BadReport: return "BAD_REPORT";
        case TxReject::Duplicate: return "BAD_REPORT:DUPLICATE";
    }
    return "?";
}

std::optional<TxReject> execute_transaction(WorldState& state, const KeyDirectory& keys, const Transaction& tx) {
    auto key = keys.find(tx.sender);
    if (key == keys.end() || !verify_signature(key->second, transaction_signing_bytes(tx), tx.signature))
        return TxReject::BadSig;

    auto sender = state.account(tx.sender);
    if (tx.nonce != sender.nonce + 1) return TxReject::BadNonce;

    if (const auto* transfer = std::get_if<Transfer>(&tx.kind)) {
        if (sender.balance < transfer->amount) return TxReject::InsufficientBalance;
        auto& from = state.accounts_[tx.sender];
        from.balance -= transfer->amount;
        from.nonce = tx.nonce;
        state.accounts_[transfer->to].balance += transfer->amount;
        return std::nullopt;
    }

    const auto& report = std::get<PublishReport>(tx.kind).report;
    if (!verify_report(report)) return TxReject::BadReport;
    if (state.registry_.contains(report.code_hash)) return TxReject::Duplicate;
    state.registry_.emplace(report.code_hash, report);
    state.accounts_[tx.sender].nonce = tx.nonce;
    return std::nullopt;
}

std::optional<AttestationReport> lookup_report(const WorldState& state, const Hash32& code_hash) {
    return state.lookup_report(code_hash);
}

std::string_view to_string(AppendError error) {
    switch (error) {
        case AppendError::WrongParent: return "WRONG_PARENT";
        case AppendError::BadHeight: return "BAD_HEIGHT";
        case AppendError::BadTxRoot: return "BAD_TX_ROOT";
        case AppendError::BadCert: return "BAD_CERT";
    }
    return "?";
}

Block make_genesis_block(const WorldState& state) {
    Block genesis;
    genesis.header.height = 0;
    genesis.header.epoch = 0;
    genesis.header.tx_root = compute_tx_root({});
    genesis.header.state_root = state.root();
    return genesis;
}

Ledger::Ledger(ValidatorSet committee, KeyDirectory keys, const std::vector<GenesisAccount>& allocations)
    : committee_(std::move(committee)), keys_(std::move(keys)) {
    for (const auto& a : allocations) state_.credit(a.address, a.balance);
    blocks_.push_back(make_genesis_block(state_));
    hashes_.push_back(block_hash(blocks_.back()));
    by_hash_.emplace(hashes_.back(), 0);
}

const Block* Ledger::find(const Hash32& hash) const {
    auto it = by_hash_.find(hash);
    return it == by_hash_.end() ? nullptr : &blocks_[it->second];
}

std::optional<AppendError> Ledger::append_block(const Block& block, const QuorumCertificate& cert) {
    if (block.header.parent_hash != head_hash()) return AppendError::WrongParent;
    if (block.header.height != height() + 1) return AppendError::BadHeight;
    if (compute_tx_root(block.transactions) != block.header.tx_root) return AppendError::BadTxRoot;
    auto hash = block_hash(block);
    if (cert.phase != Phase::Commit || cert.block_hash != hash || committee_.verify(cert) != CertCheck::Ok)
        return AppendError::BadCert;

    // Execute on a copy so a throw midway cannot leave partial state.
    WorldState next = state_;
    std::vector<std::optional<TxReject>> outcomes;
    outcomes.reserve(block.transactions.size());
    for (const auto& tx : block.transactions) outcomes.push_back(execute_transaction(next, keys_, tx));

    Block stored = block;
    stored.header.commit_certificate = cert;
    if (chain_file_) append_chain_record(*chain_file_, stored);

    state_ = std::move(next);
    blocks_.push_back(std::move(stored));
    hashes_.push_back(hash);
    by_hash_.emplace(hash, blocks_.size() - 1);
    last_outcomes_ = std::move(outcomes);
    return std::nullopt;
}

void Ledger::set_chain_file(std::filesystem::path path) {
    write_chain_file(path, {blocks_.begin() + 1, blocks_.end()});
    chain_file_ = std::move(path);
}

void write_chain_file(const std::filesystem::path& path, const std::vector<Block>& blocks) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open chain file for writing: " + path.string());
    for (const auto& b : blocks) {
        Writer w;
        w.var(canonical_encode(b));
        out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void append_chain_record(const std::filesystem::path& path, const Block& block) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open chain file for append: " + path.string());
    Writer w;
    w.var(canonical_encode(block));
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw std::runtime_error("append failed: " + path.string());
}

std::vector<Block> read_chain_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open chain file: " + path.string());
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(data);
    std::vector<Block> blocks;
    while (r.remaining() > 0) {
        auto record = r.var();
        blocks.push_back(decode<Block>(record));
    }
    return blocks;
}

std::optional<std::size_t> replay_blocks(Ledger& fresh, const std::vector<Block>& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& cert = blocks[i].header.commit_certificate;
        if (!cert || fresh.append_block(blocks[i], *cert)) return i;
    }
    return std::nullopt;
}

}  // namespace trustchain
