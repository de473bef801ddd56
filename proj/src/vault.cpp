#include "trustchain/vault.hpp"

#include <cstring>
#include <string_view>

namespace trustchain {

namespace {
constexpr std::string_view kEndorsementLabel = "trustchain/endorsement-key/v1";

Seed32 derive_endorsement_seed(const Seed32& device_seed) {
    Bytes material(kEndorsementLabel.begin(), kEndorsementLabel.end());
    material.insert(material.end(), device_seed.bytes.begin(), device_seed.bytes.end());
    auto digest = sha256(material);
    detail::secure_wipe(material.data(), material.size());
    return Seed32::from(digest.view());
}
}  // namespace

Vault Vault::provision(const Seed32& device_seed, const Seed32& entropy_seed) {
    Vault v;
    v.entropy_key_ = entropy_seed;

    auto endorsement_seed = derive_endorsement_seed(device_seed);
    v.endorsement_public_ = detail::ed25519_keypair(endorsement_seed, v.endorsement_secret_);
    detail::secure_wipe(endorsement_seed.bytes.data(), endorsement_seed.bytes.size());

    Seed32 node_seed;
    v.fill_random(node_seed.bytes.data(), node_seed.bytes.size());
    v.node_public_ = detail::ed25519_keypair(node_seed, v.node_secret_);
    detail::secure_wipe(node_seed.bytes.data(), node_seed.bytes.size());

    v.address_ = address_of(v.node_public_);
    return v;
}

Vault::Vault(Vault&& other) noexcept { *this = std::move(other); }

Vault& Vault::operator=(Vault&& other) noexcept {
    if (this != &other) {
        endorsement_secret_ = other.endorsement_secret_;
        node_secret_ = other.node_secret_;
        entropy_key_ = other.entropy_key_;
        stream_block_ = other.stream_block_;
        stream_buffer_ = other.stream_buffer_;
        stream_used_ = other.stream_used_;
        endorsement_public_ = other.endorsement_public_;
        node_public_ = other.node_public_;
        address_ = other.address_;
        other.wipe();
    }
    return *this;
}

Vault::~Vault() { wipe(); }

void Vault::wipe() {
    detail::secure_wipe(endorsement_secret_.data(), endorsement_secret_.size());
    detail::secure_wipe(node_secret_.data(), node_secret_.size());
    detail::secure_wipe(entropy_key_.bytes.data(), entropy_key_.bytes.size());
    detail::secure_wipe(stream_buffer_.data(), stream_buffer_.size());
}

const PublicKey& Vault::public_key(KeySlot slot) const {
    return slot == KeySlot::Node ? node_public_ : endorsement_public_;
}

Signature Vault::sign(KeySlot slot, ByteView message) const {
    return detail::ed25519_sign(slot == KeySlot::Node ? node_secret_ : endorsement_secret_, message);
}

void Vault::fill_random(std::uint8_t* out, std::size_t n) {
    while (n > 0) {
        if (stream_used_ == stream_buffer_.size()) {
            detail::chacha20_stream(entropy_key_, stream_block_++, stream_buffer_.data(), stream_buffer_.size());
            stream_used_ = 0;
        }
        auto take = std::min(n, stream_buffer_.size() - stream_used_);
        std::memcpy(out, stream_buffer_.data() + stream_used_, take);
        stream_used_ += take;
        out += take;
        n -= take;
    }
}

Bytes Vault::random(std::size_t n_bytes) {
    Bytes out(n_bytes);
    fill_random(out.data(), out.size());
    return out;
}

AttestationReport Vault::attest_code(ByteView code) {
    AttestationReport report;
    report.code_hash = sha256(code);
    report.device = address_;
    report.endorsement_public_key = endorsement_public_;
    fill_random(report.nonce.data(), report.nonce.size());
    report.signature =
        sign(KeySlot::Endorsement, report_signing_bytes(report.code_hash, report.device, report.nonce));
    return report;
}

bool verify_report(const AttestationReport& report, const std::optional<PublicKey>& expected_endorsement_key) {
    if (expected_endorsement_key && *expected_endorsement_key != report.endorsement_public_key) return false;
    return verify_signature(report.endorsement_public_key,
                            report_signing_bytes(report.code_hash, report.device, report.nonce),
                            report.signature);
}

}  // namespace trustchain
