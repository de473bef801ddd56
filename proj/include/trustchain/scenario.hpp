#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trustchain/netsim.hpp"

namespace trustchain {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ScenarioConfig {
    std::uint32_t nodes = 48;
    std::uint32_t validators = 5;
    std::uint32_t rate_tps = 50;
    std::uint32_t duration_s = 10;
    std::uint32_t byzantine = 0;
    ByzantineStrategy strategy;
    std::uint64_t seed = 1;
    LinkModel link;
    std::uint64_t max_block_txs = 10;
    SimTime base_timeout = milliseconds(200);
    SimTime package_cost_per_tx = milliseconds(2);
    bool record_trace = false;

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;
    ClusterSpec cluster_spec() const;
    bool operator==(const ScenarioConfig&) const = default;
};

struct TxRecord {
    Hash32 tx_id;
    SimTime submit = 0;
    std::optional<SimTime> package;
    std::optional<SimTime> decide;

    bool operator==(const TxRecord&) const = default;
};

struct DelayStats {
    double mean_ms = 0;
    double p50_ms = 0;
    double p95_ms = 0;
    bool operator==(const DelayStats&) const = default;
};

struct MetricsSummary {
    double offered_tps = 0;
    double achieved_tps = 0;
    std::uint64_t submitted = 0;
    std::uint64_t confirmed = 0;
    DelayStats processing;
    DelayStats confirmation;
    double consensus_mean_ms = 0;  // confirmation mean minus processing mean
    std::uint64_t chain_height = 0;  // lowest decided height among honest validators
    std::uint64_t messages = 0;
    bool operator==(const MetricsSummary&) const = default;
};

struct MetricsReport {
    ScenarioConfig config;
    std::vector<TxRecord> transactions;  // in submission order
    MetricsSummary summary;
    std::optional<TraceLog> trace;

    std::string to_json() const;
    static MetricsReport from_json(std::string_view text);
    bool operator==(const MetricsReport&) const = default;
};

/// Nearest-rank percentile over a sorted, non-empty sample.
double percentile(const std::vector<double>& sorted, double p);

MetricsReport run_scenario(const ScenarioConfig& config);

/// Re-runs a report's configuration; the result is bit-identical on a
/// deterministic build.
MetricsReport replay(const MetricsReport& prior);

inline constexpr std::string_view kCsvHeader =
    "validators,offered_tps,achieved_tps,proc_mean_ms,proc_p95_ms,conf_mean_ms,conf_p95_ms,consensus_mean_ms,seed";

std::string csv_row(const MetricsReport& report);

/// Runs validators x rates over `base` and returns one report per cell, row
/// major in validators.
std::vector<MetricsReport> sweep(const ScenarioConfig& base, const std::vector<std::uint32_t>& validators,
                                 const std::vector<std::uint32_t>& rates);

void write_summary_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports);
void write_transactions_csv(const std::filesystem::path& path, const MetricsReport& report);

// Genesis -------------------------------------------------------------------

enum class NodeRole : std::uint8_t { Validator = 0, Client = 1 };

struct GenesisRecord {
    Address address;
    PublicKey public_key;
    std::uint64_t stake = 0;
    NodeRole role = NodeRole::Client;
    std::uint64_t balance = 0;

    bool operator==(const GenesisRecord&) const = default;
};

std::vector<GenesisRecord> genesis_records(const Cluster& cluster);
Bytes encode_genesis(const std::vector<GenesisRecord>& records);
std::vector<GenesisRecord> decode_genesis(ByteView bytes);
/// One line per node: address public_key stake role balance.
std::string genesis_text(const std::vector<GenesisRecord>& records);
std::vector<GenesisRecord> parse_genesis_text(std::string_view text);

// Attestation demo ------------------------------------------------------------

enum class AttestVerdict { Intact, Tampered, Pending };

std::string_view to_string(AttestVerdict verdict);

struct AttestOptions {
    std::optional<std::size_t> tamper_offset;
    std::uint8_t tamper_mask = 0x01;
    SimTime wait = milliseconds(500);
    std::uint64_t seed = 1;
    LinkModel link;
};

struct AttestOutcome {
    AttestVerdict verdict = AttestVerdict::Pending;
    Hash32 published_code_hash;
    Hash32 local_code_hash;
    std::optional<std::uint64_t> decided_height;
    std::optional<SimTime> decided_at;
};

/// Publisher device attests the code and publishes the report on a four
/// validator network; once decided, an executor device attests its own
/// (optionally tampered) copy and compares against the on-chain report.
AttestOutcome attest_demo(ByteView code, const AttestOptions& options);
AttestOutcome attest_demo_file(const std::filesystem::path& code_file, const AttestOptions& options);

}  // namespace trustchain
