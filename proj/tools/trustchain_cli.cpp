#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include <CLI11.hpp>

#include "trustchain/scenario.hpp"

using namespace trustchain;

namespace {

struct ScenarioFlags {
    ScenarioConfig config;
    std::string strategy = "silent";

    void add_to(CLI::App& app) {
        app.add_option("--nodes", config.nodes, "Total nodes, validators included")->capture_default_str();
        app.add_option("--validators", config.validators, "Committee size")->capture_default_str();
        app.add_option("--rate", config.rate_tps, "Offered load in transactions per second")->capture_default_str();
        app.add_option("--duration", config.duration_s, "Simulated seconds")->capture_default_str();
        app.add_option("--byzantine", config.byzantine, "Faulty validators")->capture_default_str();
        app.add_option("--strategy", strategy,
                       "silent, equivocate, withhold-votes, delay-all[:ms] or random-junk")
            ->capture_default_str();
        app.add_option("--seed", config.seed)->capture_default_str();
        app.add_option("--base-delay-ms", config.link.base_delay_ms)->capture_default_str();
        app.add_option("--jitter-ms", config.link.jitter_ms)->capture_default_str();
        app.add_option("--drop-prob", config.link.drop_probability)->capture_default_str();
        app.add_option("--max-block-txs", config.max_block_txs)->capture_default_str();
    }

    ScenarioConfig resolve() const {
        auto c = config;
        c.strategy = ByzantineStrategy::parse(strategy);
        return c;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + path);
}

void print_summary(const MetricsReport& r) {
    const auto& s = r.summary;
    std::cout << "validators=" << r.config.validators << " offered_tps=" << s.offered_tps
              << " achieved_tps=" << s.achieved_tps << " submitted=" << s.submitted << " confirmed=" << s.confirmed
              << "\nprocessing_ms mean=" << s.processing.mean_ms << " p50=" << s.processing.p50_ms
              << " p95=" << s.processing.p95_ms << "\nconfirmation_ms mean=" << s.confirmation.mean_ms
              << " p50=" << s.confirmation.p50_ms << " p95=" << s.confirmation.p95_ms
              << "\nconsensus_mean_ms=" << s.consensus_mean_ms << " chain_height=" << s.chain_height
              << " messages=" << s.messages << '\n';
}

void emit_outputs(const MetricsReport& report, const std::string& out, const std::string& trace,
                  const std::string& tx_out, const std::string& report_out) {
    if (!out.empty()) write_summary_csv(out, {report});
    if (!trace.empty()) write_file(trace, report.trace->serialize());
    if (!tx_out.empty()) write_transactions_csv(tx_out, report);
    if (!report_out.empty()) write_file(report_out, report.to_json());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulated permissioned chain: load runs, sweeps, replays and the attestation demo"};
    app.require_subcommand(1);

    ScenarioFlags run_flags;
    std::string run_out, run_trace, run_tx_out, run_report, run_genesis;
    auto* run = app.add_subcommand("run", "Run one scenario and print its summary");
    run_flags.add_to(*run);
    run->add_option("--out", run_out, "Summary CSV path");
    run->add_option("--trace", run_trace, "Trace log path");
    run->add_option("--tx-out", run_tx_out, "Per-transaction CSV path");
    run->add_option("--report", run_report, "Full report JSON path, usable with replay");
    run->add_option("--genesis-out", run_genesis, "Write the genesis records as text");

    ScenarioFlags sweep_flags;
    std::vector<std::uint32_t> sweep_validators{5, 10, 20};
    std::vector<std::uint32_t> sweep_rates{5, 10, 50, 100, 200};
    std::string sweep_out = "sweep.csv";
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a validators x rates grid and write one CSV row per cell");
    sweep_flags.add_to(*sweep_cmd);
    sweep_cmd->add_option("--grid-validators", sweep_validators)->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--grid-rates", sweep_rates)->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--out", sweep_out, "Summary CSV path")->capture_default_str();

    std::string replay_in, replay_out, replay_trace, replay_tx_out, replay_report;
    auto* replay_cmd = app.add_subcommand("replay", "Re-run a saved report and check it reproduces exactly");
    replay_cmd->add_option("input", replay_in, "Report JSON written by run --report")->required();
    replay_cmd->add_option("--out", replay_out, "Summary CSV path");
    replay_cmd->add_option("--trace", replay_trace, "Trace log path");
    replay_cmd->add_option("--tx-out", replay_tx_out, "Per-transaction CSV path");
    replay_cmd->add_option("--report", replay_report, "Report JSON path");

    std::string code_file;
    std::optional<std::size_t> tamper;
    std::uint32_t wait_ms = 500;
    AttestOptions attest;
    auto* attest_cmd = app.add_subcommand("attest-demo", "Publish a code attestation on chain, then verify a copy");
    attest_cmd->add_option("--code", code_file, "Program binary to attest")->required();
    attest_cmd->add_option("--tamper", tamper, "Flip the low bit of this byte in the local copy");
    attest_cmd->add_option("--wait-ms", wait_ms, "Simulated time to wait for the decision")->capture_default_str();
    attest_cmd->add_option("--seed", attest.seed)->capture_default_str();
    attest_cmd->add_option("--base-delay-ms", attest.link.base_delay_ms)->capture_default_str();
    attest_cmd->add_option("--jitter-ms", attest.link.jitter_ms)->capture_default_str();
    attest_cmd->add_option("--drop-prob", attest.link.drop_probability)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto config = run_flags.resolve();
            config.record_trace = !run_trace.empty();
            auto report = run_scenario(config);
            print_summary(report);
            emit_outputs(report, run_out, run_trace, run_tx_out, run_report);
            if (!run_genesis.empty()) {
                auto cluster = build_cluster(config.cluster_spec());
                write_file(run_genesis, genesis_text(genesis_records(cluster)));
            }
        } else if (*sweep_cmd) {
            auto reports = sweep(sweep_flags.resolve(), sweep_validators, sweep_rates);
            write_summary_csv(sweep_out, reports);
            std::cout << kCsvHeader << '\n';
            for (const auto& r : reports) std::cout << csv_row(r) << '\n';
        } else if (*replay_cmd) {
            auto prior = MetricsReport::from_json(read_file(replay_in));
            auto again = replay(prior);
            print_summary(again);
            emit_outputs(again, replay_out, replay_trace, replay_tx_out, replay_report);
            if (!(again == prior)) {
                std::cerr << "replay diverged from " << replay_in << '\n';
                return 3;
            }
            std::cout << "replay identical\n";
        } else if (*attest_cmd) {
            attest.tamper_offset = tamper;
            attest.wait = milliseconds(wait_ms);
            auto outcome = attest_demo_file(code_file, attest);
            std::cout << to_string(outcome.verdict) << '\n'
                      << "published_code_hash=" << outcome.published_code_hash.hex() << '\n';
            if (outcome.verdict == AttestVerdict::Pending) {
                std::cerr << "report not decided within " << wait_ms << " ms; retry with a longer --wait-ms\n";
                return 75;
            }
            std::cout << "local_code_hash=" << outcome.local_code_hash.hex() << '\n';
            if (outcome.decided_height) std::cout << "decided_height=" << *outcome.decided_height << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
