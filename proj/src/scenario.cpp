#include "trustchain/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace trustchain {

using nlohmann::json;

void ScenarioConfig::validate() const {
    if (validators == 0) throw ConfigError("validators must be at least 1");
    if (validators > nodes) throw ConfigError("validators (" + std::to_string(validators) + ") exceeds nodes (" +
                                              std::to_string(nodes) + ")");
    if (byzantine > max_faulty(validators))
        throw ConfigError("byzantine (" + std::to_string(byzantine) + ") exceeds max_faulty(" +
                          std::to_string(validators) + ") = " + std::to_string(max_faulty(validators)));
    if (duration_s == 0) throw ConfigError("duration must be at least 1 s");
    if (rate_tps > 0 && nodes == validators) throw ConfigError("a positive rate needs at least one client node");
    if (!(link.drop_probability >= 0.0 && link.drop_probability <= 1.0))
        throw ConfigError("drop probability must lie in [0, 1]");
    if (max_block_txs == 0) throw ConfigError("max_block_txs must be at least 1");
    if (base_timeout <= 0) throw ConfigError("base timeout must be positive");
}

ClusterSpec ScenarioConfig::cluster_spec() const {
    ClusterSpec spec;
    spec.nodes = nodes;
    spec.validators = validators;
    spec.byzantine = byzantine;
    spec.strategy = strategy;
    spec.seed = seed;
    spec.link = link;
    spec.base_timeout = base_timeout;
    spec.max_block_txs = max_block_txs;
    spec.package_cost_per_tx = package_cost_per_tx;
    spec.record_trace = record_trace;
    return spec;
}

double percentile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0.0;
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

namespace {

double to_ms(SimTime t) { return static_cast<double>(t) / static_cast<double>(kMillisecond); }

DelayStats stats_of(std::vector<double> v) {
    DelayStats s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    double sum = 0;
    for (double x : v) sum += x;
    s.mean_ms = sum / static_cast<double>(v.size());
    s.p50_ms = percentile(v, 50);
    s.p95_ms = percentile(v, 95);
    return s;
}

/// Per-transaction timestamps gathered from client submissions and the
/// validators' notes.
struct Collector {
    std::vector<TxRecord> records;
    std::map<Hash32, std::size_t> index;
    std::map<Hash32, SimTime> package_at;
    std::set<Hash32> decided;
    std::vector<bool> honest;

    void submitted(const Hash32& id, SimTime at) {
        index.emplace(id, records.size());
        records.push_back({id, at, std::nullopt, std::nullopt});
    }

    void on_note(NodeId node, const Note& note) {
        if (note.kind == NoteKind::Package) {
            package_at.emplace(note.hash, note.at);
        } else if (note.kind == NoteKind::Decide && node < honest.size() && honest[node]) {
            if (!decided.insert(note.hash).second) return;
            auto pkg = package_at.find(note.hash);
            for (const auto& id : note.tx_ids) {
                auto it = index.find(id);
                if (it == index.end()) continue;
                auto& r = records[it->second];
                if (r.decide) continue;
                r.decide = note.at;
                r.package = pkg != package_at.end() ? pkg->second : note.at;
            }
        }
    }
};

class ClientNode : public Node {
public:
    ClientNode(Vault vault, std::vector<NodeId> validators, std::vector<SimTime> schedule, Address payee,
               std::shared_ptr<Collector> collector)
        : vault_(std::move(vault)), validators_(std::move(validators)), schedule_(std::move(schedule)),
          payee_(payee), collector_(std::move(collector)) {}

    void on_start(NodeContext& ctx) override {
        if (!schedule_.empty()) ctx.set_timer(schedule_[0], 0);
    }

    void on_receive(NodeContext&, NodeId, const Payload&) override {}

    void on_timer(NodeContext& ctx, std::uint64_t k) override {
        Transaction tx;
        tx.sender = vault_.address();
        tx.nonce = k + 1;
        tx.kind = Transfer{payee_, 1};
        tx.signature = vault_.sign(KeySlot::Node, transaction_signing_bytes(tx));
        auto id = transaction_id(tx);
        collector_->submitted(id, ctx.now());
        ctx.trace("SUBMIT", "nonce=" + std::to_string(tx.nonce), id);
        for (auto v : validators_) ctx.send(v, tx);
        if (k + 1 < schedule_.size()) ctx.set_timer(schedule_[k + 1], k + 1);
    }

    std::string role() const override { return "client"; }

private:
    Vault vault_;
    std::vector<NodeId> validators_;
    std::vector<SimTime> schedule_;
    Address payee_;
    std::shared_ptr<Collector> collector_;
};

/// Evenly spaced submissions over the run, each pushed later by up to half
/// a slot, dealt round-robin to the clients.
std::vector<std::vector<SimTime>> load_schedule(const ScenarioConfig& c, std::size_t clients) {
    std::vector<std::vector<SimTime>> out(clients);
    if (c.rate_tps == 0 || clients == 0) return out;
    const std::uint64_t total = std::uint64_t{c.rate_tps} * c.duration_s;
    const SimTime duration = SimTime{c.duration_s} * 1000 * kMillisecond;
    std::mt19937_64 rng(mix_seed(c.seed, 0x4c4f4144));
    for (std::uint64_t j = 0; j < total; ++j) {
        const SimTime slot = static_cast<SimTime>(j) * 1000 * kMillisecond / c.rate_tps;
        const SimTime width = 1000 * kMillisecond / c.rate_tps;
        SimTime at = slot + static_cast<SimTime>(uniform_below(rng, static_cast<std::uint64_t>(width / 2) + 1));
        out[j % clients].push_back(std::min(at, duration - 1));
    }
    return out;
}

MetricsSummary summarize(const ScenarioConfig& c, const std::vector<TxRecord>& records) {
    MetricsSummary s;
    const double duration = c.duration_s;
    s.offered_tps = c.rate_tps;
    s.submitted = records.size();
    std::vector<double> proc, conf;
    for (const auto& r : records) {
        if (!r.decide) continue;
        ++s.confirmed;
        proc.push_back(to_ms(*r.package - r.submit));
        conf.push_back(to_ms(*r.decide - r.submit));
    }
    s.achieved_tps = static_cast<double>(s.confirmed) / duration;
    s.processing = stats_of(std::move(proc));
    s.confirmation = stats_of(std::move(conf));
    s.consensus_mean_ms = s.confirmation.mean_ms - s.processing.mean_ms;
    return s;
}

json config_json(const ScenarioConfig& c) {
    return {{"nodes", c.nodes},
            {"validators", c.validators},
            {"rate_tps", c.rate_tps},
            {"duration_s", c.duration_s},
            {"byzantine", c.byzantine},
            {"strategy", c.strategy.name()},
            {"seed", c.seed},
            {"base_delay_ms", c.link.base_delay_ms},
            {"jitter_ms", c.link.jitter_ms},
            {"drop_probability", c.link.drop_probability},
            {"max_block_txs", c.max_block_txs},
            {"base_timeout_us", c.base_timeout},
            {"package_cost_per_tx_us", c.package_cost_per_tx},
            {"record_trace", c.record_trace}};
}

ScenarioConfig config_from_json(const json& j) {
    ScenarioConfig c;
    c.nodes = j.at("nodes");
    c.validators = j.at("validators");
    c.rate_tps = j.at("rate_tps");
    c.duration_s = j.at("duration_s");
    c.byzantine = j.at("byzantine");
    c.strategy = ByzantineStrategy::parse(j.at("strategy").get<std::string>());
    c.seed = j.at("seed");
    c.link.base_delay_ms = j.at("base_delay_ms");
    c.link.jitter_ms = j.at("jitter_ms");
    c.link.drop_probability = j.at("drop_probability");
    c.max_block_txs = j.at("max_block_txs");
    c.base_timeout = j.at("base_timeout_us");
    c.package_cost_per_tx = j.at("package_cost_per_tx_us");
    c.record_trace = j.at("record_trace");
    return c;
}

json stats_json(const DelayStats& s) { return {{"mean_ms", s.mean_ms}, {"p50_ms", s.p50_ms}, {"p95_ms", s.p95_ms}}; }

DelayStats stats_from_json(const json& j) { return {j.at("mean_ms"), j.at("p50_ms"), j.at("p95_ms")}; }

json optional_time(const std::optional<SimTime>& t) { return t ? json(*t) : json(nullptr); }

std::optional<SimTime> time_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<SimTime>();
}

}  // namespace

std::string MetricsReport::to_json() const {
    json txs = json::array();
    for (const auto& r : transactions) {
        txs.push_back({{"tx_id", r.tx_id.hex()},
                       {"submit_us", r.submit},
                       {"package_us", optional_time(r.package)},
                       {"decide_us", optional_time(r.decide)}});
    }
    const auto& s = summary;
    json out = {{"config", config_json(config)},
                {"summary",
                 {{"offered_tps", s.offered_tps},
                  {"achieved_tps", s.achieved_tps},
                  {"submitted", s.submitted},
                  {"confirmed", s.confirmed},
                  {"processing", stats_json(s.processing)},
                  {"confirmation", stats_json(s.confirmation)},
                  {"consensus_mean_ms", s.consensus_mean_ms},
                  {"chain_height", s.chain_height},
                  {"messages", s.messages}}},
                {"transactions", std::move(txs)}};
    if (trace) out["trace"] = trace->serialize();
    return out.dump(1);
}

MetricsReport MetricsReport::from_json(std::string_view text) {
    auto j = json::parse(text);
    MetricsReport r;
    r.config = config_from_json(j.at("config"));
    const auto& s = j.at("summary");
    r.summary.offered_tps = s.at("offered_tps");
    r.summary.achieved_tps = s.at("achieved_tps");
    r.summary.submitted = s.at("submitted");
    r.summary.confirmed = s.at("confirmed");
    r.summary.processing = stats_from_json(s.at("processing"));
    r.summary.confirmation = stats_from_json(s.at("confirmation"));
    r.summary.consensus_mean_ms = s.at("consensus_mean_ms");
    r.summary.chain_height = s.at("chain_height");
    r.summary.messages = s.at("messages");
    for (const auto& t : j.at("transactions")) {
        r.transactions.push_back({Hash32::from_hex(t.at("tx_id").get<std::string>()), t.at("submit_us"),
                                  time_from_json(t.at("package_us")), time_from_json(t.at("decide_us"))});
    }
    if (j.contains("trace")) r.trace = TraceLog::parse(j.at("trace").get<std::string>());
    return r;
}

MetricsReport run_scenario(const ScenarioConfig& config) {
    config.validate();

    auto collector = std::make_shared<Collector>();
    const SimTime duration = SimTime{config.duration_s} * 1000 * kMillisecond;

    // The committee is fixed by the seed; a probe build learns it so each
    // client can be handed the validator ids up front.
    auto spec = config.cluster_spec();
    std::vector<NodeId> committee_ids;
    std::vector<Address> committee_addresses;
    {
        auto probe_spec = spec;
        probe_spec.record_trace = false;
        probe_spec.byzantine = 0;
        auto probe = build_cluster(probe_spec);
        committee_ids = probe.validator_ids();
        for (const auto& m : probe.committee.members()) committee_addresses.push_back(m.address);
    }
    const std::size_t client_count = config.nodes - config.validators;
    auto schedule = load_schedule(config, client_count);

    std::size_t next_client = 0;
    auto cluster = build_cluster(spec, [&](Vault vault, const NodeIdentity&) -> std::unique_ptr<Node> {
        const auto k = next_client++;
        auto payee = committee_addresses[k % committee_addresses.size()];
        return std::make_unique<ClientNode>(std::move(vault), committee_ids, std::move(schedule[k]), payee,
                                            collector);
    });

    collector->honest.assign(cluster.sim->size(), false);
    for (const auto& id : cluster.identities) collector->honest[id.id] = id.validator && !id.faulty;
    cluster.sim->set_observer([collector](NodeId node, const Note& note) { collector->on_note(node, note); });
    cluster.sim->run_until(duration);

    MetricsReport report;
    report.config = config;
    report.transactions = collector->records;
    report.summary = summarize(config, report.transactions);
    report.summary.messages = cluster.sim->messages_sent();
    std::optional<std::uint64_t> low;
    for (auto id : cluster.validator_ids()) {
        if (cluster.identities[id].faulty) continue;
        auto h = cluster.validator(id)->replica().ledger().height();
        low = low ? std::min(*low, h) : h;
    }
    report.summary.chain_height = low.value_or(0);
    if (config.record_trace) report.trace = std::move(*cluster.sim).take_trace();
    return report;
}

MetricsReport replay(const MetricsReport& prior) { return run_scenario(prior.config); }

std::string csv_row(const MetricsReport& r) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(3);
    const auto& s = r.summary;
    out << r.config.validators << ',' << s.offered_tps << ',' << s.achieved_tps << ',' << s.processing.mean_ms << ','
        << s.processing.p95_ms << ',' << s.confirmation.mean_ms << ',' << s.confirmation.p95_ms << ','
        << s.consensus_mean_ms << ',' << r.config.seed;
    return out.str();
}

std::vector<MetricsReport> sweep(const ScenarioConfig& base, const std::vector<std::uint32_t>& validators,
                                 const std::vector<std::uint32_t>& rates) {
    std::vector<MetricsReport> out;
    for (auto v : validators) {
        for (auto rate : rates) {
            auto c = base;
            c.validators = v;
            c.rate_tps = rate;
            out.push_back(run_scenario(c));
        }
    }
    return out;
}

namespace {
std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + path.string());
}
}  // namespace

void write_summary_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
    auto out = open_output(path);
    out << kCsvHeader << '\n';
    for (const auto& r : reports) out << csv_row(r) << '\n';
    finish(out, path);
}

void write_transactions_csv(const std::filesystem::path& path, const MetricsReport& report) {
    auto out = open_output(path);
    out << "tx_id,submit_ms,package_ms,decide_ms\n";
    auto cell = [](const std::optional<SimTime>& t) {
        if (!t) return std::string();
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(3);
        s << to_ms(*t);
        return s.str();
    };
    for (const auto& r : report.transactions)
        out << r.tx_id.hex() << ',' << cell(r.submit) << ',' << cell(r.package) << ',' << cell(r.decide) << '\n';
    finish(out, path);
}

// Genesis -------------------------------------------------------------------

std::vector<GenesisRecord> genesis_records(const Cluster& cluster) {
    std::map<Address, std::uint64_t> balances;
    for (const auto& a : cluster.allocations) balances[a.address] = a.balance;
    std::vector<GenesisRecord> out;
    for (const auto& id : cluster.identities) {
        out.push_back({id.address, id.public_key, id.stake, id.validator ? NodeRole::Validator : NodeRole::Client,
                       balances[id.address]});
    }
    return out;
}

Bytes encode_genesis(const std::vector<GenesisRecord>& records) {
    Writer w;
    w.count(records.size());
    for (const auto& r : records) {
        w.fixed(r.address);
        w.fixed(r.public_key);
        w.u64(r.stake);
        w.u8(static_cast<std::uint8_t>(r.role));
        w.u64(r.balance);
    }
    return std::move(w).take();
}

std::vector<GenesisRecord> decode_genesis(ByteView bytes) {
    Reader r(bytes);
    std::vector<GenesisRecord> out(r.count());
    for (auto& g : out) {
        r.fixed(g.address);
        r.fixed(g.public_key);
        g.stake = r.u64();
        auto role = r.u8();
        if (role > 1) throw DecodeError("invalid node role");
        g.role = static_cast<NodeRole>(role);
        g.balance = r.u64();
    }
    r.expect_end();
    return out;
}

std::string genesis_text(const std::vector<GenesisRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.address.hex() + ' ' + r.public_key.hex() + ' ' + std::to_string(r.stake) + ' ' +
               (r.role == NodeRole::Validator ? "validator" : "client") + ' ' + std::to_string(r.balance) + '\n';
    }
    return out;
}

std::vector<GenesisRecord> parse_genesis_text(std::string_view text) {
    std::vector<GenesisRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string address, key, role;
        GenesisRecord r;
        if (!(fields >> address >> key >> r.stake >> role >> r.balance))
            throw std::invalid_argument("genesis line " + std::to_string(line_no) + ": expected 5 fields");
        r.address = Address::from_hex(address);
        r.public_key = PublicKey::from_hex(key);
        if (address_of(r.public_key) != r.address)
            throw std::invalid_argument("genesis line " + std::to_string(line_no) + ": address does not match key");
        if (role == "validator") r.role = NodeRole::Validator;
        else if (role == "client") r.role = NodeRole::Client;
        else throw std::invalid_argument("genesis line " + std::to_string(line_no) + ": unknown role " + role);
        out.push_back(r);
    }
    return out;
}

// Attestation demo ------------------------------------------------------------

std::string_view to_string(AttestVerdict verdict) {
    switch (verdict) {
        case AttestVerdict::Intact: return "INTACT";
        case AttestVerdict::Tampered: return "TAMPERED";
        case AttestVerdict::Pending: return "PENDING";
    }
    return "?";
}

namespace {

/// A device that, if given code, attests it at start and publishes the
/// report on chain.
class DeviceNode : public Node {
public:
    DeviceNode(Vault vault, std::vector<NodeId> validators, std::optional<Bytes> publish)
        : vault_(std::move(vault)), validators_(std::move(validators)), publish_(std::move(publish)) {}

    void on_start(NodeContext& ctx) override {
        if (publish_) ctx.set_timer(ctx.now() + kMillisecond, 0);
    }

    void on_timer(NodeContext& ctx, std::uint64_t) override {
        report_ = vault_.attest_code(*publish_);
        Transaction tx;
        tx.sender = vault_.address();
        tx.nonce = 1;
        tx.kind = PublishReport{*report_};
        tx.signature = vault_.sign(KeySlot::Node, transaction_signing_bytes(tx));
        publish_tx_ = transaction_id(tx);
        ctx.trace("SUBMIT", "publish-report", *publish_tx_);
        for (auto v : validators_) ctx.send(v, tx);
    }

    void on_receive(NodeContext&, NodeId, const Payload&) override {}
    std::string role() const override { return "client"; }

    Vault& vault() { return vault_; }
    const std::optional<AttestationReport>& report() const { return report_; }
    const std::optional<Hash32>& publish_tx() const { return publish_tx_; }

private:
    Vault vault_;
    std::vector<NodeId> validators_;
    std::optional<Bytes> publish_;
    std::optional<AttestationReport> report_;
    std::optional<Hash32> publish_tx_;
};

}  // namespace

AttestOutcome attest_demo(ByteView code, const AttestOptions& options) {
    Bytes local(code.begin(), code.end());
    if (options.tamper_offset) {
        if (*options.tamper_offset >= local.size())
            throw ConfigError("tamper offset " + std::to_string(*options.tamper_offset) + " outside code of " +
                              std::to_string(local.size()) + " bytes");
        if (options.tamper_mask == 0) throw ConfigError("tamper mask must be non-zero");
        local[*options.tamper_offset] ^= options.tamper_mask;
    }

    ClusterSpec spec;
    spec.nodes = 6;
    spec.validators = 4;
    spec.seed = options.seed;
    spec.link = options.link;
    spec.record_trace = false;

    std::vector<NodeId> committee_ids;
    {
        auto probe = build_cluster(spec);
        committee_ids = probe.validator_ids();
    }
    std::size_t devices = 0;
    Bytes published(code.begin(), code.end());
    auto cluster = build_cluster(spec, [&](Vault vault, const NodeIdentity&) -> std::unique_ptr<Node> {
        const bool publisher = devices++ == 0;
        return std::make_unique<DeviceNode>(std::move(vault), committee_ids,
                                            publisher ? std::optional<Bytes>(published) : std::nullopt);
    });
    const auto clients = cluster.client_ids();
    auto& publisher = dynamic_cast<DeviceNode&>(cluster.sim->node(clients.at(0)));
    auto& executor = dynamic_cast<DeviceNode&>(cluster.sim->node(clients.at(1)));

    std::optional<SimTime> decided_at;
    std::optional<std::uint64_t> decided_height;
    cluster.sim->set_observer([&](NodeId, const Note& note) {
        if (note.kind != NoteKind::Decide || decided_at || !publisher.publish_tx()) return;
        if (std::find(note.tx_ids.begin(), note.tx_ids.end(), *publisher.publish_tx()) != note.tx_ids.end()) {
            decided_at = note.at;
            decided_height = note.height;
        }
    });
    cluster.sim->run_until(options.wait);

    AttestOutcome outcome;
    outcome.published_code_hash = sha256(code);
    outcome.decided_at = decided_at;
    outcome.decided_height = decided_height;

    // Step 1 result: the report as the chain holds it, read from an honest
    // validator.
    const auto& chain = cluster.validator(committee_ids.front())->replica().ledger();
    auto on_chain = lookup_report(chain.state(), outcome.published_code_hash);
    if (!on_chain || !publisher.report() || !verify_report(*on_chain, publisher.report()->endorsement_public_key)) {
        outcome.verdict = AttestVerdict::Pending;
        return outcome;
    }

    // Steps 2 and 3: attest the local copy and compare.
    auto local_report = executor.vault().attest_code(local);
    outcome.local_code_hash = local_report.code_hash;
    const bool intact = verify_report(local_report, std::nullopt) && local_report.code_hash == on_chain->code_hash;
    outcome.verdict = intact ? AttestVerdict::Intact : AttestVerdict::Tampered;
    return outcome;
}

AttestOutcome attest_demo_file(const std::filesystem::path& code_file, const AttestOptions& options) {
    std::ifstream in(code_file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + code_file.string());
    Bytes code((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw std::runtime_error("read failed for " + code_file.string());
    return attest_demo(code, options);
}

}  // namespace trustchain
