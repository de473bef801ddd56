#include "trustchain/netsim.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

namespace trustchain {

// Payloads ------------------------------------------------------------------

void write(Writer& w, const Payload& payload) {
    w.u8(static_cast<std::uint8_t>(payload.index()));
    std::visit([&w](const auto& p) { write(w, p); }, payload);
}

void read(Reader& r, Payload& payload) {
    switch (r.u8()) {
        case 0: {
            ConsensusMessage m;
            read(r, m);
            payload = std::move(m);
            break;
        }
        case 1: {
            Transaction tx;
            read(r, tx);
            payload = std::move(tx);
            break;
        }
        default: throw DecodeError("invalid payload tag");
    }
}

std::string payload_kind(const Payload& payload) {
    if (const auto* m = std::get_if<ConsensusMessage>(&payload)) return std::string(message_kind(*m));
    return "TX";
}

// Trace -------------------------------------------------------------------

namespace {

std::string format_time(SimTime t) {
    std::string frac = std::to_string(t % kMillisecond);
    return std::to_string(t / kMillisecond) + "." + std::string(3 - frac.size(), '0') + frac;
}

std::string format_node(NodeId id) { return id == kNoNode ? "-" : std::to_string(id); }

NodeId parse_node(std::string_view s) {
    if (s == "-") return kNoNode;
    NodeId id = 0;
    std::from_chars(s.data(), s.data() + s.size(), id);
    return id;
}

std::optional<std::uint64_t> field_value(std::string_view reason, std::string_view key) {
    std::string needle = std::string(key) + "=";
    auto pos = reason.find(needle);
    if (pos == std::string_view::npos) return std::nullopt;
    pos += needle.size();
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(reason.data() + pos, reason.data() + reason.size(), v);
    if (ec != std::errc()) return std::nullopt;
    return v;
}

std::set<NodeId> honest_validators(const TraceLog& trace) {
    std::set<NodeId> honest;
    for (const auto& r : trace.records) {
        if (r.kind == "NODE" && r.reason == "validator") honest.insert(r.src);
    }
    return honest;
}

}  // namespace

std::string TraceLog::serialize() const {
    std::string out;
    out.reserve(records.size() * 96);
    for (const auto& r : records) {
        out += format_time(r.time);
        out += ',';
        out += r.kind;
        out += ',';
        out += format_node(r.src);
        out += ',';
        out += format_node(r.dst);
        out += ',';
        out += r.payload_hash ? r.payload_hash->hex() : "-";
        out += ',';
        out += r.reason;
        out += '\n';
    }
    return out;
}

TraceLog TraceLog::parse(std::string_view text) {
    TraceLog log;
    while (!text.empty()) {
        auto eol = text.find('\n');
        auto line = text.substr(0, eol);
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        if (line.empty()) continue;

        std::string_view fields[6];
        for (int i = 0; i < 5; ++i) {
            auto comma = line.find(',');
            if (comma == std::string_view::npos) throw std::invalid_argument("trace line has too few fields");
            fields[i] = line.substr(0, comma);
            line = line.substr(comma + 1);
        }
        fields[5] = line;

        TraceRecord r;
        auto dot = fields[0].find('.');
        if (dot == std::string_view::npos || fields[0].size() - dot != 4)
            throw std::invalid_argument("bad trace time");
        std::int64_t ms = 0, frac = 0;
        std::from_chars(fields[0].data(), fields[0].data() + dot, ms);
        std::from_chars(fields[0].data() + dot + 1, fields[0].data() + fields[0].size(), frac);
        r.time = ms * kMillisecond + frac;
        r.kind = std::string(fields[1]);
        r.src = parse_node(fields[2]);
        r.dst = parse_node(fields[3]);
        if (fields[4] != "-") r.payload_hash = Hash32::from_hex(fields[4]);
        r.reason = std::string(fields[5]);
        log.records.push_back(std::move(r));
    }
    return log;
}

SafetyVerdict check_safety(const TraceLog& trace) {
    auto honest = honest_validators(trace);
    std::map<std::uint64_t, Hash32> decided;
    std::set<std::uint64_t> bad;
    for (const auto& r : trace.records) {
        if (r.kind != "DECIDE" || !honest.contains(r.src) || !r.payload_hash) continue;
        auto height = field_value(r.reason, "height");
        if (!height) continue;
        auto [it, inserted] = decided.emplace(*height, *r.payload_hash);
        if (!inserted && it->second != *r.payload_hash) bad.insert(*height);
    }
    SafetyVerdict v;
    v.violating_heights.assign(bad.begin(), bad.end());
    v.ok = v.violating_heights.empty();
    return v;
}

LivenessVerdict check_liveness(const TraceLog& trace, SimTime window) {
    auto honest = honest_validators(trace);
    SimTime end = 0;
    std::map<NodeId, std::vector<SimTime>> decides;
    for (const auto& r : trace.records) {
        end = std::max(end, r.time);
        if (r.kind == "DECIDE" && honest.contains(r.src)) decides[r.src].push_back(r.time);
    }
    LivenessVerdict v;
    for (auto id : honest) {
        SimTime last = 0;
        auto& times = decides[id];
        times.push_back(end);
        for (auto t : times) {
            if (t - last > window) {
                v.ok = false;
                v.stalled_node = id;
                v.stalled_from = last;
                return v;
            }
            last = t;
        }
    }
    return v;
}

// Random helpers --------------------------------------------------------------

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

double uniform_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    for (;;) {
        auto x = rng();
        if (x < limit) return x % bound;
    }
}

// Simulator -----------------------------------------------------------------

void NodeContext::send(NodeId dst, Payload payload, SimTime extra_delay) {
    sim_.send(self_, dst, std::move(payload), extra_delay);
}

void NodeContext::deliver_local(Payload payload, SimTime delay) {
    Simulator::Event e;
    e.at = now_ + std::max<SimTime>(delay, 0);
    e.kind = Simulator::EventKind::Local;
    e.src = self_;
    e.dst = self_;
    e.payload = std::make_shared<const Payload>(std::move(payload));
    sim_.push(std::move(e));
}

void NodeContext::set_timer(SimTime at, std::uint64_t tag) {
    Simulator::Event e;
    e.at = std::max(at, now_);
    e.kind = Simulator::EventKind::Timer;
    e.src = self_;
    e.dst = self_;
    e.tag = tag;
    sim_.push(std::move(e));
}

void NodeContext::trace(std::string kind, std::string reason, const std::optional<Hash32>& hash, NodeId dst) {
    sim_.record(now_, std::move(kind), self_, dst, hash, std::move(reason));
}

void NodeContext::observe(const Note& note) {
    if (sim_.observer_) sim_.observer_(self_, note);
}

Simulator::Simulator(std::uint64_t seed, LinkModel link, bool record_trace)
    : seed_(seed), default_link_(link), record_trace_(record_trace) {}

NodeId Simulator::add_node(std::unique_ptr<Node> node) {
    if (started_) throw std::logic_error("nodes must be added before the run starts");
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Simulator::set_link(NodeId src, NodeId dst, LinkModel link) { links_[{src, dst}] = link; }

void Simulator::partition(const std::vector<NodeId>& a, const std::vector<NodeId>& b) {
    for (auto x : a) {
        for (auto y : b) {
            auto cut = link(x, y);
            cut.drop_probability = 1.0;
            set_link(x, y, cut);
            cut = link(y, x);
            cut.drop_probability = 1.0;
            set_link(y, x, cut);
        }
    }
}

const LinkModel& Simulator::link(NodeId src, NodeId dst) const {
    auto it = links_.find({src, dst});
    return it == links_.end() ? default_link_ : it->second;
}

std::mt19937_64& Simulator::link_rng(NodeId src, NodeId dst) {
    auto key = std::make_pair(src, dst);
    auto it = link_rngs_.find(key);
    if (it == link_rngs_.end()) {
        auto stream = (static_cast<std::uint64_t>(src) << 32) | dst;
        it = link_rngs_.emplace(key, std::mt19937_64(mix_seed(seed_, stream))).first;
    }
    return it->second;
}

void Simulator::push(Event e) {
    e.sequence = next_sequence_++;
    queue_.push(std::move(e));
}

void Simulator::record(SimTime t, std::string kind, NodeId src, NodeId dst, const std::optional<Hash32>& hash,
                       std::string reason) {
    if (!record_trace_) return;
    trace_.records.push_back({t, std::move(kind), src, dst, hash, std::move(reason)});
}

void Simulator::send(NodeId src, NodeId dst, Payload payload, SimTime extra_delay) {
    if (dst >= nodes_.size()) throw std::out_of_range("send to unknown node");
    const auto id = next_message_id_++;
    ++messages_sent_;

    Event e;
    e.kind = EventKind::Message;
    e.src = src;
    e.dst = dst;
    e.message_id = id;
    std::optional<Hash32> hash;
    std::string tag;
    if (record_trace_) {
        hash = hash_of(payload);
        tag = payload_kind(payload) + "#" + std::to_string(id);
    }
    e.payload = std::make_shared<const Payload>(std::move(payload));

    record(now_, "SEND", src, dst, hash, tag);

    const auto& model = link(src, dst);
    auto& rng = link_rng(src, dst);
    const double roll = uniform_unit(rng);
    const SimTime jitter = static_cast<SimTime>(uniform_below(rng, std::uint64_t{model.jitter_ms} * kMillisecond + 1));
    if (roll < model.drop_probability) {
        record(now_, "DROP", src, dst, hash, tag);
        return;
    }
    e.at = now_ + std::max<SimTime>(extra_delay, 0) + SimTime{model.base_delay_ms} * kMillisecond + jitter;
    push(std::move(e));
}

void Simulator::run_until(SimTime until) {
    if (!started_) {
        started_ = true;
        for (NodeId id = 0; id < nodes_.size(); ++id) record(0, "NODE", id, kNoNode, std::nullopt, nodes_[id]->role());
        for (NodeId id = 0; id < nodes_.size(); ++id) {
            NodeContext ctx(*this, id, now_);
            nodes_[id]->on_start(ctx);
        }
    }
    while (!queue_.empty() && queue_.top().at <= until) {
        Event e = queue_.top();
        queue_.pop();
        now_ = e.at;
        NodeContext ctx(*this, e.dst, now_);
        auto& node = *nodes_[e.dst];
        switch (e.kind) {
            case EventKind::Message:
                if (record_trace_)
                    record(now_, "DELIVER", e.src, e.dst, hash_of(*e.payload),
                           payload_kind(*e.payload) + "#" + std::to_string(e.message_id));
                node.on_receive(ctx, e.src, *e.payload);
                break;
            case EventKind::Local: node.on_receive(ctx, e.dst, *e.payload); break;
            case EventKind::Timer: node.on_timer(ctx, e.tag); break;
        }
    }
    now_ = std::max(now_, until);
    record(now_, "END", kNoNode, kNoNode, std::nullopt, "messages=" + std::to_string(messages_sent_));
}

TraceLog Simulator::take_trace() && { return std::move(trace_); }

// Validators ----------------------------------------------------------------

ValidatorNode::ValidatorNode(Replica replica, std::map<Address, NodeId> directory)
    : replica_(std::move(replica)), directory_(std::move(directory)) {}

NodeId ValidatorNode::id_of(const Address& address) const {
    auto it = directory_.find(address);
    return it == directory_.end() ? kNoNode : it->second;
}

void ValidatorNode::on_start(NodeContext& ctx) { dispatch(ctx, replica_.start(ctx.now())); }

void ValidatorNode::on_receive(NodeContext& ctx, NodeId from, const Payload& payload) {
    if (const auto* tx = std::get_if<Transaction>(&payload)) {
        replica_.submit(*tx);
        return;
    }
    Address sender;
    for (const auto& [address, id] : directory_) {
        if (id == from) {
            sender = address;
            break;
        }
    }
    dispatch(ctx, replica_.handle(sender, std::get<ConsensusMessage>(payload), ctx.now()));
}

void ValidatorNode::on_timer(NodeContext& ctx, std::uint64_t tag) {
    if (tag != timer_generation_) return;
    dispatch(ctx, replica_.on_timeout(ctx.now()));
}

void ValidatorNode::send_out(NodeContext& ctx, const Outgoing& out, SimTime extra_delay) {
    if (out.to && *out.to == replica_.address()) {
        ctx.deliver_local(out.message, out.delay + extra_delay);
        return;
    }
    if (out.to) {
        auto id = id_of(*out.to);
        if (id != kNoNode) ctx.send(id, out.message, out.delay + extra_delay);
        return;
    }
    for (const auto& [address, id] : directory_) {
        if (id != ctx.self()) ctx.send(id, out.message, out.delay + extra_delay);
    }
}

void ValidatorNode::record_notes(NodeContext& ctx, const std::vector<Note>& notes) {
    for (const auto& n : notes) {
        const std::string epoch = "epoch=" + std::to_string(n.epoch);
        switch (n.kind) {
            case NoteKind::Drop: ctx.trace("REJECT", n.reason + ";" + epoch, n.hash); break;
            case NoteKind::Package:
                ctx.trace("PACKAGE", "height=" + std::to_string(n.height) + ";" + epoch + ";" + n.reason, n.hash);
                break;
            case NoteKind::Decide:
                ctx.trace("DECIDE", "height=" + std::to_string(n.height) + ";" + epoch + ";" + n.reason, n.hash);
                break;
            case NoteKind::EnterEpoch: ctx.trace("EPOCH", epoch + ";" + n.reason); break;
            case NoteKind::Timeout: ctx.trace("TIMEOUT", epoch); break;
            case NoteKind::Lock: ctx.trace("LOCK", "height=" + std::to_string(n.height) + ";" + epoch, n.hash); break;
            case NoteKind::Sync: ctx.trace("SYNC", "height=" + std::to_string(n.height) + ";" + n.reason); break;
        }
        ctx.observe(n);
    }
}

void ValidatorNode::dispatch(NodeContext& ctx, Actions&& actions) {
    for (const auto& out : actions.sends) send_out(ctx, out);
    if (actions.timer) ctx.set_timer(*actions.timer, ++timer_generation_);
    record_notes(ctx, actions.notes);
}

// Byzantine strategies ------------------------------------------------------

ByzantineStrategy ByzantineStrategy::parse(std::string_view text) {
    ByzantineStrategy s;
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    std::string_view v = lower;
    if (v == "silent") s.kind = Kind::Silent;
    else if (v == "equivocate") s.kind = Kind::Equivocate;
    else if (v == "withholdvotes" || v == "withhold-votes" || v == "withhold") s.kind = Kind::WithholdVotes;
    else if (v.starts_with("delayall") || v.starts_with("delay-all") || v.starts_with("delay")) {
        s.kind = Kind::DelayAll;
        auto colon = v.find(':');
        if (colon != std::string_view::npos) {
            auto num = v.substr(colon + 1);
            auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), s.extra_ms);
            if (ec != std::errc() || p != num.data() + num.size())
                throw std::invalid_argument("bad DelayAll amount: " + std::string(text));
        }
    } else if (v == "randomjunk" || v == "random-junk" || v == "junk") s.kind = Kind::RandomJunk;
    else throw std::invalid_argument("unknown Byzantine strategy: " + std::string(text));
    return s;
}

std::string ByzantineStrategy::name() const {
    switch (kind) {
        case Kind::Silent: return "Silent";
        case Kind::Equivocate: return "Equivocate";
        case Kind::WithholdVotes: return "WithholdVotes";
        case Kind::DelayAll: return "DelayAll:" + std::to_string(extra_ms);
        case Kind::RandomJunk: return "RandomJunk";
    }
    return "?";
}

namespace {

class ByzantineNode : public ValidatorNode {
public:
    ByzantineNode(ByzantineStrategy strategy, Replica replica, std::map<Address, NodeId> directory)
        : ValidatorNode(std::move(replica), std::move(directory)), strategy_(strategy) {}

    std::string role() const override { return "byzantine:" + strategy_.name(); }
    bool honest() const override { return false; }

protected:
    ByzantineStrategy strategy_;
};

class SilentNode : public ByzantineNode {
public:
    using ByzantineNode::ByzantineNode;

protected:
    void dispatch(NodeContext& ctx, Actions&& actions) override {
        if (actions.timer) ctx.set_timer(*actions.timer, ++timer_generation_);
        record_notes(ctx, actions.notes);
    }
};

class WithholdVotesNode : public ByzantineNode {
public:
    using ByzantineNode::ByzantineNode;

protected:
    void dispatch(NodeContext& ctx, Actions&& actions) override {
        std::erase_if(actions.sends,
                      [](const Outgoing& o) { return std::holds_alternative<VoteMsg>(o.message); });
        ValidatorNode::dispatch(ctx, std::move(actions));
    }
};

class DelayAllNode : public ByzantineNode {
public:
    using ByzantineNode::ByzantineNode;

protected:
    void dispatch(NodeContext& ctx, Actions&& actions) override {
        for (const auto& out : actions.sends) send_out(ctx, out, SimTime{strategy_.extra_ms} * kMillisecond);
        if (actions.timer) ctx.set_timer(*actions.timer, ++timer_generation_);
        record_notes(ctx, actions.notes);
    }
};

class RandomJunkNode : public ByzantineNode {
public:
    RandomJunkNode(ByzantineStrategy strategy, Replica replica, std::map<Address, NodeId> directory,
                   std::uint64_t seed)
        : ByzantineNode(strategy, std::move(replica), std::move(directory)), rng_(seed) {}

protected:
    void dispatch(NodeContext& ctx, Actions&& actions) override {
        for (auto& out : actions.sends) {
            if (out.to && *out.to == replica_.address()) {
                send_out(ctx, out);
                continue;
            }
            Outgoing junk = out;
            if (uniform_below(rng_, 4) != 0) junk.message = make_junk();
            send_out(ctx, junk);
        }
        if (actions.timer) ctx.set_timer(*actions.timer, ++timer_generation_);
        record_notes(ctx, actions.notes);
    }

private:
    template <std::size_t N, class Tag>
    void randomize(FixedBytes<N, Tag>& b) {
        for (auto& byte : b.bytes) byte = static_cast<std::uint8_t>(rng_());
    }

    Hash32 random_hash() {
        Hash32 h;
        randomize(h);
        return h;
    }

    Phase random_phase() { return static_cast<Phase>(uniform_below(rng_, 3)); }

    QuorumCertificate forged_cert() {
        QuorumCertificate c;
        c.block_hash = random_hash();
        c.phase = random_phase();
        c.epoch = replica_.state().current_epoch + uniform_below(rng_, 3);
        // Real signatures from this node only, padded with copies or junk.
        auto vote = replica_.make_vote(c.block_hash, c.phase, c.epoch);
        const auto& members = replica_.config().committee.members();
        for (std::size_t i = 0; i < replica_.config().committee.quorum(); ++i) {
            VoterSignature vs;
            vs.voter = i == 0 ? vote.voter : members[uniform_below(rng_, members.size())].address;
            vs.signature = vote.signature;
            if (i > 0 && uniform_below(rng_, 2) == 0) randomize(vs.signature);
            c.voters.push_back(vs);
        }
        return c;
    }

    ConsensusMessage make_junk() {
        const auto epoch = replica_.state().current_epoch;
        switch (uniform_below(rng_, 7)) {
            case 0: {
                Proposal p;
                p.epoch = epoch + uniform_below(rng_, 2);
                p.block = replica_.build_block({}, p.epoch);
                if (uniform_below(rng_, 2) == 0) randomize(p.block.header.state_root);
                else p.block.header.height += uniform_below(rng_, 3);
                return p;
            }
            case 1: return VoteMsg{replica_.make_vote(random_hash(), random_phase(), epoch)};
            case 2: {
                auto v = replica_.make_vote(random_hash(), random_phase(), epoch);
                randomize(v.signature);
                return VoteMsg{v};
            }
            case 3: return CertMsg{forged_cert()};
            case 4: return replica_.make_new_epoch(epoch + 1 + uniform_below(rng_, 1000));
            case 5: {
                auto n = replica_.make_new_epoch(epoch + 1);
                n.highest_cert = forged_cert();
                return n;
            }
            default: {
                SyncResponse s;
                Block b = replica_.build_block({}, epoch);
                if (uniform_below(rng_, 2) == 0) b.header.commit_certificate = forged_cert();
                s.blocks.push_back(std::move(b));
                return s;
            }
        }
    }

    std::mt19937_64 rng_;
};

/// Leads with two conflicting blocks sent to disjoint halves of the honest
/// validators, aggregating certificates for both; otherwise votes for
/// everything it sees.
class EquivocateNode : public ByzantineNode {
public:
    EquivocateNode(ByzantineStrategy strategy, Replica replica, std::map<Address, NodeId> directory,
                   std::shared_ptr<const Coalition> coalition)
        : ByzantineNode(strategy, std::move(replica), std::move(directory)), coalition_(std::move(coalition)) {}

    void on_receive(NodeContext& ctx, NodeId from, const Payload& payload) override {
        if (const auto* msg = std::get_if<ConsensusMessage>(&payload); msg && from != ctx.self()) {
            if (const auto* v = std::get_if<VoteMsg>(msg)) aggregate(ctx, v->vote);
            else if (const auto* p = std::get_if<Proposal>(msg)) vote_blindly(ctx, block_hash(p->block), Phase::Prepare, p->epoch);
            else if (const auto* c = std::get_if<CertMsg>(msg); c && c->cert.phase != Phase::Commit)
                vote_blindly(ctx, c->cert.block_hash, next_phase(c->cert.phase), c->cert.epoch);
        }
        ValidatorNode::on_receive(ctx, from, payload);
    }

protected:
    void dispatch(NodeContext& ctx, Actions&& actions) override {
        for (auto& out : actions.sends) {
            const bool self = out.to && *out.to == replica_.address();
            if (const auto* p = std::get_if<Proposal>(&out.message)) {
                if (self) continue;
                if (!out.to) {
                    equivocate(ctx, *p, out.delay);
                    continue;
                }
            }
            if (std::holds_alternative<CertMsg>(out.message) && replica_.is_leader() &&
                agg_epoch_ == replica_.state().current_epoch)
                continue;
            send_out(ctx, out);
        }
        if (actions.timer) ctx.set_timer(*actions.timer, ++timer_generation_);
        record_notes(ctx, actions.notes);
    }

private:
    struct Branch {
        std::vector<NodeId> audience;
    };

    static Phase next_phase(Phase p) { return p == Phase::Prepare ? Phase::PreCommit : Phase::Commit; }

    void vote_blindly(NodeContext& ctx, const Hash32& hash, Phase phase, std::uint64_t epoch) {
        auto leader = id_of(replica_.config().committee.leader_for_epoch(epoch));
        if (leader == kNoNode || leader == ctx.self()) return;
        if (!voted_.insert({hash, phase, epoch}).second) return;
        ctx.send(leader, ConsensusMessage{VoteMsg{replica_.make_vote(hash, phase, epoch)}});
    }

    Block variant_of(const Block& a, std::uint64_t epoch) const {
        auto txs = a.transactions;
        if (!txs.empty()) {
            txs.pop_back();
        } else {
            Transaction tx;
            tx.sender = replica_.address();
            tx.nonce = replica_.ledger().state().account(tx.sender).nonce + 1;
            tx.kind = Transfer{replica_.address(), 0};
            tx.signature = replica_.vault().sign(KeySlot::Node, transaction_signing_bytes(tx));
            txs.push_back(tx);
        }
        return replica_.build_block(txs, epoch);
    }

    void equivocate(NodeContext& ctx, const Proposal& original, SimTime delay) {
        agg_epoch_ = original.epoch;
        branches_.clear();
        buckets_.clear();
        emitted_.clear();

        Proposal a = original;
        Proposal b = original;
        b.block = variant_of(original.block, original.epoch);
        Note package{NoteKind::Package, "equivocation", block_hash(b.block), b.block.header.height, original.epoch,
                     ctx.now() + delay, {}};
        for (const auto& tx : b.block.transactions) package.tx_ids.push_back(transaction_id(tx));
        record_notes(ctx, {package});

        const auto& honest = coalition_->honest_validators;
        const std::size_t half = (honest.size() + 1) / 2;
        Branch branch_a, branch_b;
        for (std::size_t i = 0; i < honest.size(); ++i) (i < half ? branch_a : branch_b).audience.push_back(honest[i]);
        for (auto id : coalition_->members) {
            if (id == ctx.self()) continue;
            branch_a.audience.push_back(id);
            branch_b.audience.push_back(id);
        }

        for (auto& [proposal, branch] : {std::pair{&a, &branch_a}, std::pair{&b, &branch_b}}) {
            auto hash = block_hash(proposal->block);
            for (auto id : branch->audience) ctx.send(id, ConsensusMessage{*proposal}, delay);
            branches_[hash] = *branch;
            add_vote(ctx, replica_.make_vote(hash, Phase::Prepare, original.epoch));
        }
    }

    void aggregate(NodeContext& ctx, const Vote& vote) {
        if (vote.epoch != agg_epoch_ || !branches_.contains(vote.block_hash)) return;
        auto key = replica_.config().committee.public_key(vote.voter);
        if (!key || !verify_vote(vote, *key)) return;
        add_vote(ctx, vote);
    }

    void add_vote(NodeContext& ctx, const Vote& vote) {
        auto& bucket = buckets_[{vote.block_hash, vote.phase}];
        bucket.emplace(vote.voter, vote.signature);
        if (bucket.size() < replica_.config().committee.quorum()) return;
        if (!emitted_.insert({vote.block_hash, vote.phase}).second) return;

        QuorumCertificate cert;
        cert.block_hash = vote.block_hash;
        cert.phase = vote.phase;
        cert.epoch = vote.epoch;
        for (const auto& [voter, sig] : bucket) cert.voters.push_back({voter, sig});
        for (auto id : branches_[vote.block_hash].audience) ctx.send(id, ConsensusMessage{CertMsg{cert}});
        if (vote.phase != Phase::Commit)
            add_vote(ctx, replica_.make_vote(vote.block_hash, next_phase(vote.phase), vote.epoch));
    }

    std::shared_ptr<const Coalition> coalition_;
    std::optional<std::uint64_t> agg_epoch_;
    std::map<Hash32, Branch> branches_;
    std::map<std::pair<Hash32, Phase>, std::map<Address, Signature>> buckets_;
    std::set<std::pair<Hash32, Phase>> emitted_;
    std::set<std::tuple<Hash32, Phase, std::uint64_t>> voted_;
};

}  // namespace

std::unique_ptr<ValidatorNode> make_byzantine(ByzantineStrategy strategy, Replica replica,
                                              std::map<Address, NodeId> directory,
                                              std::shared_ptr<const Coalition> coalition, std::uint64_t seed) {
    using K = ByzantineStrategy::Kind;
    switch (strategy.kind) {
        case K::Silent: return std::make_unique<SilentNode>(strategy, std::move(replica), std::move(directory));
        case K::WithholdVotes:
            return std::make_unique<WithholdVotesNode>(strategy, std::move(replica), std::move(directory));
        case K::DelayAll: return std::make_unique<DelayAllNode>(strategy, std::move(replica), std::move(directory));
        case K::RandomJunk:
            return std::make_unique<RandomJunkNode>(strategy, std::move(replica), std::move(directory), seed);
        case K::Equivocate:
            return std::make_unique<EquivocateNode>(strategy, std::move(replica), std::move(directory),
                                                    std::move(coalition));
    }
    throw std::invalid_argument("unknown strategy");
}

// Cluster -------------------------------------------------------------------

std::vector<NodeId> Cluster::validator_ids() const {
    std::vector<NodeId> ids;
    for (const auto& n : identities)
        if (n.validator) ids.push_back(n.id);
    return ids;
}

std::vector<NodeId> Cluster::client_ids() const {
    std::vector<NodeId> ids;
    for (const auto& n : identities)
        if (!n.validator) ids.push_back(n.id);
    return ids;
}

std::vector<NodeId> Cluster::faulty_ids() const {
    std::vector<NodeId> ids;
    for (const auto& n : identities)
        if (n.faulty) ids.push_back(n.id);
    return ids;
}

const ValidatorNode* Cluster::validator(NodeId id) const {
    return dynamic_cast<const ValidatorNode*>(&sim->node(id));
}

Ledger Cluster::genesis_ledger() const { return Ledger(committee, keys, allocations); }

namespace {

Seed32 derive_seed(std::string_view label, std::uint64_t seed, std::uint64_t index) {
    Writer w;
    w.var(ByteView(reinterpret_cast<const std::uint8_t*>(label.data()), label.size()));
    w.u64(seed);
    w.u64(index);
    return Seed32::from(sha256(w.bytes()).view());
}

}  // namespace

Cluster build_cluster(const ClusterSpec& spec, const ClientFactory& make_client) {
    if (spec.validators == 0) throw std::invalid_argument("cluster needs at least one validator");
    if (spec.byzantine > spec.validators) throw std::invalid_argument("more faulty nodes than validators");
    const std::uint32_t total = std::max(spec.nodes, spec.validators);

    std::vector<Vault> vaults;
    std::vector<NodeIdentity> ids;
    StakeLedger stakes;
    std::mt19937_64 stake_rng(mix_seed(spec.seed, 0x5354414b45));
    for (std::uint32_t i = 0; i < total; ++i) {
        vaults.push_back(Vault::provision(derive_seed("trustchain/sim/device", spec.seed, i),
                                          derive_seed("trustchain/sim/entropy", spec.seed, i)));
        NodeIdentity id;
        id.id = i;
        id.public_key = vaults.back().public_key(KeySlot::Node);
        id.address = vaults.back().address();
        id.stake = 1 + uniform_below(stake_rng, 1000);
        stakes.add(id.public_key, id.stake);
        ids.push_back(id);
    }

    Cluster cluster;
    cluster.committee = select_committee(stakes, spec.validators);
    std::map<Address, NodeId> directory;
    for (auto& id : ids) {
        cluster.keys[id.address] = id.public_key;
        cluster.allocations.push_back({id.address, spec.initial_balance});
        if (cluster.committee.contains(id.address)) {
            id.validator = true;
            directory[id.address] = id.id;
        }
    }

    // Faulty validators: a seeded partial Fisher-Yates over committee order.
    std::vector<NodeId> order;
    for (const auto& m : cluster.committee.members()) order.push_back(directory.at(m.address));
    std::mt19937_64 fault_rng(mix_seed(spec.seed, 0x4641554c54));
    for (std::uint32_t i = 0; i < spec.byzantine; ++i) {
        auto j = i + uniform_below(fault_rng, order.size() - i);
        std::swap(order[i], order[j]);
        ids[order[i]].faulty = true;
    }

    auto coalition = std::make_shared<Coalition>();
    for (const auto& m : cluster.committee.members()) {
        auto nid = directory.at(m.address);
        (ids[nid].faulty ? coalition->members : coalition->honest_validators).push_back(nid);
    }

    auto config = ConsensusConfig::for_committee(cluster.committee);
    config.base_timeout = spec.base_timeout;
    config.max_block_txs = spec.max_block_txs;
    config.package_cost_per_tx = spec.package_cost_per_tx;
    config.propose_empty_blocks = spec.propose_empty_blocks;

    cluster.sim = std::make_unique<Simulator>(spec.seed, spec.link, spec.record_trace);
    for (std::uint32_t i = 0; i < total; ++i) {
        const auto& id = ids[i];
        std::unique_ptr<Node> node;
        if (id.validator) {
            Replica replica(config, std::move(vaults[i]), cluster.genesis_ledger());
            if (id.faulty) {
                node = make_byzantine(spec.strategy, std::move(replica), directory, coalition,
                                      mix_seed(spec.seed, 0x4a554e4b00 + i));
            } else {
                node = std::make_unique<ValidatorNode>(std::move(replica), directory);
            }
        } else if (make_client) {
            node = make_client(std::move(vaults[i]), id);
        } else {
            node = std::make_unique<IdleNode>();
        }
        cluster.sim->add_node(std::move(node));
    }
    cluster.identities = std::move(ids);
    return cluster;
}

TraceLog run(const ClusterSpec& spec, SimTime until) {
    auto cluster = build_cluster(spec);
    cluster.sim->run_until(until);
    return std::move(*cluster.sim).take_trace();
}

}  // namespace trustchain
