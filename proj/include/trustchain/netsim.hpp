#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "trustchain/consensus.hpp"

namespace trustchain {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xffffffff;

using Payload = std::variant<ConsensusMessage, Transaction>;

void write(Writer& w, const Payload& payload);
void read(Reader& r, Payload& payload);
std::string payload_kind(const Payload& payload);

struct LinkModel {
    std::uint32_t base_delay_ms = 5;
    std::uint32_t jitter_ms = 2;  // uniform in [0, jitter_ms]
    double drop_probability = 0.0;

    bool operator==(const LinkModel&) const = default;
};

// Trace -------------------------------------------------------------------

struct TraceRecord {
    SimTime time = 0;
    std::string kind;
    NodeId src = kNoNode;
    NodeId dst = kNoNode;
    std::optional<Hash32> payload_hash;
    std::string reason;

    bool operator==(const TraceRecord&) const = default;
};

struct TraceLog {
    std::vector<TraceRecord> records;

    /// One line per record: time_ms,kind,src,dst,payload_hash,reason
    std::string serialize() const;
    static TraceLog parse(std::string_view text);
    bool operator==(const TraceLog&) const = default;
};

struct SafetyVerdict {
    bool ok = true;
    std::vector<std::uint64_t> violating_heights;
};

struct LivenessVerdict {
    bool ok = true;
    /// Honest node that went a whole window without a decision, and the
    /// start of that window.
    std::optional<NodeId> stalled_node;
    SimTime stalled_from = 0;
};

/// Honest nodes never decide different blocks at the same height.
SafetyVerdict check_safety(const TraceLog& trace);

/// Every honest validator decides at least once in every window of the run.
LivenessVerdict check_liveness(const TraceLog& trace, SimTime window);

// Nodes -------------------------------------------------------------------

class Simulator;

/// What a node may do while handling one event.
class NodeContext {
public:
    SimTime now() const { return now_; }
    NodeId self() const { return self_; }

    void send(NodeId dst, Payload payload, SimTime extra_delay = 0);
    /// Delivered back to this node after delay, without touching the network.
    void deliver_local(Payload payload, SimTime delay);
    void set_timer(SimTime at, std::uint64_t tag);
    void trace(std::string kind, std::string reason, const std::optional<Hash32>& hash = std::nullopt,
               NodeId dst = kNoNode);
    /// Structured observation for metric collectors; not written to the trace.
    void observe(const Note& note);

private:
    friend class Simulator;
    NodeContext(Simulator& sim, NodeId self, SimTime now) : sim_(sim), self_(self), now_(now) {}

    Simulator& sim_;
    NodeId self_;
    SimTime now_;
};

class Node {
public:
    virtual ~Node() = default;
    virtual void on_start(NodeContext&) {}
    virtual void on_receive(NodeContext& ctx, NodeId from, const Payload& payload) = 0;
    virtual void on_timer(NodeContext&, std::uint64_t /*tag*/) {}
    /// "validator", "client", or "byzantine:<strategy>".
    virtual std::string role() const = 0;
    virtual bool honest() const { return true; }
};

using Observer = std::function<void(NodeId, const Note&)>;

/// Deterministic discrete-event network. Events run in (time, sequence)
/// order; every randomised choice comes from per-link streams derived from
/// the run seed.
class Simulator {
public:
    Simulator(std::uint64_t seed, LinkModel link, bool record_trace = true);

    NodeId add_node(std::unique_ptr<Node> node);
    Node& node(NodeId id) { return *nodes_.at(id); }
    const Node& node(NodeId id) const { return *nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    void set_link(NodeId src, NodeId dst, LinkModel link);
    /// Drops everything between the two groups, both directions.
    void partition(const std::vector<NodeId>& a, const std::vector<NodeId>& b);
    void set_observer(Observer observer) { observer_ = std::move(observer); }

    /// Starts nodes (first call only) and processes events up to `until`.
    void run_until(SimTime until);
    SimTime now() const { return now_; }

    const TraceLog& trace() const { return trace_; }
    TraceLog take_trace() &&;
    std::uint64_t messages_sent() const { return messages_sent_; }

private:
    friend class NodeContext;

    enum class EventKind { Message, Local, Timer };
    struct Event {
        SimTime at = 0;
        std::uint64_t sequence = 0;
        EventKind kind = EventKind::Message;
        NodeId src = kNoNode;
        NodeId dst = kNoNode;
        std::shared_ptr<const Payload> payload;
        std::uint64_t message_id = 0;
        std::uint64_t tag = 0;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            return a.at != b.at ? a.at > b.at : a.sequence > b.sequence;
        }
    };

    void push(Event e);
    void send(NodeId src, NodeId dst, Payload payload, SimTime extra_delay);
    void record(SimTime t, std::string kind, NodeId src, NodeId dst, const std::optional<Hash32>& hash,
                std::string reason);
    std::mt19937_64& link_rng(NodeId src, NodeId dst);
    const LinkModel& link(NodeId src, NodeId dst) const;

    std::uint64_t seed_;
    LinkModel default_link_;
    bool record_trace_;
    std::vector<std::unique_ptr<Node>> nodes_;
    std::map<std::pair<NodeId, NodeId>, LinkModel> links_;
    std::map<std::pair<NodeId, NodeId>, std::mt19937_64> link_rngs_;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::uint64_t next_sequence_ = 0;
    std::uint64_t next_message_id_ = 0;
    std::uint64_t messages_sent_ = 0;
    SimTime now_ = 0;
    bool started_ = false;
    Observer observer_;
    TraceLog trace_;
};

// Random helpers shared by the harness. mt19937_64 output is fixed by the
// standard; the distributions are not, so mapping is done here.

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
double uniform_unit(std::mt19937_64& rng);
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

// Validators ----------------------------------------------------------------

class ValidatorNode : public Node {
public:
    ValidatorNode(Replica replica, std::map<Address, NodeId> directory);

    void on_start(NodeContext& ctx) override;
    void on_receive(NodeContext& ctx, NodeId from, const Payload& payload) override;
    void on_timer(NodeContext& ctx, std::uint64_t tag) override;
    std::string role() const override { return "validator"; }

    const Replica& replica() const { return replica_; }

protected:
    /// Turns replica output into network sends, timers and trace records.
    virtual void dispatch(NodeContext& ctx, Actions&& actions);
    void send_out(NodeContext& ctx, const Outgoing& out, SimTime extra_delay = 0);
    void record_notes(NodeContext& ctx, const std::vector<Note>& notes);
    NodeId id_of(const Address& address) const;

    Replica replica_;
    std::map<Address, NodeId> directory_;  // committee members
    std::uint64_t timer_generation_ = 0;
};

struct ByzantineStrategy {
    enum class Kind { Silent, Equivocate, WithholdVotes, DelayAll, RandomJunk };
    Kind kind = Kind::Silent;
    std::uint32_t extra_ms = 30;  // DelayAll only

    static ByzantineStrategy parse(std::string_view text);
    std::string name() const;
    bool operator==(const ByzantineStrategy&) const = default;
};

inline const std::vector<ByzantineStrategy::Kind>& all_strategy_kinds() {
    static const std::vector<ByzantineStrategy::Kind> kinds = {
        ByzantineStrategy::Kind::Silent, ByzantineStrategy::Kind::Equivocate,
        ByzantineStrategy::Kind::WithholdVotes, ByzantineStrategy::Kind::DelayAll,
        ByzantineStrategy::Kind::RandomJunk};
    return kinds;
}

/// Shared knowledge of a faulty coalition: who is in it and which honest
/// validators sit on each side of an equivocation.
struct Coalition {
    std::vector<NodeId> members;
    std::vector<NodeId> honest_validators;
};

std::unique_ptr<ValidatorNode> make_byzantine(ByzantineStrategy strategy, Replica replica,
                                              std::map<Address, NodeId> directory,
                                              std::shared_ptr<const Coalition> coalition, std::uint64_t seed);

/// Node that ignores everything; stands in for non-validators without load.
class IdleNode : public Node {
public:
    void on_receive(NodeContext&, NodeId, const Payload&) override {}
    std::string role() const override { return "client"; }
};

// Cluster construction --------------------------------------------------------

struct NodeIdentity {
    NodeId id = 0;
    Address address;
    PublicKey public_key;
    std::uint64_t stake = 0;
    bool validator = false;
    bool faulty = false;
};

struct ClusterSpec {
    /// Total nodes; the `validators` highest-staked form the committee and
    /// the rest are clients. Zero means validators only.
    std::uint32_t nodes = 0;
    std::uint32_t validators = 4;
    std::uint32_t byzantine = 0;
    ByzantineStrategy strategy;
    std::uint64_t seed = 0;
    LinkModel link;
    SimTime base_timeout = milliseconds(200);
    std::uint64_t max_block_txs = 10;
    SimTime package_cost_per_tx = milliseconds(2);
    bool propose_empty_blocks = true;
    std::uint64_t initial_balance = 1'000'000'000;
    bool record_trace = true;
};

using ClientFactory = std::function<std::unique_ptr<Node>(Vault vault, const NodeIdentity& self)>;

struct Cluster {
    std::unique_ptr<Simulator> sim;
    ValidatorSet committee;
    KeyDirectory keys;
    std::vector<GenesisAccount> allocations;
    std::vector<NodeIdentity> identities;

    std::vector<NodeId> validator_ids() const;
    std::vector<NodeId> client_ids() const;
    std::vector<NodeId> faulty_ids() const;
    const ValidatorNode* validator(NodeId id) const;
    /// A fresh genesis ledger for this cluster's committee and accounts.
    Ledger genesis_ledger() const;
};

/// Deterministic in spec.seed: vault seeds, stakes and the choice of faulty
/// validators all derive from it.
Cluster build_cluster(const ClusterSpec& spec, const ClientFactory& make_client = {});

/// Builds, runs to `until` and returns the trace.
TraceLog run(const ClusterSpec& spec, SimTime until);

}  // namespace trustchain
