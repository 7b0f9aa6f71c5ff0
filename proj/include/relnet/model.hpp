#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relnet/tape.hpp"
#include "relnet/tasks.hpp"

namespace relnet {

enum class ModelKind {
    Rnn,
    Lstm,
    MemRnn,
    MemLstm,
    RelRnn,
    RelLstm,
    UniformAttnLinearRnn,
};

ModelKind parse_model_kind(const std::string& s);
std::string to_string(ModelKind k);
bool uses_attention(ModelKind k);   // mem-* and rel-*
bool uses_screening(ModelKind k);   // rel-*
bool lstm_base(ModelKind k);

// All learnable tensors of one model instance. Which fields are populated
// depends on the kind; for_each_param enumerates the populated ones in a
// fixed, documented order (the checkpoint and optimizer order).
struct ModelParams {
    ModelKind kind = ModelKind::Rnn;
    Nonlinearity phi = Nonlinearity::Tanh;
    long hidden = 0;
    long input_dim = 0;
    long out_dim = 0;
    int nu = 0;
    int rho = 0;

    Tensor w_rec;      // hidden x hidden
    Tensor w_in;       // hidden x input
    Tensor b_rec;      // hidden x 1
    Tensor phi_bias;   // hidden x 1, modrelu only (learned)
    Tensor w_gates;    // 4*hidden x (hidden+input), gate row blocks i,f,g,o
    Tensor b_gates;    // 4*hidden x 1
    Tensor w_att_state;  // hidden x hidden, applied to the previous macro-state
    Tensor w_att_mem;    // hidden x hidden, applied to the attended state
    Tensor v_att;        // hidden x 1 score vector
    Tensor w_out;      // out x hidden
    Tensor b_out;      // out x 1

    static ModelParams create(ModelKind kind, Nonlinearity phi, long hidden, long input_dim,
                              long out_dim, int nu, int rho, Rng& rng);

    void for_each_param(const std::function<void(const char*, Tensor&)>& fn);
    void for_each_param(const std::function<void(const char*, const Tensor&)>& fn) const;
    long param_count() const;
};

// Per-run instrumentation. Owned by the run; never shared across threads.
struct RunCounters {
    unsigned long long align_evals = 0;  // alignment function invocations
    std::size_t peak_slots = 0;          // max states attended in one step
    std::size_t peak_tape_nodes = 0;
};

// The model's parameter tensors registered as leaves of one tape.
struct BoundModel {
    const ModelParams* spec = nullptr;
    Tape* tape = nullptr;
    NodeId w_rec = kNoNode, w_in = kNoNode, b_rec = kNoNode, phi_bias = kNoNode;
    NodeId w_gates = kNoNode, b_gates = kNoNode;
    NodeId w_att_state = kNoNode, w_att_mem = kNoNode, v_att = kNoNode;
    NodeId w_out = kNoNode, b_out = kNoNode;

    static BoundModel bind(Tape& tape, const ModelParams& params);
    // (name, node) pairs in for_each_param order.
    std::vector<std::pair<const char*, NodeId>> param_nodes() const;
};

// One attended state: when it was born, its tape node, and the cached
// w_att_mem * h projection (computed once at birth).
struct MemberView {
    int birth = 0;
    NodeId hidden = kNoNode;
    NodeId mem_proj = kNoNode;
};

struct EvictionEvent {
    int birth = 0;
    double beta = 0.0;
    bool retained = false;
    int displaced_birth = -1;       // -1: nothing displaced
    double displaced_beta = 0.0;
};

// Algorithm state for relevancy screening: a ring of the last `nu` states and
// a consolidated set of up to `rho` states ranked by relevance score. A
// state's score accumulates attention weight while it sits in the ring and is
// frozen at eviction, which is when the retention decision happens.
class MemoryBank {
public:
    MemoryBank(int nu, int rho);

    struct Slot {
        int birth;
        NodeId hidden;
        NodeId mem_proj;
        double beta;  // running accumulator while buffered; frozen once relevant
    };

    // Insert a newborn state; when the ring would exceed nu the oldest state
    // is evicted and screened against the relevant set.
    void push(int t, NodeId hidden, NodeId mem_proj);

    // Relevant set then buffer, both ascending by birth (relevant births are
    // always strictly older than buffered ones).
    std::vector<MemberView> members() const;

    // Accumulate this step's attention weight into the state's pending score
    // if it is still buffered; weights on relevant-set members are ignored.
    void add_attention(int birth, double weight);

    const std::deque<Slot>& buffer() const { return buffer_; }
    const std::vector<Slot>& relevant() const { return relevant_; }
    int nu() const { return nu_; }
    int rho() const { return rho_; }
    void set_event_log(std::vector<EvictionEvent>* log) { log_ = log; }

private:
    void screen(Slot evicted);

    int nu_;
    int rho_;
    std::deque<Slot> buffer_;
    std::vector<Slot> relevant_;  // ascending by birth
    std::vector<EvictionEvent>* log_ = nullptr;
};

struct StepOutput {
    NodeId hidden = kNoNode;
    NodeId state = kNoNode;
    // (birth, batch-mean weight) for every attended state this step.
    std::vector<std::pair<int, double>> attention_row;
};

// ---- cell and attention steps -------------------------------------------------

// h_t = phi(w_rec * s_prev + w_in * x_t + b_rec)
NodeId rnn_cell_step(Tape& tape, const BoundModel& m, NodeId s_prev, NodeId x_t);

// Standard LSTM gates; the recurrent input is the macro-state s_prev.
// Returns (h_t, cell_t).
std::pair<NodeId, NodeId> lstm_cell_step(Tape& tape, const BoundModel& m, NodeId s_prev,
                                         NodeId cell_prev, NodeId x_t);

// e = v_att^T tanh(w_att_state * s_prev + w_att_mem * h_i), one scalar per
// batch column. Increments the run's alignment counter.
NodeId alignment_score(Tape& tape, const BoundModel& m, NodeId s_prev, NodeId h_i,
                       RunCounters* counters);

// Scores over all of h_all (h_1..h_t in order), softmax, context, s = h + c.
StepOutput full_attention_step(Tape& tape, const BoundModel& m, NodeId s_prev,
                               std::span<const MemberView> h_all, NodeId h_t,
                               RunCounters* counters);

// Algorithm lines 3-16 given h_t: buffer insert + eviction screening, scores
// over the union of buffer and relevant set, softmax, s = h + sum z_i m_i,
// pending-score accumulation.
StepOutput screened_attention_step(Tape& tape, const BoundModel& m, NodeId s_prev,
                                   MemoryBank& bank, NodeId h_t, int t, RunCounters* counters);

// ---- whole-sequence unroll ------------------------------------------------------

struct UnrollOptions {
    bool probe_hidden = false;      // flag every h_t and s_t as gradient probes
    bool with_readout = true;       // per-step logits w_out * s_t + b_out
    bool with_loss = false;         // cross-entropy over masked positions
    bool record_attention = true;
    std::vector<EvictionEvent>* event_log = nullptr;
};

struct UnrollResult {
    std::vector<NodeId> hidden;   // h_1..h_T
    std::vector<NodeId> state;    // s_1..s_T
    std::vector<NodeId> logits;   // empty unless with_readout
    NodeId loss = kNoNode;
    std::vector<std::vector<std::pair<int, double>>> attention;  // per step
    RunCounters counters;
    std::optional<MemoryBank> bank;  // rel-* kinds only
};

UnrollResult unroll(Tape& tape, const BoundModel& m, const TaskBatch& batch,
                    const UnrollOptions& opts);

}  // namespace relnet
