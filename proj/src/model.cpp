#include "relnet/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "relnet/errors.hpp"

namespace relnet {

ModelKind parse_model_kind(const std::string& s) {
    if (s == "rnn") return ModelKind::Rnn;
    if (s == "lstm") return ModelKind::Lstm;
    if (s == "mem-rnn") return ModelKind::MemRnn;
    if (s == "mem-lstm") return ModelKind::MemLstm;
    if (s == "rel-rnn") return ModelKind::RelRnn;
    if (s == "rel-lstm") return ModelKind::RelLstm;
    if (s == "uniform-attn-linear-rnn") return ModelKind::UniformAttnLinearRnn;
    throw ConfigError("unknown model kind '" + s + "'");
}

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Rnn: return "rnn";
        case ModelKind::Lstm: return "lstm";
        case ModelKind::MemRnn: return "mem-rnn";
        case ModelKind::MemLstm: return "mem-lstm";
        case ModelKind::RelRnn: return "rel-rnn";
        case ModelKind::RelLstm: return "rel-lstm";
        case ModelKind::UniformAttnLinearRnn: return "uniform-attn-linear-rnn";
    }
    return "?";
}

bool uses_attention(ModelKind k) {
    return k == ModelKind::MemRnn || k == ModelKind::MemLstm || k == ModelKind::RelRnn ||
           k == ModelKind::RelLstm;
}

bool uses_screening(ModelKind k) { return k == ModelKind::RelRnn || k == ModelKind::RelLstm; }

bool lstm_base(ModelKind k) {
    return k == ModelKind::Lstm || k == ModelKind::MemLstm || k == ModelKind::RelLstm;
}

ModelParams ModelParams::create(ModelKind kind, Nonlinearity phi, long hidden, long input_dim,
                                long out_dim, int nu, int rho, Rng& rng) {
    if (hidden < 1 || input_dim < 1) throw ConfigError("hidden and input sizes must be >= 1");
    if (uses_screening(kind)) {
        if (nu < 1) throw ConfigError("rel models require nu >= 1");
        if (rho < 0) throw ConfigError("rel models require rho >= 0");
    }
    ModelParams p;
    p.kind = kind;
    p.phi = phi;
    p.hidden = hidden;
    p.input_dim = input_dim;
    p.out_dim = out_dim;
    p.nu = nu;
    p.rho = rho;

    if (lstm_base(kind)) {
        p.w_gates = init_matrix(rng, InitScheme::GlorotUniform, 4 * hidden, hidden + input_dim);
        p.b_gates = Tensor({4 * hidden, 1});
        for (long i = hidden; i < 2 * hidden; ++i) p.b_gates[i] = 1.0;  // forget gate bias
    } else {
        p.w_rec = init_matrix(rng, InitScheme::Orthogonal, hidden, hidden);
        p.w_in = init_matrix(rng, InitScheme::GlorotUniform, hidden, input_dim);
        p.b_rec = Tensor({hidden, 1});
        if (phi == Nonlinearity::ModRelu && kind != ModelKind::UniformAttnLinearRnn) {
            p.phi_bias = Tensor({hidden, 1});
        }
    }
    if (uses_attention(kind)) {
        p.w_att_state = init_matrix(rng, InitScheme::GlorotUniform, hidden, hidden);
        p.w_att_mem = init_matrix(rng, InitScheme::GlorotUniform, hidden, hidden);
        // small but nonzero: score gradients w.r.t. the alignment matrices are
        // proportional to this vector, so zero would freeze them
        p.v_att = init_matrix(rng, InitScheme::GlorotUniform, hidden, 1);
    }
    if (out_dim > 0) {
        p.w_out = init_matrix(rng, InitScheme::GlorotUniform, out_dim, hidden);
        p.b_out = Tensor({out_dim, 1});
    }
    return p;
}

void ModelParams::for_each_param(const std::function<void(const char*, Tensor&)>& fn) {
    if (!w_rec.empty()) fn("w_rec", w_rec);
    if (!w_in.empty()) fn("w_in", w_in);
    if (!b_rec.empty()) fn("b_rec", b_rec);
    if (!phi_bias.empty()) fn("phi_bias", phi_bias);
    if (!w_gates.empty()) fn("w_gates", w_gates);
    if (!b_gates.empty()) fn("b_gates", b_gates);
    if (!w_att_state.empty()) fn("w_att_state", w_att_state);
    if (!w_att_mem.empty()) fn("w_att_mem", w_att_mem);
    if (!v_att.empty()) fn("v_att", v_att);
    if (!w_out.empty()) fn("w_out", w_out);
    if (!b_out.empty()) fn("b_out", b_out);
}

void ModelParams::for_each_param(const std::function<void(const char*, const Tensor&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each_param(
        [&fn](const char* name, Tensor& t) { fn(name, t); });
}

long ModelParams::param_count() const {
    long n = 0;
    for_each_param([&n](const char*, const Tensor& t) { n += t.size(); });
    return n;
}

BoundModel BoundModel::bind(Tape& tape, const ModelParams& params) {
    BoundModel m;
    m.spec = &params;
    m.tape = &tape;
    auto reg = [&tape](const Tensor& t) { return t.empty() ? kNoNode : tape.param(t); };
    m.w_rec = reg(params.w_rec);
    m.w_in = reg(params.w_in);
    m.b_rec = reg(params.b_rec);
    m.phi_bias = reg(params.phi_bias);
    m.w_gates = reg(params.w_gates);
    m.b_gates = reg(params.b_gates);
    m.w_att_state = reg(params.w_att_state);
    m.w_att_mem = reg(params.w_att_mem);
    m.v_att = reg(params.v_att);
    m.w_out = reg(params.w_out);
    m.b_out = reg(params.b_out);
    return m;
}

std::vector<std::pair<const char*, NodeId>> BoundModel::param_nodes() const {
    std::vector<std::pair<const char*, NodeId>> out;
    auto push = [&out](const char* name, NodeId id) {
        if (id != kNoNode) out.emplace_back(name, id);
    };
    push("w_rec", w_rec);
    push("w_in", w_in);
    push("b_rec", b_rec);
    push("phi_bias", phi_bias);
    push("w_gates", w_gates);
    push("b_gates", b_gates);
    push("w_att_state", w_att_state);
    push("w_att_mem", w_att_mem);
    push("v_att", v_att);
    push("w_out", w_out);
    push("b_out", b_out);
    return out;
}

// ---- memory bank ---------------------------------------------------------------

MemoryBank::MemoryBank(int nu, int rho) : nu_(nu), rho_(rho) {
    if (nu < 1) throw ConfigError("memory bank requires nu >= 1");
    if (rho < 0) throw ConfigError("memory bank requires rho >= 0");
}

void MemoryBank::push(int t, NodeId hidden, NodeId mem_proj) {
    buffer_.push_back(Slot{t, hidden, mem_proj, 0.0});
    if (static_cast<int>(buffer_.size()) > nu_) {
        Slot evicted = buffer_.front();
        buffer_.pop_front();
        screen(std::move(evicted));
    }
}

void MemoryBank::screen(Slot evicted) {
    EvictionEvent ev;
    ev.birth = evicted.birth;
    ev.beta = evicted.beta;
    if (rho_ > 0 && static_cast<int>(relevant_.size()) < rho_) {
        ev.retained = true;
        relevant_.push_back(std::move(evicted));  // births arrive ascending
    } else if (rho_ > 0) {
        auto weakest = std::min_element(
            relevant_.begin(), relevant_.end(),
            [](const Slot& a, const Slot& b) { return a.beta < b.beta; });
        if (evicted.beta > weakest->beta) {  // ties keep the incumbent
            ev.retained = true;
            ev.displaced_birth = weakest->birth;
            ev.displaced_beta = weakest->beta;
            relevant_.erase(weakest);
            relevant_.push_back(std::move(evicted));
        }
    }
    if (log_) log_->push_back(ev);
}

std::vector<MemberView> MemoryBank::members() const {
    std::vector<MemberView> out;
    out.reserve(relevant_.size() + buffer_.size());
    for (const Slot& s : relevant_) out.push_back({s.birth, s.hidden, s.mem_proj});
    for (const Slot& s : buffer_) out.push_back({s.birth, s.hidden, s.mem_proj});
    return out;
}

void MemoryBank::add_attention(int birth, double weight) {
    for (Slot& s : buffer_) {
        if (s.birth == birth) {
            s.beta += weight;
            return;
        }
    }
}

// ---- steps ----------------------------------------------------------------------

namespace {

NodeId apply_phi(Tape& tape, const BoundModel& m, NodeId pre) {
    if (m.spec->kind == ModelKind::UniformAttnLinearRnn) return pre;  // identity
    switch (m.spec->phi) {
        case Nonlinearity::Tanh: return tape.tanh(pre);
        case Nonlinearity::ModRelu: return tape.modrelu(pre, m.phi_bias);
    }
    throw ConfigError("unknown nonlinearity kind");
}

double batch_mean_row(const Tensor& alpha, long row) {
    double acc = 0.0;
    for (long j = 0; j < alpha.cols(); ++j) acc += alpha.at(row, j);
    return acc / static_cast<double>(alpha.cols());
}

struct AttendOut {
    NodeId state;
    Tensor alpha;  // K x batch weights (forward values)
};

// Shared score/softmax/context core; member order defines the softmax slots.
AttendOut attend_over(Tape& tape, const BoundModel& m, NodeId s_prev, NodeId h_t,
                      std::span<const MemberView> members, RunCounters* counters) {
    if (members.empty()) throw UsageError("attention step over zero states");
    const NodeId ws = tape.matmul(m.w_att_state, s_prev);
    std::vector<NodeId> scores;
    std::vector<NodeId> hiddens;
    scores.reserve(members.size());
    hiddens.reserve(members.size());
    for (const MemberView& mem : members) {
        scores.push_back(tape.align(ws, mem.mem_proj, m.v_att));
        hiddens.push_back(mem.hidden);
        if (counters) ++counters->align_evals;
    }
    if (counters) counters->peak_slots = std::max(counters->peak_slots, members.size());
    const NodeId stacked = tape.concat_rows(scores);
    const NodeId alpha = tape.softmax_cols(stacked);
    const NodeId ctx = tape.context(alpha, hiddens);
    return AttendOut{tape.add(h_t, ctx), tape.value(alpha)};
}

}  // namespace

NodeId rnn_cell_step(Tape& tape, const BoundModel& m, NodeId s_prev, NodeId x_t) {
    const NodeId rec = tape.matmul(m.w_rec, s_prev);
    const NodeId inp = tape.matmul(m.w_in, x_t);
    const NodeId pre = tape.add_bias(tape.add(rec, inp), m.b_rec);
    return apply_phi(tape, m, pre);
}

std::pair<NodeId, NodeId> lstm_cell_step(Tape& tape, const BoundModel& m, NodeId s_prev,
                                         NodeId cell_prev, NodeId x_t) {
    const long n = m.spec->hidden;
    const NodeId joint = tape.concat_rows(std::array<NodeId, 2>{s_prev, x_t});
    const NodeId pre = tape.add_bias(tape.matmul(m.w_gates, joint), m.b_gates);
    const NodeId gi = tape.sigmoid(tape.slice_rows(pre, 0, n));
    const NodeId gf = tape.sigmoid(tape.slice_rows(pre, n, 2 * n));
    const NodeId gg = tape.tanh(tape.slice_rows(pre, 2 * n, 3 * n));
    const NodeId go = tape.sigmoid(tape.slice_rows(pre, 3 * n, 4 * n));
    const NodeId cell = tape.add(tape.mul(gf, cell_prev), tape.mul(gi, gg));
    const NodeId h = tape.mul(go, tape.tanh(cell));
    return {h, cell};
}

NodeId alignment_score(Tape& tape, const BoundModel& m, NodeId s_prev, NodeId h_i,
                       RunCounters* counters) {
    const NodeId ws = tape.matmul(m.w_att_state, s_prev);
    const NodeId uh = tape.matmul(m.w_att_mem, h_i);
    if (counters) ++counters->align_evals;
    return tape.align(ws, uh, m.v_att);
}

StepOutput full_attention_step(Tape& tape, const BoundModel& m, NodeId s_prev,
                               std::span<const MemberView> h_all, NodeId h_t,
                               RunCounters* counters) {
    AttendOut at = attend_over(tape, m, s_prev, h_t, h_all, counters);
    StepOutput out;
    out.hidden = h_t;
    out.state = at.state;
    out.attention_row.reserve(h_all.size());
    for (std::size_t i = 0; i < h_all.size(); ++i) {
        out.attention_row.emplace_back(h_all[i].birth, batch_mean_row(at.alpha, static_cast<long>(i)));
    }
    return out;
}

StepOutput screened_attention_step(Tape& tape, const BoundModel& m, NodeId s_prev,
                                   MemoryBank& bank, NodeId h_t, int t, RunCounters* counters) {
    const NodeId proj = tape.matmul(m.w_att_mem, h_t);
    bank.push(t, h_t, proj);
    const std::vector<MemberView> members = bank.members();
    AttendOut at = attend_over(tape, m, s_prev, h_t, members, counters);
    StepOutput out;
    out.hidden = h_t;
    out.state = at.state;
    out.attention_row.reserve(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
        const double w = batch_mean_row(at.alpha, static_cast<long>(i));
        out.attention_row.emplace_back(members[i].birth, w);
        bank.add_attention(members[i].birth, w);
    }
    return out;
}

// ---- unroll ----------------------------------------------------------------------

UnrollResult unroll(Tape& tape, const BoundModel& m, const TaskBatch& batch,
                    const UnrollOptions& opts) {
    const ModelKind kind = m.spec->kind;
    const long n = m.spec->hidden;
    const long T = batch.total_len;
    if (T < 1) throw UsageError("unroll needs at least one timestep");

    UnrollResult res;
    res.hidden.reserve(static_cast<std::size_t>(T));
    res.state.reserve(static_cast<std::size_t>(T));

    if (uses_screening(kind)) {
        res.bank.emplace(m.spec->nu, m.spec->rho);
        if (opts.event_log) res.bank->set_event_log(opts.event_log);
    }

    NodeId s_prev = tape.constant(Tensor({n, batch.batch}));
    NodeId cell_prev = lstm_base(kind) ? tape.constant(Tensor({n, batch.batch})) : kNoNode;
    std::vector<MemberView> history;  // mem-* kinds
    NodeId running_sum = kNoNode;     // uniform-attn kind

    std::vector<NodeId> step_losses;
    for (long t = 0; t < T; ++t) {
        const NodeId x_t = tape.constant(batch.step_input(t));
        NodeId h_t;
        if (lstm_base(kind)) {
            auto [h, cell] = lstm_cell_step(tape, m, s_prev, cell_prev, x_t);
            h_t = h;
            cell_prev = cell;
        } else {
            h_t = rnn_cell_step(tape, m, s_prev, x_t);
        }

        StepOutput step;
        switch (kind) {
            case ModelKind::Rnn:
            case ModelKind::Lstm:
                step.hidden = h_t;
                step.state = h_t;
                break;
            case ModelKind::MemRnn:
            case ModelKind::MemLstm: {
                history.push_back({static_cast<int>(t) + 1, h_t, tape.matmul(m.w_att_mem, h_t)});
                step = full_attention_step(tape, m, s_prev, history, h_t, &res.counters);
                break;
            }
            case ModelKind::RelRnn:
            case ModelKind::RelLstm:
                step = screened_attention_step(tape, m, s_prev, *res.bank, h_t,
                                               static_cast<int>(t) + 1, &res.counters);
                break;
            case ModelKind::UniformAttnLinearRnn: {
                running_sum = (t == 0) ? h_t : tape.add(running_sum, h_t);
                const NodeId ctx = tape.scale(running_sum, 1.0 / static_cast<double>(t + 1));
                step.hidden = h_t;
                step.state = tape.add(h_t, ctx);
                if (opts.record_attention) {
                    step.attention_row.reserve(static_cast<std::size_t>(t) + 1);
                    for (long i = 0; i <= t; ++i) {
                        step.attention_row.emplace_back(static_cast<int>(i) + 1,
                                                        1.0 / static_cast<double>(t + 1));
                    }
                }
                break;
            }
        }

        if (opts.probe_hidden) {
            tape.mark_probe(h_t);
            tape.mark_probe(step.state);
        }
        res.hidden.push_back(h_t);
        res.state.push_back(step.state);
        if (opts.record_attention) res.attention.push_back(std::move(step.attention_row));

        if (opts.with_readout && m.w_out != kNoNode) {
            const NodeId logits = tape.add_bias(tape.matmul(m.w_out, step.state), m.b_out);
            res.logits.push_back(logits);
            if (opts.with_loss && batch.loss_mask[static_cast<std::size_t>(t)]) {
                std::vector<int> tgt(static_cast<std::size_t>(batch.batch));
                for (long b = 0; b < batch.batch; ++b) tgt[static_cast<std::size_t>(b)] = batch.target_at(t, b);
                step_losses.push_back(tape.cross_entropy(logits, std::move(tgt)));
            }
        }
        s_prev = step.state;
        res.counters.peak_tape_nodes = std::max(res.counters.peak_tape_nodes, tape.size());
    }

    if (!step_losses.empty()) {
        NodeId total = step_losses[0];
        for (std::size_t i = 1; i < step_losses.size(); ++i) total = tape.add(total, step_losses[i]);
        res.loss = tape.scale(total, 1.0 / (static_cast<double>(step_losses.size()) *
                                            static_cast<double>(batch.batch)));
    }
    return res;
}

}  // namespace relnet
