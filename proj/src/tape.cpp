#include "relnet/tape.hpp"

#include <cmath>

#include "relnet/errors.hpp"
#include "relnet/vecmath.hpp"

namespace relnet {

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    probed_.push_back(0);
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_parent(NodeId id) const {
    if (id >= nodes_.size()) {
        throw UsageError("parent node " + std::to_string(id) + " does not exist on this tape");
    }
}

NodeId Tape::param(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.requires_grad = true;
    return push(std::move(n));
}

NodeId Tape::constant(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    check_parent(a);
    check_parent(b);
    Node n;
    n.op = Op::MatMul;
    n.parents = {a, b};
    n.value = relnet::matmul(nodes_[a].value, nodes_[b].value);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    check_parent(a);
    check_parent(b);
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    if (!va.same_shape(vb)) {
        throw DimensionError("add shape mismatch: " + va.shape_str() + " vs " + vb.shape_str());
    }
    Node n;
    n.op = Op::Add;
    n.parents = {a, b};
    Tensor out(va.shape());
    for (long i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::add_bias(NodeId a, NodeId bias) {
    check_parent(a);
    check_parent(bias);
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[bias].value;
    if (vb.rows() != va.rows() || vb.cols() != 1) {
        throw DimensionError("add_bias: bias " + vb.shape_str() + " does not broadcast over " +
                             va.shape_str());
    }
    Node n;
    n.op = Op::AddBias;
    n.parents = {a, bias};
    Tensor out(va.shape());
    const long r = va.rows(), c = va.cols();
    for (long i = 0; i < r; ++i) {
        const double b = vb[i];
        for (long j = 0; j < c; ++j) out.at(i, j) = va.at(i, j) + b;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    check_parent(a);
    check_parent(b);
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    if (!va.same_shape(vb)) {
        throw DimensionError("mul shape mismatch: " + va.shape_str() + " vs " + vb.shape_str());
    }
    Node n;
    n.op = Op::Mul;
    n.parents = {a, b};
    Tensor out(va.shape());
    for (long i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::tanh(NodeId z) {
    check_parent(z);
    Node n;
    n.op = Op::Tanh;
    n.parents = {z};
    n.value = tanh_map(nodes_[z].value);
    return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId z) {
    check_parent(z);
    Node n;
    n.op = Op::Sigmoid;
    n.parents = {z};
    n.value = sigmoid_map(nodes_[z].value);
    return push(std::move(n));
}

NodeId Tape::modrelu(NodeId z, NodeId bias) {
    check_parent(z);
    check_parent(bias);
    Node n;
    n.op = Op::ModRelu;
    n.parents = {z, bias};
    n.value = modrelu_map(nodes_[z].value, nodes_[bias].value);
    return push(std::move(n));
}

NodeId Tape::softmax_cols(NodeId z) {
    check_parent(z);
    Node n;
    n.op = Op::SoftmaxCols;
    n.parents = {z};
    n.value = relnet::softmax_cols(nodes_[z].value);
    return push(std::move(n));
}

NodeId Tape::concat_rows(std::span<const NodeId> parts) {
    if (parts.empty()) throw UsageError("concat_rows of zero parts");
    long rows = 0;
    const long cols = nodes_[parts[0]].value.cols();
    for (NodeId p : parts) {
        check_parent(p);
        if (nodes_[p].value.cols() != cols) {
            throw DimensionError("concat_rows: column count mismatch");
        }
        rows += nodes_[p].value.rows();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.parents.assign(parts.begin(), parts.end());
    Tensor out({rows, cols});
    long r0 = 0;
    for (NodeId p : parts) {
        const Tensor& v = nodes_[p].value;
        for (long i = 0; i < v.rows(); ++i) {
            for (long j = 0; j < cols; ++j) out.at(r0 + i, j) = v.at(i, j);
        }
        r0 += v.rows();
    }
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::slice_rows(NodeId a, long begin, long end) {
    check_parent(a);
    const Tensor& v = nodes_[a].value;
    if (begin < 0 || end <= begin || end > v.rows()) {
        throw DimensionError("slice_rows range [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") out of " + v.shape_str());
    }
    Node n;
    n.op = Op::SliceRows;
    n.parents = {a};
    n.slice_begin = begin;
    n.slice_end = end;
    Tensor out({end - begin, v.cols()});
    for (long i = begin; i < end; ++i) {
        for (long j = 0; j < v.cols(); ++j) out.at(i - begin, j) = v.at(i, j);
    }
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
    check_parent(a);
    Node n;
    n.op = Op::Scale;
    n.parents = {a};
    n.scale = factor;
    const Tensor& v = nodes_[a].value;
    Tensor out(v.shape());
    for (long i = 0; i < v.size(); ++i) out[i] = factor * v[i];
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
    check_parent(a);
    Node n;
    n.op = Op::SumAll;
    n.parents = {a};
    const Tensor& v = nodes_[a].value;
    double acc = 0.0;
    for (long i = 0; i < v.size(); ++i) acc += v[i];
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Tape::align(NodeId ws, NodeId uh, NodeId v) {
    check_parent(ws);
    check_parent(uh);
    check_parent(v);
    const Tensor& a = nodes_[ws].value;
    const Tensor& b = nodes_[uh].value;
    const Tensor& vv = nodes_[v].value;
    if (!a.same_shape(b) || vv.rows() != a.rows() || vv.cols() != 1) {
        throw DimensionError("align shape mismatch: " + a.shape_str() + ", " + b.shape_str() +
                             ", " + vv.shape_str());
    }
    Node n;
    n.op = Op::Align;
    n.parents = {ws, uh, v};
    const long r = a.rows(), c = a.cols();
    Tensor gate(a.shape());
    for (long i = 0; i < a.size(); ++i) gate[i] = a[i] + b[i];
    tanh_array(gate.data(), gate.data(), gate.size());
    Tensor out({1, c});
    for (long j = 0; j < c; ++j) {
        double acc = 0.0;
        for (long i = 0; i < r; ++i) acc += vv[i] * gate.at(i, j);
        out[j] = acc;
    }
    n.aux = std::move(gate);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::context(NodeId alpha, std::span<const NodeId> members) {
    check_parent(alpha);
    if (members.empty()) throw UsageError("context over zero members");
    const Tensor& w = nodes_[alpha].value;
    if (w.rows() != static_cast<long>(members.size())) {
        throw DimensionError("context: weight rows " + std::to_string(w.rows()) +
                             " != member count " + std::to_string(members.size()));
    }
    const Tensor& m0 = nodes_[members[0]].value;
    const long r = m0.rows(), c = m0.cols();
    Node n;
    n.op = Op::Context;
    n.parents.reserve(members.size() + 1);
    n.parents.push_back(alpha);
    Tensor out({r, c});
    for (std::size_t s = 0; s < members.size(); ++s) {
        check_parent(members[s]);
        const Tensor& m = nodes_[members[s]].value;
        if (m.rows() != r || m.cols() != c || w.cols() != c) {
            throw DimensionError("context member shape mismatch");
        }
        n.parents.push_back(members[s]);
        for (long i = 0; i < r; ++i) {
            for (long j = 0; j < c; ++j) out.at(i, j) += w.at(static_cast<long>(s), j) * m.at(i, j);
        }
    }
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::cross_entropy(NodeId logits, std::vector<int> targets) {
    check_parent(logits);
    const Tensor& l = nodes_[logits].value;
    const long classes = l.rows(), batch = l.cols();
    if (static_cast<long>(targets.size()) != batch) {
        throw DimensionError("cross_entropy: target count " + std::to_string(targets.size()) +
                             " != batch " + std::to_string(batch));
    }
    double total = 0.0;
    for (long j = 0; j < batch; ++j) {
        const int tgt = targets[static_cast<std::size_t>(j)];
        if (tgt < 0 || tgt >= classes) throw UsageError("cross_entropy: target out of range");
        double mx = l.at(0, j);
        for (long i = 1; i < classes; ++i) mx = std::max(mx, l.at(i, j));
        double denom = 0.0;
        for (long i = 0; i < classes; ++i) denom += std::exp(l.at(i, j) - mx);
        total += std::log(denom) + mx - l.at(tgt, j);
    }
    Node n;
    n.op = Op::CrossEntropy;
    n.parents = {logits};
    n.targets = std::move(targets);
    n.value = Tensor::scalar(total);
    return push(std::move(n));
}

void Tape::mark_probe(NodeId id) {
    check_parent(id);
    probed_[id] = 1;
}

const Tensor& Tape::value(NodeId id) const {
    check_parent(id);
    return nodes_[id].value;
}

const Tensor& Tape::grad(NodeId id) const {
    check_parent(id);
    if (!backward_done_) throw UsageError("grad() before backward()");
    if (!nodes_[id].requires_grad && !probed_[id]) {
        throw UsageError("grad() on node " + std::to_string(id) +
                         " which is neither a parameter nor a flagged probe");
    }
    if (grads_[id].empty()) {
        // Node never touched by the sweep: gradient is identically zero.
        const_cast<Tape*>(this)->grads_[id] = Tensor(nodes_[id].value.shape());
    }
    return grads_[id];
}

Tensor& Tape::grad_buffer(NodeId id) { return grads_[id]; }

void Tape::accumulate(NodeId id, Tensor delta) {
    Tensor& g = grads_[id];
    if (g.empty()) {
        g = std::move(delta);
        return;
    }
    for (long i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Tape::accumulate_ref(NodeId id, const Tensor& delta) {
    Tensor& g = grads_[id];
    if (g.empty()) {
        g = delta;
        return;
    }
    for (long i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Tape::backward(NodeId loss) {
    check_parent(loss);
    if (nodes_[loss].value.size() != 1) {
        throw UsageError("backward: loss node must be scalar, got shape " +
                         nodes_[loss].value.shape_str());
    }
    backward_seed(loss, Tensor::scalar(1.0));
}

void Tape::backward_seed(NodeId from, Tensor seed) {
    check_parent(from);
    if (!seed.same_shape(nodes_[from].value)) {
        throw UsageError("backward_seed: seed shape does not match node value");
    }
    grads_.assign(nodes_.size(), Tensor());
    grads_[from] = std::move(seed);

    for (NodeId id = from;; --id) {
        Node& n = nodes_[id];
        Tensor& gy = grads_[id];
        const bool retain = n.requires_grad || probed_[id];
        if (!gy.empty() && n.op != Op::Leaf) {
            switch (n.op) {
                case Op::Leaf:
                    break;
                case Op::MatMul: {
                    const Tensor& a = nodes_[n.parents[0]].value;
                    const Tensor& b = nodes_[n.parents[1]].value;
                    const long m = a.rows(), k = a.cols(), c = b.cols();
                    Tensor da({m, k});
                    gemm_nt_acc(gy.data(), b.data(), da.data(), m, c, k);
                    accumulate(n.parents[0], std::move(da));
                    Tensor db({k, c});
                    gemm_tn_acc(a.data(), gy.data(), db.data(), k, m, c);
                    accumulate(n.parents[1], std::move(db));
                    break;
                }
                case Op::Add: {
                    accumulate_ref(n.parents[0], gy);
                    if (retain) {
                        accumulate_ref(n.parents[1], gy);
                    } else {
                        accumulate(n.parents[1], std::move(gy));
                    }
                    break;
                }
                case Op::AddBias: {
                    const long r = gy.rows(), c = gy.cols();
                    Tensor db({r, 1});
                    for (long i = 0; i < r; ++i) {
                        double acc = 0.0;
                        for (long j = 0; j < c; ++j) acc += gy.at(i, j);
                        db[i] = acc;
                    }
                    accumulate(n.parents[1], std::move(db));
                    if (retain) {
                        accumulate_ref(n.parents[0], gy);
                    } else {
                        accumulate(n.parents[0], std::move(gy));
                    }
                    break;
                }
                case Op::Mul: {
                    const Tensor& a = nodes_[n.parents[0]].value;
                    const Tensor& b = nodes_[n.parents[1]].value;
                    Tensor da(gy.shape()), db(gy.shape());
                    for (long i = 0; i < gy.size(); ++i) {
                        da[i] = gy[i] * b[i];
                        db[i] = gy[i] * a[i];
                    }
                    accumulate(n.parents[0], std::move(da));
                    accumulate(n.parents[1], std::move(db));
                    break;
                }
                case Op::Tanh: {
                    Tensor dz(gy.shape());
                    for (long i = 0; i < gy.size(); ++i) {
                        dz[i] = gy[i] * (1.0 - n.value[i] * n.value[i]);
                    }
                    accumulate(n.parents[0], std::move(dz));
                    break;
                }
                case Op::Sigmoid: {
                    Tensor dz(gy.shape());
                    for (long i = 0; i < gy.size(); ++i) {
                        dz[i] = gy[i] * n.value[i] * (1.0 - n.value[i]);
                    }
                    accumulate(n.parents[0], std::move(dz));
                    break;
                }
                case Op::ModRelu: {
                    const Tensor& z = nodes_[n.parents[0]].value;
                    const Tensor& b = nodes_[n.parents[1]].value;
                    const long r = z.rows(), c = z.cols();
                    Tensor dz(z.shape());
                    Tensor db(b.shape());
                    for (long i = 0; i < r; ++i) {
                        double dbi = 0.0;
                        for (long j = 0; j < c; ++j) {
                            const double x = z.at(i, j);
                            const bool active = x != 0.0 && std::abs(x) + b[i] > 0.0;
                            if (active) {
                                dz.at(i, j) = gy.at(i, j);
                                dbi += (x > 0.0 ? 1.0 : -1.0) * gy.at(i, j);
                            }
                        }
                        db[i] = dbi;
                    }
                    accumulate(n.parents[0], std::move(dz));
                    accumulate(n.parents[1], std::move(db));
                    break;
                }
                case Op::SoftmaxCols: {
                    const Tensor& y = n.value;
                    const long r = y.rows(), c = y.cols();
                    Tensor dz(y.shape());
                    for (long j = 0; j < c; ++j) {
                        double dot = 0.0;
                        for (long i = 0; i < r; ++i) dot += gy.at(i, j) * y.at(i, j);
                        for (long i = 0; i < r; ++i) {
                            dz.at(i, j) = y.at(i, j) * (gy.at(i, j) - dot);
                        }
                    }
                    accumulate(n.parents[0], std::move(dz));
                    break;
                }
                case Op::ConcatRows: {
                    long r0 = 0;
                    const long c = gy.cols();
                    for (NodeId p : n.parents) {
                        const long pr = nodes_[p].value.rows();
                        Tensor dp({pr, c});
                        for (long i = 0; i < pr; ++i) {
                            for (long j = 0; j < c; ++j) dp.at(i, j) = gy.at(r0 + i, j);
                        }
                        accumulate(p, std::move(dp));
                        r0 += pr;
                    }
                    break;
                }
                case Op::SliceRows: {
                    const Tensor& pv = nodes_[n.parents[0]].value;
                    Tensor dp(pv.shape());
                    for (long i = n.slice_begin; i < n.slice_end; ++i) {
                        for (long j = 0; j < pv.cols(); ++j) {
                            dp.at(i, j) = gy.at(i - n.slice_begin, j);
                        }
                    }
                    accumulate(n.parents[0], std::move(dp));
                    break;
                }
                case Op::Scale: {
                    Tensor da(gy.shape());
                    for (long i = 0; i < gy.size(); ++i) da[i] = n.scale * gy[i];
                    accumulate(n.parents[0], std::move(da));
                    break;
                }
                case Op::SumAll: {
                    const Tensor& pv = nodes_[n.parents[0]].value;
                    Tensor da(pv.shape());
                    const double g = gy[0];
                    for (long i = 0; i < da.size(); ++i) da[i] = g;
                    accumulate(n.parents[0], std::move(da));
                    break;
                }
                case Op::Align: {
                    // tanh(ws + uh) is cached at forward and released after the
                    // first sweep; later sweeps (jacobian columns) recompute it
                    if (n.aux.empty()) {
                        const Tensor& a = nodes_[n.parents[0]].value;
                        const Tensor& b = nodes_[n.parents[1]].value;
                        Tensor gate(a.shape());
                        for (long i = 0; i < a.size(); ++i) gate[i] = a[i] + b[i];
                        tanh_array(gate.data(), gate.data(), gate.size());
                        n.aux = std::move(gate);
                    }
                    const Tensor& t = n.aux;
                    const Tensor& v = nodes_[n.parents[2]].value;
                    const long r = t.rows(), c = t.cols();
                    Tensor dws(t.shape()), duh(t.shape()), dv(v.shape());
                    for (long i = 0; i < r; ++i) {
                        const double vi = v[i];
                        const double* ti = t.data() + i * c;
                        double* dwi = dws.data() + i * c;
                        double* dui = duh.data() + i * c;
                        double dvi = 0.0;
                        for (long j = 0; j < c; ++j) {
                            const double g = gy[j];
                            const double dpre = vi * (1.0 - ti[j] * ti[j]) * g;
                            dwi[j] = dpre;
                            dui[j] = dpre;
                            dvi += ti[j] * g;
                        }
                        dv[i] = dvi;
                    }
                    n.aux = Tensor();  // single consumer; release the cache
                    accumulate(n.parents[0], std::move(dws));
                    accumulate(n.parents[1], std::move(duh));
                    accumulate(n.parents[2], std::move(dv));
                    break;
                }
                case Op::Context: {
                    const Tensor& w = nodes_[n.parents[0]].value;
                    const long kk = w.rows(), c = w.cols();
                    const long r = gy.rows();
                    Tensor dw(w.shape());
                    for (long s = 0; s < kk; ++s) {
                        const Tensor& m = nodes_[n.parents[static_cast<std::size_t>(s) + 1]].value;
                        Tensor dm(m.shape());
                        for (long j = 0; j < c; ++j) {
                            const double ws = w.at(s, j);
                            double acc = 0.0;
                            for (long i = 0; i < r; ++i) {
                                dm.at(i, j) = gy.at(i, j) * ws;
                                acc += gy.at(i, j) * m.at(i, j);
                            }
                            dw.at(s, j) = acc;
                        }
                        accumulate(n.parents[static_cast<std::size_t>(s) + 1], std::move(dm));
                    }
                    accumulate(n.parents[0], std::move(dw));
                    break;
                }
                case Op::CrossEntropy: {
                    const Tensor& l = nodes_[n.parents[0]].value;
                    const long classes = l.rows(), batch = l.cols();
                    const double g = gy[0];
                    Tensor dl(l.shape());
                    for (long j = 0; j < batch; ++j) {
                        double mx = l.at(0, j);
                        for (long i = 1; i < classes; ++i) mx = std::max(mx, l.at(i, j));
                        double denom = 0.0;
                        for (long i = 0; i < classes; ++i) denom += std::exp(l.at(i, j) - mx);
                        for (long i = 0; i < classes; ++i) {
                            dl.at(i, j) = g * std::exp(l.at(i, j) - mx) / denom;
                        }
                        dl.at(n.targets[static_cast<std::size_t>(j)], j) -= g;
                    }
                    accumulate(n.parents[0], std::move(dl));
                    break;
                }
            }
        }
        // interior gradients may be discarded once consumed
        if (!gy.empty() && !retain) gy = Tensor();
        if (id == 0) break;
    }
    backward_done_ = true;
}

Tensor Tape::jacobian(NodeId out, NodeId in) {
    check_parent(out);
    check_parent(in);
    const long dim_out = nodes_[out].value.size();
    const long dim_in = nodes_[in].value.size();
    const bool was_probed = probed_[in];
    probed_[in] = 1;
    Tensor jac({dim_out, dim_in});
    for (long r = 0; r < dim_out; ++r) {
        Tensor seed(nodes_[out].value.shape());
        seed[r] = 1.0;
        backward_seed(out, std::move(seed));
        const Tensor& gi = grad(in);
        for (long c = 0; c < dim_in; ++c) jac.at(r, c) = gi[c];
    }
    probed_[in] = was_probed ? 1 : 0;
    return jac;
}

}  // namespace relnet
