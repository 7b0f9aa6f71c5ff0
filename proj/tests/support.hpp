#pragma once

// Shared test utilities: finite-difference oracles and small helpers. Test-only.

#include <cmath>
#include <functional>
#include <vector>

#include "relnet/model.hpp"
#include "relnet/rng.hpp"
#include "relnet/tape.hpp"
#include "relnet/tasks.hpp"
#include "relnet/tensor.hpp"

namespace relnet::testing {

inline double rel_gap(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_rel_gap(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (long i = 0; i < a.size(); ++i) worst = std::max(worst, rel_gap(a[i], b[i]));
    return worst;
}

inline Tensor random_tensor(Rng& rng, std::vector<long> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
    return t;
}

// Builds a scalar graph from parameter leaves and checks the tape gradient of
// every input coordinate against central finite differences (eps 1e-5).
// Returns the worst relative gap.
using GraphBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

inline double fd_check(const std::vector<Tensor>& inputs, const GraphBuilder& build,
                       double eps = 1e-5) {
    auto eval = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
        Tape tape;
        std::vector<NodeId> ids;
        ids.reserve(xs.size());
        for (const Tensor& x : xs) ids.push_back(tape.param(x));
        const NodeId loss = build(tape, ids);
        const double value = tape.value(loss)[0];
        if (grads) {
            tape.backward(loss);
            grads->clear();
            for (NodeId id : ids) grads->push_back(tape.grad(id));
        }
        return value;
    };

    std::vector<Tensor> grads;
    eval(inputs, &grads);

    double worst = 0.0;
    std::vector<Tensor> xs = inputs;
    for (std::size_t v = 0; v < xs.size(); ++v) {
        for (long i = 0; i < xs[v].size(); ++i) {
            const double orig = xs[v][i];
            xs[v][i] = orig + eps;
            const double up = eval(xs, nullptr);
            xs[v][i] = orig - eps;
            const double dn = eval(xs, nullptr);
            xs[v][i] = orig;
            const double fd = (up - dn) / (2.0 * eps);
            worst = std::max(worst, rel_gap(fd, grads[v][i]));
        }
    }
    return worst;
}

// Loss of a model on a fixed batch (fresh tape each call); used to
// finite-difference whole unrolls with respect to the parameters.
inline double model_loss(const ModelParams& params, const TaskBatch& batch) {
    Tape tape;
    const BoundModel bm = BoundModel::bind(tape, params);
    UnrollOptions opts;
    opts.with_loss = true;
    opts.record_attention = false;
    const UnrollResult run = unroll(tape, bm, batch, opts);
    return tape.value(run.loss)[0];
}

// Worst relative gap between tape parameter gradients and central differences
// over every parameter coordinate of the model.
inline double fd_check_model(ModelParams params, const TaskBatch& batch, double eps = 1e-5) {
    Tape tape;
    const BoundModel bm = BoundModel::bind(tape, params);
    UnrollOptions opts;
    opts.with_loss = true;
    opts.record_attention = false;
    const UnrollResult run = unroll(tape, bm, batch, opts);
    tape.backward(run.loss);

    std::vector<Tensor> grads;
    for (const auto& [name, id] : bm.param_nodes()) grads.push_back(tape.grad(id));

    double worst = 0.0;
    std::size_t pi = 0;
    params.for_each_param([&](const char*, Tensor& t) {
        for (long i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + eps;
            const double up = model_loss(params, batch);
            t[i] = orig - eps;
            const double dn = model_loss(params, batch);
            t[i] = orig;
            worst = std::max(worst, rel_gap((up - dn) / (2.0 * eps), grads[pi][i]));
        }
        ++pi;
    });
    return worst;
}

}  // namespace relnet::testing
