#include "relnet/optim.hpp"

#include <cmath>

#include "relnet/errors.hpp"

namespace relnet {

OptKind parse_opt_kind(const std::string& s) {
    if (s == "sgd") return OptKind::Sgd;
    if (s == "adam") return OptKind::Adam;
    if (s == "rmsprop") return OptKind::Rmsprop;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd, adam or rmsprop)");
}

std::string to_string(OptKind k) {
    switch (k) {
        case OptKind::Sgd: return "sgd";
        case OptKind::Adam: return "adam";
        case OptKind::Rmsprop: return "rmsprop";
    }
    return "?";
}

void Optimizer::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) throw UsageError("optimizer: parameter/gradient count mismatch");
    if (m1_.empty()) {
        for (const Tensor* p : params) {
            m1_.emplace_back(p->shape());
            if (cfg_.kind == OptKind::Adam) m2_.emplace_back(p->shape());
        }
    }
    ++step_count_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        if (!p.same_shape(g)) throw DimensionError("optimizer: gradient shape mismatch");
        switch (cfg_.kind) {
            case OptKind::Sgd: {
                for (long j = 0; j < p.size(); ++j) p[j] -= cfg_.lr * g[j];
                break;
            }
            case OptKind::Adam: {
                Tensor& m = m1_[i];
                Tensor& v = m2_[i];
                const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
                const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
                for (long j = 0; j < p.size(); ++j) {
                    m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                    v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                    p[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
                }
                break;
            }
            case OptKind::Rmsprop: {
                Tensor& v = m1_[i];
                for (long j = 0; j < p.size(); ++j) {
                    v[j] = cfg_.decay * v[j] + (1.0 - cfg_.decay) * g[j] * g[j];
                    p[j] -= cfg_.lr * g[j] / (std::sqrt(v[j]) + cfg_.eps);
                }
                break;
            }
        }
    }
}

double clip_gradients(const std::vector<Tensor*>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor* g : grads) {
        for (long j = 0; j < g->size(); ++j) sq += (*g)[j] * (*g)[j];
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (Tensor* g : grads) {
            for (long j = 0; j < g->size(); ++j) (*g)[j] *= s;
        }
    }
    return norm;
}

}  // namespace relnet
