#pragma once

#include <string>
#include <vector>

#include "relnet/tensor.hpp"

namespace relnet {

enum class OptKind { Sgd, Adam, Rmsprop };
OptKind parse_opt_kind(const std::string& s);
std::string to_string(OptKind k);

struct OptConfig {
    OptKind kind = OptKind::Adam;
    double lr = 2e-4;
    double beta1 = 0.9;     // adam
    double beta2 = 0.999;   // adam
    double eps = 1e-8;      // adam / rmsprop
    double decay = 0.99;    // rmsprop
};

// Moment buffers are allocated lazily on the first step and shape-match their
// parameters from then on.
class Optimizer {
public:
    explicit Optimizer(OptConfig cfg) : cfg_(cfg) {}

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
    long steps() const { return step_count_; }
    const OptConfig& config() const { return cfg_; }

private:
    OptConfig cfg_;
    std::vector<Tensor> m1_;
    std::vector<Tensor> m2_;
    long step_count_ = 0;
};

// Global-norm gradient clipping. Returns the pre-clip norm; max_norm <= 0
// disables rescaling.
double clip_gradients(const std::vector<Tensor*>& grads, double max_norm);

}  // namespace relnet
