#include "relnet/vecmath.hpp"

#include <cmath>

namespace relnet {

void tanh_array(const double* in, double* out, long n) {
    for (long i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
}

void sigmoid_array(const double* in, double* out, long n) {
    for (long i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
}

}  // namespace relnet
