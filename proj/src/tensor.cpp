#include "relnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "relnet/errors.hpp"
#include "relnet/vecmath.hpp"

namespace relnet {

namespace {

long shape_product(const std::vector<long>& shape) {
    long p = 1;
    for (long e : shape) p *= e;
    return p;
}

void check_shape(const std::vector<long>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (long e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive");
    }
}

}  // namespace

void Tensor::cache_dims() {
    rows_ = shape_.empty() ? 0 : shape_[0];
    cols_ = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) cols_ *= shape_[i];
    if (shape_.empty()) cols_ = 0;
}

Tensor::Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
    cache_dims();
}

Tensor::Tensor(std::vector<long> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_product(shape_) != static_cast<long>(data_.size())) {
        throw DimensionError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
    }
    cache_dims();
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::matrix(long rows, long cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::column(std::vector<double> data) {
    const long n = static_cast<long>(data.size());
    return Tensor({n, 1}, std::move(data));
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << "x";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---- kernels ----------------------------------------------------------------

// Accumulation uses explicit fma so results are bit-identical across builds
// and loop transformations (contraction is otherwise compiler-dependent).

void gemm_nn_acc(const double* a, const double* b, double* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (long p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (long j = 0; j < n; ++j) ci[j] = std::fma(av, bp[j], ci[j]);
        }
    }
}

void gemm_nt_acc(const double* a, const double* b, double* c, long m, long k, long n) {
    // transpose b once so the inner loops stream contiguously; the per-element
    // fma order over the reduction index is unchanged
    std::vector<double> bt(static_cast<std::size_t>(k * n));
    for (long j = 0; j < n; ++j) {
        for (long p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[j * k + p];
    }
    gemm_nn_acc(a, bt.data(), c, m, k, n);
}

void gemm_tn_acc(const double* a, const double* b, double* c, long m, long k, long n) {
    for (long p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (long i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c + i * n;
            for (long j = 0; j < n; ++j) ci[j] = std::fma(av, bp[j], ci[j]);
        }
    }
}

// ---- public operations --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor c({a.shape()[0], b.shape()[1]});
    gemm_nn_acc(a.data(), b.data(), c.data(), a.shape()[0], a.shape()[1], b.shape()[1]);
    return c;
}

Tensor softmax(const Tensor& v) {
    if (v.size() == 0) throw std::domain_error("softmax of empty input");
    Tensor out(v.shape());
    double mx = v[0];
    for (long i = 1; i < v.size(); ++i) mx = std::max(mx, v[i]);
    double denom = 0.0;
    for (long i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (long i = 0; i < v.size(); ++i) out[i] /= denom;
    return out;
}

Tensor softmax_cols(const Tensor& m) {
    if (m.size() == 0) throw std::domain_error("softmax of empty input");
    const long r = m.rows(), c = m.cols();
    Tensor out(m.shape());
    for (long j = 0; j < c; ++j) {
        double mx = m.at(0, j);
        for (long i = 1; i < r; ++i) mx = std::max(mx, m.at(i, j));
        double denom = 0.0;
        for (long i = 0; i < r; ++i) {
            const double e = std::exp(m.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (long i = 0; i < r; ++i) out.at(i, j) /= denom;
    }
    return out;
}

Nonlinearity parse_nonlinearity(const std::string& s) {
    if (s == "tanh") return Nonlinearity::Tanh;
    if (s == "modrelu") return Nonlinearity::ModRelu;
    throw ConfigError("unknown nonlinearity '" + s + "' (expected tanh or modrelu)");
}

std::string to_string(Nonlinearity k) {
    return k == Nonlinearity::Tanh ? "tanh" : "modrelu";
}

Tensor tanh_map(const Tensor& z) {
    Tensor out(z.shape());
    tanh_array(z.data(), out.data(), z.size());
    return out;
}

Tensor sigmoid_map(const Tensor& z) {
    Tensor out(z.shape());
    sigmoid_array(z.data(), out.data(), z.size());
    return out;
}

Tensor modrelu_map(const Tensor& z, const Tensor& bias) {
    if (bias.rows() != z.rows() || bias.cols() != 1) {
        throw DimensionError("modrelu bias shape " + bias.shape_str() +
                             " does not match input " + z.shape_str());
    }
    const long r = z.rows(), c = z.cols();
    Tensor out(z.shape());
    for (long i = 0; i < r; ++i) {
        for (long j = 0; j < c; ++j) {
            const double x = z.at(i, j);
            const double mag = std::abs(x) + bias[i];
            out.at(i, j) = mag > 0.0 ? (x >= 0.0 ? mag : -mag) : 0.0;
            if (x == 0.0) out.at(i, j) = 0.0;  // sign(0) = 0
        }
    }
    return out;
}

Tensor nonlinearity(Nonlinearity kind, const Tensor& z, const Tensor& bias) {
    switch (kind) {
        case Nonlinearity::Tanh: return tanh_map(z);
        case Nonlinearity::ModRelu: return modrelu_map(z, bias);
    }
    throw ConfigError("unknown nonlinearity kind");
}

namespace {

// Householder QR of a (rows >= cols); returns the thin Q with sign-corrected
// diagonal of R so the distribution is Haar for Gaussian input.
Tensor householder_q(Tensor a) {
    const long m = a.rows(), n = a.cols();
    std::vector<Tensor> vs;
    vs.reserve(static_cast<std::size_t>(n));
    std::vector<double> signs(static_cast<std::size_t>(n), 1.0);
    for (long j = 0; j < n; ++j) {
        double norm = 0.0;
        for (long i = j; i < m; ++i) norm += a.at(i, j) * a.at(i, j);
        norm = std::sqrt(norm);
        Tensor v({m, 1});
        if (norm > 0.0) {
            const double alpha = a.at(j, j) >= 0 ? -norm : norm;
            for (long i = j; i < m; ++i) v[i] = a.at(i, j);
            v[j] -= alpha;
            double vn = 0.0;
            for (long i = j; i < m; ++i) vn += v[i] * v[i];
            vn = std::sqrt(vn);
            if (vn > 0.0) {
                for (long i = j; i < m; ++i) v[i] /= vn;
                for (long jj = j; jj < n; ++jj) {
                    double dot = 0.0;
                    for (long i = j; i < m; ++i) dot += v[i] * a.at(i, jj);
                    for (long i = j; i < m; ++i) a.at(i, jj) -= 2.0 * dot * v[i];
                }
            }
            signs[static_cast<std::size_t>(j)] = a.at(j, j) >= 0 ? 1.0 : -1.0;
        }
        vs.push_back(std::move(v));
    }
    // Accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
    Tensor q({m, n});
    for (long j = 0; j < n; ++j) q.at(j, j) = 1.0;
    for (long j = n - 1; j >= 0; --j) {
        const Tensor& v = vs[static_cast<std::size_t>(j)];
        for (long jj = 0; jj < n; ++jj) {
            double dot = 0.0;
            for (long i = j; i < m; ++i) dot += v[i] * q.at(i, jj);
            for (long i = j; i < m; ++i) q.at(i, jj) -= 2.0 * dot * v[i];
        }
    }
    for (long j = 0; j < n; ++j) {
        for (long i = 0; i < m; ++i) q.at(i, j) *= signs[static_cast<std::size_t>(j)];
    }
    return q;
}

}  // namespace

Tensor init_matrix(Rng& rng, InitScheme scheme, long rows, long cols) {
    if (rows < 1 || cols < 1) throw DimensionError("init_matrix extents must be >= 1");
    switch (scheme) {
        case InitScheme::Zeros:
            return Tensor({rows, cols});
        case InitScheme::GlorotUniform: {
            const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
            Tensor t({rows, cols});
            for (long i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
            return t;
        }
        case InitScheme::Orthogonal: {
            const bool wide = cols > rows;
            const long m = wide ? cols : rows, n = wide ? rows : cols;
            Tensor g({m, n});
            for (long i = 0; i < g.size(); ++i) g[i] = rng.normal();
            Tensor q = householder_q(std::move(g));
            if (!wide) return q;
            Tensor qt({rows, cols});
            for (long i = 0; i < rows; ++i) {
                for (long j = 0; j < cols; ++j) qt.at(i, j) = q.at(j, i);
            }
            return qt;
        }
    }
    throw ConfigError("unknown init scheme");
}

double frobenius_norm(const Tensor& t) {
    double acc = 0.0;
    for (long i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    return std::sqrt(acc);
}

}  // namespace relnet
