#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "relnet/rng.hpp"

namespace relnet {

// Dense row-major float64 array. Values are immutable once an operation has
// published them; sharing read-only across threads is safe.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<long> shape);                       // zero-filled
    Tensor(std::vector<long> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor matrix(long rows, long cols, std::vector<double> data);
    static Tensor column(std::vector<double> data);                 // n x 1

    bool empty() const { return data_.empty(); }
    long size() const { return static_cast<long>(data_.size()); }
    const std::vector<long>& shape() const { return shape_; }
    std::string shape_str() const;

    // 2-D accessors; a 1-D tensor behaves as a single column.
    long rows() const { return rows_; }
    long cols() const { return cols_; }
    double& at(long r, long c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
    double at(long r, long c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

    double& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

private:
    void cache_dims();

    std::vector<long> shape_;
    std::vector<double> data_;
    long rows_ = 0;
    long cols_ = 0;
};

// ---- raw kernels (accumulating; C must be pre-sized) ------------------------

void gemm_nn_acc(const double* a, const double* b, double* c, long m, long k, long n);  // C += A*B
void gemm_nt_acc(const double* a, const double* b, double* c, long m, long k, long n);  // C += A*B^T, B is n x k
void gemm_tn_acc(const double* a, const double* b, double* c, long m, long k, long n);  // C += A^T*B, A is k x m

// ---- public tensor-core operations ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Stable softmax of a length-n vector (max subtraction). Empty input throws.
Tensor softmax(const Tensor& v);
// Column-wise stable softmax of an r x c matrix; every column sums to 1.
Tensor softmax_cols(const Tensor& m);

enum class Nonlinearity { Tanh, ModRelu };
Nonlinearity parse_nonlinearity(const std::string& s);
std::string to_string(Nonlinearity k);

Tensor tanh_map(const Tensor& z);
Tensor sigmoid_map(const Tensor& z);
// modrelu(z)_i = sign(z_i) * max(|z_i| + bias_i, 0); bias is per-row, broadcast
// over columns.
Tensor modrelu_map(const Tensor& z, const Tensor& bias);
Tensor nonlinearity(Nonlinearity kind, const Tensor& z, const Tensor& bias = Tensor());

enum class InitScheme { GlorotUniform, Orthogonal, Zeros };
// Deterministic given the Rng state. Orthogonal draws a Gaussian matrix and
// runs Householder QR with sign-corrected diagonal.
Tensor init_matrix(Rng& rng, InitScheme scheme, long rows, long cols);

double frobenius_norm(const Tensor& t);

}  // namespace relnet
