#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "relnet/errors.hpp"
#include "relnet/tensor.hpp"

using namespace relnet;

namespace {

// naive triple-loop reference, independent of the production kernel; the
// explicit fma mirrors the kernel's per-element accumulation exactly
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    Tensor c({a.rows(), b.cols()});
    for (long i = 0; i < a.rows(); ++i) {
        for (long j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (long p = 0; p < a.cols(); ++p) acc = std::fma(a.at(i, p), b.at(p, j), acc);
            c.at(i, j) = acc;
        }
    }
    return c;
}

Tensor random_matrix(Rng& rng, long r, long c) {
    Tensor t({r, c});
    for (long i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
}

TEST_CASE("matmul identity and projector") {
    const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor r = matmul(eye, a);
    for (long i = 0; i < 4; ++i) CHECK(r[i] == a[i]);

    const Tensor proj = Tensor::matrix(2, 2, {1, 0, 0, 0});
    const Tensor v = Tensor::matrix(2, 1, {5, 7});
    const Tensor pv = matmul(proj, v);
    CHECK(pv[0] == 5.0);
    CHECK(pv[1] == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle exactly") {
    Rng rng(42);
    const Tensor a = random_matrix(rng, 3, 4);
    const Tensor b = random_matrix(rng, 4, 2);
    const Tensor got = matmul(a, b);
    const Tensor want = matmul_oracle(a, b);
    for (long i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);  // bit-exact
}

TEST_CASE("matmul shape error names both shapes") {
    const Tensor a({2, 3});
    const Tensor b({2, 3});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random triples") {
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        const Tensor a = random_matrix(rng, 3, 5);
        const Tensor b = random_matrix(rng, 5, 4);
        const Tensor c = random_matrix(rng, 4, 2);
        const Tensor lhs = matmul(matmul(a, b), c);
        const Tensor rhs = matmul(a, matmul(b, c));
        for (long j = 0; j < lhs.size(); ++j) {
            CHECK(lhs[j] == doctest::Approx(rhs[j]).epsilon(1e-9));
        }
    }
}

TEST_CASE("softmax basics") {
    const Tensor single = softmax(Tensor({1}, {3.7}));
    CHECK(single[0] == 1.0);

    const Tensor flat = softmax(Tensor({4}, {0, 0, 0, 0}));
    for (long i = 0; i < 4; ++i) CHECK(flat[i] == doctest::Approx(0.25).epsilon(1e-15));

    const Tensor big = softmax(Tensor({2}, {1000.0, 1000.0}));
    CHECK(big[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(big[1] == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS_AS(softmax(Tensor()), std::domain_error);
}

TEST_CASE("softmax sums to one for large-magnitude inputs") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor v({8});
        for (long i = 0; i < 8; ++i) v[i] = rng.uniform(-1e3, 1e3);
        const Tensor s = softmax(v);
        double total = 0.0;
        for (long i = 0; i < 8; ++i) {
            CHECK(s[i] >= 0.0);
            total += s[i];
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("nonlinearities") {
    CHECK(tanh_map(Tensor::scalar(0.0))[0] == 0.0);

    const Tensor z = Tensor::matrix(2, 1, {2.0, -2.0});
    const Tensor bias_clip = Tensor::matrix(2, 1, {-3.0, 1.0});
    const Tensor y = modrelu_map(z, bias_clip);
    CHECK(y[0] == 0.0);   // magnitude clipped
    CHECK(y[1] == -3.0);  // sign preserved, magnitude 2+1

    CHECK_THROWS_AS(modrelu_map(z, Tensor::matrix(3, 1, {0, 0, 0})), DimensionError);
    CHECK_THROWS_AS(parse_nonlinearity("relu"), ConfigError);
}

TEST_CASE("init schemes") {
    Rng rng(11);
    const Tensor z = init_matrix(rng, InitScheme::Zeros, 2, 2);
    for (long i = 0; i < 4; ++i) CHECK(z[i] == 0.0);

    const Tensor q = init_matrix(rng, InitScheme::Orthogonal, 4, 4);
    // max |Q^T Q - I|
    double worst = 0.0;
    for (long i = 0; i < 4; ++i) {
        for (long j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (long p = 0; p < 4; ++p) acc += q.at(p, i) * q.at(p, j);
            worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
        }
    }
    CHECK(worst < 1e-10);

    const double bound = std::sqrt(6.0 / 8.0);
    const Tensor g = init_matrix(rng, InitScheme::GlorotUniform, 3, 5);
    for (long i = 0; i < g.size(); ++i) {
        CHECK(g[i] >= -bound);
        CHECK(g[i] <= bound);
    }
    CHECK_THROWS_AS(init_matrix(rng, InitScheme::Zeros, 0, 2), DimensionError);
}

TEST_CASE("wide orthogonal init has orthonormal rows") {
    Rng rng(5);
    const Tensor q = init_matrix(rng, InitScheme::Orthogonal, 3, 6);
    for (long i = 0; i < 3; ++i) {
        for (long j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (long p = 0; p < 6; ++p) acc += q.at(i, p) * q.at(j, p);
            CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-10);
        }
    }
}

TEST_CASE("seeded rng reproducibility") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) CHECK(a.next() == b.next());
    Rng c(124);
    bool differs = false;
    Rng a2(123);
    for (int i = 0; i < 10; ++i) differs |= a2.next() != c.next();
    CHECK(differs);

    Rng r1(9), r2(9);
    const Tensor t1 = init_matrix(r1, InitScheme::GlorotUniform, 8, 8);
    const Tensor t2 = init_matrix(r2, InitScheme::GlorotUniform, 8, 8);
    for (long i = 0; i < t1.size(); ++i) CHECK(t1[i] == t2[i]);  // bit-identical
}
