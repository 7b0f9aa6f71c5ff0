#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relnet/model.hpp"
#include "relnet/train.hpp"

namespace relnet {

// ---- tape-independent forward of the full-attention RNN (batch 1) -------------
//
// Used both as the independent forward oracle and as the ingredient store for
// the closed-form gradient factors below. Indexing is 1-based with a dummy
// entry at 0; s[0] is the zero initial state.
struct PlainForward {
    std::vector<Tensor> x;     // x[1..T], input_dim x 1
    std::vector<Tensor> pre;   // pre-activation of h[t]
    std::vector<Tensor> h;     // hidden states
    std::vector<Tensor> c;     // attention contexts
    std::vector<Tensor> s;     // macro-states, s[0] = 0
    std::vector<std::vector<double>> alpha;    // alpha[t][j], 1 <= j <= t
    std::vector<std::vector<Tensor>> score_arg;  // tanh(Wa s_{t-1} + Ua h_j) per (t, j)
};

PlainForward plain_forward_full_attention(const ModelParams& params,
                                          const std::vector<Tensor>& inputs);

// Closed-form skip (E) and skip-plus-recurrent (F) Jacobian factors of the
// path decomposition, for a fixed departure step t.
struct PathFactors {
    int t = 0;
    int horizon = 0;                       // K = T - t
    std::vector<Tensor> e;                 // e[k'], k' = 0..K
    std::vector<std::vector<Tensor>> f;    // f[a][b], 1 <= a <= K, 0 <= b < a
};

PathFactors path_factors(const ModelParams& params, const PlainForward& fwd, int t, int T);

// d s_T / d h_t three ways.
Tensor path_jacobian_recursion(const PathFactors& pf);            // C-recursion
Tensor path_jacobian_enumeration(const PathFactors& pf);          // explicit 2^K paths
Tensor path_jacobian_tape(const ModelParams& params, const std::vector<Tensor>& inputs,
                          int t, int T);

struct PathCheckReport {
    int trials = 0;
    double max_rel_err = 0.0;
    int worst_t = 0, worst_T = 0, worst_n = 0;
    std::string worst_pair;
    bool pass = false;
};

// Draws random full-attention instances (hidden <= max_n, length <= max_T) and
// compares the three routes pairwise at every departure step.
PathCheckReport verify_path_decomposition(std::uint64_t seed, int trials, int max_n, int max_T,
                                          double tol);

// Relative gap between the hard-uniform-attention factor recursion and the
// tape Jacobian of the matching linear model.
double uniform_recursion_vs_tape(long n, long T, int t, std::uint64_t seed);

struct GradCheckReport {
    int instances = 0;
    double max_rel_err = 0.0;
    std::string worst_case;
    bool pass = false;
};

// Central finite differences (eps 1e-5) against tape gradients: random
// instances cycling through every op kind, plus 3-step screened-model unrolls
// differentiated with respect to all parameters.
GradCheckReport verify_gradcheck(std::uint64_t seed, int instances, double tol);

// ---- harmonic path-count identity ------------------------------------------------

// Sum over ascending index tuples of products of 1/(t+i), by brute-force
// enumeration and by the power-sum recursion. s <= 4.
double omega_enum(int t, int k, int s);
double omega_formula(int t, int k, int s);

struct OmegaReport {
    double max_abs_err = 0.0;
    int worst_t = 0, worst_k = 0, worst_s = 0;
    bool pass = false;
};

OmegaReport verify_omega(int max_t, int max_k, int max_s, double tol);

// ---- gradient-norm lower-bound sweeps ----------------------------------------------

struct SweepPoint {
    long T;
    double norm;
};

struct TheoremReport {
    std::vector<SweepPoint> attn;
    std::vector<SweepPoint> control;
    double slope = 0.0;
    double control_slope = 0.0;
    double lower_constant = 0.0;
    bool pass = false;
    std::string detail;
};

// Uniform-attention linear model with a normal connectivity matrix of
// spectral radius 0.9 and at least one positive real eigenvalue:
// ||ds_T/dh_1||_F fitted against T, with a no-attention chain as contrast.
TheoremReport verify_theorem1(long n, const std::vector<long>& Ts, std::uint64_t seed);

// Same sweep for an arbitrary eigenvalue list.
TheoremReport verify_theorem1_spectrum(const std::vector<double>& eigs,
                                       const std::vector<long>& Ts, std::uint64_t seed);

// Planted kappa-sparse uniform attention bridging (1, T) with at most d
// intermediate anchor states; checks flat slope and norm >= c / kappa^d.
TheoremReport verify_theorem2(int kappa, int d, const std::vector<long>& Ts,
                              std::uint64_t seed);

// ---- instrumentation ---------------------------------------------------------------

struct GradTraceRow {
    int t = 0;        // 1-based timestep
    double norm = 0.0;
    double log10_norm = 0.0;
};

// One forward+backward of the task loss on a single fresh batch with every
// h_t probed.
std::vector<GradTraceRow> grad_trace(const ModelParams& params, TaskKind task, int seq_len,
                                     long batch, std::uint64_t seed);

// Same probe sweep but with loss = sum(s_T) on caller-provided inputs; used
// for untrained / hand-constructed models.
std::vector<GradTraceRow> grad_trace_sum_loss(const ModelParams& params, const TaskBatch& batch);

// Least-squares slope of log10 norm against age (T - t): positive means
// gradients grow toward the past.
double trace_slope_vs_age(const std::vector<GradTraceRow>& rows);
double trace_log_spread(const std::vector<GradTraceRow>& rows);

struct ComplexityRow {
    ModelKind kind;
    long T = 0;
    unsigned long long align_evals = 0;
    std::size_t peak_slots = 0;
    std::size_t peak_tape_nodes = 0;
};

// Forward pass over plain length-T sequences; exact operation/state counters.
std::vector<ComplexityRow> complexity_sweep(const std::vector<ModelKind>& kinds,
                                            const std::vector<long>& Ts, long hidden, int nu,
                                            int rho, std::uint64_t seed);

struct QuadFit {
    double a = 0.0, b = 0.0, c = 0.0, r2 = 0.0;
};
QuadFit fit_quadratic(const std::vector<std::pair<double, double>>& pts);

// Dense lower-triangular matrix of batch-mean attention weights; row t lists
// the weights over attended birth steps, zero elsewhere.
Tensor attention_heatmap(const ModelParams& params, TaskKind task, int seq_len, long batch,
                         std::uint64_t seed);

struct TradeoffCell {
    int nu = 0, rho = 0;
    double best_accuracy = 0.0;
    double log_spread = 0.0;
    std::vector<GradTraceRow> trace;
};

// Trains one model per (nu, rho) grid cell under the prototype config and
// traces its gradients.
std::vector<TradeoffCell> tradeoff_sweep(const TrainConfig& proto, const std::vector<int>& nus,
                                         const std::vector<int>& rhos,
                                         std::ostream* progress = nullptr);

// CSV emission (documented headers).
void write_grad_trace_csv(const std::vector<GradTraceRow>& rows, std::ostream& out);
void write_complexity_csv(const std::vector<ComplexityRow>& rows, std::ostream& out);
void write_heatmap_csv(const Tensor& heat, std::ostream& out);

}  // namespace relnet
