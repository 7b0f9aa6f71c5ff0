#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "relnet/analysis.hpp"
#include "relnet/errors.hpp"
#include "support.hpp"

using namespace relnet;
using relnet::testing::max_rel_gap;

TEST_CASE("omega brute force basics") {
    // s=1 reduces to the harmonic partial sum
    double s1 = 0.0;
    for (int i = 0; i < 6; ++i) s1 += 1.0 / (3 + i);
    CHECK(omega_enum(3, 6, 1) == doctest::Approx(s1).epsilon(1e-15));
    CHECK(omega_formula(3, 6, 1) == doctest::Approx(s1).epsilon(1e-15));

    // s=2, t=1, k=3: 1/(1*2) + 1/(1*3) + 1/(2*3) = 1
    CHECK(omega_enum(1, 3, 2) == doctest::Approx(1.0).epsilon(1e-15));
    // (S1^2 - S2)/2 with S1 = 11/6, S2 = 49/36
    CHECK(omega_formula(1, 3, 2) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("omega identity holds for t <= 5, k <= 12, s <= 4") {
    const OmegaReport rep = verify_omega(5, 12, 4, 1e-12);
    INFO("worst (t,k,s) = (" << rep.worst_t << "," << rep.worst_k << "," << rep.worst_s
                             << ") err=" << rep.max_abs_err);
    CHECK(rep.pass);
}

TEST_CASE("path decomposition three-way agreement on random instances") {
    const PathCheckReport rep = verify_path_decomposition(2026, 8, 4, 6, 1e-8);
    INFO("worst " << rep.worst_pair << " err=" << rep.max_rel_err << " at t=" << rep.worst_t
                  << " T=" << rep.worst_T << " n=" << rep.worst_n);
    CHECK(rep.pass);
}

TEST_CASE("with no recurrence and no state-score coupling only the direct skip survives") {
    // V = 0 and w_att_state = 0 zero out every F factor, so ds_T/dh_t = E_{T-t}
    Rng rng(8);
    const long n = 3;
    const int T = 5;
    ModelParams p = ModelParams::create(ModelKind::MemRnn, Nonlinearity::Tanh, n, 2, 0, 0, 0, rng);
    p.w_rec = Tensor({n, n});
    p.w_att_state = Tensor({n, n});
    for (long i = 0; i < n; ++i) p.v_att[i] = rng.normal() * 0.6;

    std::vector<Tensor> inputs;
    for (int t = 0; t < T; ++t) inputs.push_back(relnet::testing::random_tensor(rng, {2, 1}, 0.8));
    const PlainForward fwd = plain_forward_full_attention(p, inputs);
    for (int t = 1; t <= T; ++t) {
        const PathFactors pf = path_factors(p, fwd, t, T);
        const Tensor direct = pf.e[static_cast<std::size_t>(T - t)];
        const Tensor full = path_jacobian_recursion(pf);
        CHECK(max_rel_gap(direct, full) < 1e-14);
        const Tensor tape_jac = path_jacobian_tape(p, inputs, t, T);
        CHECK(max_rel_gap(direct, tape_jac) < 1e-10);
    }
}

TEST_CASE("hard-uniform factor recursion matches the tape jacobian") {
    CHECK(uniform_recursion_vs_tape(3, 9, 2, 11) < 1e-8);
    CHECK(uniform_recursion_vs_tape(4, 7, 1, 12) < 1e-8);
    CHECK(uniform_recursion_vs_tape(2, 12, 5, 13) < 1e-8);
}

TEST_CASE("uniform-attention gradient norms decay no faster than 1/T") {
    const TheoremReport rep = verify_theorem1(4, {50, 100, 200, 400}, 31);
    INFO(rep.detail);
    CHECK(rep.pass);
}

TEST_CASE("all-positive spectrum still satisfies the lower bound but amplifies") {
    // At eigenvalues {0.9, 0.5, 0.3, 0.1} the mean-sensitivity feedback makes
    // the norm grow polynomially: far above the Omega(1/T) floor, so the
    // lower-bound clauses hold while the slope leaves [-1.1, 0].
    const TheoremReport rep = verify_theorem1_spectrum({0.9, 0.5, 0.3, 0.1}, {50, 100, 200}, 31);
    INFO(rep.detail);
    CHECK(rep.slope >= -1.1);
    CHECK(rep.lower_constant >= 0.01);
    CHECK(rep.control_slope <= -5.0);
    CHECK(rep.slope > 0.0);  // the measured amplification
}

TEST_CASE("planted sparse attention keeps gradient norms flat") {
    {
        const TheoremReport rep = verify_theorem2(2, 1, {50, 100, 200, 400}, 32);
        INFO(rep.detail);
        CHECK(rep.pass);
    }
    {
        const TheoremReport rep = verify_theorem2(1, 0, {50, 100, 200, 400}, 33);
        INFO(rep.detail);
        CHECK(rep.pass);
    }
}

TEST_CASE("grad trace of the zero-parameter uniform linear model is flat") {
    Rng rng(40);
    ModelParams p = ModelParams::create(ModelKind::UniformAttnLinearRnn, Nonlinearity::Tanh, 4, 2,
                                        0, 0, 0, rng);
    p.w_rec = Tensor({4, 4});
    p.w_in = Tensor({4, 2});
    p.b_rec = Tensor({4, 1});
    const int T = 12;
    TaskBatch tb;
    tb.total_len = T;
    tb.batch = 1;
    tb.channels = 2;
    tb.inputs = Tensor({T, 1, 2});
    tb.targets.assign(T, 0);
    tb.loss_mask.assign(T, 1);

    const auto rows = grad_trace_sum_loss(p, tb);
    REQUIRE(static_cast<int>(rows.size()) == T);
    // d s_T / d h_t = I/T for t < T, so every early norm is sqrt(n)/T
    const double want = 2.0 / T;  // sqrt(4) = 2
    for (int t = 0; t + 1 < T; ++t) {
        CHECK(std::abs(rows[static_cast<std::size_t>(t)].norm - want) < 1e-12);
    }
    CHECK(rows.back().norm == doctest::Approx(2.0 * (1.0 + 1.0 / T)).epsilon(1e-12));
}

TEST_CASE("exploding recurrent control shows positive slope versus age") {
    Rng rng(41);
    const long n = 64;
    ModelParams p = ModelParams::create(ModelKind::Rnn, Nonlinearity::Tanh, n, kTaskChannels,
                                        kTaskChannels, 0, 0, rng);
    // gaussian connectivity at gain 1.5: chaotic regime, exploding gradients
    for (long i = 0; i < p.w_rec.size(); ++i) {
        p.w_rec[i] = rng.normal() * 1.5 / std::sqrt(static_cast<double>(n));
    }
    const auto rows = grad_trace(p, TaskKind::Copy, 280, 4, 42);
    CHECK(trace_slope_vs_age(rows) > 0.0);
    for (const auto& r : rows) CHECK(std::isfinite(r.norm));
}

TEST_CASE("trained screened model keeps its trace spread under two decades") {
    // short denoise training, then a transfer-length trace; may take ~1 min
    TrainConfig cfg;
    cfg.model = ModelKind::RelLstm;
    cfg.task = TaskKind::Denoise;
    cfg.seq_len = 60;
    cfg.hidden = 32;
    cfg.batch = 8;
    cfg.nu = 10;
    cfg.rho = 10;
    cfg.opt.kind = OptKind::Adam;
    cfg.opt.lr = 1e-3;  // small model: faster schedule than the paper default
    cfg.seed = 7;
    cfg.max_updates = 1500;
    cfg.eval_every = 100;
    cfg.eval_batches = 4;
    cfg.target_accuracy = 0.90;
    const TrainResult res = train_run(cfg);
    REQUIRE_FALSE(res.aborted);
    const auto rows = grad_trace(res.best_params, TaskKind::Denoise, 300, 4, 99);
    const double spread = trace_log_spread(rows);
    INFO("spread " << spread << " decades, best acc " << res.best_accuracy);
    CHECK(spread < 2.0);
}

TEST_CASE("complexity counters and quadratic fits") {
    const std::vector<long> Ts{40, 80, 120, 160};
    const auto rows = complexity_sweep({ModelKind::MemRnn, ModelKind::RelRnn, ModelKind::Rnn}, Ts,
                                       8, 10, 10, 3);

    std::vector<std::pair<double, double>> mem_pts, rel_pts;
    for (const auto& r : rows) {
        if (r.kind == ModelKind::MemRnn) {
            CHECK(r.align_evals == static_cast<unsigned long long>(r.T * (r.T + 1) / 2));
            mem_pts.emplace_back(static_cast<double>(r.T), static_cast<double>(r.align_evals));
        } else if (r.kind == ModelKind::RelRnn) {
            CHECK(r.align_evals <= static_cast<unsigned long long>(20 * r.T));
            rel_pts.emplace_back(static_cast<double>(r.T), static_cast<double>(r.align_evals));
        } else {
            CHECK(r.align_evals == 0);
        }
    }
    const QuadFit mem_fit = fit_quadratic(mem_pts);
    CHECK(mem_fit.c == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(mem_fit.r2 > 0.999999);
    const QuadFit rel_fit = fit_quadratic(rel_pts);
    CHECK(std::abs(rel_fit.c) < 1e-9);

    // counters grow monotonically with T for a fixed kind
    for (std::size_t i = 1; i < mem_pts.size(); ++i) CHECK(mem_pts[i].second > mem_pts[i - 1].second);
}

TEST_CASE("heatmap rows sum to one over their support") {
    Rng rng(50);
    ModelParams p = ModelParams::create(ModelKind::RelRnn, Nonlinearity::Tanh, 8, kTaskChannels,
                                        kTaskChannels, 4, 3, rng);
    for (long i = 0; i < p.v_att.size(); ++i) p.v_att[i] = rng.normal() * 0.5;
    const Tensor heat = attention_heatmap(p, TaskKind::Copy, 10, 2, 51);
    CHECK(heat.rows() == 30);
    CHECK(heat.cols() == 30);
    for (long t = 0; t < heat.rows(); ++t) {
        double total = 0.0;
        for (long j = 0; j < heat.cols(); ++j) {
            CHECK(heat.at(t, j) >= 0.0);
            if (j > t) CHECK(heat.at(t, j) == 0.0);  // lower triangular
            total += heat.at(t, j);
        }
        CHECK(std::abs(total - 1.0) <= 1e-10);
    }

    ModelParams plain = ModelParams::create(ModelKind::Rnn, Nonlinearity::Tanh, 8, kTaskChannels,
                                            kTaskChannels, 0, 0, rng);
    CHECK_THROWS_AS(attention_heatmap(plain, TaskKind::Copy, 10, 2, 51), ConfigError);
}

TEST_CASE("csv writers") {
    std::ostringstream os;
    write_grad_trace_csv({{1, 0.5, -0.30103}, {2, 1.0, 0.0}}, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "t,grad_norm,log10_grad_norm");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("tradeoff sweep plumbing") {
    TrainConfig proto;
    proto.model = ModelKind::RelRnn;
    proto.task = TaskKind::Denoise;
    proto.seq_len = 15;
    proto.hidden = 8;
    proto.batch = 4;
    proto.max_updates = 10;
    proto.eval_every = 5;
    proto.eval_batches = 1;
    proto.seed = 3;
    const auto cells = tradeoff_sweep(proto, {2, 4}, {3}, nullptr);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].nu == 2);
    CHECK(cells[1].nu == 4);
    for (const auto& c : cells) {
        CHECK(c.trace.size() == 26);  // seq_len + 11
        CHECK(c.log_spread >= 0.0);
    }
    CHECK_THROWS_AS(tradeoff_sweep(proto, {}, {3}, nullptr), ConfigError);
}
