#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relnet/checkpoint.hpp"
#include "relnet/config.hpp"
#include "relnet/errors.hpp"
#include "relnet/train.hpp"
#include "support.hpp"

using namespace relnet;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("gradient clipping") {
    Tensor g1 = Tensor::matrix(2, 1, {3, 4});  // norm 5
    std::vector<Tensor*> grads{&g1};
    CHECK(clip_gradients(grads, 10.0) == doctest::Approx(5.0));
    CHECK(g1[0] == 3.0);  // unchanged below the threshold

    Tensor g2 = Tensor::matrix(2, 1, {6, 8});  // norm 10
    std::vector<Tensor*> grads2{&g2};
    CHECK(clip_gradients(grads2, 5.0) == doctest::Approx(10.0));
    double norm = std::sqrt(g2[0] * g2[0] + g2[1] * g2[1]);
    CHECK(std::abs(norm - 5.0) <= 1e-12);

    Tensor g3 = Tensor::matrix(2, 1, {6, 8});
    std::vector<Tensor*> grads3{&g3};
    clip_gradients(grads3, 0.0);  // disabled
    CHECK(g3[0] == 6.0);
    CHECK(g3[1] == 8.0);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    for (OptKind kind : {OptKind::Sgd, OptKind::Adam, OptKind::Rmsprop}) {
        OptConfig cfg;
        cfg.kind = kind;
        cfg.lr = 0.0;
        Optimizer opt(cfg);
        Tensor p = Tensor::matrix(2, 2, {1.25, -0.5, 3.0, 0.125});
        const Tensor orig = p;
        Tensor g = Tensor::matrix(2, 2, {0.3, -0.7, 1.1, 2.0});
        opt.step({&p}, {&g});
        for (long i = 0; i < 4; ++i) CHECK(p[i] == orig[i]);
    }
}

TEST_CASE("adam matches the scalar reference recurrence for five steps") {
    OptConfig cfg;
    cfg.kind = OptKind::Adam;
    cfg.lr = 0.1;
    Optimizer opt(cfg);
    Tensor p = Tensor::scalar(1.0);

    // hand recurrence
    double ref = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
        const double g = 2.0 * ref;  // gradient of ref^2, evaluated at the live value
        Tensor gt = Tensor::scalar(2.0 * p[0]);
        opt.step({&p}, {&gt});

        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        ref -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(std::abs(p[0] - ref) <= 1e-12);
    }
}

TEST_CASE("rmsprop follows its reference recurrence") {
    OptConfig cfg;
    cfg.kind = OptKind::Rmsprop;
    cfg.lr = 0.05;
    Optimizer opt(cfg);
    Tensor p = Tensor::scalar(2.0);
    double ref = 2.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
        const double g = ref;
        Tensor gt = Tensor::scalar(p[0]);
        opt.step({&p}, {&gt});
        v = 0.99 * v + 0.01 * g * g;
        ref -= 0.05 * g / (std::sqrt(v) + 1e-8);
        CHECK(std::abs(p[0] - ref) <= 1e-12);
    }
}

TEST_CASE("zero max updates returns the initial model and no records") {
    TrainConfig cfg;
    cfg.model = ModelKind::Rnn;
    cfg.task = TaskKind::Copy;
    cfg.seq_len = 5;
    cfg.hidden = 8;
    cfg.batch = 2;
    cfg.max_updates = 0;
    const TrainResult res = train_run(cfg);
    CHECK(res.records.empty());
    CHECK(res.updates_run == 0);
    CHECK_FALSE(res.aborted);
    // best == final == initial
    bool same = true;
    res.best_params.for_each_param([&](const char* name, const Tensor& t) {
        (void)name;
        (void)t;
    });
    std::vector<const Tensor*> a, b;
    res.best_params.for_each_param([&a](const char*, const Tensor& t) { a.push_back(&t); });
    res.final_params.for_each_param([&b](const char*, const Tensor& t) { b.push_back(&t); });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (long j = 0; j < a[i]->size(); ++j) same &= (*a[i])[j] == (*b[i])[j];
    }
    CHECK(same);
}

TEST_CASE("loss decreases on a fixed batch over the first 50 updates") {
    // default configuration, T = 30 copy task, one pinned batch
    Rng rng(16);
    ModelParams params = ModelParams::create(ModelKind::RelRnn, Nonlinearity::Tanh, 128,
                                             kTaskChannels, kTaskChannels, 10, 10, rng);
    Rng data_rng(17);
    const TaskBatch tb = gen_copy(data_rng, 30, 64);
    OptConfig ocfg;  // adam, lr 2e-4
    Optimizer opt(ocfg);

    double prev = 1e300;
    for (int update = 0; update < 50; ++update) {
        Tape tape;
        BoundModel bm = BoundModel::bind(tape, params);
        UnrollOptions opts;
        opts.with_loss = true;
        opts.record_attention = false;
        const UnrollResult run = unroll(tape, bm, tb, opts);
        const double loss = tape.value(run.loss)[0];
        CHECK(loss < prev);  // strict decrease
        prev = loss;
        tape.backward(run.loss);
        std::vector<Tensor*> prefs;
        std::vector<Tensor> grads;
        params.for_each_param([&prefs](const char*, Tensor& t) { prefs.push_back(&t); });
        for (const auto& [name, id] : bm.param_nodes()) grads.push_back(tape.grad(id));
        std::vector<const Tensor*> gptrs;
        for (Tensor& g : grads) gptrs.push_back(&g);
        opt.step(prefs, gptrs);
    }
}

TEST_CASE("training aborts on non-finite loss with a diagnostic") {
    TrainConfig cfg;
    cfg.model = ModelKind::Rnn;
    cfg.task = TaskKind::Copy;
    cfg.seq_len = 6;
    cfg.hidden = 12;
    cfg.batch = 4;
    cfg.max_updates = 20;
    cfg.eval_every = 50;
    cfg.opt.kind = OptKind::Sgd;
    // infinite step: zero-gradient coordinates turn NaN immediately
    cfg.opt.lr = std::numeric_limits<double>::infinity();
    const TrainResult res = train_run(cfg);
    CHECK(res.aborted);
    CHECK(!res.abort_reason.empty());
}

TEST_CASE("checkpoint round trip is bit-exact") {
    Rng rng(20);
    ModelParams p = ModelParams::create(ModelKind::RelLstm, Nonlinearity::Tanh, 6, kTaskChannels,
                                        kTaskChannels, 3, 2, rng);
    const std::string path = "/tmp/relnet_test_ckpt.bin";
    save_checkpoint(path, p, {{"note", "unit"}, {"update", 7}});
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.meta.at("update").get<int>() == 7);
    CHECK(ck.params.kind == ModelKind::RelLstm);
    CHECK(ck.params.nu == 3);

    std::vector<const Tensor*> a, b;
    p.for_each_param([&a](const char*, const Tensor& t) { a.push_back(&t); });
    ck.params.for_each_param([&b](const char*, const Tensor& t) { b.push_back(&t); });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i]->size() == b[i]->size());
        for (long j = 0; j < a[i]->size(); ++j) CHECK((*a[i])[j] == (*b[i])[j]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("metrics csv is byte-identical across same-seed runs") {
    auto run_to = [&](const std::string& dir) {
        TrainConfig cfg;
        cfg.model = ModelKind::RelRnn;
        cfg.task = TaskKind::Copy;
        cfg.seq_len = 4;
        cfg.hidden = 10;
        cfg.batch = 3;
        cfg.nu = 2;
        cfg.rho = 1;
        cfg.max_updates = 6;
        cfg.eval_every = 2;
        cfg.eval_batches = 2;
        cfg.seed = 99;
        cfg.out_dir = dir;
        return train_run(cfg);
    };
    run_to("/tmp/relnet_run_a");
    run_to("/tmp/relnet_run_b");
    const std::string a = slurp("/tmp/relnet_run_a/metrics.csv");
    const std::string b = slurp("/tmp/relnet_run_b/metrics.csv");
    CHECK(!a.empty());
    CHECK(a == b);
    std::filesystem::remove_all("/tmp/relnet_run_a");
    std::filesystem::remove_all("/tmp/relnet_run_b");
}

TEST_CASE("evaluate and transfer_eval plumbing") {
    Rng rng(30);
    ModelParams p = ModelParams::create(ModelKind::Rnn, Nonlinearity::Tanh, 16, kTaskChannels,
                                        kTaskChannels, 0, 0, rng);
    Rng eval_rng(5);
    const double acc = evaluate(p, TaskKind::Copy, 8, 4, 3, eval_rng);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    const auto rows = transfer_eval(p, TaskKind::Copy, {8, 12}, 4, 2, 77);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].first == 8);
    CHECK(rows[1].first == 12);
}

TEST_CASE("config echo round-trips to the identical configuration") {
    TrainConfig cfg;
    cfg.model = ModelKind::RelLstm;
    cfg.task = TaskKind::Denoise;
    cfg.seq_len = 77;
    cfg.hidden = 96;
    cfg.batch = 17;
    cfg.nu = 4;
    cfg.rho = 9;
    cfg.phi = Nonlinearity::ModRelu;
    cfg.opt.kind = OptKind::Rmsprop;
    cfg.opt.lr = 3.25e-4;
    cfg.seed = 123456789;
    cfg.max_updates = 4321;
    cfg.eval_every = 33;
    cfg.eval_batches = 7;
    cfg.clip_norm = 2.5;
    cfg.target_accuracy = 0.875;
    cfg.out_dir = "some/dir";

    const TrainConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.model == cfg.model);
    CHECK(back.task == cfg.task);
    CHECK(back.seq_len == cfg.seq_len);
    CHECK(back.hidden == cfg.hidden);
    CHECK(back.batch == cfg.batch);
    CHECK(back.nu == cfg.nu);
    CHECK(back.rho == cfg.rho);
    CHECK(back.phi == cfg.phi);
    CHECK(back.opt.kind == cfg.opt.kind);
    CHECK(back.opt.lr == cfg.opt.lr);
    CHECK(back.seed == cfg.seed);
    CHECK(back.max_updates == cfg.max_updates);
    CHECK(back.eval_every == cfg.eval_every);
    CHECK(back.eval_batches == cfg.eval_batches);
    CHECK(back.clip_norm == cfg.clip_norm);
    CHECK(back.target_accuracy == cfg.target_accuracy);
    CHECK(back.out_dir == cfg.out_dir);

    // and the serialized echo itself is stable
    CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.task = TaskKind::Denoise;
    cfg.seq_len = 9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.seq_len = 20;
    cfg.model = ModelKind::RelRnn;
    cfg.nu = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.nu = 5;
    cfg.opt.lr = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
