#include "relnet/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "relnet/checkpoint.hpp"
#include "relnet/errors.hpp"

namespace relnet {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Fraction of recall positions whose argmax matches the target.
double batch_accuracy(const Tape& tape, const UnrollResult& run, const TaskBatch& tb) {
    long hits = 0, total = 0;
    for (int t : tb.recall_positions) {
        const Tensor& logits = tape.value(run.logits[static_cast<std::size_t>(t)]);
        for (long b = 0; b < tb.batch; ++b) {
            long best = 0;
            for (long c = 1; c < logits.rows(); ++c) {
                if (logits.at(c, b) > logits.at(best, b)) best = c;
            }
            hits += best == tb.target_at(t, b);
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

void TrainConfig::validate() const {
    if (seq_len < 1) throw ConfigError("seq-len must be >= 1");
    if (task == TaskKind::Denoise && seq_len < 10) {
        throw ConfigError("denoise requires seq-len >= 10");
    }
    if (hidden < 1) throw ConfigError("hidden must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (uses_screening(model)) {
        if (nu < 1) throw ConfigError("rel models require nu >= 1");
        if (rho < 0) throw ConfigError("rel models require rho >= 0");
    }
    if (max_updates < 0) throw ConfigError("max-updates must be >= 0");
    if (eval_every < 1) throw ConfigError("eval-every must be >= 1");
    if (opt.lr <= 0) throw ConfigError("lr must be positive");
}

double evaluate(const ModelParams& params, TaskKind task, int seq_len, long batch,
                int n_batches, Rng& rng) {
    double acc = 0.0;
    for (int i = 0; i < n_batches; ++i) {
        const TaskBatch tb = gen_task(task, rng, seq_len, static_cast<int>(batch));
        Tape tape;
        const BoundModel bm = BoundModel::bind(tape, params);
        UnrollOptions opts;
        opts.with_loss = false;
        opts.record_attention = false;
        const UnrollResult run = unroll(tape, bm, tb, opts);
        acc += batch_accuracy(tape, run, tb);
    }
    return acc / static_cast<double>(n_batches);
}

std::vector<std::pair<int, double>> transfer_eval(const ModelParams& params, TaskKind task,
                                                  const std::vector<int>& t_evals, long batch,
                                                  int n_batches, std::uint64_t seed) {
    std::vector<std::pair<int, double>> out;
    out.reserve(t_evals.size());
    for (int T : t_evals) {
        Rng rng(seed + static_cast<std::uint64_t>(T));
        out.emplace_back(T, evaluate(params, task, T, batch, n_batches, rng));
    }
    return out;
}

// Wall-clock stays out of the CSV so that identical seeds yield byte-identical
// files; timings go to the progress log instead.
const char* metrics_csv_header() {
    return "update,train_loss,eval_accuracy,align_evals,peak_slots,peak_tape_nodes";
}

void append_metrics_csv(std::ostream& out, const RunRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%llu,%zu,%zu\n", r.update, r.loss,
                  r.eval_accuracy, r.align_evals, r.peak_slots, r.peak_tape_nodes);
    out << buf;
}

TrainResult train_run(const TrainConfig& cfg, std::ostream* progress) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    Rng init_rng(cfg.seed);
    Rng data_rng(cfg.seed + 1);
    Rng eval_rng(cfg.seed + 2);

    ModelParams params = ModelParams::create(cfg.model, cfg.phi, cfg.hidden, kTaskChannels,
                                             kTaskChannels, cfg.nu, cfg.rho, init_rng);
    Optimizer opt(cfg.opt);

    TrainResult res;
    res.best_params = params;

    std::ofstream metrics;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        metrics.open(cfg.out_dir + "/metrics.csv", std::ios::trunc);
        metrics << metrics_csv_header() << "\n";
    }

    double last_loss = 0.0;
    for (long update = 1; update <= cfg.max_updates; ++update) {
        const TaskBatch tb = gen_task(cfg.task, data_rng, cfg.seq_len, static_cast<int>(cfg.batch));
        Tape tape;
        BoundModel bm = BoundModel::bind(tape, params);
        UnrollOptions opts;
        opts.with_loss = true;
        opts.record_attention = false;
        UnrollResult run = unroll(tape, bm, tb, opts);

        const double loss = tape.value(run.loss)[0];
        if (!std::isfinite(loss)) {
            res.aborted = true;
            res.abort_reason = "non-finite loss at update " + std::to_string(update);
            res.updates_run = update;
            break;
        }
        tape.backward(run.loss);

        std::vector<Tensor*> prefs;
        std::vector<Tensor> grads;
        const auto nodes = bm.param_nodes();
        grads.reserve(nodes.size());
        params.for_each_param([&prefs](const char*, Tensor& t) { prefs.push_back(&t); });
        bool grads_finite = true;
        for (const auto& [name, id] : nodes) {
            grads.push_back(tape.grad(id));
            if (!grads.back().all_finite()) grads_finite = false;
        }

        std::vector<Tensor*> gptrs;
        for (Tensor& g : grads) gptrs.push_back(&g);
        res.last_grad_norm = clip_gradients(gptrs, cfg.clip_norm);
        if (!grads_finite || !std::isfinite(res.last_grad_norm)) {
            res.aborted = true;
            res.abort_reason = "non-finite gradient at update " + std::to_string(update) +
                               " (loss " + std::to_string(loss) + ")";
            res.updates_run = update;
            break;
        }

        std::vector<const Tensor*> gconst(gptrs.begin(), gptrs.end());
        opt.step(prefs, gconst);
        last_loss = loss;
        res.updates_run = update;

        if (update % cfg.eval_every == 0 || update == cfg.max_updates) {
            const double acc = evaluate(params, cfg.task, cfg.seq_len, cfg.batch,
                                        cfg.eval_batches, eval_rng);
            RunRecord rec;
            rec.update = update;
            rec.loss = last_loss;
            rec.eval_accuracy = acc;
            rec.wall_seconds = seconds_since(t0);
            rec.align_evals = run.counters.align_evals;
            rec.peak_slots = run.counters.peak_slots;
            rec.peak_tape_nodes = run.counters.peak_tape_nodes;
            res.records.push_back(rec);
            if (metrics.is_open()) {
                append_metrics_csv(metrics, rec);
                metrics.flush();
            }
            if (progress) {
                (*progress) << "update " << update << " loss " << last_loss << " acc " << acc
                            << " (" << rec.wall_seconds << "s)\n";
                progress->flush();
            }
            if (acc > res.best_accuracy) {
                res.best_accuracy = acc;
                res.best_update = update;
                res.best_params = params;
                if (!cfg.out_dir.empty()) {
                    save_checkpoint(cfg.out_dir + "/checkpoint.bin", params,
                                    {{"update", update}, {"eval_accuracy", acc}});
                }
            }
            if (cfg.target_accuracy >= 0 && acc >= cfg.target_accuracy) break;
        }
    }

    res.final_params = params;
    res.wall_seconds = seconds_since(t0);
    return res;
}

}  // namespace relnet
