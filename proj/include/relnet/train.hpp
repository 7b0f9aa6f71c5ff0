#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "relnet/model.hpp"
#include "relnet/optim.hpp"
#include "relnet/tasks.hpp"

namespace relnet {

struct TrainConfig {
    ModelKind model = ModelKind::RelRnn;
    TaskKind task = TaskKind::Copy;
    int seq_len = 100;            // the task's T (delay / noise span)
    long hidden = 128;
    long batch = 64;
    int nu = 10;
    int rho = 10;
    Nonlinearity phi = Nonlinearity::Tanh;
    OptConfig opt;
    std::uint64_t seed = 1;
    long max_updates = 20000;
    long eval_every = 100;
    int eval_batches = 20;
    double clip_norm = 0.0;       // <= 0: clipping disabled
    double target_accuracy = -1;  // >= 0: stop once an eval reaches it
    std::string out_dir;          // when set: metrics.csv + checkpoints

    void validate() const;  // throws ConfigError
};

struct RunRecord {
    long update = 0;
    double loss = 0.0;
    double eval_accuracy = 0.0;
    double wall_seconds = 0.0;
    unsigned long long align_evals = 0;
    std::size_t peak_slots = 0;
    std::size_t peak_tape_nodes = 0;
};

struct TrainResult {
    ModelParams best_params;   // highest eval accuracy seen
    ModelParams final_params;
    double best_accuracy = 0.0;
    long best_update = 0;
    long updates_run = 0;
    std::vector<RunRecord> records;
    bool aborted = false;          // non-finite loss or gradient
    std::string abort_reason;
    double last_grad_norm = 0.0;   // diagnostic for aborts
    double wall_seconds = 0.0;
};

// Deterministic given the seed. Evaluates on freshly generated batches every
// eval_every updates and keeps the best checkpoint.
TrainResult train_run(const TrainConfig& cfg, std::ostream* progress = nullptr);

// Mean argmax accuracy over the recall positions of n_batches fresh batches.
double evaluate(const ModelParams& params, TaskKind task, int seq_len, long batch,
                int n_batches, Rng& rng);

// Evaluation-only pass at each T in t_evals (no parameter updates). Entries
// with T < t_train are legal but flagged by the caller-facing CSV.
std::vector<std::pair<int, double>> transfer_eval(const ModelParams& params, TaskKind task,
                                                  const std::vector<int>& t_evals, long batch,
                                                  int n_batches, std::uint64_t seed);

const char* metrics_csv_header();
void append_metrics_csv(std::ostream& out, const RunRecord& r);

}  // namespace relnet
