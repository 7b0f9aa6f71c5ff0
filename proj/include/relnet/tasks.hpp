#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "relnet/rng.hpp"
#include "relnet/tensor.hpp"

namespace relnet {

enum class TaskKind { Copy, Denoise };
TaskKind parse_task_kind(const std::string& s);
std::string to_string(TaskKind k);

// Symbol alphabet shared by both tasks: 8 data symbols, one blank, one marker.
inline constexpr int kDataSymbols = 8;
inline constexpr int kBlankSymbol = 8;
inline constexpr int kMarkerSymbol = 9;
inline constexpr int kTaskChannels = 10;
inline constexpr int kRecallLen = 10;

struct TaskBatch {
    Tensor inputs;                        // [total_len, batch, channels] one-hot
    std::vector<int> targets;             // total_len * batch class indices
    std::vector<std::uint8_t> loss_mask;  // per timestep; both tasks: all ones
    std::vector<int> recall_positions;    // timesteps scored for accuracy (0-based)
    long total_len = 0;
    long batch = 0;
    long channels = 0;

    int target_at(long t, long b) const {
        return targets[static_cast<std::size_t>(t * batch + b)];
    }
    double input_at(long t, long b, long c) const {
        return inputs[(t * batch + b) * channels + c];
    }
    // m x batch slice for one timestep (the per-step network input).
    Tensor step_input(long t) const;
};

// 10 random data symbols up front, a delay of blanks, a marker, then 10 steps
// in which the symbols must be reproduced. Total length T + 20.
TaskBatch gen_copy(Rng& rng, int T, int batch);

// 10 data symbols at distinct random positions in 1..T, marker at T+1,
// recall in the final 10 steps. Total length T + 11. Requires T >= 10.
TaskBatch gen_denoise(Rng& rng, int T, int batch);

TaskBatch gen_task(TaskKind kind, Rng& rng, int T, int batch);

// Debug dump: one row per timestep of one batch element.
void export_batch_csv(const TaskBatch& batch, std::ostream& out, long batch_index = 0);

}  // namespace relnet
