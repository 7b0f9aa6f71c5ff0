#include "relnet/tasks.hpp"

#include <algorithm>
#include <numeric>

#include "relnet/errors.hpp"

namespace relnet {

TaskKind parse_task_kind(const std::string& s) {
    if (s == "copy") return TaskKind::Copy;
    if (s == "denoise") return TaskKind::Denoise;
    throw ConfigError("unknown task '" + s + "' (expected copy or denoise)");
}

std::string to_string(TaskKind k) { return k == TaskKind::Copy ? "copy" : "denoise"; }

Tensor TaskBatch::step_input(long t) const {
    Tensor x({channels, batch});
    for (long b = 0; b < batch; ++b) {
        for (long c = 0; c < channels; ++c) x.at(c, b) = input_at(t, b, c);
    }
    return x;
}

namespace {

TaskBatch make_blank_batch(long total_len, long batch) {
    TaskBatch tb;
    tb.total_len = total_len;
    tb.batch = batch;
    tb.channels = kTaskChannels;
    tb.inputs = Tensor({total_len, batch, kTaskChannels});
    tb.targets.assign(static_cast<std::size_t>(total_len * batch), kBlankSymbol);
    tb.loss_mask.assign(static_cast<std::size_t>(total_len), 1);
    return tb;
}

void set_input(TaskBatch& tb, long t, long b, int symbol) {
    tb.inputs[(t * tb.batch + b) * tb.channels + symbol] = 1.0;
}

}  // namespace

TaskBatch gen_copy(Rng& rng, int T, int batch) {
    if (T < 1) throw std::domain_error("copy task requires T >= 1");
    const long total = T + 2 * kRecallLen;
    TaskBatch tb = make_blank_batch(total, batch);
    for (long b = 0; b < batch; ++b) {
        int data[kRecallLen];
        for (int i = 0; i < kRecallLen; ++i) data[i] = rng.uniform_int(kDataSymbols);
        for (int i = 0; i < kRecallLen; ++i) set_input(tb, i, b, data[i]);
        for (long t = kRecallLen; t < T + kRecallLen - 1; ++t) set_input(tb, t, b, kBlankSymbol);
        set_input(tb, T + kRecallLen - 1, b, kMarkerSymbol);
        for (long t = T + kRecallLen; t < total; ++t) {
            set_input(tb, t, b, kBlankSymbol);
            tb.targets[static_cast<std::size_t>(t * batch + b)] =
                data[t - (T + kRecallLen)];
        }
    }
    tb.recall_positions.resize(kRecallLen);
    std::iota(tb.recall_positions.begin(), tb.recall_positions.end(),
              static_cast<int>(total) - kRecallLen);
    return tb;
}

TaskBatch gen_denoise(Rng& rng, int T, int batch) {
    if (T < kRecallLen) throw std::domain_error("denoise task requires T >= 10");
    const long total = T + 1 + kRecallLen;
    TaskBatch tb = make_blank_batch(total, batch);
    std::vector<int> slots(static_cast<std::size_t>(T));
    for (long b = 0; b < batch; ++b) {
        // partial Fisher-Yates: 10 distinct positions out of 0..T-1
        std::iota(slots.begin(), slots.end(), 0);
        for (int i = 0; i < kRecallLen; ++i) {
            const int j = i + rng.uniform_int(T - i);
            std::swap(slots[static_cast<std::size_t>(i)], slots[static_cast<std::size_t>(j)]);
        }
        std::sort(slots.begin(), slots.begin() + kRecallLen);

        int data[kRecallLen];
        for (int i = 0; i < kRecallLen; ++i) data[i] = rng.uniform_int(kDataSymbols);

        for (long t = 0; t < T; ++t) set_input(tb, t, b, kBlankSymbol);
        for (int i = 0; i < kRecallLen; ++i) {
            const long t = slots[static_cast<std::size_t>(i)];
            for (long c = 0; c < tb.channels; ++c) tb.inputs[(t * batch + b) * tb.channels + c] = 0.0;
            set_input(tb, t, b, data[i]);
        }
        set_input(tb, T, b, kMarkerSymbol);
        for (long t = T + 1; t < total; ++t) {
            set_input(tb, t, b, kBlankSymbol);
            tb.targets[static_cast<std::size_t>(t * batch + b)] = data[t - (T + 1)];
        }
    }
    tb.recall_positions.resize(kRecallLen);
    std::iota(tb.recall_positions.begin(), tb.recall_positions.end(),
              static_cast<int>(total) - kRecallLen);
    return tb;
}

TaskBatch gen_task(TaskKind kind, Rng& rng, int T, int batch) {
    return kind == TaskKind::Copy ? gen_copy(rng, T, batch) : gen_denoise(rng, T, batch);
}

void export_batch_csv(const TaskBatch& tb, std::ostream& out, long batch_index) {
    out << "position,symbol,target,mask\n";
    for (long t = 0; t < tb.total_len; ++t) {
        int symbol = -1;
        for (long c = 0; c < tb.channels; ++c) {
            if (tb.input_at(t, batch_index, c) != 0.0) symbol = static_cast<int>(c);
        }
        out << t << "," << symbol << "," << tb.target_at(t, batch_index) << ","
            << static_cast<int>(tb.loss_mask[static_cast<std::size_t>(t)]) << "\n";
    }
}

}  // namespace relnet
