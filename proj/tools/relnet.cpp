// Experiment driver: training, evaluation, instrumentation and the
// verification suite behind one binary.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "relnet/analysis.hpp"
#include "relnet/checkpoint.hpp"
#include "relnet/config.hpp"
#include "relnet/errors.hpp"

namespace fs = std::filesystem;
using namespace relnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerifyFail = 2;
constexpr int kExitNumeric = 3;

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    if (out.empty()) throw ConfigError("empty integer list: '" + s + "'");
    return out;
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
    fs::create_directories(dir);
    std::ofstream f(dir + "/" + name, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + dir + "/" + name);
    return f;
}

struct CliArgs {
    std::string config_file;
    std::string model = "rel-rnn";
    std::string task = "copy";
    std::string seq_lens = "100";
    long hidden = 128;
    long batch = 64;
    int nu = 10, rho = 10;
    std::string optimizer = "adam";
    double lr = 2e-4;
    std::string nonlinearity = "tanh";
    std::uint64_t seed = 1;
    long max_updates = 20000;
    long eval_every = 100;
    int eval_batches = 20;
    double clip = 0.0;
    double target_acc = -1.0;
    std::string out = "out";
    std::string checkpoint;
    std::string nus = "10", rhos = "10";
    std::string models = "mem-rnn,rel-rnn";
    int trials = 50;
    std::string sub;
};

void add_common_flags(CLI::App* cmd, CliArgs& a) {
    cmd->add_option("--config", a.config_file, "JSON config file; flags override its values");
    cmd->add_option("--model", a.model,
                    "rnn|lstm|mem-rnn|mem-lstm|rel-rnn|rel-lstm|uniform-attn-linear-rnn");
    cmd->add_option("--task", a.task, "copy|denoise");
    cmd->add_option("--seq-len", a.seq_lens, "task length T (comma list where a sweep applies)");
    cmd->add_option("--hidden", a.hidden, "hidden size");
    cmd->add_option("--batch", a.batch, "batch size");
    cmd->add_option("--nu", a.nu, "short-term buffer capacity");
    cmd->add_option("--rho", a.rho, "relevant-set capacity");
    cmd->add_option("--optimizer", a.optimizer, "sgd|adam|rmsprop");
    cmd->add_option("--lr", a.lr, "learning rate");
    cmd->add_option("--nonlinearity", a.nonlinearity, "tanh|modrelu");
    cmd->add_option("--seed", a.seed, "rng seed");
    cmd->add_option("--max-updates", a.max_updates, "training updates");
    cmd->add_option("--eval-every", a.eval_every, "evaluation cadence in updates");
    cmd->add_option("--eval-batches", a.eval_batches, "fresh batches per evaluation");
    cmd->add_option("--clip", a.clip, "gradient clipping norm (0 disables)");
    cmd->add_option("--target-acc", a.target_acc, "stop once eval accuracy reaches this");
    cmd->add_option("--out", a.out, "output directory");
}

TrainConfig resolve_config(const CliArgs& a, const CLI::App* cmd) {
    TrainConfig cfg;
    if (!a.config_file.empty()) cfg = load_config_file(a.config_file);
    auto used = [cmd](const std::string& flag) { return cmd->count(flag) > 0; };
    const bool fresh = a.config_file.empty();
    if (fresh || used("--model")) cfg.model = parse_model_kind(a.model);
    if (fresh || used("--task")) cfg.task = parse_task_kind(a.task);
    if (fresh || used("--seq-len")) cfg.seq_len = parse_int_list(a.seq_lens)[0];
    if (fresh || used("--hidden")) cfg.hidden = a.hidden;
    if (fresh || used("--batch")) cfg.batch = a.batch;
    if (fresh || used("--nu")) cfg.nu = a.nu;
    if (fresh || used("--rho")) cfg.rho = a.rho;
    if (fresh || used("--optimizer")) cfg.opt.kind = parse_opt_kind(a.optimizer);
    if (fresh || used("--lr")) cfg.opt.lr = a.lr;
    if (fresh || used("--nonlinearity")) cfg.phi = parse_nonlinearity(a.nonlinearity);
    if (fresh || used("--seed")) cfg.seed = a.seed;
    if (fresh || used("--max-updates")) cfg.max_updates = a.max_updates;
    if (fresh || used("--eval-every")) cfg.eval_every = a.eval_every;
    if (fresh || used("--eval-batches")) cfg.eval_batches = a.eval_batches;
    if (fresh || used("--clip")) cfg.clip_norm = a.clip;
    if (fresh || used("--target-acc")) cfg.target_accuracy = a.target_acc;
    if (fresh || used("--out")) cfg.out_dir = a.out;
    cfg.validate();
    return cfg;
}

int cmd_train(const CliArgs& a, const CLI::App* cmd) {
    const TrainConfig cfg = resolve_config(a, cmd);
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream echo(cfg.out_dir + "/config.json", std::ios::trunc);
        echo << config_to_json(cfg).dump(2) << "\n";
    }
    std::ofstream log(cfg.out_dir + "/run.log", std::ios::trunc);
    const TrainResult res = train_run(cfg, &log);
    if (res.aborted) {
        log << "aborted: " << res.abort_reason << " (last grad norm " << res.last_grad_norm
            << ")\n";
        std::cerr << "aborted: " << res.abort_reason << "\n";
        return kExitNumeric;
    }
    save_checkpoint(cfg.out_dir + "/final.bin", res.final_params,
                    {{"update", res.updates_run}, {"config", config_to_json(cfg)}});
    std::cout << "best accuracy " << res.best_accuracy << " at update " << res.best_update
              << " (" << res.wall_seconds << "s, " << res.updates_run << " updates)\n";
    return kExitOk;
}

int cmd_eval(const CliArgs& a, const CLI::App* cmd) {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for eval");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const TaskKind task = parse_task_kind(a.task);
    const std::vector<int> ts = parse_int_list(a.seq_lens);
    const int t_train = ck.meta.contains("config")
                            ? ck.meta.at("config").value("seq_len", 0)
                            : 0;
    const auto rows = transfer_eval(ck.params, task, ts, a.batch, a.eval_batches, a.seed);
    std::ofstream f = open_out(a.out, "accuracy.csv");
    f << "T,accuracy,flag\n";
    for (const auto& [T, acc] : rows) {
        const char* flag = (t_train > 0 && T < t_train) ? "below_train_length" : "";
        f << T << "," << acc << "," << flag << "\n";
        std::cout << "T=" << T << " accuracy " << acc << (flag[0] ? " (below training length)" : "")
                  << "\n";
    }
    (void)cmd;
    return kExitOk;
}

int cmd_dump_task(const CliArgs& a) {
    Rng rng(a.seed);
    const TaskBatch tb = gen_task(parse_task_kind(a.task), rng, parse_int_list(a.seq_lens)[0],
                                  static_cast<int>(a.batch));
    std::ofstream f = open_out(a.out, "task.csv");
    export_batch_csv(tb, f, 0);
    return kExitOk;
}

int cmd_analyze(const CliArgs& a, const CLI::App* cmd) {
    if (a.sub == "grad-trace") {
        if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for grad-trace");
        const Checkpoint ck = load_checkpoint(a.checkpoint);
        const auto rows = grad_trace(ck.params, parse_task_kind(a.task),
                                     parse_int_list(a.seq_lens)[0], a.batch, a.seed);
        std::ofstream f = open_out(a.out, "gradtrace.csv");
        write_grad_trace_csv(rows, f);
        std::cout << "log-norm spread " << trace_log_spread(rows) << " decades, slope vs age "
                  << trace_slope_vs_age(rows) << "\n";
        return kExitOk;
    }
    if (a.sub == "complexity") {
        std::vector<ModelKind> kinds;
        std::stringstream ss(a.models);
        std::string item;
        while (std::getline(ss, item, ',')) kinds.push_back(parse_model_kind(item));
        std::vector<long> ts;
        for (int t : parse_int_list(a.seq_lens)) ts.push_back(t);
        if (ts.size() < 3) throw ConfigError("complexity sweep needs at least 3 lengths");
        const auto rows = complexity_sweep(kinds, ts, a.hidden, a.nu, a.rho, a.seed);
        std::ofstream f = open_out(a.out, "complexity.csv");
        write_complexity_csv(rows, f);
        std::ofstream ff = open_out(a.out, "complexity_fit.csv");
        ff << "model,a,b,c,r2\n";
        for (ModelKind kind : kinds) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& r : rows) {
                if (r.kind == kind) pts.emplace_back(static_cast<double>(r.T),
                                                     static_cast<double>(r.align_evals));
            }
            const QuadFit fit = fit_quadratic(pts);
            ff << to_string(kind) << "," << fit.a << "," << fit.b << "," << fit.c << "," << fit.r2
               << "\n";
            std::cout << to_string(kind) << ": align fit a=" << fit.a << " b=" << fit.b
                      << " c=" << fit.c << " r2=" << fit.r2 << "\n";
        }
        return kExitOk;
    }
    if (a.sub == "heatmap") {
        if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for heatmap");
        const Checkpoint ck = load_checkpoint(a.checkpoint);
        const Tensor heat = attention_heatmap(ck.params, parse_task_kind(a.task),
                                              parse_int_list(a.seq_lens)[0], a.batch, a.seed);
        std::ofstream f = open_out(a.out, "heatmap.csv");
        write_heatmap_csv(heat, f);
        return kExitOk;
    }
    if (a.sub == "tradeoff") {
        TrainConfig proto = resolve_config(a, cmd);
        proto.out_dir.clear();
        std::ofstream log = open_out(a.out, "tradeoff.log");
        const auto cells = tradeoff_sweep(proto, parse_int_list(a.nus), parse_int_list(a.rhos),
                                          &log);
        std::ofstream sf = open_out(a.out, "tradeoff_summary.csv");
        sf << "nu,rho,best_accuracy,log_spread\n";
        for (const auto& c : cells) {
            sf << c.nu << "," << c.rho << "," << c.best_accuracy << "," << c.log_spread << "\n";
            std::ostringstream name;
            name << "tradeoff_nu" << c.nu << "_rho" << c.rho << ".csv";
            std::ofstream tf = open_out(a.out, name.str());
            write_grad_trace_csv(c.trace, tf);
        }
        return kExitOk;
    }
    throw ConfigError("unknown analyze subcommand '" + a.sub + "'");
}

int cmd_verify(const CliArgs& a) {
    fs::create_directories(a.out);
    std::ofstream csv(a.out + "/verify.csv", std::ios::trunc);
    csv << "check,metric,value,threshold,pass\n";
    bool all_pass = true;
    auto report = [&](const std::string& check, const std::string& metric, double value,
                      double threshold, bool pass) {
        csv << check << "," << metric << "," << value << "," << threshold << ","
            << (pass ? "1" : "0") << "\n";
        std::cout << (pass ? "[PASS] " : "[FAIL] ") << check << ": " << metric << " = " << value
                  << " (threshold " << threshold << ")\n";
        all_pass &= pass;
    };

    const bool all = a.sub == "all" || a.sub.empty();
    if (all || a.sub == "gradcheck") {
        const GradCheckReport rep = verify_gradcheck(a.seed, a.trials >= 100 ? a.trials : 100, 1e-4);
        report("gradcheck", "max_rel_err(" + rep.worst_case + ")", rep.max_rel_err, 1e-4, rep.pass);
    }
    if (all || a.sub == "paths") {
        const PathCheckReport rep = verify_path_decomposition(a.seed, a.trials, 4, 6, 1e-8);
        report("paths", "max_rel_err(" + rep.worst_pair + ")", rep.max_rel_err, 1e-8, rep.pass);
    }
    if (all || a.sub == "theorem1") {
        const TheoremReport rep = verify_theorem1(4, {50, 100, 200, 400, 800}, a.seed);
        report("theorem1", "slope", rep.slope, -1.1, rep.slope >= -1.1 && rep.slope <= 0.0);
        report("theorem1", "control_slope", rep.control_slope, -5.0, rep.control_slope <= -5.0);
        report("theorem1", "min_T_norm", rep.lower_constant, 0.01, rep.lower_constant >= 0.01);
    }
    if (all || a.sub == "theorem2") {
        for (const auto& [kappa, d] : std::vector<std::pair<int, int>>{{2, 1}, {2, 2}, {1, 0}}) {
            const TheoremReport rep = verify_theorem2(kappa, d, {50, 100, 200, 400, 800}, a.seed);
            std::ostringstream label;
            label << "theorem2(kappa=" << kappa << ",d=" << d << ")";
            report(label.str(), "abs_slope", std::abs(rep.slope), 0.1, std::abs(rep.slope) <= 0.1);
            report(label.str(), "min_norm_scaled", rep.lower_constant, 0.05,
                   rep.lower_constant >= 0.05);
        }
    }
    if (all || a.sub == "omega") {
        const OmegaReport rep = verify_omega(5, 12, 4, 1e-12);
        report("omega", "max_abs_err", rep.max_abs_err, 1e-12, rep.pass);
    }
    return all_pass ? kExitOk : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-attentive recurrent network laboratory"};
    app.require_subcommand(1);
    CliArgs a;

    CLI::App* train = app.add_subcommand("train", "train a model and write checkpoint + metrics");
    add_common_flags(train, a);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint at one or more lengths");
    add_common_flags(eval, a);
    eval->add_option("--checkpoint", a.checkpoint, "checkpoint file");

    CLI::App* dump = app.add_subcommand("dump-task", "write one generated batch as csv");
    add_common_flags(dump, a);

    CLI::App* analyze = app.add_subcommand("analyze", "instrumentation reports");
    analyze->add_option("sub", a.sub, "grad-trace|complexity|heatmap|tradeoff")->required();
    add_common_flags(analyze, a);
    analyze->add_option("--checkpoint", a.checkpoint, "checkpoint file");
    analyze->add_option("--models", a.models, "comma list of model kinds (complexity)");
    analyze->add_option("--nus", a.nus, "comma list of nu values (tradeoff)");
    analyze->add_option("--rhos", a.rhos, "comma list of rho values (tradeoff)");

    CLI::App* verify = app.add_subcommand("verify", "run verification assertions");
    verify->add_option("sub", a.sub, "gradcheck|paths|theorem1|theorem2|omega|all")->required();
    add_common_flags(verify, a);
    verify->add_option("--trials", a.trials, "random instances where applicable");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(a, train);
        if (eval->parsed()) return cmd_eval(a, eval);
        if (dump->parsed()) return cmd_dump_task(a);
        if (analyze->parsed()) return cmd_analyze(a, analyze);
        if (verify->parsed()) return cmd_verify(a);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericAbort& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
