#include "relnet/config.hpp"

#include <fstream>

#include "relnet/errors.hpp"

namespace relnet {

nlohmann::json config_to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"model", to_string(cfg.model)},
                          {"task", to_string(cfg.task)},
                          {"seq_len", cfg.seq_len},
                          {"hidden", cfg.hidden},
                          {"batch", cfg.batch},
                          {"nu", cfg.nu},
                          {"rho", cfg.rho},
                          {"nonlinearity", to_string(cfg.phi)},
                          {"optimizer", to_string(cfg.opt.kind)},
                          {"lr", cfg.opt.lr},
                          {"seed", cfg.seed},
                          {"max_updates", cfg.max_updates},
                          {"eval_every", cfg.eval_every},
                          {"eval_batches", cfg.eval_batches},
                          {"clip_norm", cfg.clip_norm},
                          {"target_accuracy", cfg.target_accuracy},
                          {"out_dir", cfg.out_dir}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    try {
        if (j.contains("model")) cfg.model = parse_model_kind(j.at("model").get<std::string>());
        if (j.contains("task")) cfg.task = parse_task_kind(j.at("task").get<std::string>());
        if (j.contains("seq_len")) cfg.seq_len = j.at("seq_len").get<int>();
        if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<long>();
        if (j.contains("batch")) cfg.batch = j.at("batch").get<long>();
        if (j.contains("nu")) cfg.nu = j.at("nu").get<int>();
        if (j.contains("rho")) cfg.rho = j.at("rho").get<int>();
        if (j.contains("nonlinearity")) {
            cfg.phi = parse_nonlinearity(j.at("nonlinearity").get<std::string>());
        }
        if (j.contains("optimizer")) cfg.opt.kind = parse_opt_kind(j.at("optimizer").get<std::string>());
        if (j.contains("lr")) cfg.opt.lr = j.at("lr").get<double>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("max_updates")) cfg.max_updates = j.at("max_updates").get<long>();
        if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<long>();
        if (j.contains("eval_batches")) cfg.eval_batches = j.at("eval_batches").get<int>();
        if (j.contains("clip_norm")) cfg.clip_norm = j.at("clip_norm").get<double>();
        if (j.contains("target_accuracy")) cfg.target_accuracy = j.at("target_accuracy").get<double>();
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return cfg;
}

TrainConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error in ") + path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace relnet
