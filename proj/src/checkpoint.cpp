#include "relnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "relnet/errors.hpp"

namespace relnet {

namespace {
constexpr char kMagic[8] = {'R', 'E', 'L', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const nlohmann::json& meta) {
    nlohmann::json header;
    header["model"] = to_string(params.kind);
    header["nonlinearity"] = to_string(params.phi);
    header["hidden"] = params.hidden;
    header["input_dim"] = params.input_dim;
    header["out_dim"] = params.out_dim;
    header["nu"] = params.nu;
    header["rho"] = params.rho;
    header["meta"] = meta;
    nlohmann::json plist = nlohmann::json::array();
    params.for_each_param([&plist](const char* name, const Tensor& t) {
        plist.push_back({{"name", name}, {"shape", t.shape()}});
    });
    header["params"] = plist;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
    const std::string js = header.dump();
    const std::uint64_t len = js.size();
    f.write(kMagic, sizeof(kMagic));
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    params.for_each_param([&f](const char*, const Tensor& t) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint file: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string js(len, '\0');
    f.read(js.data(), static_cast<std::streamsize>(len));
    const nlohmann::json header = nlohmann::json::parse(js);

    Checkpoint ck;
    // Rebuild geometry with a throwaway rng, then overwrite every tensor.
    Rng rng(0);
    ck.params = ModelParams::create(parse_model_kind(header.at("model").get<std::string>()),
                                    parse_nonlinearity(header.at("nonlinearity").get<std::string>()),
                                    header.at("hidden").get<long>(),
                                    header.at("input_dim").get<long>(),
                                    header.at("out_dim").get<long>(), header.at("nu").get<int>(),
                                    header.at("rho").get<int>(), rng);
    ck.meta = header.value("meta", nlohmann::json::object());

    std::size_t idx = 0;
    const auto& plist = header.at("params");
    ck.params.for_each_param([&](const char* name, Tensor& t) {
        if (idx >= plist.size() || plist[idx].at("name").get<std::string>() != name) {
            throw std::runtime_error("checkpoint parameter list mismatch at '" +
                                     std::string(name) + "'");
        }
        const auto shape = plist[idx].at("shape").get<std::vector<long>>();
        if (shape != t.shape()) throw std::runtime_error("checkpoint shape mismatch for " + std::string(name));
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
        ++idx;
    });
    if (!f || idx != plist.size()) throw std::runtime_error("truncated checkpoint: " + path);
    return ck;
}

}  // namespace relnet
