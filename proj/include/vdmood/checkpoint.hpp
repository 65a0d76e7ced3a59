#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vdmood/data.hpp"
#include "vdmood/denoiser.hpp"
#include "vdmood/errors.hpp"
#include "vdmood/schedule.hpp"

namespace vdmood {

// Everything needed to score new data exactly as the training run would have:
// the network, the schedule it was trained under, and the normalization stats
// of the training split.
struct ModelBundle {
    DenoiserModel model;
    NoiseSchedule schedule;
    NormStats norm;
};

// Checkpoint container: "VDMC" magic, u32 format version, u32 length-prefixed
// JSON config block, u64 parameter count, then raw little-endian f64 payload
// (model parameters in order, then schedule parameters when learnable).
// Raw doubles round-trip bit-exactly.

constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline nlohmann::ordered_json bundle_config_json(const ModelBundle& b) {
    const DenoiserConfig& c = b.model.config();
    nlohmann::ordered_json j;
    j["input_dim"] = c.input_dim;
    j["num_classes"] = c.num_classes;
    j["fourier_n"] = c.fourier_n;
    j["time_embed_dim"] = c.time_embed_dim;
    j["class_embed_dim"] = c.class_embed_dim;
    j["hidden_dims"] = c.hidden_dims;
    j["schedule"] = {
        {"kind", b.schedule.kind() == ScheduleKind::kLinear ? "linear" : "learned"},
        {"gamma_min", b.schedule.gamma_min()},
        {"gamma_max", b.schedule.gamma_max()},
        {"hidden", b.schedule.kind() == ScheduleKind::kLinear ? 0 : b.schedule.hidden()},
    };
    j["norm"] = {
        {"mean", b.norm.mean},
        {"std", b.norm.std_dev},
        {"clamped", b.norm.clamped_dims},
    };
    return j;
}

inline std::vector<const Matrix*> schedule_params(const NoiseSchedule& s) {
    if (s.kind() == ScheduleKind::kLinear) return {};
    auto& m = const_cast<NoiseSchedule&>(s);
    return {&m.rho_w(), &m.bias(), &m.rho_u()};
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelBundle& b) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open for writing");
    f.write("VDMC", 4);
    detail::write_raw(f, kCheckpointVersion);
    std::string cfg = detail::bundle_config_json(b).dump();
    detail::write_raw(f, static_cast<uint32_t>(cfg.size()));
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    std::vector<const Matrix*> tensors = b.model.parameters();
    for (const Matrix* m : detail::schedule_params(b.schedule)) tensors.push_back(m);
    uint64_t count = 0;
    for (const Matrix* m : tensors) count += m->size();
    detail::write_raw(f, count);
    for (const Matrix* m : tensors)
        f.write(reinterpret_cast<const char*>(m->data.data()),
                static_cast<std::streamsize>(m->size() * sizeof(double)));
    if (!f) throw DataError(path + ": write failed");
}

inline ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "VDMC", 4) != 0)
        throw DataError(path + ": bad magic, not a checkpoint");
    uint32_t version = detail::read_raw<uint32_t>(f, "version");
    if (version != kCheckpointVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    uint32_t len = detail::read_raw<uint32_t>(f, "config length");
    std::string cfg_text(len, '\0');
    f.read(cfg_text.data(), len);
    if (!f) throw DataError(path + ": truncated config block");

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(cfg_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": config block is not valid JSON: " + e.what());
    }

    ModelBundle b;
    try {
        DenoiserConfig c;
        c.input_dim = j.at("input_dim");
        c.num_classes = j.at("num_classes");
        c.fourier_n = j.at("fourier_n");
        c.time_embed_dim = j.at("time_embed_dim");
        c.class_embed_dim = j.at("class_embed_dim");
        c.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
        b.model = DenoiserModel(c, 0);
        auto sj = j.at("schedule");
        if (sj.at("kind") == "linear")
            b.schedule = NoiseSchedule::linear(sj.at("gamma_min"), sj.at("gamma_max"));
        else
            b.schedule = NoiseSchedule::learned_monotone(sj.at("gamma_min"), sj.at("gamma_max"),
                                                         sj.at("hidden"));
        b.norm.mean = j.at("norm").at("mean").get<std::vector<double>>();
        b.norm.std_dev = j.at("norm").at("std").get<std::vector<double>>();
        b.norm.clamped_dims = j.at("norm").at("clamped").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": config block missing fields: " + e.what());
    }

    std::vector<Matrix*> tensors = b.model.parameters();
    if (b.schedule.kind() == ScheduleKind::kLearnedMonotone) {
        tensors.push_back(&b.schedule.rho_w());
        tensors.push_back(&b.schedule.bias());
        tensors.push_back(&b.schedule.rho_u());
    }
    uint64_t expect = 0;
    for (Matrix* m : tensors) expect += m->size();
    uint64_t count = detail::read_raw<uint64_t>(f, "parameter count");
    if (count != expect)
        throw DataError(path + ": parameter count " + std::to_string(count) +
                        " does not match config (" + std::to_string(expect) + ")");
    for (Matrix* m : tensors) {
        f.read(reinterpret_cast<char*>(m->data.data()),
               static_cast<std::streamsize>(m->size() * sizeof(double)));
        if (!f) throw DataError(path + ": truncated parameter payload");
    }
    return b;
}

}  // namespace vdmood
