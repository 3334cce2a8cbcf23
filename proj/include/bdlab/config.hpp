#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdlab/data.hpp"
#include "bdlab/diffusion.hpp"
#include "bdlab/model.hpp"
#include "bdlab/trainer.hpp"

namespace bdlab {

struct ProbeSpec {
    std::string kind = "zero";  // zero | delta | scale
    int t_start = 1000;
    int steps = 100;
    int t = 100;
    std::vector<double> ks = {0.0, 0.25, 0.5, 1.0};
    double region_fraction = 0.25;
    double magnitude = 0.5;
    std::size_t draws = 32;
};

std::vector<std::string> probe_kinds();

struct ExperimentConfig {
    std::string name;
    std::uint64_t seed = 0;
    std::uint64_t metric_seed = 0;
    std::string output_dir;
    ScheduleKind schedule_kind = ScheduleKind::Linear;
    int T = 1000;
    ModelArch arch;
    DataSpec data;
    PretrainConfig pretrain;
    TrainConfig train;
    std::filesystem::path pretrained;  // resolved against the config's directory
    EvalConfig eval;
    ProbeSpec probe;
    nlohmann::json effective;          // canonical JSON after overrides, hashed into manifests

    NoiseSchedule schedule() const { return make_schedule(T, schedule_kind); }
    std::string hash() const;
};

// Field-level validation; every problem surfaces as ConfigError naming the field.
ExperimentConfig parse_experiment_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct Overrides {
    std::optional<bool> bnn;
    std::optional<double> lambda;
    std::optional<std::uint64_t> seed;
};
nlohmann::json apply_overrides(nlohmann::json j, const Overrides& o);

}  // namespace bdlab
