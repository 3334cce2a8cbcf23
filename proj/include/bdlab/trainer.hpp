#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bdlab/adapters.hpp"
#include "bdlab/data.hpp"
#include "bdlab/metrics.hpp"
#include "bdlab/model.hpp"

namespace bdlab {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction; one moment pair per parameter tensor.
class Adam {
public:
    explicit Adam(double lr, AdamConfig cfg = {}) : lr_(lr), cfg_(cfg) {}
    void step(const std::vector<NumArray*>& params, const std::vector<const NumArray*>& grads);
    std::int64_t steps() const { return t_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<NumArray> m_, v_;
};

struct PretrainConfig {
    std::uint64_t seed = 0;
    double lr = 1e-3;
    int iterations = 4000;
    std::size_t batch = 128;
    double label_dropout = 0.2;
    int log_every = 100;
};

DenoiserModel pretrain(const DataSpec& data, const ModelArch& arch, const NoiseSchedule& sched,
                       const PretrainConfig& cfg, std::vector<MetricsRow>* loss_log = nullptr);

struct PriorPreservation {
    bool enabled = false;
    double weight = 1.0;
    std::size_t count = 0;
};

struct TrainConfig {
    std::uint64_t seed = 0;
    double lr = 0.0;      // 0 selects the variant default
    int iterations = 0;   // 0 selects 200 x |D|
    std::size_t batch = 1;
    double lambda = 0.0;
    AdapterSpec adapter;
    PriorPreservation prior;
    int cadence = 0;      // evaluate/checkpoint every `cadence` steps; 0 only at start and end
    bool cosine_decay = false;
    // Stop at the first recorded checkpoint whose l_dm falls below this (0 disables).
    double stop_below = 0.0;
};

double default_learning_rate(const AdapterSpec& spec);
int default_iterations(std::size_t few_shot_count);

struct EvalConfig {
    bool enabled = true;
    std::uint64_t metric_seed = 1234;
    std::size_t samples = 200;
    int sampler_steps = 100;
    int sigma1_t = 500;
    std::size_t sigma1_samples = 64;
    std::size_t loss_grid = 10;  // timesteps in the fixed training-loss grid
    std::size_t raster_side = 0;
};

struct CheckpointEntry {
    std::int64_t iteration = 0;
    std::string path;
    MetricsRow row;
};
using CheckpointSeries = std::vector<CheckpointEntry>;

// Called at every cadence point with the current model (read-only).
using CheckpointHook = std::function<void(std::int64_t iteration, const DenoiserModel& model)>;

// Deterministic average diffusion loss over D x a fixed timestep grid.
double grid_train_loss(const DenoiserModel& model, const NumArray& D, int label, std::size_t grid, std::uint64_t seed);

MetricsRow evaluate(const DenoiserModel& model, const NumArray& D, int label, const EvalConfig& cfg);

// Class samples for the preservation term, drawn from the pretrained model.
NumArray generate_class_samples(const DenoiserModel& pretrained, int label, std::size_t count, std::uint64_t seed);
double prior_preservation_loss(const DenoiserModel& current, const NumArray& class_samples, int label,
                               std::uint64_t seed);

struct FinetuneResult {
    DenoiserModel model;
    CheckpointSeries series;
    PlacementReport placement;
};

FinetuneResult finetune(const DenoiserModel& pretrained, const NumArray& D, int label, const TrainConfig& cfg,
                        const EvalConfig& eval, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        const CheckpointHook& hook = {});

}  // namespace bdlab
