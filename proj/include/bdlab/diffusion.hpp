#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bdlab/tensor.hpp"

namespace bdlab {

enum class ScheduleKind { Linear, ScaledLinear };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::Linear;
    int T = 0;
    std::vector<double> beta;       // index 1..T, beta[0] unused (0)
    std::vector<double> alpha_bar;  // index 0..T, alpha_bar[0] = 1

    double ab(int t) const;
};

NoiseSchedule make_schedule(int T, ScheduleKind kind);

// x_t = sqrt(ab) x0 + sqrt(1 - ab) eps, row-wise.
NumArray forward_diffuse(const NumArray& x0, double alpha_bar, const NumArray& eps);
NumArray forward_diffuse(const NumArray& x0, const std::vector<int>& t, const NumArray& eps,
                         const NoiseSchedule& s);

// Anything that predicts the noise added to a batch of rows.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual NumArray predict_eps(const NumArray& x_t, const std::vector<int>& t,
                                 const std::vector<int>& labels) const = 0;
    virtual std::size_t dim() const = 0;
};

// Mean squared error between predicted and true noise.
double diffusion_loss(const NumArray& eps_hat, const NumArray& eps);
Var diffusion_loss(Var eps_hat, const NumArray& eps);
double diffusion_loss(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& x0,
                      const std::vector<int>& t, const NumArray& eps, const std::vector<int>& labels);

NumArray predict_x0(const NumArray& x_t, const NumArray& eps_hat, double alpha_bar);
NumArray predict_x0(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& x_t, int t,
                    const std::vector<int>& labels);

enum class SamplerMode { Ancestral, DeterministicMean };

struct SamplerConfig {
    int steps = 100;
    std::uint64_t seed = 0;
    SamplerMode mode = SamplerMode::Ancestral;
    // Rows are split into this many contiguous chunks run on separate threads.
    int workers = 1;
};

// Respaced timesteps t_0 > t_1 > ... > t_{n-1} >= 1 ending above zero.
std::vector<int> respaced_timesteps(int t_start, int steps);

// Draws x_T ~ N(0, I) (one stream per row) and denoises to x_0.
NumArray ancestral_sample(const NoisePredictor& model, const NoiseSchedule& s,
                          const SamplerConfig& cfg, const std::vector<int>& labels);
// Same, starting from a caller-provided x_T.
NumArray ancestral_sample_from(const NoisePredictor& model, const NoiseSchedule& s,
                               const SamplerConfig& cfg, const NumArray& x_T,
                               const std::vector<int>& labels);
// Runs the reverse process from an intermediate state at t_start.
NumArray partial_denoise(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& x_t,
                         int t_start, const std::vector<int>& labels, const SamplerConfig& cfg);

}  // namespace bdlab
