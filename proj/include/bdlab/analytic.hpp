#pragma once

#include <cstdint>
#include <vector>

#include "bdlab/diffusion.hpp"
#include "bdlab/tensor.hpp"

namespace bdlab {

// k = sqrt(ab) s^2 / (ab s^2 + 1 - ab); s = +inf gives the 1/sqrt(ab) limit.
double amplification(double sigma1, double alpha_bar);
double amplification(double sigma1, int t, const NoiseSchedule& s);

NumArray delta_t(const NumArray& x_t, const NumArray& anchor, double sigma1, double alpha_bar);

struct GaussianWorldModel {
    std::vector<NumArray> anchors;  // each (1 x d)
    double sigma1 = 1.0;
    NoiseSchedule schedule;
};

struct PosteriorGaussian {
    NumArray mean;
    // Exact conditional variance of x0 given x_t under the world model.
    double variance = 0.0;
    // The same quantity divided by sigma1^2; always in (0, 1].
    double relative_variance = 0.0;
};

std::size_t nearest_anchor(const GaussianWorldModel& wm, const NumArray& x_t, int t);
PosteriorGaussian posterior_x0(const GaussianWorldModel& wm, const NumArray& x_t, int t);
// Same as above with an explicit alpha_bar instead of a timestep.
PosteriorGaussian posterior_x0_ab(const GaussianWorldModel& wm, const NumArray& x_t, double alpha_bar);

// 2x2 covariance of (x0, x_t) for scalar data.
NumArray joint_covariance(const GaussianWorldModel& wm, int t);
NumArray scale_probe_prediction(const GaussianWorldModel& wm, double k, int t);

// Median over n_samples draws x_t ~ N(0, (1 - ab) I) of the sigma1 implied by
// the least-squares amplification fit. Returns +inf when the fit exceeds the
// 1/sqrt(ab) bound.
double estimate_sigma1(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& anchor, int t,
                       std::size_t n_samples, int label, std::uint64_t seed);
double sigma1_from_k(double k, double alpha_bar);

// A noise predictor whose x0 estimate is exactly the world-model posterior mean.
class WorldModelPredictor : public NoisePredictor {
public:
    explicit WorldModelPredictor(GaussianWorldModel wm) : wm_(std::move(wm)) {}
    NumArray predict_eps(const NumArray& x_t, const std::vector<int>& t,
                         const std::vector<int>& labels) const override;
    std::size_t dim() const override { return wm_.anchors.front().cols(); }
    const GaussianWorldModel& world() const { return wm_; }

private:
    GaussianWorldModel wm_;
};

}  // namespace bdlab
