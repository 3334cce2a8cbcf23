#include "bdlab/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

double amplification(double sigma1, double alpha_bar) {
    if (std::isinf(sigma1)) return 1.0 / std::sqrt(alpha_bar);
    const double v = sigma1 * sigma1;
    return std::sqrt(alpha_bar) * v / (alpha_bar * v + 1.0 - alpha_bar);
}

double amplification(double sigma1, int t, const NoiseSchedule& s) {
    if (t < 1) throw ContractError("amplification: t must be at least 1");
    return amplification(sigma1, s.ab(t));
}

NumArray delta_t(const NumArray& x_t, const NumArray& anchor, double sigma1, double alpha_bar) {
    if (!x_t.same_shape(anchor)) throw DimensionError("delta_t: x_t and anchor shapes differ");
    const double k = amplification(sigma1, alpha_bar);
    const double a = std::sqrt(alpha_bar);
    NumArray out(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = k * (x_t[i] - a * anchor[i]);
    return out;
}

namespace {

std::size_t nearest_anchor_ab(const GaussianWorldModel& wm, const NumArray& x_t, double ab) {
    if (wm.anchors.empty()) throw ContractError("world model has no anchors");
    std::size_t best = 0;
    double best_norm = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < wm.anchors.size(); ++j) {
        const double n = frobenius_norm(delta_t(x_t, wm.anchors[j], wm.sigma1, ab));
        if (n < best_norm) {
            best_norm = n;
            best = j;
        }
    }
    return best;
}

}  // namespace

std::size_t nearest_anchor(const GaussianWorldModel& wm, const NumArray& x_t, int t) {
    return nearest_anchor_ab(wm, x_t, wm.schedule.ab(t));
}

PosteriorGaussian posterior_x0_ab(const GaussianWorldModel& wm, const NumArray& x_t, double ab) {
    const std::size_t j = nearest_anchor_ab(wm, x_t, ab);
    const NumArray& anchor = wm.anchors[j];
    PosteriorGaussian p;
    p.mean = anchor + delta_t(x_t, anchor, wm.sigma1, ab);
    const double v = wm.sigma1 * wm.sigma1;
    if (std::isinf(v)) {
        p.relative_variance = 0.0;
        p.variance = (1.0 - ab) / ab;
    } else {
        p.relative_variance = (1.0 - ab) / (ab * v + 1.0 - ab);
        p.variance = v * p.relative_variance;
    }
    return p;
}

PosteriorGaussian posterior_x0(const GaussianWorldModel& wm, const NumArray& x_t, int t) {
    if (t < 1) throw ContractError("posterior_x0: t must be at least 1");
    return posterior_x0_ab(wm, x_t, wm.schedule.ab(t));
}

NumArray joint_covariance(const GaussianWorldModel& wm, int t) {
    if (t < 1) throw ContractError("joint_covariance: t must be at least 1");
    const double ab = wm.schedule.ab(t);
    const double v = wm.sigma1 * wm.sigma1;
    const double c = std::sqrt(ab) * v;
    return NumArray::from_rows({{v, c}, {c, ab * v + 1.0 - ab}});
}

NumArray scale_probe_prediction(const GaussianWorldModel& wm, double k, int t) {
    if (wm.anchors.size() != 1) throw ContractError("scale_probe_prediction: needs exactly one anchor");
    const double ab = wm.schedule.ab(t);
    const double amp = amplification(wm.sigma1, ab);
    return (1.0 + amp * (k - std::sqrt(ab))) * wm.anchors.front();
}

double sigma1_from_k(double k, double ab) {
    const double sa = std::sqrt(ab);
    if (k >= 1.0 / sa) return std::numeric_limits<double>::infinity();
    const double v = k * (1.0 - ab) / (sa - k * ab);
    return v <= 0.0 ? 0.0 : std::sqrt(v);
}

double estimate_sigma1(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& anchor, int t,
                       std::size_t n_samples, int label, std::uint64_t seed) {
    if (t < 1) throw ContractError("estimate_sigma1: t must be at least 1");
    if (n_samples < 1) throw ContractError("estimate_sigma1: need at least one sample");
    const std::size_t d = anchor.size();
    const double ab = s.ab(t);
    const double sa = std::sqrt(ab), sd = std::sqrt(1.0 - ab);
    Rng rng(seed);
    NumArray x_t = NumArray::matrix(n_samples, d);
    for (double& v : x_t.values()) v = sd * rng.normal();
    const NumArray x0 = predict_x0(model, s, x_t, t, std::vector<int>(n_samples, label));

    std::vector<double> est;
    est.reserve(n_samples);
    for (std::size_t r = 0; r < n_samples; ++r) {
        double uv = 0.0, vv = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double u = x0(r, j) - anchor[j];
            const double v = x_t(r, j) - sa * anchor[j];
            uv += u * v;
            vv += v * v;
        }
        est.push_back(sigma1_from_k(vv > 0.0 ? uv / vv : 0.0, ab));
    }
    std::sort(est.begin(), est.end());
    const std::size_t n = est.size();
    if (n % 2 == 1) return est[n / 2];
    const double lo = est[n / 2 - 1], hi = est[n / 2];
    if (std::isinf(hi)) return std::isinf(lo) ? lo : hi;
    return 0.5 * (lo + hi);
}

NumArray WorldModelPredictor::predict_eps(const NumArray& x_t, const std::vector<int>& t,
                                          const std::vector<int>&) const {
    NumArray out(x_t.shape());
    const std::size_t d = x_t.cols();
    for (std::size_t r = 0; r < x_t.rows(); ++r) {
        const double ab = wm_.schedule.ab(t[r]);
        const NumArray row = x_t.row_slice(r);
        const NumArray x0 = posterior_x0_ab(wm_, row, ab).mean;
        for (std::size_t j = 0; j < d; ++j) out(r, j) = (row[j] - std::sqrt(ab) * x0[j]) / std::sqrt(1.0 - ab);
    }
    return out;
}

}  // namespace bdlab
