#include "bdlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

namespace {

NumArray project(const NumArray& x, const NumArray& p) { return matmul(x, transpose(p)); }

double row_norm(const NumArray& a, std::size_t r) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(r, j) * a(r, j);
    return std::sqrt(s);
}

std::vector<double> values_of(const NumArray& a) { return a.values(); }

}  // namespace

NumArray random_projection(std::size_t dim, std::uint64_t seed, std::size_t out) {
    Rng rng(derive_seed(seed, {0x50524F4AULL, dim}));
    return rng.normal_array(out, dim);
}

double fidelity(const NumArray& generated, const NumArray& training, std::uint64_t metric_seed) {
    if (generated.rows() == 0 || training.rows() == 0) throw ContractError("fidelity: empty set");
    if (generated.cols() != training.cols()) throw DimensionError("fidelity: dimension mismatch");
    const NumArray p = random_projection(generated.cols(), metric_seed);
    const NumArray g = project(generated, p);
    const NumArray tr = project(training, p);
    std::vector<double> tn(tr.rows());
    for (std::size_t j = 0; j < tr.rows(); ++j) tn[j] = row_norm(tr, j);
    double total = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) {
        const double gn = row_norm(g, i);
        double best = -1.0;
        for (std::size_t j = 0; j < tr.rows(); ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) dot += g(i, c) * tr(j, c);
            const double denom = gn * tn[j];
            best = std::max(best, denom > 0.0 ? dot / denom : 0.0);
        }
        total += best;
    }
    return total / static_cast<double>(g.rows());
}

double diversity(const NumArray& generated) {
    const std::size_t n = generated.rows();
    if (n < 2) throw ContractError("diversity: need at least two samples");
    const std::size_t d = generated.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = generated(i, c) - generated(j, c);
                s += diff * diff;
            }
            total += std::sqrt(s);
        }
    }
    return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double laplacian_energy(const NumArray& rasters, std::size_t side) {
    if (side * side != rasters.cols()) {
        throw DimensionError("laplacian_energy: rows are not " + std::to_string(side) + "x" + std::to_string(side));
    }
    const auto s = static_cast<std::ptrdiff_t>(side);
    auto at = [&](std::size_t r, std::ptrdiff_t i, std::ptrdiff_t j) {
        i = std::clamp<std::ptrdiff_t>(i, 0, s - 1);
        j = std::clamp<std::ptrdiff_t>(j, 0, s - 1);
        return rasters(r, static_cast<std::size_t>(i * s + j));
    };
    double e = 0.0;
    for (std::size_t r = 0; r < rasters.rows(); ++r) {
        for (std::ptrdiff_t i = 0; i < s; ++i) {
            for (std::ptrdiff_t j = 0; j < s; ++j) {
                const double lap = 4.0 * at(r, i, j) - at(r, i - 1, j) - at(r, i + 1, j) - at(r, i, j - 1) -
                                   at(r, i, j + 1);
                e += lap * lap;
            }
        }
    }
    return e / static_cast<double>(rasters.size());
}

double quality(const NumArray& generated, const NumArray& training, std::size_t side) {
    if (side == 0) return 1.0;
    const double gen = laplacian_energy(generated, side);
    const double ref = laplacian_energy(training, side);
    if (gen <= 0.0) return 1.0;
    return std::clamp(ref / gen, 0.0, 1.0);
}

std::vector<double> moving_average3(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = std::min(n - 1, i + 1);
        double s = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) s += v[j];
        out[i] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

CorruptionReport find_dip(const std::vector<double>& f, double threshold) {
    CorruptionReport rep;
    const std::size_t n = f.size();
    if (n < 3) return rep;
    // best_before[q]: index of the (first) maximum of f over [0, q)
    std::vector<std::size_t> best_before(n, 0);
    for (std::size_t q = 2; q < n; ++q) best_before[q] = f[q - 1] > f[best_before[q - 1]] ? q - 1 : best_before[q - 1];
    std::vector<double> max_after(n, -std::numeric_limits<double>::infinity());
    for (std::size_t q = n - 1; q-- > 0;) max_after[q] = std::max(max_after[q + 1], f[q + 1]);

    for (std::size_t q = 1; q + 1 < n; ++q) {
        const std::size_t p = best_before[q];
        const double depth = f[p] - f[q];
        if (depth < threshold || max_after[q] - f[q] < 0.5 * threshold) continue;
        if (!rep.detected || depth > rep.dip_depth) {
            rep.detected = true;
            rep.dip_depth = depth;
            rep.peak = p;
            rep.trough = q;
            std::size_t r = q + 1;
            while (f[r] - f[q] < 0.5 * threshold) ++r;
            rep.recovery = r;
        }
    }
    return rep;
}

CorruptionReport detect_corruption(const std::vector<MetricsRow>& rows, double threshold) {
    if (rows.size() < 5) throw ContractError("detect_corruption: need at least 5 rows");
    std::vector<double> f;
    f.reserve(rows.size());
    for (const auto& r : rows) f.push_back(r.fidelity);
    CorruptionReport rep = find_dip(moving_average3(f), threshold);
    rep.peak_iteration = rows[rep.peak].iteration;
    rep.trough_iteration = rows[rep.trough].iteration;
    rep.recovery_iteration = rows[rep.recovery].iteration;
    return rep;
}

nlohmann::json to_json(const ProbeRecord& r) {
    return nlohmann::json{{"probe", r.kind}, {"params", r.params}, {"empirical", r.empirical}, {"analytic", r.analytic}};
}

ZeroProbeResult zero_probe(const NoisePredictor& model, const NoiseSchedule& s, int t_start, int label,
                           const NumArray& training, std::uint64_t metric_seed,
                           const std::optional<GaussianWorldModel>& wm, int steps) {
    const std::size_t d = model.dim();
    SamplerConfig cfg;
    cfg.steps = std::min(steps, t_start);
    cfg.mode = SamplerMode::DeterministicMean;
    ZeroProbeResult res;
    res.output = partial_denoise(model, s, NumArray::matrix(1, d), t_start, {label}, cfg);
    res.dist_zero = frobenius_norm(res.output);
    res.dist_anchor = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < training.rows(); ++r) {
        res.dist_anchor = std::min(res.dist_anchor, frobenius_norm(res.output - training.row_slice(r)));
    }
    res.fidelity = fidelity(res.output, training, metric_seed);

    res.record.kind = "zero";
    res.record.params = {{"t_start", t_start}, {"label", label}, {"steps", cfg.steps}};
    res.record.empirical = {{"output", values_of(res.output)},
                            {"dist_zero", res.dist_zero},
                            {"dist_anchor", res.dist_anchor},
                            {"fidelity", res.fidelity}};
    if (wm && wm->anchors.size() == 1) {
        res.analytic = scale_probe_prediction(*wm, 0.0, t_start);
        res.record.analytic = {{"output", values_of(*res.analytic)},
                               {"sigma1", wm->sigma1},
                               {"gap", frobenius_norm(*res.analytic - res.output)}};
    }
    return res;
}

std::vector<std::size_t> probe_region(std::size_t dim, std::size_t side, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0) throw ContractError("probe region fraction must lie in (0, 1]");
    std::vector<std::size_t> idx;
    if (side > 0 && side * side == dim) {
        // Square patch anchored at the top-left corner.
        const auto patch = std::max<std::size_t>(
            1, std::min(side, static_cast<std::size_t>(std::lround(static_cast<double>(side) * std::sqrt(fraction)))));
        for (std::size_t i = 0; i < patch; ++i)
            for (std::size_t j = 0; j < patch; ++j) idx.push_back(i * side + j);
    } else {
        const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(dim))));
        for (std::size_t i = 0; i < std::min(count, dim); ++i) idx.push_back(i);
    }
    return idx;
}

DeltaProbeResult delta_injection_probe(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& anchor,
                                       int label, const DeltaProbeConfig& cfg) {
    if (cfg.t < 1) throw ContractError("delta_injection_probe: t must be at least 1");
    const std::size_t d = anchor.size();
    const std::vector<std::size_t> region = probe_region(d, cfg.side, cfg.region_fraction);
    const double ab = s.ab(cfg.t);
    Rng rng(cfg.seed);
    const std::size_t n = std::max<std::size_t>(1, cfg.draws);

    NumArray clean = NumArray::matrix(n, d);
    NumArray injected = NumArray::matrix(n, d);
    double delta_energy = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            clean(r, j) = std::sqrt(ab) * anchor[j] + std::sqrt(1.0 - ab) * rng.normal();
            injected(r, j) = clean(r, j);
        }
        for (std::size_t j : region) {
            const double dj = cfg.magnitude * rng.normal();
            injected(r, j) += dj;
            delta_energy += dj * dj;
        }
    }
    const std::vector<int> labels(n, label);
    const NumArray x0_clean = predict_x0(model, s, clean, cfg.t, labels);
    const NumArray x0_inj = predict_x0(model, s, injected, cfg.t, labels);

    DeltaProbeResult res;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j : region) {
            const double diff = x0_inj(r, j) - x0_clean(r, j);
            res.residual_energy += diff * diff;
            res.baseline_region_error += (x0_clean(r, j) - anchor[j]) * (x0_clean(r, j) - anchor[j]);
            res.injected_region_error += (x0_inj(r, j) - anchor[j]) * (x0_inj(r, j) - anchor[j]);
        }
    }
    res.delta_energy = delta_energy;
    res.ratio = delta_energy > 0.0 ? res.residual_energy / delta_energy : 0.0;
    res.sigma1 = estimate_sigma1(model, s, anchor, cfg.t, 64, label, derive_seed(cfg.seed, {1}));
    const double k = amplification(res.sigma1, ab);
    res.analytic_k2 = k * k;

    res.record.kind = "delta_injection";
    res.record.params = {{"t", cfg.t},
                         {"region_fraction", cfg.region_fraction},
                         {"magnitude", cfg.magnitude},
                         {"draws", n},
                         {"seed", cfg.seed}};
    res.record.empirical = {{"ratio", res.ratio},
                            {"residual_energy", res.residual_energy},
                            {"delta_energy", res.delta_energy},
                            {"baseline_region_error", res.baseline_region_error},
                            {"injected_region_error", res.injected_region_error}};
    res.record.analytic = {{"sigma1", std::isinf(res.sigma1) ? nlohmann::json("inf") : nlohmann::json(res.sigma1)},
                           {"k2", res.analytic_k2}};
    return res;
}

std::vector<ScaleProbeEntry> scale_probe(const NoisePredictor& model, const NoiseSchedule& s,
                                         const std::vector<double>& ks, int t, const NumArray& anchor, int label,
                                         double sigma1, std::vector<ProbeRecord>* records) {
    if (t < 1) throw ContractError("scale_probe: t must be at least 1");
    const double ab = s.ab(t);
    const double amp = amplification(sigma1, ab);
    const double an = frobenius_norm(anchor);
    std::vector<ScaleProbeEntry> out;
    for (double k : ks) {
        const NumArray x_t = k * anchor;
        const NumArray x0 = predict_x0(model, s, x_t, t, {label});
        double dot = 0.0;
        for (std::size_t j = 0; j < anchor.size(); ++j) dot += x0[j] * anchor[j];
        const double xn = frobenius_norm(x0);
        ScaleProbeEntry e;
        e.k = k;
        e.cosine = xn > 0.0 && an > 0.0 ? dot / (xn * an) : 0.0;
        e.empirical_factor = an > 0.0 ? dot / (an * an) : 0.0;
        e.analytic_factor = 1.0 + amp * (k - std::sqrt(ab));
        out.push_back(e);
        if (records != nullptr) {
            ProbeRecord r;
            r.kind = "scale";
            r.params = {{"k", k}, {"t", t}, {"label", label}};
            r.empirical = {{"cosine", e.cosine}, {"factor", e.empirical_factor}, {"output", values_of(x0)}};
            r.analytic = {{"factor", e.analytic_factor}, {"sigma1", sigma1}};
            records->push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace bdlab
