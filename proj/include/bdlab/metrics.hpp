#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdlab/analytic.hpp"
#include "bdlab/diffusion.hpp"
#include "bdlab/tensor.hpp"

namespace bdlab {

struct MetricsRow {
    std::int64_t iteration = 0;
    double fidelity = 0.0;
    double diversity = 0.0;
    double quality = 1.0;
    double sigma1 = 0.0;
    double l_dm = 0.0;
    double l_r = 0.0;
};

inline constexpr std::size_t kProjectionDim = 32;

NumArray random_projection(std::size_t dim, std::uint64_t seed, std::size_t out = kProjectionDim);

// Mean over generated rows of the best cosine to any training row, measured
// after a fixed seeded projection to 32 dimensions.
double fidelity(const NumArray& generated, const NumArray& training, std::uint64_t metric_seed);
double diversity(const NumArray& generated);
// Rasters of side x side; side == 0 means point data and yields 1.0.
double laplacian_energy(const NumArray& rasters, std::size_t side);
double quality(const NumArray& generated, const NumArray& training, std::size_t side);

struct CorruptionReport {
    bool detected = false;
    std::size_t peak = 0, trough = 0, recovery = 0;  // row indices
    std::int64_t peak_iteration = 0, trough_iteration = 0, recovery_iteration = 0;
    double dip_depth = 0.0;
};

std::vector<double> moving_average3(const std::vector<double>& v);
// Triple search on an already smoothed series.
CorruptionReport find_dip(const std::vector<double>& f, double threshold = 0.05);
CorruptionReport detect_corruption(const std::vector<MetricsRow>& rows, double threshold = 0.05);

struct ProbeRecord {
    std::string kind;
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json empirical = nlohmann::json::object();
    nlohmann::json analytic = nlohmann::json::object();
};

nlohmann::json to_json(const ProbeRecord& r);

struct ZeroProbeResult {
    NumArray output;
    double dist_zero = 0.0;
    double dist_anchor = 0.0;
    double fidelity = 0.0;
    std::optional<NumArray> analytic;
    ProbeRecord record;
};

ZeroProbeResult zero_probe(const NoisePredictor& model, const NoiseSchedule& s, int t_start, int label,
                           const NumArray& training, std::uint64_t metric_seed,
                           const std::optional<GaussianWorldModel>& wm = std::nullopt, int steps = 100);

struct DeltaProbeConfig {
    int t = 100;
    double region_fraction = 0.25;
    double magnitude = 0.5;
    std::size_t side = 0;  // raster side; 0 treats the data as a flat vector
    std::size_t draws = 32;
    std::uint64_t seed = 0;
};

struct DeltaProbeResult {
    double ratio = 0.0;
    double residual_energy = 0.0;
    double delta_energy = 0.0;
    double baseline_region_error = 0.0;
    double injected_region_error = 0.0;
    double sigma1 = 0.0;
    double analytic_k2 = 0.0;
    ProbeRecord record;
};

std::vector<std::size_t> probe_region(std::size_t dim, std::size_t side, double fraction);

DeltaProbeResult delta_injection_probe(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& anchor,
                                       int label, const DeltaProbeConfig& cfg);

struct ScaleProbeEntry {
    double k = 0.0;
    double cosine = 0.0;
    double empirical_factor = 0.0;
    double analytic_factor = 0.0;
};

std::vector<ScaleProbeEntry> scale_probe(const NoisePredictor& model, const NoiseSchedule& s,
                                         const std::vector<double>& ks, int t, const NumArray& anchor, int label,
                                         double sigma1, std::vector<ProbeRecord>* records = nullptr);

}  // namespace bdlab
