#include "bdlab/data.hpp"

#include <cmath>
#include <numbers>

#include "bdlab/errors.hpp"

namespace bdlab {

std::string to_string(DataKind k) { return k == DataKind::Mixture2D ? "mixture2d" : "raster"; }

DataKind data_kind_from_string(const std::string& s) {
    if (s == "mixture2d") return DataKind::Mixture2D;
    if (s == "raster") return DataKind::Raster;
    throw ConfigError("unknown data kind '" + s + "'");
}

std::size_t DataSpec::dim() const {
    return kind == DataKind::Mixture2D ? 2 : static_cast<std::size_t>(side * side);
}

std::size_t DataSpec::raster_side() const {
    return kind == DataKind::Raster ? static_cast<std::size_t>(side) : 0;
}

int DataSpec::num_classes() const {
    return kind == DataKind::Mixture2D ? modes + (center_mode ? 1 : 0) : raster_classes;
}

namespace {

void check_label(const DataSpec& spec, int label) {
    if (label < 0 || label >= spec.num_classes()) {
        throw ConfigError("class label " + std::to_string(label) + " out of range");
    }
}

// Bump centres spread over a coarse grid inside the raster.
std::pair<double, double> raster_centre(const DataSpec& spec, int label) {
    const int per_row = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.raster_classes))));
    const int gi = label / per_row, gj = label % per_row;
    const double step = static_cast<double>(spec.side) / static_cast<double>(per_row);
    return {step * (gi + 0.5) - 0.5, step * (gj + 0.5) - 0.5};
}

void draw_raster(const DataSpec& spec, int label, Rng& rng, double* out) {
    auto [ci, cj] = raster_centre(spec, label);
    ci += spec.centre_jitter * (2.0 * rng.uniform() - 1.0);
    cj += spec.centre_jitter * (2.0 * rng.uniform() - 1.0);
    const double amp = spec.amp_base + spec.amp_jitter * rng.uniform();
    const double w = spec.width_base + spec.width_jitter * rng.uniform();
    for (int i = 0; i < spec.side; ++i) {
        for (int j = 0; j < spec.side; ++j) {
            const double r2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
            out[i * spec.side + j] = amp * std::exp(-r2 / (2.0 * w * w));
        }
    }
}

}  // namespace

NumArray mixture_mode(const DataSpec& spec, int label) {
    check_label(spec, label);
    if (label == spec.modes) return NumArray::row({0.0, 0.0});
    const double a = 2.0 * std::numbers::pi * label / spec.modes;
    return NumArray::row({spec.radius * std::cos(a), spec.radius * std::sin(a)});
}

NumArray sample_class(const DataSpec& spec, int label, std::size_t n, Rng& rng) {
    check_label(spec, label);
    NumArray out = NumArray::matrix(n, spec.dim());
    if (spec.kind == DataKind::Mixture2D) {
        const NumArray m = mixture_mode(spec, label);
        for (std::size_t r = 0; r < n; ++r) {
            out(r, 0) = m[0] + spec.mode_sd * rng.normal();
            out(r, 1) = m[1] + spec.mode_sd * rng.normal();
        }
    } else {
        for (std::size_t r = 0; r < n; ++r) draw_raster(spec, label, rng, out.data() + r * spec.dim());
    }
    return out;
}

LabeledBatch sample_pretrain(const DataSpec& spec, std::size_t n, Rng& rng) {
    LabeledBatch b{NumArray::matrix(n, spec.dim()), std::vector<int>(n)};
    const int k = spec.num_classes();
    for (std::size_t r = 0; r < n; ++r) {
        const int label = static_cast<int>(rng.uniform_int(0, k - 1));
        b.labels[r] = label;
        const NumArray row = sample_class(spec, label, 1, rng);
        std::copy(row.values().begin(), row.values().end(), b.x.data() + r * spec.dim());
    }
    return b;
}

NumArray subject_pool(const DataSpec& spec) {
    check_label(spec, spec.subject_label);
    if (spec.pool_size == 0) throw ConfigError("subject pool is empty");
    Rng rng(spec.pool_seed);
    if (spec.kind == DataKind::Raster) return sample_class(spec, spec.subject_label, spec.pool_size, rng);
    const NumArray m = mixture_mode(spec, spec.subject_label);
    const double c = std::cos(spec.subject_angle), s = std::sin(spec.subject_angle);
    const double cx = c * m[0] - s * m[1], cy = s * m[0] + c * m[1];
    NumArray out = NumArray::matrix(spec.pool_size, 2);
    for (std::size_t r = 0; r < spec.pool_size; ++r) {
        out(r, 0) = cx + spec.subject_sd * rng.normal();
        out(r, 1) = cy + spec.subject_sd * rng.normal();
    }
    return out;
}

NumArray few_shot_set(const DataSpec& spec) {
    if (spec.few_shot_indices.empty() || spec.few_shot_indices.size() > 16) {
        throw ConfigError("few-shot set must hold between 1 and 16 samples");
    }
    const NumArray pool = subject_pool(spec);
    NumArray out = NumArray::matrix(spec.few_shot_indices.size(), pool.cols());
    for (std::size_t i = 0; i < spec.few_shot_indices.size(); ++i) {
        const std::size_t idx = spec.few_shot_indices[i];
        if (idx >= pool.rows()) throw ConfigError("few-shot index " + std::to_string(idx) + " exceeds pool size");
        for (std::size_t j = 0; j < pool.cols(); ++j) out(i, j) = pool(idx, j);
    }
    return out;
}

}  // namespace bdlab
