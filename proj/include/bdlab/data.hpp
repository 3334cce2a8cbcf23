#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdlab/rng.hpp"
#include "bdlab/tensor.hpp"

namespace bdlab {

enum class DataKind { Mixture2D, Raster };

std::string to_string(DataKind k);
DataKind data_kind_from_string(const std::string& s);

struct DataSpec {
    DataKind kind = DataKind::Mixture2D;

    // 2-D mixture: `modes` Gaussians on a ring plus an optional one at the origin.
    int modes = 8;
    double radius = 1.0;
    double mode_sd = 0.05;
    bool center_mode = true;

    // Rasters: Gaussian bumps on a side x side grid, one bump centre per class.
    int side = 8;
    int raster_classes = 4;
    double amp_base = 1.0;
    double amp_jitter = 0.5;
    double width_base = 1.0;
    double width_jitter = 0.5;
    double centre_jitter = 0.5;

    // Few-shot subject: a tight cluster near class `subject_label`. For the
    // mixture it sits at the class mode rotated by `subject_angle` radians.
    int subject_label = 0;
    double subject_angle = 0.0;
    double subject_sd = 0.0;
    std::uint64_t pool_seed = 1;
    std::size_t pool_size = 16;
    std::vector<std::size_t> few_shot_indices = {0};

    std::size_t dim() const;
    std::size_t raster_side() const;  // 0 for point data
    int num_classes() const;
    // Conditioning table size: every class plus one null label.
    int num_labels() const { return num_classes() + 1; }
    int null_label() const { return num_classes(); }
};

struct LabeledBatch {
    NumArray x;
    std::vector<int> labels;
};

// Draws from the wide pretraining distribution.
LabeledBatch sample_pretrain(const DataSpec& spec, std::size_t n, Rng& rng);
// Draws from class `label` only.
NumArray sample_class(const DataSpec& spec, int label, std::size_t n, Rng& rng);
// Mode centre of a mixture class (1 x 2).
NumArray mixture_mode(const DataSpec& spec, int label);

NumArray subject_pool(const DataSpec& spec);
NumArray few_shot_set(const DataSpec& spec);

}  // namespace bdlab
