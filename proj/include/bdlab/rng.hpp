#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "bdlab/tensor.hpp"

namespace bdlab {

// Mixes a seed with a list of stream coordinates (layer index, step, ...) into
// an independent 64-bit seed. splitmix64 finaliser.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    // Inclusive bounds.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    NumArray normal_array(std::size_t rows, std::size_t cols);
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace bdlab
