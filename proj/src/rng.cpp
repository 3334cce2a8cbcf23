#include "bdlab/rng.hpp"

namespace bdlab {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
    std::uint64_t h = splitmix(seed);
    for (std::uint64_t c : coords) h = splitmix(h ^ splitmix(c + 0x632BE59BD9B4E019ULL));
    return h;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uniform_int_distribution<std::int64_t> d(lo, hi);
    return d(engine_);
}

NumArray Rng::normal_array(std::size_t rows, std::size_t cols) {
    NumArray out = NumArray::matrix(rows, cols);
    for (double& v : out.values()) v = normal();
    return out;
}

}  // namespace bdlab
