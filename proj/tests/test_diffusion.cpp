#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bdlab/diffusion.hpp"
#include "bdlab/errors.hpp"
#include "bdlab/model.hpp"
#include "bdlab/rng.hpp"
#include "grad_check.hpp"

using namespace bdlab;

namespace {

// Exact noise predictor for data concentrated on a single point.
struct PointPredictor : NoisePredictor {
    NumArray point;
    NoiseSchedule s;
    PointPredictor(NumArray p, NoiseSchedule sch) : point(std::move(p)), s(std::move(sch)) {}
    NumArray predict_eps(const NumArray& x_t, const std::vector<int>& t, const std::vector<int>&) const override {
        NumArray out(x_t.shape());
        for (std::size_t r = 0; r < x_t.rows(); ++r) {
            const double ab = s.ab(t[r]);
            for (std::size_t j = 0; j < x_t.cols(); ++j)
                out(r, j) = (x_t(r, j) - std::sqrt(ab) * point[j]) / std::sqrt(1.0 - ab);
        }
        return out;
    }
    std::size_t dim() const override { return point.size(); }
};

struct ZeroPredictor : NoisePredictor {
    std::size_t d;
    explicit ZeroPredictor(std::size_t dd) : d(dd) {}
    NumArray predict_eps(const NumArray& x_t, const std::vector<int>&, const std::vector<int>&) const override {
        return NumArray(x_t.shape(), 0.0);
    }
    std::size_t dim() const override { return d; }
};

struct NanPredictor : ZeroPredictor {
    using ZeroPredictor::ZeroPredictor;
    NumArray predict_eps(const NumArray& x_t, const std::vector<int>&, const std::vector<int>&) const override {
        return NumArray(x_t.shape(), std::nan(""));
    }
};

}  // namespace

TEST_CASE("linear schedule endpoints") {
    const NoiseSchedule s = make_schedule(1000, ScheduleKind::Linear);
    CHECK(s.ab(0) == 1.0);
    CHECK(s.ab(1) == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(s.beta[1000] == doctest::Approx(0.02));
    CHECK(s.ab(1000) < 0.01);
    for (int t = 1; t <= 1000; ++t) CHECK(s.ab(t) < s.ab(t - 1));
}

TEST_CASE("scaled-linear schedule endpoints") {
    const NoiseSchedule s = make_schedule(1000, ScheduleKind::ScaledLinear);
    CHECK(s.beta[1] == doctest::Approx(8.5e-4).epsilon(1e-10));
    CHECK(s.beta[1000] == doctest::Approx(1.2e-2).epsilon(1e-10));
    CHECK(s.ab(1000) < s.ab(1));
}

TEST_CASE("schedule needs at least two steps and a known kind") {
    CHECK_THROWS_AS(make_schedule(1, ScheduleKind::Linear), ContractError);
    CHECK(schedule_kind_from_string("scaled-linear") == ScheduleKind::ScaledLinear);
    CHECK_THROWS_AS(schedule_kind_from_string("cosine"), ConfigError);
}

TEST_CASE("forward_diffuse hand values") {
    const NumArray x = forward_diffuse(NumArray::row({1, 0}), 0.64, NumArray::row({0, 1}));
    CHECK(x[0] == doctest::Approx(0.8));
    CHECK(x[1] == doctest::Approx(0.6));
    const NoiseSchedule s = make_schedule(100, ScheduleKind::Linear);
    const NumArray x0 = NumArray::row({0.3, -2.0});
    CHECK(forward_diffuse(x0, {0}, NumArray::row({5, 5}), s).bit_equal(x0));
    CHECK_THROWS_AS(forward_diffuse(x0, 0.5, NumArray::row({1, 2, 3})), DimensionError);
}

TEST_CASE("diffusion_loss on trivial predictors") {
    const NumArray eps = NumArray::from_rows({{1, -1}, {-1, 1}});
    CHECK(diffusion_loss(eps, eps) == 0.0);
    CHECK(diffusion_loss(NumArray::matrix(2, 2), eps) == doctest::Approx(1.0));
    const NoiseSchedule s = make_schedule(100, ScheduleKind::Linear);
    CHECK_THROWS_AS(diffusion_loss(NanPredictor(2), s, eps, {5, 5}, eps, {0, 0}), NumericError);
}

TEST_CASE("predict_x0 inverts forward diffusion") {
    const NoiseSchedule s = make_schedule(1000, ScheduleKind::Linear);
    const NumArray x0 = NumArray::row({0.7, -0.2, 1.5});
    PointPredictor perfect(x0, s);
    Rng rng(1);
    for (int t : {1, 10, 500, 999}) {
        const NumArray x_t = forward_diffuse(x0, s.ab(t), rng.normal_array(1, 3));
        CHECK(max_abs_diff(predict_x0(perfect, s, x_t, t, {0}), x0) < 1e-9);
    }
    const NumArray x_t = NumArray::row({1, 2, 3});
    CHECK(max_abs_diff(predict_x0(ZeroPredictor(3), s, x_t, 50, {0}), (1.0 / std::sqrt(s.ab(50))) * x_t) < 1e-12);
    CHECK_THROWS_AS(predict_x0(perfect, s, x_t, 0, {0}), ContractError);
}

TEST_CASE("respaced timesteps are strictly decreasing and positive") {
    const auto ts = respaced_timesteps(1000, 100);
    CHECK(ts.size() == 100);
    CHECK(ts.front() == 1000);
    CHECK(ts.back() >= 1);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
    CHECK(respaced_timesteps(5, 5).size() == 5);
    CHECK_THROWS_AS(respaced_timesteps(5, 100), ContractError);
}

TEST_CASE("sampling is deterministic and independent of the worker count") {
    const NoiseSchedule s = make_schedule(200, ScheduleKind::Linear);
    ModelArch arch;
    arch.dim = 2;
    arch.width = 16;
    arch.time_dim = 8;
    arch.num_labels = 3;
    const DenoiserModel model(arch, s, 5);
    SamplerConfig cfg;
    cfg.steps = 20;
    cfg.seed = 42;
    const std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0};
    const NumArray a = ancestral_sample(model, s, cfg, labels);
    const NumArray b = ancestral_sample(model, s, cfg, labels);
    CHECK(a.bit_equal(b));
    cfg.workers = 3;
    CHECK(ancestral_sample(model, s, cfg, labels).bit_equal(a));
    cfg.seed = 43;
    CHECK_FALSE(ancestral_sample(model, s, cfg, labels).bit_equal(a));
}

TEST_CASE("deterministic-mean mode ignores the sampler seed") {
    const NoiseSchedule s = make_schedule(200, ScheduleKind::Linear);
    PointPredictor model(NumArray::row({0.5, 0.5}), s);
    Rng rng(9);
    const NumArray x_T = rng.normal_array(4, 2);
    SamplerConfig cfg;
    cfg.steps = 30;
    cfg.mode = SamplerMode::DeterministicMean;
    cfg.seed = 1;
    const NumArray a = ancestral_sample_from(model, s, cfg, x_T, {0, 0, 0, 0});
    cfg.seed = 2;
    CHECK(ancestral_sample_from(model, s, cfg, x_T, {0, 0, 0, 0}).bit_equal(a));
}

TEST_CASE("perfect point model samples land on the point") {
    const NoiseSchedule s = make_schedule(1000, ScheduleKind::Linear);
    const NumArray p = NumArray::row({0.25, -0.75});
    PointPredictor model(p, s);
    SamplerConfig cfg;
    cfg.steps = 50;
    const NumArray out = ancestral_sample(model, s, cfg, std::vector<int>(8, 0));
    for (std::size_t r = 0; r < out.rows(); ++r) CHECK(max_abs_diff(out.row_slice(r), p) < 1e-6);
}

TEST_CASE("single-step partial denoise equals predict_x0") {
    const NoiseSchedule s = make_schedule(1000, ScheduleKind::Linear);
    const NumArray p = NumArray::row({1.0, 2.0});
    PointPredictor model(p, s);
    const NumArray x_t = NumArray::row({0.3, 0.1});
    SamplerConfig cfg;
    const NumArray out = partial_denoise(model, s, x_t, 1, {0}, cfg);
    CHECK(max_abs_diff(out, predict_x0(model, s, x_t, 1, {0})) < 1e-9);
}

TEST_CASE("sampler reports non-finite output with its timestep") {
    const NoiseSchedule s = make_schedule(100, ScheduleKind::Linear);
    SamplerConfig cfg;
    cfg.steps = 10;
    try {
        ancestral_sample(NanPredictor(2), s, cfg, {0});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.step() == 100);
    }
}

TEST_CASE("denoiser loss gradient matches finite differences") {
    const NoiseSchedule s = make_schedule(100, ScheduleKind::Linear);
    ModelArch arch;
    arch.dim = 2;
    arch.width = 6;
    arch.time_dim = 4;
    arch.num_labels = 2;
    DenoiserModel model(arch, s, 3);
    Rng rng(4);
    const NumArray x0 = rng.normal_array(3, 2), eps = rng.normal_array(3, 2);
    const std::vector<int> ts = {3, 40, 90}, labels = {0, 1, 0};
    const NumArray x_t = forward_diffuse(x0, ts, eps, s);

    // Differentiate with respect to the mid_down weight (layer index 3).
    const NumArray& w = model.layer("mid_down").slot("weight").value;
    auto f = [&](Tape& t, const std::vector<Var>& v) {
        Binder binder(t, WeightMode::Mean, false);
        BoundModel bound = model.bind(binder);
        bound.layers[3][0] = v[0];
        return diffusion_loss(model.apply(bound, t.constant(x_t), ts, labels), eps);
    };
    CHECK(gradcheck::worst_error(f, {w}) < 1e-4);
}
