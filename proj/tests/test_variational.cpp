#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"
#include "bdlab/variational.hpp"
#include "grad_check.hpp"

using namespace bdlab;

namespace {

VariationalParameter scalar_param(double mu, double sigma_theta, double theta0, double sigma) {
    VariationalParameter p = init_variational(NumArray::scalar(theta0), sigma_theta, sigma);
    p.mu = NumArray::scalar(mu);
    return p;
}

}  // namespace

TEST_CASE("init_variational stores the prior snapshot") {
    Rng rng(3);
    const NumArray theta0 = rng.normal_array(4, 5);
    const VariationalParameter p = init_variational(theta0, 0.01, 0.01);
    CHECK(p.mu.bit_equal(theta0));
    CHECK(p.prior_mean.bit_equal(theta0));
    const NumArray s = p.sigma();
    for (double v : s.values()) CHECK(std::abs(v - 0.01) < 1e-12);
    CHECK(kl_to_prior(p) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("init_variational rejects non-positive scales") {
    const NumArray t = NumArray::matrix(2, 2);
    CHECK_THROWS_AS(init_variational(t, 0.0, 0.01), ContractError);
    CHECK_THROWS_AS(init_variational(t, 0.01, -1.0), ContractError);
}

TEST_CASE("closed form KL hand values") {
    CHECK(kl_to_prior(scalar_param(0.01, 0.01, 0.0, 0.01)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_to_prior(scalar_param(0.0, 0.005, 0.0, 0.01)) ==
          doctest::Approx(std::log(2.0) + 0.125 - 0.5).epsilon(1e-12));
    CHECK(kl_to_prior(scalar_param(0.0, 0.005, 0.0, 0.01)) == doctest::Approx(0.3181).epsilon(1e-4));
}

TEST_CASE("KL is non-negative and sums over elements") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        VariationalParameter p = init_variational(rng.normal_array(2, 3), 0.02 + rng.uniform(), 0.05 + rng.uniform());
        p.mu = p.mu + 0.3 * rng.normal_array(2, 3);
        const double total = kl_to_prior(p);
        CHECK(total >= 0.0);
        double parts = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            parts += kl_to_prior(scalar_param(p.mu[j], p.sigma()[j], p.prior_mean[j], p.prior_sigma));
        }
        CHECK(total == doctest::Approx(parts).epsilon(1e-10));
    }
}

TEST_CASE("taped KL matches the closed form and its gradient") {
    Rng rng(7);
    VariationalParameter p = init_variational(rng.normal_array(3, 2), 0.03, 0.02);
    p.mu = p.mu + 0.05 * rng.normal_array(3, 2);
    Tape t;
    Var mu = t.leaf(p.mu), rho = t.leaf(p.rho);
    Var kl = kl_to_prior(mu, rho, p);
    CHECK(kl.value().item() == doctest::Approx(kl_to_prior(p)).epsilon(1e-12));

    auto f = [&p](Tape&, const std::vector<Var>& v) { return kl_to_prior(v[0], v[1], p); };
    CHECK(gradcheck::worst_error(f, {p.mu, p.rho}, 1e-7) < 1e-5);
}

TEST_CASE("sample_param reproduces mu + sigma * eps") {
    Rng rng(11);
    const VariationalParameter p = init_variational(rng.normal_array(2, 2), 0.1, 0.1);
    const NumArray eps = rng.normal_array(2, 2);
    const PosteriorSample s = sample_param(p, eps);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s.theta[i] == doctest::Approx(p.mu[i] + 0.1 * eps[i]).epsilon(1e-12));
    CHECK(s.eps_used.bit_equal(eps));
    CHECK_THROWS_AS(sample_param(p, NumArray::matrix(1, 4)), DimensionError);
}

TEST_CASE("tiny sigma collapses the sample onto mu") {
    Rng rng(13);
    const VariationalParameter p = init_variational(rng.normal_array(3, 3), 1e-12, 0.01);
    const PosteriorSample s = sample_param(p, rng);
    CHECK(max_abs_diff(s.theta, p.mu) < 1e-10);
}

TEST_CASE("Monte-Carlo sample mean stays within three standard errors") {
    VariationalParameter p = init_variational(NumArray::row({0.5, -1.0, 2.0}), 0.2, 0.2);
    Rng rng(17);
    const int n = 100000;
    NumArray acc = NumArray::matrix(1, 3);
    for (int i = 0; i < n; ++i) acc = acc + sample_param(p, rng).theta;
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(acc[j] / n - p.mu[j]) < 3.0 * 0.2 / std::sqrt(double(n)));
}

TEST_CASE("reparameterized gradient matches finite differences with shared draws") {
    Rng rng(19);
    const VariationalParameter p = init_variational(rng.normal_array(2, 3), 0.3, 0.3);
    std::vector<NumArray> eps;
    for (int k = 0; k < 8; ++k) eps.push_back(rng.normal_array(2, 3));
    auto f = [&eps](Tape& t, const std::vector<Var>& v) {
        Var total = t.constant(NumArray::scalar(0.0));
        for (const auto& e : eps) total = add(total, sum(silu(square(reparameterize(v[0], v[1], e)))));
        return scale(total, 1.0 / static_cast<double>(eps.size()));
    };
    CHECK(gradcheck::worst_error(f, {p.mu, p.rho}) < 1e-4);
}

TEST_CASE("combined_loss arithmetic") {
    CHECK(combined_loss(1.0, 2.0, 0.1) == doctest::Approx(1.2));
    CHECK(combined_loss(0.7, 123.0, 0.0) == 0.7);
    CHECK_THROWS_AS(combined_loss(1.0, 1.0, -0.1), ContractError);
}

TEST_CASE("mean_mode returns mu without consuming randomness") {
    Rng rng(23);
    const VariationalParameter p = init_variational(rng.normal_array(2, 2), 0.5, 0.5);
    const NumArray& a = mean_mode(p);
    const NumArray& b = mean_mode(p);
    CHECK(a.bit_equal(b));
    CHECK(a.bit_equal(p.prior_mean));
}
