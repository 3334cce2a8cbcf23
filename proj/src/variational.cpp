#include "bdlab/variational.hpp"

#include <cmath>

#include "bdlab/errors.hpp"

namespace bdlab {

NumArray VariationalParameter::sigma() const {
    NumArray out(rho.shape());
    for (std::size_t i = 0; i < rho.size(); ++i) out[i] = softplus(rho[i]);
    return out;
}

VariationalParameter init_variational(const NumArray& theta0, double sigma_init, double prior_sigma) {
    if (!(sigma_init > 0.0) || !std::isfinite(sigma_init)) {
        throw ContractError("init_variational: sigma_init must be positive");
    }
    if (!(prior_sigma > 0.0) || !std::isfinite(prior_sigma)) {
        throw ContractError("init_variational: prior_sigma must be positive");
    }
    VariationalParameter p;
    p.mu = theta0;
    p.prior_mean = theta0;
    p.rho = NumArray(theta0.shape(), softplus_inverse(sigma_init));
    p.prior_sigma = prior_sigma;
    return p;
}

PosteriorSample sample_param(const VariationalParameter& p, const NumArray& eps) {
    if (!eps.same_shape(p.mu)) {
        throw DimensionError("sample_param: eps shape " + eps.shape_string() + " vs " +
                             p.mu.shape_string());
    }
    PosteriorSample s{NumArray(p.mu.shape()), eps};
    for (std::size_t i = 0; i < p.mu.size(); ++i) s.theta[i] = p.mu[i] + softplus(p.rho[i]) * eps[i];
    return s;
}

PosteriorSample sample_param(const VariationalParameter& p, Rng& rng) {
    NumArray eps(p.mu.shape());
    for (double& v : eps.values()) v = rng.normal();
    return sample_param(p, eps);
}

double kl_to_prior(const VariationalParameter& p) {
    const double s2 = p.prior_sigma * p.prior_sigma;
    double kl = 0.0;
    for (std::size_t i = 0; i < p.mu.size(); ++i) {
        const double st = softplus(p.rho[i]);
        const double dm = p.mu[i] - p.prior_mean[i];
        kl += std::log(p.prior_sigma / st) + (st * st + dm * dm) / (2.0 * s2) - 0.5;
    }
    return kl;
}

Var kl_to_prior(Var mu, Var rho, const VariationalParameter& p) {
    Tape& t = *mu.tape();
    const double n = static_cast<double>(p.mu.size());
    const double inv_2s2 = 1.0 / (2.0 * p.prior_sigma * p.prior_sigma);
    Var st = softplus(rho);
    Var dm = sub(mu, t.constant(p.prior_mean));
    Var quad = scale(add(square(st), square(dm)), inv_2s2);
    Var per = sub(quad, log(st));
    return add_scalar(sum(per), n * (std::log(p.prior_sigma) - 0.5));
}

double combined_loss(double l_dm, double l_r, double lambda) {
    if (lambda < 0.0 || !std::isfinite(lambda)) throw ContractError("combined_loss: lambda must be >= 0");
    return l_dm + lambda * l_r;
}

const NumArray& mean_mode(const VariationalParameter& p) { return p.mu; }

}  // namespace bdlab
