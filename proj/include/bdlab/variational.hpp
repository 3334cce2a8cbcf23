#pragma once

#include "bdlab/rng.hpp"
#include "bdlab/tensor.hpp"

namespace bdlab {

// Mean-field Gaussian posterior over one weight tensor, anchored to the
// pretrained value through a Gaussian prior N(prior_mean, prior_sigma^2).
struct VariationalParameter {
    NumArray mu;
    NumArray rho;         // sigma_theta = softplus(rho)
    NumArray prior_mean;  // frozen copy of the pretrained tensor
    double prior_sigma = 0.01;

    NumArray sigma() const;
    std::size_t size() const { return mu.size(); }
};

struct PosteriorSample {
    NumArray theta;
    NumArray eps_used;
};

VariationalParameter init_variational(const NumArray& theta0, double sigma_init, double prior_sigma);

PosteriorSample sample_param(const VariationalParameter& p, Rng& rng);
PosteriorSample sample_param(const VariationalParameter& p, const NumArray& eps);

// Closed-form KL(N(mu, sigma_theta^2) || N(prior_mean, prior_sigma^2)) summed
// over elements.
double kl_to_prior(const VariationalParameter& p);
// Differentiable version with mu and rho bound on the tape.
Var kl_to_prior(Var mu, Var rho, const VariationalParameter& p);

double combined_loss(double l_dm, double l_r, double lambda);

const NumArray& mean_mode(const VariationalParameter& p);

}  // namespace bdlab
