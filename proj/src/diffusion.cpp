#include "bdlab/diffusion.hpp"

#include <cmath>
#include <thread>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::Linear ? "linear" : "scaled-linear";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "scaled-linear" || s == "scaled_linear") return ScheduleKind::ScaledLinear;
    throw ConfigError("unknown schedule kind '" + s + "'");
}

double NoiseSchedule::ab(int t) const {
    if (t < 0 || t > T) throw ContractError("timestep " + std::to_string(t) + " outside [0, T]");
    return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 2) throw ContractError("make_schedule: T must be at least 2");
    NoiseSchedule s;
    s.kind = kind;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    const double lo = std::sqrt(8.5e-4), hi = std::sqrt(1.2e-2);
    for (int t = 1; t <= T; ++t) {
        const double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
        double b = 0.0;
        if (kind == ScheduleKind::Linear) {
            b = 1e-4 + (2e-2 - 1e-4) * frac;
        } else {
            const double r = lo + (hi - lo) * frac;
            b = r * r;
        }
        s.beta[static_cast<std::size_t>(t)] = b;
        s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - b);
    }
    return s;
}

NumArray forward_diffuse(const NumArray& x0, double alpha_bar, const NumArray& eps) {
    if (!x0.same_shape(eps)) {
        throw DimensionError("forward_diffuse: x0 " + x0.shape_string() + " vs eps " + eps.shape_string());
    }
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    NumArray out(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

NumArray forward_diffuse(const NumArray& x0, const std::vector<int>& t, const NumArray& eps,
                         const NoiseSchedule& s) {
    if (!x0.same_shape(eps)) {
        throw DimensionError("forward_diffuse: x0 " + x0.shape_string() + " vs eps " + eps.shape_string());
    }
    if (t.size() != x0.rows()) throw DimensionError("forward_diffuse: one timestep per row required");
    NumArray out(x0.shape());
    const std::size_t c = x0.cols();
    for (std::size_t r = 0; r < x0.rows(); ++r) {
        const double ab = s.ab(t[r]);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = a * x0[r * c + j] + b * eps[r * c + j];
    }
    return out;
}

double diffusion_loss(const NumArray& eps_hat, const NumArray& eps) {
    if (!eps_hat.same_shape(eps)) throw DimensionError("diffusion_loss: shape mismatch");
    if (!eps_hat.all_finite()) throw NumericError("diffusion_loss: non-finite model output");
    double s = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps_hat[i] - eps[i];
        s += d * d;
    }
    return s / static_cast<double>(eps.size());
}

Var diffusion_loss(Var eps_hat, const NumArray& eps) {
    if (!eps_hat.value().same_shape(eps)) throw DimensionError("diffusion_loss: shape mismatch");
    if (!eps_hat.value().all_finite()) throw NumericError("diffusion_loss: non-finite model output");
    return mean(square(sub(eps_hat, eps_hat.tape()->constant(eps))));
}

double diffusion_loss(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& x0,
                      const std::vector<int>& t, const NumArray& eps, const std::vector<int>& labels) {
    const NumArray x_t = forward_diffuse(x0, t, eps, s);
    return diffusion_loss(model.predict_eps(x_t, t, labels), eps);
}

NumArray predict_x0(const NumArray& x_t, const NumArray& eps_hat, double alpha_bar) {
    if (!x_t.same_shape(eps_hat)) throw DimensionError("predict_x0: shape mismatch");
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    NumArray out(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) / a;
    return out;
}

NumArray predict_x0(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& x_t, int t,
                    const std::vector<int>& labels) {
    if (t < 1) throw ContractError("predict_x0: t must be at least 1");
    const std::vector<int> ts(x_t.rows(), t);
    return predict_x0(x_t, model.predict_eps(x_t, ts, labels), s.ab(t));
}

std::vector<int> respaced_timesteps(int t_start, int steps) {
    if (steps < 1 || steps > t_start) {
        throw ContractError("sampler: step count " + std::to_string(steps) + " must lie in [1, " +
                            std::to_string(t_start) + "]");
    }
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        ts.push_back(static_cast<int>(std::lround(static_cast<double>(t_start) * (steps - i) / steps)));
    }
    return ts;
}

namespace {

NumArray slice_rows(const NumArray& a, std::size_t r0, std::size_t r1) {
    const std::size_t c = a.cols();
    return NumArray({r1 - r0, c}, std::vector<double>(a.values().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                                                      a.values().begin() + static_cast<std::ptrdiff_t>(r1 * c)));
}

// Reverse iteration over rows [r0, r1). Row r draws its noise from its own
// stream so the result does not depend on how rows are grouped.
NumArray run_reverse(const NoisePredictor& model, const NoiseSchedule& s, const SamplerConfig& cfg,
                     NumArray x, const std::vector<int>& labels, const std::vector<int>& ts,
                     std::vector<Rng>& streams) {
    const std::size_t n = x.rows(), d = x.cols();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int sprev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double ab_t = s.ab(t), ab_s = s.ab(sprev);
        const std::vector<int> tv(n, t);
        const NumArray eps_hat = model.predict_eps(x, tv, labels);
        if (!eps_hat.all_finite()) throw NumericError("sampler: non-finite model output at step " + std::to_string(t), t);
        const NumArray x0 = predict_x0(x, eps_hat, ab_t);
        const double ratio = ab_t / ab_s;
        const double c0 = std::sqrt(ab_s) * (1.0 - ratio) / (1.0 - ab_t);
        const double ct = std::sqrt(ratio) * (1.0 - ab_s) / (1.0 - ab_t);
        const double var = (1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ratio);
        const double sd = std::sqrt(std::max(var, 0.0));
        const bool noisy = cfg.mode == SamplerMode::Ancestral && sprev > 0;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                double v = c0 * x0[r * d + j] + ct * x[r * d + j];
                if (noisy) v += sd * streams[r].normal();
                x[r * d + j] = v;
            }
        }
        if (!x.all_finite()) throw NumericError("sampler: non-finite state at step " + std::to_string(t), t);
    }
    return x;
}

NumArray fan_out(const NoisePredictor& model, const NoiseSchedule& s, const SamplerConfig& cfg,
                 const NumArray* x_init, std::size_t n, const std::vector<int>& labels,
                 const std::vector<int>& ts) {
    if (labels.size() != n) throw DimensionError("sampler: one label per trajectory required");
    const std::size_t d = model.dim();
    std::vector<Rng> streams;
    streams.reserve(n);
    for (std::size_t r = 0; r < n; ++r) streams.emplace_back(derive_seed(cfg.seed, {static_cast<std::uint64_t>(r)}));

    NumArray x_T = NumArray::matrix(n, d);
    if (x_init != nullptr) {
        if (x_init->rows() != n || x_init->cols() != d) throw DimensionError("sampler: x_T shape mismatch");
        x_T = *x_init;
    } else {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) x_T(r, j) = streams[r].normal();
    }

    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.workers, 1)), n));
    if (workers == 1) return run_reverse(model, s, cfg, std::move(x_T), labels, ts, streams);

    std::vector<NumArray> parts(workers);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t r0 = std::min(n, w * chunk), r1 = std::min(n, r0 + chunk);
        pool.emplace_back([&, w, r0, r1] {
            try {
                if (r0 == r1) return;
                std::vector<Rng> local(streams.begin() + static_cast<std::ptrdiff_t>(r0),
                                       streams.begin() + static_cast<std::ptrdiff_t>(r1));
                std::vector<int> lab(labels.begin() + static_cast<std::ptrdiff_t>(r0),
                                     labels.begin() + static_cast<std::ptrdiff_t>(r1));
                parts[w] = run_reverse(model, s, cfg, slice_rows(x_T, r0, r1), lab, ts, local);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    NumArray out = NumArray::matrix(n, d);
    std::size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(at));
        at += p.size();
    }
    return out;
}

}  // namespace

NumArray ancestral_sample(const NoisePredictor& model, const NoiseSchedule& s, const SamplerConfig& cfg,
                          const std::vector<int>& labels) {
    if (cfg.steps > s.T) throw ContractError("sampler: step count exceeds T");
    return fan_out(model, s, cfg, nullptr, labels.size(), labels, respaced_timesteps(s.T, cfg.steps));
}

NumArray ancestral_sample_from(const NoisePredictor& model, const NoiseSchedule& s, const SamplerConfig& cfg,
                               const NumArray& x_T, const std::vector<int>& labels) {
    if (cfg.steps > s.T) throw ContractError("sampler: step count exceeds T");
    return fan_out(model, s, cfg, &x_T, x_T.rows(), labels, respaced_timesteps(s.T, cfg.steps));
}

NumArray partial_denoise(const NoisePredictor& model, const NoiseSchedule& s, const NumArray& x_t,
                         int t_start, const std::vector<int>& labels, const SamplerConfig& cfg) {
    if (t_start < 1 || t_start > s.T) throw ContractError("partial_denoise: t_start outside [1, T]");
    const int steps = std::min(cfg.steps, t_start);
    return fan_out(model, s, cfg, &x_t, x_t.rows(), labels, respaced_timesteps(t_start, steps));
}

}  // namespace bdlab
