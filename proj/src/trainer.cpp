#include "bdlab/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "bdlab/checkpoint.hpp"
#include "bdlab/errors.hpp"

namespace bdlab {

void Adam::step(const std::vector<NumArray*>& params, const std::vector<const NumArray*>& grads) {
    if (params.size() != grads.size()) throw ContractError("Adam: parameter/gradient count mismatch");
    if (m_.empty()) {
        for (const NumArray* p : params) {
            m_.emplace_back(p->shape(), 0.0);
            v_.emplace_back(p->shape(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        NumArray& p = *params[k];
        const NumArray& g = *grads[k];
        NumArray& m = m_[k];
        NumArray& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

namespace {

void apply_gradients(Adam& adam, const Binder& binder) {
    std::vector<NumArray*> params;
    std::vector<const NumArray*> grads;
    for (const auto& t : binder.tracked()) {
        params.push_back(t.target);
        grads.push_back(&t.var.grad());
    }
    adam.step(params, grads);
}

void check_loss(double v, std::int64_t iteration) {
    if (!std::isfinite(v) || v > 1e6) {
        throw TrainingDiverged("training diverged at iteration " + std::to_string(iteration) + " (loss " +
                                   std::to_string(v) + ")",
                               iteration);
    }
}

Var batch_loss(const DenoiserModel& model, const BoundModel& bound, Tape& tape, const NumArray& x0,
               const std::vector<int>& ts, const std::vector<int>& labels, const NumArray& eps,
               std::int64_t iteration) {
    const NumArray x_t = forward_diffuse(x0, ts, eps, model.schedule());
    Var pred = model.apply(bound, tape.constant(x_t), ts, labels);
    if (!pred.value().all_finite()) {
        throw TrainingDiverged("non-finite model output at iteration " + std::to_string(iteration), iteration);
    }
    return diffusion_loss(pred, eps);
}

// Draws `batch` rows of `pool` with timesteps and noise from `rng`.
void draw_batch(const NumArray& pool, std::size_t batch, int T, Rng& rng, NumArray& x0, std::vector<int>& ts,
                NumArray& eps) {
    const std::size_t d = pool.cols();
    x0 = NumArray::matrix(batch, d);
    eps = NumArray::matrix(batch, d);
    ts.assign(batch, 0);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.rows()) - 1));
        for (std::size_t j = 0; j < d; ++j) x0(b, j) = pool(idx, j);
        ts[b] = static_cast<int>(rng.uniform_int(1, T));
        for (std::size_t j = 0; j < d; ++j) eps(b, j) = rng.normal();
    }
}

double total_kl(const DenoiserModel& model) {
    double kl = 0.0;
    auto add = [&](const WeightSlot& s) {
        if (s.var) kl += kl_to_prior(*s.var);
    };
    for (const auto& l : model.layers()) {
        for (const auto& s : l.slots) add(s);
        if (l.lora) add(l.lora->A);
        if (l.oft)
            for (const auto& q : l.oft->Q) add(q);
    }
    return kl;
}

}  // namespace

double default_learning_rate(const AdapterSpec& spec) {
    return std::holds_alternative<FullVariant>(spec.variant) ? 5e-4 : 1e-3;
}

int default_iterations(std::size_t few_shot_count) { return 200 * static_cast<int>(few_shot_count); }

DenoiserModel pretrain(const DataSpec& data, const ModelArch& arch, const NoiseSchedule& sched,
                       const PretrainConfig& cfg, std::vector<MetricsRow>* loss_log) {
    if (cfg.iterations < 1 || cfg.batch < 1 || !(cfg.lr > 0.0)) throw ConfigError("pretrain: invalid configuration");
    if (arch.dim != data.dim()) throw ConfigError("pretrain: model dimension does not match data");
    if (arch.num_labels < static_cast<std::size_t>(data.num_labels())) {
        throw ConfigError("pretrain: label table smaller than the number of classes");
    }
    DenoiserModel model(arch, sched, derive_seed(cfg.seed, {0x1417}));
    Rng rng(derive_seed(cfg.seed, {0xDA7A}));
    Adam adam(cfg.lr);
    const int null_label = data.null_label();
    double running = 0.0;
    int counted = 0;
    for (int it = 1; it <= cfg.iterations; ++it) {
        LabeledBatch b = sample_pretrain(data, cfg.batch, rng);
        for (int& l : b.labels)
            if (rng.uniform() < cfg.label_dropout) l = null_label;
        std::vector<int> ts(cfg.batch);
        for (int& t : ts) t = static_cast<int>(rng.uniform_int(1, sched.T));
        NumArray eps = rng.normal_array(cfg.batch, data.dim());

        Tape tape;
        Binder binder(tape, WeightMode::Mean, true);
        const BoundModel bound = model.bind(binder);
        Var loss = batch_loss(model, bound, tape, b.x, ts, b.labels, eps, it);
        const double lv = loss.value().item();
        check_loss(lv, it);
        tape.backward(loss);
        apply_gradients(adam, binder);

        running += lv;
        ++counted;
        if (loss_log != nullptr && cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iterations)) {
            MetricsRow r;
            r.iteration = it;
            r.l_dm = running / counted;
            loss_log->push_back(r);
            running = 0.0;
            counted = 0;
        }
    }
    return model;
}

double grid_train_loss(const DenoiserModel& model, const NumArray& D, int label, std::size_t grid, std::uint64_t seed) {
    if (grid == 0) throw ContractError("grid_train_loss: empty grid");
    const int T = model.schedule().T;
    const std::size_t n = D.rows(), d = D.cols();
    NumArray x0 = NumArray::matrix(n * grid, d);
    std::vector<int> ts(n * grid);
    for (std::size_t g = 0; g < grid; ++g) {
        const int t = std::clamp(static_cast<int>(std::lround((static_cast<double>(g) + 0.5) * T / grid)), 1, T);
        for (std::size_t r = 0; r < n; ++r) {
            ts[g * n + r] = t;
            for (std::size_t j = 0; j < d; ++j) x0(g * n + r, j) = D(r, j);
        }
    }
    Rng rng(derive_seed(seed, {0x1055}));
    const NumArray eps = rng.normal_array(n * grid, d);
    return diffusion_loss(model, model.schedule(), x0, ts, eps, std::vector<int>(n * grid, label));
}

MetricsRow evaluate(const DenoiserModel& model, const NumArray& D, int label, const EvalConfig& cfg) {
    MetricsRow row;
    SamplerConfig sc;
    sc.steps = cfg.sampler_steps;
    sc.seed = cfg.metric_seed;
    sc.mode = SamplerMode::Ancestral;
    const NumArray gen = ancestral_sample(model, model.schedule(), sc, std::vector<int>(cfg.samples, label));
    row.fidelity = fidelity(gen, D, cfg.metric_seed);
    row.diversity = cfg.samples >= 2 ? diversity(gen) : 0.0;
    row.quality = quality(gen, D, cfg.raster_side);
    row.sigma1 = estimate_sigma1(model, model.schedule(), D.row_slice(0), cfg.sigma1_t, cfg.sigma1_samples, label,
                                 derive_seed(cfg.metric_seed, {0x5161}));
    row.l_dm = grid_train_loss(model, D, label, cfg.loss_grid, cfg.metric_seed);
    row.l_r = total_kl(model);
    return row;
}

NumArray generate_class_samples(const DenoiserModel& pretrained, int label, std::size_t count, std::uint64_t seed) {
    SamplerConfig sc;
    sc.steps = std::min(100, pretrained.schedule().T);
    sc.seed = seed;
    return ancestral_sample(pretrained, pretrained.schedule(), sc, std::vector<int>(count, label));
}

double prior_preservation_loss(const DenoiserModel& current, const NumArray& class_samples, int label,
                               std::uint64_t seed) {
    if (class_samples.rows() == 0) throw ConfigError("prior preservation: empty class sample set");
    Rng rng(seed);
    NumArray x0, eps;
    std::vector<int> ts;
    draw_batch(class_samples, class_samples.rows(), current.schedule().T, rng, x0, ts, eps);
    return diffusion_loss(current, current.schedule(), x0, ts, eps, std::vector<int>(ts.size(), label));
}

FinetuneResult finetune(const DenoiserModel& pretrained, const NumArray& D, int label, const TrainConfig& cfg,
                        const EvalConfig& eval, const std::optional<std::filesystem::path>& out_dir,
                        const CheckpointHook& hook) {
    if (D.rows() < 1 || D.rows() > 16) throw ConfigError("finetune: few-shot set must hold 1..16 samples");
    if (D.cols() != pretrained.dim()) throw ConfigError("finetune: few-shot samples do not match model dimension");
    if (cfg.lambda < 0.0 || !std::isfinite(cfg.lambda)) throw ConfigError("finetune: lambda must be >= 0");
    if (cfg.prior.weight < 0.0) throw ConfigError("finetune: prior weight must be >= 0");
    if (cfg.batch < 1) throw ConfigError("finetune: batch size must be >= 1");
    if (cfg.iterations < 0 || cfg.cadence < 0) throw ConfigError("finetune: negative iteration count");
    if (cfg.stop_below < 0.0) throw ConfigError("finetune: stop_below must be >= 0");
    if (cfg.stop_below > 0.0 && !eval.enabled) throw ConfigError("finetune: stop_below needs evaluation enabled");

    FinetuneResult res{pretrained, {}, {}};
    DenoiserModel& model = res.model;
    Rng placement_rng(derive_seed(cfg.seed, {0xADA9}));
    res.placement = apply_placement(model, cfg.adapter, placement_rng);

    const double lr = cfg.lr > 0.0 ? cfg.lr : default_learning_rate(cfg.adapter);
    const int iterations = cfg.iterations > 0 ? cfg.iterations : default_iterations(D.rows());
    const int T = model.schedule().T;

    NumArray class_samples;
    const bool use_prior = cfg.prior.enabled && cfg.prior.weight > 0.0;
    if (cfg.prior.enabled) {
        if (cfg.prior.count == 0) throw ConfigError("prior preservation enabled with zero class samples");
        class_samples = generate_class_samples(pretrained, label, cfg.prior.count, derive_seed(cfg.seed, {0xC1A5}));
    }

    Rng data_rng(derive_seed(cfg.seed, {0xDA7A}));
    Rng prior_rng(derive_seed(cfg.seed, {0x9210}));
    Adam adam(lr);

    auto record = [&](std::int64_t it) {
        CheckpointEntry e;
        e.iteration = it;
        if (eval.enabled) e.row = evaluate(model, D, label, eval);
        e.row.iteration = it;
        if (out_dir) {
            char name[32];
            std::snprintf(name, sizeof name, "ckpt_%06lld.bdl", static_cast<long long>(it));
            const auto path = *out_dir / name;
            save_checkpoint(path, model, {{"iteration", it}, {"seed", cfg.seed}});
            e.path = path.string();
        }
        if (hook) hook(it, model);
        res.series.push_back(std::move(e));
    };

    record(0);
    const std::vector<int> labels(cfg.batch, label);
    for (int step = 1; step <= iterations; ++step) {
        if (cfg.cosine_decay) {
            adam.set_learning_rate(0.5 * lr * (1.0 + std::cos(M_PI * (step - 1) / static_cast<double>(iterations))));
        }
        Tape tape;
        const auto s = static_cast<std::uint64_t>(step);
        EpsSource eps_source = [&cfg, s](std::size_t index, const std::vector<std::size_t>& shape) {
            Rng r(derive_seed(cfg.seed, {0xE95, static_cast<std::uint64_t>(index), s}));
            NumArray e(shape);
            for (double& v : e.values()) v = r.normal();
            return e;
        };
        // Variational parameters are sampled once, before the data draw.
        Binder binder(tape, WeightMode::Sample, true, eps_source);
        const BoundModel bound = model.bind(binder);

        NumArray x0, eps;
        std::vector<int> ts;
        draw_batch(D, cfg.batch, T, data_rng, x0, ts, eps);
        Var loss = batch_loss(model, bound, tape, x0, ts, labels, eps, step);
        if (cfg.lambda > 0.0 && !binder.sampled().empty()) {
            loss = add(loss, scale(DenoiserModel::kl_sum(binder), cfg.lambda));
        }
        if (use_prior) {
            NumArray px0, peps;
            std::vector<int> pts;
            draw_batch(class_samples, cfg.batch, T, prior_rng, px0, pts, peps);
            loss = add(loss, scale(batch_loss(model, bound, tape, px0, pts, labels, peps, step), cfg.prior.weight));
        }
        check_loss(loss.value().item(), step);
        tape.backward(loss);
        apply_gradients(adam, binder);

        if ((cfg.cadence > 0 && step % cfg.cadence == 0) || step == iterations) {
            if (res.series.back().iteration != step) record(step);
            if (cfg.stop_below > 0.0 && res.series.back().row.l_dm < cfg.stop_below) break;
        }
    }
    return res;
}

}  // namespace bdlab
