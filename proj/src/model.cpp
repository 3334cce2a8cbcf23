#include "bdlab/model.hpp"

#include <cmath>

#include "bdlab/adapters.hpp"
#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

namespace {

enum LayerIndex : std::size_t { kEmbed = 0, kCond, kIn, kMidDown, kMidUp, kNorm, kOut, kLayerCount };

WeightSlot plain(std::string name, NumArray value) {
    WeightSlot s;
    s.name = std::move(name);
    s.value = std::move(value);
    return s;
}

Layer make_linear(std::string name, LayerRole role, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    NumArray w = NumArray::matrix(out, in);
    for (double& v : w.values()) v = bound * (2.0 * rng.uniform() - 1.0);
    NumArray b = NumArray::matrix(1, out);
    for (double& v : b.values()) v = bound * (2.0 * rng.uniform() - 1.0);
    Layer l;
    l.name = std::move(name);
    l.kind = LayerKind::Linear;
    l.role = role;
    l.slots.push_back(plain("weight", std::move(w)));
    l.slots.push_back(plain("bias", std::move(b)));
    return l;
}

}  // namespace

WeightSlot& Layer::slot(const std::string& n) {
    for (auto& s : slots)
        if (s.name == n) return s;
    throw ContractError("layer " + name + " has no slot " + n);
}

const WeightSlot& Layer::slot(const std::string& n) const {
    for (const auto& s : slots)
        if (s.name == n) return s;
    throw ContractError("layer " + name + " has no slot " + n);
}

Binder::Binder(Tape& tape, WeightMode mode, bool track_grads, EpsSource eps)
    : tape_(tape), mode_(mode), track_(track_grads), eps_(std::move(eps)) {}

Var Binder::bind(const WeightSlot& slot) {
    const bool grad = track_ && slot.trainable;
    if (!slot.var) {
        Var v = tape_.leaf(slot.value, grad);
        if (grad) tracked_.push_back({const_cast<NumArray*>(&slot.value), v});
        return v;
    }
    const VariationalParameter& p = *slot.var;
    const std::size_t index = var_index_++;
    if (mode_ == WeightMode::Mean) {
        Var v = tape_.leaf(p.mu, grad);
        if (grad) tracked_.push_back({const_cast<NumArray*>(&p.mu), v});
        return v;
    }
    if (!eps_) throw ContractError("Binder: sample mode requires an eps source");
    NumArray eps = eps_(index, p.mu.shape());
    Var mu = tape_.leaf(p.mu, grad);
    Var rho = tape_.leaf(p.rho, grad);
    if (grad) {
        tracked_.push_back({const_cast<NumArray*>(&p.mu), mu});
        tracked_.push_back({const_cast<NumArray*>(&p.rho), rho});
    }
    Var theta = reparameterize(mu, rho, eps);
    sampled_.push_back({mu, rho, &p, std::move(eps)});
    return theta;
}

Var Binder::frozen(const NumArray& value) { return tape_.leaf(value, false); }

DenoiserModel::DenoiserModel(const ModelArch& arch, const NoiseSchedule& schedule, std::uint64_t init_seed)
    : arch_(arch), schedule_(schedule) {
    if (arch.dim == 0 || arch.width == 0 || arch.num_labels == 0) throw ConfigError("model: zero-sized architecture");
    if (arch.time_dim < 2 || arch.time_dim % 2 != 0) throw ConfigError("model: time_dim must be even and >= 2");
    Rng rng(init_seed);
    const std::size_t h = arch.width;

    Layer embed;
    embed.name = "label_embed";
    embed.kind = LayerKind::Embedding;
    embed.role = LayerRole::Conditioning;
    embed.slots.push_back(plain("table", rng.normal_array(arch.num_labels, h)));
    layers_.push_back(std::move(embed));

    layers_.push_back(make_linear("cond_proj", LayerRole::Conditioning, arch.time_dim, h, rng));
    layers_.push_back(make_linear("in", LayerRole::Down, arch.dim, h, rng));
    layers_.push_back(make_linear("mid_down", LayerRole::Down, h, h, rng));
    layers_.push_back(make_linear("mid_up", LayerRole::Up, h, h, rng));

    Layer norm;
    norm.name = "norm";
    norm.kind = LayerKind::Norm;
    norm.role = LayerRole::Up;
    norm.slots.push_back(plain("gain", NumArray::matrix(1, h, 1.0)));
    norm.slots.push_back(plain("shift", NumArray::matrix(1, h, 0.0)));
    layers_.push_back(std::move(norm));

    layers_.push_back(make_linear("out", LayerRole::Up, h, arch.dim, rng));
}

Layer& DenoiserModel::layer(const std::string& name) {
    for (auto& l : layers_)
        if (l.name == name) return l;
    throw ContractError("model has no layer " + name);
}

const Layer& DenoiserModel::layer(const std::string& name) const {
    for (const auto& l : layers_)
        if (l.name == name) return l;
    throw ContractError("model has no layer " + name);
}

BoundModel DenoiserModel::bind(Binder& binder) const {
    if (layers_.size() != kLayerCount) throw ContractError("model: unexpected layer layout");
    BoundModel out;
    out.layers.reserve(layers_.size());
    for (const Layer& l : layers_) {
        std::vector<Var> vars;
        if (l.kind == LayerKind::Linear) {
            vars.push_back(bind_linear_weight(l, binder));
            vars.push_back(binder.bind(l.slot("bias")));
        } else {
            for (const WeightSlot& s : l.slots) vars.push_back(binder.bind(s));
        }
        out.layers.push_back(std::move(vars));
    }
    return out;
}

Var DenoiserModel::apply(const BoundModel& b, Var x, const std::vector<int>& t,
                         const std::vector<int>& labels) const {
    const NumArray& xv = x.value();
    if (xv.rank() != 2 || xv.cols() != arch_.dim) {
        throw DimensionError("model: input " + xv.shape_string() + " does not have " +
                             std::to_string(arch_.dim) + " columns");
    }
    if (t.size() != xv.rows() || labels.size() != xv.rows()) {
        throw DimensionError("model: need one timestep and one label per row");
    }
    Tape& tp = *x.tape();
    const auto& L = b.layers;
    auto linear = [&](Var in, std::size_t idx) {
        return add_row(matmul_transb(in, L[idx][0]), L[idx][1]);
    };
    Var temb = tp.constant(time_embedding(t, arch_.time_dim));
    Var c = add(linear(temb, kCond), gather_rows(L[kEmbed][0], labels));
    Var h = silu(add(linear(x, kIn), c));
    h = silu(add(linear(h, kMidDown), c));
    h = silu(layer_norm(linear(h, kMidUp), L[kNorm][0], L[kNorm][1]));
    return linear(h, kOut);
}

NumArray DenoiserModel::predict_eps(const NumArray& x_t, const std::vector<int>& t,
                                    const std::vector<int>& labels) const {
    Tape tape;
    Binder binder(tape, WeightMode::Mean, false);
    const BoundModel bound = bind(binder);
    return apply(bound, tape.constant(x_t), t, labels).value();
}

std::size_t DenoiserModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
        for (const auto& s : l.slots) n += s.size();
    return n;
}

std::size_t DenoiserModel::variational_tensor_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        for (const auto& s : l.slots) n += s.variational() ? 1 : 0;
        if (l.lora && l.lora->A.variational()) ++n;
        if (l.oft)
            for (const auto& q : l.oft->Q) n += q.variational() ? 1 : 0;
    }
    return n;
}

std::size_t DenoiserModel::trainable_count() const {
    std::size_t n = 0;
    auto count = [&](const WeightSlot& s) { n += s.trainable ? s.size() : 0; };
    for (const auto& l : layers_) {
        for (const auto& s : l.slots) count(s);
        if (l.lora) {
            count(l.lora->B);
            count(l.lora->A);
        }
        if (l.oft)
            for (const auto& q : l.oft->Q) count(q);
    }
    return n;
}

std::size_t DenoiserModel::stochastic_count() const {
    std::size_t n = 0;
    auto count = [&](const WeightSlot& s) { n += s.variational() ? s.size() : 0; };
    for (const auto& l : layers_) {
        for (const auto& s : l.slots) count(s);
        if (l.lora) count(l.lora->A);
        if (l.oft)
            for (const auto& q : l.oft->Q) count(q);
    }
    return n;
}

Var DenoiserModel::kl_sum(Binder& binder) {
    Tape& tp = binder.tape();
    Var total = tp.constant(NumArray::scalar(0.0));
    for (const auto& s : binder.sampled()) total = add(total, kl_to_prior(s.mu, s.rho, *s.param));
    return total;
}

NumArray time_embedding(const std::vector<int>& t, std::size_t dim) {
    const std::size_t half = dim / 2;
    NumArray out = NumArray::matrix(t.size(), dim);
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double a = static_cast<double>(t[r]) * f;
            out(r, i) = std::sin(a);
            out(r, half + i) = std::cos(a);
        }
    }
    return out;
}

}  // namespace bdlab
