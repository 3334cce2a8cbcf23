#include "bdlab/adapters.hpp"

#include <algorithm>

#include "bdlab/errors.hpp"

namespace bdlab {

std::string to_string(Placement p) {
    switch (p) {
        case Placement::AllLinear: return "all-linear";
        case Placement::LinearNoConditioning: return "linear-no-conditioning";
        case Placement::UpBlockOnly: return "up-block-only";
        case Placement::ConditioningOnly: return "conditioning-only";
        case Placement::NormOnly: return "norm-only";
    }
    return "?";
}

Placement placement_from_string(const std::string& s) {
    for (Placement p : {Placement::AllLinear, Placement::LinearNoConditioning, Placement::UpBlockOnly,
                        Placement::ConditioningOnly, Placement::NormOnly}) {
        if (to_string(p) == s) return p;
    }
    throw ConfigError("unknown placement '" + s + "'");
}

std::string AdapterSpec::variant_name() const {
    if (std::holds_alternative<LoRAVariant>(variant)) return "lora";
    if (std::holds_alternative<OFTVariant>(variant)) return "oft";
    return "full";
}

bool placement_matches(Placement p, const Layer& layer) {
    switch (p) {
        case Placement::AllLinear: return layer.kind == LayerKind::Linear;
        case Placement::LinearNoConditioning:
            return layer.kind == LayerKind::Linear && layer.role != LayerRole::Conditioning;
        case Placement::UpBlockOnly: return layer.kind == LayerKind::Linear && layer.role == LayerRole::Up;
        case Placement::ConditioningOnly: return layer.role == LayerRole::Conditioning;
        case Placement::NormOnly: return layer.kind == LayerKind::Norm;
    }
    return false;
}

namespace {

void freeze_base(DenoiserModel& model) {
    for (auto& l : model.layers())
        for (auto& s : l.slots) s.trainable = false;
}

void make_variational(WeightSlot& slot, const AdapterSpec& spec) {
    if (slot.variational()) return;
    slot.var = init_variational(slot.value, spec.sigma_init, spec.prior_sigma);
    slot.value = NumArray();
}

}  // namespace

PlacementReport apply_placement(DenoiserModel& model, const AdapterSpec& spec, Rng& rng) {
    if (spec.bayesian && (!(spec.sigma_init > 0.0) || !(spec.prior_sigma > 0.0))) {
        throw ConfigError("adapter: sigma_init and prior_sigma must be positive");
    }
    const bool adapter = !std::holds_alternative<FullVariant>(spec.variant);
    std::vector<Layer*> matched;
    for (auto& l : model.layers()) {
        if (!placement_matches(spec.placement, l)) continue;
        if (adapter && l.kind != LayerKind::Linear) continue;
        matched.push_back(&l);
    }
    if (matched.empty()) {
        throw ConfigError("adapter: placement '" + to_string(spec.placement) + "' matches no " +
                          (adapter ? "linear " : "") + "layer");
    }

    PlacementReport report;
    if (const auto* lora = std::get_if<LoRAVariant>(&spec.variant)) {
        freeze_base(model);
        for (Layer* l : matched) {
            if (l->oft || l->lora) throw ConfigError("adapter: layer " + l->name + " already carries an adapter");
            const NumArray& w0 = l->slot("weight").value;
            const std::size_t d = w0.rows(), k = w0.cols();
            if (lora->rank < 1 || static_cast<std::size_t>(lora->rank) > std::min(d, k)) {
                throw ConfigError("adapter: LoRA rank " + std::to_string(lora->rank) + " invalid for layer " +
                                  l->name + " of shape " + w0.shape_string());
            }
            const auto r = static_cast<std::size_t>(lora->rank);
            LoRAState st;
            st.rank = lora->rank;
            st.B.name = "lora.B";
            st.B.value = NumArray::matrix(d, r);
            st.A.name = "lora.A";
            st.A.value = 0.01 * rng.normal_array(r, k);
            if (spec.bayesian) make_variational(st.A, spec);
            l->lora = std::move(st);
            report.wrapped.push_back(l->name);
        }
    } else if (const auto* oft = std::get_if<OFTVariant>(&spec.variant)) {
        freeze_base(model);
        for (Layer* l : matched) {
            if (l->oft || l->lora) throw ConfigError("adapter: layer " + l->name + " already carries an adapter");
            const std::size_t d = l->slot("weight").value.rows();
            const std::size_t block = oft->block == 0 ? d : static_cast<std::size_t>(oft->block);
            if (oft->block < 0 || block == 0 || d % block != 0) {
                throw ConfigError("adapter: OFT block " + std::to_string(oft->block) + " does not divide width " +
                                  std::to_string(d) + " of layer " + l->name);
            }
            OFTState st;
            st.block = static_cast<int>(block);
            for (std::size_t b = 0; b < d / block; ++b) {
                WeightSlot q;
                q.name = "oft.Q" + std::to_string(b);
                q.value = NumArray::matrix(block, block);
                if (spec.bayesian) make_variational(q, spec);
                st.Q.push_back(std::move(q));
            }
            l->oft = std::move(st);
            report.wrapped.push_back(l->name);
        }
    } else {
        for (auto& l : model.layers())
            for (auto& s : l.slots) s.trainable = true;
        for (Layer* l : matched) {
            if (spec.bayesian)
                for (auto& s : l->slots) make_variational(s, spec);
            report.wrapped.push_back(l->name);
        }
    }
    const std::size_t trainable = model.trainable_count();
    report.stochastic_fraction =
        trainable == 0 ? 0.0 : static_cast<double>(model.stochastic_count()) / static_cast<double>(trainable);
    return report;
}

NumArray cayley(const NumArray& Q) {
    if (Q.rank() != 2 || Q.rows() != Q.cols()) throw DimensionError("cayley: Q must be square");
    const std::size_t n = Q.rows();
    const NumArray S = Q - transpose(Q);
    const NumArray I = NumArray::identity(n);
    return matmul(I + 0.5 * S, mat_inverse(I - 0.5 * S));
}

Var cayley(Var Q) {
    const NumArray& qv = Q.value();
    if (qv.rank() != 2 || qv.rows() != qv.cols()) throw DimensionError("cayley: Q must be square");
    Tape& tp = *Q.tape();
    Var I = tp.constant(NumArray::identity(qv.rows()));
    Var half_s = scale(sub(Q, transpose(Q)), 0.5);
    return matmul(add(I, half_s), inverse(sub(I, half_s)));
}

NumArray lora_effective_weight(const NumArray& W0, const NumArray& B, const NumArray& A) {
    return W0 + matmul(B, A);
}

NumArray oft_effective_weight(const NumArray& W0, const std::vector<NumArray>& Q_blocks) {
    if (Q_blocks.empty()) throw ContractError("oft_effective_weight: no blocks");
    std::vector<NumArray> rs;
    rs.reserve(Q_blocks.size());
    for (const auto& q : Q_blocks) rs.push_back(cayley(q));
    return matmul(rs.size() == 1 ? rs.front() : block_diagonal(rs), W0);
}

Var bind_linear_weight(const Layer& layer, Binder& binder) {
    Var w0 = binder.bind(layer.slot("weight"));
    if (layer.lora) {
        Var B = binder.bind(layer.lora->B);
        Var A = binder.bind(layer.lora->A);
        return add(w0, matmul(B, A));
    }
    if (layer.oft) {
        std::vector<Var> rs;
        for (const auto& q : layer.oft->Q) rs.push_back(cayley(binder.bind(q)));
        Var R = rs.size() == 1 ? rs.front() : block_diag(rs);
        return matmul(R, w0);
    }
    return w0;
}

}  // namespace bdlab
