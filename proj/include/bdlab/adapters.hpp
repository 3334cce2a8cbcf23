#pragma once

#include <string>
#include <variant>
#include <vector>

#include "bdlab/model.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

struct FullVariant {};
struct LoRAVariant {
    int rank = 4;
};
struct OFTVariant {
    int block = 0;  // 0 means the full layer width
};

enum class Placement { AllLinear, LinearNoConditioning, UpBlockOnly, ConditioningOnly, NormOnly };

std::string to_string(Placement p);
Placement placement_from_string(const std::string& s);

struct AdapterSpec {
    std::variant<FullVariant, LoRAVariant, OFTVariant> variant = FullVariant{};
    bool bayesian = false;
    Placement placement = Placement::LinearNoConditioning;
    double sigma_init = 0.01;
    double prior_sigma = 0.01;

    std::string variant_name() const;
};

struct PlacementReport {
    std::vector<std::string> wrapped;
    double stochastic_fraction = 0.0;
};

bool placement_matches(Placement p, const Layer& layer);

// Wraps matching layers according to the spec. Throws ConfigError when no
// layer matches or when a layer would receive both LoRA and OFT.
PlacementReport apply_placement(DenoiserModel& model, const AdapterSpec& spec, Rng& rng);

// R = (I + S/2)(I - S/2)^-1 with S = Q - Q^T.
NumArray cayley(const NumArray& Q);
Var cayley(Var Q);

NumArray lora_effective_weight(const NumArray& W0, const NumArray& B, const NumArray& A);
NumArray oft_effective_weight(const NumArray& W0, const std::vector<NumArray>& Q_blocks);

// Effective weight of a wrapped linear layer on the tape.
Var bind_linear_weight(const Layer& layer, Binder& binder);

}  // namespace bdlab
