#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bdlab/diffusion.hpp"
#include "bdlab/tensor.hpp"
#include "bdlab/variational.hpp"

namespace bdlab {

// One weight tensor: either a plain array or a variational posterior over it.
struct WeightSlot {
    std::string name;
    NumArray value;
    std::optional<VariationalParameter> var;
    bool trainable = true;

    bool variational() const { return var.has_value(); }
    const NumArray& mean() const { return var ? var->mu : value; }
    std::size_t size() const { return mean().size(); }
};

struct LoRAState {
    int rank = 0;
    WeightSlot B;  // d x r, plain
    WeightSlot A;  // r x k, variational when bayesian
};

struct OFTState {
    int block = 0;
    std::vector<WeightSlot> Q;  // one (block x block) generator per diagonal block
};

enum class LayerKind { Linear, Embedding, Norm };
enum class LayerRole { Conditioning, Down, Up };

struct Layer {
    std::string name;
    LayerKind kind = LayerKind::Linear;
    LayerRole role = LayerRole::Down;
    std::vector<WeightSlot> slots;  // linear: weight (out x in), bias (1 x out)
    std::optional<LoRAState> lora;
    std::optional<OFTState> oft;

    WeightSlot& slot(const std::string& n);
    const WeightSlot& slot(const std::string& n) const;
};

struct ModelArch {
    std::size_t dim = 2;
    std::size_t width = 128;
    std::size_t time_dim = 32;
    std::size_t num_labels = 10;  // includes the null label when used
};

enum class WeightMode { Mean, Sample };

// Supplies the unit normals for variational tensor number `index`.
using EpsSource = std::function<NumArray(std::size_t index, const std::vector<std::size_t>& shape)>;

// Places model weights on a tape. In Mean mode a variational tensor becomes a
// single leaf holding mu, so the op sequence matches a plain model exactly.
class Binder {
public:
    Binder(Tape& tape, WeightMode mode, bool track_grads, EpsSource eps = {});

    // The binder never writes through `target`; owners of a mutable model use
    // it to apply optimiser updates.
    Var bind(const WeightSlot& slot);
    Var frozen(const NumArray& value);

    struct Tracked {
        NumArray* target;
        Var var;
    };
    struct Sampled {
        Var mu;
        Var rho;
        const VariationalParameter* param;
        NumArray eps;
    };

    Tape& tape() { return tape_; }
    const std::vector<Tracked>& tracked() const { return tracked_; }
    const std::vector<Sampled>& sampled() const { return sampled_; }
    std::size_t variational_seen() const { return var_index_; }

private:
    Tape& tape_;
    WeightMode mode_;
    bool track_;
    EpsSource eps_;
    std::size_t var_index_ = 0;
    std::vector<Tracked> tracked_;
    std::vector<Sampled> sampled_;
};

// Effective weights of every layer for one forward/backward pass.
struct BoundModel {
    std::vector<std::vector<Var>> layers;
};

class DenoiserModel : public NoisePredictor {
public:
    DenoiserModel() = default;
    DenoiserModel(const ModelArch& arch, const NoiseSchedule& schedule, std::uint64_t init_seed);

    const ModelArch& arch() const { return arch_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }
    Layer& layer(const std::string& name);
    const Layer& layer(const std::string& name) const;

    BoundModel bind(Binder& binder) const;
    Var apply(const BoundModel& bound, Var x_t, const std::vector<int>& t, const std::vector<int>& labels) const;

    NumArray predict_eps(const NumArray& x_t, const std::vector<int>& t,
                         const std::vector<int>& labels) const override;
    std::size_t dim() const override { return arch_.dim; }

    // Counts over base layer weights (adapter tensors excluded).
    std::size_t parameter_count() const;
    std::size_t variational_tensor_count() const;
    // Elements the optimiser updates / elements that are stochastic, adapters included.
    std::size_t trainable_count() const;
    std::size_t stochastic_count() const;

    // Sum of KL terms over every variational tensor, on the tape.
    static Var kl_sum(Binder& binder);

private:
    ModelArch arch_;
    NoiseSchedule schedule_;
    std::vector<Layer> layers_;
};

NumArray time_embedding(const std::vector<int>& t, std::size_t dim);

}  // namespace bdlab
