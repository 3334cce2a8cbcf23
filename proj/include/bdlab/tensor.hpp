#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bdlab {

// Dense row-major array of doubles. Almost everything in the library is rank 2
// (rows x cols); rank-1 arrays are accepted by the elementwise helpers.
class NumArray {
public:
    NumArray() = default;
    explicit NumArray(std::vector<std::size_t> shape, double fill = 0.0);
    NumArray(std::vector<std::size_t> shape, std::vector<double> data);

    static NumArray matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static NumArray from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static NumArray row(std::vector<double> values);
    static NumArray scalar(double v);
    static NumArray identity(std::size_t n);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double item() const;
    NumArray row_slice(std::size_t r) const;
    bool same_shape(const NumArray& other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;
    std::string shape_string() const;

    // Bit-level equality, NaN payloads included.
    bool bit_equal(const NumArray& other) const noexcept;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

NumArray matmul(const NumArray& a, const NumArray& b);
NumArray transpose(const NumArray& a);
NumArray operator+(const NumArray& a, const NumArray& b);
NumArray operator-(const NumArray& a, const NumArray& b);
NumArray operator*(double s, const NumArray& a);
NumArray hadamard(const NumArray& a, const NumArray& b);
NumArray block_diagonal(const std::vector<NumArray>& blocks);

double frobenius_norm(const NumArray& a);
double max_abs(const NumArray& a);
double max_abs_diff(const NumArray& a, const NumArray& b);
double sum(const NumArray& a);

// Inverse through LU with partial pivoting. Throws SingularityError when the
// 1-norm condition estimate exceeds 1e12.
NumArray mat_inverse(const NumArray& a);
inline constexpr double kSingularityThreshold = 1e12;

// Largest singular value by power iteration on A^T A.
double spectral_norm(const NumArray& a, int iterations = 500, double tol = 1e-14);

// ---------------------------------------------------------------------------
// Reverse-mode autodiff.

enum class OpKind {
    Leaf,
    Constant,
    MatMul,
    MatMulTransB,
    Transpose,
    Add,
    AddRow,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Silu,
    Softplus,
    Log,
    Square,
    Sum,
    Mean,
    Inverse,
    GatherRows,
    LayerNorm,
    Reparam,
    BlockDiag,
};

const char* op_name(OpKind k);

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const NumArray& value() const;
    const NumArray& grad() const;
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(NumArray value, bool requires_grad = true);
    Var constant(NumArray value);

    // Seeds d(root)/d(root) = 1 and propagates in reverse recording order.
    // The root must hold exactly one element.
    void backward(Var root);

    const NumArray& value(std::size_t id) const { return nodes_[id].value; }
    // Gradient after backward(); zeros for nodes the root does not depend on.
    const NumArray& grad(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    std::size_t size() const noexcept { return nodes_.size(); }
    std::vector<OpKind> op_log() const;
    // Number of non-leaf, non-constant operations recorded.
    std::size_t op_count() const;

    // Used by op implementations.
    Var record(OpKind kind, NumArray value, std::vector<std::size_t> parents, BackwardFn fn);
    NumArray& grad_slot(std::size_t id);
    std::size_t parent(std::size_t id, std::size_t k) const { return nodes_[id].parents[k]; }

private:
    struct Node {
        OpKind kind;
        NumArray value;
        NumArray grad;
        bool requires_grad = false;
        bool grad_set = false;
        std::vector<std::size_t> parents;
        BackwardFn backward;
    };
    std::deque<Node> nodes_;
    mutable std::deque<NumArray> zero_cache_;
};

Var matmul(Var a, Var b);
// a * b^T, used for linear layers with weights stored (out x in).
Var matmul_transb(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
// Adds a (1 x n) row to every row of a (m x n) matrix.
Var add_row(Var m, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var silu(Var a);
Var softplus(Var a);
Var log(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var inverse(Var a);
Var gather_rows(Var table, const std::vector<int>& rows);
// Row-wise normalisation followed by elementwise gain (1 x n) and shift (1 x n).
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);
// mu + softplus(rho) * eps with eps held constant.
Var reparameterize(Var mu, Var rho, const NumArray& eps);
Var block_diag(const std::vector<Var>& blocks);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

}  // namespace bdlab
