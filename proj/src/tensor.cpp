#include "bdlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "bdlab/errors.hpp"

namespace bdlab {

namespace {

// Row-at-a-time kernels: every output row is produced by the same sequence of
// operations no matter how many rows the operand has, so splitting a batch
// never changes results.

// c (m x n) += a (m x k) * b (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c (m x n) += a (m x k) * b^T, b is (n x k)
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

// c (m x n) += a^T * b, a is (k x m), b is (k x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const NumArray& a, const char* op) {
    if (a.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 array, got " + a.shape_string());
    }
}

void require_same(const NumArray& a, const NumArray& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
    }
}

template <class F>
NumArray map_values(const NumArray& a, F f) {
    NumArray out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

void accumulate(NumArray& dst, const NumArray& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

NumArray::NumArray(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

NumArray::NumArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
        throw DimensionError("NumArray: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string());
    }
}

NumArray NumArray::matrix(std::size_t rows, std::size_t cols, double fill) {
    return NumArray({rows, cols}, fill);
}

NumArray NumArray::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return NumArray({r, c}, std::move(data));
}

NumArray NumArray::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return NumArray({1, n}, std::move(values));
}

NumArray NumArray::scalar(double v) { return NumArray({1, 1}, std::vector<double>{v}); }

NumArray NumArray::identity(std::size_t n) {
    NumArray out = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
}

std::size_t NumArray::rows() const {
    if (shape_.empty()) return 0;
    return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t NumArray::cols() const {
    if (shape_.empty()) return 0;
    return shape_.back();
}

double NumArray::item() const {
    if (data_.size() != 1) throw ContractError("item() on array of shape " + shape_string());
    return data_[0];
}

NumArray NumArray::row_slice(std::size_t r) const {
    require_rank2(*this, "row_slice");
    if (r >= rows()) throw DimensionError("row_slice: row out of range");
    const std::size_t c = cols();
    return NumArray({1, c}, std::vector<double>(data_.begin() + r * c, data_.begin() + (r + 1) * c));
}

bool NumArray::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string NumArray::shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ')';
    return os.str();
}

bool NumArray::bit_equal(const NumArray& other) const noexcept {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

NumArray matmul(const NumArray& a, const NumArray& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ " + a.shape_string() + " * " +
                             b.shape_string());
    }
    NumArray out = NumArray::matrix(a.rows(), b.cols());
    gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
    return out;
}

NumArray transpose(const NumArray& a) {
    require_rank2(a, "transpose");
    NumArray out = NumArray::matrix(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

NumArray operator+(const NumArray& a, const NumArray& b) {
    require_same(a, b, "add");
    NumArray out = a;
    accumulate(out, b);
    return out;
}

NumArray operator-(const NumArray& a, const NumArray& b) {
    require_same(a, b, "sub");
    NumArray out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

NumArray operator*(double s, const NumArray& a) {
    return map_values(a, [s](double v) { return s * v; });
}

NumArray hadamard(const NumArray& a, const NumArray& b) {
    require_same(a, b, "hadamard");
    NumArray out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

NumArray block_diagonal(const std::vector<NumArray>& blocks) {
    std::size_t r = 0, c = 0;
    for (const auto& b : blocks) {
        require_rank2(b, "block_diagonal");
        r += b.rows();
        c += b.cols();
    }
    NumArray out = NumArray::matrix(r, c);
    std::size_t r0 = 0, c0 = 0;
    for (const auto& b : blocks) {
        for (std::size_t i = 0; i < b.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) out(r0 + i, c0 + j) = b(i, j);
        r0 += b.rows();
        c0 += b.cols();
    }
    return out;
}

double frobenius_norm(const NumArray& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const NumArray& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const NumArray& a, const NumArray& b) {
    require_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double sum(const NumArray& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return s;
}

namespace {

double one_norm(const NumArray& a) {
    double best = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

}  // namespace

NumArray mat_inverse(const NumArray& a) {
    require_rank2(a, "mat_inverse");
    const std::size_t n = a.rows();
    if (a.cols() != n) throw DimensionError("mat_inverse: matrix is not square " + a.shape_string());

    NumArray lu = a;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    const double inf = std::numeric_limits<double>::infinity();

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::abs(lu(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            if (std::abs(lu(i, k)) > best) {
                best = std::abs(lu(i, k));
                p = i;
            }
        }
        if (best == 0.0 || !std::isfinite(best)) {
            throw SingularityError("mat_inverse: matrix is singular", inf);
        }
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(p, j));
            std::swap(perm[k], perm[p]);
        }
        const double pivot = lu(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = lu(i, k) / pivot;
            lu(i, k) = f;
            if (f == 0.0) continue;
            for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
        }
    }

    // Solve L U x = P e_j column by column.
    NumArray inv = NumArray::matrix(n, n);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = perm[i] == j ? 1.0 : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = col[i];
            for (std::size_t k = 0; k < i; ++k) s -= lu(i, k) * col[k];
            col[i] = s;
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = col[ii];
            for (std::size_t k = ii + 1; k < n; ++k) s -= lu(ii, k) * col[k];
            col[ii] = s / lu(ii, ii);
        }
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }

    const double cond = one_norm(a) * one_norm(inv);
    if (!std::isfinite(cond) || cond > kSingularityThreshold) {
        throw SingularityError("mat_inverse: condition estimate " + std::to_string(cond) +
                                   " exceeds threshold",
                               cond);
    }
    return inv;
}

double spectral_norm(const NumArray& a, int iterations, double tol) {
    require_rank2(a, "spectral_norm");
    const NumArray ata = matmul(transpose(a), a);
    const std::size_t n = ata.rows();
    if (n == 0) return 0.0;
    // Deterministic, non-degenerate start vector.
    NumArray v = NumArray::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7) / 7.0;
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
        NumArray w = matmul(ata, v);
        const double norm = frobenius_norm(w);
        if (norm == 0.0) return 0.0;
        const double next = norm / frobenius_norm(v);
        v = (1.0 / norm) * w;
        if (std::abs(next - lambda) <= tol * next) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    return std::sqrt(lambda);
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw ContractError("softplus_inverse: argument must be positive");
    return y > 20.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::MatMulTransB: return "matmul_transb";
        case OpKind::Transpose: return "transpose";
        case OpKind::Add: return "add";
        case OpKind::AddRow: return "add_row";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Silu: return "silu";
        case OpKind::Softplus: return "softplus";
        case OpKind::Log: return "log";
        case OpKind::Square: return "square";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Inverse: return "inverse";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Reparam: return "reparameterize";
        case OpKind::BlockDiag: return "block_diag";
    }
    return "?";
}

const NumArray& Var::value() const { return tape_->value(id_); }
const NumArray& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(NumArray value, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(NumArray value) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, NumArray value, std::vector<std::size_t> parents, BackwardFn fn) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    for (std::size_t p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

NumArray& Tape::grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad_set) {
        n.grad = NumArray(n.value.shape(), 0.0);
        n.grad_set = true;
    }
    return n.grad;
}

const NumArray& Tape::grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.grad_set) return n.grad;
    zero_cache_.emplace_back(n.value.shape(), 0.0);
    return zero_cache_.back();
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw ContractError("backward: variable belongs to another tape");
    if (nodes_[root.id()].value.size() != 1) {
        throw ContractError("backward: root must be a scalar, got shape " +
                            nodes_[root.id()].value.shape_string());
    }
    for (auto& n : nodes_) {
        n.grad_set = false;
        n.grad = NumArray();
    }
    zero_cache_.clear();
    grad_slot(root.id())[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad_set && n.backward) n.backward(*this, i);
    }
}

std::vector<OpKind> Tape::op_log() const {
    std::vector<OpKind> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n.kind);
    return out;
}

std::size_t Tape::op_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) {
        return n.kind != OpKind::Leaf && n.kind != OpKind::Constant;
    }));
}

// ---------------------------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw ContractError(std::string(op) + ": operands are not on the same tape");
    }
    return *a.tape();
}

void add_into(Tape& t, std::size_t id, const NumArray& g) {
    if (t.requires_grad(id)) accumulate(t.grad_slot(id), g);
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul");
    NumArray out = matmul(a.value(), b.value());
    return t.record(OpKind::MatMul, std::move(out), {a.id(), b.id()}, [](Tape& tp, std::size_t id) {
        const std::size_t ia = tp.parent(id, 0), ib = tp.parent(id, 1);
        const NumArray& g = tp.grad(id);
        const NumArray& av = tp.value(ia);
        const NumArray& bv = tp.value(ib);
        if (tp.requires_grad(ia)) {
            gemm_nt(g.data(), bv.data(), tp.grad_slot(ia).data(), g.rows(), g.cols(), bv.rows());
        }
        if (tp.requires_grad(ib)) {
            gemm_tn(av.data(), g.data(), tp.grad_slot(ib).data(), av.cols(), av.rows(), g.cols());
        }
    });
}

Var matmul_transb(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul_transb");
    const NumArray& av = a.value();
    const NumArray& bv = b.value();
    require_rank2(av, "matmul_transb");
    require_rank2(bv, "matmul_transb");
    if (av.cols() != bv.cols()) {
        throw DimensionError("matmul_transb: inner dimensions differ " + av.shape_string() +
                             " * " + bv.shape_string() + "^T");
    }
    NumArray out = NumArray::matrix(av.rows(), bv.rows());
    gemm_nt(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.rows());
    return t.record(OpKind::MatMulTransB, std::move(out), {a.id(), b.id()},
                    [](Tape& tp, std::size_t id) {
                        const std::size_t ia = tp.parent(id, 0), ib = tp.parent(id, 1);
                        const NumArray& g = tp.grad(id);
                        const NumArray& av = tp.value(ia);
                        const NumArray& bv = tp.value(ib);
                        // out = a b^T: da = g b, db = g^T a
                        if (tp.requires_grad(ia)) {
                            gemm_nn(g.data(), bv.data(), tp.grad_slot(ia).data(), g.rows(),
                                    g.cols(), bv.cols());
                        }
                        if (tp.requires_grad(ib)) {
                            gemm_tn(g.data(), av.data(), tp.grad_slot(ib).data(), g.cols(),
                                    g.rows(), av.cols());
                        }
                    });
}

Var transpose(Var a) {
    Tape& t = *a.tape();
    return t.record(OpKind::Transpose, transpose(a.value()), {a.id()}, [](Tape& tp, std::size_t id) {
        add_into(tp, tp.parent(id, 0), transpose(tp.grad(id)));
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b, "add");
    return t.record(OpKind::Add, a.value() + b.value(), {a.id(), b.id()},
                    [](Tape& tp, std::size_t id) {
                        add_into(tp, tp.parent(id, 0), tp.grad(id));
                        add_into(tp, tp.parent(id, 1), tp.grad(id));
                    });
}

Var add_row(Var m, Var row) {
    Tape& t = same_tape(m, row, "add_row");
    const NumArray& mv = m.value();
    const NumArray& rv = row.value();
    require_rank2(mv, "add_row");
    if (rv.rows() != 1 || rv.cols() != mv.cols()) {
        throw DimensionError("add_row: cannot broadcast " + rv.shape_string() + " over " +
                             mv.shape_string());
    }
    NumArray out = mv;
    const std::size_t c = mv.cols();
    for (std::size_t i = 0; i < mv.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) += rv[j];
    return t.record(OpKind::AddRow, std::move(out), {m.id(), row.id()},
                    [](Tape& tp, std::size_t id) {
                        const NumArray& g = tp.grad(id);
                        add_into(tp, tp.parent(id, 0), g);
                        const std::size_t ir = tp.parent(id, 1);
                        if (tp.requires_grad(ir)) {
                            NumArray& gr = tp.grad_slot(ir);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                                for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
                        }
                    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b, "sub");
    return t.record(OpKind::Sub, a.value() - b.value(), {a.id(), b.id()},
                    [](Tape& tp, std::size_t id) {
                        add_into(tp, tp.parent(id, 0), tp.grad(id));
                        add_into(tp, tp.parent(id, 1), -1.0 * tp.grad(id));
                    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b, "mul");
    return t.record(OpKind::Mul, hadamard(a.value(), b.value()), {a.id(), b.id()},
                    [](Tape& tp, std::size_t id) {
                        const std::size_t ia = tp.parent(id, 0), ib = tp.parent(id, 1);
                        add_into(tp, ia, hadamard(tp.grad(id), tp.value(ib)));
                        add_into(tp, ib, hadamard(tp.grad(id), tp.value(ia)));
                    });
}

Var scale(Var a, double s) {
    return a.tape()->record(OpKind::Scale, s * a.value(), {a.id()},
                            [s](Tape& tp, std::size_t id) {
                                add_into(tp, tp.parent(id, 0), s * tp.grad(id));
                            });
}

Var add_scalar(Var a, double s) {
    return a.tape()->record(OpKind::AddScalar, map_values(a.value(), [s](double v) { return v + s; }),
                            {a.id()}, [](Tape& tp, std::size_t id) {
                                add_into(tp, tp.parent(id, 0), tp.grad(id));
                            });
}

Var silu(Var a) {
    NumArray out = map_values(a.value(), [](double v) { return v * sigmoid(v); });
    return a.tape()->record(OpKind::Silu, std::move(out), {a.id()}, [](Tape& tp, std::size_t id) {
        const std::size_t ia = tp.parent(id, 0);
        if (!tp.requires_grad(ia)) return;
        const NumArray& x = tp.value(ia);
        const NumArray& g = tp.grad(id);
        NumArray& ga = tp.grad_slot(ia);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double s = sigmoid(x[i]);
            ga[i] += g[i] * (s + x[i] * s * (1.0 - s));
        }
    });
}

Var softplus(Var a) {
    NumArray out = map_values(a.value(), [](double v) { return softplus(v); });
    return a.tape()->record(OpKind::Softplus, std::move(out), {a.id()},
                            [](Tape& tp, std::size_t id) {
                                const std::size_t ia = tp.parent(id, 0);
                                if (!tp.requires_grad(ia)) return;
                                const NumArray& x = tp.value(ia);
                                const NumArray& g = tp.grad(id);
                                NumArray& ga = tp.grad_slot(ia);
                                for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * sigmoid(x[i]);
                            });
}

Var log(Var a) {
    NumArray out = map_values(a.value(), [](double v) { return std::log(v); });
    return a.tape()->record(OpKind::Log, std::move(out), {a.id()}, [](Tape& tp, std::size_t id) {
        const std::size_t ia = tp.parent(id, 0);
        if (!tp.requires_grad(ia)) return;
        const NumArray& x = tp.value(ia);
        const NumArray& g = tp.grad(id);
        NumArray& ga = tp.grad_slot(ia);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] / x[i];
    });
}

Var square(Var a) {
    NumArray out = map_values(a.value(), [](double v) { return v * v; });
    return a.tape()->record(OpKind::Square, std::move(out), {a.id()}, [](Tape& tp, std::size_t id) {
        const std::size_t ia = tp.parent(id, 0);
        if (!tp.requires_grad(ia)) return;
        const NumArray& x = tp.value(ia);
        const NumArray& g = tp.grad(id);
        NumArray& ga = tp.grad_slot(ia);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * g[i] * x[i];
    });
}

Var sum(Var a) {
    return a.tape()->record(OpKind::Sum, NumArray::scalar(sum(a.value())), {a.id()},
                            [](Tape& tp, std::size_t id) {
                                const std::size_t ia = tp.parent(id, 0);
                                if (!tp.requires_grad(ia)) return;
                                const double g = tp.grad(id)[0];
                                for (double& v : tp.grad_slot(ia).values()) v += g;
                            });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw ContractError("mean of empty array");
    return a.tape()->record(OpKind::Mean, NumArray::scalar(sum(a.value()) / n), {a.id()},
                            [n](Tape& tp, std::size_t id) {
                                const std::size_t ia = tp.parent(id, 0);
                                if (!tp.requires_grad(ia)) return;
                                const double g = tp.grad(id)[0] / n;
                                for (double& v : tp.grad_slot(ia).values()) v += g;
                            });
}

Var inverse(Var a) {
    return a.tape()->record(OpKind::Inverse, mat_inverse(a.value()), {a.id()},
                            [](Tape& tp, std::size_t id) {
                                const std::size_t ia = tp.parent(id, 0);
                                if (!tp.requires_grad(ia)) return;
                                // d(A^-1) = -A^-1 dA A^-1
                                const NumArray inv_t = transpose(tp.value(id));
                                const NumArray ga = matmul(matmul(inv_t, tp.grad(id)), inv_t);
                                NumArray& slot = tp.grad_slot(ia);
                                for (std::size_t i = 0; i < slot.size(); ++i) slot[i] -= ga[i];
                            });
}

Var gather_rows(Var table, const std::vector<int>& rows) {
    const NumArray& tv = table.value();
    require_rank2(tv, "gather_rows");
    const std::size_t c = tv.cols();
    NumArray out = NumArray::matrix(rows.size(), c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= tv.rows()) {
            throw ContractError("gather_rows: index " + std::to_string(rows[i]) + " out of range");
        }
        for (std::size_t j = 0; j < c; ++j) out(i, j) = tv(static_cast<std::size_t>(rows[i]), j);
    }
    return table.tape()->record(OpKind::GatherRows, std::move(out), {table.id()},
                                [rows](Tape& tp, std::size_t id) {
                                    const std::size_t it = tp.parent(id, 0);
                                    if (!tp.requires_grad(it)) return;
                                    const NumArray& g = tp.grad(id);
                                    NumArray& gt = tp.grad_slot(it);
                                    for (std::size_t i = 0; i < rows.size(); ++i)
                                        for (std::size_t j = 0; j < g.cols(); ++j)
                                            gt(static_cast<std::size_t>(rows[i]), j) += g(i, j);
                                });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
    Tape& t = same_tape(x, gain, "layer_norm");
    same_tape(x, shift, "layer_norm");
    const NumArray& xv = x.value();
    const NumArray& gv = gain.value();
    const NumArray& bv = shift.value();
    require_rank2(xv, "layer_norm");
    const std::size_t r = xv.rows(), c = xv.cols();
    if (gv.size() != c || bv.size() != c) throw DimensionError("layer_norm: gain/shift width mismatch");

    NumArray out = NumArray::matrix(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xv(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) out(i, j) = (xv(i, j) - mu) * inv * gv[j] + bv[j];
    }
    return t.record(
        OpKind::LayerNorm, std::move(out), {x.id(), gain.id(), shift.id()},
        [eps](Tape& tp, std::size_t id) {
            const std::size_t ix = tp.parent(id, 0), ig = tp.parent(id, 1), ib = tp.parent(id, 2);
            const NumArray& xv = tp.value(ix);
            const NumArray& gv = tp.value(ig);
            const NumArray& g = tp.grad(id);
            const std::size_t r = xv.rows(), c = xv.cols();
            const double n = static_cast<double>(c);
            std::vector<double> xhat(c), dxhat(c);
            for (std::size_t i = 0; i < r; ++i) {
                double mu = 0.0;
                for (std::size_t j = 0; j < c; ++j) mu += xv(i, j);
                mu /= n;
                double var = 0.0;
                for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
                var /= n;
                const double inv = 1.0 / std::sqrt(var + eps);
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    xhat[j] = (xv(i, j) - mu) * inv;
                    dxhat[j] = g(i, j) * gv[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[j];
                }
                m1 /= n;
                m2 /= n;
                if (tp.requires_grad(ix)) {
                    NumArray& gx = tp.grad_slot(ix);
                    for (std::size_t j = 0; j < c; ++j) gx(i, j) += inv * (dxhat[j] - m1 - xhat[j] * m2);
                }
                if (tp.requires_grad(ig)) {
                    NumArray& gg = tp.grad_slot(ig);
                    for (std::size_t j = 0; j < c; ++j) gg[j] += g(i, j) * xhat[j];
                }
                if (tp.requires_grad(ib)) {
                    NumArray& gb = tp.grad_slot(ib);
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
                }
            }
        });
}

Var reparameterize(Var mu, Var rho, const NumArray& eps) {
    Tape& t = same_tape(mu, rho, "reparameterize");
    const NumArray& m = mu.value();
    const NumArray& r = rho.value();
    require_same(m, r, "reparameterize");
    require_same(m, eps, "reparameterize");
    NumArray out(m.shape());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] + softplus(r[i]) * eps[i];
    return t.record(OpKind::Reparam, std::move(out), {mu.id(), rho.id()},
                    [eps](Tape& tp, std::size_t id) {
                        const std::size_t im = tp.parent(id, 0), ir = tp.parent(id, 1);
                        const NumArray& g = tp.grad(id);
                        add_into(tp, im, g);
                        if (tp.requires_grad(ir)) {
                            const NumArray& r = tp.value(ir);
                            NumArray& gr = tp.grad_slot(ir);
                            for (std::size_t i = 0; i < r.size(); ++i) gr[i] += g[i] * eps[i] * sigmoid(r[i]);
                        }
                    });
}

Var block_diag(const std::vector<Var>& blocks) {
    if (blocks.empty()) throw ContractError("block_diag: no blocks");
    Tape& t = *blocks.front().tape();
    std::vector<NumArray> values;
    std::vector<std::size_t> parents;
    for (const Var& b : blocks) {
        same_tape(blocks.front(), b, "block_diag");
        values.push_back(b.value());
        parents.push_back(b.id());
    }
    return t.record(OpKind::BlockDiag, block_diagonal(values), std::move(parents),
                    [n = blocks.size()](Tape& tp, std::size_t id) {
                        const NumArray& g = tp.grad(id);
                        std::size_t r0 = 0, c0 = 0;
                        for (std::size_t k = 0; k < n; ++k) {
                            const std::size_t ib = tp.parent(id, k);
                            const NumArray& bv = tp.value(ib);
                            if (tp.requires_grad(ib)) {
                                NumArray& gb = tp.grad_slot(ib);
                                for (std::size_t i = 0; i < bv.rows(); ++i)
                                    for (std::size_t j = 0; j < bv.cols(); ++j)
                                        gb(i, j) += g(r0 + i, c0 + j);
                            }
                            r0 += bv.rows();
                            c0 += bv.cols();
                        }
                    });
}

}  // namespace bdlab
