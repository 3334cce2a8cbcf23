#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"
#include "bdlab/tensor.hpp"
#include "grad_check.hpp"

using namespace bdlab;

namespace {

NumArray rnd(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return scale * rng.normal_array(r, c);
}

}  // namespace

TEST_CASE("matmul matches hand computation") {
    const NumArray a = NumArray::from_rows({{1, 2}, {3, 4}});
    const NumArray b = NumArray::from_rows({{5, 6}, {7, 8}});
    const NumArray c = matmul(a, b);
    CHECK(c(0, 0) == 19);
    CHECK(c(0, 1) == 22);
    CHECK(c(1, 0) == 43);
    CHECK(c(1, 1) == 50);
    CHECK_THROWS_AS(matmul(a, NumArray::matrix(3, 2)), DimensionError);
}

TEST_CASE("elementwise ops reject mismatched shapes") {
    CHECK_THROWS_AS(NumArray::matrix(2, 2) + NumArray::matrix(2, 3), DimensionError);
    CHECK_THROWS_AS(hadamard(NumArray::matrix(1, 2), NumArray::matrix(2, 1)), DimensionError);
}

TEST_CASE("inverse of a well conditioned matrix") {
    const NumArray a = NumArray::from_rows({{4, 7}, {2, 6}});
    const NumArray inv = mat_inverse(a);
    CHECK(inv(0, 0) == doctest::Approx(0.6));
    CHECK(inv(0, 1) == doctest::Approx(-0.7));
    CHECK(inv(1, 0) == doctest::Approx(-0.2));
    CHECK(inv(1, 1) == doctest::Approx(0.4));
    CHECK(max_abs_diff(matmul(a, inv), NumArray::identity(2)) < 1e-12);
}

TEST_CASE("singular matrix reports a condition estimate") {
    const NumArray a = NumArray::from_rows({{1, 2}, {2, 4}});
    try {
        mat_inverse(a);
        FAIL("expected SingularityError");
    } catch (const SingularityError& e) {
        CHECK(e.condition_estimate() > 1e12);
    }
    const NumArray nearly = NumArray::from_rows({{1, 1}, {1, 1 + 1e-14}});
    CHECK_THROWS_AS(mat_inverse(nearly), SingularityError);
}

TEST_CASE("spectral norm of a diagonal matrix") {
    NumArray d = NumArray::matrix(3, 3);
    d(0, 0) = -3.0;
    d(1, 1) = 1.0;
    d(2, 2) = 2.0;
    CHECK(spectral_norm(d) == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("block_diagonal places blocks on the diagonal") {
    const NumArray bd = block_diagonal({NumArray::from_rows({{1, 2}, {3, 4}}), NumArray::scalar(5)});
    CHECK(bd.rows() == 3);
    CHECK(bd(0, 1) == 2);
    CHECK(bd(2, 2) == 5);
    CHECK(bd(0, 2) == 0);
    CHECK(bd(2, 0) == 0);
}

TEST_CASE("softplus helpers are inverse to each other and stable") {
    for (double y : {1e-8, 0.01, 0.5, 3.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-10));
    CHECK(softplus(800.0) == doctest::Approx(800.0));
    CHECK(softplus(-800.0) >= 0.0);
    CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("reverse mode matches finite differences per op") {
    using gradcheck::weighted;
    using gradcheck::worst_error;
    const NumArray a = rnd(3, 4, 1), b = rnd(4, 2, 2), c = rnd(3, 4, 3), r = rnd(1, 4, 4);

    SUBCASE("matmul") {
        CHECK(worst_error(weighted([](Tape&, auto& v) { return matmul(v[0], v[1]); }), {a, b}) < 1e-7);
    }
    SUBCASE("matmul_transb") {
        CHECK(worst_error(weighted([](Tape&, auto& v) { return matmul_transb(v[0], v[1]); }), {a, c}) < 1e-7);
    }
    SUBCASE("transpose, add, sub, mul") {
        auto f = weighted([](Tape&, auto& v) { return mul(sub(add(v[0], v[1]), v[1]), transpose(transpose(v[1]))); });
        CHECK(worst_error(f, {a, c}) < 1e-7);
    }
    SUBCASE("add_row broadcast") {
        CHECK(worst_error(weighted([](Tape&, auto& v) { return add_row(v[0], v[1]); }), {a, r}) < 1e-7);
    }
    SUBCASE("scale and add_scalar") {
        CHECK(worst_error(weighted([](Tape&, auto& v) { return add_scalar(scale(v[0], -2.5), 0.3); }), {a}) < 1e-7);
    }
    SUBCASE("smooth nonlinearities") {
        CHECK(worst_error(weighted([](Tape&, auto& v) { return silu(v[0]); }), {a}) < 1e-7);
        CHECK(worst_error(weighted([](Tape&, auto& v) { return softplus(v[0]); }), {a}) < 1e-7);
        CHECK(worst_error(weighted([](Tape&, auto& v) { return square(v[0]); }), {a}) < 1e-7);
        CHECK(worst_error(weighted([](Tape&, auto& v) { return log(softplus(v[0])); }), {a}) < 1e-6);
    }
    SUBCASE("reductions") {
        CHECK(worst_error([](Tape&, auto& v) { return mean(square(v[0])); }, {a}) < 1e-7);
        CHECK(worst_error([](Tape&, auto& v) { return sum(v[0]); }, {a}) < 1e-7);
    }
    SUBCASE("inverse") {
        NumArray m = rnd(4, 4, 5, 0.3);
        for (std::size_t i = 0; i < 4; ++i) m(i, i) += 2.0;
        CHECK(worst_error(weighted([](Tape&, auto& v) { return inverse(v[0]); }), {m}) < 1e-6);
    }
    SUBCASE("gather_rows with repeats") {
        const NumArray table = rnd(5, 3, 6);
        auto f = weighted([](Tape&, auto& v) { return gather_rows(v[0], {4, 0, 4, 2}); });
        CHECK(worst_error(f, {table}) < 1e-7);
    }
    SUBCASE("layer_norm") {
        const NumArray x = rnd(3, 6, 7), g = rnd(1, 6, 8), s = rnd(1, 6, 9);
        auto f = weighted([](Tape&, auto& v) { return layer_norm(v[0], v[1], v[2]); });
        CHECK(worst_error(f, {x, g, s}) < 1e-6);
    }
    SUBCASE("reparameterize") {
        const NumArray eps = rnd(3, 4, 10);
        auto f = weighted([eps](Tape&, auto& v) { return reparameterize(v[0], v[1], eps); });
        CHECK(worst_error(f, {a, c}) < 1e-7);
    }
    SUBCASE("block_diag") {
        const NumArray p = rnd(2, 2, 11), q = rnd(3, 3, 12);
        auto f = weighted([](Tape&, auto& v) { return block_diag({v[0], v[1]}); });
        CHECK(worst_error(f, {p, q}) < 1e-7);
    }
}

TEST_CASE("shared subexpressions accumulate gradients") {
    Tape t;
    Var x = t.leaf(NumArray::scalar(3.0));
    Var y = mul(x, x);
    Var z = add(y, scale(x, 2.0));
    t.backward(z);
    CHECK(x.grad().item() == doctest::Approx(8.0));
}

TEST_CASE("unreached leaves get zero gradient") {
    Tape t;
    Var x = t.leaf(NumArray::matrix(2, 2, 1.0));
    Var unused = t.leaf(NumArray::matrix(3, 1, 1.0));
    t.backward(sum(x));
    CHECK(unused.grad().shape() == std::vector<std::size_t>{3, 1});
    CHECK(max_abs(unused.grad()) == 0.0);
}

TEST_CASE("backward needs a scalar root") {
    Tape t;
    Var x = t.leaf(NumArray::matrix(2, 2, 1.0));
    CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("op_count ignores leaves and constants") {
    Tape t;
    Var x = t.leaf(NumArray::matrix(2, 2, 1.0));
    Var c = t.constant(NumArray::matrix(2, 2, 2.0));
    Var y = sum(mul(x, c));
    (void)y;
    CHECK(t.op_count() == 2);
    CHECK(t.op_log().size() == 4);
}

TEST_CASE("constants receive no gradient requirement") {
    Tape t;
    Var c = t.constant(NumArray::scalar(1.0));
    CHECK_FALSE(t.requires_grad(c.id()));
}
