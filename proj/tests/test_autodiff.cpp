#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "pointkit/nn.hpp"
#include "pointkit_oracles/oracles.hpp"
#include "pointkit_oracles/suites.hpp"

using namespace pointkit;
using namespace pointkit::testing;

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("linear with identity weights and zero bias is a passthrough") {
  Rng rng(1);
  const Tensor x = randn(rng, {6, 4});
  LinearLayer lin;
  lin.weight = Param::make("W", identity(4));
  lin.bias = Param::make("b", Tensor::zeros({1, 4}));
  Tape tape;
  const Tensor& out = tape.value(lin.apply(tape, tape.constant(x)));
  CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("1x1 linear: 2*3 + 1 = 7") {
  LinearLayer lin;
  lin.weight = Param::make("W", Tensor({1, 1}, {3.0}));
  lin.bias = Param::make("b", Tensor({1, 1}, {1.0}));
  Tape tape;
  const Tensor& out = tape.value(lin.apply(tape, tape.constant(Tensor({1, 1}, {2.0}))));
  CHECK(out[0] == doctest::Approx(7.0).epsilon(0));
}

TEST_CASE("linear gradients match central differences to 1e-6") {
  Rng rng(2);
  Rng rl = rng.split("layer");
  const LinearLayer lin = LinearLayer::create("lin", 4, 5, true, rl);
  const ParamPtr x = Param::make("x", randn(rng, {5, 4}));
  const Tensor proj = randn(rng, {5, 5});
  std::vector<ParamPtr> params{x};
  lin.collect(params);
  const auto report = grad_check(
      [&](Tape& t) { return t.sum(t.mul(lin.apply(t, t.use(x)), t.constant(proj))); }, params,
      1e-5, 1e-6);
  CHECK(report.ok);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("shape mismatches raise with both shapes in the message") {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}));
  const Var b = tape.constant(Tensor({3, 3}));
  try {
    tape.add(a, b);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(tape.matmul(a, tape.constant(Tensor({2, 2}))), std::invalid_argument);
}

TEST_CASE("grouped_linear with g=1 equals the plain dot product") {
  Rng rng(3);
  const Tensor r = randn(rng, {7, 6});
  const Tensor p = randn(rng, {1, 6});
  Tape tape;
  const Tensor& grouped =
      tape.value(tape.grouped_linear(tape.constant(r), tape.constant(p), 1));
  for (std::size_t i = 0; i < 7; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < 6; ++j) dot += r.at(i, j) * p[j];
    CHECK(grouped.at(i, 0) == doctest::Approx(dot).epsilon(1e-12));
  }
}

TEST_CASE("grouped_linear hand case: c=4 g=2 ones -> [3, 7]") {
  Tape tape;
  const Var r = tape.constant(Tensor({1, 4}, {1, 2, 3, 4}));
  const Var p = tape.constant(Tensor({1, 4}, {1, 1, 1, 1}));
  const Tensor& out = tape.value(tape.grouped_linear(r, p, 2));
  CHECK(out.at(0, 0) == 3.0);
  CHECK(out.at(0, 1) == 7.0);
}

TEST_CASE("grouped_linear equals the materialized block-diagonal matrix") {
  Rng rng(4);
  const Tensor r = randn(rng, {9, 8});
  const Tensor p = randn(rng, {1, 8});
  const Tensor dense = oracles::materialize_grouped_linear(p, 4);
  Tape tape;
  const Tensor& grouped =
      tape.value(tape.grouped_linear(tape.constant(r), tape.constant(p), 4));
  CHECK(max_abs_diff(grouped, matmul(r, dense)) < 1e-14);
}

TEST_CASE("grouped_linear rejects c not divisible by g") {
  Tape tape;
  const Var r = tape.constant(Tensor({2, 5}));
  const Var p = tape.constant(Tensor({1, 5}));
  CHECK_THROWS_AS(tape.grouped_linear(r, p, 2), std::invalid_argument);
}

TEST_CASE("group_sum_encoding with g=c is the identity") {
  Rng rng(5);
  const Tensor r = randn(rng, {4, 6});
  Tape tape;
  const Tensor& out = tape.value(tape.group_sum_encoding(tape.constant(r), 6));
  CHECK(max_abs_diff(out, r) == 0.0);
}

TEST_CASE("group_sum_encoding hand case: [1,2,3,4] g=2 -> [3,7]/sqrt(2)") {
  Tape tape;
  const Tensor& out =
      tape.value(tape.group_sum_encoding(tape.constant(Tensor({1, 4}, {1, 2, 3, 4})), 2));
  CHECK(out.at(0, 0) == doctest::Approx(3.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(out.at(0, 1) == doctest::Approx(7.0 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("group_sum_encoding equals grouped_linear with 1/sqrt(cg) params") {
  Rng rng(6);
  const std::size_t c = 12, g = 3;
  const Tensor r = randn(rng, {5, c});
  const Tensor p = Tensor::full({1, c}, 1.0 / std::sqrt(static_cast<double>(c / g)));
  Tape tape;
  const Tensor& fixed = tape.value(tape.group_sum_encoding(tape.constant(r), g));
  const Tensor& learned =
      tape.value(tape.grouped_linear(tape.constant(r), tape.constant(p), g));
  CHECK(max_abs_diff(fixed, learned) < 1e-13);
}

TEST_CASE("mlp2 with zero weights broadcasts the output bias") {
  Rng rng(7);
  Rng rm = rng.split("m");
  Mlp2 mlp = Mlp2::create("m", 3, 4, 2, rm);
  mlp.first.weight->value.fill(0.0);
  mlp.first.bias->value.fill(0.0);
  mlp.second.weight->value.fill(0.0);
  mlp.second.bias->value = Tensor({1, 2}, {1.5, -2.5});
  Tape tape;
  const Tensor& out = tape.value(mlp.apply(tape, tape.constant(randn(rng, {6, 3}))));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(out.at(i, 0) == 1.5);
    CHECK(out.at(i, 1) == -2.5);
  }
}

TEST_CASE("mlp2 with identity layers and norm disabled reproduces the input") {
  Mlp2 mlp;
  mlp.use_norm = false;
  mlp.first.weight = Param::make("w1", identity(3));
  mlp.first.bias = Param::make("b1", Tensor::zeros({1, 3}));
  mlp.second.weight = Param::make("w2", identity(3));
  mlp.second.bias = Param::make("b2", Tensor::zeros({1, 3}));
  const Tensor x({1, 3}, {0.3, 1.2, 0.0});  // non-negative so ReLU passes it through
  Tape tape;
  CHECK(max_abs_diff(tape.value(mlp.apply(tape, tape.constant(x))), x) == 0.0);
}

TEST_CASE("segment softmax: singleton row gives weight 1, equal logits split evenly") {
  const NeighborTable nt({0, 1, 3}, {0, 0, 1}, 2);
  Tape tape;
  const Var w = tape.constant(Tensor({3, 1}, {0.7, 2.0, 2.0}));
  const Tensor& sm = tape.value(tape.segment_softmax(w, nt));
  CHECK(sm.at(0, 0) == 1.0);
  CHECK(sm.at(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sm.at(2, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("segment softmax sums to one per (row, column)") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Index> offsets{0};
    std::vector<Index> indices;
    const std::size_t n = 3 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = 1 + rng.below(5);
      for (std::size_t j = 0; j < row; ++j) indices.push_back(static_cast<Index>(rng.below(n)));
      offsets.push_back(static_cast<Index>(indices.size()));
    }
    const NeighborTable nt(std::move(offsets), std::move(indices), n);
    const std::size_t g = 1 + rng.below(4);
    Tape tape;
    const Tensor& sm = tape.value(
        tape.segment_softmax(tape.constant(randn(rng, {nt.total_edges(), g})), nt));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < g; ++l) {
        double sum = 0.0;
        for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i)); ++t)
          sum += sm.at(static_cast<std::size_t>(t), l);
        CHECK(std::fabs(sum - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("segment softmax rejects an empty reference set") {
  const NeighborTable nt({0, 0, 1}, {0}, 2);  // first row empty
  Tape tape;
  const Var w = tape.constant(Tensor({1, 1}, {0.0}));
  CHECK_THROWS_AS(tape.segment_softmax(w, nt), std::invalid_argument);
}

TEST_CASE("grad_check on the sum of parameters is exact") {
  Rng rng(9);
  const ParamPtr p = Param::make("p", randn(rng, {2, 5}));
  const auto report =
      grad_check([&](Tape& t) { return t.sum(t.use(p)); }, {p}, /*h=*/1e-3, /*tol=*/1e-10);
  CHECK(report.ok);
  CHECK(report.max_rel_err < 1e-10);
}

TEST_CASE("grad_check on a quadratic is exact to 1e-12") {
  Rng rng(10);
  Tensor init({1, 6});
  for (std::size_t i = 0; i < 6; ++i) {
    init[i] = (rng.below(2) == 0 ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);  // away from zero
  }
  const ParamPtr p = Param::make("theta", init);
  const auto report = grad_check(
      [&](Tape& t) {
        Var v = t.use(p);
        return t.sum(t.mul(v, v));
      },
      {p}, /*h=*/1e-2, /*tol=*/1e-12);
  CHECK(report.ok);
}

TEST_CASE("grad_check reports non-finite objectives") {
  const ParamPtr p = Param::make("p", Tensor({1, 1}, {2.0}));
  CHECK_THROWS_AS(grad_check(
                      [&](Tape& t) {
                        Var v = t.use(p);
                        return t.scale(v, std::numeric_limits<double>::infinity());
                      },
                      {p}),
                  std::runtime_error);
}

TEST_CASE("max reduction routes gradient to the first maximal row only") {
  const ParamPtr x = Param::make("x", Tensor({3, 2}, {3.0, 1.0, 3.0, 2.0, 0.0, 2.0}));
  Tape tape;
  const Var loss = tape.sum(tape.max_rows(tape.use(x)));
  tape.backward(loss);
  // column 0 ties rows 0 and 1 -> row 0; column 1 ties rows 1 and 2 -> row 1.
  CHECK(x->grad.at(0, 0) == 1.0);
  CHECK(x->grad.at(1, 0) == 0.0);
  CHECK(x->grad.at(1, 1) == 1.0);
  CHECK(x->grad.at(2, 1) == 0.0);
}

TEST_CASE("segment_max ties route to the first edge in row order") {
  const NeighborTable nt({0, 3}, {0, 1, 2}, 3);
  const ParamPtr x = Param::make("x", Tensor({3, 1}, {5.0, 5.0, 1.0}));
  Tape tape;
  const Var gathered = tape.gather_rows(tape.use(x), nt.indices);
  const Var loss = tape.sum(tape.segment_max(gathered, nt));
  tape.backward(loss);
  CHECK(x->grad.at(0, 0) == 1.0);
  CHECK(x->grad.at(1, 0) == 0.0);
}

TEST_CASE("param gradients accumulate across tapes until reset") {
  const ParamPtr p = Param::make("p", Tensor({1, 2}, {1.0, 2.0}));
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    tape.backward(tape.sum(tape.use(p)));
  }
  CHECK(p->grad[0] == 2.0);
  p->zero_grad();
  CHECK(p->grad[0] == 0.0);
}

TEST_CASE("batch_norm forward on a single row yields the shift parameter") {
  Rng rng(11);
  const NormLayer norm = NormLayer::create("n", 3);
  norm.beta->value = Tensor({1, 3}, {4.0, 5.0, 6.0});
  Tape tape;
  const Tensor& out = tape.value(norm.apply(tape, tape.constant(randn(rng, {1, 3}))));
  CHECK(out.at(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(out.at(0, 2) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("batch_norm normalizes columns to zero mean and unit variance") {
  Rng rng(12);
  const NormLayer norm = NormLayer::create("n", 4);
  Tape tape;
  const Tensor& out = tape.value(norm.apply(tape, tape.constant(randn(rng, {64, 4}))));
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 64; ++i) mean += out.at(i, j);
    mean /= 64.0;
    for (std::size_t i = 0; i < 64; ++i) var += (out.at(i, j) - mean) * (out.at(i, j) - mean);
    var /= 64.0;
    CHECK(std::fabs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps=1e-5 shrinks it slightly
  }
}

TEST_CASE("every differentiable op family passes 20-instance gradient checks") {
  for (const auto& result : suites::gradient_suite("all", /*seed=*/2024, /*trials=*/20)) {
    INFO(result.name);
    CHECK(result.ok);
    CHECK(result.worst <= 1e-4);
  }
}

TEST_CASE("backward may run once per tape and grads default to zero") {
  const ParamPtr p = Param::make("p", Tensor({1, 1}, {1.0}));
  Tape tape;
  const Var unused = tape.constant(Tensor({2, 2}));
  const Var loss = tape.sum(tape.use(p));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  const Tensor g = tape.grad(unused);
  CHECK(g.numel() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == 0.0);
}
