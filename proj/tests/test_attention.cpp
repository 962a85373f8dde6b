#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "pointkit/attention.hpp"
#include "pointkit/spatial.hpp"
#include "pointkit_oracles/oracles.hpp"
#include "pointkit_oracles/suites.hpp"

using namespace pointkit;
using namespace pointkit::testing;

namespace {

AttentionParams basic_params(std::size_t c, std::size_t g, WeightEncodingKind kind,
                             std::uint64_t seed) {
  AttentionConfig cfg;
  cfg.channels = c;
  cfg.groups = g;
  cfg.weight_encoding = kind;
  Rng rng(seed);
  return make_attention_params(cfg, rng);
}

NeighborTable all_pairs(std::size_t n) {
  std::vector<Index> offsets{0};
  std::vector<Index> indices;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) indices.push_back(static_cast<Index>(j));
    offsets.push_back(static_cast<Index>(indices.size()));
  }
  return NeighborTable(std::move(offsets), std::move(indices), n);
}

}  // namespace

TEST_CASE("scalar attention over a self-only neighborhood returns the value row") {
  const PointCloud cloud = random_cloud(1, 6, 3);
  const NeighborTable nt({0, 1}, {0}, 1);
  const AttentionParams params = basic_params(6, 1, WeightEncodingKind::kLinear, 5);
  const Tensor out = scalar_attention(cloud, nt, params);
  const Tensor v = matmul(cloud.features, params.value.weight->value);
  CHECK(max_abs_diff(out, v) < 1e-15);
}

TEST_CASE("identical queries and keys mix two values evenly") {
  const PointCloud cloud = random_cloud(2, 4, 7);
  AttentionParams params = basic_params(4, 1, WeightEncodingKind::kLinear, 8);
  params.query.weight->value.fill(0.0);  // all queries/keys identical -> uniform softmax
  params.key.weight->value.fill(0.0);
  Tensor softmax;
  const Tensor out = scalar_attention(cloud, all_pairs(2), params, &softmax);
  for (std::size_t i = 0; i < softmax.rows(); ++i)
    CHECK(softmax.at(i, 0) == doctest::Approx(0.5).epsilon(1e-15));
  const Tensor v = matmul(cloud.features, params.value.weight->value);
  for (std::size_t j = 0; j < 4; ++j) {
    const double mix = 0.5 * (v.at(0, j) + v.at(1, j));
    CHECK(out.at(0, j) == doctest::Approx(mix).epsilon(1e-12));
    CHECK(out.at(1, j) == doctest::Approx(mix).epsilon(1e-12));
  }
}

TEST_CASE("scalar attention equals the dense masked oracle on a random instance") {
  const PointCloud cloud = random_cloud(50, 8, 11);
  const NeighborTable nt = knn(cloud, cloud, 6);
  const AttentionParams params = basic_params(8, 1, WeightEncodingKind::kLinear, 12);
  const Tensor mine = scalar_attention(cloud, nt, params);
  const Tensor oracle = oracles::dense_scalar_attention(cloud, nt, params);
  CHECK(max_abs_diff(mine, oracle) < 1e-12);
}

TEST_CASE("multi-head attention with one head equals scalar attention") {
  const PointCloud cloud = random_cloud(20, 6, 13);
  const NeighborTable nt = knn(cloud, cloud, 4);
  const AttentionParams params = basic_params(6, 1, WeightEncodingKind::kLinear, 14);
  CHECK(max_abs_diff(multi_head_attention(cloud, nt, params, 1),
                     scalar_attention(cloud, nt, params)) == 0.0);
}

TEST_CASE("head-separable values light up only their head's channels") {
  const std::size_t c = 8, heads = 4, ch = c / heads;
  const PointCloud cloud = random_cloud(12, c, 15);
  const NeighborTable nt = knn(cloud, cloud, 3);
  AttentionParams params = basic_params(c, heads, WeightEncodingKind::kFixedGroupSum, 16);
  // Zero every value-projection column outside head 2.
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (j / ch != 2) params.value.weight->value.at(i, j) = 0.0;
  const Tensor out = multi_head_attention(cloud, nt, params, heads);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (j / ch != 2) CHECK(out.at(i, j) == 0.0);
}

TEST_CASE("multi-head attention equals gva with the fixed group-sum encoding") {
  const auto result = suites::gva_vs_multi_head(/*seed=*/17, /*trials=*/25);
  CHECK(result.ok);
  CHECK(result.worst <= 1e-10);
}

TEST_CASE("vector attention with identity encoding and one neighbor returns the value") {
  const PointCloud cloud = random_cloud(1, 5, 18);
  const NeighborTable nt({0, 1}, {0}, 1);
  // group-sum encoding with g=c is the identity map
  const AttentionParams params = basic_params(5, 5, WeightEncodingKind::kFixedGroupSum, 19);
  const Tensor out = vector_attention(cloud, nt, params);
  const Tensor v = matmul(cloud.features, params.value.weight->value);
  CHECK(max_abs_diff(out, v) < 1e-15);
}

TEST_CASE("gva with g=c equals vector attention") {
  const auto result = suites::gva_vs_vector_attention(/*seed=*/20, /*trials=*/25);
  CHECK(result.ok);
  CHECK(result.worst <= 1e-10);
}

TEST_CASE("vector attention matches the ragged loop oracle") {
  const PointCloud cloud = random_cloud(30, 8, 21);
  const NeighborTable nt = knn(cloud, cloud, 5);
  const AttentionParams params = basic_params(8, 8, WeightEncodingKind::kLinear, 22);
  CHECK(max_abs_diff(vector_attention(cloud, nt, params),
                     oracles::loop_vector_attention(cloud, nt, params)) < 1e-12);
}

TEST_CASE("gva matches the ragged loop oracle across encodings and reference modes") {
  Rng rng(23);
  const WeightEncodingKind kinds[] = {
      WeightEncodingKind::kFixedGroupSum, WeightEncodingKind::kLinear,
      WeightEncodingKind::kGroupedLinear, WeightEncodingKind::kLinearNormActLinear,
      WeightEncodingKind::kGroupedNormActLinear};
  for (const auto kind : kinds) {
    const PointCloud cloud = random_cloud(24, 8, rng.next_u64());
    const NeighborTable nt = rng.below(2) == 0 ? knn(cloud, cloud, 4)
                                               : grid_reference_sets(cloud, GridSpec(0.4));
    AttentionConfig cfg;
    cfg.channels = 8;
    cfg.groups = 4;
    cfg.weight_encoding = kind;
    Rng rp = rng.split("p");
    const AttentionParams params = make_attention_params(cfg, rp);
    CHECK(max_abs_diff(gva(cloud, nt, cfg, params),
                       oracles::loop_gva(cloud, nt, cfg, params)) < 1e-12);
  }
}

TEST_CASE("gva single neighbor hand case: softmax weight 1, output = neighbor value") {
  const PointCloud cloud = random_cloud(1, 4, 24);
  const NeighborTable nt({0, 1}, {0}, 1);
  AttentionConfig cfg;
  cfg.channels = 4;
  cfg.groups = 2;
  cfg.weight_encoding = WeightEncodingKind::kGroupedLinear;
  Rng rng(25);
  const AttentionParams params = make_attention_params(cfg, rng);
  Tensor softmax;
  const Tensor out = gva(cloud, nt, cfg, params, &softmax);
  CHECK(softmax.at(0, 0) == 1.0);
  CHECK(softmax.at(0, 1) == 1.0);
  CHECK(max_abs_diff(out, matmul(cloud.features, params.value.weight->value)) < 1e-15);
}

TEST_CASE("perturbing one value channel changes only that output channel") {
  const PointCloud cloud = random_cloud(15, 8, 26);
  const NeighborTable nt = knn(cloud, cloud, 4);
  AttentionConfig cfg;
  cfg.channels = 8;
  cfg.groups = 2;
  cfg.weight_encoding = WeightEncodingKind::kGroupedNormActLinear;
  Rng rng(27);
  AttentionParams params = make_attention_params(cfg, rng);

  Tensor softmax_before, softmax_after;
  const Tensor before = gva(cloud, nt, cfg, params, &softmax_before);
  for (std::size_t i = 0; i < 8; ++i) params.value.weight->value.at(i, 5) += 0.25;
  const Tensor after = gva(cloud, nt, cfg, params, &softmax_after);

  CHECK(max_abs_diff(softmax_before, softmax_after) == 0.0);  // weights ignore values
  for (std::size_t i = 0; i < before.rows(); ++i)
    for (std::size_t j = 0; j < 8; ++j)
      if (j != 5) CHECK(before.at(i, j) == after.at(i, j));
  CHECK(max_abs_diff(before, after) > 1e-6);  // channel 5 did change
}

TEST_CASE("gva is permutation equivariant") {
  Rng rng(28);
  const PointCloud cloud = random_cloud(40, 8, 29);
  AttentionConfig cfg;
  cfg.channels = 8;
  cfg.groups = 4;
  cfg.weight_encoding = WeightEncodingKind::kGroupedNormActLinear;
  Rng rp(30);
  const AttentionParams params = make_attention_params(cfg, rp);

  const Tensor base = gva(cloud, knn(cloud, cloud, 5), cfg, params);
  const std::vector<Index> perm = random_permutation(cloud.size(), rng);
  const PointCloud shuffled = permute_cloud(cloud, perm);
  const Tensor permuted = gva(shuffled, knn(shuffled, shuffled, 5), cfg, params);
  CHECK(max_abs_diff(unpermute_rows(permuted, perm), base) < 1e-10);
}

TEST_CASE("weight encoding parameter counts") {
  Rng rng(31);
  const std::size_t c = 16, g = 4;
  const auto count = [&](WeightEncodingKind kind) {
    Rng r = rng.split(to_string(kind));
    return make_weight_encoding(kind, c, g, r).param_count();
  };
  CHECK(count(WeightEncodingKind::kFixedGroupSum) == 0);
  CHECK(count(WeightEncodingKind::kLinear) == c * g + g);
  CHECK(count(WeightEncodingKind::kGroupedLinear) == c);
  CHECK(count(WeightEncodingKind::kLinearNormActLinear) == (c * g + g) + 2 * g + (g * g + g));
  CHECK(count(WeightEncodingKind::kGroupedNormActLinear) == c + 2 * g + (g * g + g));
}

TEST_CASE("grouped projection has exactly g times fewer weights than the dense one") {
  Rng rng(32);
  for (const auto [c, g] : std::vector<std::pair<std::size_t, std::size_t>>{
           {8, 2}, {16, 4}, {48, 12}, {384, 48}}) {
    Rng rl = rng.split("l");
    Rng rg = rng.split("g");
    const auto dense = make_weight_encoding(WeightEncodingKind::kLinear, c, g, rl);
    const auto grouped = make_weight_encoding(WeightEncodingKind::kGroupedLinear, c, g, rg);
    CHECK(dense.projection_weight_count() == g * grouped.projection_weight_count());
  }
}

TEST_CASE("unknown weight encoding names are rejected") {
  CHECK_THROWS_AS(weight_encoding_from_string("bogus"), std::invalid_argument);
  CHECK(weight_encoding_from_string("GL+N+A+L") == WeightEncodingKind::kGroupedNormActLinear);
}

TEST_CASE("encoding with norm+mix stays finite and differentiable") {
  Rng rng(33);
  const auto results = suites::gradient_suite("gva", 34, 5);
  REQUIRE(results.size() == 1);
  CHECK(results[0].ok);
}

TEST_CASE("softmax weights sum to one for every variant and reference mode") {
  Rng rng(35);
  const PointCloud cloud = random_cloud(30, 8, 36);
  const std::vector<NeighborTable> tables = {
      knn(cloud, cloud, 5),
      grid_reference_sets(cloud, GridSpec(0.4)),
      grid_reference_sets(cloud, GridSpec(0.4, {0.5, 0.5, 0.5})),
  };
  AttentionConfig cfg;
  cfg.channels = 8;
  cfg.groups = 4;
  cfg.weight_encoding = WeightEncodingKind::kGroupedNormActLinear;
  Rng rp(37);
  const AttentionParams params = make_attention_params(cfg, rp);

  for (const NeighborTable& nt : tables) {
    std::vector<Tensor> weights(4);
    scalar_attention(cloud, nt, params, &weights[0]);
    multi_head_attention(cloud, nt, params, 4, &weights[1]);
    vector_attention(cloud, nt, params, &weights[2]);
    gva(cloud, nt, cfg, params, &weights[3]);
    for (const Tensor& sm : weights) {
      for (std::size_t i = 0; i < nt.query_size(); ++i)
        for (std::size_t l = 0; l < sm.cols(); ++l) {
          double sum = 0.0;
          for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i)); ++t)
            sum += sm.at(static_cast<std::size_t>(t), l);
          CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
  }
}

TEST_CASE("value-side position bias is off by default and requires a position encoder") {
  const PointCloud cloud = random_cloud(10, 4, 38);
  const NeighborTable nt = knn(cloud, cloud, 3);
  AttentionConfig cfg;
  cfg.channels = 4;
  cfg.groups = 2;
  cfg.weight_encoding = WeightEncodingKind::kGroupedLinear;
  cfg.value_position_bias = true;
  Rng rng(39);
  const AttentionParams without_posenc = make_attention_params(cfg, rng);
  CHECK_THROWS_AS(gva(cloud, nt, cfg, without_posenc), std::invalid_argument);

  PosEncConfig pe;
  pe.mode = PosEncMode::kBiasOnly;
  Rng rng2(40);
  const AttentionParams with_posenc = make_attention_params(cfg, rng2, pe);
  const Tensor biased = gva(cloud, nt, cfg, with_posenc);
  AttentionConfig plain = cfg;
  plain.value_position_bias = false;
  const Tensor unbiased = gva(cloud, nt, plain, with_posenc);
  CHECK(max_abs_diff(biased, unbiased) > 1e-9);  // the option does something
  CHECK(max_abs_diff(biased, oracles::loop_gva(cloud, nt, cfg, with_posenc)) < 1e-12);
}
