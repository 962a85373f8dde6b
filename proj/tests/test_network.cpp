#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "helpers.hpp"
#include "pointkit/config.hpp"
#include "pointkit/network.hpp"

using namespace pointkit;
using namespace pointkit::testing;

namespace {

Block toy_block(std::size_t c, std::size_t g, bool pe_multiplier, std::uint64_t seed) {
  AttentionConfig cfg;
  cfg.channels = c;
  cfg.groups = g;
  cfg.weight_encoding = WeightEncodingKind::kGroupedNormActLinear;
  Rng rng(seed);
  return make_block(cfg, pe_multiplier, rng, "blk");
}

}  // namespace

TEST_CASE("zeroing both residual branches makes the block an identity") {
  Block block = toy_block(8, 4, true, 1);
  block.attn_proj.weight->value.fill(0.0);
  block.attn_proj.bias->value.fill(0.0);
  block.ffn2.weight->value.fill(0.0);
  block.ffn2.bias->value.fill(0.0);
  const PointCloud cloud = random_cloud(20, 8, 2);
  const NeighborTable nt = knn(cloud, cloud, 4);
  const PointCloud out = block_forward(block, cloud, nt);
  CHECK(max_abs_diff(out.features, cloud.features) == 0.0);
  CHECK(max_abs_diff(out.positions, cloud.positions) == 0.0);
}

TEST_CASE("a block handles a single self-attending point") {
  const Block block = toy_block(8, 2, true, 3);
  const PointCloud cloud = random_cloud(1, 8, 4);
  const NeighborTable nt({0, 1}, {0}, 1);
  const PointCloud out = block_forward(block, cloud, nt);
  CHECK(out.features.rows() == 1);
  CHECK(all_finite(out.features));
}

TEST_CASE("a block is permutation equivariant") {
  const Block block = toy_block(8, 4, true, 5);
  const PointCloud cloud = random_cloud(1000, 8, 6);
  Rng rng(7);
  const std::vector<Index> perm = random_permutation(cloud.size(), rng);
  const PointCloud shuffled = permute_cloud(cloud, perm);
  const Tensor base = block_forward(block, cloud, knn(cloud, cloud, 8)).features;
  const Tensor permuted =
      block_forward(block, shuffled, knn(shuffled, shuffled, 8)).features;
  CHECK(max_abs_diff(unpermute_rows(permuted, perm), base) < 1e-9);
}

TEST_CASE("the toy unet runs on a single point") {
  const BackboneConfig cfg = BackboneConfig::toy();
  const SegmentationModel model(cfg);
  const PointCloud cloud = random_cloud(1, 3, 8);
  const Tensor logits = model.logits(cloud);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == cfg.classes);
  CHECK(all_finite(logits));
}

TEST_CASE("unet forward keeps the input resolution and stem width") {
  const BackboneConfig cfg = BackboneConfig::toy();
  const UNet net(cfg);
  const PointCloud cloud = random_cloud(2000, 3, 9);
  const Tensor features = net.forward_features(cloud);
  CHECK(features.rows() == 2000);
  CHECK(features.cols() == cfg.stem_dim);
  CHECK(all_finite(features));
}

TEST_CASE("default-width unet emits 48-channel features") {
  BackboneConfig cfg;  // default dims, stem 48
  cfg.encoder_depths = {1, 1, 1, 1};  // keep runtime small; widths unchanged
  cfg.decoder_depths = {1, 1, 1, 1};
  const UNet net(cfg);
  const PointCloud cloud = random_cloud(300, 3, 10);
  const Tensor features = net.forward_features(cloud);
  CHECK(features.rows() == 300);
  CHECK(features.cols() == 48);
  CHECK(all_finite(features));
}

TEST_CASE("unet is translation invariant") {
  const BackboneConfig cfg = BackboneConfig::toy();
  const SegmentationModel model(cfg);
  const PointCloud cloud = random_cloud(1500, 3, 11);
  const Tensor base = model.logits(cloud);
  const Tensor moved = model.logits(translate_cloud(cloud, 12.3, -4.5, 6.7));
  CHECK(max_abs_diff(base, moved) < 1e-9);
}

TEST_CASE("unet is permutation equivariant") {
  const BackboneConfig cfg = BackboneConfig::toy();
  const SegmentationModel model(cfg);
  const PointCloud cloud = random_cloud(1200, 3, 12);
  Rng rng(13);
  const std::vector<Index> perm = random_permutation(cloud.size(), rng);
  const Tensor base = model.logits(cloud);
  const Tensor permuted = model.logits(permute_cloud(cloud, perm));
  CHECK(max_abs_diff(unpermute_rows(permuted, perm), base) < 1e-9);
}

TEST_CASE("stage point counts are non-increasing through the encoder") {
  // Grid pooling merges points, so each stage has at most as many points as
  // the one before; verified via the stage partitions directly.
  const BackboneConfig cfg = BackboneConfig::toy();
  const PointCloud cloud = random_cloud(3000, 3, 14);
  std::size_t prev = cloud.size();
  PointCloud cur = cloud;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    const PartitionMap map = grid_partition(cur, GridSpec(cfg.stage_grid(s)));
    const std::size_t next = static_cast<std::size_t>(map.n_cells);
    CHECK(next <= prev);
    Tensor pos = cell_mean_positions(cur, map);
    cur = PointCloud(std::move(pos), Tensor({next, 0}));
    prev = next;
  }
}

TEST_CASE("unet runs with every pooling method and both fusion modes") {
  const PointCloud cloud = random_cloud(600, 3, 15);
  for (const PoolMethod method : {PoolMethod::kGrid, PoolMethod::kFpsKnn, PoolMethod::kGridKnn}) {
    for (const SkipFusion fusion : {SkipFusion::kConcat, SkipFusion::kAdd}) {
      BackboneConfig cfg = BackboneConfig::toy();
      cfg.pooling = method;
      cfg.skip_fusion = fusion;
      cfg.pool_ratio = 0.25;
      const UNet net(cfg);
      const Tensor features = net.forward_features(cloud);
      CHECK(features.rows() == 600);
      CHECK(all_finite(features));
    }
  }
}

TEST_CASE("unet runs with shifted-grid attention") {
  BackboneConfig cfg = BackboneConfig::toy();
  cfg.attention = AttentionRefMode::kShiftedGrid;
  cfg.encoder_depths = {2, 2, 2, 2};  // even depths exercise both shifts
  const UNet net(cfg);
  const PointCloud cloud = random_cloud(800, 3, 16);
  const Tensor features = net.forward_features(cloud);
  CHECK(all_finite(features));
}

TEST_CASE("seg head reduces to its bias rows when zeroed") {
  Rng rng(17);
  SegHead head = SegHead::create(6, 3, rng);
  head.mlp.first.weight->value.fill(0.0);
  head.mlp.first.bias->value.fill(0.0);
  head.mlp.second.weight->value.fill(0.0);
  head.mlp.second.bias->value = Tensor({1, 3}, {1.0, 2.0, 3.0});
  Tape tape;
  const Tensor logits = tape.value(head.apply(tape, tape.constant(randn(rng, {5, 6}))));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(logits.at(i, j) == doctest::Approx(j + 1.0));
}

TEST_CASE("cls head on identical rows equals the head applied to one row") {
  Rng rng(18);
  const ClsHead head = ClsHead::create(5, 4, rng);
  Tensor features({8, 5});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 5; ++j) features.at(i, j) = 0.1 * static_cast<double>(j) - 0.2;
  Tape tape;
  const Tensor logits = tape.value(head.apply(tape, tape.constant(features)));
  Tape tape1;
  Tensor one_row({1, 5});
  for (std::size_t j = 0; j < 5; ++j) one_row.at(0, j) = features.at(0, j);
  const Tensor expect = tape1.value(head.mlp.apply(tape1, tape1.constant(one_row)));
  CHECK(max_abs_diff(logits, expect) < 1e-12);
}

TEST_CASE("cls head is permutation invariant and rejects empty input") {
  Rng rng(19);
  const ClsHead head = ClsHead::create(4, 3, rng);
  const Tensor features = randn(rng, {10, 4});
  Rng rp(20);
  const std::vector<Index> perm = random_permutation(10, rp);
  Tensor shuffled({10, 4});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      shuffled.at(i, j) = features.at(static_cast<std::size_t>(perm[i]), j);
  Tape ta, tb;
  const Tensor a = ta.value(head.apply(ta, ta.constant(features)));
  const Tensor b = tb.value(head.apply(tb, tb.constant(shuffled)));
  CHECK(max_abs_diff(a, b) < 1e-12);

  Tape tc;
  CHECK_THROWS_AS(head.apply(tc, tc.constant(Tensor({0, 4}))), std::invalid_argument);
}

TEST_CASE("count_params: a single grouped linear of c=8 g=4 has 8 parameters") {
  Rng rng(21);
  const auto we = make_weight_encoding(WeightEncodingKind::kGroupedLinear, 8, 4, rng);
  CHECK(we.param_count() == 8);
}

TEST_CASE("toggling the PE multiplier changes the count by exactly the multiplier MLPs") {
  BackboneConfig with = BackboneConfig::toy();
  with.pe_multiplier = true;
  BackboneConfig without = BackboneConfig::toy();
  without.pe_multiplier = false;
  const UNet net_with(with);
  const std::size_t diff = count_params(with) - count_params(without);
  CHECK(diff == net_with.pe_multiplier_param_count());

  // Closed form: one multiplier MLP (3 -> c -> c) per block.
  const auto mul_params = [](std::size_t c) { return (3 * c + c) + 2 * c + (c * c + c); };
  std::size_t expect = mul_params(with.stem_dim);
  for (std::size_t s = 0; s < with.stages(); ++s)
    expect += with.encoder_depths[s] * mul_params(with.dims[s]);
  for (std::size_t s = 0; s < with.stages(); ++s) {
    const std::size_t dec_dim = s == 0 ? with.stem_dim : with.dims[s - 1];
    expect += with.decoder_depths[s] * mul_params(dec_dim);
  }
  CHECK(diff == expect);
}

TEST_CASE("dense vs grouped weight encoding differ by c*g + g - c per block") {
  BackboneConfig dense = BackboneConfig::toy();
  dense.weight_encoding = WeightEncodingKind::kLinear;
  BackboneConfig grouped = BackboneConfig::toy();
  grouped.weight_encoding = WeightEncodingKind::kGroupedLinear;

  const auto per_block = [](std::size_t c, std::size_t g) { return c * g + g - c; };
  std::size_t expect = per_block(dense.stem_dim, dense.stem_groups);
  for (std::size_t s = 0; s < dense.stages(); ++s)
    expect += dense.encoder_depths[s] * per_block(dense.dims[s], dense.groups[s]);
  for (std::size_t s = 0; s < dense.stages(); ++s) {
    const std::size_t c = s == 0 ? dense.stem_dim : dense.dims[s - 1];
    const std::size_t g = s == 0 ? dense.stem_groups : dense.groups[s - 1];
    expect += dense.decoder_depths[s] * per_block(c, g);
  }
  CHECK(count_params(dense) - count_params(grouped) == expect);
}

TEST_CASE("stage grids compound the multipliers over the base grid") {
  BackboneConfig cfg;
  cfg.base_grid = 0.02;
  cfg.grid_multipliers = {3.0, 2.5, 2.5, 2.5};
  CHECK(cfg.stage_grid(0) == doctest::Approx(0.06));
  CHECK(cfg.stage_grid(1) == doctest::Approx(0.15));
  CHECK(cfg.stage_grid(2) == doctest::Approx(0.375));
  CHECK(cfg.stage_grid(3) == doctest::Approx(0.9375));
}

TEST_CASE("config invariants are enforced") {
  BackboneConfig cfg = BackboneConfig::toy();
  cfg.groups = {3, 8, 8, 8};  // 16 % 3 != 0
  CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  cfg = BackboneConfig::toy();
  cfg.dims.pop_back();
  CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  cfg = BackboneConfig::toy();
  cfg.base_grid = 0.0;
  CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
}

TEST_CASE("config files round-trip and reject unknown keys") {
  const BackboneConfig toy = BackboneConfig::toy();
  const std::string path = "roundtrip.cfg";
  {
    std::ofstream out(path);
    out << format_backbone_config(toy);
  }
  const BackboneConfig parsed = parse_backbone_config(path);
  CHECK(parsed.stem_dim == toy.stem_dim);
  CHECK(parsed.dims == toy.dims);
  CHECK(parsed.groups == toy.groups);
  CHECK(parsed.weight_encoding == toy.weight_encoding);
  CHECK(parsed.pe_multiplier == toy.pe_multiplier);
  CHECK(parsed.k == toy.k);

  {
    std::ofstream out(path);
    out << "bogus_key = 3\n";
  }
  CHECK_THROWS_AS(parse_backbone_config(path), std::invalid_argument);
  {
    std::ofstream out(path);
    out << "stem_dim = \n";
  }
  CHECK_THROWS_AS(parse_backbone_config(path), std::invalid_argument);
  std::remove(path.c_str());
}
