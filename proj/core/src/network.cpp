#include "pointkit/network.hpp"

#include <cmath>
#include <stdexcept>

namespace pointkit {

double BackboneConfig::stage_grid(std::size_t s) const {
  double g = base_grid;
  for (std::size_t t = 0; t <= s; ++t) g *= grid_multipliers[t];
  return g;
}

void BackboneConfig::check() const {
  const std::size_t s = encoder_depths.size();
  if (s == 0) throw std::invalid_argument("BackboneConfig: need at least one stage");
  if (decoder_depths.size() != s || dims.size() != s || groups.size() != s ||
      grid_multipliers.size() != s) {
    throw std::invalid_argument(
        "BackboneConfig: encoder_depths/decoder_depths/dims/groups/grid_multipliers must have "
        "equal lengths");
  }
  for (std::size_t i = 0; i < s; ++i) {
    if (groups[i] == 0 || dims[i] % groups[i] != 0) {
      throw std::invalid_argument("BackboneConfig: dims[" + std::to_string(i) + "]=" +
                                  std::to_string(dims[i]) + " not divisible by groups[" +
                                  std::to_string(i) + "]=" + std::to_string(groups[i]));
    }
    if (grid_multipliers[i] <= 0.0) {
      throw std::invalid_argument("BackboneConfig: grid multipliers must be positive");
    }
  }
  if (stem_groups == 0 || stem_dim % stem_groups != 0) {
    throw std::invalid_argument("BackboneConfig: stem_dim must be divisible by stem_groups");
  }
  if (base_grid <= 0.0) throw std::invalid_argument("BackboneConfig: base_grid must be > 0");
  if (k == 0) throw std::invalid_argument("BackboneConfig: k must be >= 1");
  if (in_channels == 0 || classes == 0) {
    throw std::invalid_argument("BackboneConfig: in_channels and classes must be >= 1");
  }
  if (!(pool_ratio > 0.0 && pool_ratio <= 1.0)) {
    throw std::invalid_argument("BackboneConfig: pool_ratio must lie in (0, 1]");
  }
  if (attention_grid_multiplier <= 0.0) {
    throw std::invalid_argument("BackboneConfig: attention_grid_multiplier must be > 0");
  }
}

BackboneConfig BackboneConfig::toy(std::size_t classes) {
  BackboneConfig cfg;
  cfg.classes = classes;
  cfg.stem_dim = 16;
  cfg.stem_groups = 4;
  cfg.encoder_depths = {1, 1, 1, 1};
  cfg.decoder_depths = {1, 1, 1, 1};
  cfg.dims = {16, 32, 32, 32};
  cfg.groups = {4, 8, 8, 8};
  cfg.grid_multipliers = {3.0, 2.5, 2.5, 2.5};
  cfg.base_grid = 0.02;
  cfg.k = 8;
  return cfg;
}

Var Block::forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                   Var features) const {
  Var x = features;
  Var a = norm1.apply(tape, x);
  a = gva_forward(tape, cloud, nt, attn_cfg, attn, a);
  a = attn_proj.apply(tape, a);
  x = tape.add(x, a);
  Var f = norm2.apply(tape, x);
  f = ffn1.apply(tape, f);
  f = tape.relu(f);
  f = ffn2.apply(tape, f);
  return tape.add(x, f);
}

std::size_t Block::param_count() const {
  return norm1.param_count() + norm2.param_count() + attn.param_count() +
         attn_proj.param_count() + ffn1.param_count() + ffn2.param_count();
}

void Block::collect(std::vector<ParamPtr>& out) const {
  norm1.collect(out);
  attn.collect(out);
  attn_proj.collect(out);
  norm2.collect(out);
  ffn1.collect(out);
  ffn2.collect(out);
}

Block make_block(const AttentionConfig& cfg, bool pe_multiplier, Rng& rng,
                 const std::string& name_prefix) {
  cfg.check();
  Block b;
  b.attn_cfg = cfg;
  const std::size_t c = cfg.channels;
  Rng r = rng.split(name_prefix);
  b.norm1 = NormLayer::create(name_prefix + ".norm1", c);
  b.norm2 = NormLayer::create(name_prefix + ".norm2", c);
  PosEncConfig pe;
  pe.mode = pe_multiplier ? PosEncMode::kMultiplierAndBias : PosEncMode::kBiasOnly;
  pe.channels = c;
  b.attn = make_attention_params(cfg, r, pe, name_prefix + ".attn");
  Rng rp = r.split("proj");
  Rng rf1 = r.split("ffn1");
  Rng rf2 = r.split("ffn2");
  b.attn_proj = LinearLayer::create(name_prefix + ".proj", c, c, true, rp);
  b.ffn1 = LinearLayer::create(name_prefix + ".ffn1", c, c, true, rf1);
  b.ffn2 = LinearLayer::create(name_prefix + ".ffn2", c, c, true, rf2);
  return b;
}

PointCloud block_forward(const Block& block, const PointCloud& cloud, const NeighborTable& nt) {
  Tape tape;
  Var f = tape.constant(cloud.features);
  Var out = block.forward(tape, cloud, nt, f);
  return PointCloud(cloud.positions, tape.value(out));
}

SegHead SegHead::create(std::size_t channels, std::size_t classes, Rng& rng) {
  SegHead h;
  Rng r = rng.split("seg_head");
  h.mlp = Mlp2::create("seg_head", channels, channels, classes, r);
  return h;
}

ClsHead ClsHead::create(std::size_t channels, std::size_t classes, Rng& rng) {
  ClsHead h;
  Rng r = rng.split("cls_head");
  // The head sees a single mean-pooled row; normalizing one row would erase
  // it (the output would be the shift parameter alone), so no norm here.
  h.mlp = Mlp2::create("cls_head", channels, channels, classes, r, /*use_norm=*/false);
  return h;
}

Var ClsHead::apply(Tape& tape, Var stage_features) const {
  if (tape.value(stage_features).rows() == 0) {
    throw std::invalid_argument("cls_head: empty feature set");
  }
  return mlp.apply(tape, tape.mean_rows(stage_features));
}

namespace {

PointCloud positions_only(Tensor positions) {
  const std::size_t n = positions.rows();
  return PointCloud(std::move(positions), Tensor({n, 0}));
}

}  // namespace

UNet::UNet(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.check();
  Rng root(cfg_.seed);
  Rng re = root.split("embed");
  embed_ = LinearLayer::create("embed", cfg_.in_channels, cfg_.stem_dim, true, re);

  AttentionConfig stem_cfg;
  stem_cfg.channels = cfg_.stem_dim;
  stem_cfg.groups = cfg_.stem_groups;
  stem_cfg.weight_encoding = cfg_.weight_encoding;
  stem_cfg.value_position_bias = cfg_.value_position_bias;
  Rng rs = root.split("stem");
  stem_ = make_block(stem_cfg, cfg_.pe_multiplier, rs, "stem");

  const std::size_t stages = cfg_.stages();
  std::size_t prev_dim = cfg_.stem_dim;
  for (std::size_t s = 0; s < stages; ++s) {
    Rng ru = root.split("pool" + std::to_string(s));
    pool_projections_.push_back(Param::make(
        "pool" + std::to_string(s) + ".proj", init_uniform({prev_dim, cfg_.dims[s]}, prev_dim, ru)));
    AttentionConfig acfg;
    acfg.channels = cfg_.dims[s];
    acfg.groups = cfg_.groups[s];
    acfg.weight_encoding = cfg_.weight_encoding;
    acfg.value_position_bias = cfg_.value_position_bias;
    std::vector<Block> blocks;
    for (std::size_t b = 0; b < cfg_.encoder_depths[s]; ++b) {
      Rng rb = root.split("enc" + std::to_string(s) + "." + std::to_string(b));
      blocks.push_back(
          make_block(acfg, cfg_.pe_multiplier, rb, "enc" + std::to_string(s) + ".b" + std::to_string(b)));
    }
    encoder_.push_back(std::move(blocks));
    prev_dim = cfg_.dims[s];
  }

  // Decoder level s fuses up-sampled features (dim of level s+1) with the
  // skip at level s (stem_dim for s == 0).
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t skip_dim = s == 0 ? cfg_.stem_dim : cfg_.dims[s - 1];
    const std::size_t up_dim = cfg_.dims[s];
    Rng rf = root.split("fuse" + std::to_string(s));
    if (cfg_.skip_fusion == SkipFusion::kConcat) {
      fuse_.push_back(
          LinearLayer::create("dec" + std::to_string(s) + ".fuse", up_dim + skip_dim, skip_dim,
                              true, rf));
    } else {
      fuse_.push_back(
          LinearLayer::create("dec" + std::to_string(s) + ".fuse", up_dim, skip_dim, true, rf));
    }
    AttentionConfig acfg;
    acfg.channels = skip_dim;
    acfg.groups = s == 0 ? cfg_.stem_groups : cfg_.groups[s - 1];
    acfg.weight_encoding = cfg_.weight_encoding;
    acfg.value_position_bias = cfg_.value_position_bias;
    std::vector<Block> blocks;
    for (std::size_t b = 0; b < cfg_.decoder_depths[s]; ++b) {
      Rng rb = root.split("dec" + std::to_string(s) + "." + std::to_string(b));
      blocks.push_back(
          make_block(acfg, cfg_.pe_multiplier, rb, "dec" + std::to_string(s) + ".b" + std::to_string(b)));
    }
    decoder_.push_back(std::move(blocks));
  }

  embed_.collect(params_);
  stem_.collect(params_);
  for (std::size_t s = 0; s < stages; ++s) {
    params_.push_back(pool_projections_[s]);
    for (const Block& b : encoder_[s]) b.collect(params_);
  }
  for (std::size_t s = 0; s < stages; ++s) {
    fuse_[s].collect(params_);
    for (const Block& b : decoder_[s]) b.collect(params_);
  }
}

std::size_t UNet::pe_multiplier_param_count() const {
  std::size_t n = 0;
  const auto add_block = [&n](const Block& b) {
    if (b.attn.posenc && b.attn.posenc->mul_mlp) n += b.attn.posenc->mul_mlp->param_count();
  };
  add_block(stem_);
  for (const auto& stage : encoder_)
    for (const Block& b : stage) add_block(b);
  for (const auto& stage : decoder_)
    for (const Block& b : stage) add_block(b);
  return n;
}

namespace {

/// Per-level neighbor tables. Shifted-grid mode alternates the half-cell
/// shift across consecutive blocks; neighborhood mode clamps k to the level's
/// point count so degenerate one-cell stages stay well-defined.
struct ReferenceSets {
  const BackboneConfig* cfg = nullptr;
  const PointCloud* cloud = nullptr;
  double stage_grid = 0.0;
  mutable std::optional<NeighborTable> plain;
  mutable std::optional<NeighborTable> shifted;

  const NeighborTable& for_block(std::size_t block_index) const {
    if (cfg->attention == AttentionRefMode::kNeighborhood) {
      if (!plain) {
        const std::size_t k_eff = std::min<std::size_t>(cfg->k, cloud->size());
        plain = knn(*cloud, *cloud, k_eff);
      }
      return *plain;
    }
    const bool use_shift = block_index % 2 == 1;
    auto& slot = use_shift ? shifted : plain;
    if (!slot) {
      GridSpec spec(stage_grid * cfg->attention_grid_multiplier);
      if (use_shift) spec.shift = {0.5, 0.5, 0.5};
      slot = grid_reference_sets(*cloud, spec);
    }
    return *slot;
  }
};

}  // namespace

UNet::Outputs UNet::forward(Tape& tape, const PointCloud& input) const {
  if (input.size() == 0) throw std::invalid_argument("unet: empty input cloud");
  if (input.channels() != cfg_.in_channels) {
    throw std::invalid_argument("unet: input has " + std::to_string(input.channels()) +
                                " channels, config expects " + std::to_string(cfg_.in_channels));
  }
  const std::size_t stages = cfg_.stages();

  std::vector<PointCloud> clouds;  // positions per level
  clouds.reserve(stages + 1);
  clouds.push_back(positions_only(input.positions));

  Var f = embed_.apply(tape, tape.constant(input.features));
  {
    ReferenceSets refs{&cfg_, &clouds[0], cfg_.base_grid, {}, {}};
    f = stem_.forward(tape, clouds[0], refs.for_block(0), f);
  }

  std::vector<Var> skips{f};
  // Up-sampling state per stage: the partition (grid pooling) or the pooled
  // positions (sampling-based pooling, interpolated back later).
  std::vector<PartitionMap> maps(stages);

  for (std::size_t s = 0; s < stages; ++s) {
    const PointCloud& cur = clouds[s];
    const double g = cfg_.stage_grid(s);
    Tensor pooled_pos;
    if (cfg_.pooling == PoolMethod::kGrid) {
      maps[s] = grid_partition(cur, GridSpec(g));
      f = grid_pool_features(tape, f, pool_projections_[s], maps[s]);
      pooled_pos = cell_mean_positions(cur, maps[s]);
    } else if (cfg_.pooling == PoolMethod::kFpsKnn) {
      const std::size_t m = static_cast<std::size_t>(
          std::ceil(static_cast<double>(cur.size()) * cfg_.pool_ratio));
      const std::vector<Index> centers = fps(cur, std::max<std::size_t>(m, 1));
      pooled_pos = Tensor({centers.size(), 3});
      for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t d = 0; d < 3; ++d)
          pooled_pos.at(i, d) = cur.positions.at(static_cast<std::size_t>(centers[i]), d);
      const std::size_t k_eff = std::min<std::size_t>(cfg_.k, cur.size());
      const NeighborTable nbrs = knn(pooled_pos, cur, k_eff);
      f = knn_pool_features(tape, f, pool_projections_[s], nbrs);
    } else {
      const PartitionMap map = grid_partition(cur, GridSpec(g));
      pooled_pos = cell_mean_positions(cur, map);
      const std::size_t k_eff = std::min<std::size_t>(cfg_.k, cur.size());
      const NeighborTable nbrs = knn(pooled_pos, cur, k_eff);
      f = knn_pool_features(tape, f, pool_projections_[s], nbrs);
    }
    clouds.push_back(positions_only(std::move(pooled_pos)));

    ReferenceSets refs{&cfg_, &clouds[s + 1], g, {}, {}};
    for (std::size_t b = 0; b < encoder_[s].size(); ++b) {
      f = encoder_[s][b].forward(tape, clouds[s + 1], refs.for_block(b), f);
    }
    if (s + 1 < stages) skips.push_back(f);
  }

  Var encoder_tail = f;

  for (std::size_t s = stages; s-- > 0;) {
    if (cfg_.pooling == PoolMethod::kGrid) {
      f = map_unpool_features(tape, f, maps[s]);
    } else {
      f = interp_unpool_features(tape, f, clouds[s + 1], clouds[s].positions);
    }
    Var skip = skips[s];
    if (cfg_.skip_fusion == SkipFusion::kConcat) {
      f = fuse_[s].apply(tape, tape.concat_cols(f, skip));
    } else {
      f = tape.add(fuse_[s].apply(tape, f), skip);
    }
    ReferenceSets refs{&cfg_, &clouds[s], s == 0 ? cfg_.base_grid : cfg_.stage_grid(s - 1), {}, {}};
    for (std::size_t b = 0; b < decoder_[s].size(); ++b) {
      f = decoder_[s][b].forward(tape, clouds[s], refs.for_block(b), f);
    }
  }

  return Outputs{f, encoder_tail};
}

Tensor UNet::forward_features(const PointCloud& input) const {
  Tape tape;
  return tape.value(forward(tape, input).point_features);
}

SegmentationModel::SegmentationModel(const BackboneConfig& cfg) : backbone(cfg) {
  Rng root(cfg.seed);
  Rng rh = root.split("seg_head");
  head = SegHead::create(cfg.stem_dim, cfg.classes, rh);
}

Var SegmentationModel::forward(Tape& tape, const PointCloud& input) const {
  return head.apply(tape, backbone.forward(tape, input).point_features);
}

Tensor SegmentationModel::logits(const PointCloud& input) const {
  Tape tape;
  return tape.value(forward(tape, input));
}

std::vector<ParamPtr> SegmentationModel::params() const {
  std::vector<ParamPtr> all = backbone.params();
  head.collect(all);
  return all;
}

std::size_t SegmentationModel::param_count() const { return total_numel(params()); }

std::size_t count_params(const BackboneConfig& cfg) {
  return SegmentationModel(cfg).param_count();
}

}  // namespace pointkit
