#pragma once

#include <optional>
#include <vector>

#include "pointkit/attention.hpp"
#include "pointkit/pooling.hpp"

namespace pointkit {

enum class AttentionRefMode { kNeighborhood, kShiftedGrid };
enum class PoolMethod { kGrid, kFpsKnn, kGridKnn };
enum class SkipFusion { kConcat, kAdd };

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t classes = 20;
  std::size_t stem_dim = 48;
  std::size_t stem_groups = 6;
  std::vector<std::size_t> encoder_depths{2, 2, 6, 2};
  std::vector<std::size_t> decoder_depths{1, 1, 1, 1};
  std::vector<std::size_t> dims{96, 192, 384, 384};
  std::vector<std::size_t> groups{12, 24, 48, 48};
  std::vector<double> grid_multipliers{3.0, 2.5, 2.5, 2.5};
  double base_grid = 0.02;
  std::size_t k = 16;
  AttentionRefMode attention = AttentionRefMode::kNeighborhood;
  double attention_grid_multiplier = 4.0;  // shifted-grid cell = stage grid × this
  WeightEncodingKind weight_encoding = WeightEncodingKind::kGroupedNormActLinear;
  bool pe_multiplier = true;
  bool value_position_bias = false;
  PoolMethod pooling = PoolMethod::kGrid;
  double pool_ratio = 0.25;  // per stage, for the sampling-based pooling methods
  SkipFusion skip_fusion = SkipFusion::kConcat;
  std::uint64_t seed = 1;

  std::size_t stages() const { return encoder_depths.size(); }
  /// Cumulative grid size of pooling stage s (0-based).
  double stage_grid(std::size_t s) const;
  void check() const;

  /// Small configuration with the same divisibility structure, cheap enough
  /// for gradient checks and equivariance tests.
  static BackboneConfig toy(std::size_t classes = 5);
};

/// Pre-norm residual block: x + proj(attention(norm(x))), then
/// x + ffn(norm(x)).
struct Block {
  AttentionConfig attn_cfg;
  NormLayer norm1, norm2;
  AttentionParams attn;
  LinearLayer attn_proj;
  LinearLayer ffn1, ffn2;

  Var forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt, Var features) const;
  std::size_t param_count() const;
  void collect(std::vector<ParamPtr>& out) const;
};

Block make_block(const AttentionConfig& cfg, bool pe_multiplier, Rng& rng,
                 const std::string& name_prefix);

/// Eager convenience: returns the cloud with features replaced by the block
/// output (positions unchanged).
PointCloud block_forward(const Block& block, const PointCloud& cloud, const NeighborTable& nt);

struct SegHead {
  Mlp2 mlp;  // c -> c -> classes
  static SegHead create(std::size_t channels, std::size_t classes, Rng& rng);
  Var apply(Tape& tape, Var features) const { return mlp.apply(tape, features); }
  std::size_t param_count() const { return mlp.param_count(); }
  void collect(std::vector<ParamPtr>& out) const { mlp.collect(out); }
};

struct ClsHead {
  Mlp2 mlp;  // c -> c -> classes, applied to the mean-pooled feature row
  static ClsHead create(std::size_t channels, std::size_t classes, Rng& rng);
  Var apply(Tape& tape, Var stage_features) const;
  std::size_t param_count() const { return mlp.param_count(); }
  void collect(std::vector<ParamPtr>& out) const { mlp.collect(out); }
};

/// Encoder-decoder over point clouds: a stem block at full resolution, then
/// stages() rounds of pooling + blocks, mirrored by unpooling + skip fusion +
/// blocks back to full resolution.
class UNet {
 public:
  explicit UNet(const BackboneConfig& cfg);

  struct Outputs {
    Var point_features;    // [n × stem_dim] at input resolution
    Var encoder_features;  // deepest stage features (for classification)
  };
  Outputs forward(Tape& tape, const PointCloud& input) const;
  /// Eager forward, point features only.
  Tensor forward_features(const PointCloud& input) const;

  const BackboneConfig& config() const { return cfg_; }
  const std::vector<ParamPtr>& params() const { return params_; }
  std::size_t param_count() const { return total_numel(params_); }
  /// Parameters of all position-encoding multiplier MLPs, summed over blocks.
  std::size_t pe_multiplier_param_count() const;

 private:
  BackboneConfig cfg_;
  LinearLayer embed_;
  Block stem_;
  std::vector<ParamPtr> pool_projections_;        // U per stage
  std::vector<std::vector<Block>> encoder_;       // per stage
  std::vector<LinearLayer> fuse_;                 // per decoder level
  std::vector<std::vector<Block>> decoder_;       // per decoder level
  std::vector<ParamPtr> params_;
};

/// Full segmentation model: backbone + per-point logits head.
struct SegmentationModel {
  UNet backbone;
  SegHead head;

  explicit SegmentationModel(const BackboneConfig& cfg);
  Var forward(Tape& tape, const PointCloud& input) const;
  Tensor logits(const PointCloud& input) const;
  std::vector<ParamPtr> params() const;
  std::size_t param_count() const;
};

/// Exact learnable scalar count of the configured segmentation model.
std::size_t count_params(const BackboneConfig& cfg);

}  // namespace pointkit
