#pragma once

#include <optional>
#include <string>

#include "pointkit/posenc.hpp"

namespace pointkit {

/// Weight encoding variants: the map from a relation vector in R^c to
/// attention weights in R^g.
enum class WeightEncodingKind {
  kFixedGroupSum,       // fixed per-group sum / sqrt(c/g); no learnable params
  kLinear,              // dense linear c -> g
  kGroupedLinear,       // block-diagonal grouped linear, c params total
  kLinearNormActLinear, // linear c->g, norm, ReLU, linear g->g
  kGroupedNormActLinear // grouped linear c->g, norm, ReLU, linear g->g
};

WeightEncodingKind weight_encoding_from_string(const std::string& name);
std::string to_string(WeightEncodingKind kind);

/// Relation function combining query and key rows.
enum class RelationKind { kSubtract, kHadamard };

struct WeightEncoding {
  WeightEncodingKind kind = WeightEncodingKind::kFixedGroupSum;
  std::size_t channels = 0;
  std::size_t groups = 0;
  std::optional<LinearLayer> dense;    // kLinear variants: c -> g with bias
  ParamPtr grouped;                    // kGroupedLinear variants: [1×c] packed, no bias
  std::optional<NormLayer> norm;       // +N+A+L variants
  std::optional<LinearLayer> mix;      // final g -> g dense layer

  Var apply(Tape& tape, Var rel) const;
  std::size_t param_count() const;
  /// Weights of the first projection (bias excluded): c·g for the dense
  /// linear, c for the grouped linear, 0 for the fixed map.
  std::size_t projection_weight_count() const;
  void collect(std::vector<ParamPtr>& out) const;
};

WeightEncoding make_weight_encoding(WeightEncodingKind kind, std::size_t channels,
                                    std::size_t groups, Rng& rng,
                                    const std::string& name_prefix = "we");

struct AttentionConfig {
  std::size_t channels = 16;
  std::size_t groups = 4;
  RelationKind relation = RelationKind::kSubtract;
  WeightEncodingKind weight_encoding = WeightEncodingKind::kGroupedNormActLinear;
  bool value_position_bias = false;  // add delta_bias(rel_pos) to values before aggregation

  void check() const;
};

/// Per-instance learnable state shared by all attention variants.
struct AttentionParams {
  LinearLayer query, key, value;  // c -> c, no bias
  WeightEncoding encoding;
  std::optional<PositionEncoder> posenc;

  std::size_t param_count() const;
  void collect(std::vector<ParamPtr>& out) const;
};

AttentionParams make_attention_params(const AttentionConfig& cfg, Rng& rng,
                                      std::optional<PosEncConfig> posenc = std::nullopt,
                                      const std::string& name_prefix = "attn");

/// Tape-building forms. `features` is [n×c] over the cloud the neighbor table
/// indexes. If `softmax_out` is given, it receives the post-softmax weights
/// in edge-major order ([E×1] or [E×g]).

Var scalar_attention_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                             const AttentionParams& params, Var features,
                             Tensor* softmax_out = nullptr);

Var multi_head_attention_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                                 const AttentionParams& params, std::size_t heads, Var features,
                                 Tensor* softmax_out = nullptr);

Var vector_attention_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                             const AttentionParams& params, Var features,
                             Tensor* softmax_out = nullptr);

Var gva_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                const AttentionConfig& cfg, const AttentionParams& params, Var features,
                Tensor* softmax_out = nullptr);

/// Eager forms operating on cloud.features.
Tensor scalar_attention(const PointCloud& cloud, const NeighborTable& nt,
                        const AttentionParams& params, Tensor* softmax_out = nullptr);
Tensor multi_head_attention(const PointCloud& cloud, const NeighborTable& nt,
                            const AttentionParams& params, std::size_t heads,
                            Tensor* softmax_out = nullptr);
Tensor vector_attention(const PointCloud& cloud, const NeighborTable& nt,
                        const AttentionParams& params, Tensor* softmax_out = nullptr);
Tensor gva(const PointCloud& cloud, const NeighborTable& nt, const AttentionConfig& cfg,
           const AttentionParams& params, Tensor* softmax_out = nullptr);

/// Edge-major relative positions p_i - p_j for every (query i, neighbor j).
Tensor edge_relative_positions(const PointCloud& cloud, const NeighborTable& nt);

/// Query point index of every edge.
std::vector<Index> edge_targets(const NeighborTable& nt);

}  // namespace pointkit
