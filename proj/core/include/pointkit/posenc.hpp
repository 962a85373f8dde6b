#pragma once

#include <optional>

#include "pointkit/nn.hpp"

namespace pointkit {

enum class PosEncMode { kBiasOnly, kMultiplierAndBias };

struct PosEncConfig {
  PosEncMode mode = PosEncMode::kMultiplierAndBias;
  std::size_t channels = 16;  // both MLPs map 3 -> channels -> channels
};

/// Learned position encodings over relative offsets p_i - p_j (meters, no
/// normalization). The bias term is added to the relation vector; in
/// multiplier mode a second MLP's output is multiplied in first.
struct PositionEncoder {
  PosEncMode mode = PosEncMode::kBiasOnly;
  Mlp2 bias_mlp;
  std::optional<Mlp2> mul_mlp;

  /// delta_bias(rel_pos): [m×3] -> [m×c].
  Var encode_bias(Tape& tape, Var rel_pos) const { return bias_mlp.apply(tape, rel_pos); }

  /// bias-only:        rel + delta_bias(rel_pos)
  /// multiplier mode:  delta_mul(rel_pos) ⊙ rel + delta_bias(rel_pos)
  Var compose(Tape& tape, Var rel, Var rel_pos) const;

  std::size_t param_count() const;
  void collect(std::vector<ParamPtr>& out) const;
};

PositionEncoder make_position_encoder(const PosEncConfig& cfg, Rng& rng,
                                      const std::string& name_prefix = "posenc");

/// Eager convenience wrappers.
Tensor encode_bias(const PositionEncoder& enc, const Tensor& rel_pos);
Tensor compose_relation(const PositionEncoder& enc, const Tensor& rel, const Tensor& rel_pos);

}  // namespace pointkit
