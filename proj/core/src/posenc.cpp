#include "pointkit/posenc.hpp"

#include <stdexcept>

namespace pointkit {

Var PositionEncoder::compose(Tape& tape, Var rel, Var rel_pos) const {
  if (tape.value(rel_pos).cols() != 3) {
    throw std::invalid_argument("PositionEncoder: rel_pos must be [m×3], got " +
                                tape.value(rel_pos).shape_str());
  }
  Var bias = bias_mlp.apply(tape, rel_pos);
  if (mode == PosEncMode::kMultiplierAndBias) {
    Var mul = mul_mlp->apply(tape, rel_pos);
    return tape.add(tape.mul(mul, rel), bias);
  }
  return tape.add(rel, bias);
}

std::size_t PositionEncoder::param_count() const {
  return bias_mlp.param_count() + (mul_mlp ? mul_mlp->param_count() : 0);
}

void PositionEncoder::collect(std::vector<ParamPtr>& out) const {
  bias_mlp.collect(out);
  if (mul_mlp) mul_mlp->collect(out);
}

PositionEncoder make_position_encoder(const PosEncConfig& cfg, Rng& rng,
                                      const std::string& name_prefix) {
  PositionEncoder enc;
  enc.mode = cfg.mode;
  Rng rb = rng.split(name_prefix + ".bias");
  enc.bias_mlp = Mlp2::create(name_prefix + ".bias", 3, cfg.channels, cfg.channels, rb);
  if (cfg.mode == PosEncMode::kMultiplierAndBias) {
    Rng rm = rng.split(name_prefix + ".mul");
    enc.mul_mlp = Mlp2::create(name_prefix + ".mul", 3, cfg.channels, cfg.channels, rm);
  }
  return enc;
}

Tensor encode_bias(const PositionEncoder& enc, const Tensor& rel_pos) {
  Tape tape;
  return tape.value(enc.encode_bias(tape, tape.constant(rel_pos)));
}

Tensor compose_relation(const PositionEncoder& enc, const Tensor& rel, const Tensor& rel_pos) {
  Tape tape;
  return tape.value(enc.compose(tape, tape.constant(rel), tape.constant(rel_pos)));
}

}  // namespace pointkit
