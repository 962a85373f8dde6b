#include "pointkit/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace pointkit {

WeightEncodingKind weight_encoding_from_string(const std::string& name) {
  if (name == "MSA" || name == "msa") return WeightEncodingKind::kFixedGroupSum;
  if (name == "L" || name == "l") return WeightEncodingKind::kLinear;
  if (name == "GL" || name == "gl") return WeightEncodingKind::kGroupedLinear;
  if (name == "L+N+A+L" || name == "lnal") return WeightEncodingKind::kLinearNormActLinear;
  if (name == "GL+N+A+L" || name == "glnal") return WeightEncodingKind::kGroupedNormActLinear;
  throw std::invalid_argument("unknown weight encoding '" + name +
                              "' (expected MSA, L, GL, L+N+A+L or GL+N+A+L)");
}

std::string to_string(WeightEncodingKind kind) {
  switch (kind) {
    case WeightEncodingKind::kFixedGroupSum: return "MSA";
    case WeightEncodingKind::kLinear: return "L";
    case WeightEncodingKind::kGroupedLinear: return "GL";
    case WeightEncodingKind::kLinearNormActLinear: return "L+N+A+L";
    case WeightEncodingKind::kGroupedNormActLinear: return "GL+N+A+L";
  }
  return "?";
}

Var WeightEncoding::apply(Tape& tape, Var rel) const {
  Var w{};
  switch (kind) {
    case WeightEncodingKind::kFixedGroupSum:
      return tape.group_sum_encoding(rel, groups);
    case WeightEncodingKind::kLinear:
      return dense->apply(tape, rel);
    case WeightEncodingKind::kGroupedLinear:
      return tape.grouped_linear(rel, tape.use(grouped), groups);
    case WeightEncodingKind::kLinearNormActLinear:
      w = dense->apply(tape, rel);
      break;
    case WeightEncodingKind::kGroupedNormActLinear:
      w = tape.grouped_linear(rel, tape.use(grouped), groups);
      break;
  }
  w = norm->apply(tape, w);
  w = tape.relu(w);
  return mix->apply(tape, w);
}

std::size_t WeightEncoding::param_count() const {
  std::size_t n = 0;
  if (dense) n += dense->param_count();
  if (grouped) n += grouped->numel();
  if (norm) n += norm->param_count();
  if (mix) n += mix->param_count();
  return n;
}

std::size_t WeightEncoding::projection_weight_count() const {
  if (dense) return dense->weight->numel();
  if (grouped) return grouped->numel();
  return 0;
}

void WeightEncoding::collect(std::vector<ParamPtr>& out) const {
  if (dense) dense->collect(out);
  if (grouped) out.push_back(grouped);
  if (norm) norm->collect(out);
  if (mix) mix->collect(out);
}

WeightEncoding make_weight_encoding(WeightEncodingKind kind, std::size_t channels,
                                    std::size_t groups, Rng& rng,
                                    const std::string& name_prefix) {
  if (groups == 0 || channels % groups != 0) {
    throw std::invalid_argument("make_weight_encoding: groups " + std::to_string(groups) +
                                " must divide channels " + std::to_string(channels));
  }
  WeightEncoding we;
  we.kind = kind;
  we.channels = channels;
  we.groups = groups;
  Rng r = rng.split(name_prefix);
  switch (kind) {
    case WeightEncodingKind::kFixedGroupSum:
      break;
    case WeightEncodingKind::kLinear:
      we.dense = LinearLayer::create(name_prefix + ".dense", channels, groups, true, r);
      break;
    case WeightEncodingKind::kGroupedLinear:
      we.grouped = Param::make(name_prefix + ".grouped",
                               init_uniform({1, channels}, channels / groups, r));
      break;
    case WeightEncodingKind::kLinearNormActLinear:
      we.dense = LinearLayer::create(name_prefix + ".dense", channels, groups, true, r);
      we.norm = NormLayer::create(name_prefix + ".norm", groups);
      we.mix = LinearLayer::create(name_prefix + ".mix", groups, groups, true, r);
      break;
    case WeightEncodingKind::kGroupedNormActLinear:
      we.grouped = Param::make(name_prefix + ".grouped",
                               init_uniform({1, channels}, channels / groups, r));
      we.norm = NormLayer::create(name_prefix + ".norm", groups);
      we.mix = LinearLayer::create(name_prefix + ".mix", groups, groups, true, r);
      break;
  }
  return we;
}

void AttentionConfig::check() const {
  if (groups == 0 || groups > channels || channels % groups != 0) {
    throw std::invalid_argument("AttentionConfig: groups " + std::to_string(groups) +
                                " must divide channels " + std::to_string(channels) +
                                " and lie in [1, channels]");
  }
}

std::size_t AttentionParams::param_count() const {
  std::size_t n = query.param_count() + key.param_count() + value.param_count() +
                  encoding.param_count();
  if (posenc) n += posenc->param_count();
  return n;
}

void AttentionParams::collect(std::vector<ParamPtr>& out) const {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  encoding.collect(out);
  if (posenc) posenc->collect(out);
}

AttentionParams make_attention_params(const AttentionConfig& cfg, Rng& rng,
                                      std::optional<PosEncConfig> posenc,
                                      const std::string& name_prefix) {
  cfg.check();
  AttentionParams p;
  Rng rq = rng.split(name_prefix + ".q");
  Rng rk = rng.split(name_prefix + ".k");
  Rng rv = rng.split(name_prefix + ".v");
  Rng rw = rng.split(name_prefix + ".we");
  Rng rp = rng.split(name_prefix + ".pos");
  p.query = LinearLayer::create(name_prefix + ".q", cfg.channels, cfg.channels, false, rq);
  p.key = LinearLayer::create(name_prefix + ".k", cfg.channels, cfg.channels, false, rk);
  p.value = LinearLayer::create(name_prefix + ".v", cfg.channels, cfg.channels, false, rv);
  p.encoding = make_weight_encoding(cfg.weight_encoding, cfg.channels, cfg.groups, rw,
                                    name_prefix + ".we");
  if (posenc) {
    PosEncConfig pc = *posenc;
    pc.channels = cfg.channels;
    p.posenc = make_position_encoder(pc, rp, name_prefix + ".pos");
  }
  return p;
}

std::vector<Index> edge_targets(const NeighborTable& nt) {
  std::vector<Index> targets(nt.total_edges());
  for (std::size_t i = 0; i < nt.query_size(); ++i) {
    for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i)); ++t)
      targets[static_cast<std::size_t>(t)] = static_cast<Index>(i);
  }
  return targets;
}

Tensor edge_relative_positions(const PointCloud& cloud, const NeighborTable& nt) {
  Tensor rel({nt.total_edges(), 3});
  for (std::size_t i = 0; i < nt.query_size(); ++i) {
    for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i));
         ++t) {
      const Index j = nt.indices[static_cast<std::size_t>(t)];
      for (std::size_t d = 0; d < 3; ++d)
        rel.at(static_cast<std::size_t>(t), d) =
            cloud.positions.at(i, d) - cloud.positions.at(static_cast<std::size_t>(j), d);
    }
  }
  return rel;
}

namespace {

struct EdgeProjections {
  Var q_edges, k_edges, v_edges;
};

EdgeProjections project_and_gather(Tape& tape, const NeighborTable& nt,
                                   const AttentionParams& params, Var features) {
  Var q = params.query.apply(tape, features);
  Var k = params.key.apply(tape, features);
  Var v = params.value.apply(tape, features);
  std::vector<Index> targets = edge_targets(nt);
  return EdgeProjections{tape.gather_rows(q, std::move(targets)),
                         tape.gather_rows(k, nt.indices), tape.gather_rows(v, nt.indices)};
}

Var value_edges_with_optional_bias(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                                   const AttentionParams& params, bool value_position_bias,
                                   Var v_edges, Var rel_pos) {
  if (!value_position_bias) return v_edges;
  if (!params.posenc) {
    throw std::invalid_argument("attention: value_position_bias requires a position encoder");
  }
  (void)cloud;
  (void)nt;
  return tape.add(v_edges, params.posenc->encode_bias(tape, rel_pos));
}

}  // namespace

Var scalar_attention_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                             const AttentionParams& params, Var features, Tensor* softmax_out) {
  const std::size_t c = tape.value(features).cols();
  EdgeProjections e = project_and_gather(tape, nt, params, features);
  Var w = tape.scale(tape.row_dot(e.q_edges, e.k_edges), 1.0 / std::sqrt(static_cast<double>(c)));
  Var sm = tape.segment_softmax(w, nt);
  if (softmax_out) *softmax_out = tape.value(sm);
  (void)cloud;
  return tape.group_weighted_sum(sm, e.v_edges, nt, 1);
}

Var multi_head_attention_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                                 const AttentionParams& params, std::size_t heads, Var features,
                                 Tensor* softmax_out) {
  const std::size_t c = tape.value(features).cols();
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("multi_head_attention: heads " + std::to_string(heads) +
                                " must divide channels " + std::to_string(c));
  }
  const std::size_t ch = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(ch));
  EdgeProjections e = project_and_gather(tape, nt, params, features);
  (void)cloud;

  Tensor softmax_all({nt.total_edges(), heads});
  Var out{};
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = tape.slice_cols(e.q_edges, h * ch, ch);
    Var kh = tape.slice_cols(e.k_edges, h * ch, ch);
    Var vh = tape.slice_cols(e.v_edges, h * ch, ch);
    Var w = tape.scale(tape.row_dot(qh, kh), scale);
    Var sm = tape.segment_softmax(w, nt);
    if (softmax_out) {
      const Tensor& s = tape.value(sm);
      for (std::size_t t = 0; t < s.rows(); ++t) softmax_all.at(t, h) = s.at(t, 0);
    }
    Var oh = tape.group_weighted_sum(sm, vh, nt, 1);
    out = h == 0 ? oh : tape.concat_cols(out, oh);
  }
  if (softmax_out) *softmax_out = std::move(softmax_all);
  return out;
}

Var vector_attention_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                             const AttentionParams& params, Var features, Tensor* softmax_out) {
  EdgeProjections e = project_and_gather(tape, nt, params, features);
  Var rel = tape.sub(e.q_edges, e.k_edges);
  Var rel_pos{};
  if (params.posenc) {
    rel_pos = tape.constant(edge_relative_positions(cloud, nt));
    rel = params.posenc->compose(tape, rel, rel_pos);
  }
  Var w = params.encoding.apply(tape, rel);
  if (tape.value(w).cols() != tape.value(features).cols()) {
    throw std::invalid_argument("vector_attention: encoding must map to one weight per channel");
  }
  Var sm = tape.segment_softmax(w, nt);
  if (softmax_out) *softmax_out = tape.value(sm);
  // Per-channel modulation then a plain segment reduction; deliberately a
  // different aggregation route than the grouped kernel.
  return tape.segment_sum(tape.mul(sm, e.v_edges), nt);
}

Var gva_forward(Tape& tape, const PointCloud& cloud, const NeighborTable& nt,
                const AttentionConfig& cfg, const AttentionParams& params, Var features,
                Tensor* softmax_out) {
  cfg.check();
  EdgeProjections e = project_and_gather(tape, nt, params, features);
  Var rel = cfg.relation == RelationKind::kSubtract ? tape.sub(e.q_edges, e.k_edges)
                                                    : tape.mul(e.q_edges, e.k_edges);
  Var rel_pos{};
  const bool needs_rel_pos = params.posenc.has_value();
  if (needs_rel_pos) rel_pos = tape.constant(edge_relative_positions(cloud, nt));
  if (params.posenc) rel = params.posenc->compose(tape, rel, rel_pos);
  Var w = params.encoding.apply(tape, rel);
  Var sm = tape.segment_softmax(w, nt);
  if (softmax_out) *softmax_out = tape.value(sm);
  Var v_edges = value_edges_with_optional_bias(tape, cloud, nt, params, cfg.value_position_bias,
                                               e.v_edges, rel_pos);
  return tape.group_weighted_sum(sm, v_edges, nt, cfg.groups);
}

Tensor scalar_attention(const PointCloud& cloud, const NeighborTable& nt,
                        const AttentionParams& params, Tensor* softmax_out) {
  Tape tape;
  Var f = tape.constant(cloud.features);
  return tape.value(scalar_attention_forward(tape, cloud, nt, params, f, softmax_out));
}

Tensor multi_head_attention(const PointCloud& cloud, const NeighborTable& nt,
                            const AttentionParams& params, std::size_t heads,
                            Tensor* softmax_out) {
  Tape tape;
  Var f = tape.constant(cloud.features);
  return tape.value(multi_head_attention_forward(tape, cloud, nt, params, heads, f, softmax_out));
}

Tensor vector_attention(const PointCloud& cloud, const NeighborTable& nt,
                        const AttentionParams& params, Tensor* softmax_out) {
  Tape tape;
  Var f = tape.constant(cloud.features);
  return tape.value(vector_attention_forward(tape, cloud, nt, params, f, softmax_out));
}

Tensor gva(const PointCloud& cloud, const NeighborTable& nt, const AttentionConfig& cfg,
           const AttentionParams& params, Tensor* softmax_out) {
  Tape tape;
  Var f = tape.constant(cloud.features);
  return tape.value(gva_forward(tape, cloud, nt, cfg, params, f, softmax_out));
}

}  // namespace pointkit
