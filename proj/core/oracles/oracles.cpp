#include "pointkit_oracles/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace pointkit::oracles {

namespace {

double dist2(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double acc = 0.0;
  for (std::size_t d = 0; d < 3; ++d) {
    const double diff = a.at(i, d) - b.at(j, d);
    acc += diff * diff;
  }
  return acc;
}

Tensor loop_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

Tensor loop_linear(const LinearLayer& layer, const Tensor& x) {
  Tensor out = loop_matmul(x, layer.weight->value);
  if (layer.bias) {
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += layer.bias->value[j];
  }
  return out;
}

Tensor loop_batch_norm(const NormLayer& norm, const Tensor& x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n, m});
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + norm.eps);
    for (std::size_t i = 0; i < n; ++i)
      out.at(i, j) = norm.gamma->value[j] * (x.at(i, j) - mean) * inv + norm.beta->value[j];
  }
  return out;
}

Tensor loop_relu(Tensor x) {
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = std::max(0.0, x[i]);
  return x;
}

Tensor loop_mlp2(const Mlp2& mlp, const Tensor& x) {
  Tensor h = loop_linear(mlp.first, x);
  if (mlp.use_norm) h = loop_batch_norm(mlp.norm, h);
  h = loop_relu(std::move(h));
  return loop_linear(mlp.second, h);
}

Tensor loop_grouped_linear(const Tensor& packed, std::size_t groups, const Tensor& x) {
  const std::size_t c = x.cols();
  const std::size_t cg = c / groups;
  Tensor out({x.rows(), groups});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t l = 0; l < groups; ++l) {
      double acc = 0.0;
      for (std::size_t m = 0; m < cg; ++m) acc += x.at(i, l * cg + m) * packed[l * cg + m];
      out.at(i, l) = acc;
    }
  return out;
}

Tensor loop_group_sum(const Tensor& x, std::size_t groups) {
  const std::size_t c = x.cols();
  const std::size_t cg = c / groups;
  const double scale = 1.0 / std::sqrt(static_cast<double>(cg));
  Tensor out({x.rows(), groups});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t l = 0; l < groups; ++l) {
      double acc = 0.0;
      for (std::size_t m = 0; m < cg; ++m) acc += x.at(i, l * cg + m);
      out.at(i, l) = acc * scale;
    }
  return out;
}

Tensor loop_encoding(const WeightEncoding& we, const Tensor& rel) {
  switch (we.kind) {
    case WeightEncodingKind::kFixedGroupSum:
      return loop_group_sum(rel, we.groups);
    case WeightEncodingKind::kLinear:
      return loop_linear(*we.dense, rel);
    case WeightEncodingKind::kGroupedLinear:
      return loop_grouped_linear(we.grouped->value, we.groups, rel);
    case WeightEncodingKind::kLinearNormActLinear: {
      Tensor w = loop_linear(*we.dense, rel);
      w = loop_batch_norm(*we.norm, w);
      return loop_linear(*we.mix, loop_relu(std::move(w)));
    }
    case WeightEncodingKind::kGroupedNormActLinear: {
      Tensor w = loop_grouped_linear(we.grouped->value, we.groups, rel);
      w = loop_batch_norm(*we.norm, w);
      return loop_linear(*we.mix, loop_relu(std::move(w)));
    }
  }
  throw std::logic_error("loop_encoding: unreachable");
}

struct EdgeList {
  std::vector<Index> target, source;
};

EdgeList edges_of(const NeighborTable& nt) {
  EdgeList e;
  e.source = nt.indices;
  e.target.resize(nt.total_edges());
  for (std::size_t i = 0; i < nt.query_size(); ++i)
    for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i)); ++t)
      e.target[static_cast<std::size_t>(t)] = static_cast<Index>(i);
  return e;
}

}  // namespace

NeighborTable brute_force_knn(const Tensor& query_positions, const PointCloud& reference,
                              std::size_t k) {
  const std::size_t nq = query_positions.rows();
  const std::size_t nr = reference.size();
  if (nr < k) throw std::invalid_argument("brute_force_knn: reference smaller than k");
  std::vector<Index> offsets(nq + 1);
  std::vector<Index> indices(nq * k);
  std::vector<std::pair<double, Index>> all(nr);
  for (std::size_t q = 0; q < nq; ++q) {
    offsets[q] = static_cast<Index>(q * k);
    for (std::size_t j = 0; j < nr; ++j) {
      all[j] = {dist2(query_positions, q, reference.positions, j), static_cast<Index>(j)};
    }
    std::sort(all.begin(), all.end());
    for (std::size_t j = 0; j < k; ++j) indices[q * k + j] = all[j].second;
  }
  offsets[nq] = static_cast<Index>(nq * k);
  return NeighborTable(std::move(offsets), std::move(indices), nr);
}

std::vector<Index> greedy_fps(const PointCloud& cloud, std::size_t m, Index start) {
  const std::size_t n = cloud.size();
  if (m < 1 || m > n) throw std::invalid_argument("greedy_fps: m out of range");
  std::vector<Index> selected{start};
  std::vector<char> in_set(n, 0);
  in_set[static_cast<std::size_t>(start)] = 1;
  while (selected.size() < m) {
    double best = -1.0;
    Index best_idx = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_set[i]) continue;
      double min_d2 = std::numeric_limits<double>::infinity();
      for (Index s : selected) {
        min_d2 = std::min(min_d2, dist2(cloud.positions, i, cloud.positions,
                                        static_cast<std::size_t>(s)));
      }
      if (min_d2 > best) {
        best = min_d2;
        best_idx = static_cast<Index>(i);
      }
    }
    selected.push_back(best_idx);
    in_set[static_cast<std::size_t>(best_idx)] = 1;
  }
  return selected;
}

PartitionMap loop_grid_partition(const PointCloud& cloud, const GridSpec& spec) {
  spec.check();
  const std::size_t n = cloud.size();
  if (n == 0) throw std::invalid_argument("loop_grid_partition: empty cloud");
  std::array<double, 3> origin{};
  if (spec.origin) {
    origin = *spec.origin;
  } else {
    origin = {cloud.positions.at(0, 0), cloud.positions.at(0, 1), cloud.positions.at(0, 2)};
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t d = 0; d < 3; ++d)
        origin[d] = std::min(origin[d], cloud.positions.at(i, d));
  }
  std::map<std::array<std::int64_t, 3>, Index> ids;
  std::vector<Index> cell_of(n);
  Index next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::int64_t, 3> key{};
    for (std::size_t d = 0; d < 3; ++d) {
      key[d] = static_cast<std::int64_t>(std::floor(
          (cloud.positions.at(i, d) - origin[d] - spec.shift[d] * spec.grid_size) /
          spec.grid_size));
    }
    auto it = ids.find(key);
    if (it == ids.end()) it = ids.emplace(key, next++).first;
    cell_of[i] = it->second;
  }
  return PartitionMap(std::move(cell_of), next);
}

Tensor dense_scalar_attention(const PointCloud& cloud, const NeighborTable& nt,
                              const AttentionParams& params) {
  const std::size_t n = cloud.size();
  const std::size_t c = cloud.channels();
  const Tensor q = loop_linear(params.query, cloud.features);
  const Tensor k = loop_linear(params.key, cloud.features);
  const Tensor v = loop_linear(params.value, cloud.features);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));

  Tensor mask({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i)); ++t)
      mask.at(i, static_cast<std::size_t>(nt.indices[static_cast<std::size_t>(t)])) = 1.0;

  Tensor w({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < c; ++d) acc += q.at(i, d) * k.at(j, d);
      w.at(i, j) = acc * scale;
    }

  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask.at(i, j) > 0.0) mx = std::max(mx, w.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (mask.at(i, j) > 0.0) denom += std::exp(w.at(i, j) - mx);
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.at(i, j) <= 0.0) continue;
      const double sm = std::exp(w.at(i, j) - mx) / denom;
      for (std::size_t d = 0; d < c; ++d) out.at(i, d) += sm * v.at(j, d);
    }
  }
  return out;
}

namespace {

// Shared edge-batch pipeline: relation rows -> position-encoding composition
// -> weight encoding -> per-(point, column) softmax -> weighted aggregation.
Tensor loop_grouped_attention(const PointCloud& cloud, const NeighborTable& nt,
                              const AttentionParams& params, std::size_t groups,
                              RelationKind relation, bool value_position_bias) {
  const std::size_t n = cloud.size();
  const std::size_t c = cloud.channels();
  const std::size_t cg = c / groups;
  const EdgeList edges = edges_of(nt);
  const std::size_t E = edges.source.size();

  const Tensor q = loop_linear(params.query, cloud.features);
  const Tensor k = loop_linear(params.key, cloud.features);
  const Tensor v = loop_linear(params.value, cloud.features);

  Tensor rel({E, c});
  Tensor rel_pos({E, 3});
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t i = static_cast<std::size_t>(edges.target[e]);
    const std::size_t j = static_cast<std::size_t>(edges.source[e]);
    for (std::size_t d = 0; d < c; ++d) {
      rel.at(e, d) = relation == RelationKind::kSubtract ? q.at(i, d) - k.at(j, d)
                                                         : q.at(i, d) * k.at(j, d);
    }
    for (std::size_t d = 0; d < 3; ++d)
      rel_pos.at(e, d) = cloud.positions.at(i, d) - cloud.positions.at(j, d);
  }

  Tensor bias_rows;
  if (params.posenc) {
    bias_rows = loop_mlp2(params.posenc->bias_mlp, rel_pos);
    if (params.posenc->mode == PosEncMode::kMultiplierAndBias) {
      const Tensor mul_rows = loop_mlp2(*params.posenc->mul_mlp, rel_pos);
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t d = 0; d < c; ++d)
          rel.at(e, d) = mul_rows.at(e, d) * rel.at(e, d) + bias_rows.at(e, d);
    } else {
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t d = 0; d < c; ++d) rel.at(e, d) += bias_rows.at(e, d);
    }
  }

  const Tensor w = loop_encoding(params.encoding, rel);

  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const Index b = nt.row_begin(static_cast<Index>(i));
    const Index eend = nt.row_end(static_cast<Index>(i));
    for (std::size_t l = 0; l < groups; ++l) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index t = b; t < eend; ++t) mx = std::max(mx, w.at(static_cast<std::size_t>(t), l));
      double denom = 0.0;
      for (Index t = b; t < eend; ++t) denom += std::exp(w.at(static_cast<std::size_t>(t), l) - mx);
      for (Index t = b; t < eend; ++t) {
        const std::size_t e = static_cast<std::size_t>(t);
        const double sm = std::exp(w.at(e, l) - mx) / denom;
        const std::size_t j = static_cast<std::size_t>(edges.source[e]);
        for (std::size_t m = 0; m < cg; ++m) {
          double vj = v.at(j, l * cg + m);
          if (value_position_bias) vj += bias_rows.at(e, l * cg + m);
          out.at(i, l * cg + m) += sm * vj;
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor loop_vector_attention(const PointCloud& cloud, const NeighborTable& nt,
                             const AttentionParams& params) {
  return loop_grouped_attention(cloud, nt, params, cloud.channels(), RelationKind::kSubtract,
                                false);
}

Tensor loop_gva(const PointCloud& cloud, const NeighborTable& nt, const AttentionConfig& cfg,
                const AttentionParams& params) {
  cfg.check();
  return loop_grouped_attention(cloud, nt, params, cfg.groups, cfg.relation,
                                cfg.value_position_bias);
}

Tensor materialize_grouped_linear(const Tensor& packed_params, std::size_t groups) {
  const std::size_t c = packed_params.numel();
  const std::size_t cg = c / groups;
  Tensor dense({c, groups});
  for (std::size_t l = 0; l < groups; ++l)
    for (std::size_t m = 0; m < cg; ++m) dense.at(l * cg + m, l) = packed_params[l * cg + m];
  return dense;
}

PoolResult loop_grid_pool(const PointCloud& cloud, const GridSpec& spec,
                          const Tensor& projection) {
  PoolResult result;
  result.map = loop_grid_partition(cloud, spec);
  const Tensor proj = loop_matmul(cloud.features, projection);
  const std::size_t cells = static_cast<std::size_t>(result.map.n_cells);
  const std::size_t cp = proj.cols();
  Tensor feats({cells, cp});
  Tensor pos({cells, 3});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const auto& members = result.map.members[cell];
    for (std::size_t j = 0; j < cp; ++j) {
      double best = proj.at(static_cast<std::size_t>(members[0]), j);
      for (Index p : members) best = std::max(best, proj.at(static_cast<std::size_t>(p), j));
      feats.at(cell, j) = best;
    }
    for (Index p : members)
      for (std::size_t d = 0; d < 3; ++d) pos.at(cell, d) += cloud.positions.at(static_cast<std::size_t>(p), d);
    for (std::size_t d = 0; d < 3; ++d) pos.at(cell, d) /= static_cast<double>(members.size());
  }
  result.pooled = PointCloud(std::move(pos), std::move(feats));
  return result;
}

Tensor loop_map_unpool(const Tensor& pooled_features, const PartitionMap& map) {
  Tensor out({map.size(), pooled_features.cols()});
  for (std::size_t i = 0; i < map.size(); ++i)
    for (std::size_t j = 0; j < pooled_features.cols(); ++j)
      out.at(i, j) = pooled_features.at(static_cast<std::size_t>(map.cell_of[i]), j);
  return out;
}

namespace {

Tensor loop_knn_max(const Tensor& proj, const NeighborTable& nt) {
  const std::size_t cp = proj.cols();
  Tensor out({nt.query_size(), cp});
  for (std::size_t i = 0; i < nt.query_size(); ++i) {
    for (std::size_t j = 0; j < cp; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i));
           ++t)
        best = std::max(best, proj.at(static_cast<std::size_t>(nt.indices[static_cast<std::size_t>(t)]), j));
      out.at(i, j) = best;
    }
  }
  return out;
}

}  // namespace

SampledPoolResult loop_fps_knn_pool(const PointCloud& cloud, double ratio, std::size_t k,
                                    const Tensor& projection) {
  SampledPoolResult result;
  const std::size_t m = static_cast<std::size_t>(
      std::ceil(static_cast<double>(cloud.size()) * ratio));
  result.centers = greedy_fps(cloud, m);
  Tensor pos({m, 3});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t d = 0; d < 3; ++d)
      pos.at(i, d) = cloud.positions.at(static_cast<std::size_t>(result.centers[i]), d);
  result.neighbors = brute_force_knn(pos, cloud, k);
  const Tensor proj = loop_matmul(cloud.features, projection);
  result.pooled = PointCloud(std::move(pos), loop_knn_max(proj, result.neighbors));
  return result;
}

SampledPoolResult loop_grid_knn_pool(const PointCloud& cloud, const GridSpec& spec, std::size_t k,
                                     const Tensor& projection) {
  SampledPoolResult result;
  const PartitionMap map = loop_grid_partition(cloud, spec);
  const std::size_t cells = static_cast<std::size_t>(map.n_cells);
  Tensor pos({cells, 3});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const auto& members = map.members[cell];
    for (Index p : members)
      for (std::size_t d = 0; d < 3; ++d) pos.at(cell, d) += cloud.positions.at(static_cast<std::size_t>(p), d);
    for (std::size_t d = 0; d < 3; ++d) pos.at(cell, d) /= static_cast<double>(members.size());
  }
  result.neighbors = brute_force_knn(pos, cloud, k);
  const Tensor proj = loop_matmul(cloud.features, projection);
  result.pooled = PointCloud(std::move(pos), loop_knn_max(proj, result.neighbors));
  return result;
}

Tensor loop_interp_unpool(const PointCloud& pooled, const Tensor& original_positions,
                          std::size_t j_neighbors) {
  const std::size_t n = original_positions.rows();
  const std::size_t c = pooled.channels();
  const std::size_t j = std::min<std::size_t>(j_neighbors, pooled.size());
  const NeighborTable nt = brute_force_knn(original_positions, pooled, j);
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    std::vector<double> ws;
    for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i));
         ++t) {
      const std::size_t p = static_cast<std::size_t>(nt.indices[static_cast<std::size_t>(t)]);
      const double d = std::sqrt(dist2(original_positions, i, pooled.positions, p));
      const double w = 1.0 / (d + 1e-8);
      ws.push_back(w);
      total += w;
    }
    std::size_t wi = 0;
    for (Index t = nt.row_begin(static_cast<Index>(i)); t < nt.row_end(static_cast<Index>(i));
         ++t, ++wi) {
      const std::size_t p = static_cast<std::size_t>(nt.indices[static_cast<std::size_t>(t)]);
      for (std::size_t ch = 0; ch < c; ++ch)
        out.at(i, ch) += (ws[wi] / total) * pooled.features.at(p, ch);
    }
  }
  return out;
}

}  // namespace pointkit::oracles
