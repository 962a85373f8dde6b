#include "pointkit/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pointkit/parallel.hpp"

namespace pointkit {

NeighborTable member_table(const PartitionMap& map) {
  std::vector<Index> offsets(static_cast<std::size_t>(map.n_cells) + 1, 0);
  std::vector<Index> indices;
  indices.reserve(map.size());
  for (Index cell = 0; cell < map.n_cells; ++cell) {
    const auto& members = map.members[static_cast<std::size_t>(cell)];
    indices.insert(indices.end(), members.begin(), members.end());
    offsets[static_cast<std::size_t>(cell) + 1] =
        offsets[static_cast<std::size_t>(cell)] + static_cast<Index>(members.size());
  }
  return NeighborTable(std::move(offsets), std::move(indices), map.size());
}

Tensor cell_mean_positions(const PointCloud& cloud, const PartitionMap& map) {
  Tensor out({static_cast<std::size_t>(map.n_cells), 3});
  for (Index cell = 0; cell < map.n_cells; ++cell) {
    const auto& members = map.members[static_cast<std::size_t>(cell)];
    for (Index p : members)
      for (std::size_t d = 0; d < 3; ++d)
        out.at(static_cast<std::size_t>(cell), d) += cloud.positions.at(static_cast<std::size_t>(p), d);
    for (std::size_t d = 0; d < 3; ++d)
      out.at(static_cast<std::size_t>(cell), d) /= static_cast<double>(members.size());
  }
  return out;
}

namespace {

// proj[rows(nt)] -> per-row channelwise max over the rows listed in nt.
Tensor rows_max(const Tensor& values, const NeighborTable& nt, int threads) {
  const std::size_t c = values.cols();
  Tensor out({nt.query_size(), c});
  parallel_for(static_cast<Index>(nt.query_size()), threads, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      const Index b = nt.row_begin(i), e = nt.row_end(i);
      for (std::size_t j = 0; j < c; ++j) {
        double best = values.at(static_cast<std::size_t>(nt.indices[static_cast<std::size_t>(b)]), j);
        for (Index t = b + 1; t < e; ++t) {
          const double v =
              values.at(static_cast<std::size_t>(nt.indices[static_cast<std::size_t>(t)]), j);
          if (v > best) best = v;
        }
        out.at(static_cast<std::size_t>(i), j) = best;
      }
    }
  });
  return out;
}

}  // namespace

PoolResult grid_pool(const PointCloud& cloud, const GridSpec& spec, const Tensor& projection,
                     int threads) {
  if (cloud.size() == 0) throw std::invalid_argument("grid_pool: empty cloud");
  if (projection.rows() != cloud.channels()) {
    throw std::invalid_argument("grid_pool: projection " + projection.shape_str() +
                                " does not accept " + std::to_string(cloud.channels()) +
                                " feature channels");
  }
  PoolResult result;
  result.map = grid_partition(cloud, spec);
  const Tensor proj = matmul(cloud.features, projection);
  const NeighborTable cells = member_table(result.map);
  result.pooled = PointCloud(cell_mean_positions(cloud, result.map),
                             rows_max(proj, cells, threads));
  return result;
}

Tensor map_unpool(const Tensor& pooled_features, const PartitionMap& map) {
  if (pooled_features.rows() != static_cast<std::size_t>(map.n_cells)) {
    throw std::invalid_argument("map_unpool: feature rows " +
                                std::to_string(pooled_features.rows()) + " must equal cell count " +
                                std::to_string(map.n_cells));
  }
  const std::size_t c = pooled_features.cols();
  Tensor out({map.size(), c});
  for (std::size_t i = 0; i < map.size(); ++i) {
    const std::size_t cell = static_cast<std::size_t>(map.cell_of[i]);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = pooled_features.at(cell, j);
  }
  return out;
}

SampledPoolResult fps_knn_pool(const PointCloud& cloud, double ratio, std::size_t k,
                               const Tensor& projection, int threads) {
  const std::size_t n = cloud.size();
  if (n == 0) throw std::invalid_argument("fps_knn_pool: empty cloud");
  const std::size_t m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * ratio));
  if (m < 1) throw std::invalid_argument("fps_knn_pool: ratio yields zero centers");
  if (k > n) {
    throw std::invalid_argument("fps_knn_pool: k=" + std::to_string(k) + " exceeds n=" +
                                std::to_string(n));
  }
  SampledPoolResult result;
  result.centers = fps(cloud, m);
  Tensor center_pos({m, 3});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t d = 0; d < 3; ++d)
      center_pos.at(i, d) = cloud.positions.at(static_cast<std::size_t>(result.centers[i]), d);
  result.neighbors = knn(center_pos, cloud, k, threads);
  const Tensor proj = matmul(cloud.features, projection);
  result.pooled = PointCloud(std::move(center_pos), rows_max(proj, result.neighbors, threads));
  return result;
}

SampledPoolResult grid_knn_pool(const PointCloud& cloud, const GridSpec& spec, std::size_t k,
                                const Tensor& projection, int threads) {
  const std::size_t n = cloud.size();
  if (n == 0) throw std::invalid_argument("grid_knn_pool: empty cloud");
  if (k > n) {
    throw std::invalid_argument("grid_knn_pool: k=" + std::to_string(k) + " exceeds n=" +
                                std::to_string(n));
  }
  SampledPoolResult result;
  const PartitionMap map = grid_partition(cloud, spec);
  Tensor center_pos = cell_mean_positions(cloud, map);
  result.neighbors = knn(center_pos, cloud, k, threads);
  const Tensor proj = matmul(cloud.features, projection);
  result.pooled = PointCloud(std::move(center_pos), rows_max(proj, result.neighbors, threads));
  return result;
}

namespace {

struct InterpWeights {
  NeighborTable table;   // per original point: its j nearest pooled points
  std::vector<double> weights;  // normalized, edge-major
};

InterpWeights interp_weights(const PointCloud& pooled, const Tensor& original_positions,
                             std::size_t j_neighbors, int threads) {
  if (pooled.size() == 0) throw std::invalid_argument("interp_unpool: empty pooled cloud");
  const std::size_t j = std::min<std::size_t>(j_neighbors, pooled.size());
  InterpWeights iw;
  iw.table = knn(original_positions, pooled, j, threads);
  iw.weights.resize(iw.table.total_edges());
  const std::size_t n = original_positions.rows();
  constexpr double kEps = 1e-8;
  for (std::size_t i = 0; i < n; ++i) {
    const Index b = iw.table.row_begin(static_cast<Index>(i));
    const Index e = iw.table.row_end(static_cast<Index>(i));
    double total = 0.0;
    for (Index t = b; t < e; ++t) {
      const Index p = iw.table.indices[static_cast<std::size_t>(t)];
      double d2 = 0.0;
      for (std::size_t d = 0; d < 3; ++d) {
        const double diff =
            original_positions.at(i, d) - pooled.positions.at(static_cast<std::size_t>(p), d);
        d2 += diff * diff;
      }
      const double w = 1.0 / (std::sqrt(d2) + kEps);
      iw.weights[static_cast<std::size_t>(t)] = w;
      total += w;
    }
    for (Index t = b; t < e; ++t) iw.weights[static_cast<std::size_t>(t)] /= total;
  }
  return iw;
}

}  // namespace

Tensor interp_unpool(const PointCloud& pooled, const Tensor& original_positions,
                     std::size_t j_neighbors, int threads) {
  const InterpWeights iw = interp_weights(pooled, original_positions, j_neighbors, threads);
  const std::size_t n = original_positions.rows();
  const std::size_t c = pooled.channels();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (Index t = iw.table.row_begin(static_cast<Index>(i));
         t < iw.table.row_end(static_cast<Index>(i)); ++t) {
      const std::size_t p = static_cast<std::size_t>(iw.table.indices[static_cast<std::size_t>(t)]);
      const double w = iw.weights[static_cast<std::size_t>(t)];
      for (std::size_t ch = 0; ch < c; ++ch) out.at(i, ch) += w * pooled.features.at(p, ch);
    }
  }
  return out;
}

Var grid_pool_features(Tape& tape, Var features, const ParamPtr& projection,
                       const PartitionMap& map) {
  Var proj = tape.matmul(features, tape.use(projection));
  const NeighborTable cells = member_table(map);
  Var gathered = tape.gather_rows(proj, cells.indices);
  return tape.segment_max(gathered, cells);
}

Var map_unpool_features(Tape& tape, Var pooled_features, const PartitionMap& map) {
  if (tape.value(pooled_features).rows() != static_cast<std::size_t>(map.n_cells)) {
    throw std::invalid_argument("map_unpool: feature rows " +
                                std::to_string(tape.value(pooled_features).rows()) +
                                " must equal cell count " + std::to_string(map.n_cells));
  }
  return tape.gather_rows(pooled_features, map.cell_of);
}

Var knn_pool_features(Tape& tape, Var features, const ParamPtr& projection,
                      const NeighborTable& neighbors) {
  Var proj = tape.matmul(features, tape.use(projection));
  Var gathered = tape.gather_rows(proj, neighbors.indices);
  return tape.segment_max(gathered, neighbors);
}

Var interp_unpool_features(Tape& tape, Var pooled_features, const PointCloud& pooled,
                           const Tensor& original_positions, std::size_t j_neighbors) {
  const InterpWeights iw = interp_weights(pooled, original_positions, j_neighbors, 1);
  Tensor w({iw.weights.size(), 1}, iw.weights);
  Var gathered = tape.gather_rows(pooled_features, iw.table.indices);
  return tape.group_weighted_sum(tape.constant(std::move(w)), gathered, iw.table, 1);
}

}  // namespace pointkit
