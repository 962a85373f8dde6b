#pragma once

#include "pointkit/autodiff.hpp"
#include "pointkit/spatial.hpp"

namespace pointkit {

/// Result of partition-based pooling: one output point per non-empty cell,
/// positions are member means, features the channelwise max of projected
/// member features. `map` drives map unpooling back to the input resolution.
struct PoolResult {
  PointCloud pooled;
  PartitionMap map;
};

/// Result of sampling-based pooling (FPS-kNN or Grid-kNN): centers plus the
/// kNN table used for aggregation. Receptive fields may overlap.
struct SampledPoolResult {
  PointCloud pooled;
  std::vector<Index> centers;  // FPS-kNN: sampled input indices; empty for Grid-kNN
  NeighborTable neighbors;     // per-center neighbors in the input cloud
};

/// Partition-based (grid) pooling. `projection` is the c×c' feature map
/// applied to member features before the max.
PoolResult grid_pool(const PointCloud& cloud, const GridSpec& spec, const Tensor& projection,
                     int threads = 1);

/// Copies each cell's pooled feature row back to all its member points.
Tensor map_unpool(const Tensor& pooled_features, const PartitionMap& map);

/// FPS centers + kNN aggregation at sampling ratio r (m = ceil(n*r)).
SampledPoolResult fps_knn_pool(const PointCloud& cloud, double ratio, std::size_t k,
                               const Tensor& projection, int threads = 1);

/// Grid-sampled centers (cell centroids) + kNN aggregation.
SampledPoolResult grid_knn_pool(const PointCloud& cloud, const GridSpec& spec, std::size_t k,
                                const Tensor& projection, int threads = 1);

/// Inverse-distance interpolation from the j nearest pooled points
/// (weights 1/(d+1e-8), normalized). Coincident points dominate.
Tensor interp_unpool(const PointCloud& pooled, const Tensor& original_positions,
                     std::size_t j_neighbors = 3, int threads = 1);

/// Cell -> member rows of a partition as a ragged table (rows in cell order,
/// members ascending), for segment reductions over cells.
NeighborTable member_table(const PartitionMap& map);

/// Differentiable feature paths of the pooling ops.
Var grid_pool_features(Tape& tape, Var features, const ParamPtr& projection,
                       const PartitionMap& map);
Var map_unpool_features(Tape& tape, Var pooled_features, const PartitionMap& map);
Var knn_pool_features(Tape& tape, Var features, const ParamPtr& projection,
                      const NeighborTable& neighbors);
Var interp_unpool_features(Tape& tape, Var pooled_features, const PointCloud& pooled,
                           const Tensor& original_positions, std::size_t j_neighbors = 3);

/// Mean member position per cell, rows in cell order.
Tensor cell_mean_positions(const PointCloud& cloud, const PartitionMap& map);

}  // namespace pointkit
