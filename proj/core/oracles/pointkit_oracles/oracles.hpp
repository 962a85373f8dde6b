#pragma once

#include "pointkit/attention.hpp"
#include "pointkit/pooling.hpp"

// Reference implementations written as plain nested loops, independent of the
// tape/kernel code paths they are used to check. Deliberately slow and
// literal; used by the test suites and the `check-equiv` command only.
namespace pointkit::oracles {

/// Full O(n_q × n_ref) pairwise scan, rows sorted by (distance, index).
NeighborTable brute_force_knn(const Tensor& query_positions, const PointCloud& reference,
                              std::size_t k);

/// Greedy max-min selection recomputing, at every step, each candidate's
/// distance to the whole selected set.
std::vector<Index> greedy_fps(const PointCloud& cloud, std::size_t m, Index start = 0);

/// First-occurrence-densified lattice partition.
PartitionMap loop_grid_partition(const PointCloud& cloud, const GridSpec& spec);

/// Dense n×n masked softmax attention with full matrices.
Tensor dense_scalar_attention(const PointCloud& cloud, const NeighborTable& nt,
                              const AttentionParams& params);

/// Per-point, per-channel recomputation of vector attention.
Tensor loop_vector_attention(const PointCloud& cloud, const NeighborTable& nt,
                             const AttentionParams& params);

/// Per-point, per-group recomputation of grouped vector attention, including
/// the position-encoding composition when configured.
Tensor loop_gva(const PointCloud& cloud, const NeighborTable& nt, const AttentionConfig& cfg,
                const AttentionParams& params);

/// The grouped-linear weights materialized as the dense block-diagonal c×g
/// matrix they are equivalent to.
Tensor materialize_grouped_linear(const Tensor& packed_params, std::size_t groups);

/// Loop versions of the pooling/unpooling operators.
PoolResult loop_grid_pool(const PointCloud& cloud, const GridSpec& spec, const Tensor& projection);
Tensor loop_map_unpool(const Tensor& pooled_features, const PartitionMap& map);
SampledPoolResult loop_fps_knn_pool(const PointCloud& cloud, double ratio, std::size_t k,
                                    const Tensor& projection);
SampledPoolResult loop_grid_knn_pool(const PointCloud& cloud, const GridSpec& spec, std::size_t k,
                                     const Tensor& projection);
Tensor loop_interp_unpool(const PointCloud& pooled, const Tensor& original_positions,
                          std::size_t j_neighbors = 3);

}  // namespace pointkit::oracles
