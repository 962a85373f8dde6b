#pragma once

#include <array>
#include <optional>
#include <vector>

#include "pointkit/geom.hpp"

namespace pointkit {

/// Uniform lattice over space. `shift` is a per-axis offset expressed as a
/// fraction of grid_size in [0,1); alternating it between 0 and 0.5 across
/// consecutive attention blocks realizes shifted-grid reference sets.
struct GridSpec {
  double grid_size = 0.02;
  std::optional<std::array<double, 3>> origin;  // default: componentwise min of positions
  std::array<double, 3> shift{0.0, 0.0, 0.0};

  GridSpec() = default;
  explicit GridSpec(double size) : grid_size(size) {}
  GridSpec(double size, std::array<double, 3> shift_frac) : grid_size(size), shift(shift_frac) {}

  void check() const;
};

/// Exact k nearest neighbors of each query row among the reference points,
/// sorted by (distance, index) ascending. Uses uniform-grid bucketing with an
/// expanding ring search; results are identical to a brute-force scan,
/// including index tie-breaks. A query identical to a reference point lists
/// that point first (distance 0).
NeighborTable knn(const Tensor& query_positions, const PointCloud& reference, std::size_t k,
                  int threads = 1);
NeighborTable knn(const PointCloud& query, const PointCloud& reference, std::size_t k,
                  int threads = 1);

/// Farthest point sampling: greedy max-min-distance subset of size m starting
/// at `start`. Distance ties break toward the lowest index.
std::vector<Index> fps(const PointCloud& cloud, std::size_t m, Index start = 0);

/// Assigns each point to lattice cell floor((p - origin - shift*g) / g) per
/// axis, then densifies cell ids in order of first occurrence. A coordinate
/// exactly on a cell boundary belongs to the higher cell.
PartitionMap grid_partition(const PointCloud& cloud, const GridSpec& spec);

/// Reference set of each point = the member list of its own grid cell
/// (self included, ascending point order).
NeighborTable grid_reference_sets(const PointCloud& cloud, const GridSpec& spec);

/// Componentwise min of positions; errors on an empty cloud.
std::array<double, 3> min_corner(const Tensor& positions);

}  // namespace pointkit
