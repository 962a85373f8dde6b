#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pointkit/tensor.hpp"

namespace pointkit {

using Index = std::int64_t;

/// A point set: positions in meters (n×3) plus per-point feature rows (n×c).
/// Immutable by convention after construction; all operations return new clouds.
struct PointCloud {
  Tensor positions;  // n×3
  Tensor features;   // n×c

  PointCloud() : positions({0, 3}), features({0, 0}) {}
  PointCloud(Tensor pos, Tensor feat);

  std::size_t size() const { return positions.rows(); }
  std::size_t channels() const { return features.cols(); }

  std::array<double, 3> point(Index i) const {
    return {positions.at(i, 0), positions.at(i, 1), positions.at(i, 2)};
  }
};

/// Ragged per-point reference sets stored CSR-style: row i spans
/// indices[offsets[i] .. offsets[i+1]). Indices point into a reference cloud
/// that may differ from the query cloud.
struct NeighborTable {
  std::vector<Index> offsets;  // n+1 entries, offsets[0] == 0
  std::vector<Index> indices;

  NeighborTable() : offsets{0} {}
  NeighborTable(std::vector<Index> offs, std::vector<Index> idx, std::size_t reference_size);

  std::size_t query_size() const { return offsets.size() - 1; }
  std::size_t total_edges() const { return indices.size(); }
  Index row_begin(Index i) const { return offsets[i]; }
  Index row_end(Index i) const { return offsets[i + 1]; }
  Index row_size(Index i) const { return offsets[i + 1] - offsets[i]; }
};

/// Point -> cell assignment from a non-overlapping partition of space.
/// Cell ids are dense in [0, n_cells) in order of first occurrence.
struct PartitionMap {
  std::vector<Index> cell_of;          // size n
  Index n_cells = 0;                   // number of non-empty cells
  std::vector<std::vector<Index>> members;  // cell -> point indices, ascending

  PartitionMap() = default;
  PartitionMap(std::vector<Index> cells, Index count);

  std::size_t size() const { return cell_of.size(); }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;

  void fail(std::string msg) {
    ok = false;
    violations.push_back(std::move(msg));
  }
};

/// Checks the point-cloud invariants: matching row counts, 3 position
/// columns, every entry finite. Report-based, never throws.
ValidationReport validate(const PointCloud& cloud);

}  // namespace pointkit
