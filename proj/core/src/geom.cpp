#include "pointkit/geom.hpp"

#include <cmath>
#include <stdexcept>

namespace pointkit {

PointCloud::PointCloud(Tensor pos, Tensor feat)
    : positions(std::move(pos)), features(std::move(feat)) {
  if (positions.ndim() != 2 || positions.cols() != 3) {
    throw std::invalid_argument("PointCloud: positions must be n×3, got " +
                                positions.shape_str());
  }
  if (features.ndim() != 2 || features.rows() != positions.rows()) {
    throw std::invalid_argument("PointCloud: features " + features.shape_str() +
                                " row count must match positions " + positions.shape_str());
  }
}

NeighborTable::NeighborTable(std::vector<Index> offs, std::vector<Index> idx,
                             std::size_t reference_size)
    : offsets(std::move(offs)), indices(std::move(idx)) {
  if (offsets.empty() || offsets.front() != 0) {
    throw std::invalid_argument("NeighborTable: offsets must start at 0");
  }
  for (std::size_t i = 1; i < offsets.size(); ++i) {
    if (offsets[i] < offsets[i - 1]) {
      throw std::invalid_argument("NeighborTable: offsets must be non-decreasing");
    }
  }
  if (offsets.back() != static_cast<Index>(indices.size())) {
    throw std::invalid_argument("NeighborTable: offsets.back() must equal len(indices)");
  }
  for (Index j : indices) {
    if (j < 0 || j >= static_cast<Index>(reference_size)) {
      throw std::invalid_argument("NeighborTable: index " + std::to_string(j) +
                                  " outside reference cloud of size " +
                                  std::to_string(reference_size));
    }
  }
}

PartitionMap::PartitionMap(std::vector<Index> cells, Index count)
    : cell_of(std::move(cells)), n_cells(count) {
  members.assign(static_cast<std::size_t>(n_cells), {});
  for (std::size_t i = 0; i < cell_of.size(); ++i) {
    const Index c = cell_of[i];
    if (c < 0 || c >= n_cells) {
      throw std::invalid_argument("PartitionMap: cell id " + std::to_string(c) +
                                  " outside [0, " + std::to_string(n_cells) + ")");
    }
    members[static_cast<std::size_t>(c)].push_back(static_cast<Index>(i));
  }
  for (Index c = 0; c < n_cells; ++c) {
    if (members[static_cast<std::size_t>(c)].empty()) {
      throw std::invalid_argument("PartitionMap: cell id " + std::to_string(c) +
                                  " is empty; ids must be dense");
    }
  }
}

ValidationReport validate(const PointCloud& cloud) {
  ValidationReport report;
  if (cloud.positions.ndim() != 2 || cloud.positions.cols() != 3) {
    report.fail("positions must be n×3, got " + cloud.positions.shape_str());
    return report;
  }
  if (cloud.features.ndim() != 2) {
    report.fail("features must be 2-D, got " + cloud.features.shape_str());
    return report;
  }
  if (cloud.positions.rows() != cloud.features.rows()) {
    report.fail("row count mismatch: positions " + cloud.positions.shape_str() +
                " vs features " + cloud.features.shape_str());
  }
  const std::size_t n = cloud.positions.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < 3; ++d) {
      if (!std::isfinite(cloud.positions.at(i, d))) {
        report.fail("non-finite position at row " + std::to_string(i));
        d = 3;  // one violation per row is enough
      }
    }
  }
  const std::size_t c = cloud.features.cols();
  for (std::size_t i = 0; i < cloud.features.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (!std::isfinite(cloud.features.at(i, j))) {
        report.fail("non-finite feature at row " + std::to_string(i));
        j = c;
      }
    }
  }
  return report;
}

}  // namespace pointkit
