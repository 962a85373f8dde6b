#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "pointkit/spatial.hpp"

using namespace pointkit;
using namespace pointkit::testing;

TEST_CASE("validate accepts the empty cloud") {
  const PointCloud cloud;
  CHECK(validate(cloud).ok);
}

TEST_CASE("validate flags a NaN position with its row") {
  PointCloud cloud = random_cloud(10, 4, 3);
  cloud.positions.at(7, 1) = std::nan("");
  const ValidationReport report = validate(cloud);
  CHECK_FALSE(report.ok);
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0].find("row 7") != std::string::npos);
}

TEST_CASE("validate flags non-finite features") {
  PointCloud cloud = random_cloud(5, 3, 4);
  cloud.features.at(2, 0) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(validate(cloud).ok);
}

TEST_CASE("validate passes a seeded random 1000x(3,16) cloud") {
  CHECK(validate(random_cloud(1000, 16, 99)).ok);
}

TEST_CASE("PointCloud rejects mismatched row counts") {
  CHECK_THROWS_AS(PointCloud(Tensor({4, 3}), Tensor({5, 2})), std::invalid_argument);
  CHECK_THROWS_AS(PointCloud(Tensor({4, 2}), Tensor({4, 2})), std::invalid_argument);
}

TEST_CASE("NeighborTable validates offsets and index bounds") {
  CHECK_THROWS_AS(NeighborTable({0, 2, 1}, {0, 1}, 3), std::invalid_argument);   // decreasing
  CHECK_THROWS_AS(NeighborTable({0, 1}, {5}, 3), std::invalid_argument);         // out of range
  CHECK_THROWS_AS(NeighborTable({0, 1}, {0, 1}, 3), std::invalid_argument);      // back mismatch
  CHECK_THROWS_AS(NeighborTable({1, 2}, {0, 1}, 3), std::invalid_argument);      // not 0-based

  const NeighborTable nt({0, 2, 3}, {1, 2, 0}, 3);
  CHECK(nt.query_size() == 2);
  CHECK(nt.row_size(0) == 2);
  CHECK(nt.row_size(1) == 1);
}

TEST_CASE("NeighborTable offsets reconstruct per-row counts") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud cloud = random_cloud(40 + rng.below(200), 1, rng.next_u64());
    const std::size_t k = 1 + rng.below(8);
    const NeighborTable nt = knn(cloud, cloud, k);
    Index total = 0;
    for (std::size_t i = 0; i < nt.query_size(); ++i) {
      CHECK(nt.row_size(static_cast<Index>(i)) == static_cast<Index>(k));
      total += nt.row_size(static_cast<Index>(i));
    }
    CHECK(total == static_cast<Index>(nt.indices.size()));
  }
}

TEST_CASE("PartitionMap members flatten back to {0..n-1}") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 50 + rng.below(500);
    const PointCloud cloud = random_cloud(n, 1, rng.next_u64());
    const PartitionMap map = grid_partition(cloud, GridSpec(0.05 + 0.2 * rng.uniform()));

    std::vector<Index> flat;
    for (const auto& cell : map.members) {
      CHECK_FALSE(cell.empty());  // dense ids
      flat.insert(flat.end(), cell.begin(), cell.end());
    }
    REQUIRE(flat.size() == n);
    std::sort(flat.begin(), flat.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(flat[i] == static_cast<Index>(i));

    for (std::size_t i = 0; i < n; ++i) {
      CHECK(map.cell_of[i] >= 0);
      CHECK(map.cell_of[i] < map.n_cells);
    }
  }
}

TEST_CASE("PartitionMap rejects sparse cell ids") {
  CHECK_THROWS_AS(PartitionMap({0, 2}, 3), std::invalid_argument);  // id 1 empty
  CHECK_THROWS_AS(PartitionMap({0, 3}, 3), std::invalid_argument);  // id out of range
}
