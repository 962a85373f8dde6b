#include "pointkit/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <unordered_map>

#include "pointkit/parallel.hpp"

#if defined(__GNUC__) || defined(__clang__)
#define RESTRICT __restrict__
#else
#define RESTRICT
#endif

namespace pointkit {

void GridSpec::check() const {
  if (!(grid_size > 0.0)) {
    throw std::invalid_argument("GridSpec: grid_size must be > 0, got " +
                                std::to_string(grid_size));
  }
  for (double s : shift) {
    if (!(s >= 0.0 && s < 1.0)) {
      throw std::invalid_argument("GridSpec: shift components must lie in [0,1), got " +
                                  std::to_string(s));
    }
  }
}

std::array<double, 3> min_corner(const Tensor& positions) {
  const std::size_t n = positions.rows();
  if (n == 0) throw std::invalid_argument("min_corner: empty position set");
  std::array<double, 3> lo{positions.at(0, 0), positions.at(0, 1), positions.at(0, 2)};
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t d = 0; d < 3; ++d) lo[d] = std::min(lo[d], positions.at(i, d));
  }
  return lo;
}

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint64_t v : {static_cast<std::uint64_t>(k.x), static_cast<std::uint64_t>(k.y),
                            static_cast<std::uint64_t>(k.z)}) {
      h ^= v;
      h *= 0x100000001b3ULL;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

// Bucketed reference points for ring-expansion queries. Buckets are keyed by
// non-negative lattice coordinates relative to the bounding-box corner.
struct BucketGrid {
  double cell = 1.0;
  std::array<double, 3> origin{};
  std::array<Index, 3> dims{};
  std::unordered_map<std::uint64_t, std::vector<Index>> buckets;

  std::uint64_t pack(Index x, Index y, Index z) const {
    return (static_cast<std::uint64_t>(x) * static_cast<std::uint64_t>(dims[1]) +
            static_cast<std::uint64_t>(y)) *
               static_cast<std::uint64_t>(dims[2]) +
           static_cast<std::uint64_t>(z);
  }
};

BucketGrid build_bucket_grid(const Tensor& positions) {
  const std::size_t n = positions.rows();
  BucketGrid g;
  g.origin = min_corner(positions);
  std::array<double, 3> hi = g.origin;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < 3; ++d) hi[d] = std::max(hi[d], positions.at(i, d));
  }
  const double ex = hi[0] - g.origin[0], ey = hi[1] - g.origin[1], ez = hi[2] - g.origin[2];
  const double longest = std::max({ex, ey, ez});
  if (longest <= 0.0) {
    g.cell = 1.0;  // all points coincide
  } else {
    // Aim for ~2 points per occupied cell; guard nearly-flat clouds.
    const double vol = std::max(ex * ey * ez, longest * longest * longest * 1e-6);
    g.cell = std::cbrt(vol * 2.0 / static_cast<double>(n));
    g.cell = std::clamp(g.cell, longest * 1e-9, longest);
  }
  for (std::size_t d = 0; d < 3; ++d) {
    g.dims[d] = static_cast<Index>(std::floor((hi[d] - g.origin[d]) / g.cell)) + 1;
  }
  g.buckets.reserve(n / 2 + 1);
  for (std::size_t i = 0; i < n; ++i) {
    Index cx = static_cast<Index>(std::floor((positions.at(i, 0) - g.origin[0]) / g.cell));
    Index cy = static_cast<Index>(std::floor((positions.at(i, 1) - g.origin[1]) / g.cell));
    Index cz = static_cast<Index>(std::floor((positions.at(i, 2) - g.origin[2]) / g.cell));
    cx = std::clamp<Index>(cx, 0, g.dims[0] - 1);
    cy = std::clamp<Index>(cy, 0, g.dims[1] - 1);
    cz = std::clamp<Index>(cz, 0, g.dims[2] - 1);
    g.buckets[g.pack(cx, cy, cz)].push_back(static_cast<Index>(i));
  }
  return g;
}

using HeapEntry = std::pair<double, Index>;  // (squared distance, reference index)

inline void push_candidate(std::priority_queue<HeapEntry>& heap, std::size_t k, double d2,
                           Index idx) {
  if (heap.size() < k) {
    heap.emplace(d2, idx);
  } else if (HeapEntry{d2, idx} < heap.top()) {
    heap.pop();
    heap.emplace(d2, idx);
  }
}

void scan_bucket(const BucketGrid& g, const Tensor& ref, Index cx, Index cy, Index cz,
                 double qx, double qy, double qz, std::size_t k,
                 std::priority_queue<HeapEntry>& heap) {
  const auto it = g.buckets.find(g.pack(cx, cy, cz));
  if (it == g.buckets.end()) return;
  for (Index j : it->second) {
    const double dx = ref.at(j, 0) - qx;
    const double dy = ref.at(j, 1) - qy;
    const double dz = ref.at(j, 2) - qz;
    push_candidate(heap, k, dx * dx + dy * dy + dz * dz, j);
  }
}

// All cells at Chebyshev distance R from (qx,qy,qz), clipped to grid bounds.
template <typename Visit>
void for_ring(const BucketGrid& g, Index qcx, Index qcy, Index qcz, Index R, Visit&& visit) {
  const auto clip = [](Index v, Index lo, Index hi) { return std::max(lo, std::min(v, hi)); };
  const Index x0 = clip(qcx - R, 0, g.dims[0] - 1), x1 = clip(qcx + R, 0, g.dims[0] - 1);
  const Index y0 = clip(qcy - R, 0, g.dims[1] - 1), y1 = clip(qcy + R, 0, g.dims[1] - 1);
  const Index z0 = clip(qcz - R, 0, g.dims[2] - 1), z1 = clip(qcz + R, 0, g.dims[2] - 1);
  if (R == 0) {
    if (qcx >= 0 && qcx < g.dims[0] && qcy >= 0 && qcy < g.dims[1] && qcz >= 0 && qcz < g.dims[2])
      visit(qcx, qcy, qcz);
    return;
  }
  for (Index dx : {-R, R}) {
    const Index x = qcx + dx;
    if (x < 0 || x >= g.dims[0]) continue;
    for (Index y = y0; y <= y1; ++y)
      for (Index z = z0; z <= z1; ++z) visit(x, y, z);
  }
  for (Index dy : {-R, R}) {
    const Index y = qcy + dy;
    if (y < 0 || y >= g.dims[1]) continue;
    for (Index x = std::max<Index>(x0, qcx - R + 1); x <= std::min<Index>(x1, qcx + R - 1); ++x)
      for (Index z = z0; z <= z1; ++z) visit(x, y, z);
  }
  for (Index dz : {-R, R}) {
    const Index z = qcz + dz;
    if (z < 0 || z >= g.dims[2]) continue;
    for (Index x = std::max<Index>(x0, qcx - R + 1); x <= std::min<Index>(x1, qcx + R - 1); ++x)
      for (Index y = std::max<Index>(y0, qcy - R + 1); y <= std::min<Index>(y1, qcy + R - 1); ++y)
        visit(x, y, z);
  }
}

}  // namespace

NeighborTable knn(const Tensor& query_positions, const PointCloud& reference, std::size_t k,
                  int threads) {
  const std::size_t nq = query_positions.rows();
  const std::size_t nr = reference.size();
  if (k == 0) throw std::invalid_argument("knn: k must be >= 1");
  if (nr < k) {
    throw std::invalid_argument("knn: need k=" + std::to_string(k) +
                                " reference points but only " + std::to_string(nr) +
                                " available");
  }
  const BucketGrid grid = build_bucket_grid(reference.positions);
  const Tensor& ref = reference.positions;

  std::vector<Index> offsets(nq + 1);
  for (std::size_t i = 0; i <= nq; ++i) offsets[i] = static_cast<Index>(i * k);
  std::vector<Index> indices(nq * k);

  parallel_for(static_cast<Index>(nq), threads, [&](Index begin, Index end) {
    std::priority_queue<HeapEntry> heap;
    std::vector<HeapEntry> sorted;
    for (Index q = begin; q < end; ++q) {
      const double qx = query_positions.at(q, 0);
      const double qy = query_positions.at(q, 1);
      const double qz = query_positions.at(q, 2);
      const Index qcx = static_cast<Index>(std::floor((qx - grid.origin[0]) / grid.cell));
      const Index qcy = static_cast<Index>(std::floor((qy - grid.origin[1]) / grid.cell));
      const Index qcz = static_cast<Index>(std::floor((qz - grid.origin[2]) / grid.cell));
      // Farthest possible ring: covers the query sitting outside the bbox too.
      Index max_ring = 0;
      max_ring = std::max(max_ring, std::max(qcx, grid.dims[0] - 1 - qcx));
      max_ring = std::max(max_ring, std::max(qcy, grid.dims[1] - 1 - qcy));
      max_ring = std::max(max_ring, std::max(qcz, grid.dims[2] - 1 - qcz));

      while (!heap.empty()) heap.pop();
      for (Index R = 0; R <= max_ring; ++R) {
        for_ring(grid, qcx, qcy, qcz, R, [&](Index cx, Index cy, Index cz) {
          scan_bucket(grid, ref, cx, cy, cz, qx, qy, qz, k, heap);
        });
        if (heap.size() == k) {
          // Any point beyond ring R is strictly farther than R*cell, so the
          // current k-best set can no longer change.
          const double bound = static_cast<double>(R) * grid.cell;
          if (heap.top().first <= bound * bound) break;
        }
      }
      sorted.clear();
      while (!heap.empty()) {
        sorted.push_back(heap.top());
        heap.pop();
      }
      std::reverse(sorted.begin(), sorted.end());
      for (std::size_t j = 0; j < k; ++j) indices[static_cast<std::size_t>(q) * k + j] = sorted[j].second;
    }
  });
  return NeighborTable(std::move(offsets), std::move(indices), nr);
}

NeighborTable knn(const PointCloud& query, const PointCloud& reference, std::size_t k,
                  int threads) {
  return knn(query.positions, reference, k, threads);
}

std::vector<Index> fps(const PointCloud& cloud, std::size_t m, Index start) {
  const std::size_t n = cloud.size();
  if (m < 1 || m > n) {
    throw std::invalid_argument("fps: m=" + std::to_string(m) + " must lie in [1, n=" +
                                std::to_string(n) + "]");
  }
  if (start < 0 || start >= static_cast<Index>(n)) {
    throw std::invalid_argument("fps: start index " + std::to_string(start) + " out of range");
  }
  // Split coordinates so the hot loops vectorize. Selected points carry a
  // -1 sentinel in min_d2, which squared distances (>= 0) can never reach.
  std::vector<double> px(n), py(n), pz(n);
  for (std::size_t i = 0; i < n; ++i) {
    px[i] = cloud.positions.at(i, 0);
    py[i] = cloud.positions.at(i, 1);
    pz[i] = cloud.positions.at(i, 2);
  }
  std::vector<double> min_d2(n, std::numeric_limits<double>::max());
  std::vector<Index> out;
  out.reserve(m);

  Index cur = start;
  for (std::size_t step = 0; step < m; ++step) {
    min_d2[static_cast<std::size_t>(cur)] = -1.0;
    out.push_back(cur);
    if (step + 1 == m) break;
    const double cx = px[static_cast<std::size_t>(cur)];
    const double cy = py[static_cast<std::size_t>(cur)];
    const double cz = pz[static_cast<std::size_t>(cur)];
    const double* RESTRICT xs = px.data();
    const double* RESTRICT ys = py.data();
    const double* RESTRICT zs = pz.data();
    double* RESTRICT md = min_d2.data();
    // Single fused sweep: refresh min-distances and reduce their max with
    // four independent accumulators so the loop stays wide.
    double m0 = -1.0, m1 = -1.0, m2 = -1.0, m3 = -1.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      const double dx0 = xs[i] - cx, dy0 = ys[i] - cy, dz0 = zs[i] - cz;
      const double dx1 = xs[i + 1] - cx, dy1 = ys[i + 1] - cy, dz1 = zs[i + 1] - cz;
      const double dx2 = xs[i + 2] - cx, dy2 = ys[i + 2] - cy, dz2 = zs[i + 2] - cz;
      const double dx3 = xs[i + 3] - cx, dy3 = ys[i + 3] - cy, dz3 = zs[i + 3] - cz;
      const double d0 = dx0 * dx0 + dy0 * dy0 + dz0 * dz0;
      const double d1 = dx1 * dx1 + dy1 * dy1 + dz1 * dz1;
      const double d2 = dx2 * dx2 + dy2 * dy2 + dz2 * dz2;
      const double d3 = dx3 * dx3 + dy3 * dy3 + dz3 * dz3;
      const double v0 = d0 < md[i] ? d0 : md[i];
      const double v1 = d1 < md[i + 1] ? d1 : md[i + 1];
      const double v2 = d2 < md[i + 2] ? d2 : md[i + 2];
      const double v3 = d3 < md[i + 3] ? d3 : md[i + 3];
      md[i] = v0;
      md[i + 1] = v1;
      md[i + 2] = v2;
      md[i + 3] = v3;
      m0 = v0 > m0 ? v0 : m0;
      m1 = v1 > m1 ? v1 : m1;
      m2 = v2 > m2 ? v2 : m2;
      m3 = v3 > m3 ? v3 : m3;
    }
    for (; i < n; ++i) {
      const double dx = xs[i] - cx, dy = ys[i] - cy, dz = zs[i] - cz;
      const double d2 = dx * dx + dy * dy + dz * dz;
      const double v = d2 < md[i] ? d2 : md[i];
      md[i] = v;
      m0 = v > m0 ? v : m0;
    }
    const double best = std::max(std::max(m0, m1), std::max(m2, m3));
    // First index attaining the max = lowest-index tie-break. The max is an
    // exact array element, so the scan always terminates.
    std::size_t best_idx = 0;
    while (md[best_idx] != best) ++best_idx;
    cur = static_cast<Index>(best_idx);
  }
  return out;
}

PartitionMap grid_partition(const PointCloud& cloud, const GridSpec& spec) {
  spec.check();
  const std::size_t n = cloud.size();
  if (n == 0) throw std::invalid_argument("grid_partition: empty cloud");
  const std::array<double, 3> origin =
      spec.origin ? *spec.origin : min_corner(cloud.positions);
  const double g = spec.grid_size;

  std::unordered_map<CellKey, Index, CellKeyHash> dense;
  dense.reserve(n / 2 + 1);
  std::vector<Index> cell_of(n);
  Index next_id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    CellKey key{};
    const std::array<double, 3> p = {cloud.positions.at(i, 0), cloud.positions.at(i, 1),
                                     cloud.positions.at(i, 2)};
    key.x = static_cast<std::int64_t>(std::floor((p[0] - origin[0] - spec.shift[0] * g) / g));
    key.y = static_cast<std::int64_t>(std::floor((p[1] - origin[1] - spec.shift[1] * g) / g));
    key.z = static_cast<std::int64_t>(std::floor((p[2] - origin[2] - spec.shift[2] * g) / g));
    const auto [it, inserted] = dense.try_emplace(key, next_id);
    if (inserted) ++next_id;
    cell_of[i] = it->second;
  }
  return PartitionMap(std::move(cell_of), next_id);
}

NeighborTable grid_reference_sets(const PointCloud& cloud, const GridSpec& spec) {
  const PartitionMap map = grid_partition(cloud, spec);
  const std::size_t n = cloud.size();
  std::vector<Index> offsets(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    offsets[i + 1] =
        offsets[i] + static_cast<Index>(map.members[static_cast<std::size_t>(map.cell_of[i])].size());
  }
  std::vector<Index> indices;
  indices.reserve(static_cast<std::size_t>(offsets[n]));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cell = map.members[static_cast<std::size_t>(map.cell_of[i])];
    indices.insert(indices.end(), cell.begin(), cell.end());
  }
  return NeighborTable(std::move(offsets), std::move(indices), n);
}

}  // namespace pointkit
