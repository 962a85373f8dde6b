#pragma once

#include <vector>

#include "pointkit/bench.hpp"
#include "pointkit/rng.hpp"
#include "pointkit/tensor.hpp"

namespace pointkit::testing {

inline Tensor randn(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

inline PointCloud random_cloud(std::size_t n, std::size_t c, std::uint64_t seed) {
  return synth_uniform(n, c, seed);
}

inline std::vector<Index> identity_permutation(std::size_t n) {
  std::vector<Index> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<Index>(i);
  return p;
}

inline std::vector<Index> random_permutation(std::size_t n, Rng& rng) {
  std::vector<Index> p = identity_permutation(n);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

inline PointCloud permute_cloud(const PointCloud& cloud, const std::vector<Index>& perm) {
  const std::size_t n = cloud.size(), c = cloud.channels();
  Tensor pos({n, 3});
  Tensor feat({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = static_cast<std::size_t>(perm[i]);
    for (std::size_t d = 0; d < 3; ++d) pos.at(i, d) = cloud.positions.at(src, d);
    for (std::size_t d = 0; d < c; ++d) feat.at(i, d) = cloud.features.at(src, d);
  }
  return PointCloud(std::move(pos), std::move(feat));
}

// rows of `permuted` are rows perm[i] of the original; undoes the shuffle.
inline Tensor unpermute_rows(const Tensor& permuted, const std::vector<Index>& perm) {
  Tensor out(permuted.shape());
  for (std::size_t i = 0; i < permuted.rows(); ++i)
    for (std::size_t j = 0; j < permuted.cols(); ++j)
      out.at(static_cast<std::size_t>(perm[i]), j) = permuted.at(i, j);
  return out;
}

inline PointCloud translate_cloud(const PointCloud& cloud, double tx, double ty, double tz) {
  Tensor pos = cloud.positions;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    pos.at(i, 0) += tx;
    pos.at(i, 1) += ty;
    pos.at(i, 2) += tz;
  }
  return PointCloud(std::move(pos), cloud.features);
}

}  // namespace pointkit::testing
