#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointkit/geom.hpp"

namespace pointkit {

/// Sweep description for the pooling latency benchmark.
struct BenchSpec {
  std::vector<std::size_t> n_values{10000, 20000, 40000};
  std::vector<double> ratios{0.5, 0.25};
  int repeats = 5;    // >= 3
  int warmup = 1;     // >= 1; warmup runs are discarded
  std::uint64_t seed = 0x7001;
  int threads = 1;
  std::size_t channels = 16;      // synthetic feature width
  std::size_t out_channels = 16;  // pooled feature width
  std::size_t k = 16;             // kNN width for both sampling-based baselines

  void check() const;
};

struct BenchRow {
  std::string method;  // "fps_knn", "grid", "grid_knn"
  std::size_t n = 0;
  double r = 0.0;
  double median_ms = 0.0;
  double p25_ms = 0.0;
  double p75_ms = 0.0;

  bool operator==(const BenchRow&) const = default;
};

struct BenchTable {
  int threads = 1;
  std::uint64_t seed = 0;
  std::string version;
  std::vector<BenchRow> rows;  // sorted by (method, n, r)

  bool operator==(const BenchTable&) const = default;
  const BenchRow* find(const std::string& method, std::size_t n, double r) const;
};

/// n i.i.d. uniform positions in the unit cube with standard-normal features;
/// bit-identical across runs for a fixed seed.
PointCloud synth_uniform(std::size_t n, std::size_t c, std::uint64_t seed);

/// Measures combined pool+unpool wall time for the three pooling methods at
/// matched sampling ratio r. Grid size follows (n*r)^(-1/3) on uniform data.
/// Timings exclude data generation; pooled outputs are verified identical
/// across repeats.
BenchTable bench_pooling(const BenchSpec& spec);

/// CSV with a leading `# threads=<t> seed=<s> version=<v>` comment line and
/// header `method,n,r,median_ms,p25_ms,p75_ms`. Floats are written with
/// round-trip precision.
void emit_csv(const BenchTable& table, const std::string& path);
BenchTable parse_csv(const std::string& path);

}  // namespace pointkit
