#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointkit_oracles/oracles.hpp"

// Randomized equivalence and gradient-check suites shared by the CLI check
// commands and the acceptance tests. Every suite is deterministic in its seed.
namespace pointkit::suites {

struct SuiteResult {
  std::string name;
  int trials = 0;
  bool ok = true;
  double worst = 0.0;               // worst observed error across trials
  std::vector<std::string> failures;  // one line per failing case

  void record(bool pass, double err, const std::string& detail) {
    ++trials;
    if (err > worst) worst = err;
    if (!pass) {
      ok = false;
      failures.push_back(detail);
    }
  }
};

/// gva(g=c, dense-linear encoding) vs the per-channel vector-attention route.
SuiteResult gva_vs_vector_attention(std::uint64_t seed, int trials, double tol = 1e-10);

/// gva with the fixed group-sum encoding over a multiplicative relation vs an
/// independent per-head scaled-dot-product attention.
SuiteResult gva_vs_multi_head(std::uint64_t seed, int trials, double tol = 1e-10);

/// Grid-accelerated kNN vs the brute-force pairwise scan (exact, includes
/// duplicate-point tie cases).
SuiteResult knn_vs_brute_force(std::uint64_t seed, int trials, std::size_t max_n = 2000);

/// fps vs the quadratic greedy re-implementation (exact).
SuiteResult fps_vs_greedy(std::uint64_t seed, int trials, std::size_t max_n = 500);

/// grid/fps-kNN/grid-kNN pooling and both unpooling ops vs their loop
/// oracles.
SuiteResult pooling_vs_oracles(std::uint64_t seed, int trials, double tol = 1e-12);

/// Gradient-check suites. `op` is one of: linear, grouped-linear, mlp2,
/// softmax, gva, pool, seg-head, cls-head. `all` runs every suite.
std::vector<SuiteResult> gradient_suite(const std::string& op, std::uint64_t seed, int trials,
                                        double h = 1e-5, double tol = 1e-4);

const std::vector<std::string>& gradient_suite_names();

}  // namespace pointkit::suites
