// Command-line front end: synthetic data generation, pooling latency
// benchmarks, gradient and equivalence check suites, forward passes, and
// parameter counting.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pointkit/bench.hpp"
#include "pointkit/config.hpp"
#include "pointkit/io.hpp"
#include "pointkit/version.hpp"
#include "pointkit_oracles/suites.hpp"

namespace {

using namespace pointkit;

// Accepts "0.25" as well as "1/4".
double parse_ratio(const std::string& token) {
  const auto slash = token.find('/');
  if (slash == std::string::npos) return std::stod(token);
  const double num = std::stod(token.substr(0, slash));
  const double den = std::stod(token.substr(slash + 1));
  if (den == 0.0) throw CLI::ValidationError("ratio denominator is zero: " + token);
  return num / den;
}

int report_suites(const std::vector<suites::SuiteResult>& results) {
  bool all_ok = true;
  for (const auto& r : results) {
    std::printf("%-16s %s  trials=%d  worst=%.3le\n", r.name.c_str(),
                r.ok ? "PASS" : "FAIL", r.trials, r.worst);
    if (!r.ok) {
      all_ok = false;
      for (const auto& line : r.failures) std::printf("  %s\n", line.c_str());
    }
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point cloud attention/pooling kernel toolbox"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // ---- gen ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a synthetic uniform cloud (PTPC file)");
  std::size_t gen_n = 0, gen_c = 16;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--n", gen_n, "point count")->required()->check(CLI::PositiveNumber);
  gen->add_option("--c", gen_c, "feature channels");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "output path")->required();
  gen->callback([&] {
    write_ptpc(gen_out, synth_uniform(gen_n, gen_c, gen_seed));
    std::printf("wrote %zu points (%zu channels) to %s\n", gen_n, gen_c, gen_out.c_str());
  });

  // ---- bench-pool ---------------------------------------------------------
  auto* bench = app.add_subcommand("bench-pool",
                                   "pooling+unpooling latency sweep over methods, n and r");
  std::vector<std::size_t> bench_n{10000, 20000, 40000};
  std::vector<std::string> bench_r{"1/2", "1/4"};
  BenchSpec bench_spec;
  std::string bench_out = "bench.csv";
  bench->add_option("--n-list", bench_n, "point counts")->delimiter(',');
  bench->add_option("--r-list", bench_r, "sampling ratios, e.g. 1/2,0.25")->delimiter(',');
  bench->add_option("--repeats", bench_spec.repeats, "timed repeats (>=3)");
  bench->add_option("--warmup", bench_spec.warmup, "discarded warmup runs (>=1)");
  bench->add_option("--seed", bench_spec.seed, "RNG seed");
  bench->add_option("--threads", bench_spec.threads, "kernel thread count");
  bench->add_option("--k", bench_spec.k, "kNN width for the sampling-based baselines");
  bench->add_option("--out", bench_out, "output CSV path");
  bench->callback([&] {
    bench_spec.n_values = bench_n;
    bench_spec.ratios.clear();
    for (const auto& token : bench_r) bench_spec.ratios.push_back(parse_ratio(token));
    const BenchTable table = bench_pooling(bench_spec);
    emit_csv(table, bench_out);
    for (const BenchRow& row : table.rows) {
      std::printf("%-8s n=%-7zu r=%-8.5f median=%10.3f ms  (p25=%.3f p75=%.3f)\n",
                  row.method.c_str(), row.n, row.r, row.median_ms, row.p25_ms, row.p75_ms);
    }
    std::printf("wrote %s\n", bench_out.c_str());
  });

  // ---- check-grad ---------------------------------------------------------
  auto* cgrad = app.add_subcommand("check-grad",
                                   "finite-difference gradient checks for the differentiable ops");
  std::string grad_module = "all";
  int grad_trials = 20;
  double grad_tol = 1e-4, grad_h = 1e-5;
  std::uint64_t grad_seed = 7;
  int grad_rc = 0;
  cgrad->add_option("--module", grad_module,
                    "all, linear, grouped-linear, mlp2, softmax, gva, pool, seg-head, cls-head");
  cgrad->add_option("--trials", grad_trials, "random instances per op")->check(CLI::PositiveNumber);
  cgrad->add_option("--tol", grad_tol, "max relative error");
  cgrad->add_option("--step", grad_h, "central difference step");
  cgrad->add_option("--seed", grad_seed, "RNG seed");
  cgrad->callback([&] {
    grad_rc = report_suites(suites::gradient_suite(grad_module, grad_seed, grad_trials, grad_h,
                                                   grad_tol));
  });

  // ---- check-equiv --------------------------------------------------------
  auto* cequiv = app.add_subcommand("check-equiv",
                                    "degeneracy identities and brute-force oracle equivalences");
  std::string which = "all";
  int equiv_trials = 50;
  std::uint64_t equiv_seed = 11;
  int equiv_rc = 0;
  cequiv->add_option("--which", which, "all, gva-va, gva-msa, knn-brute, fps-greedy, pool-oracle");
  cequiv->add_option("--trials", equiv_trials, "random instances per suite")
      ->check(CLI::PositiveNumber);
  cequiv->add_option("--seed", equiv_seed, "RNG seed");
  cequiv->callback([&] {
    std::vector<suites::SuiteResult> results;
    const bool all = which == "all";
    if (all || which == "gva-va") results.push_back(suites::gva_vs_vector_attention(equiv_seed, equiv_trials));
    if (all || which == "gva-msa") results.push_back(suites::gva_vs_multi_head(equiv_seed, equiv_trials));
    if (all || which == "knn-brute") results.push_back(suites::knn_vs_brute_force(equiv_seed, equiv_trials));
    if (all || which == "fps-greedy") results.push_back(suites::fps_vs_greedy(equiv_seed, equiv_trials));
    if (all || which == "pool-oracle") results.push_back(suites::pooling_vs_oracles(equiv_seed, equiv_trials));
    if (results.empty()) {
      throw CLI::ValidationError("--which",
                                 "expected all, gva-va, gva-msa, knn-brute, fps-greedy or "
                                 "pool-oracle, got '" + which + "'");
    }
    equiv_rc = report_suites(results);
  });

  // ---- forward ------------------------------------------------------------
  auto* fwd = app.add_subcommand("forward",
                                 "run the segmentation model on a PTPC cloud, write logits");
  std::string fwd_config, fwd_in, fwd_out;
  fwd->add_option("--config", fwd_config, "backbone config file")->required();
  fwd->add_option("--in", fwd_in, "input PTPC cloud")->required();
  fwd->add_option("--out", fwd_out, "output logits file")->required();
  fwd->callback([&] {
    const BackboneConfig cfg = parse_backbone_config(fwd_config);
    const PtpcFile file = read_ptpc(fwd_in);
    if (file.cloud.channels() != cfg.in_channels) {
      throw std::runtime_error("input cloud has " + std::to_string(file.cloud.channels()) +
                               " channels, config expects " + std::to_string(cfg.in_channels));
    }
    const SegmentationModel model(cfg);
    const Tensor logits = model.logits(file.cloud);
    write_logits(fwd_out, logits);
    std::printf("wrote %zu×%zu logits to %s\n", logits.rows(), logits.cols(), fwd_out.c_str());
  });

  // ---- count-params -------------------------------------------------------
  auto* cp = app.add_subcommand("count-params",
                                "print the exact learnable parameter count of a config");
  std::string cp_config;
  cp->add_option("--config", cp_config, "backbone config file")->required();
  cp->callback([&] {
    const BackboneConfig cfg = parse_backbone_config(cp_config);
    std::printf("%zu\n", count_params(cfg));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  if (grad_rc != 0 || equiv_rc != 0) return 1;
  return 0;
}
