#include "pointkit_oracles/suites.hpp"

#include <cmath>
#include <sstream>

#include "pointkit/bench.hpp"
#include "pointkit/network.hpp"
#include "pointkit/rng.hpp"

namespace pointkit::suites {

namespace {

Tensor randn(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

PointCloud random_cloud(Rng& rng, std::size_t n, std::size_t c, double duplicate_fraction = 0.0) {
  PointCloud cloud = synth_uniform(n, c, rng.next_u64());
  if (duplicate_fraction > 0.0 && n > 1) {
    const std::size_t dups = static_cast<std::size_t>(duplicate_fraction * static_cast<double>(n));
    for (std::size_t d = 0; d < dups; ++d) {
      const std::size_t dst = static_cast<std::size_t>(rng.below(n));
      const std::size_t src = static_cast<std::size_t>(rng.below(n));
      for (std::size_t a = 0; a < 3; ++a)
        cloud.positions.at(dst, a) = cloud.positions.at(src, a);
    }
  }
  return cloud;
}

NeighborTable random_reference_sets(Rng& rng, const PointCloud& cloud) {
  switch (rng.below(3)) {
    case 0: {
      const std::size_t k = 1 + rng.below(std::min<std::size_t>(8, cloud.size()));
      return knn(cloud, cloud, k);
    }
    case 1:
      return grid_reference_sets(cloud, GridSpec(0.35));
    default:
      return grid_reference_sets(cloud, GridSpec(0.35, {0.5, 0.5, 0.5}));
  }
}

std::string describe(std::uint64_t trial, double err, const std::string& extra) {
  std::ostringstream os;
  os << "trial " << trial << ": max abs diff " << err;
  if (!extra.empty()) os << " (" << extra << ")";
  return os.str();
}

}  // namespace

SuiteResult gva_vs_vector_attention(std::uint64_t seed, int trials, double tol) {
  SuiteResult result;
  result.name = "gva-va";
  Rng root(seed);
  const std::size_t channel_choices[] = {4, 8, 16};
  for (int t = 0; t < trials; ++t) {
    Rng rng = root.split(static_cast<std::uint64_t>(t));
    const std::size_t c = channel_choices[rng.below(3)];
    const std::size_t n = 2 + rng.below(63);
    const PointCloud cloud = random_cloud(rng, n, c);
    const NeighborTable nt = random_reference_sets(rng, cloud);

    AttentionConfig cfg;
    cfg.channels = c;
    cfg.groups = c;  // one group per channel
    cfg.weight_encoding = WeightEncodingKind::kLinear;
    Rng rp = rng.split("params");
    const AttentionParams params = make_attention_params(cfg, rp);

    const Tensor grouped = gva(cloud, nt, cfg, params);
    const Tensor vector = vector_attention(cloud, nt, params);
    const double err = max_abs_diff(grouped, vector);
    result.record(err <= tol, err,
                  describe(t, err, "n=" + std::to_string(n) + " c=" + std::to_string(c)));
  }
  return result;
}

SuiteResult gva_vs_multi_head(std::uint64_t seed, int trials, double tol) {
  SuiteResult result;
  result.name = "gva-msa";
  Rng root(seed);
  const std::size_t channel_choices[] = {4, 8, 16};
  for (int t = 0; t < trials; ++t) {
    Rng rng = root.split(static_cast<std::uint64_t>(t));
    const std::size_t c = channel_choices[rng.below(3)];
    std::vector<std::size_t> divisors;
    for (std::size_t g = 1; g <= c; ++g)
      if (c % g == 0) divisors.push_back(g);
    const std::size_t g = divisors[rng.below(divisors.size())];
    const std::size_t n = 2 + rng.below(63);
    const PointCloud cloud = random_cloud(rng, n, c);
    const NeighborTable nt = random_reference_sets(rng, cloud);

    AttentionConfig cfg;
    cfg.channels = c;
    cfg.groups = g;
    cfg.weight_encoding = WeightEncodingKind::kFixedGroupSum;
    // The fixed group-sum encoding reproduces per-head scaled dot products
    // over the elementwise product of query and key.
    cfg.relation = RelationKind::kHadamard;
    Rng rp = rng.split("params");
    const AttentionParams params = make_attention_params(cfg, rp);

    const Tensor grouped = gva(cloud, nt, cfg, params);
    const Tensor heads = multi_head_attention(cloud, nt, params, g);
    const double err = max_abs_diff(grouped, heads);
    result.record(err <= tol, err,
                  describe(t, err, "n=" + std::to_string(n) + " c=" + std::to_string(c) +
                                       " g=" + std::to_string(g)));
  }
  return result;
}

SuiteResult knn_vs_brute_force(std::uint64_t seed, int trials, std::size_t max_n) {
  SuiteResult result;
  result.name = "knn-brute";
  Rng root(seed);
  for (int t = 0; t < trials; ++t) {
    Rng rng = root.split(static_cast<std::uint64_t>(t));
    const std::size_t k_choices[] = {1, 3, 16};
    const std::size_t k = k_choices[rng.below(3)];
    const std::size_t n = k + 1 + rng.below(max_n - k);
    const PointCloud cloud = random_cloud(rng, n, 1, t % 3 == 0 ? 0.05 : 0.0);
    const bool separate_query = rng.below(4) == 0;
    const PointCloud query = separate_query ? random_cloud(rng, 1 + rng.below(n), 1) : cloud;

    const NeighborTable fast = knn(query, cloud, k);
    const NeighborTable brute = oracles::brute_force_knn(query.positions, cloud, k);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < fast.indices.size(); ++i)
      if (fast.indices[i] != brute.indices[i]) ++mismatches;
    result.record(mismatches == 0, static_cast<double>(mismatches),
                  describe(t, static_cast<double>(mismatches),
                           "n=" + std::to_string(n) + " k=" + std::to_string(k) +
                               " mismatched entries"));
  }
  return result;
}

SuiteResult fps_vs_greedy(std::uint64_t seed, int trials, std::size_t max_n) {
  SuiteResult result;
  result.name = "fps-greedy";
  Rng root(seed);
  for (int t = 0; t < trials; ++t) {
    Rng rng = root.split(static_cast<std::uint64_t>(t));
    const std::size_t n = 2 + rng.below(max_n - 1);
    const std::size_t m = 1 + rng.below(n);
    const Index start = static_cast<Index>(rng.below(n));
    const PointCloud cloud = random_cloud(rng, n, 1, t % 4 == 0 ? 0.05 : 0.0);

    const std::vector<Index> fast = fps(cloud, m, start);
    const std::vector<Index> slow = oracles::greedy_fps(cloud, m, start);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < fast.size(); ++i)
      if (fast[i] != slow[i]) ++mismatches;
    result.record(mismatches == 0, static_cast<double>(mismatches),
                  describe(t, static_cast<double>(mismatches),
                           "n=" + std::to_string(n) + " m=" + std::to_string(m) +
                               " mismatched picks"));
  }
  return result;
}

SuiteResult pooling_vs_oracles(std::uint64_t seed, int trials, double tol) {
  SuiteResult result;
  result.name = "pool-oracle";
  Rng root(seed);
  for (int t = 0; t < trials; ++t) {
    Rng rng = root.split(static_cast<std::uint64_t>(t));
    const std::size_t n = 50 + rng.below(350);
    const std::size_t c = 4 + rng.below(5);
    const std::size_t cp = 3 + rng.below(4);
    const PointCloud cloud = random_cloud(rng, n, c);
    Rng ru = rng.split("proj");
    const Tensor projection = randn(ru, {c, cp});
    const GridSpec spec(std::pow(static_cast<double>(n) * 0.25, -1.0 / 3.0));
    const std::size_t k = std::min<std::size_t>(5, n);

    double err = 0.0;

    const PoolResult mine = grid_pool(cloud, spec, projection);
    const PoolResult loop = oracles::loop_grid_pool(cloud, spec, projection);
    std::size_t cell_mismatch = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mine.map.cell_of[i] != loop.map.cell_of[i]) ++cell_mismatch;
    err = std::max(err, static_cast<double>(cell_mismatch));
    err = std::max(err, max_abs_diff(mine.pooled.features, loop.pooled.features));
    err = std::max(err, max_abs_diff(mine.pooled.positions, loop.pooled.positions));

    Rng rf = rng.split("upfeat");
    const Tensor up_in = randn(rf, {mine.pooled.size(), cp});
    err = std::max(err, max_abs_diff(map_unpool(up_in, mine.map),
                                     oracles::loop_map_unpool(up_in, loop.map)));

    const SampledPoolResult fps_mine = fps_knn_pool(cloud, 0.3, k, projection);
    const SampledPoolResult fps_loop = oracles::loop_fps_knn_pool(cloud, 0.3, k, projection);
    err = std::max(err, max_abs_diff(fps_mine.pooled.features, fps_loop.pooled.features));
    err = std::max(err, max_abs_diff(fps_mine.pooled.positions, fps_loop.pooled.positions));

    const SampledPoolResult gk_mine = grid_knn_pool(cloud, spec, k, projection);
    const SampledPoolResult gk_loop = oracles::loop_grid_knn_pool(cloud, spec, k, projection);
    err = std::max(err, max_abs_diff(gk_mine.pooled.features, gk_loop.pooled.features));
    err = std::max(err, max_abs_diff(gk_mine.pooled.positions, gk_loop.pooled.positions));

    err = std::max(err, max_abs_diff(
                            interp_unpool(mine.pooled, cloud.positions),
                            oracles::loop_interp_unpool(loop.pooled, cloud.positions)));

    result.record(err <= tol, err, describe(t, err, "n=" + std::to_string(n)));
  }
  return result;
}

namespace {

using GradCase = std::function<GradCheckReport(Rng&)>;

GradCheckReport run_projected_loss(const std::function<Var(Tape&)>& produce,
                                   const std::vector<ParamPtr>& params, const Tensor& weights,
                                   double h, double tol) {
  const auto f = [&](Tape& tape) {
    Var out = produce(tape);
    return tape.sum(tape.mul(out, tape.constant(weights)));
  };
  return grad_check(f, params, h, tol);
}

GradCheckReport grad_linear(Rng& rng, double h, double tol) {
  Rng rl = rng.split("layer");
  const LinearLayer lin = LinearLayer::create("lin", 4, 6, true, rl);
  const ParamPtr x = Param::make("x", randn(rng, {5, 4}));
  const Tensor proj = randn(rng, {5, 6});
  std::vector<ParamPtr> params{x};
  lin.collect(params);
  return run_projected_loss([&](Tape& t) { return lin.apply(t, t.use(x)); }, params, proj, h, tol);
}

GradCheckReport grad_grouped_linear(Rng& rng, double h, double tol) {
  const std::size_t c = rng.below(2) == 0 ? 4 : 8;
  std::vector<std::size_t> divisors;
  for (std::size_t g = 1; g <= c; ++g)
    if (c % g == 0) divisors.push_back(g);
  const std::size_t g = divisors[rng.below(divisors.size())];
  const ParamPtr r = Param::make("r", randn(rng, {5, c}));
  const ParamPtr p = Param::make("p", randn(rng, {1, c}));
  const Tensor proj = randn(rng, {5, g});
  return run_projected_loss(
      [&](Tape& t) { return t.grouped_linear(t.use(r), t.use(p), g); }, {r, p}, proj, h, tol);
}

GradCheckReport grad_mlp2(Rng& rng, double h, double tol) {
  Rng rm = rng.split("mlp");
  const Mlp2 mlp = Mlp2::create("mlp", 3, 5, 4, rm);
  const ParamPtr x = Param::make("x", randn(rng, {6, 3}));
  const Tensor proj = randn(rng, {6, 4});
  std::vector<ParamPtr> params{x};
  mlp.collect(params);
  return run_projected_loss([&](Tape& t) { return mlp.apply(t, t.use(x)); }, params, proj, h, tol);
}

NeighborTable random_ragged_table(Rng& rng, std::size_t n, std::size_t max_row) {
  std::vector<Index> offsets{0};
  std::vector<Index> indices;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = 1 + rng.below(max_row);
    for (std::size_t j = 0; j < row; ++j) indices.push_back(static_cast<Index>(rng.below(n)));
    offsets.push_back(static_cast<Index>(indices.size()));
  }
  return NeighborTable(std::move(offsets), std::move(indices), n);
}

GradCheckReport grad_softmax(Rng& rng, double h, double tol) {
  const std::size_t n = 5;
  const NeighborTable nt = random_ragged_table(rng, n, 4);
  const std::size_t g = 1 + rng.below(3);
  const ParamPtr w = Param::make("w", randn(rng, {nt.total_edges(), g}));
  const Tensor proj = randn(rng, {nt.total_edges(), g});
  return run_projected_loss(
      [&](Tape& t) { return t.segment_softmax(t.use(w), nt); }, {w}, proj, h, tol);
}

GradCheckReport grad_gva(Rng& rng, double h, double tol) {
  const std::size_t c = 8;
  const std::size_t g = rng.below(2) == 0 ? 2 : 4;
  const std::size_t n = 6 + rng.below(5);
  const PointCloud cloud = random_cloud(rng, n, c);
  const NeighborTable nt = knn(cloud, cloud, std::min<std::size_t>(4, n));

  AttentionConfig cfg;
  cfg.channels = c;
  cfg.groups = g;
  cfg.weight_encoding = WeightEncodingKind::kGroupedNormActLinear;
  PosEncConfig pe;
  pe.mode = PosEncMode::kMultiplierAndBias;
  Rng rp = rng.split("params");
  const AttentionParams params = make_attention_params(cfg, rp, pe);
  const ParamPtr feat = Param::make("features", randn(rng, {n, c}));
  const Tensor proj = randn(rng, {n, c});
  std::vector<ParamPtr> all{feat};
  params.collect(all);
  return run_projected_loss(
      [&](Tape& t) { return gva_forward(t, cloud, nt, cfg, params, t.use(feat)); }, all, proj, h,
      tol);
}

GradCheckReport grad_pool(Rng& rng, double h, double tol) {
  const std::size_t n = 20;
  const std::size_t c = 5, cp = 4;
  const PointCloud cloud = random_cloud(rng, n, c);
  const PartitionMap map = grid_partition(cloud, GridSpec(0.35));
  const ParamPtr feat = Param::make("features", randn(rng, {n, c}));
  const ParamPtr u = Param::make("projection", randn(rng, {c, cp}));
  const Tensor proj = randn(rng, {n, cp});
  return run_projected_loss(
      [&](Tape& t) {
        Var pooled = grid_pool_features(t, t.use(feat), u, map);
        return map_unpool_features(t, pooled, map);
      },
      {feat, u}, proj, h, tol);
}

GradCheckReport grad_seg_head(Rng& rng, double h, double tol) {
  Rng rh = rng.split("head");
  const SegHead head = SegHead::create(8, 4, rh);
  const ParamPtr feat = Param::make("features", randn(rng, {6, 8}));
  const Tensor proj = randn(rng, {6, 4});
  std::vector<ParamPtr> params{feat};
  head.collect(params);
  return run_projected_loss([&](Tape& t) { return head.apply(t, t.use(feat)); }, params, proj, h,
                            tol);
}

GradCheckReport grad_cls_head(Rng& rng, double h, double tol) {
  Rng rh = rng.split("head");
  const ClsHead head = ClsHead::create(8, 4, rh);
  const ParamPtr feat = Param::make("features", randn(rng, {6, 8}));
  const Tensor proj = randn(rng, {1, 4});
  std::vector<ParamPtr> params{feat};
  head.collect(params);
  return run_projected_loss([&](Tape& t) { return head.apply(t, t.use(feat)); }, params, proj, h,
                            tol);
}

const std::vector<std::pair<std::string, GradCheckReport (*)(Rng&, double, double)>>&
grad_registry() {
  static const std::vector<std::pair<std::string, GradCheckReport (*)(Rng&, double, double)>>
      registry{
          {"linear", grad_linear},       {"grouped-linear", grad_grouped_linear},
          {"mlp2", grad_mlp2},           {"softmax", grad_softmax},
          {"gva", grad_gva},             {"pool", grad_pool},
          {"seg-head", grad_seg_head},   {"cls-head", grad_cls_head},
      };
  return registry;
}

}  // namespace

const std::vector<std::string>& gradient_suite_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : grad_registry()) out.push_back(name);
    return out;
  }();
  return names;
}

std::vector<SuiteResult> gradient_suite(const std::string& op, std::uint64_t seed, int trials,
                                        double h, double tol) {
  std::vector<SuiteResult> results;
  bool matched = false;
  for (const auto& [name, fn] : grad_registry()) {
    if (op != "all" && op != name) continue;
    matched = true;
    SuiteResult result;
    result.name = name;
    Rng root(Rng(seed).split(name).next_u64());
    for (int t = 0; t < trials; ++t) {
      Rng rng = root.split(static_cast<std::uint64_t>(t));
      const GradCheckReport report = fn(rng, h, tol);
      result.record(report.ok, report.max_rel_err,
                    "trial " + std::to_string(t) + ": max rel err " +
                        std::to_string(report.max_rel_err) + " at " + report.worst_coord);
    }
    results.push_back(std::move(result));
  }
  if (!matched) {
    throw std::invalid_argument("unknown gradient suite '" + op +
                                "' (try: all, linear, grouped-linear, mlp2, softmax, gva, pool, "
                                "seg-head, cls-head)");
  }
  return results;
}

}  // namespace pointkit::suites
