#include "pointkit/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pointkit/pooling.hpp"
#include "pointkit/rng.hpp"
#include "pointkit/version.hpp"

namespace pointkit {

void BenchSpec::check() const {
  if (repeats < 3) throw std::invalid_argument("BenchSpec: repeats must be >= 3");
  if (warmup < 1) throw std::invalid_argument("BenchSpec: warmup must be >= 1");
  if (n_values.empty() || ratios.empty()) {
    throw std::invalid_argument("BenchSpec: need at least one n and one ratio");
  }
  for (std::size_t n : n_values)
    if (n == 0) throw std::invalid_argument("BenchSpec: n must be >= 1");
  for (double r : ratios)
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("BenchSpec: ratios must lie in (0,1]");
  if (threads < 1) throw std::invalid_argument("BenchSpec: threads must be >= 1");
}

const BenchRow* BenchTable::find(const std::string& method, std::size_t n, double r) const {
  for (const BenchRow& row : rows) {
    if (row.method == method && row.n == n && row.r == r) return &row;
  }
  return nullptr;
}

PointCloud synth_uniform(std::size_t n, std::size_t c, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synth_uniform: n must be >= 1");
  Rng root(seed);
  Rng rp = root.split("positions");
  Rng rf = root.split("features");
  Tensor pos({n, 3});
  for (std::size_t i = 0; i < n * 3; ++i) pos[i] = rp.uniform();
  Tensor feat({n, c});
  for (std::size_t i = 0; i < n * c; ++i) feat[i] = rf.normal();
  return PointCloud(std::move(pos), std::move(feat));
}

namespace {

double percentile(std::vector<double> samples, double p) {
  std::sort(samples.begin(), samples.end());
  // Nearest-rank: the ceil(p*n)-th smallest sample.
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(p * static_cast<double>(samples.size())));
  return samples[std::min(samples.size() - 1, rank > 0 ? rank - 1 : 0)];
}

struct RunOutput {
  Tensor pooled_features;
  Tensor pooled_positions;
  Tensor unpooled;
};

void require_identical(const RunOutput& a, const RunOutput& b, const std::string& method) {
  if (max_abs_diff(a.pooled_features, b.pooled_features) != 0.0 ||
      max_abs_diff(a.pooled_positions, b.pooled_positions) != 0.0 ||
      max_abs_diff(a.unpooled, b.unpooled) != 0.0) {
    throw std::logic_error("bench_pooling: " + method + " results differ across repeats");
  }
}

}  // namespace

BenchTable bench_pooling(const BenchSpec& spec) {
  spec.check();
  BenchTable table;
  table.threads = spec.threads;
  table.seed = spec.seed;
  table.version = kVersion;

  Rng root(spec.seed);
  const std::vector<std::string> methods{"fps_knn", "grid", "grid_knn"};

  for (const std::string& method : methods) {
    for (std::size_t n : spec.n_values) {
      const PointCloud cloud = synth_uniform(n, spec.channels, root.split(n).next_u64());
      Rng ru = root.split("projection");
      const Tensor projection =
          [&] {
            Tensor u({spec.channels, spec.out_channels});
            const double bound = 1.0 / std::sqrt(static_cast<double>(spec.channels));
            for (std::size_t i = 0; i < u.numel(); ++i) u[i] = ru.uniform(-bound, bound);
            return u;
          }();
      for (double r : spec.ratios) {
        const double grid_size =
            std::pow(static_cast<double>(n) * r, -1.0 / 3.0);  // uniform-density rule
        const std::size_t k = std::min<std::size_t>(spec.k, n);

        const auto run = [&]() -> RunOutput {
          RunOutput out;
          if (method == "grid") {
            PoolResult res = grid_pool(cloud, GridSpec(grid_size), projection, spec.threads);
            out.unpooled = map_unpool(res.pooled.features, res.map);
            out.pooled_features = std::move(res.pooled.features);
            out.pooled_positions = std::move(res.pooled.positions);
          } else if (method == "grid_knn") {
            SampledPoolResult res =
                grid_knn_pool(cloud, GridSpec(grid_size), k, projection, spec.threads);
            out.unpooled = interp_unpool(res.pooled, cloud.positions, 3, spec.threads);
            out.pooled_features = std::move(res.pooled.features);
            out.pooled_positions = std::move(res.pooled.positions);
          } else {
            SampledPoolResult res = fps_knn_pool(cloud, r, k, projection, spec.threads);
            out.unpooled = interp_unpool(res.pooled, cloud.positions, 3, spec.threads);
            out.pooled_features = std::move(res.pooled.features);
            out.pooled_positions = std::move(res.pooled.positions);
          }
          return out;
        };

        RunOutput reference;
        for (int w = 0; w < spec.warmup; ++w) reference = run();
        std::vector<double> samples;
        samples.reserve(static_cast<std::size_t>(spec.repeats));
        for (int rep = 0; rep < spec.repeats; ++rep) {
          const auto t0 = std::chrono::steady_clock::now();
          RunOutput out = run();
          const auto t1 = std::chrono::steady_clock::now();
          samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
          require_identical(reference, out, method);
        }
        BenchRow row;
        row.method = method;
        row.n = n;
        row.r = r;
        row.median_ms = percentile(samples, 0.50);
        row.p25_ms = percentile(samples, 0.25);
        row.p75_ms = percentile(samples, 0.75);
        table.rows.push_back(std::move(row));
      }
    }
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const BenchRow& a, const BenchRow& b) {
    return std::tie(a.method, a.n, a.r) < std::tie(b.method, b.n, b.r);
  });
  return table;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("emit_csv: float formatting failed");
  return std::string(buf, p);
}

double parse_double_field(const std::string& s, const std::string& context) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw std::runtime_error("parse_csv: bad number '" + s + "' in " + context);
  }
  return out;
}

}  // namespace

void emit_csv(const BenchTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("emit_csv: cannot open '" + path + "' for writing");
  out << "# threads=" << table.threads << " seed=" << table.seed
      << " version=" << table.version << "\n";
  out << "method,n,r,median_ms,p25_ms,p75_ms\n";
  for (const BenchRow& row : table.rows) {
    out << row.method << ',' << row.n << ',' << format_double(row.r) << ','
        << format_double(row.median_ms) << ',' << format_double(row.p25_ms) << ','
        << format_double(row.p75_ms) << "\n";
  }
  if (!out) throw std::runtime_error("emit_csv: write to '" + path + "' failed");
}

BenchTable parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_csv: cannot open '" + path + "'");
  BenchTable table;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw std::runtime_error("parse_csv: missing metadata comment line");
  }
  {
    std::stringstream ss(line.substr(2));
    std::string field;
    while (ss >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "threads") table.threads = static_cast<int>(parse_double_field(value, "metadata"));
      else if (key == "seed") table.seed = std::stoull(value);
      else if (key == "version") table.version = value;
    }
  }
  if (!std::getline(in, line) || line != "method,n,r,median_ms,p25_ms,p75_ms") {
    throw std::runtime_error("parse_csv: missing or malformed header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw std::runtime_error("parse_csv: bad row '" + line + "'");
    BenchRow row;
    row.method = fields[0];
    row.n = static_cast<std::size_t>(std::stoull(fields[1]));
    row.r = parse_double_field(fields[2], "row");
    row.median_ms = parse_double_field(fields[3], "row");
    row.p25_ms = parse_double_field(fields[4], "row");
    row.p75_ms = parse_double_field(fields[5], "row");
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace pointkit
