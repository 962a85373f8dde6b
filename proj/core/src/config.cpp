#include "pointkit/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pointkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::size_t parse_size(const std::string& v, int line) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) fail(line, "expected integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, int line) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) fail(line, "expected number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  fail(line, "expected boolean, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& v, int line) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_size(item, line));
  return out;
}

std::vector<double> parse_double_list(const std::string& v, int line) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_double(item, line));
  return out;
}

}  // namespace

BackboneConfig parse_backbone_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  BackboneConfig cfg;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) fail(line_no, "empty value for '" + key + "'");

    if (key == "in_channels") cfg.in_channels = parse_size(value, line_no);
    else if (key == "classes") cfg.classes = parse_size(value, line_no);
    else if (key == "stem_dim") cfg.stem_dim = parse_size(value, line_no);
    else if (key == "stem_groups") cfg.stem_groups = parse_size(value, line_no);
    else if (key == "encoder_depths") cfg.encoder_depths = parse_size_list(value, line_no);
    else if (key == "decoder_depths") cfg.decoder_depths = parse_size_list(value, line_no);
    else if (key == "dims") cfg.dims = parse_size_list(value, line_no);
    else if (key == "groups") cfg.groups = parse_size_list(value, line_no);
    else if (key == "grid_multipliers") cfg.grid_multipliers = parse_double_list(value, line_no);
    else if (key == "base_grid") cfg.base_grid = parse_double(value, line_no);
    else if (key == "k") cfg.k = parse_size(value, line_no);
    else if (key == "attention") {
      if (value == "neighborhood") cfg.attention = AttentionRefMode::kNeighborhood;
      else if (value == "shifted_grid") cfg.attention = AttentionRefMode::kShiftedGrid;
      else fail(line_no, "attention must be 'neighborhood' or 'shifted_grid'");
    } else if (key == "attention_grid_multiplier") {
      cfg.attention_grid_multiplier = parse_double(value, line_no);
    } else if (key == "weight_encoding") {
      cfg.weight_encoding = weight_encoding_from_string(value);
    } else if (key == "pe_multiplier") cfg.pe_multiplier = parse_bool(value, line_no);
    else if (key == "value_position_bias") cfg.value_position_bias = parse_bool(value, line_no);
    else if (key == "pooling") {
      if (value == "grid") cfg.pooling = PoolMethod::kGrid;
      else if (value == "fps_knn") cfg.pooling = PoolMethod::kFpsKnn;
      else if (value == "grid_knn") cfg.pooling = PoolMethod::kGridKnn;
      else fail(line_no, "pooling must be 'grid', 'fps_knn' or 'grid_knn'");
    } else if (key == "pool_ratio") cfg.pool_ratio = parse_double(value, line_no);
    else if (key == "skip_fusion") {
      if (value == "concat") cfg.skip_fusion = SkipFusion::kConcat;
      else if (value == "add") cfg.skip_fusion = SkipFusion::kAdd;
      else fail(line_no, "skip_fusion must be 'concat' or 'add'");
    } else if (key == "seed") cfg.seed = parse_size(value, line_no);
    else fail(line_no, "unknown key '" + key + "'");
  }
  cfg.check();
  return cfg;
}

namespace {

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

}  // namespace

std::string format_backbone_config(const BackboneConfig& cfg) {
  std::ostringstream os;
  os << "in_channels = " << cfg.in_channels << "\n";
  os << "classes = " << cfg.classes << "\n";
  os << "stem_dim = " << cfg.stem_dim << "\n";
  os << "stem_groups = " << cfg.stem_groups << "\n";
  os << "encoder_depths = " << join(cfg.encoder_depths) << "\n";
  os << "decoder_depths = " << join(cfg.decoder_depths) << "\n";
  os << "dims = " << join(cfg.dims) << "\n";
  os << "groups = " << join(cfg.groups) << "\n";
  os << "grid_multipliers = " << join(cfg.grid_multipliers) << "\n";
  os << "base_grid = " << cfg.base_grid << "\n";
  os << "k = " << cfg.k << "\n";
  os << "attention = "
     << (cfg.attention == AttentionRefMode::kNeighborhood ? "neighborhood" : "shifted_grid")
     << "\n";
  os << "attention_grid_multiplier = " << cfg.attention_grid_multiplier << "\n";
  os << "weight_encoding = " << to_string(cfg.weight_encoding) << "\n";
  os << "pe_multiplier = " << (cfg.pe_multiplier ? "true" : "false") << "\n";
  os << "value_position_bias = " << (cfg.value_position_bias ? "true" : "false") << "\n";
  os << "pooling = "
     << (cfg.pooling == PoolMethod::kGrid
             ? "grid"
             : cfg.pooling == PoolMethod::kFpsKnn ? "fps_knn" : "grid_knn")
     << "\n";
  os << "pool_ratio = " << cfg.pool_ratio << "\n";
  os << "skip_fusion = " << (cfg.skip_fusion == SkipFusion::kConcat ? "concat" : "add") << "\n";
  os << "seed = " << cfg.seed << "\n";
  return os.str();
}

}  // namespace pointkit
