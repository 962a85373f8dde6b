#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "pointkit/bench.hpp"
#include "pointkit/config.hpp"
#include "pointkit/io.hpp"
#include "pointkit/network.hpp"

using namespace pointkit;

namespace {

const std::string kCli = POINTKIT_CLI_PATH;
const std::string kConfigDir = POINTKIT_CONFIG_DIR;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string run_capture(const std::string& args) {
  const std::string out_path = "cli_stdout.txt";
  const std::string cmd = kCli + " " + args + " >" + out_path + " 2>/dev/null";
  std::system(cmd.c_str());
  std::ifstream in(out_path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::remove(out_path.c_str());
  return ss.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gen writes byte-identical files for identical flags") {
  REQUIRE(run("gen --n 500 --c 4 --seed 9 --out gen_a.ptpc") == 0);
  REQUIRE(run("gen --n 500 --c 4 --seed 9 --out gen_b.ptpc") == 0);
  CHECK(slurp("gen_a.ptpc") == slurp("gen_b.ptpc"));
  const PtpcFile file = read_ptpc("gen_a.ptpc");
  CHECK(file.cloud.size() == 500);
  CHECK(file.cloud.channels() == 4);
  std::remove("gen_a.ptpc");
  std::remove("gen_b.ptpc");
}

TEST_CASE("gen rejects n = 0 with a usage error") { CHECK(run("gen --n 0 --out x.ptpc") != 0); }

TEST_CASE("unknown subcommands and flags exit nonzero") {
  CHECK(run("frobnicate") != 0);
  CHECK(run("gen --n 5 --out x.ptpc --bogus 1") != 0);
}

TEST_CASE("check-equiv gva-va exits 0") {
  CHECK(run("check-equiv --which gva-va --trials 10") == 0);
}

TEST_CASE("check-grad on one module exits 0") {
  CHECK(run("check-grad --module grouped-linear --trials 5") == 0);
}

TEST_CASE("count-params matches the library and reacts to the PE multiplier") {
  const std::string toy = kConfigDir + "/toy.cfg";
  const std::string out = run_capture("count-params --config " + toy);
  const std::size_t reported = std::stoull(out);
  CHECK(reported == count_params(parse_backbone_config(toy)));

  std::ofstream cfg("no_pem.cfg");
  cfg << "classes = 5\nstem_dim = 16\nstem_groups = 4\n"
      << "encoder_depths = 1,1,1,1\ndecoder_depths = 1,1,1,1\n"
      << "dims = 16,32,32,32\ngroups = 4,8,8,8\n"
      << "grid_multipliers = 3.0,2.5,2.5,2.5\nk = 8\npe_multiplier = false\n";
  cfg.close();
  const std::size_t without = std::stoull(run_capture("count-params --config no_pem.cfg"));
  BackboneConfig on = parse_backbone_config(toy);
  CHECK(reported - without == UNet(on).pe_multiplier_param_count());
  std::remove("no_pem.cfg");
}

TEST_CASE("forward writes logits with the expected shape, deterministically") {
  const std::string toy = kConfigDir + "/toy.cfg";
  REQUIRE(run("gen --n 400 --c 3 --seed 5 --out fwd.ptpc") == 0);
  REQUIRE(run("forward --config " + toy + " --in fwd.ptpc --out fwd_a.bin") == 0);
  REQUIRE(run("forward --config " + toy + " --in fwd.ptpc --out fwd_b.bin") == 0);
  CHECK(slurp("fwd_a.bin") == slurp("fwd_b.bin"));
  const Tensor logits = read_logits("fwd_a.bin");
  CHECK(logits.rows() == 400);
  CHECK(logits.cols() == 5);
  std::remove("fwd.ptpc");
  std::remove("fwd_a.bin");
  std::remove("fwd_b.bin");
}

TEST_CASE("forward rejects a channel-mismatched input") {
  const std::string toy = kConfigDir + "/toy.cfg";
  REQUIRE(run("gen --n 50 --c 7 --seed 5 --out mismatch.ptpc") == 0);
  CHECK(run("forward --config " + toy + " --in mismatch.ptpc --out x.bin") != 0);
  std::remove("mismatch.ptpc");
}

TEST_CASE("bench-pool writes a parseable CSV for a tiny sweep") {
  REQUIRE(run("bench-pool --n-list 400 --r-list 1/2 --repeats 3 --seed 3 --out bench_tiny.csv") ==
          0);
  const BenchTable table = parse_csv("bench_tiny.csv");
  CHECK(table.rows.size() == 3);
  CHECK(table.seed == 3);
  std::remove("bench_tiny.csv");
}
