#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "iontrap/cli.hpp"
#include "iontrap/errors.hpp"
#include "test_support.hpp"

using namespace iontrap;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("iontrap_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "iontrap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  return code;
}

const std::string kNoise = R"(seed: 5
output_dir: out
noise:
  preset: wide_band
  f_min_Hz: 1.0e3
  f_max_Hz: 1.0e7
  points: 9
  monte_carlo: {enabled: true, realizations: 40, mean_dipoles: 2.0e4}
)";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config parsing") {
    const auto c = cli::parse_run_config(kNoise, "/tmp/x/run.yaml");
    CHECK(c.seed == 5);
    CHECK(c.output_dir == fs::path("/tmp/x/out"));
    REQUIRE(c.noise);
    CHECK(c.noise->points == 9);
    CHECK(c.noise->monte_carlo);
    CHECK(c.noise->mc.seed == 5);
    CHECK(c.config_hash == cli::fnv1a64(kNoise));

    cli::Overrides ov;
    ov.seed = 77;
    ov.output_dir = "/tmp/elsewhere";
    const auto o = cli::parse_run_config(kNoise, "/tmp/x/run.yaml", ov);
    CHECK(o.seed == 77);
    CHECK(o.output_dir == fs::path("/tmp/elsewhere"));

    CHECK_THROWS_AS(cli::parse_run_config("seed: 1\nnoize: {}\n", "a.yaml"), ConfigError);
    CHECK_THROWS_AS(cli::parse_run_config("output_dir: out\n", "a.yaml"), ConfigError);
    CHECK_THROWS_AS(cli::parse_run_config("seed: [1, 2\n", "a.yaml"), ConfigError);
    CHECK_THROWS_AS(cli::parse_run_config("seed: 1\ntrap: {layout: missing.layout}\n", "a.yaml"), ConfigError);
    CHECK_THROWS_AS(cli::parse_run_config("seed: 1\nnoise: {preset: nope}\n", "a.yaml"), ConfigError);
    CHECK_THROWS_AS(cli::parse_run_config("seed: 1\nheating: {drive: {kind: pink}}\n", "a.yaml"), ConfigError);
  }

  TEST_CASE("fnv1a64 reference values") {
    CHECK(cli::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(cli::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  }

  TEST_CASE("noise-spectrum run writes a manifest and is repeatable across threads") {
    const auto dir = scratch("noise");
    const auto cfg = write_file(dir / "run.yaml", kNoise + "threads: 1\n");
    REQUIRE(run({"noise-spectrum", "--config", cfg.string(), "--out", (dir / "a").string(), "--format", "svg"}) == 0);
    const auto cfg3 = write_file(dir / "run3.yaml", kNoise + "threads: 3\n");
    REQUIRE(run({"noise-spectrum", "--config", cfg3.string(), "--out", (dir / "b").string(), "--format", "svg"}) == 0);
    CHECK(slurp(dir / "a" / "spectrum.csv") == slurp(dir / "b" / "spectrum.csv"));
    const auto ma = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    const auto mb = nlohmann::json::parse(slurp(dir / "b" / "manifest.json"));
    CHECK(ma["summary"]["monte_carlo"] == mb["summary"]["monte_carlo"]);
    CHECK(ma["seed"] == 5);
    CHECK(ma["command"] == "noise-spectrum");
    CHECK(ma["outputs"].size() == 2);
    CHECK(fs::exists(dir / "a" / "spectrum.svg"));

    REQUIRE(run({"noise-spectrum", "--config", cfg.string(), "--out", (dir / "c").string(), "--seed", "6"}) == 0);
    const auto mc = nlohmann::json::parse(slurp(dir / "c" / "manifest.json"));
    CHECK(mc["seed"] == 6);
    CHECK(mc["summary"]["monte_carlo"]["mean"] != ma["summary"]["monte_carlo"]["mean"]);
  }

  TEST_CASE("exit codes") {
    const auto dir = scratch("codes");
    std::string err;
    CHECK(run({"noise-spectrum"}) == cli::kExitConfig);
    CHECK(run({"noise-spectrum", "--config", (dir / "absent.yaml").string()}) == cli::kExitIo);

    const auto bad = write_file(dir / "bad.yaml", "seed: 1\nunknown: 2\n");
    CHECK(run({"noise-spectrum", "--config", bad.string()}, &err) == cli::kExitConfig);
    CHECK(err.find("unknown") != std::string::npos);

    const auto no_block = write_file(dir / "nb.yaml", "seed: 1\n");
    CHECK(run({"survey", "--config", no_block.string()}) == cli::kExitConfig);

    const auto trap = write_file(dir / "trap.yaml",
                                 "seed: 1\ntrap: {layout: " + testing::source_path("data/paper_trap.layout") + "}\n");
    CHECK(run({"trap-analyze", "--config", trap.string(), "--out", (dir / "t").string(), "--format", "svg"}) ==
          cli::kExitConfig);
    CHECK(run({"trap-analyze", "--config", trap.string(), "--out", (dir / "t").string()}) == cli::kExitOk);
    CHECK(fs::exists(dir / "t" / "electrodes.csv"));

    // Bins far longer than the cooling time make the forward model refuse.
    const auto slow = write_file(dir / "slow.yaml",
                                 "seed: 1\nrecool: {curve: {bin_width_us: 5000}, thermal: false}\n");
    CHECK(run({"recool-pipeline", "--config", slow.string(), "--out", (dir / "r").string()}, &err) ==
          cli::kExitNumerical);

    write_file(dir / "blocker", "x");
    const auto ok = write_file(dir / "ok.yaml", kNoise);
    CHECK(run({"noise-spectrum", "--config", ok.string(), "--out", (dir / "blocker" / "sub").string()}) ==
          cli::kExitIo);
  }

  TEST_CASE("survey command: text points and empty input") {
    const auto dir = scratch("survey");
    const auto cfg = write_file(dir / "s.yaml",
                                "seed: 1\nsurvey: {records: " + testing::source_path("data/text_points.csv") + "}\n");
    REQUIRE(run({"survey", "--config", cfg.string(), "--out", (dir / "o").string(), "--format", "svg"}) == 0);
    const auto csv = slurp(dir / "o" / "survey.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(fs::exists(dir / "o" / "survey.svg"));
    const auto first = slurp(dir / "o" / "manifest.json");
    REQUIRE(run({"survey", "--config", cfg.string(), "--out", (dir / "o").string(), "--format", "svg"}) == 0);
    CHECK(slurp(dir / "o" / "manifest.json") == first);

    const auto empty = write_file(dir / "e.yaml", "seed: 1\nsurvey: {}\n");
    REQUIRE(run({"survey", "--config", empty.string(), "--out", (dir / "e").string(), "--format", "svg"}) == 0);
    CHECK(fs::exists(dir / "e" / "survey.svg"));
  }

  TEST_CASE("simulate-heating writes rates and a trace manifest") {
    const auto dir = scratch("heat");
    const auto cfg = write_file(dir / "h.yaml", R"(seed: 3
heating:
  drive: {kind: white, s_e: 1.0e-9}
  duration_s: 1.0e-4
  samples: 20
  members: 16
)");
    REQUIRE(run({"simulate-heating", "--config", cfg.string(), "--out", (dir / "o").string()}) == 0);
    CHECK(fs::exists(dir / "o" / "rates.csv"));
    CHECK(fs::exists(dir / "o" / "trace_member0.manifest.json"));
    const auto m = nlohmann::json::parse(slurp(dir / "o" / "manifest.json"));
    CHECK(m["summary"].contains("phonons_per_s_at_effective"));
    CHECK(m["summary"].contains("phonons_per_s_at_axial"));
  }
}
