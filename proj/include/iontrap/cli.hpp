#pragma once

// Command-line front end. Every run reads one YAML config, writes its outputs
// into an output directory and leaves a manifest.json there (config hash,
// seed, version, output list and a result summary) so the run can be
// repeated bit for bit.
//
// Exit codes: 0 success, 2 configuration / invalid input, 3 numerical
// failure, 4 I/O failure, 1 anything else.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iontrap/ion_sim.hpp"
#include "iontrap/noise_bath.hpp"
#include "iontrap/recool.hpp"
#include "iontrap/trap_model.hpp"

namespace iontrap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

std::uint64_t fnv1a64(std::string_view bytes);

enum class OutputFormat { kCsv, kSvg };

struct TrapBlock {
  std::filesystem::path layout;
  trap::FrequencyTargets targets;
};

struct NoiseBlock {
  noise::DipoleBath bath = noise::preset_wide_band();
  std::string preset = "wide_band";
  double distance = 240e-6;  // m
  double f_min = 1e2;        // Hz
  double f_max = 1e8;
  std::size_t points = 61;
  double f_ref = 1e6;        // Hz, for the planar-integral and Monte Carlo checks
  bool monte_carlo = false;
  noise::MonteCarloOptions mc;
};

struct DriveSpec {
  std::string kind = "white";  // white, band_limited, one_over_f, bath
  double s_e = 0.0;            // (V/m)^2/Hz; reference level for one_over_f
  double lo = 0.0;             // Hz
  double hi = 0.0;             // Hz
  double f_ref = 1e6;          // Hz, one_over_f
  double distance = 240e-6;    // m, bath
  std::string preset = "wide_band";

  sim::NoiseDrive make() const;
};

struct HeatingBlock {
  sim::Frequencies frequencies{1.2e6, 1.4e6, 0.4e6};
  DriveSpec drive;
  sim::LangevinOptions langevin{5e-4, 64, 200, {}};
  std::size_t members = 200;
  double rf_omega = sim::kDefaultRfOmega;
};

struct RecoolBlock {
  recool::PipelineConfig pipeline;
};

struct SyntheticSurvey {
  std::vector<double> distances;  // m
  double frequency = 1e6;         // Hz
  std::string preset = "wide_band";
};

struct SurveyBlock {
  std::optional<std::filesystem::path> records;
  std::optional<SyntheticSurvey> synthetic;
};

struct RunConfig {
  std::filesystem::path source;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  unsigned threads = 0;
  trap::IonSpecies species = trap::IonSpecies::calcium40();
  std::optional<TrapBlock> trap;
  std::optional<NoiseBlock> noise;
  std::optional<HeatingBlock> heating;
  std::optional<RecoolBlock> recool;
  std::optional<SurveyBlock> survey;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
};

/// Paths inside the file resolve relative to the file's directory. Throws
/// ConfigError for malformed content or missing referenced files.
RunConfig parse_run_config(const std::string& yaml_text, const std::filesystem::path& source,
                           const Overrides& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const Overrides& overrides = {});

struct CommandResult {
  std::vector<std::string> outputs;  // file names inside output_dir
  std::string summary_json;          // JSON object
};

CommandResult cmd_trap_analyze(const RunConfig& config, OutputFormat format);
CommandResult cmd_trap_fit_dc(const RunConfig& config, OutputFormat format);
CommandResult cmd_noise_spectrum(const RunConfig& config, OutputFormat format);
CommandResult cmd_simulate_heating(const RunConfig& config, OutputFormat format);
CommandResult cmd_recool_pipeline(const RunConfig& config, OutputFormat format);
CommandResult cmd_survey(const RunConfig& config, OutputFormat format);

/// Full front end: parses argv, dispatches, writes the manifest and maps
/// exceptions to exit codes. Messages go to `out` / `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace iontrap::cli
