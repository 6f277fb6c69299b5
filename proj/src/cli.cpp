#include "iontrap/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/layout_io.hpp"
#include "iontrap/numerics.hpp"
#include "iontrap/survey.hpp"

#ifndef IONTRAP_VERSION
#define IONTRAP_VERSION "0.0.0"
#endif

namespace iontrap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kMeV = constants::kMilliElectronVolt;

// ---- config parsing -------------------------------------------------------

void check_keys(const YAML::Node& node, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
  }
}

template <typename T>
T get(const YAML::Node& node, const char* key, const std::string& where, T fallback) {
  const YAML::Node child = node[key];
  if (!child) return fallback;
  try {
    return child.as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("{}.{}: {}", where, key, e.what()));
  }
}

template <typename T>
T require(const YAML::Node& node, const char* key, const std::string& where) {
  if (!node[key]) throw ConfigError(fmt::format("{}: missing '{}'", where, key));
  return get<T>(node, key, where, T{});
}

std::array<double, 3> triple(const YAML::Node& node, const char* key, const std::string& where,
                             std::array<double, 3> fallback, double scale = 1.0) {
  if (!node[key]) return {fallback[0] * scale, fallback[1] * scale, fallback[2] * scale};
  const auto v = get<std::vector<double>>(node, key, where, {});
  if (v.size() != 3) throw ConfigError(fmt::format("{}.{}: needs three values", where, key));
  return {v[0] * scale, v[1] * scale, v[2] * scale};
}

fs::path existing_file(const fs::path& base, const std::string& rel, const std::string& where) {
  const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
  if (!fs::is_regular_file(p)) throw ConfigError(fmt::format("{}: file not found: {}", where, p.string()));
  return p;
}

recool::TwoLevelParams parse_laser(const YAML::Node& node, const std::string& where) {
  auto p = recool::calcium40_defaults();
  if (!node) return p;
  check_keys(node, {"intensity_mW_cm2", "saturation", "detuning_MHz", "projection"}, where);
  if (node["intensity_mW_cm2"] && node["saturation"])
    throw ConfigError(where + ": give intensity_mW_cm2 or saturation, not both");
  if (node["intensity_mW_cm2"]) {
    const double i_sat = recool::saturation_intensity(recool::CalciumLine::kLinewidth,
                                                      recool::CalciumLine::kWavelength);
    p.saturation = recool::saturation_from_intensity(
        get<double>(node, "intensity_mW_cm2", where, 38.0) * 10.0, i_sat);
  }
  p.saturation = get<double>(node, "saturation", where, p.saturation);
  p.detuning = constants::kTwoPi * 1e6 * get<double>(node, "detuning_MHz", where, -5.0);
  p.projection = get<double>(node, "projection", where, p.projection);
  return recool::TwoLevelParams::make(p.natural_linewidth, p.saturation, p.detuning, p.wavenumber,
                                      p.projection);
}

noise::DipoleBath parse_bath(const YAML::Node& node, const std::string& where, std::string& preset) {
  preset = get<std::string>(node, "preset", where, "wide_band");
  auto bath = noise::preset(preset);
  if (node["n_s_per_m2"] || node["mu_debye"] || node["gamma_min"] || node["gamma_max"] || node["a"]) {
    bath = noise::DipoleBath::with_a(
        get<double>(node, "n_s_per_m2", where, bath.n_s),
        get<double>(node, "mu_debye", where, bath.mu / constants::kDebye) * constants::kDebye,
        get<double>(node, "gamma_min", where, bath.gamma_min),
        get<double>(node, "gamma_max", where, bath.gamma_max), get<double>(node, "a", where, bath.a_norm));
  }
  return bath;
}

// ---- output helpers --------------------------------------------------------

class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError(dir_.string(), "cannot create output directory: " + ec.message());
  }

  template <typename Fn>
  void write(const std::string& name, Fn&& fn) {
    const fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError(p.string(), "cannot open for writing");
    fn(out);
    if (!out) throw IoError(p.string(), "write failed");
    files_.push_back(name);
  }

  std::vector<std::string> files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

void reject_svg(OutputFormat format, const char* command) {
  if (format == OutputFormat::kSvg)
    throw ConfigError(fmt::format("{}: --format svg is only available for noise-spectrum and survey",
                                  command));
}

// Log-log line plot of one or more series sharing an abscissa.
void write_loglog_svg(std::ostream& out, const std::vector<double>& x,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series,
                      const std::string& x_label, const std::string& y_label) {
  constexpr double kW = 640.0, kH = 480.0, kL = 80.0, kR = 20.0, kT = 20.0, kB = 60.0;
  double x0 = std::floor(std::log10(x.front())), x1 = std::ceil(std::log10(x.back()));
  double y0 = 1e300, y1 = -1e300;
  for (const auto& [name, y] : series)
    for (double v : y)
      if (v > 0.0) {
        y0 = std::min(y0, std::floor(std::log10(v)));
        y1 = std::max(y1, std::ceil(std::log10(v)));
      }
  if (!(y1 > y0)) {
    y0 = -1.0;
    y1 = 1.0;
  }
  const auto px = [&](double v) { return kL + (std::log10(v) - x0) / (x1 - x0) * (kW - kL - kR); };
  const auto py = [&](double v) { return kH - kB - (std::log10(v) - y0) / (y1 - y0) * (kH - kT - kB); };
  out << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
                     "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n",
                     kW, kH);
  out << fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                     kL, kT, kW - kL - kR, kH - kT - kB);
  for (int e = static_cast<int>(x0); e <= static_cast<int>(x1); ++e)
    out << fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">1e{}</text>\n",
                       px(std::pow(10.0, e)), kH - kB + 18, e);
  for (int e = static_cast<int>(y0); e <= static_cast<int>(y1); ++e)
    out << fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">1e{}</text>\n", kL - 6,
                       py(std::pow(10.0, e)) + 4, e);
  out << fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     0.5 * (kL + kW - kR), kH - 15, x_label);
  out << fmt::format("<text x=\"18\" y=\"{0:.1f}\" text-anchor=\"middle\" "
                     "transform=\"rotate(-90 18 {0:.1f})\">{1}</text>\n",
                     0.5 * (kT + kH - kB), y_label);
  static constexpr const char* kColors[] = {"steelblue", "crimson", "darkgreen", "orange"};
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::string pts;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (series[s].second[i] > 0.0) pts += fmt::format("{:.2f},{:.2f} ", px(x[i]), py(series[s].second[i]));
    out << fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\"/>\n", pts,
                       kColors[s % 4]);
    out << fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", kL + 10, kT + 16 + 14 * s,
                       kColors[s % 4], series[s].first);
  }
  out << "</svg>\n";
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log10(x[i]));
    ly.push_back(std::log10(y[i]));
  }
  return numerics::fit_line(lx, ly).slope;
}

json modes_json(const trap::ModeSet& m) {
  json j;
  j["center_um"] = {m.center.x() * 1e6, m.center.y() * 1e6, m.center.z() * 1e6};
  j["frequencies_MHz"] = {m.frequencies[0] / 1e6, m.frequencies[1] / 1e6, m.frequencies[2] / 1e6};
  j["tilt_deg"] = m.tilt_deg;
  j["rf_tilt_deg"] = m.rf_tilt_deg;
  j["rf_dc_misalignment_deg"] = m.rf_dc_misalignment_deg;
  j["mathieu_q"] = m.mathieu_q;
  j["mathieu_a"] = m.mathieu_a;
  j["mathieu_stable"] = m.mathieu_stable;
  return j;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

sim::NoiseDrive DriveSpec::make() const {
  if (kind == "white") return sim::NoiseDrive::white(s_e);
  if (kind == "band_limited") return sim::NoiseDrive::band_limited(s_e, lo, hi);
  if (kind == "one_over_f") return sim::NoiseDrive::one_over_f(s_e, f_ref, lo, hi);
  if (kind == "bath") return sim::NoiseDrive::from_bath(noise::preset(preset), distance);
  throw ConfigError("heating.drive.kind must be white, band_limited, one_over_f or bath");
}

RunConfig parse_run_config(const std::string& yaml_text, const fs::path& source,
                           const Overrides& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(source.string() + ": YAML parse error: " + e.what());
  }
  if (!root || root.IsNull()) throw ConfigError(source.string() + ": empty config");
  check_keys(root, {"seed", "output_dir", "threads", "species", "trap", "noise", "heating", "recool", "survey"},
             "config");
  const fs::path base = source.has_parent_path() ? source.parent_path() : fs::path(".");

  RunConfig c;
  c.source = source;
  c.config_hash = fnv1a64(yaml_text);
  if (!root["seed"] && !overrides.seed) throw ConfigError("config: 'seed' is required (no implicit entropy)");
  c.seed = overrides.seed ? *overrides.seed : get<std::uint64_t>(root, "seed", "config", 0);
  c.output_dir = overrides.output_dir ? *overrides.output_dir
                                      : base / get<std::string>(root, "output_dir", "config", "out");
  c.threads = get<unsigned>(root, "threads", "config", 0);

  if (const auto sp = root["species"]; sp) {
    check_keys(sp, {"name", "mass_u", "charge_e"}, "species");
    const auto name = get<std::string>(sp, "name", "species", "");
    if (name == "Ca40" || (name.empty() && !sp["mass_u"])) {
      c.species = trap::IonSpecies::calcium40();
    } else if (sp["mass_u"]) {
      c.species = trap::IonSpecies::make(
          get<double>(sp, "mass_u", "species", 0.0) * constants::kAtomicMassUnit,
          get<double>(sp, "charge_e", "species", 1.0) * constants::kElementaryCharge);
    } else {
      throw ConfigError("species: unknown name '" + name + "' (Ca40, or give mass_u)");
    }
  }

  try {
    if (const auto t = root["trap"]; t) {
      check_keys(t, {"layout", "targets_MHz"}, "trap");
      TrapBlock b;
      b.layout = existing_file(base, require<std::string>(t, "layout", "trap"), "trap.layout");
      const auto f = triple(t, "targets_MHz", "trap", {1.2, 1.4, 0.4}, 1e6);
      b.targets = {f[0], f[1], f[2]};
      c.trap = b;
    }

    if (const auto n = root["noise"]; n) {
      check_keys(n, {"preset", "n_s_per_m2", "mu_debye", "gamma_min", "gamma_max", "a", "distance_um",
                     "f_min_Hz", "f_max_Hz", "points", "f_ref_Hz", "monte_carlo"},
                 "noise");
      NoiseBlock b;
      b.bath = parse_bath(n, "noise", b.preset);
      b.distance = get<double>(n, "distance_um", "noise", 240.0) * 1e-6;
      b.f_min = get<double>(n, "f_min_Hz", "noise", b.f_min);
      b.f_max = get<double>(n, "f_max_Hz", "noise", b.f_max);
      b.points = get<std::size_t>(n, "points", "noise", b.points);
      b.f_ref = get<double>(n, "f_ref_Hz", "noise", b.f_ref);
      if (const auto mc = n["monte_carlo"]; mc) {
        check_keys(mc, {"enabled", "realizations", "mean_dipoles", "extent_d"}, "noise.monte_carlo");
        b.monte_carlo = get<bool>(mc, "enabled", "noise.monte_carlo", true);
        b.mc.realizations = get<std::size_t>(mc, "realizations", "noise.monte_carlo", b.mc.realizations);
        b.mc.mean_dipoles = get<double>(mc, "mean_dipoles", "noise.monte_carlo", b.mc.mean_dipoles);
        b.mc.extent = get<double>(mc, "extent_d", "noise.monte_carlo", 50.0) * b.distance;
      }
      b.mc.seed = c.seed;
      b.mc.threads = c.threads;
      c.noise = b;
    }

    if (const auto h = root["heating"]; h) {
      check_keys(h, {"frequencies_MHz", "drive", "duration_s", "steps_per_period", "samples", "members",
                     "initial_energy_J", "rf_omega"},
                 "heating");
      HeatingBlock b;
      b.frequencies = triple(h, "frequencies_MHz", "heating", {1.2, 1.4, 0.4}, 1e6);
      const auto d = h["drive"];
      if (!d) throw ConfigError("heating: missing 'drive'");
      check_keys(d, {"kind", "s_e", "lo_Hz", "hi_Hz", "f_ref_Hz", "distance_um", "preset"}, "heating.drive");
      b.drive.kind = get<std::string>(d, "kind", "heating.drive", "white");
      b.drive.s_e = get<double>(d, "s_e", "heating.drive", 0.0);
      b.drive.lo = get<double>(d, "lo_Hz", "heating.drive", 0.0);
      b.drive.hi = get<double>(d, "hi_Hz", "heating.drive", 0.0);
      b.drive.f_ref = get<double>(d, "f_ref_Hz", "heating.drive", 1e6);
      b.drive.distance = get<double>(d, "distance_um", "heating.drive", 240.0) * 1e-6;
      b.drive.preset = get<std::string>(d, "preset", "heating.drive", "wide_band");
      (void)b.drive.make();  // validate early
      b.langevin.duration = get<double>(h, "duration_s", "heating", b.langevin.duration);
      b.langevin.steps_per_period = get<int>(h, "steps_per_period", "heating", b.langevin.steps_per_period);
      b.langevin.samples = get<int>(h, "samples", "heating", b.langevin.samples);
      b.langevin.initial_energy = triple(h, "initial_energy_J", "heating", {0.0, 0.0, 0.0});
      b.members = get<std::size_t>(h, "members", "heating", b.members);
      b.rf_omega = get<double>(h, "rf_omega", "heating", b.rf_omega);
      c.heating = b;
    }

    if (const auto r = root["recool"]; r) {
      check_keys(r, {"s_e_levels", "s_e_test", "tau_fractions", "max_energy_meV", "thermal",
                     "frequencies_MHz", "laser", "fit_laser", "curve"},
                 "recool");
      RecoolBlock b;
      auto& p = b.pipeline;
      p.s_e_levels = get<std::vector<double>>(r, "s_e_levels", "recool", p.s_e_levels);
      p.s_e_test = get<double>(r, "s_e_test", "recool", p.s_e_test);
      p.tau_fractions = get<std::vector<double>>(r, "tau_fractions", "recool", p.tau_fractions);
      p.max_energy = get<double>(r, "max_energy_meV", "recool", 1.0) * kMeV;
      p.thermal = get<bool>(r, "thermal", "recool", p.thermal);
      p.frequencies = triple(r, "frequencies_MHz", "recool", {1.2, 1.4, 0.4}, 1e6);
      p.laser = parse_laser(r["laser"], "recool.laser");
      p.fit_laser = r["fit_laser"] ? parse_laser(r["fit_laser"], "recool.fit_laser") : p.laser;
      if (const auto cv = r["curve"]; cv) {
        check_keys(cv, {"bin_width_us", "n_averages", "steady_state_kcps"}, "recool.curve");
        p.curve.bin_width = get<double>(cv, "bin_width_us", "recool.curve", 50.0) * 1e-6;
        p.curve.n_averages = get<int>(cv, "n_averages", "recool.curve", 1000);
        p.curve.steady_state_rate = get<double>(cv, "steady_state_kcps", "recool.curve", 50.0) * 1e3;
      }
      p.species = c.species;
      p.seed = c.seed;
      p.threads = c.threads;
      c.recool = b;
    }

    if (const auto s = root["survey"]; s && s.IsNull()) {
      c.survey = SurveyBlock{};
    } else if (s) {
      check_keys(s, {"records", "synthetic"}, "survey");
      SurveyBlock b;
      if (s["records"]) b.records = existing_file(base, get<std::string>(s, "records", "survey", ""), "survey.records");
      if (const auto syn = s["synthetic"]; syn) {
        check_keys(syn, {"distances_um", "f_Hz", "preset"}, "survey.synthetic");
        SyntheticSurvey ss;
        for (double d : require<std::vector<double>>(syn, "distances_um", "survey.synthetic"))
          ss.distances.push_back(d * 1e-6);
        ss.frequency = get<double>(syn, "f_Hz", "survey.synthetic", 1e6);
        ss.preset = get<std::string>(syn, "preset", "survey.synthetic", "wide_band");
        b.synthetic = ss;
      }
      c.survey = b;
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path, const Overrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path, overrides);
}

// ---- commands ---------------------------------------------------------------

CommandResult cmd_trap_analyze(const RunConfig& config, OutputFormat format) {
  reject_svg(format, "trap-analyze");
  if (!config.trap) throw ConfigError("trap-analyze needs a 'trap' block");
  const auto layout = trap::load_layout(config.trap->layout.string());
  const auto null = trap::find_rf_null(layout);
  const auto modes = trap::secular_modes(layout, config.species);

  OutputDir out(config.output_dir);
  out.write("modes.yaml", [&](std::ostream& os) { trap::write_mode_report(os, null, modes); });
  out.write("modes.csv", [&](std::ostream& os) { trap::write_mode_csv(os, modes); });
  // Field per volt at the ion for each electrode; |E/V|^2 is the S_E / S_V
  // ratio for noise applied to that electrode.
  out.write("electrodes.csv", [&](std::ostream& os) {
    os << "id,role,Ex_per_V,Ey_per_V,Ez_per_V,norm2_per_m2\n";
    for (const auto& e : layout.electrodes()) {
      const auto f = trap::field_per_volt(layout, e.id, modes.center);
      os << fmt::format("{},{},{:.9e},{:.9e},{:.9e},{:.9e}\n", e.id, trap::to_string(e.role), f.x(),
                        f.y(), f.z(), f.squaredNorm());
    }
  });

  json s;
  s["rf_null_um"] = {null.point.x() * 1e6, null.point.y() * 1e6, null.point.z() * 1e6};
  s["null_height_um"] = null.point.y() * 1e6;
  s["null_gradient_ratio"] = null.gradient_norm / null.reference_gradient_norm;
  s["modes"] = modes_json(modes);
  return {out.files(), s.dump()};
}

CommandResult cmd_trap_fit_dc(const RunConfig& config, OutputFormat format) {
  reject_svg(format, "trap-fit-dc");
  if (!config.trap) throw ConfigError("trap-fit-dc needs a 'trap' block");
  const auto layout = trap::load_layout(config.trap->layout.string());
  const auto fit = trap::fit_dc_voltages(layout, config.species, config.trap->targets);
  const auto null = trap::find_rf_null(fit.layout);

  OutputDir out(config.output_dir);
  out.write("fitted.layout", [&](std::ostream& os) { os << trap::format_layout(fit.layout); });
  out.write("modes.yaml", [&](std::ostream& os) { trap::write_mode_report(os, null, fit.modes); });
  out.write("modes.csv", [&](std::ostream& os) { trap::write_mode_csv(os, fit.modes); });

  json s;
  s["converged"] = fit.converged;
  s["residual_norm"] = fit.residual_norm;
  s["rf_amplitude_V"] = fit.layout.rf_amplitude();
  s["dc_voltages_V"] = fit.layout.dc_voltages();
  s["modes"] = modes_json(fit.modes);
  if (!fit.converged)
    throw NumericalError(fmt::format("DC fit missed the targets (residual {:.3g}); see {}",
                                     fit.residual_norm, (config.output_dir / "modes.yaml").string()));
  return {out.files(), s.dump()};
}

CommandResult cmd_noise_spectrum(const RunConfig& config, OutputFormat format) {
  if (!config.noise) throw ConfigError("noise-spectrum needs a 'noise' block");
  const auto& nb = *config.noise;
  const auto freqs = noise::log_grid(nb.f_min, nb.f_max, nb.points);
  const auto closed = noise::field_spectrum(nb.bath, nb.distance, freqs, noise::Provenance::kClosedForm);
  const auto quad = noise::field_spectrum(nb.bath, nb.distance, freqs, noise::Provenance::kQuadrature);
  const auto band = noise::validity_band(nb.bath);

  std::vector<double> fb, cb, qb;
  double max_dev = 0.0;
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    if (!band.contains(freqs[i])) continue;
    fb.push_back(freqs[i]);
    cb.push_back(closed.s_e[i]);
    qb.push_back(quad.s_e[i]);
    max_dev = std::max(max_dev, std::abs(quad.s_e[i] / closed.s_e[i] - 1.0));
  }

  OutputDir out(config.output_dir);
  out.write("spectrum.csv", [&](std::ostream& os) {
    os << "# S_E one-sided in f, (V/m)^2/Hz\n";
    os << "f_Hz,S_E_CLOSED_FORM,S_E_QUADRATURE,in_validity_band\n";
    for (std::size_t i = 0; i < freqs.size(); ++i)
      os << fmt::format("{:.17g},{:.17g},{:.17g},{}\n", freqs[i], closed.s_e[i], quad.s_e[i],
                        band.contains(freqs[i]) ? 1 : 0);
  });
  if (format == OutputFormat::kSvg) {
    out.write("spectrum.svg", [&](std::ostream& os) {
      write_loglog_svg(os, freqs, {{"closed form", closed.s_e}, {"quadrature", quad.s_e}}, "f (Hz)",
                       "S_E ((V/m)^2/Hz)");
    });
  }

  const auto numeric = noise::field_psd_numeric(nb.bath, nb.distance, nb.f_ref);
  json s;
  s["bath"] = {{"preset", nb.preset}, {"n_s_per_m2", nb.bath.n_s}, {"mu_Cm", nb.bath.mu},
               {"gamma_min", nb.bath.gamma_min}, {"gamma_max", nb.bath.gamma_max}, {"a", nb.bath.a_norm}};
  s["distance_m"] = nb.distance;
  s["validity_band_Hz"] = {band.lo, band.hi};
  s["points_in_band"] = fb.size();
  if (fb.size() >= 2) {
    s["slope_closed_form"] = loglog_slope(fb, cb);
    s["slope_quadrature"] = loglog_slope(fb, qb);
    s["max_quadrature_deviation_in_band"] = max_dev;
  }
  s["distance_doubling_ratio"] = noise::field_psd_plane(nb.bath, 2.0 * nb.distance, nb.f_ref) /
                                 noise::field_psd_plane(nb.bath, nb.distance, nb.f_ref);
  s["planar_integral_over_closed_form"] = numeric.ratio;
  s["f_ref_Hz"] = nb.f_ref;
  s["S_E_closed_form_at_f_ref"] = numeric.closed_form;
  if (nb.monte_carlo) {
    const auto mc = noise::field_psd_monte_carlo(nb.bath, nb.distance, nb.f_ref, nb.mc);
    s["monte_carlo"] = {{"mean", mc.mean}, {"standard_error", mc.standard_error},
                        {"realizations", mc.realizations}, {"seed", nb.mc.seed},
                        {"surface_integral", numeric.value}};
  }
  return {out.files(), s.dump()};
}

CommandResult cmd_simulate_heating(const RunConfig& config, OutputFormat format) {
  reject_svg(format, "simulate-heating");
  if (!config.heating) throw ConfigError("simulate-heating needs a 'heating' block");
  const auto& hb = *config.heating;
  const auto drive = hb.drive.make();
  const auto analytic = sim::heating_rate_analytic(config.species, hb.frequencies, drive, hb.rf_omega);
  sim::EnsembleOptions eo{hb.langevin, hb.members, config.seed, config.threads};
  const auto ens = sim::ensemble_heating(config.species, hb.frequencies, drive, eo);
  const auto trace0 = sim::integrate_langevin(config.species, hb.frequencies, drive, hb.langevin,
                                              sim::member_seed(config.seed, 0));

  OutputDir out(config.output_dir);
  out.write("ensemble_mean.csv", [&](std::ostream& os) {
    sim::EnergyTrace mean{ens.times, ens.mean_energies, {}, config.seed};
    sim::write_trace_csv(os, mean);
  });
  out.write("trace_member0.csv", [&](std::ostream& os) { sim::write_trace_csv(os, trace0); });
  out.write("trace_member0.manifest.json", [&](std::ostream& os) {
    sim::write_trace_manifest(os, trace0, drive, hb.frequencies, hb.langevin);
  });
  static constexpr const char* kModes[] = {"x", "y", "z"};
  out.write("rates.csv", [&](std::ostream& os) {
    os << "mode,f_Hz,analytic_J_per_s,langevin_J_per_s,langevin_stderr_J_per_s,ratio,sideband_suppression\n";
    for (int i = 0; i < 3; ++i) {
      const double ratio = analytic.per_mode[i] > 0.0 ? ens.slope[i] / analytic.per_mode[i] : 0.0;
      os << fmt::format("{},{:.17g},{:.9e},{:.9e},{:.9e},{:.6f},{:.6e}\n", kModes[i], hb.frequencies[i],
                        analytic.per_mode[i], ens.slope[i], ens.slope_error[i], ratio,
                        analytic.sideband_suppression[i]);
    }
  });

  // Phonon rate of the summed energy rate at the effective and the axial
  // frequency; which one a quoted figure used is not known, so both appear.
  const double f_eff = sim::effective_frequency(hb.frequencies);
  const double f_ax = hb.frequencies[2];
  const auto phonons = [&](double f) { return analytic.total / (constants::kHbar * constants::kTwoPi * f); };
  json s;
  s["drive"] = drive.description();
  s["members"] = ens.members;
  s["analytic_J_per_s"] = analytic.per_mode;
  s["langevin_J_per_s"] = ens.slope;
  s["langevin_stderr_J_per_s"] = ens.slope_error;
  s["total_analytic_J_per_s"] = analytic.total;
  s["total_langevin_J_per_s"] = ens.total_slope;
  s["sideband_suppression"] = analytic.sideband_suppression;
  s["effective_frequency_Hz"] = f_eff;
  if (analytic.total > 0.0) {
    s["phonons_per_s_at_effective"] = phonons(f_eff);
    s["phonons_per_s_at_axial"] = phonons(f_ax);
    s["phonons_per_s_at_1MHz_from_effective"] = sim::phonons_normalized(phonons(f_eff), f_eff);
    s["phonons_per_s_at_1MHz_from_axial"] = sim::phonons_normalized(phonons(f_ax), f_ax);
  }
  return {out.files(), s.dump()};
}

CommandResult cmd_recool_pipeline(const RunConfig& config, OutputFormat format) {
  reject_svg(format, "recool-pipeline");
  if (!config.recool) throw ConfigError("recool-pipeline needs a 'recool' block");
  const auto& pc = config.recool->pipeline;
  const auto r = recool::run_pipeline(pc);

  OutputDir out(config.output_dir);
  out.write("calibration.csv", [&](std::ostream& os) {
    os << "S_E,dE_dt_J_per_s,depsilon_dt_J_per_s,depsilon_dt_stderr_J_per_s,role\n";
    const auto row = [&](const recool::LevelResult& l, const char* role) {
      os << fmt::format("{:.6e},{:.9e},{:.9e},{:.9e},{}\n", l.s_e, l.de_dt, l.protocol.depsilon_dt,
                        l.protocol.slope_error, role);
    };
    for (const auto& l : r.levels) row(l, "calibration");
    row(r.test, "test");
  });
  out.write("protocol.csv", [&](std::ostream& os) {
    os << "S_E,tau_off_s,epsilon_J\n";
    const auto rows = [&](const recool::LevelResult& l) {
      for (std::size_t i = 0; i < l.tau_offs.size(); ++i)
        os << fmt::format("{:.6e},{:.9e},{:.9e}\n", l.s_e, l.tau_offs[i], l.protocol.epsilons[i]);
    };
    for (const auto& l : r.levels) rows(l);
    rows(r.test);
  });
  out.write("report.yaml", [&](std::ostream& os) {
    os << "calibration:\n";
    os << fmt::format("  slope: {:.9g}\n  slope_error: {:.3g}\n  intercept_meV_per_s: {:.6g}\n  r_squared: {:.9f}\n",
                      r.calibration.slope, r.calibration.slope_error, r.calibration.intercept / kMeV,
                      r.calibration.r_squared);
    os << "test_injection:\n";
    os << fmt::format("  S_E: {:.6e}\n  injected_meV_per_s: {:.9g}\n  recovered_meV_per_s: {:.9g}\n  relative_error: {:.6f}\n",
                      r.test.s_e, r.injected_rate / kMeV, r.recovered_rate / kMeV, r.relative_error);
    os << fmt::format("effective_frequency_MHz: {:.9f}\n", r.effective_frequency / 1e6);
    os << fmt::format("thermal_initial_energy: {}\n", pc.thermal ? "true" : "false");
  });

  json s;
  s["calibration_slope"] = r.calibration.slope;
  s["calibration_r_squared"] = r.calibration.r_squared;
  s["injected_J_per_s"] = r.injected_rate;
  s["recovered_J_per_s"] = r.recovered_rate;
  s["relative_error"] = r.relative_error;
  return {out.files(), s.dump()};
}

CommandResult cmd_survey(const RunConfig& config, OutputFormat format) {
  if (!config.survey) throw ConfigError("survey needs a 'survey' block");
  const auto& sb = *config.survey;
  std::vector<survey::HeatingRecord> records;
  if (sb.records) records = survey::load_records(sb.records->string());
  if (sb.synthetic) {
    const auto bath = noise::preset(sb.synthetic->preset);
    for (double d : sb.synthetic->distances) {
      survey::HeatingRecord r;
      r.label = fmt::format("synthetic_{:.0f}um", d * 1e6);
      r.distance = d;
      r.frequency = sb.synthetic->frequency;
      r.quantity = survey::QuantityKind::kFieldPsd;
      r.value = noise::field_psd_plane(bath, d, r.frequency);
      r.species_mass = config.species.mass;
      r.electrode_material = "model";
      r.method = survey::Method::kSideband;
      records.push_back(r);
    }
  }
  const auto points = survey::regularize(records);
  std::optional<survey::TrendFit> fit;
  std::string fit_note;
  try {
    fit = survey::fit_distance_trend(points);
  } catch (const InvalidArgument& e) {
    fit_note = e.what();
  }

  OutputDir out(config.output_dir);
  out.write("survey.csv", [&](std::ostream& os) { survey::write_points_csv(os, points); });
  if (format == OutputFormat::kSvg)
    out.write("survey.svg", [&](std::ostream& os) { survey::write_plot_svg(os, points, fit); });

  json s;
  s["n_records"] = records.size();
  if (fit) {
    s["trend"] = {{"slope", fit->slope}, {"slope_error", fit->slope_error},
                  {"intercept_log10", fit->intercept}, {"n_points", fit->n_points}};
  } else {
    s["trend"] = nullptr;
    s["trend_note"] = fit_note;
  }
  json pts = json::array();
  for (const auto& p : points)
    pts.push_back({{"label", p.label}, {"d_m", p.distance}, {"omega_S_E", p.omega_s_e}});
  s["points"] = pts;
  return {out.files(), s.dump()};
}

// ---- front end --------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Surface-electrode ion trap and anomalous-heating toolkit", "iontrap"};
  app.require_subcommand(1);
  app.set_version_flag("--version", IONTRAP_VERSION);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format = "csv";
  using Handler = CommandResult (*)(const RunConfig&, OutputFormat);
  const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
      {"trap-analyze", "RF null, secular modes, tilt and Mathieu parameters of a layout", cmd_trap_analyze},
      {"trap-fit-dc", "search DC voltages for target secular frequencies", cmd_trap_fit_dc},
      {"noise-spectrum", "field-noise spectrum of a surface dipole bath", cmd_noise_spectrum},
      {"simulate-heating", "Langevin heating ensemble against the analytic rate", cmd_simulate_heating},
      {"recool-pipeline", "synthetic Doppler-recooling calibration run", cmd_recool_pipeline},
      {"survey", "regularize heating records and fit the distance trend", cmd_survey},
  };
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "YAML run configuration")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--format", format, "csv or svg")->check(CLI::IsMember({"csv", "svg"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  Handler handler = nullptr;
  for (const auto& [n, h, fn] : commands)
    if (name == n) handler = fn;

  try {
    Overrides ov;
    ov.seed = seed;
    if (!out_dir.empty()) ov.output_dir = fs::path(out_dir);
    const auto config = load_run_config(config_path, ov);
    const auto fmt_choice = format == "svg" ? OutputFormat::kSvg : OutputFormat::kCsv;
    const auto result = handler(config, fmt_choice);

    json manifest;
    manifest["tool"] = "iontrap";
    manifest["version"] = IONTRAP_VERSION;
    manifest["command"] = name;
    manifest["config"] = config.source.filename().string();
    manifest["config_fnv1a64"] = fmt::format("{:016x}", config.config_hash);
    manifest["seed"] = config.seed;
    manifest["format"] = format;
    manifest["outputs"] = result.outputs;
    manifest["summary"] = json::parse(result.summary_json);
    const fs::path mpath = config.output_dir / "manifest.json";
    std::ofstream mf(mpath, std::ios::binary);
    if (!mf) throw IoError(mpath.string(), "cannot open for writing");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError(mpath.string(), "write failed");
    out << fmt::format("{}: wrote {} files to {}\n", name, result.outputs.size() + 1,
                       config.output_dir.string());
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace iontrap::cli
