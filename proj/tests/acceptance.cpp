// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "iontrap/constants.hpp"
#include "iontrap/ion_sim.hpp"
#include "iontrap/layout_io.hpp"
#include "iontrap/noise_bath.hpp"
#include "iontrap/numerics.hpp"
#include "iontrap/recool.hpp"
#include "iontrap/survey.hpp"
#include "iontrap/trap_model.hpp"

using namespace iontrap;
using constants::kDebye;
using constants::kMilliElectronVolt;

namespace {

struct Check {
  bool ok = true;
  std::vector<std::string> notes;

  void expect(bool cond, std::string what) {
    ok = ok && cond;
    notes.push_back((cond ? "" : "!") + std::move(what));
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel(double a, double b) { return std::abs(a / b - 1.0); }

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log10(x[i]));
    ly.push_back(std::log10(y[i]));
  }
  return numerics::fit_line(lx, ly).slope;
}

const sim::Frequencies kModes{1.2e6, 1.4e6, 0.4e6};

Check geometry() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto layout = trap::load_layout(std::string(IONTRAP_SOURCE_DIR) + "/data/paper_trap.layout");
  const auto null = trap::find_rf_null(layout);
  const auto modes = trap::secular_modes(layout, trap::IonSpecies::calcium40());
  const double runtime = seconds_since(t0);
  const double h = null.point.y() * 1e6;
  c.expect(std::abs(h - 240.0) <= 0.15 * 240.0, fmt::format("null height {:.2f} um", h));
  c.expect(std::abs(modes.tilt_deg - 25.0) <= 5.0, fmt::format("tilt {:.2f} deg", modes.tilt_deg));
  c.expect(runtime < 10.0, fmt::format("{:.2f} s", runtime));
  return c;
}

Check noise_model() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto bath = noise::preset_wide_band();
  const auto band = noise::validity_band(bath);
  const auto f = noise::log_grid(100.0 * band.lo, band.hi / 100.0, 31);
  double worst = 0.0;
  for (double fi : f) {
    const double q = noise::ensemble_psd_mu(bath, fi, noise::Provenance::kQuadrature).value;
    worst = std::max(worst, rel(q, bath.a_norm * bath.mu * bath.mu / (2.0 * fi)));
  }
  const auto s = noise::field_spectrum(bath, 240e-6, f, noise::Provenance::kQuadrature).s_e;
  c.expect(worst < 0.02, fmt::format("max deviation {:.2e}", worst));
  const double f_slope = loglog_slope(f, s);
  c.expect(std::abs(f_slope + 1.0) <= 0.02, fmt::format("frequency slope {:.4f}", f_slope));

  const auto d = noise::log_grid(1e-4, 1e-3, 7);
  std::vector<double> v;
  for (double di : d) v.push_back(noise::field_psd_numeric(bath, di, 1e6).value);
  const double d_slope = loglog_slope(d, v);
  c.expect(std::abs(d_slope + 4.0) <= 0.02, fmt::format("distance slope {:.4f}", d_slope));
  const double runtime = seconds_since(t0);
  c.expect(runtime < 60.0, fmt::format("{:.2f} s", runtime));
  return c;
}

Check estimators() {
  Check c;
  const double delta = noise::tls_layer_thickness(6e19, 5e27);
  c.expect(rel(delta, 10e-9) <= 0.25, fmt::format("delta {:.2f} nm", delta * 1e9));
  const auto bath = noise::DipoleBath::with_a(6e19, kDebye, 1e-2, 1e10, 10.0);
  const double d = 240e-6, f = 1e6;
  const double fs = f * noise::field_psd_plane(bath, d, f);
  const double n1 = noise::invert_surface_density(fs, d, bath.a_norm, bath.mu);
  c.expect(rel(n1, bath.n_s) <= 1e-12, fmt::format("round trip {:.1e}", rel(n1, bath.n_s)));
  const double n4 = noise::invert_surface_density(fs, d, bath.a_norm, 4.0 * bath.mu);
  c.expect(rel(n1 / n4, 16.0) <= 1e-12, fmt::format("4 D factor {:.15g}", n1 / n4));
  return c;
}

Check heating_law() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto ca = trap::IonSpecies::calcium40();
  sim::EnsembleOptions o;
  o.langevin.duration = 2e-4;
  o.langevin.samples = 50;
  o.members = 2000;
  for (double s_e : {1.7e-11, 1.0e-9}) {
    ++o.seed;
    const auto drive = sim::NoiseDrive::white(s_e);
    const auto ens = sim::ensemble_heating(ca, kModes, drive, o);
    const auto ref = sim::heating_rate_analytic(ca, kModes, drive);
    for (int i = 0; i < 3; ++i) {
      const double r = rel(ens.slope[i], ref.per_mode[i]);
      c.expect(r <= 0.10, fmt::format("S_E {:.1e} mode {} off {:.3f} (se {:.3f})", s_e, i, r,
                                      ens.slope_error[i] / ref.per_mode[i]));
    }
  }
  sim::LangevinOptions quiet;
  quiet.duration = 1e5 / kModes[2];
  quiet.samples = 20;
  quiet.initial_energy = {1e-24, 1e-24, 1e-24};
  const auto trace = sim::integrate_langevin(ca, kModes, sim::NoiseDrive::white(0.0), quiet, 1);
  double drift = 0.0;
  for (int i = 0; i < 3; ++i)
    for (double e : trace.mode_energies[i]) drift = std::max(drift, rel(e, quiet.initial_energy[i]));
  c.expect(drift < 1e-6, fmt::format("zero-noise drift {:.1e}", drift));
  const double runtime = seconds_since(t0);
  c.expect(runtime < 300.0, fmt::format("{:.1f} s", runtime));
  return c;
}

Check recooling(recool::PipelineResult& kept) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  recool::PipelineConfig cfg;
  cfg.seed = 3;
  cfg.threads = 1;
  kept = recool::run_pipeline(cfg);
  c.expect(std::abs(kept.relative_error) <= 0.15, fmt::format("closure {:.3f}", kept.relative_error));

  const auto p = recool::calcium40_defaults();
  const auto ca = trap::IonSpecies::calcium40();
  const double f_bar = sim::effective_frequency(kModes);
  const auto e0 = noise::log_grid(0.02 * kMilliElectronVolt, 20.0 * kMilliElectronVolt, 7);
  std::vector<double> eps;
  for (std::size_t i = 0; i < e0.size(); ++i) {
    const double duration = std::max(1.5 * recool::recool_time(p, ca, e0[i]), 100 * 5e-5);
    const auto curve = recool::sample_counts(recool::fluorescence_curve(p, f_bar, ca, e0[i], duration), 7, i);
    eps.push_back(recool::fit_recool(curve, p, f_bar, ca).epsilon);
  }
  const double lin = loglog_slope(e0, eps);
  c.expect(std::abs(lin - 1.0) <= 0.05, fmt::format("epsilon vs E0 slope {:.4f}", lin));

  // Planted epsilon(tau) with 0.1 meV Gaussian scatter per point.
  const std::vector<double> tau{0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  std::mt19937_64 rng(sim::member_seed(41, 0));
  std::normal_distribution<double> scatter(0.0, 0.1 * kMilliElectronVolt);
  std::vector<double> planted;
  for (double t : tau) planted.push_back(4.0 * kMilliElectronVolt * t + scatter(rng));
  const auto proto = recool::heating_protocol(tau, planted);
  const double slope = proto.depsilon_dt / kMilliElectronVolt;
  c.expect(std::abs(slope - 4.0) <= 0.3, fmt::format("planted slope {:.3f} +- {:.3f} meV/s", slope,
                                                       proto.slope_error / kMilliElectronVolt));
  const double runtime = seconds_since(t0);
  c.expect(runtime < 600.0, fmt::format("{:.1f} s", runtime));
  return c;
}

Check survey_points() {
  Check c;
  const auto records = survey::load_records(std::string(IONTRAP_SOURCE_DIR) + "/data/text_points.csv");
  const auto ca = trap::IonSpecies::calcium40();
  const double targets[2] = {3.4e-11, 3.4e-10};
  for (std::size_t i = 0; i < 2 && i < records.size(); ++i) {
    const double s_e = survey::to_field_psd(records[i]);
    const double hand = 4.0 * records[i].species_mass * constants::kHbar * constants::kTwoPi * 1e6 * records[i].value /
                        (ca.charge * ca.charge);
    c.expect(rel(s_e, hand) <= 1e-12 && rel(s_e, targets[i]) <= 0.02, fmt::format("S_E {:.4e}", s_e));
  }
  c.expect(records.size() == 2, fmt::format("{} records", records.size()));

  const auto bath = noise::preset_wide_band();
  std::vector<survey::HeatingRecord> synth;
  for (double d : {60e-6, 120e-6, 240e-6, 480e-6}) {
    survey::HeatingRecord r;
    r.label = fmt::format("d{:.0f}", d * 1e6);
    r.distance = d;
    r.frequency = 1e6;
    r.quantity = survey::QuantityKind::kFieldPsd;
    r.value = noise::field_psd_plane(bath, d, r.frequency);
    r.species_mass = ca.mass;
    r.electrode_material = "gold";
    r.method = survey::Method::kSideband;
    synth.push_back(r);
  }
  const auto fit = survey::fit_distance_trend(survey::regularize(synth));
  c.expect(std::abs(fit.slope + 4.0) <= std::max(fit.slope_error, 1e-9),
           fmt::format("trend {:.6f} +- {:.1e}", fit.slope, fit.slope_error));
  return c;
}

Check effective_frequency() {
  Check c;
  const double f_bar = sim::effective_frequency(kModes);
  const double direct = 1.0 / (1.0 / 1.2e6 + 1.0 / 1.4e6 + 1.0 / 0.4e6);
  c.expect(rel(f_bar, direct) <= 1e-12, fmt::format("{:.6f} MHz", f_bar * 1e-6));
  c.expect(rel(f_bar, kModes[2]) <= 0.40, fmt::format("{:.3f} from axial", rel(f_bar, kModes[2])));
  return c;
}

Check determinism(const recool::PipelineResult& single) {
  Check c;
  const auto bath = noise::preset_wide_band();
  noise::MonteCarloOptions mc;
  mc.realizations = 120;
  mc.mean_dipoles = 2e4;
  mc.seed = 9;
  mc.threads = 1;
  const auto a = noise::field_psd_monte_carlo(bath, 240e-6, 1e6, mc);
  mc.threads = 4;
  const auto b = noise::field_psd_monte_carlo(bath, 240e-6, 1e6, mc);
  c.expect(a.mean == b.mean && a.standard_error == b.standard_error, "monte carlo");

  const auto ca = trap::IonSpecies::calcium40();
  sim::EnsembleOptions o;
  o.langevin.duration = 1e-4;
  o.langevin.samples = 20;
  o.members = 40;
  o.seed = 9;
  o.threads = 1;
  const auto drive = sim::NoiseDrive::one_over_f(1e-9, 1e6, 1e4, 1e8);
  const auto e1 = sim::ensemble_heating(ca, kModes, drive, o);
  o.threads = 4;
  const auto e4 = sim::ensemble_heating(ca, kModes, drive, o);
  c.expect(e1.mean_energies == e4.mean_energies && e1.slope == e4.slope, "ensemble");

  recool::PipelineConfig cfg;
  cfg.seed = 3;
  cfg.threads = 4;
  const auto r = recool::run_pipeline(cfg);
  bool same = r.recovered_rate == single.recovered_rate && r.calibration.slope == single.calibration.slope &&
              r.levels.size() == single.levels.size();
  for (std::size_t l = 0; same && l < r.levels.size(); ++l)
    same = r.levels[l].protocol.epsilons == single.levels[l].protocol.epsilons;
  c.expect(same, "pipeline");
  return c;
}

}  // namespace

int main() {
  recool::PipelineResult pipeline;
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria{
      {"geometry", geometry},
      {"noise model", noise_model},
      {"estimators", estimators},
      {"heating law", heating_law},
      {"recooling pipeline", [&] { return recooling(pipeline); }},
      {"survey", survey_points},
      {"effective frequency", effective_frequency},
      {"determinism", [&] { return determinism(pipeline); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      c = criteria[i].second();
    } catch (const std::exception& e) {
      c.expect(false, fmt::format("threw: {}", e.what()));
    }
    std::string detail;
    for (const auto& n : c.notes) detail += (detail.empty() ? "" : "; ") + n;
    fmt::print("{} {} {}: {}\n", c.ok ? "PASS" : "FAIL", i + 1, criteria[i].first, detail);
    std::fflush(stdout);
    failed += c.ok ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
