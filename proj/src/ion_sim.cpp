#include "iontrap/ion_sim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <ostream>
#include <random>

#include <fmt/format.h>
#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/numerics.hpp"

namespace iontrap::sim {

namespace {

using constants::kTwoPi;

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
}

void require_frequencies(const Frequencies& freqs) {
  for (double f : freqs) require_positive(f, "mode frequency");
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Field samples xi_n (V/m) for n in [0, n_steps) whose one-sided PSD follows
// the drive on `axis`. White Gaussian noise is shaped in the frequency domain;
// bins outside the drive's domain and the DC bin are zeroed.
std::vector<double> shaped_field(const NoiseDrive& drive, int axis, std::size_t n_steps, double dt,
                                 std::mt19937_64& rng) {
  const std::size_t n = next_pow2(n_steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> white(n);
  for (double& w : white) w = normal(rng);

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, white);
  const double df = 1.0 / (static_cast<double>(n) * dt);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t kk = std::min(k, n - k);
    const double f = static_cast<double>(kk) * df;
    double gain = 0.0;
    if (kk > 0 && drive.defined_at(f)) gain = std::sqrt(drive.at(f, axis) / (2.0 * dt));
    spec[k] *= gain;
  }
  std::vector<double> out;
  fft.inv(out, spec);
  out.resize(n_steps);
  return out;
}

}  // namespace

NoiseDrive::NoiseDrive(Spectrum s_e, noise::Band domain, std::string description, bool white)
    : s_e_(std::move(s_e)), domain_(domain), description_(std::move(description)), white_(white) {
  if (!s_e_) throw InvalidArgument("noise drive needs a spectrum");
  if (!(domain_.lo >= 0.0) || !(domain_.hi > domain_.lo))
    throw InvalidArgument("noise drive domain must satisfy 0 <= lo < hi");
}

NoiseDrive NoiseDrive::white(double s_e) {
  return white_per_axis({s_e, s_e, s_e});
}

NoiseDrive NoiseDrive::white_per_axis(const std::array<double, 3>& s_e) {
  for (double v : s_e)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("S_E must be non-negative");
  return NoiseDrive([s_e](double, int axis) { return s_e.at(static_cast<std::size_t>(axis)); },
                    {0.0, kInf}, fmt::format("white S_E = [{:.6g}, {:.6g}, {:.6g}] (V/m)^2/Hz",
                                             s_e[0], s_e[1], s_e[2]),
                    true);
}

NoiseDrive NoiseDrive::band_limited(double s_e, double lo, double hi) {
  if (!(s_e >= 0.0)) throw InvalidArgument("S_E must be non-negative");
  if (!(lo >= 0.0) || !(hi > lo)) throw InvalidArgument("band must satisfy 0 <= lo < hi");
  return NoiseDrive([=](double f, int) { return f >= lo && f <= hi ? s_e : 0.0; }, {0.0, kInf},
                    fmt::format("band-limited S_E = {:.6g} (V/m)^2/Hz on [{:.6g}, {:.6g}] Hz", s_e,
                                lo, hi));
}

NoiseDrive NoiseDrive::one_over_f(double s_e_ref, double f_ref, double lo, double hi) {
  if (!(s_e_ref >= 0.0)) throw InvalidArgument("S_E must be non-negative");
  require_positive(f_ref, "reference frequency");
  require_positive(lo, "1/f band start");
  return NoiseDrive([=](double f, int) { return s_e_ref * f_ref / f; }, {lo, hi},
                    fmt::format("1/f S_E = {:.6g} (V/m)^2/Hz at {:.6g} Hz on [{:.6g}, {:.6g}] Hz",
                                s_e_ref, f_ref, lo, hi));
}

NoiseDrive NoiseDrive::from_bath(const noise::DipoleBath& bath, double d) {
  require_positive(d, "distance");
  return NoiseDrive([=](double f, int) { return noise::field_psd_plane(bath, d, f); },
                    noise::validity_band(bath),
                    fmt::format("dipole bath n_S = {:.6g} /m^2, A = {:.6g}, d = {:.6g} m", bath.n_s,
                                bath.a_norm, d));
}

double NoiseDrive::at(double f, int axis) const {
  if (axis < 0 || axis > 2) throw InvalidArgument("axis index must be 0, 1 or 2");
  if (!domain_.contains(f))
    throw InvalidArgument(fmt::format("noise drive '{}' undefined at {:.6g} Hz (domain [{:.6g}, {:.6g}])",
                                      description_, f, domain_.lo, domain_.hi));
  const double v = s_e_(f, axis);
  if (!(v >= 0.0)) throw InvalidArgument(fmt::format("noise drive negative at {:.6g} Hz", f));
  return v;
}

double NoiseDrive::variation(double lo, double hi) const {
  double worst = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    double vmin = kInf;
    double vmax = 0.0;
    for (double f : noise::log_grid(lo, hi, 201)) {
      const double v = at(f, axis);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
    if (vmax > 0.0) worst = std::max(worst, (vmax - vmin) / vmax);
  }
  return worst;
}

HeatingRate heating_rate_analytic(const trap::IonSpecies& species, const Frequencies& freqs,
                                  const NoiseDrive& drive, double rf_omega) {
  require_frequencies(freqs);
  require_positive(rf_omega, "RF angular frequency");
  HeatingRate r;
  const double e2_4m = species.charge * species.charge / (4.0 * species.mass);
  for (int i = 0; i < 3; ++i) {
    r.per_mode[i] = e2_4m * drive.at(freqs[i], i);
    r.total += r.per_mode[i];
    const double ratio = kTwoPi * freqs[i] / rf_omega;
    r.sideband_suppression[i] = ratio * ratio;
  }
  return r;
}

EnergyTrace integrate_langevin(const trap::IonSpecies& species, const Frequencies& freqs,
                               const NoiseDrive& drive, const LangevinOptions& options,
                               std::uint64_t seed) {
  require_frequencies(freqs);
  if (options.steps_per_period < 50)
    throw InvalidArgument(fmt::format("timestep too coarse: {} steps per period (need >= 50)",
                                      options.steps_per_period));
  const double f_max = *std::max_element(freqs.begin(), freqs.end());
  const double f_min = *std::min_element(freqs.begin(), freqs.end());
  if (!(options.duration >= 10.0 / f_min))
    throw InvalidArgument(fmt::format(
        "duration {:.3g} s too short for a slope fit (need >= 10 periods = {:.3g} s)",
        options.duration, 10.0 / f_min));
  if (options.samples < 2) throw InvalidArgument("need at least 2 trace samples");

  const auto n_steps = static_cast<std::size_t>(
      std::ceil(options.duration * f_max * options.steps_per_period));
  const double dt = options.duration / static_cast<double>(n_steps);
  const double m = species.mass;
  const double q_over_m = species.charge / m;

  auto rng = numerics::stream_engine(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::array<double, 3> x{};
  std::array<double, 3> v{};
  std::array<double, 3> w{};
  std::array<double, 3> c{};
  std::array<double, 3> s{};
  std::array<double, 3> kick_sigma{};
  std::array<std::vector<double>, 3> field;
  for (int i = 0; i < 3; ++i) {
    if (!(options.initial_energy[i] >= 0.0)) throw InvalidArgument("initial energy must be >= 0");
    w[i] = kTwoPi * freqs[i];
    c[i] = std::cos(0.5 * w[i] * dt);
    s[i] = std::sin(0.5 * w[i] * dt);
    x[i] = std::sqrt(2.0 * options.initial_energy[i] / m) / w[i];
    if (drive.is_white()) {
      kick_sigma[i] = q_over_m * std::sqrt(drive.at(freqs[i], i) * dt / 2.0);
    } else {
      auto axis_rng = numerics::stream_engine(seed, 1 + static_cast<std::uint64_t>(i));
      field[i] = shaped_field(drive, i, n_steps, dt, axis_rng);
    }
  }

  EnergyTrace trace;
  trace.seed = seed;
  const auto record = [&](double t) {
    trace.times.push_back(t);
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double e = 0.5 * m * (v[i] * v[i] + w[i] * w[i] * x[i] * x[i]);
      trace.mode_energies[i].push_back(e);
      total += e;
    }
    trace.total.push_back(total);
  };
  const auto rotate = [&](int i) {
    const double xn = c[i] * x[i] + s[i] * v[i] / w[i];
    v[i] = -w[i] * s[i] * x[i] + c[i] * v[i];
    x[i] = xn;
  };

  record(0.0);
  int next_sample = 1;
  auto sample_step = [&](int k) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n_steps) * k / options.samples));
  };
  for (std::size_t n = 0; n < n_steps; ++n) {
    for (int i = 0; i < 3; ++i) {
      rotate(i);
      if (drive.is_white()) {
        if (kick_sigma[i] > 0.0) v[i] += kick_sigma[i] * normal(rng);
      } else {
        v[i] += q_over_m * field[i][n] * dt;
      }
      rotate(i);
    }
    while (next_sample <= options.samples && sample_step(next_sample) == n + 1) {
      record(static_cast<double>(n + 1) * dt);
      ++next_sample;
    }
  }
  return trace;
}

std::uint64_t member_seed(std::uint64_t seed, std::size_t k) {
  return numerics::mix64(seed) + k;
}

EnsembleResult ensemble_heating(const trap::IonSpecies& species, const Frequencies& freqs,
                                const NoiseDrive& drive, const EnsembleOptions& options) {
  if (options.members < 2) throw InvalidArgument("ensemble needs at least 2 members");
  const std::size_t members = options.members;
  std::vector<EnergyTrace> traces(members);
  numerics::parallel_for(members, options.threads, [&](std::size_t k) {
    traces[k] = integrate_langevin(species, freqs, drive, options.langevin,
                                   member_seed(options.seed, k));
  });

  EnsembleResult r;
  r.members = members;
  r.times = traces.front().times;
  const std::size_t n_t = r.times.size();
  std::array<std::vector<double>, 3> slopes;
  std::vector<double> total_slopes(members);
  for (int i = 0; i < 3; ++i) {
    r.mean_energies[i].assign(n_t, 0.0);
    slopes[i].resize(members);
  }
  for (std::size_t k = 0; k < members; ++k) {
    const auto& tr = traces[k];
    for (int i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < n_t; ++j) r.mean_energies[i][j] += tr.mode_energies[i][j];
      slopes[i][k] = numerics::fit_line(tr.times, tr.mode_energies[i]).slope;
    }
    total_slopes[k] = numerics::fit_line(tr.times, tr.total).slope;
  }
  const double root_m = std::sqrt(static_cast<double>(members));
  for (int i = 0; i < 3; ++i) {
    for (double& e : r.mean_energies[i]) e /= static_cast<double>(members);
    r.slope[i] = numerics::mean(slopes[i]);
    r.slope_error[i] = numerics::stddev(slopes[i]) / root_m;
  }
  r.total_slope = numerics::mean(total_slopes);
  r.total_slope_error = numerics::stddev(total_slopes) / root_m;
  return r;
}

double effective_frequency(std::span<const double> freqs) {
  if (freqs.empty()) throw InvalidArgument("effective_frequency needs at least one frequency");
  double inv = 0.0;
  for (double f : freqs) {
    require_positive(f, "mode frequency");
    inv += 1.0 / f;
  }
  return 1.0 / inv;
}

double phonons_normalized(double rate, double f_meas, double f_ref) {
  require_positive(rate, "phonon rate");
  require_positive(f_meas, "measurement frequency");
  require_positive(f_ref, "reference frequency");
  const double r = f_meas / f_ref;
  return rate * r * r;
}

double phonons_denormalized(double rate_at_ref, double f_meas, double f_ref) {
  require_positive(rate_at_ref, "phonon rate");
  require_positive(f_meas, "measurement frequency");
  require_positive(f_ref, "reference frequency");
  const double r = f_ref / f_meas;
  return rate_at_ref * r * r;
}

double phonon_rate_from_field_psd(const trap::IonSpecies& species, double f, double s_e) {
  require_positive(f, "frequency");
  if (!(s_e >= 0.0)) throw InvalidArgument("S_E must be non-negative");
  return species.charge * species.charge * s_e /
         (4.0 * species.mass * constants::kHbar * kTwoPi * f);
}

double field_psd_from_phonon_rate(const trap::IonSpecies& species, double f, double rate) {
  require_positive(f, "frequency");
  if (!(rate >= 0.0)) throw InvalidArgument("phonon rate must be non-negative");
  return 4.0 * species.mass * constants::kHbar * kTwoPi * f * rate /
         (species.charge * species.charge);
}

void write_trace_csv(std::ostream& out, const EnergyTrace& trace) {
  out << "t_s,E_x_J,E_y_J,E_z_J\n";
  for (std::size_t j = 0; j < trace.times.size(); ++j)
    out << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", trace.times[j],
                       trace.mode_energies[0][j], trace.mode_energies[1][j],
                       trace.mode_energies[2][j]);
}

void write_trace_manifest(std::ostream& out, const EnergyTrace& trace, const NoiseDrive& drive,
                          const Frequencies& freqs, const LangevinOptions& options) {
  const double f_max = *std::max_element(freqs.begin(), freqs.end());
  const double n_steps = std::ceil(options.duration * f_max * options.steps_per_period);
  nlohmann::json j;
  j["seed"] = trace.seed;
  j["dt_s"] = options.duration / n_steps;
  j["duration_s"] = options.duration;
  j["steps_per_period"] = options.steps_per_period;
  j["samples"] = options.samples;
  j["frequencies_Hz"] = freqs;
  j["initial_energy_J"] = options.initial_energy;
  j["drive"] = drive.description();
  out << j.dump(2) << "\n";
}

}  // namespace iontrap::sim
