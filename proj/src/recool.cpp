#include "iontrap/recool.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <complex>
#include <limits>
#include <ostream>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>
#include <fmt/format.h>
#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/ion_sim.hpp"
#include "iontrap/numerics.hpp"

namespace iontrap::recool {

namespace {

using constants::kHbar;
using constants::kPi;
using constants::kTwoPi;

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
}

// Finds E with f(E) = 0 given f(lo) and f(hi) of opposite sign.
template <typename F>
double bracket_root(F f, double lo, double hi) {
  boost::uintmax_t iters = 200;
  const auto r = boost::math::tools::toms748_solve(
      f, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (r.first + r.second);
}

// Energy at which the cycle-averaged rate has fallen to `fraction` of its
// Doppler-limit value.
double energy_at_rate_fraction(const TwoLevelParams& p, const trap::IonSpecies& species,
                               double e_d, double fraction) {
  const double r_ss = phase_average(p, species, e_d).rate;
  const auto f = [&](double log_e) {
    return phase_average(p, species, std::exp(log_e)).rate - fraction * r_ss;
  };
  double hi = std::log(e_d) + 1.0;
  while (f(hi) > 0.0) {
    hi += 1.0;
    if (hi > std::log(e_d) + 60.0) throw NumericalError("fluorescence never drops below steady state");
  }
  return std::exp(bracket_root(f, std::log(e_d), hi));
}

using State = std::array<double, 2>;

// Per-bin integrated counts of one recooling transient.
std::vector<double> integrate_counts(const TwoLevelParams& p, const trap::IonSpecies& species,
                                     double e0, double e_d, double efficiency, std::size_t n_bins,
                                     double bin_width) {
  namespace ode = boost::numeric::odeint;
  // Energy in units of e_d keeps both state components O(1).
  const auto rhs = [&](const State& y, State& dy, double) {
    const double e = std::max(y[0], 0.0) * e_d;
    dy[0] = energy_rate(p, species, e) / e_d;
    dy[1] = efficiency * phase_average(p, species, e).rate;
  };
  std::vector<double> times(n_bins + 1);
  for (std::size_t j = 0; j <= n_bins; ++j) times[j] = static_cast<double>(j) * bin_width;
  std::vector<double> cumulative;
  cumulative.reserve(n_bins + 1);
  State y{e0 / e_d, 0.0};
  auto stepper = ode::make_controlled(1e-10, 1e-10, ode::runge_kutta_dopri5<State>());
  ode::integrate_times(stepper, rhs, y, times.begin(), times.end(), 0.1 * bin_width,
                       [&](const State& s, double) { cumulative.push_back(s[1]); });
  std::vector<double> counts(n_bins);
  for (std::size_t j = 0; j < n_bins; ++j) counts[j] = cumulative[j + 1] - cumulative[j];
  return counts;
}

struct FitData {
  const RecoolCurve* curve;
  const TwoLevelParams* params;
  const trap::IonSpecies* species;
  double mode_freq;
  double duration;
  std::vector<double> sigma;
};

std::vector<double> model_counts(const FitData& data, double e0) {
  CurveOptions opt{data.curve->bin_width, data.curve->n_averages, data.curve->steady_state_rate};
  return fluorescence_curve(*data.params, data.mode_freq, *data.species, e0, data.duration, opt)
      .counts;
}

// Best amplitude for a fixed shape and the resulting chi-square.
std::pair<double, double> profile_scale(const FitData& data, const std::vector<double>& shape) {
  double num = 0.0;
  double den = 0.0;
  const auto& d = data.curve->counts;
  for (std::size_t j = 0; j < d.size(); ++j) {
    const double w = 1.0 / (data.sigma[j] * data.sigma[j]);
    num += w * shape[j] * d[j];
    den += w * shape[j] * shape[j];
  }
  const double scale = num / den;
  double chi2 = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    const double r = (scale * shape[j] - d[j]) / data.sigma[j];
    chi2 += r * r;
  }
  return {scale, chi2};
}

struct RecoolResidual : Eigen::DenseFunctor<double> {
  RecoolResidual(const FitData& data, int values)
      : Eigen::DenseFunctor<double>(2, values), data(&data) {}

  int operator()(const InputType& x, ValueType& r) const {
    const auto shape = model_counts(*data, std::exp(x[0]));
    const auto& d = data->curve->counts;
    for (std::size_t j = 0; j < d.size(); ++j)
      r[static_cast<Eigen::Index>(j)] = (x[1] * shape[j] - d[j]) / data->sigma[j];
    return 0;
  }

  const FitData* data;
};

}  // namespace

TwoLevelParams TwoLevelParams::make(double gamma, double saturation, double detuning,
                                    double wavenumber, double projection) {
  require_positive(gamma, "natural linewidth");
  require_positive(saturation, "saturation parameter");
  require_positive(wavenumber, "wavenumber");
  if (!std::isfinite(detuning)) throw InvalidArgument("detuning must be finite");
  if (!(std::abs(projection) <= 1.0)) throw InvalidArgument("|projection| must be <= 1");
  return {gamma, saturation, detuning, wavenumber, projection};
}

double saturation_intensity(double gamma, double wavelength) {
  require_positive(gamma, "linewidth");
  require_positive(wavelength, "wavelength");
  return kPi * constants::kPlanck * constants::kSpeedOfLight * gamma /
         (3.0 * wavelength * wavelength * wavelength);
}

double saturation_from_intensity(double intensity, double i_sat) {
  require_positive(intensity, "intensity");
  require_positive(i_sat, "saturation intensity");
  return intensity / i_sat;
}

TwoLevelParams calcium40_defaults() {
  const double i_sat = saturation_intensity(CalciumLine::kLinewidth, CalciumLine::kWavelength);
  const double intensity = 38e-3 / 1e-4;  // 38 mW/cm^2 in W/m^2
  return TwoLevelParams::make(CalciumLine::kLinewidth, saturation_from_intensity(intensity, i_sat),
                              -kTwoPi * 5e6, kTwoPi / CalciumLine::kWavelength,
                              1.0 / std::sqrt(3.0));
}

double scattering_rate(const TwoLevelParams& p, double v) {
  const double x = 2.0 * (p.detuning - p.wavenumber * p.projection * v) / p.natural_linewidth;
  return 0.5 * p.natural_linewidth * p.saturation / (1.0 + p.saturation + x * x);
}

PhaseAverages phase_average(const TwoLevelParams& p, const trap::IonSpecies& species, double energy) {
  if (!(energy >= 0.0)) throw InvalidArgument("energy must be non-negative");
  const double v_max = std::sqrt(2.0 * energy / species.mass);
  const double b = std::sqrt(1.0 + p.saturation);
  const double x = 2.0 * p.detuning / p.natural_linewidth;
  const double y = 2.0 * p.wavenumber * p.projection * v_max / p.natural_linewidth;
  const std::complex<double> c(x, -b);
  std::complex<double> w = std::sqrt(c * c - y * y);
  if (std::abs(w - c) > std::abs(w + c)) w = -w;
  const double prefactor = 0.5 * p.natural_linewidth * p.saturation;
  PhaseAverages out;
  out.rate = prefactor * (1.0 / w).imag() / b;
  out.velocity_rate = prefactor * v_max * (y / (w * (c + w))).imag() / b;
  return out;
}

double energy_rate(const TwoLevelParams& p, const trap::IonSpecies& species, double energy) {
  const auto avg = phase_average(p, species, energy);
  const double hk = kHbar * p.wavenumber;
  const double e_rec = hk * hk / (2.0 * species.mass);
  return hk * p.projection * avg.velocity_rate +
         e_rec * (p.projection * p.projection + 1.0 / 3.0) * avg.rate;
}

double doppler_limit_energy(const TwoLevelParams& p, const trap::IonSpecies& species) {
  if (!(p.detuning < 0.0) || p.projection == 0.0)
    throw NumericalError("no Doppler limit: laser must be red detuned with non-zero projection");
  const auto g = [&](double log_e) { return energy_rate(p, species, std::exp(log_e)); };
  const double scale = kHbar * p.natural_linewidth;
  double lo = std::log(scale) - 10.0;
  double hi = std::log(scale);
  while (g(lo) <= 0.0) lo -= 5.0;
  while (g(hi) >= 0.0) {
    hi += 2.0;
    if (hi > std::log(scale) + 40.0) throw NumericalError("laser never cools: no Doppler limit");
  }
  return std::exp(bracket_root(g, lo, hi));
}

double cooling_time(const TwoLevelParams& p, const trap::IonSpecies& species) {
  const double e_d = doppler_limit_energy(p, species);
  const double h = 1e-4 * e_d;
  const double slope =
      (energy_rate(p, species, e_d + h) - energy_rate(p, species, e_d - h)) / (2.0 * h);
  return 1.0 / std::abs(slope);
}

std::vector<double> RecoolCurve::bin_centers() const {
  std::vector<double> t(counts.size());
  for (std::size_t j = 0; j < t.size(); ++j) t[j] = (static_cast<double>(j) + 0.5) * bin_width;
  return t;
}

RecoolCurve fluorescence_curve(const TwoLevelParams& p, double mode_freq,
                               const trap::IonSpecies& species, double e0, double duration,
                               const CurveOptions& options) {
  if (!(e0 >= 0.0)) throw InvalidArgument("E0 must be non-negative");
  require_positive(mode_freq, "mode frequency");
  require_positive(options.bin_width, "bin width");
  require_positive(options.steady_state_rate, "steady-state rate");
  if (options.n_averages < 1) throw InvalidArgument("n_averages must be >= 1");
  if (!(duration >= options.bin_width)) throw InvalidArgument("duration shorter than one bin");
  const double tau_c = cooling_time(p, species);
  if (options.bin_width > 20.0 * tau_c)
    throw NumericalError(fmt::format(
        "bin width {:.3g} s is far longer than the cooling time {:.3g} s", options.bin_width, tau_c));
  if (1.0 / mode_freq > 0.1 * tau_c)
    throw InvalidArgument(fmt::format(
        "secular period {:.3g} s not short against the cooling time {:.3g} s", 1.0 / mode_freq,
        tau_c));

  const double e_d = doppler_limit_energy(p, species);
  const double efficiency = options.steady_state_rate / phase_average(p, species, e_d).rate;
  const auto n_bins = static_cast<std::size_t>(std::max(1.0, std::round(duration / options.bin_width)));
  RecoolCurve curve;
  curve.bin_width = options.bin_width;
  curve.n_averages = options.n_averages;
  curve.steady_state_rate = options.steady_state_rate;
  curve.counts = integrate_counts(p, species, e0, e_d, efficiency, n_bins, options.bin_width);
  return curve;
}

RecoolCurve thermal_fluorescence_curve(const TwoLevelParams& p, double mode_freq,
                                       const trap::IonSpecies& species, double mean_e0,
                                       double duration, const CurveOptions& options) {
  if (!(mean_e0 >= 0.0)) throw InvalidArgument("mean E0 must be non-negative");
  constexpr int kNodes = 48;
  RecoolCurve sum;
  for (int j = 0; j < kNodes; ++j) {
    const double u = (j + 0.5) / kNodes;
    const double e = -mean_e0 * std::log1p(-u);
    const auto c = fluorescence_curve(p, mode_freq, species, e, duration, options);
    if (j == 0) {
      sum = c;
      continue;
    }
    for (std::size_t k = 0; k < c.counts.size(); ++k) sum.counts[k] += c.counts[k];
  }
  for (double& v : sum.counts) v /= kNodes;
  return sum;
}

RecoolCurve sample_counts(const RecoolCurve& expected, std::uint64_t seed, std::uint64_t stream) {
  auto rng = numerics::stream_engine(seed, stream);
  RecoolCurve out = expected;
  const double n = expected.n_averages;
  for (double& c : out.counts) {
    std::poisson_distribution<long long> draw(std::max(c, 0.0) * n);
    c = static_cast<double>(draw(rng)) / n;
  }
  return out;
}

double recool_time(const TwoLevelParams& p, const trap::IonSpecies& species, double e0) {
  const double e_d = doppler_limit_energy(p, species);
  const double e1 = energy_at_rate_fraction(p, species, e_d, 0.995);
  if (e0 <= e1) return 0.0;
  // t = integral dE / |dE/dt| from e1 to e0, taken in ln E.
  const auto integrand = [&](double log_e) {
    const double e = std::exp(log_e);
    return e / std::abs(energy_rate(p, species, e));
  };
  using Kronrod = boost::math::quadrature::gauss_kronrod<double, 31>;
  return Kronrod::integrate(integrand, std::log(e1), std::log(e0), 15, 1e-9);
}

ScaledEnergyResult fit_recool(const RecoolCurve& curve, const TwoLevelParams& p, double mode_freq,
                              const trap::IonSpecies& species) {
  const std::size_t n = curve.counts.size();
  if (n < 20) throw InvalidArgument(fmt::format("recooling curve has {} bins (need >= 20)", n));
  const std::size_t tail = std::max<std::size_t>(1, n / 5);
  std::vector<double> tail_counts(curve.counts.end() - static_cast<std::ptrdiff_t>(tail),
                                  curve.counts.end());
  const double tail_mean = numerics::mean(tail_counts);
  if (!(tail_mean > 0.0)) throw InvalidArgument("recooling curve has no fluorescence");
  // Shot noise is averaged over up to four contiguous blocks before the 5% test.
  const std::size_t n_blocks = std::min<std::size_t>(4, tail);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t lo = b * tail / n_blocks;
    const std::size_t hi = (b + 1) * tail / n_blocks;
    const double block = numerics::mean(std::span<const double>(tail_counts).subspan(lo, hi - lo));
    if (std::abs(block - tail_mean) > 0.05 * tail_mean)
      throw InvalidArgument("recooling curve lacks a steady-state tail (last 20% of bins vary > 5%)");
  }

  FitData data{&curve, &p, &species, mode_freq, static_cast<double>(n) * curve.bin_width, {}};
  const double n_avg = curve.n_averages;
  data.sigma.resize(n);
  for (std::size_t j = 0; j < n; ++j)
    data.sigma[j] = std::sqrt(std::max(curve.counts[j], 1.0 / n_avg) / n_avg);

  const double e_d = doppler_limit_energy(p, species);
  const auto [flat_scale, flat_chi2] = profile_scale(data, model_counts(data, e_d));

  // Coarse scan up to the energy whose recooling just fills the window.
  double log_hi = std::log(e_d) + 1.0;
  while (log_hi < std::log(e_d) + 30.0 && recool_time(p, species, std::exp(log_hi)) < data.duration)
    log_hi += 0.5;
  const double log_lo = std::log(e_d);
  double best_u = log_lo;
  double best_chi2 = flat_chi2;
  double best_scale = flat_scale;
  constexpr int kGrid = 40;
  for (int i = 1; i <= kGrid; ++i) {
    const double u = log_lo + (log_hi - log_lo) * i / kGrid;
    const auto [scale, chi2] = profile_scale(data, model_counts(data, std::exp(u)));
    if (chi2 < best_chi2) {
      best_chi2 = chi2;
      best_u = u;
      best_scale = scale;
    }
  }

  ScaledEnergyResult result;
  const double dof = std::max<double>(1.0, static_cast<double>(n) - 2.0);
  if (flat_chi2 - best_chi2 < 9.0) {
    result.flat = true;
    result.converged = true;
    result.epsilon = 0.0;
    result.scale = flat_scale;
    result.fit_residual = flat_chi2 / dof;
    return result;
  }

  RecoolResidual fn(data, static_cast<int>(n));
  Eigen::NumericalDiff<RecoolResidual, Eigen::Central> numdiff(fn);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<RecoolResidual, Eigen::Central>> lm(numdiff);
  lm.setXtol(1e-6);
  lm.setFtol(1e-14);
  lm.setMaxfev(1000);
  Eigen::VectorXd x(2);
  x << best_u, best_scale;
  const auto status = lm.minimize(x);
  using Space = Eigen::LevenbergMarquardtSpace::Status;
  result.converged = status == Space::RelativeErrorTooSmall ||
                     status == Space::RelativeErrorAndReductionTooSmall ||
                     status == Space::RelativeReductionTooSmall;
  result.epsilon = std::exp(x[0]);
  result.scale = x[1];
  Eigen::VectorXd r(static_cast<Eigen::Index>(n));
  fn(x, r);
  result.fit_residual = r.squaredNorm() / dof;
  return result;
}

ProtocolResult heating_protocol(std::span<const double> tau_offs, std::span<const double> epsilons,
                                std::span<const double> sigma) {
  if (tau_offs.size() != epsilons.size())
    throw InvalidArgument("tau_off and epsilon lists differ in length");
  const std::set<double> distinct(tau_offs.begin(), tau_offs.end());
  if (distinct.size() < 3)
    throw InvalidArgument(fmt::format("heating protocol needs >= 3 distinct tau_off values, got {}",
                                      distinct.size()));
  ProtocolResult r;
  r.epsilons.assign(epsilons.begin(), epsilons.end());
  if (std::all_of(epsilons.begin(), epsilons.end(), [](double e) { return e == 0.0; })) return r;
  const auto fit = numerics::fit_through_origin(tau_offs, epsilons, sigma);
  r.depsilon_dt = fit.slope;
  r.slope_error = fit.slope_error;
  r.negative_slope = fit.slope < 0.0;
  return r;
}

ProtocolResult heating_protocol(std::span<const double> tau_offs,
                                std::span<const RecoolCurve> curves, const TwoLevelParams& p,
                                double mode_freq, const trap::IonSpecies& species) {
  if (tau_offs.size() != curves.size())
    throw InvalidArgument("tau_off and curve lists differ in length");
  std::vector<double> eps;
  eps.reserve(curves.size());
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto fit = fit_recool(curves[i], p, mode_freq, species);
    if (!fit.converged)
      throw NumericalError(fmt::format("recooling fit did not converge for tau_off = {:.6g} s",
                                       tau_offs[i]));
    eps.push_back(fit.epsilon);
  }
  return heating_protocol(tau_offs, eps);
}

CalibrationResult calibrate(std::span<const CalibrationPair> pairs) {
  if (pairs.size() < 2) throw InvalidArgument("calibration needs at least 2 pairs");
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& pr : pairs) {
    x.push_back(pr.de_dt);
    y.push_back(pr.depsilon_dt);
  }
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (!(*lo > 0.0) || *hi / *lo < 10.0)
    throw InvalidArgument("calibration pairs must span at least one decade in dE/dt");
  const auto fit = numerics::fit_line(x, y);
  if (!(fit.slope > 0.0))
    throw NumericalError(fmt::format("calibration slope {:.4g} is not positive", fit.slope));
  return {fit.slope, fit.intercept, fit.slope_error, fit.r_squared};
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  if (config.tau_fractions.size() < 3) throw InvalidArgument("need >= 3 tau_off fractions");
  require_positive(config.max_energy, "max energy");
  const auto& sp = config.species;
  const double f_eff = sim::effective_frequency(config.frequencies);
  const double e_d = doppler_limit_energy(config.laser, sp);

  std::vector<double> levels = config.s_e_levels;
  levels.push_back(config.s_e_test);
  const std::size_t n_levels = levels.size();
  const std::size_t n_tau = config.tau_fractions.size();

  std::vector<LevelResult> results(n_levels);
  std::vector<double> durations(n_levels);
  for (std::size_t l = 0; l < n_levels; ++l) {
    auto& lr = results[l];
    lr.s_e = levels[l];
    lr.de_dt = sim::heating_rate_analytic(sp, config.frequencies, sim::NoiseDrive::white(levels[l])).total;
    require_positive(lr.de_dt, "injected heating rate");
    const double tau_max = config.max_energy / lr.de_dt;
    for (double frac : config.tau_fractions) lr.tau_offs.push_back(frac * tau_max);
    // Long enough for the hottest thermal node to recool, with margin.
    const double e_top = e_d + lr.de_dt * tau_max * (config.thermal ? 4.6 : 1.0);
    const double bins = std::ceil(1.5 * recool_time(config.laser, sp, e_top) / config.curve.bin_width);
    durations[l] = std::max(bins, 40.0) * config.curve.bin_width;
  }

  std::vector<double> eps(n_levels * n_tau);
  numerics::parallel_for(n_levels * n_tau, config.threads, [&](std::size_t idx) {
    const std::size_t l = idx / n_tau;
    const std::size_t t = idx % n_tau;
    const double e0 = e_d + results[l].de_dt * results[l].tau_offs[t];
    const auto expected =
        config.thermal
            ? thermal_fluorescence_curve(config.laser, f_eff, sp, e0, durations[l], config.curve)
            : fluorescence_curve(config.laser, f_eff, sp, e0, durations[l], config.curve);
    const auto noisy = sample_counts(expected, config.seed, idx);
    const auto fit = fit_recool(noisy, config.fit_laser, f_eff, sp);
    if (!fit.converged)
      throw NumericalError(fmt::format("recooling fit did not converge (S_E = {:.3g}, tau_off = {:.3g} s)",
                                       results[l].s_e, results[l].tau_offs[t]));
    eps[idx] = fit.epsilon;
  });

  for (std::size_t l = 0; l < n_levels; ++l) {
    std::span<const double> level_eps(eps.data() + l * n_tau, n_tau);
    results[l].protocol = heating_protocol(results[l].tau_offs, level_eps);
  }

  PipelineResult out;
  out.effective_frequency = f_eff;
  out.test = results.back();
  results.pop_back();
  out.levels = std::move(results);
  std::vector<CalibrationPair> pairs;
  for (const auto& lr : out.levels) pairs.push_back({lr.protocol.depsilon_dt, lr.de_dt});
  out.calibration = calibrate(pairs);
  out.injected_rate = out.test.de_dt;
  out.recovered_rate = out.test.protocol.depsilon_dt / out.calibration.slope;
  out.relative_error = (out.recovered_rate - out.injected_rate) / out.injected_rate;
  return out;
}

void write_curve_csv(std::ostream& out, const RecoolCurve& curve) {
  out << "t_s,counts\n";
  const auto t = curve.bin_centers();
  for (std::size_t j = 0; j < t.size(); ++j)
    out << fmt::format("{:.17g},{:.17g}\n", t[j], curve.counts[j]);
}

}  // namespace iontrap::recool
