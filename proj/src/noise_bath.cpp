#include "iontrap/noise_bath.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/numerics.hpp"

namespace iontrap::noise {

namespace {

using constants::kPi;
using constants::kTwoPi;
using constants::kVacuumPermittivity;

using Kronrod = boost::math::quadrature::gauss_kronrod<double, 61>;

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
}

// Kernel squared per unit dipole moment: (1 / (2 pi eps0 r^3))^2.
double kernel_sq(double r2) {
  const double k = 1.0 / (kTwoPi * kVacuumPermittivity);
  return k * k / (r2 * r2 * r2);
}

double spectrum_mu(const DipoleBath& bath, double f, Provenance method) {
  return ensemble_psd_mu(bath, f, method).value;
}

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kClosedForm:
      return "CLOSED_FORM";
    case Provenance::kQuadrature:
      return "QUADRATURE";
    case Provenance::kMonteCarlo:
      return "MONTE_CARLO";
  }
  return "?";
}

RelaxingDipole RelaxingDipole::make(double mu, double gamma) {
  require_positive(mu, "dipole moment");
  require_positive(gamma, "relaxation rate");
  return {mu, gamma};
}

DipoleBath DipoleBath::make(double n_s, double mu, double gamma_min, double gamma_max,
                            Normalization normalization) {
  require_positive(gamma_min, "gamma_min");
  if (!(gamma_max > gamma_min)) throw InvalidArgument("gamma_min must be below gamma_max");
  const double log_span = std::log(gamma_max / gamma_min);
  const double a = normalization == Normalization::kPrinted ? log_span : 1.0 / log_span;
  return with_a(n_s, mu, gamma_min, gamma_max, a);
}

DipoleBath DipoleBath::with_a(double n_s, double mu, double gamma_min, double gamma_max,
                              double a_norm) {
  require_positive(n_s, "surface density");
  require_positive(mu, "dipole moment");
  require_positive(gamma_min, "gamma_min");
  require_positive(a_norm, "normalization A");
  if (!(gamma_max > gamma_min)) throw InvalidArgument("gamma_min must be below gamma_max");
  return {n_s, mu, gamma_min, gamma_max, a_norm};
}

DipoleBath preset_wide_band() {
  return DipoleBath::make(6e19, constants::kDebye, 1e-2, 1e10);
}

DipoleBath preset_a10() {
  const double gamma_max = 1e10;
  return DipoleBath::make(6e19, constants::kDebye, gamma_max * std::exp(-10.0), gamma_max);
}

DipoleBath preset(std::string_view name) {
  if (name == "wide_band") return preset_wide_band();
  if (name == "a10") return preset_a10();
  throw InvalidArgument("unknown bath preset '" + std::string(name) + "' (wide_band, a10)");
}

double dipole_autocorr(const RelaxingDipole& d, double t) {
  if (!(t >= 0.0)) throw InvalidArgument("autocorrelation lag must be non-negative");
  return d.mu * d.mu * std::exp(-d.gamma * t);
}

double dipole_psd(const RelaxingDipole& d, double f) {
  if (!(f >= 0.0)) throw InvalidArgument("frequency must be non-negative");
  const double w = kTwoPi * f;
  return 2.0 * d.mu * d.mu * d.gamma / (d.gamma * d.gamma + w * w);
}

Band validity_band(const DipoleBath& bath) {
  return {10.0 * bath.gamma_min / kTwoPi, bath.gamma_max / (10.0 * kTwoPi)};
}

EnsembleValue ensemble_psd_mu(const DipoleBath& bath, double f, Provenance method) {
  require_positive(f, "frequency");
  EnsembleValue out;
  out.in_validity_band = validity_band(bath).contains(f);
  switch (method) {
    case Provenance::kClosedForm:
      out.value = bath.a_norm * bath.mu * bath.mu / (2.0 * f);
      return out;
    case Provenance::kQuadrature: {
      // Integrate in x = ln(Gamma): F(Gamma) dGamma = A dx.
      const auto integrand = [&](double x) {
        return bath.a_norm * dipole_psd(RelaxingDipole{bath.mu, std::exp(x)}, f);
      };
      const double lo = std::log(bath.gamma_min);
      const double hi = std::log(bath.gamma_max);
      const double peak = std::clamp(std::log(kTwoPi * f), lo, hi);
      double total = 0.0;
      // Split around the Lorentzian knee so each panel is smooth.
      std::vector<double> cuts{lo};
      for (double c : {peak - 8.0, peak - 2.0, peak + 2.0, peak + 8.0})
        if (c > cuts.back() && c < hi) cuts.push_back(c);
      cuts.push_back(hi);
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        total += Kronrod::integrate(integrand, cuts[i], cuts[i + 1], 15, 1e-12);
      out.value = total;
      return out;
    }
    case Provenance::kMonteCarlo:
      break;
  }
  throw InvalidArgument("ensemble_psd_mu supports CLOSED_FORM and QUADRATURE only");
}

double field_psd_plane(const DipoleBath& bath, double d, double f, PlaneMode mode) {
  require_positive(d, "distance");
  require_positive(f, "frequency");
  const double eps2 = kVacuumPermittivity * kVacuumPermittivity;
  const double d4 = d * d * d * d;
  const double base = bath.a_norm * bath.n_s * bath.mu * bath.mu / (eps2 * d4 * f);
  switch (mode) {
    case PlaneMode::kPrintedClosedForm:
      return base / (8.0 * kPi);
    case PlaneMode::kSurfaceIntegral:
      // n_S S_mu / (4 pi^2 eps0^2) * integral 2 pi rho d rho / (d^2 + rho^2)^3
      // = n_S S_mu / (4 pi^2 eps0^2) * pi / (2 d^4).
      return base / (16.0 * kPi);
  }
  return 0.0;
}

NumericFieldPsd field_psd_numeric(const DipoleBath& bath, double d, double f, double extent,
                                  Provenance spectrum_method) {
  require_positive(d, "distance");
  require_positive(f, "frequency");
  if (extent == 0.0) extent = 50.0 * d;
  if (!(extent >= 5.0 * d)) {
    throw NumericalError(fmt::format(
        "field_psd_numeric: extent {:.3e} m < 5 d = {:.3e} m, surface integral not converged",
        extent, 5.0 * d));
  }
  const auto radial = [&](double rho) { return kTwoPi * rho * kernel_sq(d * d + rho * rho); };
  std::vector<double> cuts{0.0};
  for (double c : {0.5 * d, d, 2.0 * d, 5.0 * d, 20.0 * d, 100.0 * d})
    if (c < extent) cuts.push_back(c);
  cuts.push_back(extent);
  double area_integral = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    area_integral += Kronrod::integrate(radial, cuts[i], cuts[i + 1], 15, 1e-13);

  NumericFieldPsd out;
  out.extent = extent;
  out.value = bath.n_s * area_integral * spectrum_mu(bath, f, spectrum_method);
  out.closed_form = field_psd_plane(bath, d, f);
  out.ratio = out.value / out.closed_form;
  return out;
}

MonteCarloFieldPsd field_psd_monte_carlo(const DipoleBath& bath, double d, double f,
                                         const MonteCarloOptions& options) {
  require_positive(d, "distance");
  require_positive(f, "frequency");
  if (options.realizations < 2) throw InvalidArgument("Monte Carlo needs at least 2 realizations");
  require_positive(options.mean_dipoles, "mean dipole count");
  const double extent = options.extent == 0.0 ? 50.0 * d : options.extent;
  const double area = kPi * extent * extent;
  const double density = options.mean_dipoles / area;

  std::vector<double> samples(options.realizations);
  numerics::parallel_for(options.realizations, options.threads, [&](std::size_t r) {
    auto rng = numerics::stream_engine(options.seed, r);
    std::poisson_distribution<long long> count(options.mean_dipoles);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> amplitude(0.0, 1.0);
    const long long n = count(rng);
    double field = 0.0;
    for (long long i = 0; i < n; ++i) {
      const double rho2 = extent * extent * uni(rng);
      (void)uni(rng);  // azimuth: the kernel is isotropic
      field += std::sqrt(kernel_sq(d * d + rho2)) * amplitude(rng);
    }
    samples[r] = field * field;
  });

  const double scale = (bath.n_s / density) * spectrum_mu(bath, f, Provenance::kClosedForm);
  MonteCarloFieldPsd out;
  out.realizations = options.realizations;
  out.sampling_density = density;
  out.mean = scale * numerics::mean(samples);
  out.standard_error =
      scale * numerics::stddev(samples) / std::sqrt(static_cast<double>(samples.size()));
  return out;
}

double invert_surface_density(double s_e_times_f, double d, double a_norm, double mu) {
  require_positive(s_e_times_f, "f * S_E");
  require_positive(d, "distance");
  require_positive(a_norm, "normalization A");
  require_positive(mu, "dipole moment");
  const double eps2 = kVacuumPermittivity * kVacuumPermittivity;
  return 8.0 * kPi * eps2 * d * d * d * d * s_e_times_f / (a_norm * mu * mu);
}

Coverage adsorbate_coverage(double n_s, double reference_density) {
  require_positive(reference_density, "reference density");
  if (!(n_s >= 0.0)) throw InvalidArgument("surface density must be non-negative");
  const double theta = n_s / reference_density;
  return {theta, theta > 1.0};
}

double tls_layer_thickness(double n_s, double n_v) {
  require_positive(n_v, "TLS volume density");
  if (!(n_s >= 0.0)) throw InvalidArgument("surface density must be non-negative");
  return n_s / n_v;
}

NoiseSpectrum field_spectrum(const DipoleBath& bath, double d, const std::vector<double>& freqs,
                             Provenance method) {
  for (std::size_t i = 1; i < freqs.size(); ++i)
    if (!(freqs[i] > freqs[i - 1])) throw InvalidArgument("frequency grid must be increasing");
  NoiseSpectrum s;
  s.frequencies = freqs;
  s.provenance = method;
  s.s_e.reserve(freqs.size());
  for (double f : freqs) {
    // Surface geometry factor from the printed closed form, spectral shape from
    // the requested dipole-spectrum path.
    const double geometry = field_psd_plane(bath, d, f) / spectrum_mu(bath, f, Provenance::kClosedForm);
    s.s_e.push_back(geometry * spectrum_mu(bath, f, method));
  }
  return s;
}

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  require_positive(lo, "grid start");
  if (!(hi > lo) || n < 2) throw InvalidArgument("log_grid needs hi > lo and n >= 2");
  std::vector<double> g(n);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * double(i) / double(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

void write_spectrum_csv(std::ostream& out, const NoiseSpectrum& s) {
  out << "# S_E in (V/m)^2/Hz on f >= 0; dipole spectra 2 mu^2 Gamma/(Gamma^2+(2 pi f)^2)\n";
  out << "f_Hz,S_E,provenance\n";
  for (std::size_t i = 0; i < s.frequencies.size(); ++i)
    out << fmt::format("{:.17g},{:.17g},{}\n", s.frequencies[i], s.s_e[i], to_string(s.provenance));
}

}  // namespace iontrap::noise
