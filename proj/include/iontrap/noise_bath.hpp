#pragma once

// Fluctuating-dipole model of anomalous heating noise.
//
// Spectral convention: every dipole-moment spectrum follows the Lorentzian
// S(f) = 2 mu^2 Gamma / (Gamma^2 + (2 pi f)^2), i.e. S(f) = 2 * integral_0^inf
// phi(t) cos(2 pi f t) dt for the autocorrelation phi(t) = mu^2 exp(-Gamma t),
// evaluated on f >= 0. Field spectra derived from it are reported in
// (V/m)^2/Hz on the same f >= 0 axis and are consumed unchanged by the
// heating law in ion_sim.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace iontrap::noise {

enum class Provenance { kClosedForm, kQuadrature, kMonteCarlo };

std::string_view to_string(Provenance p);

/// How the rate-distribution constant A relates to the rate limits.
enum class Normalization {
  /// A = ln(Gamma_max / Gamma_min), used multiplicatively.
  kPrinted,
  /// A = 1 / ln(Gamma_max / Gamma_min), which makes A/Gamma integrate to one.
  kUnitNormalized,
};

struct RelaxingDipole {
  double mu = 0.0;     // C m
  double gamma = 0.0;  // 1/s

  static RelaxingDipole make(double mu, double gamma);
};

struct DipoleBath {
  double n_s = 0.0;        // 1/m^2
  double mu = 0.0;         // C m
  double gamma_min = 0.0;  // 1/s
  double gamma_max = 0.0;  // 1/s
  double a_norm = 0.0;     // dimensionless

  /// Derives a_norm from the rate limits.
  static DipoleBath make(double n_s, double mu, double gamma_min, double gamma_max,
                         Normalization normalization = Normalization::kPrinted);
  /// Uses an explicit a_norm.
  static DipoleBath with_a(double n_s, double mu, double gamma_min, double gamma_max,
                           double a_norm);
};

/// n_S = 6e19 / m^2, mu = 1 D, Gamma in [1e-2, 1e10] / s (A ~ 27.6).
DipoleBath preset_wide_band();
/// n_S = 6e19 / m^2, mu = 1 D, A = 10 with Gamma_max = 1e10 / s.
DipoleBath preset_a10();
/// "wide_band" or "a10"; throws InvalidArgument otherwise.
DipoleBath preset(std::string_view name);

/// Reference monolayer density for a disordered gold surface. Chosen so that
/// the 4 D adsorbate pathway gives a coverage of 0.6; not an independent
/// measurement.
inline constexpr double kDisorderedGoldReferenceDensity = 6.25e18;  // 1/m^2

/// mu^2 exp(-Gamma t).
double dipole_autocorr(const RelaxingDipole& dipole, double t);

/// 2 mu^2 Gamma / (Gamma^2 + (2 pi f)^2), (C m)^2 / Hz.
double dipole_psd(const RelaxingDipole& dipole, double f);

struct Band {
  double lo = 0.0;  // Hz
  double hi = 0.0;  // Hz

  bool contains(double f) const { return f >= lo && f <= hi; }
};

/// [10 Gamma_min / 2 pi, Gamma_max / (10 * 2 pi)]: outside it the 1/f closed
/// form is flagged.
Band validity_band(const DipoleBath& bath);

struct EnsembleValue {
  double value = 0.0;  // (C m)^2 / Hz
  bool in_validity_band = true;
};

/// Dipole spectrum of the whole rate distribution F(Gamma) = A / Gamma.
/// kClosedForm gives A mu^2 / (2 f); kQuadrature integrates dipole_psd
/// against F over [Gamma_min, Gamma_max].
EnsembleValue ensemble_psd_mu(const DipoleBath& bath, double f, Provenance method);

enum class PlaneMode {
  /// A n_S mu^2 / (8 pi eps0^2 d^4 f), the printed closed form.
  kPrintedClosedForm,
  /// The surface integral of the per-dipole kernel over the infinite plane.
  kSurfaceIntegral,
};

/// Field noise above an infinite planar dipole layer at distance d.
double field_psd_plane(const DipoleBath& bath, double d, double f,
                       PlaneMode mode = PlaneMode::kPrintedClosedForm);

struct NumericFieldPsd {
  double value = 0.0;          // (V/m)^2 / Hz
  double closed_form = 0.0;    // printed closed form at the same inputs
  double ratio = 0.0;          // value / closed_form
  double extent = 0.0;         // disc radius used, m
};

/// Quadrature of n_S (1 / (2 pi eps0 r^3))^2 S_mu(f) over a disc of radius
/// `extent` centred below the ion (default 50 d). Throws NumericalError for
/// extent < 5 d.
NumericFieldPsd field_psd_numeric(const DipoleBath& bath, double d, double f, double extent = 0.0,
                                  Provenance spectrum_method = Provenance::kClosedForm);

struct MonteCarloOptions {
  double extent = 0.0;              // disc radius, m (0 = 50 d)
  double mean_dipoles = 2e5;        // expected dipoles per realization
  std::size_t realizations = 400;
  std::uint64_t seed = 1;
  unsigned threads = 0;             // 0 = hardware concurrency
};

struct MonteCarloFieldPsd {
  double mean = 0.0;            // (V/m)^2 / Hz, rescaled to bath.n_s
  double standard_error = 0.0;  // same units
  double sampling_density = 0.0;  // Poisson intensity actually simulated, 1/m^2
  std::size_t realizations = 0;
};

/// Poisson-process estimate: each realization scatters dipoles with random
/// signed unit amplitudes over the disc and squares their summed field. The
/// simulated intensity is lowered to keep the count tractable and the result
/// is rescaled linearly in density.
MonteCarloFieldPsd field_psd_monte_carlo(const DipoleBath& bath, double d, double f,
                                         const MonteCarloOptions& options = {});

/// Exact inverse of the printed closed form:
/// n_S = 8 pi eps0^2 d^4 (f S_E) / (A mu^2).
double invert_surface_density(double s_e_times_f, double d, double a_norm, double mu);

struct Coverage {
  double theta = 0.0;
  bool exceeds_monolayer = false;
};

Coverage adsorbate_coverage(double n_s, double reference_density = kDisorderedGoldReferenceDensity);

/// delta = n_S / n_V.
double tls_layer_thickness(double n_s, double n_v);

struct NoiseSpectrum {
  std::vector<double> frequencies;  // Hz, strictly increasing
  std::vector<double> s_e;          // (V/m)^2 / Hz
  Provenance provenance = Provenance::kClosedForm;
};

/// Field spectrum at distance d on the given grid.
NoiseSpectrum field_spectrum(const DipoleBath& bath, double d, const std::vector<double>& freqs,
                             Provenance method);

/// Logarithmic grid of n points between lo and hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t n);

/// CSV with columns f_Hz,S_E,provenance. A leading comment states the
/// spectral convention.
void write_spectrum_csv(std::ostream& out, const NoiseSpectrum& spectrum);

}  // namespace iontrap::noise
