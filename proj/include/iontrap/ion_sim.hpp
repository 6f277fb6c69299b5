#pragma once

// Heating of a trapped ion by electric-field noise: the analytic rate law, a
// Langevin integrator that reproduces it, and phonon-rate conversions.
//
// Field spectra are one-sided in f (see noise_bath.hpp). A white field of
// one-sided PSD S_E heats one mode at e^2 S_E / (4 m); the integrator draws a
// velocity kick of variance (e/m)^2 S_E dt / 2 per step to match.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "iontrap/noise_bath.hpp"
#include "iontrap/trap_model.hpp"

namespace iontrap::sim {

using Frequencies = std::array<double, 3>;  // Hz, (f_x, f_y, f_z)

class NoiseDrive {
 public:
  using Spectrum = std::function<double(double f, int axis)>;

  /// s_e(f, axis) in (V/m)^2/Hz. The drive is defined on [domain.lo, domain.hi].
  NoiseDrive(Spectrum s_e, noise::Band domain, std::string description, bool white = false);

  /// Same S_E on every axis at every frequency.
  static NoiseDrive white(double s_e);
  /// Frequency-independent, one level per axis.
  static NoiseDrive white_per_axis(const std::array<double, 3>& s_e);
  /// White at s_e inside [lo, hi], zero outside.
  static NoiseDrive band_limited(double s_e, double lo, double hi);
  /// s_e_ref * f_ref / f on every axis, defined on [lo, hi].
  static NoiseDrive one_over_f(double s_e_ref, double f_ref, double lo, double hi);
  /// The surface-dipole spectrum at distance d, defined on the bath's validity band.
  static NoiseDrive from_bath(const noise::DipoleBath& bath, double d);

  /// Throws InvalidArgument outside the domain or for a negative value.
  double at(double f, int axis) const;
  bool defined_at(double f) const { return domain_.contains(f); }
  const noise::Band& domain() const { return domain_; }
  const std::string& description() const { return description_; }
  /// True when S_E does not depend on frequency (the integrator then skips
  /// spectral shaping).
  bool is_white() const { return white_; }
  /// Relative spread (max - min) / max of S_E over [lo, hi] on each axis.
  double variation(double lo, double hi) const;

 private:
  Spectrum s_e_;
  noise::Band domain_;
  std::string description_;
  bool white_ = false;
};

/// Default RF drive for the sideband diagnostic.
inline constexpr double kDefaultRfOmega = 2.0 * 3.14159265358979323846 * 15e6;  // rad/s

struct HeatingRate {
  double total = 0.0;                 // J/s
  std::array<double, 3> per_mode{};   // J/s
  /// (omega_i / Omega_RF)^2: relative weight of the micromotion sidebands at
  /// Omega_RF +- omega_i, which the rate above leaves out.
  std::array<double, 3> sideband_suppression{};
};

/// Sum over modes of e^2 S_E(f_i) / (4 m).
HeatingRate heating_rate_analytic(const trap::IonSpecies& species, const Frequencies& freqs,
                                  const NoiseDrive& drive, double rf_omega = kDefaultRfOmega);

struct EnergyTrace {
  std::vector<double> times;                     // s
  std::array<std::vector<double>, 3> mode_energies;  // J
  std::vector<double> total;                     // J
  std::uint64_t seed = 0;
};

struct LangevinOptions {
  double duration = 0.0;          // s
  int steps_per_period = 64;      // of the fastest mode, at least 50
  int samples = 200;              // trace points after t = 0
  std::array<double, 3> initial_energy{};  // J, started at maximum displacement
};

/// Integrates three independent noisy oscillators x'' + w^2 x = (e/m) xi(t)
/// with an exact rotation / kick / rotation split. Throws InvalidArgument when
/// steps_per_period < 50 or the duration is shorter than ten periods of the
/// slowest mode.
EnergyTrace integrate_langevin(const trap::IonSpecies& species, const Frequencies& freqs,
                               const NoiseDrive& drive, const LangevinOptions& options,
                               std::uint64_t seed);

struct EnsembleOptions {
  LangevinOptions langevin;
  std::size_t members = 2000;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

struct EnsembleResult {
  std::vector<double> times;
  std::array<std::vector<double>, 3> mean_energies;
  std::array<double, 3> slope{};        // J/s, mean of per-member OLS slopes
  std::array<double, 3> slope_error{};  // standard error of that mean
  double total_slope = 0.0;
  double total_slope_error = 0.0;
  std::size_t members = 0;
};

/// Seed of ensemble member k.
std::uint64_t member_seed(std::uint64_t seed, std::size_t k);

/// Member k runs integrate_langevin with member_seed(seed, k). The result
/// does not depend on the thread count.
EnsembleResult ensemble_heating(const trap::IonSpecies& species, const Frequencies& freqs,
                                const NoiseDrive& drive, const EnsembleOptions& options);

/// 1 / sum(1 / f_i). Any number of positive frequencies.
double effective_frequency(std::span<const double> freqs);

/// rate * (f_meas / f_ref)^2: phonon rate referred to f_ref assuming S_E ~ 1/f.
double phonons_normalized(double rate, double f_meas, double f_ref = 1e6);
/// Inverse of phonons_normalized.
double phonons_denormalized(double rate_at_ref, double f_meas, double f_ref = 1e6);

/// Single-mode conversions between phonon rate (1/s) at frequency f (Hz) and
/// one-sided field PSD: N' = e^2 S_E / (4 m hbar w).
double phonon_rate_from_field_psd(const trap::IonSpecies& species, double f, double s_e);
double field_psd_from_phonon_rate(const trap::IonSpecies& species, double f, double rate);

/// CSV: t_s,E_x_J,E_y_J,E_z_J.
void write_trace_csv(std::ostream& out, const EnergyTrace& trace);

/// JSON manifest written next to a trace.
void write_trace_manifest(std::ostream& out, const EnergyTrace& trace, const NoiseDrive& drive,
                          const Frequencies& freqs, const LangevinOptions& options);

}  // namespace iontrap::sim
