#pragma once

// Doppler recooling: a phase-averaged two-level model of a hot ion being
// re-cooled by a red-detuned laser, fits of the resulting fluorescence curves
// to a scaled energy, the tau_off heating protocol and calibration against
// injected noise.
//
// The ion oscillates as v(t) = v_max sin(phi) with v_max = sqrt(2 E / m) along
// the cooled mode. Over one secular cycle
//   <1 / (b^2 + (X - Y sin phi)^2)>      = Im(1 / w) / b
//   <sin phi / (b^2 + (X - Y sin phi)^2)> = Im(Y / (w (c + w))) / b
// with b^2 = 1 + s, X = 2 delta / Gamma, Y = 2 k p v_max / Gamma, c = X - i b and
// w = sqrt(c^2 - Y^2) on the branch that tends to c as Y -> 0.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "iontrap/trap_model.hpp"

namespace iontrap::recool {

struct TwoLevelParams {
  double natural_linewidth = 0.0;  // Gamma, rad/s
  double saturation = 0.0;         // s = I / I_sat
  double detuning = 0.0;           // delta, rad/s (negative = red)
  double wavenumber = 0.0;         // k, 1/m
  double projection = 0.0;         // cosine between laser and mode

  /// Validates Gamma > 0, s > 0, k > 0 and |projection| <= 1.
  static TwoLevelParams make(double gamma, double saturation, double detuning, double wavenumber,
                             double projection);
};

/// 397 nm S1/2 - P1/2 line of 40Ca+.
struct CalciumLine {
  static constexpr double kLinewidth = 2.0 * 3.14159265358979323846 * 22.4e6;  // rad/s
  static constexpr double kWavelength = 396.96e-9;                             // m
};

/// pi h c Gamma / (3 lambda^3), W/m^2.
double saturation_intensity(double gamma, double wavelength);
/// I / I_sat.
double saturation_from_intensity(double intensity, double i_sat);

/// Defaults for the 397 nm line: 38 mW/cm^2 (s ~ 0.81), delta = -2 pi 5 MHz,
/// projection 1/sqrt(3).
TwoLevelParams calcium40_defaults();

/// (Gamma/2) s / (1 + s + (2 (delta - k p v) / Gamma)^2), photons/s.
double scattering_rate(const TwoLevelParams& p, double v);

struct PhaseAverages {
  double rate = 0.0;           // <R>, photons/s
  double velocity_rate = 0.0;  // <v R>, (m/s) / s
};

/// Cycle averages at oscillation energy E (J).
PhaseAverages phase_average(const TwoLevelParams& p, const trap::IonSpecies& species, double energy);

/// dE/dt = hbar k p <v R> + E_rec (p^2 + 1/3) <R>, E_rec = (hbar k)^2 / (2 m).
double energy_rate(const TwoLevelParams& p, const trap::IonSpecies& species, double energy);

/// Root of energy_rate. Throws NumericalError when the laser heats (delta >= 0).
double doppler_limit_energy(const TwoLevelParams& p, const trap::IonSpecies& species);

/// 1 / |d(energy_rate)/dE| at the Doppler limit, seconds.
double cooling_time(const TwoLevelParams& p, const trap::IonSpecies& species);

struct RecoolCurve {
  double bin_width = 5e-5;             // s
  std::vector<double> counts;          // counts per bin, averaged over repetitions
  int n_averages = 1000;
  double steady_state_rate = 5e4;      // counts/s

  std::vector<double> bin_centers() const;
};

struct CurveOptions {
  double bin_width = 5e-5;
  int n_averages = 1000;
  double steady_state_rate = 5e4;
};

/// Expected averaged counts per bin while the ion recools from E0. Detection
/// efficiency is set so that an ion at the Doppler limit gives
/// steady_state_rate. mode_freq only checks that the secular cycle is much
/// shorter than the cooling time. Throws NumericalError when bin_width
/// exceeds 20 cooling times and InvalidArgument for E0 < 0.
RecoolCurve fluorescence_curve(const TwoLevelParams& p, double mode_freq,
                               const trap::IonSpecies& species, double e0, double duration,
                               const CurveOptions& options = {});

/// fluorescence_curve averaged over an exponential (thermal) distribution of
/// initial energy with the given mean, by 48-point quantile quadrature.
RecoolCurve thermal_fluorescence_curve(const TwoLevelParams& p, double mode_freq,
                                       const trap::IonSpecies& species, double mean_e0,
                                       double duration, const CurveOptions& options = {});

/// Replaces expected counts with Poisson draws over n_averages repetitions
/// (total counts / n_averages).
RecoolCurve sample_counts(const RecoolCurve& expected, std::uint64_t seed, std::uint64_t stream = 0);

/// Time for the fluorescence to reach 99.5% of steady state from E0, s.
double recool_time(const TwoLevelParams& p, const trap::IonSpecies& species, double e0);

struct ScaledEnergyResult {
  double epsilon = 0.0;      // J
  double scale = 1.0;        // fitted amplitude relative to steady_state_rate
  double fit_residual = 0.0; // reduced chi-square
  bool converged = false;
  bool flat = false;         // no recooling dip detected; epsilon = 0
};

/// Weighted least squares of (E0, scale) against fluorescence_curve with
/// Poisson weights. Throws InvalidArgument when the curve has fewer than 20
/// bins or lacks a steady-state tail (last 20% of bins within 5% of their mean).
ScaledEnergyResult fit_recool(const RecoolCurve& curve, const TwoLevelParams& p, double mode_freq,
                              const trap::IonSpecies& species);

struct ProtocolResult {
  double depsilon_dt = 0.0;  // J/s
  double slope_error = 0.0;  // J/s
  std::vector<double> epsilons;
  bool negative_slope = false;
};

/// Through-origin fit of epsilon(tau_off). Needs at least 3 distinct tau_off.
/// With empty sigma the scatter sets the error.
ProtocolResult heating_protocol(std::span<const double> tau_offs, std::span<const double> epsilons,
                                std::span<const double> sigma = {});
/// Fits each curve with fit_recool first.
ProtocolResult heating_protocol(std::span<const double> tau_offs,
                                std::span<const RecoolCurve> curves, const TwoLevelParams& p,
                                double mode_freq, const trap::IonSpecies& species);

struct CalibrationPair {
  double depsilon_dt = 0.0;  // J/s
  double de_dt = 0.0;        // J/s, analytic
};

struct CalibrationResult {
  double slope = 0.0;
  double intercept = 0.0;    // J/s
  double slope_error = 0.0;
  double r_squared = 0.0;
};

/// OLS of depsilon_dt against de_dt. Throws InvalidArgument for fewer than two
/// pairs or a de_dt span below one decade, NumericalError for slope <= 0.
CalibrationResult calibrate(std::span<const CalibrationPair> pairs);

struct PipelineConfig {
  std::vector<double> s_e_levels{1.7e-11, 6.0e-11, 2.0e-10, 5.0e-10, 1.0e-9};  // (V/m)^2/Hz
  double s_e_test = 3.0e-10;        // independent injection checked after calibration
  /// tau_off values at each level are these fractions of the time needed to
  /// heat to max_energy.
  std::vector<double> tau_fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  double max_energy = 1.602176634e-22;  // J (1 meV)
  trap::IonSpecies species = trap::IonSpecies::calcium40();
  std::array<double, 3> frequencies{1.2e6, 1.4e6, 0.4e6};  // Hz
  TwoLevelParams laser = calcium40_defaults();
  /// Laser parameters assumed by the fit; differs from `laser` to model an
  /// imperfect forward model.
  TwoLevelParams fit_laser = calcium40_defaults();
  bool thermal = true;              // average curves over thermal initial energies
  CurveOptions curve;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

struct LevelResult {
  double s_e = 0.0;
  double de_dt = 0.0;          // J/s, analytic
  std::vector<double> tau_offs;  // s
  ProtocolResult protocol;
};

struct PipelineResult {
  std::vector<LevelResult> levels;
  CalibrationResult calibration;
  LevelResult test;
  double recovered_rate = 0.0;  // J/s: test dε/dt divided by calibration slope
  double injected_rate = 0.0;   // J/s
  double relative_error = 0.0;
  double effective_frequency = 0.0;  // Hz
};

/// Injected S_E -> analytic dE/dt -> recooling curves at each tau_off
/// (Poisson sampled) -> epsilon -> protocol -> calibration, then an
/// independent injection converted back to a physical heating rate.
PipelineResult run_pipeline(const PipelineConfig& config);

/// CSV: t_s,counts.
void write_curve_csv(std::ostream& out, const RecoolCurve& curve);

}  // namespace iontrap::recool
