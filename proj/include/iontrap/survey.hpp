#pragma once

// Heating-rate records from different traps, converted to field-noise
// spectral density and compared as omega * S_E(omega) against ion-electrode
// distance.
//
// Record CSV header (fixed):
//   label,d_m,f_Hz,quantity_kind,value,mass_kg,material,T_K,method,fx_Hz,fy_Hz,fz_Hz
// quantity_kind is PHONON_RATE (1/s), ENERGY_RATE (J/s) or FIELD_PSD
// ((V/m)^2/Hz). method is SIDEBAND (value measured on the mode at f_Hz),
// RECOOL (all three mode frequencies required, converted at their effective
// frequency) or NORMALIZED (value already referred to f_Hz, e.g. phonons at
// 1 MHz). Ions are taken as singly charged.

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iontrap::survey {

enum class QuantityKind { kPhononRate, kEnergyRate, kFieldPsd };
enum class Method { kSideband, kRecool, kNormalized };

std::string_view to_string(QuantityKind q);
std::string_view to_string(Method m);
QuantityKind parse_quantity(std::string_view text);
Method parse_method(std::string_view text);

struct HeatingRecord {
  std::string label;
  double distance = 0.0;   // m
  double frequency = 0.0;  // Hz
  QuantityKind quantity = QuantityKind::kPhononRate;
  double value = 0.0;
  double species_mass = 0.0;  // kg
  std::string electrode_material;
  double temperature = 300.0;  // K
  Method method = Method::kSideband;
  std::optional<std::array<double, 3>> mode_frequencies;  // Hz

  /// Throws InvalidArgument on d <= 0, f <= 0, value < 0, mass <= 0 or a
  /// RECOOL record without mode frequencies.
  void validate() const;
};

/// Frequency at which the record's spectrum is evaluated: f, or the
/// effective frequency for RECOOL records. Hz.
double conversion_frequency(const HeatingRecord& record);

/// Single-mode inverse of the heating law, (V/m)^2/Hz.
double to_field_psd(const HeatingRecord& record);

struct RegularizedPoint {
  std::string label;
  double distance = 0.0;   // m
  double omega_s_e = 0.0;  // V^2/m^2, omega = 2 pi f
  double f_s_e = 0.0;      // V^2/m^2, f * S_E
  std::string material;
  double temperature = 300.0;
};

RegularizedPoint regularize(const HeatingRecord& record);
std::vector<RegularizedPoint> regularize(std::span<const HeatingRecord> records);

struct TrendFit {
  double slope = 0.0;
  double intercept = 0.0;  // log10(omega S_E / (V^2/m^2)) at d = 1 m
  double slope_error = 0.0;
  std::size_t n_points = 0;
};

/// Least squares of log10(omega S_E) against log10(d). Needs >= 3 points
/// spanning a factor 3 in d.
TrendFit fit_distance_trend(std::span<const RegularizedPoint> points);

/// Throws ConfigError with the line number on malformed input.
std::vector<HeatingRecord> read_records(std::istream& in);
std::vector<HeatingRecord> load_records(const std::string& path);
void write_records(std::ostream& out, std::span<const HeatingRecord> records);

/// CSV: label,d_m,omega_S_E,material,temperature_K,f_S_E (full precision).
void write_points_csv(std::ostream& out, std::span<const RegularizedPoint> points);
std::vector<RegularizedPoint> read_points_csv(std::istream& in);

/// Log-log scatter with a d^-4 reference diagonal and, when given, the fitted
/// line.
void write_plot_svg(std::ostream& out, std::span<const RegularizedPoint> points,
                    const std::optional<TrendFit>& fit);

struct PlotFiles {
  std::string csv;
  std::string svg;
};

/// Writes <stem>.csv and <stem>.svg. Throws IoError naming the path.
PlotFiles emit_plot(std::span<const RegularizedPoint> points, const std::optional<TrendFit>& fit,
                    const std::string& stem);

}  // namespace iontrap::survey
