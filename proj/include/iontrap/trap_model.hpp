#pragma once

// Analytic electrostatics of planar rectangular-electrode traps in the
// gapless-plane approximation: every electrode is a rectangle in y = 0 and the
// rest of the plane is grounded. Potentials come from the solid angle each
// rectangle subtends at the evaluation point.

#include <array>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace iontrap::trap {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class ElectrodeRole { kRf, kDc, kGround };

std::string_view to_string(ElectrodeRole role);
ElectrodeRole parse_role(std::string_view text);

struct Interval {
  double min = 0.0;
  double max = 0.0;

  double width() const { return max - min; }
  double center() const { return 0.5 * (min + max); }
};

struct Electrode {
  std::string id;
  ElectrodeRole role = ElectrodeRole::kDc;
  Interval x_range;  // m
  Interval z_range;  // m
};

struct VoltageBounds {
  double min = -10.0;  // V
  double max = 15.0;   // V
};

/// Electrode geometry plus drive. Construction validates geometry (finite,
/// non-degenerate, non-overlapping rectangles with unique ids), rf_omega > 0,
/// and that every DC voltage targets a DC electrode and lies within bounds.
class TrapLayout {
 public:
  TrapLayout(std::vector<Electrode> electrodes, double rf_amplitude, double rf_omega,
             std::map<std::string, double> dc_voltages, VoltageBounds bounds = {});

  const std::vector<Electrode>& electrodes() const { return electrodes_; }
  double rf_amplitude() const { return rf_amplitude_; }
  double rf_omega() const { return rf_omega_; }
  const std::map<std::string, double>& dc_voltages() const { return dc_voltages_; }
  VoltageBounds dc_bounds() const { return bounds_; }

  /// Throws InvalidArgument for an unknown id.
  const Electrode& electrode(std::string_view id) const;
  bool has_rf() const;
  /// Voltage assigned to a DC electrode; 0 when unassigned.
  double dc_voltage(std::string_view id) const;
  std::vector<std::string> dc_electrode_ids() const;

  TrapLayout with_dc_voltages(std::map<std::string, double> dc_voltages) const;
  TrapLayout with_rf(double rf_amplitude, double rf_omega) const;
  /// All lengths multiplied by k.
  TrapLayout scaled(double k) const;
  /// Rigid in-plane translation.
  TrapLayout translated(double dx, double dz) const;

 private:
  std::vector<Electrode> electrodes_;
  double rf_amplitude_;
  double rf_omega_;
  std::map<std::string, double> dc_voltages_;
  VoltageBounds bounds_;
};

struct IonSpecies {
  double mass = 0.0;    // kg
  double charge = 0.0;  // C

  /// Validates mass > 0 and charge != 0.
  static IonSpecies make(double mass, double charge);
  /// Singly charged 40Ca+.
  static IonSpecies calcium40();
};

/// Normal modes of the trap. Index 0 is the mode closest to X, 1 closest to Y
/// (the two radial modes) and 2 the axial (Z) mode.
struct ModeSet {
  Vec3 center = Vec3::Zero();
  std::array<double, 3> frequencies{};  // Hz
  std::array<Vec3, 3> axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  /// Angle between Y and the radial principal axis nearest to Y.
  double tilt_deg = 0.0;
  std::array<double, 3> mathieu_q{};
  std::array<double, 3> mathieu_a{};
  /// Largest angle between matched principal axes of the RF and static
  /// quadrupoles.
  double rf_dc_misalignment_deg = 0.0;
  /// Same tilt measure applied to the RF quadrupole alone.
  double rf_tilt_deg = 0.0;
  /// All |q| below the edge of the lowest stability region.
  bool mathieu_stable = true;
};

inline constexpr double kMathieuQLimit = 0.908;

enum class Phase { kRfOnly, kDcOnly };

/// Fraction of an electrode's voltage seen at `point` (solid angle / 2 pi).
/// Throws InvalidArgument for point.y() <= 0.
double patch_potential(const Electrode& electrode, const Vec3& point);

/// Analytic gradient of patch_potential, 1/m.
Vec3 patch_gradient(const Electrode& electrode, const Vec3& point);

/// Superposed potential. RF_ONLY applies rf_amplitude to RF electrodes; DC_ONLY
/// applies the DC voltage map. Volts.
double total_potential(const TrapLayout& layout, Phase phase, const Vec3& point);
Vec3 total_gradient(const TrapLayout& layout, Phase phase, const Vec3& point);

/// Hessian by central differences of an analytic gradient.
Mat3 hessian_from_gradient(const std::function<Vec3(const Vec3&)>& gradient, const Vec3& point,
                           double step);

struct SearchBox {
  Interval x;
  Interval y;
  Interval z;
};

struct RfNullResult {
  Vec3 point = Vec3::Zero();
  double gradient_norm = 0.0;   // |grad V_RF| at point, V/m
  /// Smallest |grad V_RF| among points displaced 100 um along +-X and +Y.
  double reference_gradient_norm = 0.0;
  SearchBox box;
};

/// Locates the RF null: coarse grid seed over the search box followed by a
/// damped Newton solve of grad V_RF = 0. Throws NumericalError (with the box)
/// when no interior null exists.
RfNullResult find_rf_null(const TrapLayout& layout);
Vec3 rf_null(const TrapLayout& layout);

/// e^2 |grad V_RF|^2 / (4 m Omega^2), joules.
double pseudopotential(const TrapLayout& layout, const IonSpecies& species, const Vec3& point);

/// Potential source for the secular-mode pipeline. Both gradients are in V/m
/// with the RF gradient at full amplitude.
struct FieldModel {
  std::function<Vec3(const Vec3&)> rf_gradient;
  std::function<Vec3(const Vec3&)> dc_gradient;
  double rf_omega = 0.0;
  Vec3 seed = Vec3::Zero();
  /// Length scale for finite-difference steps (the null height for layouts).
  double length_scale = 1.0;
  /// Step for RF Hessians as a fraction of length_scale.
  double rf_hessian_step = 1e-6;
};

FieldModel make_field_model(const TrapLayout& layout);

/// Finds the minimum of pseudopotential + q V_DC, diagonalizes its
/// finite-difference Hessian and derives frequencies, axes, tilt, and Mathieu
/// parameters. Throws NumericalError naming the axis when any curvature is
/// non-positive.
ModeSet secular_modes(const FieldModel& fields, const IonSpecies& species);
ModeSet secular_modes(const TrapLayout& layout, const IonSpecies& species);

/// -grad of one electrode's patch potential, (V/m) per volt.
Vec3 field_per_volt(const TrapLayout& layout, std::string_view electrode_id, const Vec3& point);

struct FrequencyTargets {
  double fx = 1.2e6;  // Hz
  double fy = 1.4e6;
  double fz = 0.4e6;
};

struct DcFitOptions {
  /// Penalize static-quadrupole axes that differ from the RF quadrupole axes.
  bool align_with_rf = true;
  /// Rescale the RF amplitude so the mean radial pseudopotential frequency
  /// matches the targets (sum rule f_ps^2 = (fx^2 + fy^2 + fz^2) / 2).
  bool scale_rf_amplitude = true;
  /// Tikhonov weight on voltages in units of 10 V.
  double regularization = 1e-3;
  int max_evaluations = 4000;
};

struct DcFitResult {
  TrapLayout layout;
  ModeSet modes;
  double residual_norm = 0.0;
  bool converged = false;
};

/// Bounded least-squares search over every DC electrode voltage for a set that
/// produces the target secular frequencies with the ion held at the RF null.
DcFitResult fit_dc_voltages(const TrapLayout& layout, const IonSpecies& species,
                            const FrequencyTargets& targets, const DcFitOptions& options = {});

}  // namespace iontrap::trap
