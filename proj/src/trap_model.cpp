#include "iontrap/trap_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"

namespace iontrap::trap {

namespace {

using constants::kPi;
using constants::kTwoPi;

constexpr double kRadToDeg = 180.0 / kPi;

// Solid-angle corner term for a rectangle corner at in-plane offset (u, v)
// from a point at height h.
double corner(double u, double v, double h) {
  const double r = std::sqrt(u * u + v * v + h * h);
  return std::atan2(u * v, h * r);
}

struct CornerGradient {
  double du, dv, dh;
};

CornerGradient corner_gradient(double u, double v, double h) {
  const double u2h2 = u * u + h * h;
  const double v2h2 = v * v + h * h;
  const double r2 = u * u + v * v + h * h;
  const double r = std::sqrt(r2);
  return {v * h / (u2h2 * r), u * h / (v2h2 * r), -u * v * (r2 + h * h) / (r * u2h2 * v2h2)};
}

void require_above_plane(const Vec3& point) {
  if (!(point.y() > 0.0)) {
    std::ostringstream os;
    os << "potential undefined at y = " << point.y() << " m (requires y > 0)";
    throw InvalidArgument(os.str());
  }
}

bool valid_interval(const Interval& i) {
  return std::isfinite(i.min) && std::isfinite(i.max) && i.min < i.max;
}

double overlap(const Interval& a, const Interval& b) {
  return std::min(a.max, b.max) - std::max(a.min, b.min);
}

double electrode_voltage(const TrapLayout& layout, Phase phase, const Electrode& e) {
  switch (e.role) {
    case ElectrodeRole::kRf:
      return phase == Phase::kRfOnly ? layout.rf_amplitude() : 0.0;
    case ElectrodeRole::kDc:
      return phase == Phase::kDcOnly ? layout.dc_voltage(e.id) : 0.0;
    case ElectrodeRole::kGround:
      return 0.0;
  }
  return 0.0;
}

// Orders eigenvector columns as (closest to X, closest to Y, closest to Z).
std::array<int, 3> assign_axes(const Mat3& vectors) {
  int axial = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(vectors(2, i)) > std::abs(vectors(2, axial))) axial = i;
  int a = (axial + 1) % 3;
  int b = (axial + 2) % 3;
  if (std::abs(vectors(0, b)) > std::abs(vectors(0, a))) std::swap(a, b);
  return {a, b, axial};
}

double angle_from_y_deg(const Vec3& axis) {
  return std::acos(std::min(1.0, std::abs(axis.y()) / axis.norm())) * kRadToDeg;
}

// Tilt of the radial RF quadrupole axis nearest Y. The RF axis with the
// smallest curvature magnitude is the axial one.
double rf_tilt(const Mat3& h_rf) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(0.5 * (h_rf + h_rf.transpose()));
  const Eigen::Vector3d lam = eig.eigenvalues();
  int axial = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(lam(i)) < std::abs(lam(axial))) axial = i;
  double best = 90.0;
  for (int i = 0; i < 3; ++i) {
    if (i == axial) continue;
    best = std::min(best, angle_from_y_deg(eig.eigenvectors().col(i)));
  }
  return best;
}

double misalignment_deg(const Mat3& h_rf, const Mat3& h_dc) {
  if (h_dc.norm() <= 1e-12 * h_rf.norm()) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat3> rf(0.5 * (h_rf + h_rf.transpose()));
  Eigen::SelfAdjointEigenSolver<Mat3> dc(0.5 * (h_dc + h_dc.transpose()));
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    double best_cos = 0.0;
    for (int j = 0; j < 3; ++j)
      best_cos = std::max(best_cos, std::abs(rf.eigenvectors().col(i).dot(dc.eigenvectors().col(j))));
    worst = std::max(worst, std::acos(std::min(1.0, best_cos)) * kRadToDeg);
  }
  return worst;
}

const char* axis_name(int slot) {
  static constexpr const char* kNames[] = {"x (horizontal radial)", "y (vertical radial)",
                                           "z (axial)"};
  return kNames[slot];
}

}  // namespace

std::string_view to_string(ElectrodeRole role) {
  switch (role) {
    case ElectrodeRole::kRf:
      return "RF";
    case ElectrodeRole::kDc:
      return "DC";
    case ElectrodeRole::kGround:
      return "GROUND";
  }
  return "?";
}

ElectrodeRole parse_role(std::string_view text) {
  if (text == "RF") return ElectrodeRole::kRf;
  if (text == "DC") return ElectrodeRole::kDc;
  if (text == "GROUND") return ElectrodeRole::kGround;
  throw InvalidArgument("unknown electrode role '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// TrapLayout

TrapLayout::TrapLayout(std::vector<Electrode> electrodes, double rf_amplitude, double rf_omega,
                       std::map<std::string, double> dc_voltages, VoltageBounds bounds)
    : electrodes_(std::move(electrodes)),
      rf_amplitude_(rf_amplitude),
      rf_omega_(rf_omega),
      dc_voltages_(std::move(dc_voltages)),
      bounds_(bounds) {
  if (!(rf_omega_ > 0.0) || !std::isfinite(rf_omega_))
    throw InvalidArgument("rf_omega must be positive");
  if (!std::isfinite(rf_amplitude_)) throw InvalidArgument("rf_amplitude must be finite");
  if (!(bounds_.min < bounds_.max)) throw InvalidArgument("DC bounds must satisfy min < max");

  std::set<std::string> ids;
  double extent = 0.0;
  for (const auto& e : electrodes_) {
    if (!valid_interval(e.x_range) || !valid_interval(e.z_range))
      throw InvalidArgument("electrode '" + e.id + "' has a degenerate or non-finite range");
    if (!ids.insert(e.id).second) throw InvalidArgument("duplicate electrode id '" + e.id + "'");
    extent = std::max({extent, std::abs(e.x_range.min), std::abs(e.x_range.max),
                       std::abs(e.z_range.min), std::abs(e.z_range.max)});
  }
  const double tol = 1e-12 * extent;
  for (std::size_t i = 0; i < electrodes_.size(); ++i) {
    for (std::size_t j = i + 1; j < electrodes_.size(); ++j) {
      const auto& a = electrodes_[i];
      const auto& b = electrodes_[j];
      if (overlap(a.x_range, b.x_range) > tol && overlap(a.z_range, b.z_range) > tol)
        throw InvalidArgument("electrodes '" + a.id + "' and '" + b.id + "' overlap");
    }
  }

  for (const auto& [id, volts] : dc_voltages_) {
    const auto it = std::find_if(electrodes_.begin(), electrodes_.end(),
                                 [&](const Electrode& e) { return e.id == id; });
    if (it == electrodes_.end())
      throw InvalidArgument("dc_voltages names unknown electrode '" + id + "'");
    if (it->role != ElectrodeRole::kDc)
      throw InvalidArgument("dc_voltages assigns a voltage to non-DC electrode '" + id + "'");
    if (!(volts >= bounds_.min && volts <= bounds_.max)) {
      std::ostringstream os;
      os << "DC voltage " << volts << " V on '" << id << "' outside [" << bounds_.min << ", "
         << bounds_.max << "] V";
      throw InvalidArgument(os.str());
    }
  }
}

const Electrode& TrapLayout::electrode(std::string_view id) const {
  for (const auto& e : electrodes_)
    if (e.id == id) return e;
  throw InvalidArgument("unknown electrode id '" + std::string(id) + "'");
}

bool TrapLayout::has_rf() const {
  return std::any_of(electrodes_.begin(), electrodes_.end(),
                     [](const Electrode& e) { return e.role == ElectrodeRole::kRf; });
}

double TrapLayout::dc_voltage(std::string_view id) const {
  const auto it = dc_voltages_.find(std::string(id));
  return it == dc_voltages_.end() ? 0.0 : it->second;
}

std::vector<std::string> TrapLayout::dc_electrode_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : electrodes_)
    if (e.role == ElectrodeRole::kDc) ids.push_back(e.id);
  return ids;
}

TrapLayout TrapLayout::with_dc_voltages(std::map<std::string, double> dc_voltages) const {
  return TrapLayout(electrodes_, rf_amplitude_, rf_omega_, std::move(dc_voltages), bounds_);
}

TrapLayout TrapLayout::with_rf(double rf_amplitude, double rf_omega) const {
  return TrapLayout(electrodes_, rf_amplitude, rf_omega, dc_voltages_, bounds_);
}

TrapLayout TrapLayout::scaled(double k) const {
  if (!(k > 0.0)) throw InvalidArgument("scale factor must be positive");
  auto out = electrodes_;
  for (auto& e : out) {
    e.x_range = {k * e.x_range.min, k * e.x_range.max};
    e.z_range = {k * e.z_range.min, k * e.z_range.max};
  }
  return TrapLayout(std::move(out), rf_amplitude_, rf_omega_, dc_voltages_, bounds_);
}

TrapLayout TrapLayout::translated(double dx, double dz) const {
  auto out = electrodes_;
  for (auto& e : out) {
    e.x_range = {e.x_range.min + dx, e.x_range.max + dx};
    e.z_range = {e.z_range.min + dz, e.z_range.max + dz};
  }
  return TrapLayout(std::move(out), rf_amplitude_, rf_omega_, dc_voltages_, bounds_);
}

IonSpecies IonSpecies::make(double mass, double charge) {
  if (!(mass > 0.0)) throw InvalidArgument("ion mass must be positive");
  if (charge == 0.0 || !std::isfinite(charge)) throw InvalidArgument("ion charge must be non-zero");
  return IonSpecies{mass, charge};
}

IonSpecies IonSpecies::calcium40() {
  using namespace constants;
  return make((kCalcium40MassU - kElectronMassU) * kAtomicMassUnit, kElementaryCharge);
}

// ---------------------------------------------------------------------------
// Potentials

double patch_potential(const Electrode& e, const Vec3& p) {
  require_above_plane(p);
  const double h = p.y();
  const double u1 = e.x_range.min - p.x();
  const double u2 = e.x_range.max - p.x();
  const double v1 = e.z_range.min - p.z();
  const double v2 = e.z_range.max - p.z();
  const double upper = corner(u2, v2, h) - corner(u1, v2, h);
  const double lower = corner(u2, v1, h) - corner(u1, v1, h);
  return (upper - lower) / kTwoPi;
}

Vec3 patch_gradient(const Electrode& e, const Vec3& p) {
  require_above_plane(p);
  const double h = p.y();
  const double us[2] = {e.x_range.min - p.x(), e.x_range.max - p.x()};
  const double vs[2] = {e.z_range.min - p.z(), e.z_range.max - p.z()};
  Vec3 g = Vec3::Zero();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double sign = (i == j) ? 1.0 : -1.0;
      const auto c = corner_gradient(us[i], vs[j], h);
      // u = X_corner - x and v = Z_corner - z, so d/dx = -d/du.
      g.x() -= sign * c.du;
      g.y() += sign * c.dh;
      g.z() -= sign * c.dv;
    }
  }
  return g / kTwoPi;
}

double total_potential(const TrapLayout& layout, Phase phase, const Vec3& point) {
  require_above_plane(point);
  double v = 0.0;
  for (const auto& e : layout.electrodes()) {
    const double volts = electrode_voltage(layout, phase, e);
    if (volts != 0.0) v += volts * patch_potential(e, point);
  }
  return v;
}

Vec3 total_gradient(const TrapLayout& layout, Phase phase, const Vec3& point) {
  require_above_plane(point);
  Vec3 g = Vec3::Zero();
  for (const auto& e : layout.electrodes()) {
    const double volts = electrode_voltage(layout, phase, e);
    if (volts != 0.0) g += volts * patch_gradient(e, point);
  }
  return g;
}

Mat3 hessian_from_gradient(const std::function<Vec3(const Vec3&)>& gradient, const Vec3& point,
                           double step) {
  Mat3 h;
  for (int i = 0; i < 3; ++i) {
    Vec3 d = Vec3::Zero();
    d(i) = step;
    h.col(i) = (gradient(point + d) - gradient(point - d)) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

// ---------------------------------------------------------------------------
// RF null

RfNullResult find_rf_null(const TrapLayout& layout) {
  if (!layout.has_rf()) throw InvalidArgument("layout has no RF electrode");

  std::vector<const Electrode*> rf;
  for (const auto& e : layout.electrodes())
    if (e.role == ElectrodeRole::kRf) rf.push_back(&e);

  SearchBox box;
  double narrow = std::numeric_limits<double>::infinity();
  box.x = rf.front()->x_range;
  box.z = rf.front()->z_range;
  Interval z_union = box.z;
  for (const auto* e : rf) {
    narrow = std::min(narrow, e->x_range.width());
    box.x = {std::min(box.x.min, e->x_range.min), std::max(box.x.max, e->x_range.max)};
    box.z = {std::max(box.z.min, e->z_range.min), std::min(box.z.max, e->z_range.max)};
    z_union = {std::min(z_union.min, e->z_range.min), std::max(z_union.max, e->z_range.max)};
  }
  if (!(box.z.min < box.z.max)) box.z = z_union;
  box.y = {0.1 * narrow, 3.0 * narrow};

  const auto grad = [&](const Vec3& p) {
    Vec3 g = Vec3::Zero();
    for (const auto* e : rf) g += patch_gradient(*e, p);
    return g;
  };

  const auto describe_box = [&] {
    std::ostringstream os;
    os << "x in [" << box.x.min << ", " << box.x.max << "] m, y in [" << box.y.min << ", "
       << box.y.max << "] m, z in [" << box.z.min << ", " << box.z.max << "] m";
    return os.str();
  };

  constexpr int kNx = 21, kNy = 15, kNz = 5;
  Vec3 best = Vec3::Zero();
  double best_norm = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kNz; ++k) {
    const double z = box.z.min + (k + 0.5) / kNz * box.z.width();
    for (int j = 0; j < kNy; ++j) {
      const double y = box.y.min + j / double(kNy - 1) * box.y.width();
      for (int i = 0; i < kNx; ++i) {
        const double x = box.x.min + i / double(kNx - 1) * box.x.width();
        const Vec3 p(x, y, z);
        const double n = grad(p).norm();
        if (n < best_norm) {
          best_norm = n;
          best = p;
        }
      }
    }
  }

  // Damped Newton on grad V = 0 with a backtracking line search on |grad V|.
  Vec3 p = best;
  Vec3 g = grad(p);
  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    const Mat3 j = hessian_from_gradient(grad, p, 1e-6 * p.y());
    const Vec3 step = -j.fullPivLu().solve(g);
    if (!step.allFinite()) break;
    double t = 1.0;
    Vec3 trial = p + t * step;
    while (t > 1e-8) {
      if (trial.y() > 0.01 * box.y.min) {
        const Vec3 gt = grad(trial);
        if (gt.norm() < g.norm() || (t * step).norm() < 1e-12 * p.y()) break;
      }
      t *= 0.5;
      trial = p + t * step;
    }
    if (t <= 1e-8) break;
    p = trial;
    g = grad(p);
    if ((t * step).norm() < 1e-13 * p.y()) {
      converged = true;
      break;
    }
  }

  const double pad = 1e-9 * box.y.max;
  const bool inside = p.x() >= box.x.min - pad && p.x() <= box.x.max + pad &&
                      p.y() >= box.y.min - pad && p.y() <= box.y.max + pad &&
                      p.z() >= box.z.min - pad && p.z() <= box.z.max + pad;

  RfNullResult result;
  result.point = p;
  result.box = box;
  result.gradient_norm = std::abs(layout.rf_amplitude()) * g.norm();
  const double d = 100.0 * constants::kMicrometer;
  double ref = std::numeric_limits<double>::infinity();
  for (const Vec3& off : {Vec3(d, 0, 0), Vec3(-d, 0, 0), Vec3(0, d, 0)})
    ref = std::min(ref, grad(p + off).norm());
  result.reference_gradient_norm = std::abs(layout.rf_amplitude()) * ref;

  if (!converged || !inside || !(g.norm() < 1e-3 * ref)) {
    std::ostringstream os;
    os << "no interior RF null found within search volume (" << describe_box()
       << "); best point (" << p.x() << ", " << p.y() << ", " << p.z() << ") m with |grad| "
       << g.norm() << " per volt";
    throw NumericalError(os.str());
  }
  return result;
}

Vec3 rf_null(const TrapLayout& layout) { return find_rf_null(layout).point; }

double pseudopotential(const TrapLayout& layout, const IonSpecies& species, const Vec3& point) {
  const Vec3 g = total_gradient(layout, Phase::kRfOnly, point);
  const double w = layout.rf_omega();
  return species.charge * species.charge * g.squaredNorm() / (4.0 * species.mass * w * w);
}

// ---------------------------------------------------------------------------
// Secular modes

FieldModel make_field_model(const TrapLayout& layout) {
  FieldModel f;
  f.rf_gradient = [layout](const Vec3& p) { return total_gradient(layout, Phase::kRfOnly, p); };
  f.dc_gradient = [layout](const Vec3& p) { return total_gradient(layout, Phase::kDcOnly, p); };
  f.rf_omega = layout.rf_omega();
  f.seed = rf_null(layout);
  f.length_scale = f.seed.y();
  return f;
}

ModeSet secular_modes(const FieldModel& fields, const IonSpecies& species) {
  if (!(fields.rf_omega > 0.0)) throw InvalidArgument("rf_omega must be positive");
  const double q = species.charge;
  const double m = species.mass;
  const double omega2 = fields.rf_omega * fields.rf_omega;
  const double k_ps = q * q / (2.0 * m * omega2);
  const double rf_step = fields.rf_hessian_step * fields.length_scale;
  const double step = 1e-3 * fields.length_scale;

  const auto rf_hessian = [&](const Vec3& p) {
    return hessian_from_gradient(fields.rf_gradient, p, rf_step);
  };
  const auto energy_gradient = [&](const Vec3& p) -> Vec3 {
    return k_ps * (rf_hessian(p) * fields.rf_gradient(p)) + q * fields.dc_gradient(p);
  };

  Vec3 p = fields.seed;
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    const Vec3 g = energy_gradient(p);
    const Mat3 h = hessian_from_gradient(energy_gradient, p, step);
    Eigen::LDLT<Mat3> ldlt(h);
    Vec3 delta;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0).all()) {
      delta = -ldlt.solve(g);
    } else {
      delta = -g / h.norm();
    }
    const double cap = 0.25 * fields.length_scale;
    if (delta.norm() > cap) delta *= cap / delta.norm();
    p += delta;
    if (p.y() <= 0.0) throw NumericalError("secular_modes: minimum search left the half-space y > 0");
    if (delta.norm() < 1e-10 * fields.length_scale) {
      converged = true;
      break;
    }
  }

  const Mat3 h = hessian_from_gradient(energy_gradient, p, step);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(h);
  const auto slots = assign_axes(eig.eigenvectors());

  ModeSet modes;
  modes.center = p;
  std::ostringstream unstable;
  for (int s = 0; s < 3; ++s) {
    const double lambda = eig.eigenvalues()(slots[s]);
    if (!(lambda > 0.0)) {
      unstable << (unstable.tellp() > 0 ? "; " : "") << axis_name(s) << " curvature " << lambda
               << " J/m^2";
    }
  }
  if (unstable.tellp() > 0)
    throw NumericalError("unstable configuration (saddle or maximum): " + unstable.str());
  if (!converged) throw NumericalError("secular_modes: minimum search did not converge");

  const Mat3 h_rf = rf_hessian(p);
  const Mat3 h_dc = hessian_from_gradient(fields.dc_gradient, p, rf_step);
  for (int s = 0; s < 3; ++s) {
    Vec3 axis = eig.eigenvectors().col(slots[s]);
    if (axis(s) < 0.0) axis = -axis;
    modes.axes[s] = axis;
    modes.frequencies[s] = std::sqrt(eig.eigenvalues()(slots[s]) / m) / kTwoPi;
    const double kappa_rf = axis.dot(h_rf * axis);
    const double kappa_dc = axis.dot(h_dc * axis);
    modes.mathieu_q[s] = 2.0 * q * kappa_rf / (m * omega2);
    modes.mathieu_a[s] = 4.0 * q * kappa_dc / (m * omega2);
  }
  modes.tilt_deg = angle_from_y_deg(modes.axes[1]);
  modes.rf_tilt_deg = rf_tilt(h_rf);
  modes.rf_dc_misalignment_deg = misalignment_deg(h_rf, h_dc);
  modes.mathieu_stable = std::all_of(modes.mathieu_q.begin(), modes.mathieu_q.end(),
                                     [](double v) { return std::abs(v) < kMathieuQLimit; });
  return modes;
}

ModeSet secular_modes(const TrapLayout& layout, const IonSpecies& species) {
  return secular_modes(make_field_model(layout), species);
}

Vec3 field_per_volt(const TrapLayout& layout, std::string_view electrode_id, const Vec3& point) {
  return -patch_gradient(layout.electrode(electrode_id), point);
}

// ---------------------------------------------------------------------------
// DC voltage search

namespace {

struct DcResidual : Eigen::DenseFunctor<double> {
  DcResidual(int inputs, int values) : Eigen::DenseFunctor<double>(inputs, values) {}

  std::vector<Mat3> hessians;
  std::vector<Vec3> gradients;
  Mat3 h_ps;
  Mat3 rf_axes;
  double charge = 0.0;
  double mass = 0.0;
  std::array<double, 3> targets{};
  double mid = 0.0;
  double half = 0.0;
  bool align = true;
  double regularization = 0.0;

  double voltage(double u) const { return mid + half * std::sin(u); }

  int operator()(const InputType& u, ValueType& r) const {
    Mat3 h_dc = Mat3::Zero();
    Vec3 g_dc = Vec3::Zero();
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      const double v = voltage(u(k));
      h_dc += v * hessians[k];
      g_dc += v * gradients[k];
    }
    const Mat3 h = h_ps + charge * h_dc;
    Eigen::SelfAdjointEigenSolver<Mat3> eig(h);
    const auto slots = assign_axes(eig.eigenvectors());
    for (int s = 0; s < 3; ++s) {
      const double lambda = eig.eigenvalues()(slots[s]);
      const double f = std::copysign(std::sqrt(std::abs(lambda) / mass), lambda) / kTwoPi;
      r(s) = (f - targets[s]) / targets[s];
    }
    // Static displacement of the ion away from the RF null, in units of 0.1 um.
    const double k_min = mass * std::pow(kTwoPi * std::min({targets[0], targets[1], targets[2]}), 2);
    const Vec3 shift = charge * g_dc / k_min;
    for (int i = 0; i < 3; ++i) r(3 + i) = shift(i) / 1e-7;
    // Off-diagonal static curvature in the RF principal frame.
    const double scale = mass * std::pow(kTwoPi * 0.1e6, 2);
    const Mat3 rot = rf_axes.transpose() * (charge * h_dc) * rf_axes;
    r(6) = align ? rot(0, 1) / scale : 0.0;
    r(7) = align ? rot(0, 2) / scale : 0.0;
    r(8) = align ? rot(1, 2) / scale : 0.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) r(9 + k) = regularization * voltage(u(k)) / 10.0;
    return 0;
  }
};

}  // namespace

DcFitResult fit_dc_voltages(const TrapLayout& input, const IonSpecies& species,
                            const FrequencyTargets& targets, const DcFitOptions& options) {
  if (!(targets.fx > 0 && targets.fy > 0 && targets.fz > 0))
    throw InvalidArgument("target frequencies must be positive");
  const auto ids = input.dc_electrode_ids();
  if (ids.empty()) throw InvalidArgument("layout has no DC electrodes");

  const Vec3 p0 = rf_null(input);
  const double rf_step = 1e-6 * p0.y();
  const auto unit_rf = [&](const Vec3& p) { return total_gradient(input, Phase::kRfOnly, p); };
  Mat3 h_rf = hessian_from_gradient(unit_rf, p0, rf_step);
  const double q = species.charge;
  const double m = species.mass;
  const double w2 = input.rf_omega() * input.rf_omega();

  TrapLayout layout = input;
  if (options.scale_rf_amplitude) {
    // Radial pseudopotential curvatures are the two largest eigenvalues of
    // k_ps * H_rf^2; scale the amplitude to satisfy the Laplace sum rule.
    Eigen::SelfAdjointEigenSolver<Mat3> eig(q * q / (2.0 * m * w2) * h_rf * h_rf);
    const double mean_radial = 0.5 * (eig.eigenvalues()(1) + eig.eigenvalues()(2));
    const double f_ps2 = mean_radial / m / (kTwoPi * kTwoPi);
    const double target_ps2 =
        0.5 * (targets.fx * targets.fx + targets.fy * targets.fy + targets.fz * targets.fz);
    const double amplitude = std::sqrt(target_ps2 / f_ps2) * std::abs(input.rf_amplitude());
    layout = input.with_rf(amplitude, input.rf_omega());
    h_rf *= amplitude / input.rf_amplitude();
  }

  const int n = static_cast<int>(ids.size());
  DcResidual fn(n, 9 + n);
  fn.charge = q;
  fn.mass = m;
  fn.targets = {targets.fx, targets.fy, targets.fz};
  const auto bounds = layout.dc_bounds();
  fn.mid = 0.5 * (bounds.max + bounds.min);
  fn.half = 0.5 * (bounds.max - bounds.min);
  fn.align = options.align_with_rf;
  fn.regularization = options.regularization;
  fn.h_ps = q * q / (2.0 * m * w2) * h_rf * h_rf;
  {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(h_rf);
    fn.rf_axes = eig.eigenvectors();
  }
  for (const auto& id : ids) {
    const Electrode& e = layout.electrode(id);
    const auto g = [&e](const Vec3& p) { return patch_gradient(e, p); };
    fn.gradients.push_back(g(p0));
    fn.hessians.push_back(hessian_from_gradient(g, p0, rf_step));
  }

  Eigen::VectorXd u(n);
  for (int k = 0; k < n; ++k)
    u(k) = std::asin(std::clamp((layout.dc_voltage(ids[k]) - fn.mid) / fn.half, -0.999, 0.999));

  Eigen::NumericalDiff<DcResidual> numdiff(fn);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<DcResidual>> lm(numdiff);
  lm.setMaxfev(options.max_evaluations);
  lm.setXtol(1e-10);
  lm.setFtol(1e-12);
  const auto status = lm.minimize(u);

  std::map<std::string, double> volts;
  for (int k = 0; k < n; ++k) volts[ids[k]] = fn.voltage(u(k));

  Eigen::VectorXd r(9 + n);
  fn(u, r);

  DcFitResult result{layout.with_dc_voltages(volts), ModeSet{}, r.norm(), false};
  result.modes = secular_modes(result.layout, species);
  const std::array<double, 3> goal{targets.fx, targets.fy, targets.fz};
  bool close = true;
  for (int s = 0; s < 3; ++s)
    close = close && std::abs(result.modes.frequencies[s] - goal[s]) < 0.01 * goal[s];
  result.converged = close && status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters;
  return result;
}

}  // namespace iontrap::trap
