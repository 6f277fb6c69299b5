#include <doctest.h>

#include <cmath>
#include <random>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/trap_model.hpp"
#include "test_support.hpp"

using namespace iontrap;
using namespace iontrap::trap;

namespace {

Electrode rect(double x0, double x1, double z0, double z1) {
  return Electrode{"e", ElectrodeRole::kDc, {x0, x1}, {z0, z1}};
}

// Floquet exponent of u'' + (a - 2q cos 2t) u = 0 from the monodromy matrix
// over one period, integrated with classical RK4.
double floquet_beta(double a, double q) {
  const int n = 20000;
  const double h = constants::kPi / n;
  double trace = 0.0;
  for (int col = 0; col < 2; ++col) {
    double u = col == 0 ? 1.0 : 0.0, v = col == 0 ? 0.0 : 1.0, t = 0.0;
    const auto acc = [&](double tt, double uu) { return -(a - 2.0 * q * std::cos(2.0 * tt)) * uu; };
    for (int i = 0; i < n; ++i) {
      const double k1u = v, k1v = acc(t, u);
      const double k2u = v + 0.5 * h * k1v, k2v = acc(t + 0.5 * h, u + 0.5 * h * k1u);
      const double k3u = v + 0.5 * h * k2v, k3v = acc(t + 0.5 * h, u + 0.5 * h * k2u);
      const double k4u = v + h * k3v, k4v = acc(t + h, u + h * k3u);
      u += h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
      v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
      t += h;
    }
    trace += col == 0 ? u : v;
  }
  return std::acos(0.5 * trace) / constants::kPi;
}

// Linear quadrupole with curvatures injected directly, centred at (0, y0, 0).
FieldModel ideal_quadrupole(double kappa_rf, Vec3 kappa_dc, double omega) {
  const double y0 = 1e-4;
  FieldModel f;
  f.rf_gradient = [=](const Vec3& p) { return Vec3(kappa_rf * p.x(), -kappa_rf * (p.y() - y0), 0.0); };
  f.dc_gradient = [=](const Vec3& p) {
    return Vec3(kappa_dc.x() * p.x(), kappa_dc.y() * (p.y() - y0), kappa_dc.z() * p.z());
  };
  f.rf_omega = omega;
  f.seed = Vec3(1e-6, y0 + 2e-6, -1e-6);
  f.length_scale = y0;
  return f;
}

}  // namespace

TEST_SUITE("trap-model") {
  TEST_CASE("patch potential limits and symmetry") {
    CHECK(patch_potential(rect(-10, 10, -10, 10), Vec3(0, 1e-6, 0)) == doctest::Approx(1.0).epsilon(1e-6));
    const auto small = rect(-1e-3, 1e-3, -2e-3, 2e-3);
    const double y = 1e6;
    CHECK(patch_potential(small, Vec3(0, y, 0)) ==
          doctest::Approx(small.x_range.width() * small.z_range.width() * y / (2 * constants::kPi * y * y * y))
              .epsilon(1e-9));
    const auto c = rect(-2e-4, 2e-4, -5e-4, 5e-4);
    const Vec3 p(7e-5, 1.3e-4, 1.9e-4);
    CHECK(patch_potential(c, p) == patch_potential(c, Vec3(-p.x(), p.y(), p.z())));
    CHECK(patch_potential(c, p) == patch_potential(c, Vec3(p.x(), p.y(), -p.z())));
    CHECK_THROWS_AS(patch_potential(c, Vec3(0, 0, 0)), InvalidArgument);
    CHECK_THROWS_AS(patch_potential(c, Vec3(0, -1e-6, 0)), InvalidArgument);
  }

  TEST_CASE("boundary behaviour near the plane") {
    const auto e = rect(0.0, 4e-4, -1e-3, 1e-3);
    const double y = 1e-4 * e.x_range.width();
    CHECK(patch_potential(e, Vec3(2e-4, y, 0)) > 0.999);
    CHECK(patch_potential(e, Vec3(-2e-4, y, 0)) < 1e-3);
  }

  TEST_CASE("Laplace property") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ux(-6e-4, 6e-4), uy(2e-5, 5e-4);
    const auto e = rect(-1e-4, 3e-4, -2e-4, 4e-4);
    for (int i = 0; i < 20; ++i) {
      const Vec3 p(ux(rng), uy(rng), ux(rng));
      const auto grad = [&](const Vec3& q) { return patch_gradient(e, q); };
      const Mat3 h = hessian_from_gradient(grad, p, 1e-7 * p.y());
      CHECK(std::abs(h.trace()) < 1e-4 * h.norm());
    }
  }

  TEST_CASE("analytic gradient matches finite differences of the potential") {
    const auto e = rect(-1e-4, 3e-4, -2e-4, 4e-4);
    const Vec3 p(1.1e-4, 1.7e-4, -0.4e-4);
    const Vec3 g = patch_gradient(e, p);
    const double h = 1e-9;
    for (int i = 0; i < 3; ++i) {
      Vec3 dp = Vec3::Zero();
      dp(i) = h;
      const double fd = (patch_potential(e, p + dp) - patch_potential(e, p - dp)) / (2 * h);
      CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6).scale(g.norm()));
    }
  }

  TEST_CASE("superposition and linearity") {
    const auto layout = testing::reference_layout();
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uv(-10.0, 15.0);
    std::map<std::string, double> v1, v2, v12;
    for (const auto& id : layout.dc_electrode_ids()) {
      v1[id] = 0.4 * uv(rng);
      v2[id] = 0.4 * uv(rng);
      v12[id] = v1[id] + v2[id];
    }
    const auto with = [&](const std::map<std::string, double>& v) {
      return TrapLayout(layout.electrodes(), layout.rf_amplitude(), layout.rf_omega(), v);
    };
    const Vec3 p(-3e-5, 2.1e-4, 5e-5);
    const double a = total_potential(with(v1), Phase::kDcOnly, p);
    const double b = total_potential(with(v2), Phase::kDcOnly, p);
    CHECK(total_potential(with(v12), Phase::kDcOnly, p) == doctest::Approx(a + b).epsilon(1e-12));
    CHECK(total_potential(with({}), Phase::kDcOnly, p) == 0.0);
    TrapLayout doubled(layout.electrodes(), 2 * layout.rf_amplitude(), layout.rf_omega(), {});
    CHECK(total_potential(doubled, Phase::kRfOnly, p) ==
          doctest::Approx(2 * total_potential(layout, Phase::kRfOnly, p)).epsilon(1e-14));
  }

  TEST_CASE("single electrode layout reduces to voltage times patch potential") {
    std::vector<Electrode> e{Electrode{"a", ElectrodeRole::kDc, {-1e-4, 1e-4}, {-1e-4, 1e-4}}};
    TrapLayout layout(e, 0.0, 1e8, {{"a", 3.5}});
    const Vec3 p(2e-5, 1e-4, -3e-5);
    CHECK(total_potential(layout, Phase::kDcOnly, p) == doctest::Approx(3.5 * patch_potential(e[0], p)));
  }

  TEST_CASE("layout validation") {
    std::vector<Electrode> overlap{Electrode{"a", ElectrodeRole::kDc, {0, 2e-4}, {0, 1e-4}},
                                   Electrode{"b", ElectrodeRole::kDc, {1e-4, 3e-4}, {0, 1e-4}}};
    CHECK_THROWS_AS(TrapLayout(overlap, 0.0, 1e8, {}), InvalidArgument);
    std::vector<Electrode> one{Electrode{"a", ElectrodeRole::kDc, {0, 2e-4}, {0, 1e-4}}};
    CHECK_THROWS_AS(TrapLayout(one, 0.0, 1e8, {{"nope", 1.0}}), InvalidArgument);
    CHECK_THROWS_AS(TrapLayout(one, 0.0, 1e8, {{"a", 20.0}}), InvalidArgument);
    CHECK_THROWS_AS(TrapLayout(one, 0.0, 0.0, {}), InvalidArgument);
    CHECK_THROWS_AS(IonSpecies::make(0.0, 1.0), InvalidArgument);
    CHECK_THROWS_AS(IonSpecies::make(1e-26, 0.0), InvalidArgument);
  }

  TEST_CASE("field per volt sums to zero over an all-covering plane") {
    // Centre tile plus four tiles covering a square of half-width `big`; the
    // missing outer plane leaves a residual field of about 1/big per volt.
    const double big = 1e4;
    std::vector<Electrode> tiles{
        Electrode{"c", ElectrodeRole::kDc, {-1e-4, 1e-4}, {-1e-4, 1e-4}},
        Electrode{"w", ElectrodeRole::kDc, {-big, -1e-4}, {-big, big}},
        Electrode{"e", ElectrodeRole::kDc, {1e-4, big}, {-big, big}},
        Electrode{"s", ElectrodeRole::kDc, {-1e-4, 1e-4}, {-big, -1e-4}},
        Electrode{"n", ElectrodeRole::kDc, {-1e-4, 1e-4}, {1e-4, big}},
    };
    TrapLayout layout(tiles, 0.0, 1e8, {});
    const Vec3 p(3e-5, 2e-4, -2e-5);
    Vec3 sum = Vec3::Zero();
    for (const auto& t : tiles) sum += field_per_volt(layout, t.id, p);
    CHECK(sum.norm() < 2.0 / big);
    CHECK(field_per_volt(layout, "c", p).norm() > 1e3);
    CHECK_THROWS_AS(field_per_volt(layout, "missing", p), InvalidArgument);
  }

  TEST_CASE("field per volt scales as 1/k") {
    const auto a = testing::five_wire(1.0);
    const auto b = testing::five_wire(3.0);
    const Vec3 p(2e-5, 1.5e-4, 1e-5);
    const Vec3 fa = field_per_volt(a, "dc_center", p);
    const Vec3 fb = field_per_volt(b, "dc_center", 3.0 * p);
    for (int i = 0; i < 3; ++i) CHECK(fb(i) == doctest::Approx(fa(i) / 3.0).epsilon(1e-12).scale(fa.norm()));
  }

  TEST_CASE("RF null: symmetry, scaling and depth") {
    const auto sym = testing::five_wire();
    const auto n = find_rf_null(sym);
    CHECK(std::abs(n.point.x()) < 1e-12);
    CHECK(n.gradient_norm < 1e-3 * n.reference_gradient_norm);
    const auto scaled = testing::five_wire(2.0);
    CHECK(rf_null(scaled).y() == doctest::Approx(2.0 * n.point.y()).epsilon(1e-9));
    CHECK(pseudopotential(sym, IonSpecies::calcium40(), n.point) <
          1e-20 * pseudopotential(sym, IonSpecies::calcium40(), n.point + Vec3(0, 1e-4, 0)));

    std::vector<Electrode> no_rf{Electrode{"a", ElectrodeRole::kDc, {0, 2e-4}, {0, 1e-4}}};
    CHECK_THROWS(rf_null(TrapLayout(no_rf, 0.0, 1e8, {})));
  }

  TEST_CASE("pseudopotential scaling with amplitude and drive") {
    const auto base = testing::five_wire();
    const auto ca = IonSpecies::calcium40();
    const Vec3 p(3e-5, 1.9e-4, 0.0);
    const double v = pseudopotential(base, ca, p);
    TrapLayout amp(base.electrodes(), 2 * base.rf_amplitude(), base.rf_omega(), base.dc_voltages());
    TrapLayout drive(base.electrodes(), base.rf_amplitude(), 2 * base.rf_omega(), base.dc_voltages());
    CHECK(pseudopotential(amp, ca, p) == doctest::Approx(4 * v).epsilon(1e-12));
    CHECK(pseudopotential(drive, ca, p) == doctest::Approx(v / 4).epsilon(1e-12));
  }

  TEST_CASE("secular modes: orthonormal axes and translation invariance") {
    const auto ca = IonSpecies::calcium40();
    const auto a = secular_modes(testing::five_wire(), ca);
    const auto b = secular_modes(testing::five_wire(1.0, 3.7e-4, -2.2e-4), ca);
    for (int i = 0; i < 3; ++i) {
      CHECK(a.axes[i].norm() == doctest::Approx(1.0).epsilon(1e-12));
      for (int j = i + 1; j < 3; ++j) CHECK(std::abs(a.axes[i].dot(a.axes[j])) < 1e-9);
      CHECK(b.frequencies[i] == doctest::Approx(a.frequencies[i]).epsilon(1e-6));
      CHECK(a.frequencies[i] > 0.0);
    }
    CHECK(b.center.x() == doctest::Approx(a.center.x() + 3.7e-4).epsilon(1e-9));
  }

  TEST_CASE("Mathieu consistency for an ideal quadrupole") {
    const auto ca = IonSpecies::calcium40();
    const double omega = constants::kTwoPi * 15e6;
    for (double q_target : {0.05, 0.15, 0.2, 0.29}) {
      const double kappa = q_target * ca.mass * omega * omega / (2 * ca.charge);
      const auto fields = ideal_quadrupole(kappa, Vec3(0, 0, 1e3), omega);
      const auto m = secular_modes(fields, ca);
      CHECK(std::abs(m.mathieu_q[0]) == doctest::Approx(q_target).epsilon(1e-4));
      CHECK(m.mathieu_a[0] == doctest::Approx(0.0).scale(1.0));
      const double secular = omega / 2 * std::sqrt(q_target * q_target / 2) / constants::kTwoPi;
      CHECK(m.frequencies[0] == doctest::Approx(secular).epsilon(0.02));
      // The pseudopotential result drifts from the exact exponent as q^3;
      // 1% holds up to q ~ 0.2 and 1.7% remains at q = 0.29.
      const double floquet = floquet_beta(0.0, q_target) * omega / 2 / constants::kTwoPi;
      CHECK(m.frequencies[0] == doctest::Approx(floquet).epsilon(q_target <= 0.2 ? 0.01 : 0.02));
      CHECK(m.mathieu_stable);
    }
  }

  TEST_CASE("Mathieu consistency with a static curvature") {
    const auto ca = IonSpecies::calcium40();
    const double omega = constants::kTwoPi * 15e6;
    const double q = 0.2, a = 0.004;
    const double kappa = q * ca.mass * omega * omega / (2 * ca.charge);
    const double kappa_dc = a * ca.mass * omega * omega / (4 * ca.charge);
    const auto m = secular_modes(ideal_quadrupole(kappa, Vec3(kappa_dc, kappa_dc, 1e3), omega), ca);
    CHECK(m.mathieu_a[0] == doctest::Approx(a).epsilon(1e-4));
    const double floquet = floquet_beta(a, q) * omega / 2 / constants::kTwoPi;
    CHECK(m.frequencies[0] == doctest::Approx(floquet).epsilon(0.01));
  }

  TEST_CASE("unstable configuration names the axis") {
    const auto ca = IonSpecies::calcium40();
    const auto fields = ideal_quadrupole(1e7, Vec3(0, 0, -1e3), constants::kTwoPi * 15e6);
    try {
      secular_modes(fields, ca);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("z (axial)") != std::string::npos);
    }
  }

  TEST_CASE("reference layout: null height and stable modes") {
    const auto layout = testing::reference_layout();
    const auto n = find_rf_null(layout);
    CHECK(n.point.y() == doctest::Approx(240e-6).epsilon(0.15));
    const auto m = secular_modes(layout, IonSpecies::calcium40());
    CHECK(m.mathieu_stable);
    CHECK(m.frequencies[0] == doctest::Approx(1.2e6).epsilon(0.2));
    CHECK(m.frequencies[1] == doctest::Approx(1.4e6).epsilon(0.2));
    CHECK(m.frequencies[2] == doctest::Approx(0.4e6).epsilon(0.2));
    for (const auto& [id, v] : layout.dc_voltages()) {
      CHECK(v >= -10.0);
      CHECK(v <= 15.0);
    }
  }
}
