#include <doctest.h>

#include <cmath>
#include <sstream>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "iontrap/constants.hpp"
#include "iontrap/errors.hpp"
#include "iontrap/noise_bath.hpp"
#include "iontrap/numerics.hpp"

using namespace iontrap;
using namespace iontrap::noise;
using constants::kDebye;
using constants::kTwoPi;

namespace {

DipoleBath bath_a10_fixed() { return DipoleBath::with_a(6e19, kDebye, 1e-2, 1e10, 10.0); }

// 2 * integral_0^inf phi(t) cos(2 pi f t) dt, split at the zeros of the cosine.
double cosine_transform(const RelaxingDipole& d, double f) {
  using Q = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double w = kTwoPi * f;
  const double t_end = 60.0 / d.gamma;
  const double period = w > 0.0 ? kTwoPi / w : t_end;
  const double step = std::min(period, t_end / 20.0);
  double sum = 0.0;
  for (double t = 0.0; t < t_end; t += step)
    sum += Q::integrate([&](double s) { return dipole_autocorr(d, s) * std::cos(w * s); }, t,
                        std::min(t + step, t_end), 0, 1e-14);
  return 2.0 * sum;
}

}  // namespace

TEST_SUITE("noise-bath") {
  TEST_CASE("dipole autocorrelation") {
    const auto d = RelaxingDipole::make(kDebye, 1e3);
    CHECK(dipole_autocorr(d, 0.0) == doctest::Approx(kDebye * kDebye).epsilon(1e-15));
    CHECK(dipole_autocorr(d, 1e-3) == doctest::Approx(kDebye * kDebye / std::exp(1.0)).epsilon(1e-15));
    CHECK(dipole_autocorr(d, 2e-3) == doctest::Approx(1.505808104792494e-60).epsilon(1e-12));
    CHECK_THROWS_AS(RelaxingDipole::make(0.0, 1.0), InvalidArgument);
    CHECK_THROWS_AS(RelaxingDipole::make(kDebye, 0.0), InvalidArgument);
  }

  TEST_CASE("dipole spectrum: peak, half width, area") {
    const auto d = RelaxingDipole::make(kDebye, 2.5e4);
    const double mu2 = kDebye * kDebye;
    CHECK(dipole_psd(d, 0.0) == doctest::Approx(2 * mu2 / d.gamma).epsilon(1e-15));
    CHECK(dipole_psd(d, d.gamma / kTwoPi) == doctest::Approx(mu2 / d.gamma).epsilon(1e-15));
    auto integrand = [&](double f) { return dipole_psd(d, f) / mu2; };
    const double area = boost::math::quadrature::exp_sinh<double>().integrate(integrand);
    CHECK(area == doctest::Approx(0.5).epsilon(1e-6));
  }

  TEST_CASE("transform pair consistency") {
    const auto d = RelaxingDipole::make(kDebye, 3e3);
    for (double f : log_grid(1.0, 1e5, 11)) {
      const double numeric = cosine_transform(d, f);
      CHECK(numeric == doctest::Approx(dipole_psd(d, f)).epsilon(1e-4));
    }
  }

  TEST_CASE("ensemble spectrum: closed form and quadrature") {
    const auto bath = preset_wide_band();
    CHECK(bath.a_norm == doctest::Approx(27.631021115928547).epsilon(1e-14));
    const auto closed = ensemble_psd_mu(bath, 1e6, Provenance::kClosedForm);
    const auto quad = ensemble_psd_mu(bath, 1e6, Provenance::kQuadrature);
    CHECK(quad.value == doctest::Approx(closed.value).epsilon(0.02));
    // Reference values of the same integral from an independent scipy oracle.
    CHECK(quad.value == doctest::Approx(1.536567985052383e-64).epsilon(1e-9));
    CHECK(ensemble_psd_mu(bath, 1e3, Provenance::kQuadrature).value ==
          doctest::Approx(1.537180687307818e-61).epsilon(1e-9));
    CHECK(ensemble_psd_mu(bath, 1e5, Provenance::kClosedForm).value ==
          doctest::Approx(10.0 * ensemble_psd_mu(bath, 1e6, Provenance::kClosedForm).value).epsilon(1e-15));
    // Roll-off below the closed form close to Gamma_max / 2 pi.
    const double f_hi = 0.5 * bath.gamma_max / kTwoPi;
    CHECK(ensemble_psd_mu(bath, f_hi, Provenance::kQuadrature).value <
          ensemble_psd_mu(bath, f_hi, Provenance::kClosedForm).value);
    CHECK_FALSE(ensemble_psd_mu(bath, f_hi, Provenance::kClosedForm).in_validity_band);
    CHECK(closed.in_validity_band);
    CHECK_THROWS_AS(ensemble_psd_mu(bath, 0.0, Provenance::kClosedForm), InvalidArgument);
  }

  TEST_CASE("1/f slope in the band") {
    const auto bath = preset_wide_band();
    const auto band = validity_band(bath);
    const auto f = log_grid(100.0 * band.lo, band.hi / 100.0, 25);
    const auto s = field_spectrum(bath, 240e-6, f, Provenance::kQuadrature);
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < f.size(); ++i) {
      CHECK(s.s_e[i] > 0.0);
      lx.push_back(std::log10(f[i]));
      ly.push_back(std::log10(s.s_e[i]));
    }
    CHECK(numerics::fit_line(lx, ly).slope == doctest::Approx(-1.0).epsilon(0.02));
  }

  TEST_CASE("planar closed form") {
    const auto bath = bath_a10_fixed();
    CHECK(field_psd_plane(bath, 240e-6, 1e6) == doctest::Approx(1.0212393916267816e-09).epsilon(1e-12));
    CHECK(field_psd_plane(bath, 480e-6, 1e6) ==
          doctest::Approx(field_psd_plane(bath, 240e-6, 1e6) / 16.0).epsilon(1e-15));
    auto half_mu = bath;
    half_mu.mu *= 0.5;
    CHECK(field_psd_plane(half_mu, 240e-6, 1e6) ==
          doctest::Approx(field_psd_plane(bath, 240e-6, 1e6) / 4.0).epsilon(1e-15));
    CHECK(field_psd_plane(preset_wide_band(), 240e-6, 1e6) == doctest::Approx(2.821788719445763e-09).epsilon(1e-12));
  }

  TEST_CASE("numeric surface integral") {
    const auto bath = preset_wide_band();
    const auto a = field_psd_numeric(bath, 240e-6, 1e6);
    const auto b = field_psd_numeric(bath, 240e-6, 1e6, 500 * 240e-6);
    CHECK(std::abs(a.value / b.value - 1.0) < 1e-3);
    CHECK(a.ratio == doctest::Approx(0.5).epsilon(1e-5));
    const auto other = field_psd_numeric(bath_a10_fixed(), 1e-4, 3e3);
    CHECK(other.ratio == doctest::Approx(a.ratio).epsilon(1e-9));
    CHECK(field_psd_plane(bath, 240e-6, 1e6, PlaneMode::kSurfaceIntegral) ==
          doctest::Approx(0.5 * field_psd_plane(bath, 240e-6, 1e6)).epsilon(1e-12));
    CHECK_THROWS_AS(field_psd_numeric(bath, 240e-6, 1e6, 4 * 240e-6), NumericalError);

    std::vector<double> lx, ly;
    for (double d : log_grid(1e-4, 1e-3, 7)) {
      lx.push_back(std::log10(d));
      ly.push_back(std::log10(field_psd_numeric(bath, d, 1e6).value));
    }
    CHECK(numerics::fit_line(lx, ly).slope == doctest::Approx(-4.0).epsilon(0.005));
  }

  TEST_CASE("Monte Carlo agrees with the surface integral and is seeded") {
    const auto bath = preset_wide_band();
    MonteCarloOptions o;
    o.realizations = 300;
    o.mean_dipoles = 5e4;
    o.seed = 42;
    o.threads = 1;
    const auto a = field_psd_monte_carlo(bath, 240e-6, 1e6, o);
    const auto ref = field_psd_numeric(bath, 240e-6, 1e6).value;
    CHECK(std::abs(a.mean - ref) < 4.0 * a.standard_error);
    o.threads = 3;
    const auto b = field_psd_monte_carlo(bath, 240e-6, 1e6, o);
    CHECK(a.mean == b.mean);
    CHECK(a.standard_error == b.standard_error);
  }

  TEST_CASE("inverse estimators") {
    const auto bath = bath_a10_fixed();
    const double d = 240e-6, f = 1e6;
    const double fs = f * field_psd_plane(bath, d, f);
    CHECK(invert_surface_density(fs, d, bath.a_norm, bath.mu) == doctest::Approx(bath.n_s).epsilon(1e-12));
    CHECK(invert_surface_density(fs, d, bath.a_norm, 4.0 * bath.mu) ==
          doctest::Approx(bath.n_s / 16.0).epsilon(1e-12));

    CHECK(adsorbate_coverage(3e18, 3e18).theta == doctest::Approx(1.0));
    CHECK(adsorbate_coverage(0.0).theta == 0.0);
    CHECK(adsorbate_coverage(2e19, 1e19).exceeds_monolayer);
    const auto theta = adsorbate_coverage(6e19 / 16.0).theta;
    CHECK(theta == doctest::Approx(0.6).epsilon(1e-12));

    CHECK(tls_layer_thickness(6e19, 5e27) == doctest::Approx(1.2e-8).epsilon(1e-14));
    CHECK(tls_layer_thickness(6e19, 1e28) == doctest::Approx(0.6e-8).epsilon(1e-14));
    CHECK(tls_layer_thickness(0.0, 5e27) == 0.0);
    CHECK_THROWS_AS(tls_layer_thickness(6e19, 0.0), InvalidArgument);
  }

  TEST_CASE("bath construction") {
    CHECK_THROWS_AS(DipoleBath::make(6e19, kDebye, 1e3, 1e2), InvalidArgument);
    CHECK_THROWS_AS(DipoleBath::make(0.0, kDebye, 1e-2, 1e10), InvalidArgument);
    const auto u = DipoleBath::make(6e19, kDebye, 1e-2, 1e10, Normalization::kUnitNormalized);
    CHECK(u.a_norm == doctest::Approx(1.0 / std::log(1e12)).epsilon(1e-14));
    CHECK(preset_a10().a_norm == doctest::Approx(10.0).epsilon(1e-12));
    CHECK_THROWS_AS(preset("nope"), InvalidArgument);
  }

  TEST_CASE("spectrum CSV states its convention") {
    const auto s = field_spectrum(preset_wide_band(), 240e-6, log_grid(1e3, 1e6, 4), Provenance::kClosedForm);
    std::ostringstream out;
    write_spectrum_csv(out, s);
    const auto text = out.str();
    CHECK(text.rfind("#", 0) == 0);
    CHECK(text.find("f_Hz,S_E,provenance") != std::string::npos);
    const auto g = log_grid(1.0, 1e4, 5);
    CHECK(g.front() == 1.0);
    CHECK(g.back() == doctest::Approx(1e4).epsilon(1e-15));
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
  }
}
