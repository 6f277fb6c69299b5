#include "iontrap/numerics.hpp"

#include <cmath>

#include "iontrap/errors.hpp"

namespace iontrap::numerics {

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("fit_line: size mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw InvalidArgument("fit_line: need at least two points");

  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw InvalidArgument("fit_line: degenerate abscissa");

  LineFit fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    ss_res += r * r;
  }
  fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  if (n > 2) {
    const double s2 = ss_res / static_cast<double>(n - 2);
    fit.slope_error = std::sqrt(s2 / sxx);
    fit.intercept_error = std::sqrt(s2 * (1.0 / static_cast<double>(n) + mx * mx / sxx));
  }
  return fit;
}

OriginFit fit_through_origin(std::span<const double> x, std::span<const double> y,
                             std::span<const double> sigma) {
  if (x.size() != y.size()) throw InvalidArgument("fit_through_origin: size mismatch");
  if (!sigma.empty() && sigma.size() != x.size())
    throw InvalidArgument("fit_through_origin: sigma size mismatch");
  const std::size_t n = x.size();
  if (n < 1) throw InvalidArgument("fit_through_origin: no points");

  double swxx = 0.0, swxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = sigma.empty() ? 1.0 : 1.0 / (sigma[i] * sigma[i]);
    swxx += w * x[i] * x[i];
    swxy += w * x[i] * y[i];
  }
  if (swxx == 0.0) throw InvalidArgument("fit_through_origin: degenerate abscissa");

  OriginFit fit;
  fit.n = n;
  fit.slope = swxy / swxx;
  if (!sigma.empty()) {
    fit.slope_error = std::sqrt(1.0 / swxx);
  } else if (n > 1) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - fit.slope * x[i];
      ss += r * r;
    }
    fit.slope_error = std::sqrt(ss / static_cast<double>(n - 1) / swxx);
  }
  return fit;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace iontrap::numerics
