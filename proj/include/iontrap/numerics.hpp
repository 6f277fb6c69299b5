#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <random>
#include <span>
#include <thread>
#include <vector>

namespace iontrap::numerics {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Random engine for the stream keyed by (seed, index). Streams depend only on
/// the key, so results do not depend on which thread runs which index.
inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t key = mix64(seed ^ mix64(index + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

/// Number of worker threads to use when the caller passes 0.
inline unsigned default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1u : n;
}

/// Runs fn(i) for i in [0, n) on up to `threads` threads with a static block
/// partition. fn must only write to per-index storage.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = default_threads();
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  // One slot per block; the lowest failing block's exception is rethrown.
  const std::size_t chunk = (n + threads - 1) / threads;
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([begin, end, &fn, &err = errors[t]] {
        try {
          for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
          err = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_error = 0.0;
  double intercept_error = 0.0;
  double r_squared = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope * x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

struct OriginFit {
  double slope = 0.0;
  double slope_error = 0.0;
  std::size_t n = 0;
};

/// Weighted least squares y = slope * x. With empty sigma the residual scatter
/// sets the error; otherwise the errors are taken as known standard deviations.
OriginFit fit_through_origin(std::span<const double> x, std::span<const double> y,
                             std::span<const double> sigma = {});

double mean(std::span<const double> v);

/// Sample standard deviation (n - 1 denominator).
double stddev(std::span<const double> v);

}  // namespace iontrap::numerics
