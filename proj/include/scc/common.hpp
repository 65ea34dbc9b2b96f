// Shared value types and helpers for the scc lab: dense matrices, seeded
// random streams, error types and the worker-count knob.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace scc {

using Rng = std::mt19937_64;

/// Independent deterministic stream `stream` derived from a run seed.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

// Stream ids. Keeping them disjoint lets one feature (dropout, mixup, jitter)
// be toggled without perturbing the draws of another.
namespace stream {
inline constexpr std::uint64_t kCenters = 1;
inline constexpr std::uint64_t kSamples = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kVerify = 4;
inline constexpr std::uint64_t kInit = 10;
inline constexpr std::uint64_t kShuffle = 11;
inline constexpr std::uint64_t kDropout = 12;
inline constexpr std::uint64_t kMixup = 13;
inline constexpr std::uint64_t kJitter = 14;
inline constexpr std::uint64_t kExtract = 15;
inline constexpr std::uint64_t kSplit = 16;
}  // namespace stream

class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class InsufficientSamples : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// Worker cap from SCC_LAB_THREADS, bounded by the hardware.
inline unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SCC_LAB_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return std::min<unsigned>(hw, static_cast<unsigned>(v));
  }
  return hw;
}

/// Runs fn(i) for i in [0, n) over up to worker_count() threads. Each index is
/// handled by exactly one worker, so results that only write slot i are
/// independent of the schedule.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  unsigned workers = std::min<std::size_t>(worker_count(), std::max<std::size_t>(n, 1));
  if (workers <= 1 || n < 64) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace scc
