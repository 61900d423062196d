#ifndef PAIRADJUST_COMMON_HPP
#define PAIRADJUST_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pairadjust {

// Bad inputs or contract violations detectable from data/config.
// Mapped to exit code 2 at the CLI boundary.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Transport or provider-side failures (live LLM calls, missing --live flag).
// Mapped to exit code 3 at the CLI boundary.
class ProviderError : public std::runtime_error {
public:
  explicit ProviderError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a 64-bit, used for cache keys and artifact/config digests.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a64_hex(std::string_view s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(s)));
  return std::string(buf);
}

// splitmix64 finalizer; decorrelates derived seeds (master seed + salt).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt));
}

// Neumaier-compensated accumulator. Summation order is the caller's;
// estimator sums switch to it above kCompensationThreshold units.
class CompensatedSum {
public:
  void add(double v) {
    double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline constexpr std::size_t kCompensationThreshold = 100000;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Two-sided p-value for a z statistic.
inline double wald_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Shortest-ish decimal rendering for prompts and CSV cells ("34", "0.122").
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::string(buf);
}

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

}  // namespace pairadjust

#endif  // PAIRADJUST_COMMON_HPP
