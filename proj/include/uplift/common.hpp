#pragma once

// Shared primitives: error taxonomy, stable hashing, seeded randomness,
// calendar dates and a small parallel-map helper.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace uplift {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these to exit codes: ConfigError -> 1 (validation),
// DataError -> 2, TrainingError -> 3.
// ---------------------------------------------------------------------------

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hashing. FNV-1a 64-bit with the standard constants; the one hash used for
// train/validation splits, content addressing and seed derivation, so every
// result is reproducible from the on-disk inputs alone.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = kFnvOffsetBasis) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf, 16);
}

// splitmix64 finalizer; decorrelates sequential seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a root seed and a purpose tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return mix64(fnv1a64(tag) ^ mix64(seed));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t index) {
  return mix64(derive_seed(seed, tag) ^ mix64(index ^ 0x5851f42d4c957f2dull));
}

// Top 53 bits of a hash mapped to [0, 1).
inline double unit_from_bits(std::uint64_t h) {
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

// ---------------------------------------------------------------------------
// Rng: mt19937_64 with hand-specified real mappings. The engine sequence is
// pinned by the standard and the mappings below avoid distribution classes,
// whose output is implementation-defined.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return unit_from_bits(next_u64()); }

  // Standard normal via Box-Muller; caches the second deviate.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // [0, n); modulo mapping (bias is negligible for n << 2^64).
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Fisher-Yates with an explicit index mapping (std::shuffle is
// implementation-defined).
template <typename T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.uniform_index(i)]);
  }
}

// ---------------------------------------------------------------------------
// Calendar dates, ISO-8601 text form YYYY-MM-DD.
// ---------------------------------------------------------------------------

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  // Days since 1970-01-01 (proleptic Gregorian).
  long serial() const {
    int y = year;
    const unsigned m = static_cast<unsigned>(month);
    const unsigned d = static_cast<unsigned>(day);
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
  }

  static Date from_serial(long z) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m),
                static_cast<int>(d)};
  }

  Date plus_days(long n) const { return from_serial(serial() + n); }

  friend long operator-(const Date& a, const Date& b) {
    return a.serial() - b.serial();
  }
  friend bool operator==(const Date& a, const Date& b) {
    return a.year == b.year && a.month == b.month && a.day == b.day;
  }
  friend bool operator<(const Date& a, const Date& b) {
    return a.serial() < b.serial();
  }
  friend bool operator<=(const Date& a, const Date& b) {
    return a.serial() <= b.serial();
  }

  std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return std::string(buf);
  }

  static Date parse(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
      throw DataError("invalid date '" + std::string(s) +
                      "', expected YYYY-MM-DD");
    }
    auto num = [&](std::size_t pos, std::size_t len) {
      int v = 0;
      for (std::size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9') {
          throw DataError("invalid date '" + std::string(s) + "'");
        }
        v = v * 10 + (s[i] - '0');
      }
      return v;
    };
    Date d{num(0, 4), num(5, 2), num(8, 2)};
    if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) {
      throw DataError("invalid date '" + std::string(s) + "'");
    }
    return d;
  }
};

// ---------------------------------------------------------------------------
// Numeric formatting and small statistics helpers.
// ---------------------------------------------------------------------------

// Round-trip-safe decimal form of a double.
inline std::string dtos(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Unbiased sample variance; requires n >= 2.
inline double sample_variance(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Two-sided 97.5% Student-t quantile; exact table through df=30, then a
// Cornish-Fisher expansion (error < 1e-3 there).
inline double student_t_975(int df) {
  static const double table[30] = {
      12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (df < 1) throw ConfigError("t quantile requires df >= 1");
  if (df <= 30) return table[df - 1];
  const double z = 1.959963984540054;
  return z + (z * z * z + z) / (4.0 * df) +
         (5.0 * std::pow(z, 5) + 16.0 * z * z * z + 3.0 * z) /
             (96.0 * df * df);
}

// ---------------------------------------------------------------------------
// parallel_for: splits [0, n) into contiguous chunks across `workers`
// threads. Output written through index-addressed slots stays deterministic
// regardless of the worker count.
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& body) {
  if (n == 0) return;
  const std::size_t w =
      std::max<std::size_t>(1, std::min<std::size_t>(workers, n));
  if (w == 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(w);
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t t = 0; t < w; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back([lo, hi, &body] { body(lo, hi); });
  }
  for (auto& th : threads) th.join();
}

}  // namespace uplift
