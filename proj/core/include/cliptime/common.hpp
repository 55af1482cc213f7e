#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace cliptime {

/// Dense row-major matrix used for every activation, gradient and parameter.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

/// Error categories. Each maps onto one CLI exit code.
enum class ErrorKind {
  kConfig,     // bad configuration or usage (exit 1)
  kInput,      // precondition violated by a caller-supplied value (exit 1)
  kShape,      // tensor dimension mismatch (exit 3)
  kRange,      // value outside its admissible interval (exit 1)
  kData,       // missing or malformed dataset / checkpoint (exit 2)
  kIo,         // filesystem failure (exit 2)
  kNumerical,  // non-finite values during optimization (exit 3)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CLIPTIME_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

CLIPTIME_DEFINE_ERROR(ConfigError, kConfig)
CLIPTIME_DEFINE_ERROR(InputError, kInput)
CLIPTIME_DEFINE_ERROR(ShapeError, kShape)
CLIPTIME_DEFINE_ERROR(RangeError, kRange)
CLIPTIME_DEFINE_ERROR(DataError, kData)
CLIPTIME_DEFINE_ERROR(IoError, kIo)
CLIPTIME_DEFINE_ERROR(NumericalError, kNumerical)

#undef CLIPTIME_DEFINE_ERROR

/// Process exit code for an error category: 1 usage/config, 2 data, 3 runtime.
int exit_code_for(ErrorKind kind) noexcept;

/// SplitMix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::uint64_t stream) noexcept {
  return mix_seed(base ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

/// Small deterministic generator. Distribution code is written out here
/// instead of using <random> distributions, whose output is
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; the tiny bias is irrelevant here.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller.
  double normal() noexcept;

 private:
  std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by Rng.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace cliptime
