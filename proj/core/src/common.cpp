#include "cliptime/common.hpp"

#include <cmath>
#include <numbers>

namespace cliptime {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInput:
    case ErrorKind::kRange:
      return 1;
    case ErrorKind::kData:
    case ErrorKind::kIo:
      return 2;
    case ErrorKind::kShape:
    case ErrorKind::kNumerical:
      return 3;
  }
  return 3;
}

double Rng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace cliptime
