#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sparseid {

inline constexpr double kDefaultSvdTol = 1e-6;  // absolute singular-value cutoff
inline constexpr double kHammingTau = 1e-5;     // binarization threshold for pattern comparison

/// Raised when an iterative linear-algebra kernel fails to converge.
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a matrix exponential or trajectory overflows double range.
class OverflowFailure : public NumericalFailure {
 public:
  explicit OverflowFailure(const std::string& what) : NumericalFailure(what) {}
};

/// Raised when the adaptive step-size controller underflows (stiffness).
class StepSizeUnderflow : public NumericalFailure {
 public:
  explicit StepSizeUnderflow(const std::string& what) : NumericalFailure(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }
inline double infinity() { return std::numeric_limits<double>::infinity(); }

}  // namespace sparseid
