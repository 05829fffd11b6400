#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparseid/common.hpp"
#include "sparseid/rng.hpp"

namespace sparseid {

enum class EnsembleKind {
  SparseContinuous,
  FixedZerosPerRow,
  NoZeroRows,
  NoZeroColumns,
};

inline const char* to_string(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::SparseContinuous: return "sparse_continuous";
    case EnsembleKind::FixedZerosPerRow: return "fixed_zeros_per_row";
    case EnsembleKind::NoZeroRows: return "no_zero_rows";
    case EnsembleKind::NoZeroColumns: return "no_zero_columns";
  }
  return "unknown";
}

inline EnsembleKind ensemble_kind_from_string(const std::string& s) {
  if (s == "sparse_continuous" || s == "sparse") return EnsembleKind::SparseContinuous;
  if (s == "fixed_zeros_per_row" || s == "fixedzeros") return EnsembleKind::FixedZerosPerRow;
  if (s == "no_zero_rows" || s == "nozerorows") return EnsembleKind::NoZeroRows;
  if (s == "no_zero_columns" || s == "nozerocols") return EnsembleKind::NoZeroColumns;
  throw std::invalid_argument("unknown ensemble kind: " + s);
}

struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::SparseContinuous;
  int dim = 1;
  double sparsity = 0.0;  // probability of a zero entry
  std::uint64_t seed = 0;
  int max_attempts = 100;  // rejection cap for the constrained kinds

  void validate() const {
    if (dim < 1) throw std::invalid_argument("EnsembleSpec: dim must be >= 1");
    if (!(sparsity >= 0.0 && sparsity <= 1.0))
      throw std::invalid_argument("EnsembleSpec: sparsity must lie in [0,1]");
    if (max_attempts < 1) throw std::invalid_argument("EnsembleSpec: max_attempts must be >= 1");
  }
};

struct SystemMatrix {
  Eigen::MatrixXd entries;
  EnsembleSpec spec;
  std::int64_t draw_index = 0;

  int dim() const { return static_cast<int>(entries.rows()); }
};

struct InitialCondition {
  Eigen::VectorXd values;
  std::uint64_t seed = 0;
};

namespace detail {

// Stream tags keep the matrix, attempt, and x0 streams disjoint.
inline constexpr std::uint64_t kMatrixStream = 0x11;
inline constexpr std::uint64_t kSphereStream = 0x22;

inline Eigen::MatrixXd sparse_continuous_entries(int n, double p, CounterRng& rng) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double g = rng.gaussian();
      // Masked entries are exactly 0.0 so downstream zero-pattern logic is exact.
      a(i, j) = rng.bernoulli(p) ? 0.0 : g;
    }
  }
  return a;
}

inline bool has_zero_row(const Eigen::MatrixXd& a) {
  for (int i = 0; i < a.rows(); ++i)
    if ((a.row(i).array() == 0.0).all()) return true;
  return false;
}

inline bool has_zero_column(const Eigen::MatrixXd& a) {
  for (int j = 0; j < a.cols(); ++j)
    if ((a.col(j).array() == 0.0).all()) return true;
  return false;
}

}  // namespace detail

/// Entrywise G*B with G ~ N(0,1) and B ~ Ber(1-p), all independent.
/// Deterministic in (spec.seed, draw_index).
inline SystemMatrix draw_sparse_continuous(const EnsembleSpec& spec, std::int64_t draw_index = 0) {
  spec.validate();
  if (spec.kind != EnsembleKind::SparseContinuous)
    throw std::invalid_argument("draw_sparse_continuous: wrong ensemble kind");
  CounterRng rng(derive_key({spec.seed, detail::kMatrixStream, static_cast<std::uint64_t>(draw_index)}));
  return SystemMatrix{detail::sparse_continuous_entries(spec.dim, spec.sparsity, rng), spec, draw_index};
}

/// Every row has exactly floor(n*p) zeros at uniform positions; nonzeros iid N(0,1).
inline SystemMatrix draw_fixed_zeros_per_row(const EnsembleSpec& spec, std::int64_t draw_index = 0) {
  spec.validate();
  if (spec.kind != EnsembleKind::FixedZerosPerRow)
    throw std::invalid_argument("draw_fixed_zeros_per_row: wrong ensemble kind");
  const int n = spec.dim;
  const int zeros_per_row = static_cast<int>(std::floor(n * spec.sparsity));
  CounterRng rng(derive_key({spec.seed, detail::kMatrixStream, static_cast<std::uint64_t>(draw_index)}));

  Eigen::MatrixXd a(n, n);
  std::vector<int> cols(n);
  for (int i = 0; i < n; ++i) {
    std::iota(cols.begin(), cols.end(), 0);
    // Partial Fisher-Yates: the first zeros_per_row slots become the zero positions.
    for (int k = 0; k < zeros_per_row; ++k) {
      const int j = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - k)));
      std::swap(cols[k], cols[j]);
    }
    for (int j = 0; j < n; ++j) a(i, j) = rng.gaussian();
    for (int k = 0; k < zeros_per_row; ++k) a(i, cols[k]) = 0.0;
  }
  return SystemMatrix{std::move(a), spec, draw_index};
}

struct ConstrainedDraw {
  std::optional<SystemMatrix> matrix;  // empty = rejected after max_attempts
  int attempts = 0;

  bool rejected() const { return !matrix.has_value(); }
};

/// Rejection-sample sparse-continuous draws until no zero row (or column,
/// depending on kind) remains, up to spec.max_attempts. A rejected cell is the
/// caller's signal that the (n,p) combination admits no valid matrix.
inline ConstrainedDraw draw_constrained(const EnsembleSpec& spec, std::int64_t draw_index = 0) {
  spec.validate();
  if (spec.kind != EnsembleKind::NoZeroRows && spec.kind != EnsembleKind::NoZeroColumns)
    throw std::invalid_argument("draw_constrained: wrong ensemble kind");
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    CounterRng rng(derive_key({spec.seed, detail::kMatrixStream,
                               static_cast<std::uint64_t>(draw_index),
                               static_cast<std::uint64_t>(attempt)}));
    Eigen::MatrixXd a = detail::sparse_continuous_entries(spec.dim, spec.sparsity, rng);
    const bool bad = spec.kind == EnsembleKind::NoZeroRows ? detail::has_zero_row(a)
                                                           : detail::has_zero_column(a);
    if (!bad) return ConstrainedDraw{SystemMatrix{std::move(a), spec, draw_index}, attempt + 1};
  }
  return ConstrainedDraw{std::nullopt, spec.max_attempts};
}

/// Dispatch on spec.kind. Rejection surfaces as std::nullopt.
inline std::optional<SystemMatrix> draw_system(const EnsembleSpec& spec, std::int64_t draw_index = 0) {
  switch (spec.kind) {
    case EnsembleKind::SparseContinuous: return draw_sparse_continuous(spec, draw_index);
    case EnsembleKind::FixedZerosPerRow: return draw_fixed_zeros_per_row(spec, draw_index);
    case EnsembleKind::NoZeroRows:
    case EnsembleKind::NoZeroColumns: return draw_constrained(spec, draw_index).matrix;
  }
  throw std::invalid_argument("draw_system: unknown kind");
}

/// Uniform draw from the unit sphere S^{n-1}: normalized iid Gaussian vector.
inline InitialCondition draw_unit_sphere(int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("draw_unit_sphere: dim must be >= 1");
  CounterRng rng(derive_key({seed, detail::kSphereStream}));
  Eigen::VectorXd v(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
    norm = v.norm();
  } while (norm < 1e-12);
  v /= norm;
  return InitialCondition{std::move(v), seed};
}

}  // namespace sparseid
