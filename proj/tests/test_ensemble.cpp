#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "sparseid/ensemble.hpp"

using namespace sparseid;

namespace {

EnsembleSpec make_spec(EnsembleKind kind, int n, double p, std::uint64_t seed = 1) {
  EnsembleSpec s;
  s.kind = kind;
  s.dim = n;
  s.sparsity = p;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(SparseContinuous, FullSparsityGivesZeroMatrix) {
  const auto m = draw_sparse_continuous(make_spec(EnsembleKind::SparseContinuous, 4, 1.0));
  EXPECT_TRUE((m.entries.array() == 0.0).all());
}

TEST(SparseContinuous, ZeroSparsityGivesAllNonzero) {
  const auto m = draw_sparse_continuous(make_spec(EnsembleKind::SparseContinuous, 3, 0.0));
  EXPECT_TRUE((m.entries.array() != 0.0).all());
}

TEST(SparseContinuous, ZeroRateMatchesBernoulliMean) {
  const auto spec = make_spec(EnsembleKind::SparseContinuous, 2, 0.5, 77);
  const int draws = 100000;
  long zeros = 0;
  for (int i = 0; i < draws; ++i) {
    const auto m = draw_sparse_continuous(spec, i);
    zeros += (m.entries.array() == 0.0).count();
  }
  const double rate = static_cast<double>(zeros) / (4.0 * draws);
  EXPECT_NEAR(rate, 0.5, 0.01);
}

TEST(SparseContinuous, ZeroRatePropertyAcrossSparsities) {
  // Empirical zero rate within 3 binomial standard errors of p.
  const int draws = 4000;
  for (double p : {0.1, 0.35, 0.8}) {
    const auto spec = make_spec(EnsembleKind::SparseContinuous, 5, p, 31);
    long zeros = 0;
    for (int i = 0; i < draws; ++i)
      zeros += (draw_sparse_continuous(spec, i).entries.array() == 0.0).count();
    const double total = 25.0 * draws;
    const double rate = zeros / total;
    EXPECT_NEAR(rate, p, 3.0 * std::sqrt(p * (1.0 - p) / total)) << "p=" << p;
  }
}

TEST(SparseContinuous, MaskedEntriesAreExactZeros) {
  const auto spec = make_spec(EnsembleKind::SparseContinuous, 6, 0.6, 5);
  for (int i = 0; i < 50; ++i) {
    const auto m = draw_sparse_continuous(spec, i);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) {
        const double v = m.entries(r, c);
        EXPECT_TRUE(v == 0.0 || std::abs(v) > 1e-300);
      }
  }
}

TEST(SparseContinuous, DeterministicAcrossThreads) {
  const auto spec = make_spec(EnsembleKind::SparseContinuous, 8, 0.4, 123);
  const auto reference = draw_sparse_continuous(spec, 9);
  std::vector<Eigen::MatrixXd> results(6);
  std::vector<std::thread> pool;
  for (auto& out : results)
    pool.emplace_back([&spec, &out] { out = draw_sparse_continuous(spec, 9).entries; });
  for (auto& t : pool) t.join();
  for (const auto& m : results) EXPECT_TRUE((m.array() == reference.entries.array()).all());
}

TEST(SparseContinuous, DistinctDrawIndicesDiffer) {
  const auto spec = make_spec(EnsembleKind::SparseContinuous, 4, 0.2, 9);
  const auto a = draw_sparse_continuous(spec, 0);
  const auto b = draw_sparse_continuous(spec, 1);
  EXPECT_FALSE((a.entries.array() == b.entries.array()).all());
}

TEST(FixedZerosPerRow, NoZerosAtZeroSparsity) {
  const auto m = draw_fixed_zeros_per_row(make_spec(EnsembleKind::FixedZerosPerRow, 3, 0.0));
  EXPECT_TRUE((m.entries.array() != 0.0).all());
}

TEST(FixedZerosPerRow, FullSparsityGivesZeroMatrix) {
  const auto m = draw_fixed_zeros_per_row(make_spec(EnsembleKind::FixedZerosPerRow, 3, 1.0));
  EXPECT_TRUE((m.entries.array() == 0.0).all());
}

TEST(FixedZerosPerRow, ExactRowZeroCountsAndUniformMarginals) {
  const int n = 10;
  const auto spec = make_spec(EnsembleKind::FixedZerosPerRow, n, 0.5, 202);
  const int draws = 12000;  // marginal stderr ~0.005, comfortably inside the 2% band
  Eigen::MatrixXd zero_freq = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < draws; ++i) {
    const auto m = draw_fixed_zeros_per_row(spec, i);
    for (int r = 0; r < n; ++r) {
      int zeros = 0;
      for (int c = 0; c < n; ++c) {
        if (m.entries(r, c) == 0.0) {
          ++zeros;
          zero_freq(r, c) += 1.0;
        }
      }
      ASSERT_EQ(zeros, 5);  // floor(10 * 0.5), every draw
    }
  }
  zero_freq /= draws;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) EXPECT_NEAR(zero_freq(r, c), 0.5, 0.02);
}

TEST(Constrained, HighSparsitySmallSystemOftenRejects) {
  // At (n=3, p=0.9) a single attempt accepts with probability (1-0.9^3)^3,
  // about 0.02, so rejections must show up across draw indices even with the
  // 100-attempt cap.
  auto spec = make_spec(EnsembleKind::NoZeroRows, 3, 0.9, 404);
  int rejected = 0;
  for (int i = 0; i < 200; ++i) {
    const auto d = draw_constrained(spec, i);
    if (d.rejected()) ++rejected;
  }
  EXPECT_GE(rejected, 5);
}

TEST(Constrained, AcceptedDrawsSatisfyConstraint) {
  auto spec = make_spec(EnsembleKind::NoZeroRows, 4, 0.6, 11);
  int accepted = 0;
  for (int i = 0; i < 100; ++i) {
    const auto d = draw_constrained(spec, i);
    if (d.rejected()) continue;
    ++accepted;
    for (int r = 0; r < 4; ++r)
      EXPECT_FALSE((d.matrix->entries.row(r).array() == 0.0).all());
  }
  EXPECT_GT(accepted, 0);

  spec.kind = EnsembleKind::NoZeroColumns;
  for (int i = 0; i < 100; ++i) {
    const auto d = draw_constrained(spec, i);
    if (d.rejected()) continue;
    for (int c = 0; c < 4; ++c)
      EXPECT_FALSE((d.matrix->entries.col(c).array() == 0.0).all());
  }
}

TEST(Constrained, LowSparsityAcceptsFirstAttempt) {
  // P(some zero row) = 1 - (1 - 0.1^5)^5 ~ 5e-5 at n=5, p=0.1.
  const auto spec = make_spec(EnsembleKind::NoZeroRows, 5, 0.1, 7);
  for (int i = 0; i < 200; ++i) {
    const auto d = draw_constrained(spec, i);
    ASSERT_FALSE(d.rejected());
    EXPECT_EQ(d.attempts, 1);
  }
}

TEST(Constrained, ZeroSparsityAlwaysAccepted) {
  const auto spec = make_spec(EnsembleKind::NoZeroColumns, 3, 0.0, 8);
  for (int i = 0; i < 20; ++i) EXPECT_FALSE(draw_constrained(spec, i).rejected());
}

TEST(UnitSphere, ScalarCaseIsSign) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = draw_unit_sphere(1, seed);
    EXPECT_NEAR(std::abs(x.values(0)), 1.0, 1e-12);
  }
}

TEST(UnitSphere, UnitNormForAllDims) {
  for (int n : {2, 3, 10, 50}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto x = draw_unit_sphere(n, seed * 13 + n);
      EXPECT_NEAR(x.values.norm(), 1.0, 1e-12);
    }
  }
}

TEST(UnitSphere, CoordinateMeansVanish) {
  const int draws = 100000;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int i = 0; i < draws; ++i) mean += draw_unit_sphere(3, 1000 + i).values;
  mean /= draws;
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(mean(k), 0.0, 0.01);
}

TEST(EnsembleSpec, Validation) {
  EXPECT_THROW(draw_unit_sphere(0, 1), std::invalid_argument);
  EXPECT_THROW(draw_sparse_continuous(make_spec(EnsembleKind::SparseContinuous, 3, 1.5)),
               std::invalid_argument);
  EXPECT_THROW(draw_sparse_continuous(make_spec(EnsembleKind::SparseContinuous, 0, 0.5)),
               std::invalid_argument);
  EXPECT_THROW(draw_sparse_continuous(make_spec(EnsembleKind::FixedZerosPerRow, 3, 0.5)),
               std::invalid_argument);
}

TEST(EnsembleKindNames, RoundTrip) {
  for (EnsembleKind k : {EnsembleKind::SparseContinuous, EnsembleKind::FixedZerosPerRow,
                         EnsembleKind::NoZeroRows, EnsembleKind::NoZeroColumns})
    EXPECT_EQ(ensemble_kind_from_string(to_string(k)), k);
  EXPECT_THROW(ensemble_kind_from_string("bogus"), std::invalid_argument);
}
