#include <gtest/gtest.h>

#include <filesystem>

#include "sparseid/ensemble.hpp"
#include "sparseid/io.hpp"
#include "sparseid/spectral.hpp"

using namespace sparseid;

TEST(FmtDouble, ShortestRoundTrip) {
  EXPECT_EQ(fmt_double(0.1), "0.1");
  EXPECT_EQ(fmt_double(0.95), "0.95");
  EXPECT_EQ(fmt_double(1.0), "1");
  EXPECT_EQ(fmt_double(-0.5), "-0.5");
  EXPECT_EQ(fmt_double(quiet_nan()), "nan");
  EXPECT_EQ(fmt_double(infinity()), "inf");
  EXPECT_EQ(fmt_double(-infinity()), "-inf");
  // Round trip through parse for awkward values.
  for (double v : {1.0 / 3.0, 1e-300, 6.62607015e-34, 123456789.123456}) {
    EXPECT_EQ(parse_double(fmt_double(v)), v);
  }
}

TEST(SystemMatrixJson, RoundTripPreservesBits) {
  EnsembleSpec spec{EnsembleKind::NoZeroColumns, 4, 0.35, 88, 100};
  const auto drawn = draw_constrained(spec, 3);
  ASSERT_FALSE(drawn.rejected());
  const Json j = to_json(*drawn.matrix);
  const auto back = system_matrix_from_json(Json::parse(j.dump()));
  EXPECT_EQ(back.spec.kind, spec.kind);
  EXPECT_EQ(back.spec.dim, 4);
  EXPECT_EQ(back.spec.seed, 88u);
  EXPECT_EQ(back.draw_index, 3);
  EXPECT_TRUE((back.entries.array() == drawn.matrix->entries.array()).all());
}

TEST(SystemMatrixJson, RejectsBadEntryCount) {
  Json j{{"kind", "sparse_continuous"}, {"dim", 2},       {"p", 0.5},
         {"seed", 0},                   {"draw_index", 0}, {"entries", {1.0, 2.0, 3.0}}};
  EXPECT_THROW(system_matrix_from_json(j), IoError);
}

TEST(MatrixCsv, OneRowPerEntry) {
  Eigen::MatrixXd m(2, 2);
  m << 1, 0, -2.5, 4;
  EXPECT_EQ(matrix_to_csv(m), "i,j,value\n0,0,1\n0,1,0\n1,0,-2.5\n1,1,4\n");
}

TEST(TrajectoryCsv, HeaderAndShape) {
  Trajectory t;
  t.times = Eigen::VectorXd::LinSpaced(3, 0.0, 1.0);
  t.states.resize(3, 2);
  t.states << 1, 0, 0.5, 0.25, 0, 1;
  const std::string csv = trajectory_to_csv(t);
  EXPECT_EQ(csv, "t,x_1,x_2\n0,1,0\n0.5,0.5,0.25\n1,0,1\n");
}

TEST(TrajectoryJson, EnvelopeCarriesMetadata) {
  Trajectory t;
  t.times = Eigen::VectorXd::LinSpaced(4, 0.0, 1.0);
  t.states = Eigen::MatrixXd::Zero(4, 3);
  t.solver = Solver::Expm;
  t.rtol = 1e-6;
  t.x0_seed = 42;
  const Json j = to_json(t, false);
  EXPECT_EQ(j.at("solver"), "expm");
  EXPECT_EQ(j.at("steps"), 4);
  EXPECT_EQ(j.at("dim"), 3);
  EXPECT_EQ(j.at("x0_seed"), 42);
  EXPECT_FALSE(j.contains("states"));
  EXPECT_TRUE(to_json(t).contains("states"));
}

TEST(IdentCsv, ColumnsAndFlags) {
  EnsembleSpec spec{EnsembleKind::SparseContinuous, 3, 1.0, 1, 100};
  const auto m = draw_sparse_continuous(spec, 0);
  const auto r = analyze_system(m.entries);
  const std::string row = ident_csv_row(m, r);
  EXPECT_EQ(row, "sparse_continuous,3,1,1,0,0,0,1,1,1,1,0,0\n");
  EXPECT_EQ(ident_csv_header(),
            "kind,n,p,seed,draw_index,rank,sigma2,has_zero_eig,cond_i,cond_ii,cond_iii,"
            "match_lower,struct_upper\n");
}

TEST(JsonNumbers, NanAndInfEncoding) {
  EXPECT_TRUE(jnum(quiet_nan()).is_null());
  EXPECT_EQ(jnum(infinity()), Json("inf"));
  EXPECT_TRUE(std::isnan(dnum(Json(nullptr))));
  EXPECT_TRUE(std::isinf(dnum(Json("inf"))));
  EXPECT_EQ(dnum(Json(2.5)), 2.5);
}

TEST(TextFiles, WriteReadAndErrors) {
  const auto path = std::filesystem::temp_directory_path() / "sparseid_io_test" / "t.txt";
  write_text_file(path.string(), "hello\n");
  EXPECT_EQ(read_text_file(path.string()), "hello\n");
  EXPECT_THROW(read_text_file("/nonexistent/sparseid/file"), IoError);
  std::filesystem::remove_all(path.parent_path());
}
