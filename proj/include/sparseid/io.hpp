#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparseid/common.hpp"
#include "sparseid/ensemble.hpp"
#include "sparseid/estimators.hpp"
#include "sparseid/integrator.hpp"
#include "sparseid/spectral.hpp"

namespace sparseid {

using Json = nlohmann::json;

/// Shortest round-trip decimal form; NaN and infinities spelled out.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return quiet_nan();
  if (s == "inf") return infinity();
  if (s == "-inf") return -infinity();
  return std::stod(s);
}

// JSON cannot carry NaN/inf; encode them as null / sentinel strings.
inline Json jnum(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? Json("inf") : Json("-inf");
}

inline double dnum(const Json& j) {
  if (j.is_null()) return quiet_nan();
  if (j.is_string()) return parse_double(j.get<std::string>());
  return j.get<double>();
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failure: " + path);
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  out.flush();
  if (!out.good()) throw IoError("write failure: " + path);
}

// ---------------------------------------------------------------------------
// System matrices
// ---------------------------------------------------------------------------

inline Json to_json(const SystemMatrix& m) {
  std::vector<double> entries;
  entries.reserve(static_cast<std::size_t>(m.entries.size()));
  for (int i = 0; i < m.entries.rows(); ++i)
    for (int j = 0; j < m.entries.cols(); ++j) entries.push_back(m.entries(i, j));
  return Json{{"kind", to_string(m.spec.kind)},
              {"dim", m.spec.dim},
              {"p", m.spec.sparsity},
              {"seed", m.spec.seed},
              {"draw_index", m.draw_index},
              {"entries", entries}};
}

inline SystemMatrix system_matrix_from_json(const Json& j) {
  SystemMatrix m;
  m.spec.kind = ensemble_kind_from_string(j.at("kind").get<std::string>());
  m.spec.dim = j.at("dim").get<int>();
  m.spec.sparsity = j.at("p").get<double>();
  m.spec.seed = j.at("seed").get<std::uint64_t>();
  m.draw_index = j.at("draw_index").get<std::int64_t>();
  const auto entries = j.at("entries").get<std::vector<double>>();
  const int n = m.spec.dim;
  if (static_cast<int>(entries.size()) != n * n)
    throw IoError("system matrix JSON: entries length does not match dim^2");
  m.entries.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) m.entries(i, k) = entries[static_cast<std::size_t>(i) * n + k];
  return m;
}

inline SystemMatrix load_system_matrix(const std::string& path) {
  return system_matrix_from_json(Json::parse(read_text_file(path)));
}

/// One row per entry: i,j,value.
inline std::string matrix_to_csv(const Eigen::MatrixXd& m) {
  std::string out = "i,j,value\n";
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      out += std::to_string(i) + "," + std::to_string(j) + "," + fmt_double(m(i, j)) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

inline Json to_json(const Trajectory& t, bool inline_data = true) {
  Json j{{"solver", to_string(t.solver)},
         {"rtol", t.rtol},
         {"atol", t.atol},
         {"steps", t.samples()},
         {"dim", t.dim()},
         {"system", Json{{"seed", t.system_seed}, {"draw_index", t.draw_index}}},
         {"x0_seed", t.x0_seed}};
  if (inline_data) {
    j["times"] = std::vector<double>(t.times.data(), t.times.data() + t.times.size());
    std::vector<std::vector<double>> states(t.samples());
    for (int k = 0; k < t.samples(); ++k)
      states[k].assign(t.states.row(k).data(), t.states.row(k).data() + t.dim());
    j["states"] = states;
  }
  return j;
}

/// Columns t,x_1..x_n.
inline std::string trajectory_to_csv(const Trajectory& t) {
  std::string out = "t";
  for (int j = 0; j < t.dim(); ++j) out += ",x_" + std::to_string(j + 1);
  out += "\n";
  for (int k = 0; k < t.samples(); ++k) {
    out += fmt_double(t.times(k));
    for (int j = 0; j < t.dim(); ++j) out += "," + fmt_double(t.states(k, j));
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline Json to_json(const IdentReport& r) {
  std::vector<Json> eigs;
  eigs.reserve(r.eigenvalues.size());
  for (const auto& e : r.eigenvalues) eigs.push_back(Json{{"re", e.real()}, {"im", e.imag()}});
  return Json{{"dim", r.dim},
              {"rank", r.rank},
              {"rank_deficient2", r.rank_deficient2},
              {"sigma2", r.sigma2},
              {"eigenvalues", eigs},
              {"has_zero_eig", r.has_zero_eig},
              {"exists_lambda_rank_drop", r.exists_lambda_rank_drop},
              {"witness_lambda", Json{{"re", r.witness_lambda.real()}, {"im", r.witness_lambda.imag()}}},
              {"globally_unidentifiable", r.globally_unidentifiable},
              {"matching_lower", r.matching_lower},
              {"structural_rank_upper", r.structural_rank_upper},
              {"svd_tol", r.svd_tol}};
}

inline std::string ident_csv_header() {
  return "kind,n,p,seed,draw_index,rank,sigma2,has_zero_eig,cond_i,cond_ii,cond_iii,match_lower,"
         "struct_upper\n";
}

inline std::string ident_csv_row(const SystemMatrix& m, const IdentReport& r) {
  std::string out;
  out += to_string(m.spec.kind);
  out += "," + std::to_string(m.spec.dim);
  out += "," + fmt_double(m.spec.sparsity);
  out += "," + std::to_string(m.spec.seed);
  out += "," + std::to_string(m.draw_index);
  out += "," + std::to_string(r.rank);
  out += "," + fmt_double(r.sigma2);
  out += std::string(",") + (r.has_zero_eig ? "1" : "0");
  out += std::string(",") + (r.rank_deficient2 ? "1" : "0");
  out += std::string(",") + (r.exists_lambda_rank_drop ? "1" : "0");
  out += std::string(",") + (r.has_zero_eig ? "1" : "0");
  out += "," + std::to_string(r.matching_lower);
  out += "," + std::to_string(r.structural_rank_upper);
  out += "\n";
  return out;
}

inline Json to_json(const BoundEval& b) {
  return Json{{"n", b.dim},
              {"p", b.sparsity},
              {"lower_bound", b.lower_bound},
              {"p_critical", jnum(b.p_critical)}};
}

inline Json to_json(const EstimationResult& r) {
  std::vector<double> entries;
  for (int i = 0; i < r.a_hat.rows(); ++i)
    for (int j = 0; j < r.a_hat.cols(); ++j) entries.push_back(r.a_hat(i, j));
  Json hyper{{"threshold", r.hyper.threshold},
             {"ridge", r.hyper.ridge},
             {"l1", r.hyper.l1},
             {"fd_order", r.hyper.fd_order},
             {"iters", r.hyper.iters}};
  return Json{{"method", to_string(r.method)},
              {"a_hat", entries},
              {"dim", r.a_hat.rows()},
              {"hyper", hyper},
              {"r2", jnum(r.r2)},
              {"mse", jnum(r.mse)},
              {"well_fit", r.well_fit},
              {"hamming", jnum(r.hamming)},
              {"converged", r.converged}};
}

}  // namespace sparseid
