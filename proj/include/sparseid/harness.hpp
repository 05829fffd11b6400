#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sparseid/common.hpp"
#include "sparseid/ensemble.hpp"
#include "sparseid/estimators.hpp"
#include "sparseid/integrator.hpp"
#include "sparseid/io.hpp"
#include "sparseid/spectral.hpp"
#include "sparseid/stats.hpp"
#include "sparseid/traj_metrics.hpp"

namespace sparseid {

class SubgroupTooSmall : public std::runtime_error {
 public:
  explicit SubgroupTooSmall(const std::string& what) : std::runtime_error(what) {}
};

struct EstimatorPolicy {
  bool run_stlsq = true;
  bool run_gradfit = false;
  int stlsq_x0_limit = 1;    // STLSQ runs for x0 indices below this
  int gradfit_x0_limit = 1;  // same for the gradient fit
  int gradfit_budget = 10000;
};

struct SweepConfig {
  std::vector<int> dims = {3, 5, 10, 20, 30, 40, 50};
  std::vector<double> sparsities = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0};
  int matrices_per_cell = 100;
  int x0_per_matrix = 100;
  EnsembleKind kind = EnsembleKind::SparseContinuous;
  SolveConfig solve;
  HyperGrid grid;
  EstimatorPolicy estimators;
  std::uint64_t master_seed = 0;
  double svd_tol = kDefaultSvdTol;
  int jobs = 1;
  std::string output_dir;
  bool resume = false;
  double subgroup_fraction = 0.10;

  void validate() const {
    if (dims.empty() || sparsities.empty())
      throw std::invalid_argument("SweepConfig: dims and sparsities must be nonempty");
    if (matrices_per_cell < 1 || x0_per_matrix < 1)
      throw std::invalid_argument("SweepConfig: counts must be >= 1");
    if (jobs < 1) throw std::invalid_argument("SweepConfig: jobs must be >= 1");
    solve.validate();
    for (double p : sparsities)
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("SweepConfig: p outside [0,1]");
  }
};

inline SweepConfig desk_profile() {
  SweepConfig cfg;
  cfg.dims = {3, 5, 10, 20};
  cfg.matrices_per_cell = 50;
  cfg.x0_per_matrix = 20;
  cfg.estimators.run_stlsq = true;
  cfg.estimators.run_gradfit = false;
  cfg.estimators.stlsq_x0_limit = 1;
  return cfg;
}

inline SweepConfig paper_profile() {
  SweepConfig cfg;  // defaults are already the full-scale grid
  cfg.matrices_per_cell = 100;
  cfg.x0_per_matrix = 100;
  cfg.estimators.run_stlsq = true;
  cfg.estimators.run_gradfit = true;
  cfg.estimators.stlsq_x0_limit = 100;
  cfg.estimators.gradfit_x0_limit = 100;
  return cfg;
}

// ---------------------------------------------------------------------------
// Per-sample records
// ---------------------------------------------------------------------------

struct TrajRow {
  int x0_index = 0;
  std::uint64_t x0_seed = 0;
  double d_a0 = quiet_nan();
  int kernel_dim = 0;
  double scn = quiet_nan();
  double log10_cond = quiet_nan();  // uncapped, the Welch-test input
  bool failed = false;
};

struct EstimateRow {
  FitMethod method = FitMethod::STLSQ;
  int x0_index = 0;
  std::uint64_t x0_seed = 0;
  SelectedHypers hyper;
  double r2 = quiet_nan();
  double mse = quiet_nan();
  bool well_fit = false;
  double hamming = quiet_nan();
  bool converged = false;
};

struct MatrixRecord {
  int matrix_index = 0;
  std::uint64_t seed = 0;
  bool rejected = false;
  bool failed = false;
  std::string failure;
  std::optional<SystemMatrix> matrix;
  std::optional<IdentReport> ident;
  std::vector<TrajRow> trajs;
  std::vector<EstimateRow> estimates;
};

struct MethodStats {
  int fits = 0;
  int well_fit = 0;
  double mean_hamming_wellfit = quiet_nan();
  double mean_r2 = quiet_nan();
};

struct WelchSummary {
  bool valid = false;
  bool degenerate = false;
  double t_stat = quiet_nan();
  double dof = quiet_nan();
  double p_value = quiet_nan();
  double mean_min_group = quiet_nan();
  double mean_max_group = quiet_nan();
  int n_min = 0;
  int n_max = 0;
};

struct DistStats {
  double mean = quiet_nan();
  double q10 = quiet_nan();
  double q50 = quiet_nan();
  double q90 = quiet_nan();
};

struct CellStats {
  int n = 0;
  double p = 0.0;
  int matrices_requested = 0;
  int matrices_ok = 0;
  int rejected = 0;
  int numeric_failures = 0;
  int traj_count = 0;
  int traj_failures = 0;
  double freq_i = quiet_nan();
  double freq_ii = quiet_nan();
  double freq_iii = quiet_nan();
  DistStats sigma2;
  DistStats d_a0;
  DistStats scn_log10;
  MethodStats stlsq;
  MethodStats gradfit;
  WelchSummary scn_test;
  WelchSummary da0_test;
  bool is_pstar = false;  // sparsity closest to p_c(n) within this sweep's grid
};

struct SweepResult {
  SweepConfig config;
  std::vector<CellStats> cells;  // sorted by (n, p)
};

// ---------------------------------------------------------------------------
// Subgroups
// ---------------------------------------------------------------------------

struct Sigma2Groups {
  std::vector<int> min_group;  // indices into the input, bottom fraction by sigma2
  std::vector<int> max_group;  // top fraction
};

/// Rank matrices by sigma2 (ties broken by draw index) and return the bottom
/// and top deciles. Requires at least 20 entries.
inline Sigma2Groups sigma2_subgroups(const std::vector<std::pair<double, std::int64_t>>& sigma2_and_draw,
                                     double fraction = 0.10) {
  const int count = static_cast<int>(sigma2_and_draw.size());
  if (count < 20) throw SubgroupTooSmall("sigma2_subgroups: need >= 20 matrices, got " +
                                         std::to_string(count));
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sigma2_and_draw[a].first != sigma2_and_draw[b].first)
      return sigma2_and_draw[a].first < sigma2_and_draw[b].first;
    return sigma2_and_draw[a].second < sigma2_and_draw[b].second;
  });
  const int g = std::max(1, static_cast<int>(std::floor(fraction * count)));
  Sigma2Groups groups;
  groups.min_group.assign(order.begin(), order.begin() + g);
  groups.max_group.assign(order.end() - g, order.end());
  return groups;
}

namespace detail {

inline std::uint64_t cell_seed(std::uint64_t master, int n, double p) {
  return derive_key({master, static_cast<std::uint64_t>(n),
                     static_cast<std::uint64_t>(std::llround(p * 10000.0))});
}

inline DistStats dist_stats(std::vector<double> values) {
  DistStats s;
  if (values.empty()) return s;
  s.mean = sample_mean(values);
  s.q10 = quantile(values, 0.10);
  s.q50 = quantile(values, 0.50);
  s.q90 = quantile(values, 0.90);
  return s;
}

/// Compute everything for one matrix of one cell. Pure function of seeds.
inline MatrixRecord run_matrix(const SweepConfig& cfg, int n, double p, int matrix_index) {
  MatrixRecord rec;
  rec.matrix_index = matrix_index;
  const std::uint64_t cseed = cell_seed(cfg.master_seed, n, p);

  EnsembleSpec spec;
  spec.kind = cfg.kind;
  spec.dim = n;
  spec.sparsity = p;
  spec.seed = derive_key({cseed, 0xA1});
  rec.seed = spec.seed;

  std::optional<SystemMatrix> drawn;
  try {
    drawn = draw_system(spec, matrix_index);
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.failure = e.what();
    return rec;
  }
  if (!drawn) {
    rec.rejected = true;
    return rec;
  }
  rec.matrix = std::move(drawn);
  const Eigen::MatrixXd& a = rec.matrix->entries;

  try {
    rec.ident = analyze_system(a, cfg.svd_tol);
  } catch (const NumericalFailure& e) {
    rec.failed = true;
    rec.failure = e.what();
    return rec;
  }

  for (int xi = 0; xi < cfg.x0_per_matrix; ++xi) {
    TrajRow row;
    row.x0_index = xi;
    row.x0_seed = derive_key({cseed, 0xB2, static_cast<std::uint64_t>(matrix_index),
                              static_cast<std::uint64_t>(xi)});
    const InitialCondition x0 = draw_unit_sphere(n, row.x0_seed);
    Trajectory traj;
    try {
      traj = solve_rk45(a, x0.values, cfg.solve);
      traj.system_seed = rec.seed;
      traj.draw_index = matrix_index;
      traj.x0_seed = row.x0_seed;
      const KernelDistance kd = kernel_distance(a, x0.values, cfg.svd_tol);
      row.d_a0 = kd.d;
      row.kernel_dim = kd.kernel_dim;
      const TrajMetricReport tm = smoothed_condition_number(traj);
      row.scn = tm.scn;
      row.log10_cond = tm.log10_cond;
    } catch (const NumericalFailure&) {
      row.failed = true;
      rec.trajs.push_back(row);
      continue;
    }
    rec.trajs.push_back(row);

    const auto truth = std::optional<Eigen::MatrixXd>(a);
    if (cfg.estimators.run_stlsq && xi < cfg.estimators.stlsq_x0_limit) {
      const EstimationResult est = select_hypers_stlsq(traj, truth, cfg.grid);
      rec.estimates.push_back(EstimateRow{FitMethod::STLSQ, xi, row.x0_seed, est.hyper, est.r2,
                                          est.mse, est.well_fit, est.hamming, est.converged});
    }
    if (cfg.estimators.run_gradfit && xi < cfg.estimators.gradfit_x0_limit) {
      const EstimationResult est =
          select_hypers_gradfit(traj, truth, cfg.grid, cfg.estimators.gradfit_budget);
      rec.estimates.push_back(EstimateRow{FitMethod::GradFitL1, xi, row.x0_seed, est.hyper, est.r2,
                                          est.mse, est.well_fit, est.hamming, est.converged});
    }
  }
  return rec;
}

inline MethodStats method_stats(const std::vector<MatrixRecord>& records, FitMethod method) {
  MethodStats s;
  std::vector<double> hammings;
  std::vector<double> r2s;
  for (const auto& rec : records)
    for (const auto& est : rec.estimates) {
      if (est.method != method) continue;
      ++s.fits;
      if (std::isfinite(est.r2)) r2s.push_back(est.r2);
      if (est.well_fit) {
        ++s.well_fit;
        if (std::isfinite(est.hamming)) hammings.push_back(est.hamming);
      }
    }
  if (!hammings.empty()) s.mean_hamming_wellfit = sample_mean(hammings);
  if (!r2s.empty()) s.mean_r2 = sample_mean(r2s);
  return s;
}

inline WelchSummary run_welch(const std::vector<double>& a, const std::vector<double>& b,
                              Alternative dir) {
  WelchSummary s;
  if (a.size() < 2 || b.size() < 2) return s;
  const WelchTest t = welch_one_sided(a, b, dir);
  s.valid = true;
  s.degenerate = t.degenerate;
  s.t_stat = t.t_stat;
  s.dof = t.dof;
  s.p_value = t.p_value;
  return s;
}

inline CellStats fold_cell(const SweepConfig& cfg, int n, double p,
                           const std::vector<MatrixRecord>& records) {
  CellStats cell;
  cell.n = n;
  cell.p = p;
  cell.matrices_requested = static_cast<int>(records.size());

  int cond_i = 0, cond_ii = 0, cond_iii = 0;
  std::vector<double> sigma2s;
  std::vector<double> d_a0s;
  std::vector<double> scns;
  std::vector<std::pair<double, std::int64_t>> sigma2_and_draw;
  std::vector<int> ok_indices;

  for (int i = 0; i < static_cast<int>(records.size()); ++i) {
    const auto& rec = records[i];
    if (rec.rejected) {
      ++cell.rejected;
      continue;
    }
    if (rec.failed || !rec.ident) {
      ++cell.numeric_failures;
      continue;
    }
    ++cell.matrices_ok;
    ok_indices.push_back(i);
    const IdentReport& r = *rec.ident;
    if (r.rank_deficient2) ++cond_i;
    if (r.exists_lambda_rank_drop) ++cond_ii;
    if (r.has_zero_eig) ++cond_iii;
    sigma2s.push_back(r.sigma2);
    sigma2_and_draw.emplace_back(r.sigma2, rec.matrix_index);
    for (const auto& t : rec.trajs) {
      ++cell.traj_count;
      if (t.failed) {
        ++cell.traj_failures;
        continue;
      }
      d_a0s.push_back(t.d_a0);
      scns.push_back(t.log10_cond);
    }
  }

  if (cell.matrices_ok > 0) {
    cell.freq_i = static_cast<double>(cond_i) / cell.matrices_ok;
    cell.freq_ii = static_cast<double>(cond_ii) / cell.matrices_ok;
    cell.freq_iii = static_cast<double>(cond_iii) / cell.matrices_ok;
  }
  cell.sigma2 = dist_stats(sigma2s);
  cell.d_a0 = dist_stats(d_a0s);
  cell.scn_log10 = dist_stats(scns);
  cell.stlsq = method_stats(records, FitMethod::STLSQ);
  cell.gradfit = method_stats(records, FitMethod::GradFitL1);

  // Subgroup tests on the sigma2 deciles.
  if (static_cast<int>(sigma2_and_draw.size()) >= 20) {
    const Sigma2Groups groups = sigma2_subgroups(sigma2_and_draw, cfg.subgroup_fraction);
    const auto collect = [&](const std::vector<int>& group, auto&& extract) {
      std::vector<double> out;
      for (int gi : group) {
        const auto& rec = records[ok_indices[static_cast<std::size_t>(gi)]];
        for (const auto& t : rec.trajs)
          if (!t.failed) out.push_back(extract(t));
      }
      return out;
    };
    const auto scn_of = [](const TrajRow& t) { return t.log10_cond; };
    const auto da0_of = [](const TrajRow& t) { return t.d_a0; };
    const std::vector<double> scn_min = collect(groups.min_group, scn_of);
    const std::vector<double> scn_max = collect(groups.max_group, scn_of);
    const std::vector<double> da0_min = collect(groups.min_group, da0_of);
    const std::vector<double> da0_max = collect(groups.max_group, da0_of);

    cell.scn_test = run_welch(scn_max, scn_min, Alternative::Less);
    cell.scn_test.n_min = static_cast<int>(scn_min.size());
    cell.scn_test.n_max = static_cast<int>(scn_max.size());
    if (!scn_min.empty()) cell.scn_test.mean_min_group = sample_mean(scn_min);
    if (!scn_max.empty()) cell.scn_test.mean_max_group = sample_mean(scn_max);

    cell.da0_test = run_welch(da0_min, da0_max, Alternative::Less);
    cell.da0_test.n_min = static_cast<int>(da0_min.size());
    cell.da0_test.n_max = static_cast<int>(da0_max.size());
    if (!da0_min.empty()) cell.da0_test.mean_min_group = sample_mean(da0_min);
    if (!da0_max.empty()) cell.da0_test.mean_max_group = sample_mean(da0_max);
  }
  return cell;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline Json to_json(const WelchSummary& w) {
  return Json{{"valid", w.valid},       {"degenerate", w.degenerate},
              {"t_stat", jnum(w.t_stat)}, {"dof", jnum(w.dof)},
              {"p_value", jnum(w.p_value)}, {"mean_min_group", jnum(w.mean_min_group)},
              {"mean_max_group", jnum(w.mean_max_group)}, {"n_min", w.n_min},
              {"n_max", w.n_max}};
}

inline WelchSummary welch_summary_from_json(const Json& j) {
  WelchSummary w;
  w.valid = j.at("valid").get<bool>();
  w.degenerate = j.at("degenerate").get<bool>();
  w.t_stat = dnum(j.at("t_stat"));
  w.dof = dnum(j.at("dof"));
  w.p_value = dnum(j.at("p_value"));
  w.mean_min_group = dnum(j.at("mean_min_group"));
  w.mean_max_group = dnum(j.at("mean_max_group"));
  w.n_min = j.at("n_min").get<int>();
  w.n_max = j.at("n_max").get<int>();
  return w;
}

inline Json to_json(const DistStats& d) {
  return Json{{"mean", jnum(d.mean)}, {"q10", jnum(d.q10)}, {"q50", jnum(d.q50)}, {"q90", jnum(d.q90)}};
}

inline DistStats dist_stats_from_json(const Json& j) {
  return DistStats{dnum(j.at("mean")), dnum(j.at("q10")), dnum(j.at("q50")), dnum(j.at("q90"))};
}

inline Json to_json(const MethodStats& m) {
  return Json{{"fits", m.fits},
              {"well_fit", m.well_fit},
              {"mean_hamming_wellfit", jnum(m.mean_hamming_wellfit)},
              {"mean_r2", jnum(m.mean_r2)}};
}

inline MethodStats method_stats_from_json(const Json& j) {
  MethodStats m;
  m.fits = j.at("fits").get<int>();
  m.well_fit = j.at("well_fit").get<int>();
  m.mean_hamming_wellfit = dnum(j.at("mean_hamming_wellfit"));
  m.mean_r2 = dnum(j.at("mean_r2"));
  return m;
}

inline Json to_json(const CellStats& c) {
  return Json{{"n", c.n},
              {"p", c.p},
              {"matrices_requested", c.matrices_requested},
              {"matrices_ok", c.matrices_ok},
              {"rejected", c.rejected},
              {"numeric_failures", c.numeric_failures},
              {"traj_count", c.traj_count},
              {"traj_failures", c.traj_failures},
              {"freq_i", jnum(c.freq_i)},
              {"freq_ii", jnum(c.freq_ii)},
              {"freq_iii", jnum(c.freq_iii)},
              {"sigma2", to_json(c.sigma2)},
              {"d_a0", to_json(c.d_a0)},
              {"scn_log10", to_json(c.scn_log10)},
              {"stlsq", to_json(c.stlsq)},
              {"gradfit", to_json(c.gradfit)},
              {"scn_test", to_json(c.scn_test)},
              {"da0_test", to_json(c.da0_test)},
              {"is_pstar", c.is_pstar}};
}

inline CellStats cell_stats_from_json(const Json& j) {
  CellStats c;
  c.n = j.at("n").get<int>();
  c.p = j.at("p").get<double>();
  c.matrices_requested = j.at("matrices_requested").get<int>();
  c.matrices_ok = j.at("matrices_ok").get<int>();
  c.rejected = j.at("rejected").get<int>();
  c.numeric_failures = j.at("numeric_failures").get<int>();
  c.traj_count = j.at("traj_count").get<int>();
  c.traj_failures = j.at("traj_failures").get<int>();
  c.freq_i = dnum(j.at("freq_i"));
  c.freq_ii = dnum(j.at("freq_ii"));
  c.freq_iii = dnum(j.at("freq_iii"));
  c.sigma2 = dist_stats_from_json(j.at("sigma2"));
  c.d_a0 = dist_stats_from_json(j.at("d_a0"));
  c.scn_log10 = dist_stats_from_json(j.at("scn_log10"));
  c.stlsq = method_stats_from_json(j.at("stlsq"));
  c.gradfit = method_stats_from_json(j.at("gradfit"));
  c.scn_test = welch_summary_from_json(j.at("scn_test"));
  c.da0_test = welch_summary_from_json(j.at("da0_test"));
  c.is_pstar = j.at("is_pstar").get<bool>();
  return c;
}

inline std::string checkpoint_filename(int n, double p) {
  return "cell_n" + std::to_string(n) + "_p" + std::to_string(std::llround(p * 10000.0)) + ".json";
}

// ---------------------------------------------------------------------------
// Aggregate tables
// ---------------------------------------------------------------------------

inline Json config_to_json(const SweepConfig& cfg) {
  std::vector<double> ps = cfg.sparsities;
  return Json{{"dims", cfg.dims},
              {"sparsities", ps},
              {"matrices_per_cell", cfg.matrices_per_cell},
              {"x0_per_matrix", cfg.x0_per_matrix},
              {"kind", to_string(cfg.kind)},
              {"solve", Json{{"T", cfg.solve.T},
                             {"steps", cfg.solve.steps},
                             {"rtol", cfg.solve.rtol},
                             {"atol", cfg.solve.atol}}},
              {"estimators", Json{{"run_stlsq", cfg.estimators.run_stlsq},
                                  {"run_gradfit", cfg.estimators.run_gradfit},
                                  {"stlsq_x0_limit", cfg.estimators.stlsq_x0_limit},
                                  {"gradfit_x0_limit", cfg.estimators.gradfit_x0_limit},
                                  {"gradfit_budget", cfg.estimators.gradfit_budget}}},
              {"master_seed", cfg.master_seed},
              {"svd_tol", cfg.svd_tol},
              {"subgroup_fraction", cfg.subgroup_fraction}};
}

inline constexpr const char* kSchemaVersion = "1.0.0";

/// Write contour, heatmap, and subgroup CSVs plus a manifest. Rows are emitted
/// in (n, p) order so identical results give identical bytes.
inline void aggregate_to_tables(const SweepResult& result, const std::string& out_dir) {
  std::string contour = "n,p,freq_i,freq_ii,freq_iii\n";
  std::string heatmap = "n,p,method,mean_hamming,n_wellfit\n";
  std::string subgroups =
      "n,p,metric,group,mean,count,t_stat,dof,p_value,degenerate,is_pstar\n";

  for (const auto& cell : result.cells) {
    const std::string key = std::to_string(cell.n) + "," + fmt_double(cell.p);
    contour += key + "," + fmt_double(cell.freq_i) + "," + fmt_double(cell.freq_ii) + "," +
               fmt_double(cell.freq_iii) + "\n";
    for (const auto& [name, stats] :
         {std::pair<const char*, const MethodStats*>{"stlsq", &cell.stlsq},
          std::pair<const char*, const MethodStats*>{"gradfit_l1", &cell.gradfit}}) {
      if (stats->fits == 0) continue;
      heatmap += key + "," + name + "," + fmt_double(stats->mean_hamming_wellfit) + "," +
                 std::to_string(stats->well_fit) + "\n";
    }
    const auto emit_subgroup = [&](const char* metric, const WelchSummary& w) {
      if (!w.valid) return;
      const std::string shared = "," + fmt_double(w.t_stat) + "," + fmt_double(w.dof) + "," +
                                 fmt_double(w.p_value) + "," + (w.degenerate ? "1" : "0") + "," +
                                 (cell.is_pstar ? "1" : "0") + "\n";
      subgroups += key + "," + metric + ",sigma2_min," + fmt_double(w.mean_min_group) + "," +
                   std::to_string(w.n_min) + shared;
      subgroups += key + "," + metric + ",sigma2_max," + fmt_double(w.mean_max_group) + "," +
                   std::to_string(w.n_max) + shared;
    };
    emit_subgroup("scn_log10", cell.scn_test);
    emit_subgroup("d_a0", cell.da0_test);
  }

  write_text_file(out_dir + "/contour.csv", contour);
  write_text_file(out_dir + "/heatmap.csv", heatmap);
  write_text_file(out_dir + "/subgroups.csv", subgroups);

  const Json config = config_to_json(result.config);
  Json manifest{{"schema_version", kSchemaVersion},
                {"config", config},
                {"config_hash", derive_key({std::hash<std::string>{}(config.dump())})},
                {"n_cells", result.cells.size()},
                {"files", Json::array({"contour.csv", "heatmap.csv", "subgroups.csv"})}};
  write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

namespace detail {

inline void mark_pstar(std::vector<CellStats>& cells) {
  // For each n, flag the sweep sparsity closest to p_c(n).
  std::vector<int> dims;
  for (const auto& c : cells)
    if (std::find(dims.begin(), dims.end(), c.n) == dims.end()) dims.push_back(c.n);
  for (int n : dims) {
    if (n < 2) continue;
    const double pc = critical_sparsity(n);
    CellStats* best = nullptr;
    for (auto& c : cells)
      if (c.n == n && (!best || std::abs(c.p - pc) < std::abs(best->p - pc))) best = &c;
    if (best) best->is_pstar = true;
  }
}

inline std::string detail_traj_header() {
  return "n,p,matrix_seed,draw_index,x0_seed,d_a0,d0,scn,sigma2\n";
}

inline std::string detail_estimates_header() {
  return "method,n,p,matrix_seed,draw_index,x0_seed,threshold,ridge,l1,fd_order,r2,mse,well_fit,"
         "hamming,converged\n";
}

}  // namespace detail

/// Run the full Monte Carlo sweep. Work is distributed over (cell, matrix)
/// tasks; every sample is a pure function of the master seed, and the fold
/// walks slots in index order, so results are identical for any worker count.
inline SweepResult run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  SweepResult result;
  result.config = cfg;

  struct CellPlan {
    int n;
    double p;
    bool from_checkpoint = false;
    CellStats loaded;
  };
  std::vector<CellPlan> plan;
  for (int n : cfg.dims)
    for (double p : cfg.sparsities) plan.push_back(CellPlan{n, p});

  const bool with_output = !cfg.output_dir.empty();
  const std::string ckpt_dir = cfg.output_dir + "/checkpoints";
  if (with_output && cfg.resume) {
    for (auto& c : plan) {
      const std::string path = ckpt_dir + "/" + checkpoint_filename(c.n, c.p);
      if (std::filesystem::exists(path)) {
        c.loaded = cell_stats_from_json(Json::parse(read_text_file(path)));
        c.from_checkpoint = true;
      }
    }
  }

  // Flatten compute tasks.
  struct Task {
    int plan_index;
    int matrix_index;
  };
  std::vector<Task> tasks;
  std::vector<std::vector<MatrixRecord>> slots(plan.size());
  for (int ci = 0; ci < static_cast<int>(plan.size()); ++ci) {
    if (plan[ci].from_checkpoint) continue;
    slots[ci].resize(cfg.matrices_per_cell);
    for (int mi = 0; mi < cfg.matrices_per_cell; ++mi) tasks.push_back(Task{ci, mi});
  }

  std::atomic<std::size_t> next_task{0};
  const auto worker = [&]() {
    for (;;) {
      const std::size_t idx = next_task.fetch_add(1);
      if (idx >= tasks.size()) return;
      const Task& t = tasks[idx];
      slots[t.plan_index][t.matrix_index] =
          detail::run_matrix(cfg, plan[t.plan_index].n, plan[t.plan_index].p, t.matrix_index);
    }
  };
  if (cfg.jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < cfg.jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Deterministic fold + checkpoint + detail rows.
  std::string ident_csv = ident_csv_header();
  std::string traj_csv = detail::detail_traj_header();
  std::string est_csv = detail::detail_estimates_header();

  for (int ci = 0; ci < static_cast<int>(plan.size()); ++ci) {
    CellStats cell;
    if (plan[ci].from_checkpoint) {
      cell = plan[ci].loaded;
    } else {
      cell = detail::fold_cell(cfg, plan[ci].n, plan[ci].p, slots[ci]);
      for (const auto& rec : slots[ci]) {
        if (!rec.matrix || !rec.ident) continue;
        ident_csv += ident_csv_row(*rec.matrix, *rec.ident);
        const std::string base = std::to_string(plan[ci].n) + "," + fmt_double(plan[ci].p) + "," +
                                 std::to_string(rec.seed) + "," + std::to_string(rec.matrix_index);
        for (const auto& t : rec.trajs) {
          if (t.failed) continue;
          traj_csv += base + "," + std::to_string(t.x0_seed) + "," + fmt_double(t.d_a0) + "," +
                      std::to_string(t.kernel_dim) + "," + fmt_double(t.scn) + "," +
                      fmt_double(rec.ident->sigma2) + "\n";
        }
        for (const auto& e : rec.estimates) {
          est_csv += std::string(to_string(e.method)) + "," + base + "," +
                     std::to_string(e.x0_seed) + "," + fmt_double(e.hyper.threshold) + "," +
                     fmt_double(e.hyper.ridge) + "," + fmt_double(e.hyper.l1) + "," +
                     std::to_string(e.hyper.fd_order) + "," + fmt_double(e.r2) + "," +
                     fmt_double(e.mse) + "," + (e.well_fit ? "1" : "0") + "," +
                     fmt_double(e.hamming) + "," + (e.converged ? "1" : "0") + "\n";
        }
      }
    }
    result.cells.push_back(cell);
  }

  detail::mark_pstar(result.cells);

  if (with_output) {
    for (const auto& cell : result.cells)
      write_text_file(ckpt_dir + "/" + checkpoint_filename(cell.n, cell.p), to_json(cell).dump(2) + "\n");
    write_text_file(cfg.output_dir + "/ident_reports.csv", ident_csv);
    write_text_file(cfg.output_dir + "/traj_metrics.csv", traj_csv);
    write_text_file(cfg.output_dir + "/estimates.csv", est_csv);
    aggregate_to_tables(result, cfg.output_dir);
  }
  return result;
}

/// Apply a key=value config file ('#' comments, blank lines ignored) on top of
/// an existing config. Recognized keys are documented in the README.
inline void apply_config_file(SweepConfig& cfg, const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  const auto split_list = [](const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        parts.push_back(cur);
        cur.clear();
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        cur += ch;
      }
    }
    if (!cur.empty()) parts.push_back(cur);
    return parts;
  };
  while (std::getline(lines, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw IoError(path + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "dims") {
        cfg.dims.clear();
        for (const auto& v : split_list(value)) cfg.dims.push_back(std::stoi(v));
      } else if (key == "sparsities") {
        cfg.sparsities.clear();
        for (const auto& v : split_list(value)) cfg.sparsities.push_back(parse_double(v));
      } else if (key == "matrices_per_cell") {
        cfg.matrices_per_cell = std::stoi(value);
      } else if (key == "x0_per_matrix") {
        cfg.x0_per_matrix = std::stoi(value);
      } else if (key == "kind") {
        cfg.kind = ensemble_kind_from_string(value);
      } else if (key == "master_seed") {
        cfg.master_seed = std::stoull(value);
      } else if (key == "jobs") {
        cfg.jobs = std::stoi(value);
      } else if (key == "output_dir") {
        cfg.output_dir = value;
      } else if (key == "T") {
        cfg.solve.T = parse_double(value);
      } else if (key == "steps") {
        cfg.solve.steps = std::stoi(value);
      } else if (key == "rtol") {
        cfg.solve.rtol = parse_double(value);
      } else if (key == "atol") {
        cfg.solve.atol = parse_double(value);
      } else if (key == "svd_tol") {
        cfg.svd_tol = parse_double(value);
      } else if (key == "subgroup_fraction") {
        cfg.subgroup_fraction = parse_double(value);
      } else if (key == "run_stlsq") {
        cfg.estimators.run_stlsq = value == "true" || value == "1";
      } else if (key == "run_gradfit") {
        cfg.estimators.run_gradfit = value == "true" || value == "1";
      } else if (key == "stlsq_x0_limit") {
        cfg.estimators.stlsq_x0_limit = std::stoi(value);
      } else if (key == "gradfit_x0_limit") {
        cfg.estimators.gradfit_x0_limit = std::stoi(value);
      } else if (key == "gradfit_budget") {
        cfg.estimators.gradfit_budget = std::stoi(value);
      } else {
        throw IoError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": bad value for '" + key + "': " +
                    e.what());
    }
  }
}

/// Rebuild a SweepResult from the per-cell checkpoint files of an output dir.
inline SweepResult load_checkpoints(const std::string& dir, const SweepConfig& cfg = {}) {
  SweepResult result;
  result.config = cfg;
  const std::string ckpt_dir = dir + "/checkpoints";
  if (!std::filesystem::is_directory(ckpt_dir)) throw IoError("no checkpoint dir: " + ckpt_dir);
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(ckpt_dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files)
    result.cells.push_back(cell_stats_from_json(Json::parse(read_text_file(f))));
  std::sort(result.cells.begin(), result.cells.end(), [](const CellStats& a, const CellStats& b) {
    if (a.n != b.n) return a.n < b.n;
    return a.p < b.p;
  });
  return result;
}

}  // namespace sparseid
