// sparseid: identifiability analysis of sparse linear ODE systems from the
// command line. Single-shot subcommands print JSON to stdout; bulk subcommands
// write CSV tables.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sparseid/ensemble.hpp"
#include "sparseid/estimators.hpp"
#include "sparseid/harness.hpp"
#include "sparseid/integrator.hpp"
#include "sparseid/io.hpp"
#include "sparseid/spectral.hpp"
#include "sparseid/traj_metrics.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

using sparseid::Json;

Eigen::VectorXd parse_vector(const std::string& csv) {
  std::vector<double> values;
  std::string cur;
  for (char ch : csv) {
    if (ch == ',') {
      values.push_back(sparseid::parse_double(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) values.push_back(sparseid::parse_double(cur));
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = values[static_cast<std::size_t>(i)];
  return v;
}

struct SolveArgs {
  double T = 1.0;
  int steps = 512;
  double rtol = 1e-6;
  double atol = 1e-9;
  std::string solver = "rk45";

  sparseid::SolveConfig config() const { return {T, steps, rtol, atol}; }
  sparseid::Solver which() const {
    if (solver == "rk45") return sparseid::Solver::RK45;
    if (solver == "expm") return sparseid::Solver::Expm;
    throw CLI::ValidationError("--solver must be rk45 or expm");
  }
};

void add_solve_flags(CLI::App* cmd, SolveArgs& args) {
  cmd->add_option("-T,--horizon", args.T, "Integration horizon T");
  cmd->add_option("--steps", args.steps, "Sample points on [0,T]");
  cmd->add_option("--rtol", args.rtol, "Relative tolerance");
  cmd->add_option("--atol", args.atol, "Absolute tolerance");
  cmd->add_option("--solver", args.solver, "Solver: rk45 or expm");
}

Eigen::VectorXd resolve_x0(const sparseid::SystemMatrix& m, std::uint64_t x0_seed,
                           const std::string& x0_literal) {
  if (!x0_literal.empty()) {
    Eigen::VectorXd v = parse_vector(x0_literal);
    if (v.size() != m.spec.dim) throw CLI::ValidationError("--x0 length must equal the system dim");
    return v;
  }
  return sparseid::draw_unit_sphere(m.spec.dim, x0_seed).values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identifiability toolkit for sparse linear ODE systems"};
  app.require_subcommand(1);

  // --- gen -----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "Draw system matrices from an ensemble");
  std::string gen_kind = "sparse_continuous";
  int gen_n = 5;
  double gen_p = 0.5;
  std::uint64_t gen_seed = 0;
  int gen_count = 1;
  std::int64_t gen_offset = 0;
  int gen_attempts = 100;
  std::string gen_out;
  bool gen_csv = false;
  gen->add_option("--kind", gen_kind, "Ensemble kind");
  gen->add_option("-n,--dim", gen_n, "System dimension")->required();
  gen->add_option("-p,--sparsity", gen_p, "Zero-entry probability");
  gen->add_option("--seed", gen_seed, "Ensemble seed");
  gen->add_option("--count", gen_count, "Number of draws");
  gen->add_option("--draw-offset", gen_offset, "First draw index");
  gen->add_option("--max-attempts", gen_attempts, "Rejection cap for constrained kinds");
  gen->add_option("--out", gen_out, "Output file (JSON lines; stdout if omitted)");
  gen->add_flag("--csv", gen_csv, "Emit per-entry CSV instead of JSON");

  // --- analyze ---------------------------------------------------------------
  auto* analyze = app.add_subcommand("analyze", "Identifiability report for a matrix file");
  std::string analyze_matrix;
  double analyze_tol = sparseid::kDefaultSvdTol;
  std::string analyze_out;
  bool analyze_csv = false;
  analyze->add_option("-m,--matrix", analyze_matrix, "Matrix JSON file")->required();
  analyze->add_option("--tol", analyze_tol, "Singular-value zero tolerance");
  analyze->add_option("--out", analyze_out, "Output file (stdout if omitted)");
  analyze->add_flag("--csv", analyze_csv, "Emit the CSV row instead of JSON");

  // --- solve -----------------------------------------------------------------
  auto* solve = app.add_subcommand("solve", "Integrate the IVP for a matrix + initial condition");
  std::string solve_matrix;
  std::uint64_t solve_x0_seed = 0;
  std::string solve_x0;
  SolveArgs solve_args;
  std::string solve_out;
  solve->add_option("-m,--matrix", solve_matrix, "Matrix JSON file")->required();
  solve->add_option("--x0-seed", solve_x0_seed, "Unit-sphere seed for the initial condition");
  solve->add_option("--x0", solve_x0, "Explicit initial condition (comma-separated)");
  add_solve_flags(solve, solve_args);
  solve->add_option("--out", solve_out, "Trajectory CSV file (JSON to stdout if omitted)");

  // --- metrics ---------------------------------------------------------------
  auto* metrics = app.add_subcommand("metrics", "Trajectory-level identifiability metrics");
  std::string metrics_matrix;
  std::uint64_t metrics_x0_seed = 0;
  std::string metrics_x0;
  double metrics_tol = sparseid::kDefaultSvdTol;
  SolveArgs metrics_args;
  std::string metrics_out;
  metrics->add_option("-m,--matrix", metrics_matrix, "Matrix JSON file")->required();
  metrics->add_option("--x0-seed", metrics_x0_seed, "Unit-sphere seed for the initial condition");
  metrics->add_option("--x0", metrics_x0, "Explicit initial condition (comma-separated)");
  metrics->add_option("--tol", metrics_tol, "Singular-value zero tolerance");
  add_solve_flags(metrics, metrics_args);
  metrics->add_option("--out", metrics_out, "Output file (stdout if omitted)");

  // --- fit -------------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "Estimate the system matrix back from a trajectory");
  std::string fit_matrix;
  std::uint64_t fit_x0_seed = 0;
  std::string fit_x0;
  std::string fit_method = "stlsq";
  SolveArgs fit_args;
  int fit_budget = 10000;
  bool fit_no_truth = false;
  std::string fit_out;
  fit->add_option("-m,--matrix", fit_matrix, "Matrix JSON file (generates the trajectory)")->required();
  fit->add_option("--x0-seed", fit_x0_seed, "Unit-sphere seed for the initial condition");
  fit->add_option("--x0", fit_x0, "Explicit initial condition (comma-separated)");
  fit->add_option("--method", fit_method, "Estimator: stlsq or gradfit");
  fit->add_option("--budget", fit_budget, "GradFitL1 iteration budget");
  fit->add_flag("--no-truth", fit_no_truth, "Withhold the true matrix from hyper selection");
  add_solve_flags(fit, fit_args);
  fit->add_option("--out", fit_out, "Output file (stdout if omitted)");

  // --- bound -----------------------------------------------------------------
  auto* bound = app.add_subcommand("bound", "Closed-form unidentifiability bound and threshold");
  int bound_n = 0;
  double bound_p = 0.0;
  bound->add_option("-n,--dim", bound_n, "System dimension")->required();
  bound->add_option("-p,--sparsity", bound_p, "Zero-entry probability")->required();

  // --- sweep -----------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "Monte Carlo sweep over the (n, p) grid");
  std::string sweep_profile = "desk";
  std::string sweep_config;
  std::string sweep_out = "sweep_out";
  std::uint64_t sweep_seed = 0;
  bool sweep_seed_set = false;
  int sweep_jobs = 1;
  std::string sweep_kind;
  std::vector<int> sweep_dims;
  std::vector<double> sweep_ps;
  int sweep_matrices = -1;
  int sweep_x0s = -1;
  bool sweep_no_stlsq = false;
  bool sweep_gradfit = false;
  bool sweep_resume = false;
  sweep->add_option("--profile", sweep_profile, "Base profile: desk or paper");
  sweep->add_option("--config", sweep_config, "key=value config file applied over the profile");
  sweep->add_option("--out", sweep_out, "Output directory");
  sweep->add_option("--seed", sweep_seed, "Master seed")->each([&](const std::string&) {
    sweep_seed_set = true;
  });
  sweep->add_option("--jobs", sweep_jobs, "Worker threads");
  sweep->add_option("--kind", sweep_kind, "Ensemble kind override");
  sweep->add_option("--dims", sweep_dims, "Dimension grid override")->delimiter(',');
  sweep->add_option("--ps", sweep_ps, "Sparsity grid override")->delimiter(',');
  sweep->add_option("--matrices", sweep_matrices, "Matrices per cell override");
  sweep->add_option("--x0s", sweep_x0s, "Initial conditions per matrix override");
  sweep->add_flag("--no-stlsq", sweep_no_stlsq, "Disable the STLSQ estimator");
  sweep->add_flag("--with-gradfit", sweep_gradfit, "Enable the GradFitL1 estimator");
  sweep->add_flag("--resume", sweep_resume, "Reuse existing per-cell checkpoints");

  // --- report ----------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Aggregate checkpoint files into the CSV tables");
  std::string report_in;
  std::string report_out;
  report->add_option("--in", report_in, "Sweep output directory with checkpoints/")->required();
  report->add_option("--out", report_out, "Table output directory (defaults to --in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const auto emit = [](const std::string& text, const std::string& out_path) {
    if (out_path.empty())
      std::cout << text;
    else
      sparseid::write_text_file(out_path, text);
  };

  try {
    if (gen->parsed()) {
      if (gen_csv && gen_count > 1)
        throw CLI::ValidationError("--csv emits one table and supports --count 1 only");
      sparseid::EnsembleSpec spec;
      spec.kind = sparseid::ensemble_kind_from_string(gen_kind);
      spec.dim = gen_n;
      spec.sparsity = gen_p;
      spec.seed = gen_seed;
      spec.max_attempts = gen_attempts;
      std::string out;
      for (int i = 0; i < gen_count; ++i) {
        const auto m = sparseid::draw_system(spec, gen_offset + i);
        if (!m) {
          out += Json{{"rejected", true}, {"draw_index", gen_offset + i}}.dump() + "\n";
          continue;
        }
        out += gen_csv ? sparseid::matrix_to_csv(m->entries) : sparseid::to_json(*m).dump() + "\n";
      }
      emit(out, gen_out);
      return kExitOk;
    }

    if (analyze->parsed()) {
      const auto m = sparseid::load_system_matrix(analyze_matrix);
      const auto report_data = sparseid::analyze_system(m.entries, analyze_tol);
      emit(analyze_csv ? sparseid::ident_csv_header() + sparseid::ident_csv_row(m, report_data)
                       : sparseid::to_json(report_data).dump(2) + "\n",
           analyze_out);
      return kExitOk;
    }

    if (solve->parsed()) {
      const auto m = sparseid::load_system_matrix(solve_matrix);
      const Eigen::VectorXd x0 = resolve_x0(m, solve_x0_seed, solve_x0);
      auto traj = sparseid::solve_ivp(m.entries, x0, solve_args.config(), solve_args.which());
      traj.system_seed = m.spec.seed;
      traj.draw_index = m.draw_index;
      traj.x0_seed = solve_x0_seed;
      if (solve_out.empty()) {
        std::cout << sparseid::to_json(traj).dump() << "\n";
      } else {
        sparseid::write_text_file(solve_out, sparseid::trajectory_to_csv(traj));
        std::cout << sparseid::to_json(traj, /*inline_data=*/false).dump() << "\n";
      }
      return kExitOk;
    }

    if (metrics->parsed()) {
      const auto m = sparseid::load_system_matrix(metrics_matrix);
      const Eigen::VectorXd x0 = resolve_x0(m, metrics_x0_seed, metrics_x0);
      const auto traj = sparseid::solve_ivp(m.entries, x0, metrics_args.config(), metrics_args.which());
      const auto kd = sparseid::kernel_distance(m.entries, x0, metrics_tol);
      const auto scn = sparseid::smoothed_condition_number(traj);
      const auto sv = sparseid::singular_values(m.entries);
      const double sigma2 = m.spec.dim >= 2 ? sv[m.spec.dim - 2] : sv[0];
      emit(Json{{"d_a0", kd.d},
                {"kernel_dim", kd.kernel_dim},
                {"scn", sparseid::jnum(scn.scn)},
                {"sigma2", sigma2}}
                   .dump(2) +
               "\n",
           metrics_out);
      return kExitOk;
    }

    if (fit->parsed()) {
      const auto m = sparseid::load_system_matrix(fit_matrix);
      const Eigen::VectorXd x0 = resolve_x0(m, fit_x0_seed, fit_x0);
      const auto traj = sparseid::solve_ivp(m.entries, x0, fit_args.config(), fit_args.which());
      const auto truth =
          fit_no_truth ? std::optional<Eigen::MatrixXd>() : std::optional<Eigen::MatrixXd>(m.entries);
      sparseid::EstimationResult result;
      if (fit_method == "stlsq") {
        result = sparseid::select_hypers_stlsq(traj, truth);
      } else if (fit_method == "gradfit" || fit_method == "gradfit_l1") {
        result = sparseid::select_hypers_gradfit(traj, truth, {}, fit_budget);
      } else {
        throw CLI::ValidationError("--method must be stlsq or gradfit");
      }
      emit(sparseid::to_json(result).dump(2) + "\n", fit_out);
      return kExitOk;
    }

    if (bound->parsed()) {
      const auto b = sparseid::evaluate_bounds(bound_n, bound_p);
      std::cout << sparseid::to_json(b).dump(2) << "\n";
      return kExitOk;
    }

    if (sweep->parsed()) {
      sparseid::SweepConfig cfg;
      if (sweep_profile == "desk") {
        cfg = sparseid::desk_profile();
      } else if (sweep_profile == "paper") {
        cfg = sparseid::paper_profile();
      } else {
        throw CLI::ValidationError("--profile must be desk or paper");
      }
      if (!sweep_config.empty()) sparseid::apply_config_file(cfg, sweep_config);
      if (sweep_seed_set) cfg.master_seed = sweep_seed;
      if (!sweep_kind.empty()) cfg.kind = sparseid::ensemble_kind_from_string(sweep_kind);
      if (!sweep_dims.empty()) cfg.dims = sweep_dims;
      if (!sweep_ps.empty()) cfg.sparsities = sweep_ps;
      if (sweep_matrices > 0) cfg.matrices_per_cell = sweep_matrices;
      if (sweep_x0s > 0) cfg.x0_per_matrix = sweep_x0s;
      if (sweep_no_stlsq) cfg.estimators.run_stlsq = false;
      if (sweep_gradfit) cfg.estimators.run_gradfit = true;
      cfg.jobs = sweep_jobs;
      cfg.output_dir = sweep_out;
      cfg.resume = sweep_resume;
      const auto result = sparseid::run_sweep(cfg);
      std::cout << Json{{"cells", result.cells.size()}, {"output_dir", cfg.output_dir}}.dump()
                << "\n";
      return kExitOk;
    }

    if (report->parsed()) {
      const auto result = sparseid::load_checkpoints(report_in);
      sparseid::aggregate_to_tables(result, report_out.empty() ? report_in : report_out);
      return kExitOk;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const sparseid::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const sparseid::NumericalFailure& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
