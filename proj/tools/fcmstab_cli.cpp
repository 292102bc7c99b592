// Command-line front end: dataset generation, training, evaluation, timing
// benchmarks, and embedded-domain solves. Every figure-worthy result is
// emitted as CSV; plotting stays outside.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fcmstab/dataset.hpp"
#include "fcmstab/eig_oracle.hpp"
#include "fcmstab/estimator.hpp"
#include "fcmstab/fcm.hpp"
#include "fcmstab/mlp.hpp"

#include "cli_support.hpp"

namespace {

using namespace fcmstab;

int exit_code_for(Errc c) { return c == Errc::bad_input ? 2 : 1; }

void require_file(const std::string& path, const char* what) {
  require(std::filesystem::exists(path), Errc::bad_input,
          std::string(what) + " does not exist: " + path);
}

void require_writable_dir(const std::string& path, const char* what) {
  const auto parent = std::filesystem::path(path).parent_path();
  require(parent.empty() || std::filesystem::is_directory(parent), Errc::bad_input,
          std::string(what) + " directory does not exist: " + parent.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Option plumbing: every option doubles as a config-file key (the long name
// without dashes' prefix). Command-line flags win over config values.

struct Binding {
  CLI::Option* opt = nullptr;
  std::function<void(const std::string&)> apply;
};

struct Bindings {
  std::map<std::string, Binding> by_key;

  void add(CLI::Option* opt, const std::string& key, std::function<void(const std::string&)> fn) {
    by_key[key] = {opt, std::move(fn)};
  }
  void add_int(CLI::App* cmd, const std::string& flag, int& var, const std::string& desc) {
    const std::string key = flag.substr(2);
    add(cmd->add_option(flag, var, desc), key,
        [&var, key](const std::string& s) { var = cli::to_int(s, key.c_str()); });
  }
  void add_u64(CLI::App* cmd, const std::string& flag, std::uint64_t& var, const std::string& desc) {
    const std::string key = flag.substr(2);
    add(cmd->add_option(flag, var, desc), key,
        [&var, key](const std::string& s) { var = cli::to_u64(s, key.c_str()); });
  }
  void add_double(CLI::App* cmd, const std::string& flag, double& var, const std::string& desc) {
    const std::string key = flag.substr(2);
    add(cmd->add_option(flag, var, desc), key,
        [&var, key](const std::string& s) { var = cli::to_double(s, key.c_str()); });
  }
  void add_string(CLI::App* cmd, const std::string& flag, std::string& var, const std::string& desc) {
    const std::string key = flag.substr(2);
    add(cmd->add_option(flag, var, desc), key, [&var](const std::string& s) { var = s; });
  }
};

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOpts {
  int n_per_edge = 99;
  double d_min = 1e-4;
  int n_ai = 20;
  std::string spacing = "log";
  std::string split = "train";
  std::string out;
};

int cmd_gen_data(const GenDataOpts& o, int threads, std::uint64_t seed) {
  require(!o.out.empty(), Errc::bad_input, "--out is required");
  require(o.spacing == "log" || o.spacing == "linear", Errc::bad_input,
          "spacing must be 'log' or 'linear'");
  require_writable_dir(o.out, "output");

  EndpointDistribution dist;
  dist.n_per_edge = o.n_per_edge;
  dist.d_min = o.d_min;
  dist.log_spacing = o.spacing == "log";
  validate(dist);

  GenerateOptions opt;
  opt.threads = threads;
  opt.split = o.split;
  opt.seed = seed;
  opt.progress = [](int done, int total) {
    if (done == total || done % std::max(1, total / 20) == 0)
      std::fprintf(stderr, "row %d/%d\n", done, total);
  };

  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = generate(
      dist, o.n_ai, [](const CutConfig& c, int n_ai) { return lambda_oracle(c, 2.0, n_ai).lambda; }, opt);
  require(d.failures.empty(), Errc::degenerate_cut,
          std::to_string(d.failures.size()) + " configs were rejected by the oracle");
  write_csv(d, o.out);

  double lmin = std::numeric_limits<double>::infinity(), lmax = 0.0;
  for (const auto& s : d.samples) {
    lmin = std::min(lmin, s.lambda);
    lmax = std::max(lmax, s.lambda);
  }
  std::printf("%zu samples written to %s\n", d.samples.size(), o.out.c_str());
  std::printf("lambda min %.17g max %.17g\n", lmin, lmax);
  std::printf("elapsed %.1f s\n", seconds_since(t0));
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string train_path;
  std::string val_path;
  std::string hidden = "256x6";
  int epochs = 2000;
  int batch = 0;  // 0: auto
  double lr0 = 5e-4;
  int lr_halving = 0;  // 0: epochs/4
  std::string model_out;
};

int cmd_train(const TrainOpts& o, int threads, std::uint64_t seed) {
  require(!o.train_path.empty(), Errc::bad_input, "--train is required");
  require(!o.val_path.empty(), Errc::bad_input, "--val is required");
  require(!o.model_out.empty(), Errc::bad_input, "--model-out is required");
  require_file(o.train_path, "training dataset");
  require_file(o.val_path, "validation dataset");
  require_writable_dir(o.model_out, "model output");
  const std::vector<int> hidden = cli::parse_hidden_spec(o.hidden);

  const Dataset tr = read_csv(o.train_path);
  const Dataset va = read_csv(o.val_path);
  const TrainingArrays ta = to_training_arrays(tr);
  const TrainingArrays vala = to_training_arrays(va);

  MlpModel m = init_model(hidden, seed);
  m.norm_mean.assign(ta.mean.begin(), ta.mean.end());
  m.norm_std.assign(ta.stdev.begin(), ta.stdev.end());

  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.lr0 = o.lr0;
  cfg.lr_halving_period = o.lr_halving;
  cfg.seed = seed;
  cfg.threads = threads;

  std::printf("training %zux%d on %zu rows (val %zu), %d epochs\n", hidden.size(), hidden[0],
              tr.samples.size(), va.samples.size(), cfg.epochs);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainHistory hist = train(m, ta, vala, cfg);
  const double secs = seconds_since(t0);
  save(m, o.model_out);

  std::printf("best epoch %d of %d, val mse %.17g\n", hist.best_epoch, cfg.epochs,
              hist.best_val_loss);
  std::printf("final train mse %.17g\n", hist.train_loss.back());
  std::printf("model written to %s\n", o.model_out.c_str());
  std::printf("elapsed %.1f s\n", secs);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string test_path;
  std::string model;
  std::string report;  // optional per-sample CSV
};

int cmd_eval(const EvalOpts& o, int threads) {
  require(!o.test_path.empty(), Errc::bad_input, "--test is required");
  require(!o.model.empty(), Errc::bad_input, "--model is required");
  require_file(o.test_path, "test dataset");
  require_file(o.model, "model file");
  if (!o.report.empty()) require_writable_dir(o.report, "report");

  const Dataset ds = read_csv(o.test_path);
  const MlpModel m = load(o.model);
  const EvalReport rep = evaluate(m, ds, 8192, threads);

  std::printf("samples %zu\n", ds.samples.size());
  std::printf("mse %.17g\n", rep.mse);
  std::printf("outlier_fraction %.17g\n", rep.outlier_fraction);
  std::printf("p50 %.17g\n", rep.p50);
  std::printf("p95 %.17g\n", rep.p95);
  std::printf("p100 %.17g\n", rep.p100);

  if (!o.report.empty()) {
    std::ofstream f(o.report, std::ios::binary);
    require(f.good(), Errc::bad_input, "cannot open for writing: " + o.report);
    f << "index,rel_error\n";
    char buf[64];
    for (size_t i = 0; i < rep.rel_error.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, rep.rel_error[i]);
      f << buf;
    }
    f.flush();
    require(f.good(), Errc::bad_input, "write failed: " + o.report);
    std::printf("per-sample report written to %s\n", o.report.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
  std::string mode = "oracle";
  int n_ai = 0;  // 0: mode default (oracle sweep cap 20, nn ratio reference 10)
  int batch = 8192;
  int configs = 32;
  int repeat = 3;
  std::string model;
  std::string out;
};

std::vector<CutConfig> sample_configs(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> off(-0.999, 0.999);
  std::uniform_int_distribution<int> edge(0, 3);
  std::vector<CutConfig> out;
  out.reserve(static_cast<size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    const int e1 = edge(rng);
    int e2 = edge(rng);
    while (e2 == e1) e2 = edge(rng);
    out.push_back({detail::edge_grid_point(static_cast<Edge>(e1), off(rng)),
                   detail::edge_grid_point(static_cast<Edge>(e2), off(rng))});
  }
  return out;
}

struct TimedRow {
  std::string mode;
  int param = 0;
  double median = 0.0;
  double mean = 0.0;
};

// Median/mean of per-estimate seconds over `repeat` timed passes, after one
// untimed warm-up pass.
template <class Pass>
TimedRow time_pass(const std::string& mode, int param, int configs, int repeat, Pass&& pass) {
  pass();
  std::vector<double> per_run(static_cast<size_t>(repeat));
  for (int r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    pass();
    per_run[static_cast<size_t>(r)] = seconds_since(t0) / configs;
  }
  std::sort(per_run.begin(), per_run.end());
  TimedRow row{mode, param, 0.0, 0.0};
  row.median = per_run[per_run.size() / 2];
  row.mean = std::accumulate(per_run.begin(), per_run.end(), 0.0) / repeat;
  return row;
}

int cmd_bench(const BenchOpts& o, int threads, std::uint64_t seed) {
  require(o.mode == "oracle" || o.mode == "nn", Errc::bad_input, "mode must be 'oracle' or 'nn'");
  require(o.configs >= 1, Errc::bad_input, "configs must be positive");
  require(o.repeat >= 1, Errc::bad_input, "repeat must be positive");
  if (!o.out.empty()) require_writable_dir(o.out, "output");

  const std::vector<CutConfig> configs = sample_configs(o.configs, seed);
  std::vector<TimedRow> rows;

  if (o.mode == "oracle") {
    const int cap = o.n_ai > 0 ? o.n_ai : 20;
    double sink = 0.0;
    for (int level : {6, 10, 14, 20}) {
      if (level > cap) continue;
      rows.push_back(time_pass("oracle", level, o.configs, o.repeat, [&] {
        for (const CutConfig& c : configs) sink += lambda_oracle(c, 2.0, level).lambda;
      }));
      std::printf("oracle n_ai=%d: %.6e s/estimate (median of %d)\n", level, rows.back().median,
                  o.repeat);
    }
    require(std::isfinite(sink), Errc::diverged, "oracle produced a non-finite value");
  } else {
    require(!o.model.empty(), Errc::bad_input, "nn mode needs --model");
    require_file(o.model, "model file");
    const MlpModel m = load(o.model);

    std::vector<FeatureVector> xs(configs.size());
    for (size_t i = 0; i < configs.size(); ++i)
      xs[i] = cut_distances(normalize_config(configs[i]).config);

    double best_nn = std::numeric_limits<double>::infinity();
    std::vector<double> sink;
    for (int b : {1, 8, 64, 512, 4096, 8192}) {
      if (b > o.batch) continue;
      rows.push_back(time_pass("nn", b, o.configs, o.repeat, [&] {
        sink = forward_batch(m, xs.data(), xs.size(), b, threads);
      }));
      best_nn = std::min(best_nn, rows.back().median);
      std::printf("nn batch=%d: %.6e s/estimate (median of %d)\n", b, rows.back().median, o.repeat);
    }

    const int ref = o.n_ai > 0 ? o.n_ai : 10;
    double acc = 0.0;
    rows.push_back(time_pass("oracle", ref, o.configs, o.repeat, [&] {
      for (const CutConfig& c : configs) acc += lambda_oracle(c, 2.0, ref).lambda;
    }));
    std::printf("oracle n_ai=%d: %.6e s/estimate (median of %d)\n", ref, rows.back().median,
                o.repeat);
    std::printf("oracle/nn ratio at n_ai=%d: %.1f\n", ref, rows.back().median / best_nn);
  }

  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::binary);
    require(f.good(), Errc::bad_input, "cannot open for writing: " + o.out);
    f << "mode,param,seconds_per_estimate_median,seconds_per_estimate_mean\n";
    char buf[128];
    for (const TimedRow& r : rows) {
      std::snprintf(buf, sizeof buf, "%s,%d,%.6e,%.6e\n", r.mode.c_str(), r.param, r.median, r.mean);
      f << buf;
    }
    f.flush();
    require(f.good(), Errc::bad_input, "write failed: " + o.out);
    std::printf("timings written to %s\n", o.out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// solve

struct SolveOpts {
  std::string lambda_source = "oracle";
  int lmin = 5;
  int lmax = 7;
  double safety = 2.0;
  double rel_tol = 1e-10;
  std::string model;
  std::string report;  // comparison CSV (both mode)
  std::string out;     // solution CSV
};

PoissonProblem flower_problem() {
  PoissonProblem prob;
  prob.domain = {{0.0, 0.0}, 2.4};
  prob.boundary = flower_boundary();
  prob.dirichlet = [](Point p) { return p.x * p.x + p.y * p.y; };
  prob.exact = prob.dirichlet;
  prob.source = [](Point) { return -4.0; };
  return prob;
}

void print_mesh_stats(const QuadtreeMesh& mesh) {
  size_t cuts = 0;
  for (const MeshCell& c : mesh.leaves) cuts += c.cls == CellClass::cut;
  std::printf("mesh: %zu cells, %zu cutcells, %d unknowns, %zu hanging nodes\n",
              mesh.leaves.size(), cuts, mesh.dof_count, mesh.constraints.size());
}

// One assemble-and-solve pass with the chosen stabilization source.
int solve_single(const SolveOpts& o, const SolveSettings& s, bool use_nn, int threads) {
  const PoissonProblem prob = flower_problem();
  const QuadtreeMesh mesh = build_mesh(prob, o.lmin, o.lmax);
  print_mesh_stats(mesh);

  LambdaProvider provider;
  double lambda_secs = 0.0;
  int fallbacks = 0;
  if (use_nn) {
    require(!o.model.empty(), Errc::bad_input, "nn source needs --model");
    require_file(o.model, "model file");
    const MlpModel m = load(o.model);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<LambdaValue> table = batch_lambdas(mesh, prob.boundary, m, s.policy, threads);
    lambda_secs = seconds_since(t0);
    for (const LambdaValue& lv : table) fallbacks += lv.method == EstimateMethod::eigen_fallback;
    std::printf("lambda pass (network): %.3f s, %d fallbacks\n", lambda_secs, fallbacks);
    provider = make_table_provider(std::move(table));
  } else {
    provider = make_oracle_provider(prob.boundary, s.policy.fallback_n_ai);
  }

  const auto t1 = std::chrono::steady_clock::now();
  const FcmSystem sys = assemble(mesh, prob, provider, o.safety, s.params);
  std::printf("assembled in %.3f s (%zu stabilized cells)\n", seconds_since(t1),
              sys.lambdas.size());

  const FcmSolution sol = solve(mesh, sys, o.rel_tol);
  std::printf("cg: %d iterations, relative residual %.3e\n", sol.cg.iterations,
              sol.cg.rel_residual);
  std::printf("l2 error vs exact: %.6e\n", l2_error(mesh, prob, sol.u, s.params));

  if (!o.out.empty()) {
    write_solution_csv(o.out, mesh, prob, sol.u);
    std::printf("solution written to %s\n", o.out.c_str());
  }
  return 0;
}

int cmd_solve(const SolveOpts& o, int threads) {
  require(o.lambda_source == "oracle" || o.lambda_source == "nn" || o.lambda_source == "both",
          Errc::bad_input, "lambda-source must be 'oracle', 'nn', or 'both'");
  if (!o.out.empty()) require_writable_dir(o.out, "solution output");
  if (!o.report.empty()) require_writable_dir(o.report, "report");

  SolveSettings s;
  s.l_min = o.lmin;
  s.l_max = o.lmax;
  s.safety = o.safety;
  s.rel_tol = o.rel_tol;
  s.threads = threads;

  if (o.lambda_source != "both") return solve_single(o, s, o.lambda_source == "nn", threads);

  require(!o.model.empty(), Errc::bad_input, "both mode needs --model");
  require_file(o.model, "model file");
  const PoissonProblem prob = flower_problem();
  print_mesh_stats(build_mesh(prob, o.lmin, o.lmax));
  const MlpModel m = load(o.model);
  const LambdaComparison rep = compare_lambda_sources(prob, m, s);

  std::printf("cutcells %zu\n", rep.cutcells);
  std::printf("fallback_count %d\n", rep.fallback_count);
  std::printf("max_rel_diff %.6e\n", rep.max_rel_diff);
  std::printf("median_rel_diff %.6e\n", rep.median_rel_diff);
  std::printf("l2_rel_diff %.6e\n", rep.l2_rel_diff);
  std::printf("seconds_oracle %.3f\n", rep.seconds_oracle);
  std::printf("seconds_nn %.3f\n", rep.seconds_nn);
  std::printf("lambda pass speedup %.1f\n",
              rep.seconds_nn > 0.0 ? rep.seconds_oracle / rep.seconds_nn : 0.0);
  std::printf("iterations_oracle %d\n", rep.iterations_oracle);
  std::printf("iterations_nn %d\n", rep.iterations_nn);

  if (!o.report.empty()) {
    std::ofstream f(o.report, std::ios::binary);
    require(f.good(), Errc::bad_input, "cannot open for writing: " + o.report);
    f << "cutcells,fallback_count,max_rel_diff,median_rel_diff,l2_rel_diff,"
         "seconds_oracle,seconds_nn,iterations_oracle,iterations_nn\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%.17g,%.17g,%.6e,%.6e,%d,%d\n", rep.cutcells,
                  rep.fallback_count, rep.max_rel_diff, rep.median_rel_diff, rep.l2_rel_diff,
                  rep.seconds_oracle, rep.seconds_nn, rep.iterations_oracle, rep.iterations_nn);
    f << buf;
    f.flush();
    require(f.good(), Errc::bad_input, "write failed: " + o.report);
    std::printf("comparison report written to %s\n", o.report.c_str());
  }

  if (!o.out.empty()) {
    std::printf("exporting the network-stabilized solution\n");
    return solve_single(o, s, true, threads);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stabilization-parameter toolkit: dataset generation, surrogate training, "
               "timing benchmarks, and embedded-domain Poisson solves"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  int threads = 1;
  std::uint64_t seed = 0;

  Bindings global;
  app.add_option("--config", config_path, "key=value config file (# comments)");
  global.add_int(&app, "--threads", threads, "worker threads");
  global.add_u64(&app, "--seed", seed, "random seed / dataset seed tag");

  GenDataOpts gen;
  CLI::App* cgen = app.add_subcommand("gen-data", "enumerate cut configs and label them with the eigenvalue oracle");
  Bindings bgen;
  bgen.add_int(cgen, "--n-per-edge", gen.n_per_edge, "grid points per edge (odd, >= 3)");
  bgen.add_double(cgen, "--d-min", gen.d_min, "clearance from cell vertices");
  bgen.add_int(cgen, "--n-ai", gen.n_ai, "adaptive integration depth for the oracle");
  bgen.add_string(cgen, "--spacing", gen.spacing, "endpoint spacing: log or linear");
  bgen.add_string(cgen, "--split", gen.split, "dataset split tag (train/val/test)");
  bgen.add_string(cgen, "--out", gen.out, "output CSV path (writes .meta beside it)");

  TrainOpts tro;
  CLI::App* ctrain = app.add_subcommand("train", "fit the surrogate on a generated dataset");
  Bindings btrain;
  btrain.add_string(ctrain, "--train", tro.train_path, "training dataset CSV");
  btrain.add_string(ctrain, "--val", tro.val_path, "validation dataset CSV");
  btrain.add_string(ctrain, "--hidden", tro.hidden, "hidden layers, WIDTHxCOUNT (e.g. 1024x6)");
  btrain.add_int(ctrain, "--epochs", tro.epochs, "training epochs");
  btrain.add_int(ctrain, "--batch", tro.batch, "mini-batch size (0: auto)");
  btrain.add_double(ctrain, "--lr0", tro.lr0, "initial learning rate");
  btrain.add_int(ctrain, "--lr-halving", tro.lr_halving, "epochs between halvings (0: epochs/4)");
  btrain.add_string(ctrain, "--model-out", tro.model_out, "where to write the model JSON");

  EvalOpts evo;
  CLI::App* ceval = app.add_subcommand("eval", "report surrogate accuracy against oracle labels");
  Bindings beval;
  beval.add_string(ceval, "--test", evo.test_path, "test dataset CSV");
  beval.add_string(ceval, "--model", evo.model, "model JSON");
  beval.add_string(ceval, "--report", evo.report, "per-sample relative-error CSV");

  BenchOpts bno;
  CLI::App* cbench = app.add_subcommand("bench", "time per-estimate cost of oracle and surrogate");
  Bindings bbench;
  bbench.add_string(cbench, "--mode", bno.mode, "oracle (sweep n_ai) or nn (sweep batch size)");
  bbench.add_int(cbench, "--n-ai", bno.n_ai, "oracle: sweep cap; nn: ratio reference depth");
  bbench.add_int(cbench, "--batch", bno.batch, "nn: largest batch size swept");
  bbench.add_int(cbench, "--configs", bno.configs, "random cut configs to time");
  bbench.add_int(cbench, "--repeat", bno.repeat, "timed passes (median reported)");
  bbench.add_string(cbench, "--model", bno.model, "model JSON (nn mode)");
  bbench.add_string(cbench, "--out", bno.out, "timing CSV path");

  SolveOpts so;
  CLI::App* csolve = app.add_subcommand("solve", "solve the flower benchmark problem");
  Bindings bsolve;
  bsolve.add_string(csolve, "--lambda-source", so.lambda_source, "oracle, nn, or both");
  bsolve.add_int(csolve, "--lmin", so.lmin, "coarsest refinement level");
  bsolve.add_int(csolve, "--lmax", so.lmax, "finest refinement level (cut cells)");
  bsolve.add_double(csolve, "--safety", so.safety, "stabilization safety factor");
  bsolve.add_double(csolve, "--rel-tol", so.rel_tol, "CG relative tolerance");
  bsolve.add_string(csolve, "--model", so.model, "model JSON (nn/both)");
  bsolve.add_string(csolve, "--report", so.report, "comparison report CSV (both)");
  bsolve.add_string(csolve, "--out", so.out, "solution CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::map<std::string, Bindings*> per_command = {
      {"gen-data", &bgen}, {"train", &btrain}, {"eval", &beval},
      {"bench", &bbench},  {"solve", &bsolve},
  };

  try {
    CLI::App* active = app.get_subcommands().front();
    if (!config_path.empty()) {
      require_file(config_path, "config file");
      std::ifstream f(config_path, std::ios::binary);
      std::stringstream buf;
      buf << f.rdbuf();
      const auto kv = cli::parse_config_text(buf.str());

      for (const auto& [key, value] : kv) {
        bool known = global.by_key.count(key) > 0;
        for (const auto& [name, b] : per_command) known = known || b->by_key.count(key) > 0;
        require(known, Errc::bad_input, "unknown config key '" + key + "'");
      }
      // apply globals, then the active command's keys; explicit flags win
      Bindings* cmd_bindings = per_command.at(active->get_name());
      for (Bindings* b : {&global, cmd_bindings})
        for (auto& [key, binding] : b->by_key)
          if (binding.opt->count() == 0 && kv.count(key)) binding.apply(kv.at(key));
    }

    require(threads >= 1 && threads <= 256, Errc::bad_input, "threads must be in [1, 256]");

    const std::string name = active->get_name();
    if (name == "gen-data") return cmd_gen_data(gen, threads, seed);
    if (name == "train") return cmd_train(tro, threads, seed);
    if (name == "eval") return cmd_eval(evo, threads);
    if (name == "bench") return cmd_bench(bno, threads, seed);
    return cmd_solve(so, threads);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
