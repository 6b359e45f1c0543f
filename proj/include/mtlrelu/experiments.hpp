#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mtlrelu/cpwl.hpp"
#include "mtlrelu/dataset.hpp"
#include "mtlrelu/error.hpp"
#include "mtlrelu/io.hpp"
#include "mtlrelu/kernel.hpp"
#include "mtlrelu/mtl_analysis.hpp"
#include "mtlrelu/network.hpp"
#include "mtlrelu/parallel.hpp"
#include "mtlrelu/training.hpp"

namespace mtlrelu {

inline constexpr const char* kVersion = "0.1.0";

namespace experiments {

enum class Kind { fig4_univariate, fig5_two_squares, appendix_teacher, t_sweep, uniqueness_montecarlo };

inline Kind kind_from_string(const std::string& s) {
  if (s == "fig4_univariate" || s == "fig4") return Kind::fig4_univariate;
  if (s == "fig5_two_squares" || s == "fig5") return Kind::fig5_two_squares;
  if (s == "appendix_teacher" || s == "teacher") return Kind::appendix_teacher;
  if (s == "t_sweep" || s == "t-sweep") return Kind::t_sweep;
  if (s == "uniqueness_montecarlo" || s == "uniq-mc") return Kind::uniqueness_montecarlo;
  throw Error(ErrorCode::schema_error, "unknown experiment '" + s + "'");
}

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::fig4_univariate: return "fig4_univariate";
    case Kind::fig5_two_squares: return "fig5_two_squares";
    case Kind::appendix_teacher: return "appendix_teacher";
    case Kind::t_sweep: return "t_sweep";
    case Kind::uniqueness_montecarlo: return "uniqueness_montecarlo";
  }
  return "unknown";
}

/// Pass/fail line of an experiment. Soft criteria report a miss without
/// failing the run.
struct Criterion {
  std::string name;
  double value;
  std::string relation;  // "<=", "<", ">", ">=", "=="
  double threshold;
  bool passed;
  bool hard;
};

inline Criterion check(std::string name, double value, const std::string& relation, double threshold, bool hard) {
  bool ok = false;
  if (relation == "<=") ok = value <= threshold;
  else if (relation == "<") ok = value < threshold;
  else if (relation == ">") ok = value > threshold;
  else if (relation == ">=") ok = value >= threshold;
  else if (relation == "==") ok = value == threshold;
  else throw Error(ErrorCode::invalid_argument, "unknown relation '" + relation + "'");
  return {std::move(name), value, relation, threshold, ok && std::isfinite(value), hard};
}

inline io::json to_json(const Criterion& c) {
  return {{"name", c.name},     {"value", std::isfinite(c.value) ? io::json(c.value) : io::json(nullptr)},
          {"relation", c.relation}, {"threshold", c.threshold},
          {"passed", c.passed}, {"hard", c.hard}};
}

struct Result {
  io::json report;
  std::vector<Criterion> criteria;
  double wall_seconds = 0.0;

  /// 0 all passed, 2 only soft misses, 1 a hard failure.
  int exit_code() const {
    bool soft_miss = false;
    for (const auto& c : criteria) {
      if (!c.passed && c.hard) return 1;
      if (!c.passed) soft_miss = true;
    }
    return soft_miss ? 2 : 0;
  }
};

struct ExperimentConfig {
  Kind experiment = Kind::fig4_univariate;
  std::vector<std::uint64_t> seeds;
  TrainConfig train;
  TaskGenSpec taskgen;
  std::filesystem::path output_dir;  // empty: no artifacts are written
  std::map<std::string, double> tolerances;
  io::json params = io::json::object();  // experiment-specific knobs

  double tol(const std::string& key) const {
    const auto it = tolerances.find(key);
    require(it != tolerances.end(), ErrorCode::schema_error, "missing tolerance '" + key + "'");
    return it->second;
  }

  template <class T>
  T param(const std::string& key) const {
    require(params.contains(key), ErrorCode::schema_error, "missing parameter '" + key + "'");
    try {
      return params[key].get<T>();
    } catch (const io::json::exception& e) {
      throw Error(ErrorCode::schema_error, "parameter '" + key + "': " + e.what());
    }
  }

  void validate() const {
    require(!seeds.empty(), ErrorCode::schema_error, "seeds must be nonempty");
    train.validate();
  }
};

inline TrainConfig fixed_iterations(TrainConfig c, long iters, int check_every) {
  c.max_iters = iters;
  c.check_every = check_every;
  // plateau detection off: the window is longer than the run
  c.plateau_window = static_cast<int>(iters / check_every) + 1;
  return c;
}

/// Defaults reproduce the desk-scale experiments described in the README.
inline ExperimentConfig default_config(Kind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  switch (kind) {
    case Kind::fig4_univariate:
      c.seeds = {0, 1, 2};
      c.train.lambda = 1e-5;
      c.train.width = 20;
      c.train.learning_rate = 3e-3;
      c.train = fixed_iterations(c.train, 3000000, 1000);
      c.taskgen = {TaskKind::gaussian, 1, 42};
      c.tolerances = {{"sup_fraction", 0.05}, {"spread_ratio", 2.0}};
      c.params = {{"grid_points", 1000}, {"padding", 0.25}};
      break;
    case Kind::fig5_two_squares:
      c.seeds = {0, 1, 2};
      c.train.lambda = 1e-3;
      c.train.width = 800;
      c.train.learning_rate = 1e-3;
      c.train.skip_connection = false;
      c.train = fixed_iterations(c.train, 100000, 1000);
      c.taskgen = {TaskKind::bernoulli, 100, 7};
      c.tolerances = {{"spread_ratio", 0.5}, {"mse", 1e-4}};
      c.params = {{"grid_points", 101}, {"grid_half_width", 1.5}, {"rkhs_task_seed", 11}, {"gamma_mode", "common"}};
      break;
    case Kind::appendix_teacher:
      c.seeds = {0};
      c.train.lambda = 1e-4;
      c.train.width = 800;
      c.train.learning_rate = 2e-3;
      c.train.skip_connection = false;
      c.train = fixed_iterations(c.train, 500000, 1000);
      c.taskgen = {TaskKind::student_teacher, 25, 5, 25, 5, 20};
      c.tolerances = {{"mse", 1e-4},          {"single_active_min", 2}, {"single_active_max", 10},
                      {"multi_active_min", 50}, {"multi_active_max", 400}};
      c.params = {{"slice_points", 201}, {"slice_half_width", 3.0}};
      break;
    case Kind::t_sweep:
      c.seeds = {0, 1, 2, 3, 4};
      c.train.lambda = 1e-3;
      c.train.width = 200;
      c.train.learning_rate = 1e-3;
      c.train.skip_connection = false;
      c.train = fixed_iterations(c.train, 100000, 1000);
      c.taskgen = {TaskKind::bernoulli, 64, 100};
      c.tolerances = {{"j_le_h", 1e-12}, {"slack", 0.10}, {"exp_one", 1e-12}};
      c.params = {{"task_counts", {4, 16, 64}}, {"samples", 1000}, {"beta", 2.0 / 3.0}};
      break;
    case Kind::uniqueness_montecarlo:
      c.seeds = {2024};
      c.taskgen = {TaskKind::gaussian, 2, 2024};
      c.tolerances = {{"cosine", 1e-9}};
      c.params = {{"datasets", 10000}, {"points", 6}, {"tasks", 2}, {"aligned_datasets", 1000}};
      break;
  }
  return c;
}

inline io::json to_json(const TaskGenSpec& t) {
  return {{"kind", to_string(t.kind)},
          {"count", t.count},
          {"seed", t.seed},
          {"teacher_neurons", t.teacher_neurons},
          {"teacher_dim", t.teacher_dim},
          {"teacher_points", t.teacher_points}};
}

inline TaskGenSpec taskgen_from_json(const io::json& j, TaskGenSpec t) {
  try {
    if (j.contains("kind")) t.kind = task_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("count")) t.count = j["count"].get<int>();
    if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("teacher_neurons")) t.teacher_neurons = j["teacher_neurons"].get<int>();
    if (j.contains("teacher_dim")) t.teacher_dim = j["teacher_dim"].get<int>();
    if (j.contains("teacher_points")) t.teacher_points = j["teacher_points"].get<int>();
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::schema_error, std::string("taskgen: ") + e.what());
  }
  return t;
}

inline io::json to_json(const ExperimentConfig& c) {
  io::json tol = io::json::object();
  for (const auto& [k, v] : c.tolerances) tol[k] = v;
  return {{"experiment", to_string(c.experiment)},
          {"seeds", c.seeds},
          {"train", to_json(c.train)},
          {"taskgen", to_json(c.taskgen)},
          {"output_dir", c.output_dir.string()},
          {"tolerances", tol},
          {"params", c.params}};
}

/// Reads a config; keys that are absent keep the experiment's defaults.
inline ExperimentConfig experiment_config_from_json(const io::json& j) {
  require(j.is_object() && j.contains("experiment"), ErrorCode::schema_error, "config needs an 'experiment' key");
  ExperimentConfig c = default_config(kind_from_string(j["experiment"].get<std::string>()));
  try {
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
    if (j.contains("taskgen")) c.taskgen = taskgen_from_json(j["taskgen"], c.taskgen);
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("tolerances"))
      for (auto it = j["tolerances"].begin(); it != j["tolerances"].end(); ++it)
        c.tolerances[it.key()] = it.value().get<double>();
    if (j.contains("params"))
      for (auto it = j["params"].begin(); it != j["params"].end(); ++it) c.params[it.key()] = it.value();
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::schema_error, std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Writes files under an output directory and remembers their names; does
/// nothing when the directory is empty.
class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir)) {}

  bool enabled() const { return !dir_.empty(); }

  void write(const std::string& name, const std::string& contents) {
    if (!enabled()) return;
    io::write_file(dir_ / name, contents);
    files_.push_back(name);
  }

  void write_json(const std::string& name, const io::json& j) { write(name, j.dump(2) + "\n"); }

  const std::vector<std::string>& files() const { return files_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Run manifest: enough to rerun the experiment exactly.
inline io::json manifest(const ExperimentConfig& cfg, const Result& r, const std::vector<std::string>& files) {
  const auto config = to_json(cfg);
  io::json crit = io::json::array();
  for (const auto& c : r.criteria) crit.push_back(to_json(c));
  return {{"experiment", to_string(cfg.experiment)},
          {"config", config},
          {"config_hash", hex64(io::fnv1a(config.dump()))},
          {"versions",
           {{"mtl_relu_lab", kVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
          {"seeds", cfg.seeds},
          {"threads", worker_threads()},
          {"wall_seconds", r.wall_seconds},
          {"criteria", crit},
          {"exit_code", r.exit_code()},
          {"files", files}};
}

namespace detail {

struct TrainedRun {
  ShallowReLUNet net;
  TrainReport report;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<double> pairwise_sup(const std::vector<Eigen::VectorXd>& curves) {
  std::vector<double> d;
  for (std::size_t a = 0; a < curves.size(); ++a)
    for (std::size_t b = a + 1; b < curves.size(); ++b) d.push_back((curves[a] - curves[b]).cwiseAbs().maxCoeff());
  return d;
}

inline double max_or_zero(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

inline Eigen::MatrixXd square_grid(int points, double half_width) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(points) * points, 2);
  const Eigen::VectorXd axis = Eigen::VectorXd::LinSpaced(points, -half_width, half_width);
  Eigen::Index r = 0;
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j, ++r) {
      g(r, 0) = axis(i);
      g(r, 1) = axis(j);
    }
  return g;
}

inline std::string net_file(const std::string& arm, std::uint64_t seed) {
  return "net_" + arm + "_seed" + std::to_string(seed) + ".json";
}

inline void finish(Result& r, const ExperimentConfig& cfg, Artifacts& art,
                   std::chrono::steady_clock::time_point start) {
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  io::json crit = io::json::array();
  for (const auto& c : r.criteria) crit.push_back(to_json(c));
  r.report["criteria"] = crit;
  r.report["exit_code"] = r.exit_code();
  art.write_json("report.json", r.report);
  if (art.enabled()) {
    auto files = art.files();
    files.push_back("manifest.json");
    io::write_json(art.dir() / "manifest.json", manifest(cfg, r, files));
  }
}

}  // namespace detail

/// Single-task versus two-task training on the five-point dataset: the
/// multi-task nets should all recover connect-the-dots while single-task
/// nets scatter over the non-unique solution set.
inline Result run_fig4(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Artifacts art(cfg.output_dir);
  const auto single = make_fig4_dataset();
  const auto multi = augment_with_random_tasks(single, cfg.taskgen);
  const auto ctd = connect_the_dots(single);
  const auto n = cfg.seeds.size();

  auto runs = parallel_map(2 * n, [&](std::size_t i) {
    TrainConfig c = cfg.train;
    c.seed = cfg.seeds[i % n];
    auto [net, rep] = train_from_scratch(i < n ? single : multi, c);
    return detail::TrainedRun{std::move(net), std::move(rep)};
  });

  const int points = cfg.param<int>("grid_points");
  const double x1 = single.inputs()(0, 0), xn = single.inputs()(single.num_points() - 1, 0);
  const double pad = cfg.param<double>("padding") * (xn - x1);
  const Eigen::VectorXd inner = Eigen::VectorXd::LinSpaced(points, x1, xn);
  const Eigen::VectorXd padded = Eigen::VectorXd::LinSpaced(points, x1 - pad, xn + pad);
  const Eigen::VectorXd ctd_inner = evaluate(ctd, inner).col(0);
  const double label_range = single.labels().maxCoeff() - single.labels().minCoeff();

  std::vector<Eigen::VectorXd> curves_single, curves_multi;
  std::vector<double> sup_single, sup_multi;
  Eigen::MatrixXd samples(points, 2 + 2 * static_cast<Eigen::Index>(n));
  samples.col(0) = padded;
  samples.col(1) = evaluate(ctd, padded).col(0);
  std::vector<std::string> header = {"x", "connect_the_dots"};
  io::json runs_json = io::json::array();
  std::string sup_csv = "arm,seed,sup_to_ctd\n";
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const bool is_multi = i >= n;
    const auto seed = cfg.seeds[i % n];
    const auto& run = runs[i];
    Eigen::VectorXd curve = forward_batch(run.net, inner).col(0);
    const double sup = (curve - ctd_inner).cwiseAbs().maxCoeff();
    (is_multi ? curves_multi : curves_single).push_back(curve);
    (is_multi ? sup_multi : sup_single).push_back(sup);
    const std::string arm = is_multi ? "multi" : "single";
    samples.col(2 + static_cast<Eigen::Index>(i)) = forward_batch(run.net, padded).col(0);
    header.push_back(arm + "_seed" + std::to_string(seed));
    sup_csv += arm + "," + std::to_string(seed) + "," + io::format_double(sup) + "\n";
    runs_json.push_back({{"arm", arm},
                         {"seed", seed},
                         {"sup_to_ctd", sup},
                         {"final_loss", run.report.final_loss},
                         {"final_objective", run.report.final_objective},
                         {"iterations", run.report.iterations_run}});
    art.write_json(detail::net_file(arm, seed), to_json(run.net));
  }
  const double spread_single = detail::max_or_zero(detail::pairwise_sup(curves_single));
  const double spread_multi = detail::max_or_zero(detail::pairwise_sup(curves_multi));
  const double sup_multi_max = detail::max_or_zero(sup_multi);

  Result r;
  r.criteria.push_back(check("multi_task_sup_to_ctd", sup_multi_max, "<=", cfg.tol("sup_fraction") * label_range, true));
  r.criteria.push_back(
      check("single_spread_over_multi_spread", spread_single, ">", cfg.tol("spread_ratio") * spread_multi, true));
  r.criteria.push_back(check("multi_task_sup_below_single_spread", sup_multi_max, "<", spread_single, true));

  r.report = {{"experiment", to_string(cfg.experiment)},
              {"label_range", label_range},
              {"runs", runs_json},
              {"single_max_pairwise_sup", spread_single},
              {"multi_max_pairwise_sup", spread_multi},
              {"multi_max_sup_to_ctd", sup_multi_max},
              {"uniqueness_single", to_json(uniqueness_report(single))},
              {"uniqueness_multi", to_json(uniqueness_report(multi))}};
  art.write("dataset_single.csv", to_csv(single));
  art.write("dataset_multi.csv", to_csv(multi));
  art.write_json("reference_ctd.json", to_json(ctd));
  art.write("samples.csv", io::csv_table(header, samples));
  art.write("sup_distances.csv", sup_csv);
  art.write_json("uniqueness.json", {{"single", r.report["uniqueness_single"]}, {"multi", r.report["uniqueness_multi"]}});
  detail::finish(r, cfg, art, start);
  return r;
}

/// Two-squares interpolation with one task versus 1 + 100 random Bernoulli
/// tasks, plus the weighted-l2 (RKHS) fit over the neurons of a net trained
/// on random tasks only.
inline Result run_fig5(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Artifacts art(cfg.output_dir);
  const auto base = make_two_squares();
  const auto many = augment_with_random_tasks(base, cfg.taskgen);
  TaskGenSpec rkhs_tasks = cfg.taskgen;
  rkhs_tasks.seed = cfg.param<std::uint64_t>("rkhs_task_seed");
  const auto random_only = random_tasks_on(base.inputs(), rkhs_tasks);
  const auto n = cfg.seeds.size();

  // jobs: n single-task, n multi-task, 1 random-task net for the RKHS fit
  auto runs = parallel_map(2 * n + 1, [&](std::size_t i) {
    TrainConfig c = cfg.train;
    c.seed = cfg.seeds[i % n];
    const auto& d = i < n ? base : (i < 2 * n ? many : random_only);
    auto [net, rep] = train_from_scratch(d, c);
    return detail::TrainedRun{std::move(net), std::move(rep)};
  });

  const Eigen::MatrixXd grid = detail::square_grid(cfg.param<int>("grid_points"), cfg.param<double>("grid_half_width"));
  std::vector<Eigen::VectorXd> s_single, s_multi;
  Eigen::MatrixXd surfaces(grid.rows(), 2 * static_cast<Eigen::Index>(n) + 3);
  surfaces.leftCols(2) = grid;
  std::vector<std::string> header = {"x1", "x2"};
  io::json runs_json = io::json::array();
  double worst_mse = 0.0;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const bool is_multi = i >= n;
    const auto seed = cfg.seeds[i % n];
    const std::string arm = is_multi ? "multi" : "single";
    const auto& run = runs[i];
    Eigen::VectorXd s = forward_batch(run.net, grid).col(0);
    surfaces.col(2 + static_cast<Eigen::Index>(i)) = s;
    (is_multi ? s_multi : s_single).push_back(std::move(s));
    header.push_back(arm + "_seed" + std::to_string(seed));
    const double mse = task_mse(run.net, is_multi ? many : base, 0);
    worst_mse = std::max(worst_mse, mse);
    runs_json.push_back({{"arm", arm}, {"seed", seed}, {"task1_mse", mse}, {"final_objective", run.report.final_objective}});
    art.write_json(detail::net_file(arm, seed), to_json(run.net));
  }

  const auto& rnet = runs[2 * n].net;
  const auto mode = gamma_mode_from_string(cfg.param<std::string>("gamma_mode"));
  const NeuronKernel kernel = neuron_kernel_from_net(rnet, mode);
  const double lam = path_norm_lambda(cfg.train, base.num_points());
  const Eigen::VectorXd v_prime =
      solve_weighted_l2(kernel.features_batch(base.inputs()), base.labels().col(0), lam, 2.0 * kernel.q_diag);
  const Eigen::VectorXd rkhs = kernel.features_batch(grid) * v_prime;
  surfaces.col(surfaces.cols() - 1) = rkhs;
  header.push_back("rkhs");
  art.write_json("net_random_tasks.json", to_json(rnet));
  const double rkhs_fit_mse =
      (kernel.features_batch(base.inputs()) * v_prime - base.labels().col(0)).squaredNorm() / base.num_points();

  const auto pw_single = detail::pairwise_sup(s_single);
  const auto pw_multi = detail::pairwise_sup(s_multi);
  std::vector<double> rkhs_to_multi;
  for (const auto& s : s_multi) rkhs_to_multi.push_back((rkhs - s).cwiseAbs().maxCoeff());
  const double med_single = detail::median(pw_single), med_multi = detail::median(pw_multi);
  const double med_rkhs = detail::median(rkhs_to_multi);

  Result r;
  r.criteria.push_back(check("multi_spread_over_single_spread", med_multi, "<=", cfg.tol("spread_ratio") * med_single, false));
  r.criteria.push_back(check("rkhs_to_multi_within_single_spread", med_rkhs, "<=", med_single, false));
  r.criteria.push_back(
      check("rkhs_to_multi_within_multi_spread", med_rkhs, "<=", detail::max_or_zero(pw_multi), false));
  r.criteria.push_back(check("task1_mse_all_nets", worst_mse, "<", cfg.tol("mse"), false));
  r.report = {{"experiment", to_string(cfg.experiment)},
              {"runs", runs_json},
              {"single_pairwise_sup", pw_single},
              {"multi_pairwise_sup", pw_multi},
              {"single_median_pairwise_sup", med_single},
              {"multi_median_pairwise_sup", med_multi},
              {"rkhs_to_multi_sup", rkhs_to_multi},
              {"rkhs_median_sup_to_multi", med_rkhs},
              {"rkhs_features", kernel.weights.rows()},
              {"rkhs_fit_mse", rkhs_fit_mse},
              {"rkhs_path_lambda", lam},
              {"gamma_mode", cfg.param<std::string>("gamma_mode")}};
  art.write("dataset_two_squares.csv", to_csv(base));
  art.write("dataset_multi.csv", to_csv(many));
  art.write("dataset_random_tasks.csv", to_csv(random_only));
  art.write("surfaces.csv", io::csv_table(header, surfaces));
  detail::finish(r, cfg, art, start);
  return r;
}

/// Neurons with |v_k| above the scale-free default threshold after unit
/// normalization.
inline Eigen::Index active_count(const ShallowReLUNet& net) {
  const auto u = unit_normalize(net);
  return static_cast<Eigen::Index>(active_neurons(u, default_active_threshold(u)).size());
}

/// One single-task net per teacher neuron and one net on all tasks; compares
/// how many neurons each uses.
inline Result run_teacher(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Artifacts art(cfg.output_dir);
  const auto st = make_student_teacher(cfg.taskgen);
  const auto& data = st.data;
  const auto T = data.num_tasks();
  const auto seed = cfg.seeds.front();

  auto runs = parallel_map(static_cast<std::size_t>(T) + 1, [&](std::size_t i) {
    TrainConfig c = cfg.train;
    c.seed = seed;
    const auto d = i < static_cast<std::size_t>(T) ? data.select_tasks({static_cast<Eigen::Index>(i)}) : data;
    auto [net, rep] = train_from_scratch(d, c);
    return detail::TrainedRun{std::move(net), std::move(rep)};
  });

  std::string counts_csv = "net,task,active_neurons,mse\n";
  std::vector<double> single_counts;
  double worst_mse = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto& net = runs[static_cast<std::size_t>(t)].net;
    const double mse = task_mse(net, data.select_tasks({t}), 0);
    worst_mse = std::max(worst_mse, mse);
    const auto count = active_count(net);
    single_counts.push_back(static_cast<double>(count));
    counts_csv += "single," + std::to_string(t) + "," + std::to_string(count) + "," + io::format_double(mse) + "\n";
    art.write_json("net_single_task" + std::to_string(t) + ".json", to_json(net));
  }
  const auto& mnet = runs.back().net;
  const auto multi_count = active_count(mnet);
  double multi_worst = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) multi_worst = std::max(multi_worst, task_mse(mnet, data, t));
  worst_mse = std::max(worst_mse, multi_worst);
  counts_csv += "multi,all," + std::to_string(multi_count) + "," + io::format_double(multi_worst) + "\n";
  art.write_json("net_multi.json", to_json(mnet));

  // |v_kt| of the multi-task net's active neurons (rows) per task (columns)
  const auto un = unit_normalize(mnet);
  const auto active = active_neurons(un, default_active_threshold(un));
  Eigen::MatrixXd heat(static_cast<Eigen::Index>(active.size()), T);
  for (std::size_t j = 0; j < active.size(); ++j)
    heat.row(static_cast<Eigen::Index>(j)) = un.output_weights.row(active[j]).cwiseAbs();
  std::vector<std::string> heat_header;
  for (Eigen::Index t = 0; t < T; ++t) heat_header.push_back("task" + std::to_string(t));

  // 1-D slices x = s u along a random unit direction
  Rng rng(seed, 0x5e1ce);
  Eigen::VectorXd u(data.input_dim());
  for (Eigen::Index j = 0; j < u.size(); ++j) u(j) = rng.normal();
  u /= u.norm();
  const double hw = cfg.param<double>("slice_half_width");
  const Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(cfg.param<int>("slice_points"), -hw, hw);
  const Eigen::MatrixXd xs = s * u.transpose();
  Eigen::MatrixXd slices(s.size(), 1 + 3 * T);
  slices.col(0) = s;
  std::vector<std::string> slice_header = {"s"};
  const Eigen::MatrixXd teacher = (xs * st.teacher_weights.transpose()).cwiseMax(0.0);
  const Eigen::MatrixXd multi_out = forward_batch(mnet, xs);
  for (Eigen::Index t = 0; t < T; ++t) {
    slices.col(1 + 3 * t) = teacher.col(t);
    slices.col(2 + 3 * t) = forward_batch(runs[static_cast<std::size_t>(t)].net, xs).col(0);
    slices.col(3 + 3 * t) = multi_out.col(t);
    for (const char* arm : {"teacher", "single", "multi"}) slice_header.push_back(std::string(arm) + "_task" + std::to_string(t));
  }

  const double single_mean = std::accumulate(single_counts.begin(), single_counts.end(), 0.0) / single_counts.size();
  Result r;
  r.criteria.push_back(check("all_nets_mse", worst_mse, "<", cfg.tol("mse"), true));
  r.criteria.push_back(check("single_mean_active_at_least", single_mean, ">=", cfg.tol("single_active_min"), false));
  r.criteria.push_back(check("single_mean_active_at_most", single_mean, "<=", cfg.tol("single_active_max"), false));
  r.criteria.push_back(check("multi_active_at_least", static_cast<double>(multi_count), ">=", cfg.tol("multi_active_min"), false));
  r.criteria.push_back(check("multi_active_at_most", static_cast<double>(multi_count), "<=", cfg.tol("multi_active_max"), false));
  r.report = {{"experiment", to_string(cfg.experiment)},
              {"single_active_counts", single_counts},
              {"single_mean_active", single_mean},
              {"multi_active", multi_count},
              {"worst_mse", worst_mse},
              {"multi_worst_task_mse", multi_worst},
              {"slice_direction", io::to_json(u)}};
  art.write("dataset_teacher.csv", to_csv(data));
  art.write("active_counts.csv", counts_csv);
  art.write("multi_output_weights.csv", io::csv_table(heat_header, heat));
  art.write("slices.csv", io::csv_table(slice_header, slices));
  detail::finish(r, cfg, art, start);
  return r;
}

/// Trains two-squares nets on T random Bernoulli tasks for several T and
/// measures how close the single-task slice J is to its quadratic surrogate
/// H, the weighted-l2 gap, the spread of gamma and the exchangeability bounds.
inline Result run_t_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Artifacts art(cfg.output_dir);
  const auto base = make_two_squares();
  const auto task_counts = cfg.param<std::vector<int>>("task_counts");
  require(task_counts.size() >= 2 && std::is_sorted(task_counts.begin(), task_counts.end()),
          ErrorCode::schema_error, "task_counts must hold at least two increasing values");
  const int samples = cfg.param<int>("samples");
  const double beta = cfg.param<double>("beta");
  const auto n = cfg.seeds.size();

  struct Cell {
    int T;
    std::uint64_t seed;
    Eigen::Index features;
    double task1_mse;
    double jh_median;     // median over tasks of |J(v*) - H(v*)|
    double gap_median;    // median over tasks of J(v') - J(v*)
    double abs_gap_median;
    long undefined_tasks; // tasks where H is undefined
    double max_j_minus_h; // over the ball samples
    GammaDispersion dispersion;
    ExchangeabilityReport exch;
    double max_abs_v;
  };

  auto cells = parallel_map(task_counts.size() * n, [&](std::size_t i) {
    const int T = task_counts[i / n];
    const auto seed = cfg.seeds[i % n];
    TaskGenSpec tg = cfg.taskgen;
    tg.count = T;
    tg.seed = cfg.taskgen.seed + seed;
    const auto data = random_tasks_on(base.inputs(), tg);
    TrainConfig c = cfg.train;
    c.seed = seed;
    const auto [net, rep] = train_from_scratch(data, c);
    const double lam = path_norm_lambda(c, data.num_points());
    Cell cell{T, seed, 0, task_mse(net, data, 0), 0, 0, 0, 0, -std::numeric_limits<double>::infinity(), {}, {}, 0};
    std::vector<double> jh, gaps, abs_gaps;
    Rng rng(seed, 0xba11 + static_cast<std::uint64_t>(T));
    bool sampled = false;
    for (Eigen::Index s = 0; s < T; ++s) {
      const auto fp = build_feature_problem(net, data, s, lam);
      if (s == 0) {
        cell.features = fp.num_features();
        cell.dispersion = gamma_dispersion(fp.v_star);
        cell.exch = exchangeability_diagnostics(fp.v_star, beta, cfg.tol("slack"));
        cell.max_abs_v = fp.v_star.cwiseAbs().maxCoeff();
      }
      if (!fp.h_defined()) {
        ++cell.undefined_tasks;
        continue;
      }
      const Eigen::VectorXd vs = fp.v_star.col(s);
      const auto g = gap_report(fp, vs, solve_weighted_l2(fp));
      jh.push_back(std::abs(g.j_at_star - g.h_at_star));
      gaps.push_back(g.gap);
      abs_gaps.push_back(std::abs(g.gap));
      if (!sampled) {
        for (int k = 0; k < samples; ++k) {
          const Eigen::VectorXd v = sample_t16_ball(vs, T, rng);
          cell.max_j_minus_h = std::max(cell.max_j_minus_h, objective_J(fp, v) - objective_H(fp, v));
        }
        sampled = true;
      }
    }
    cell.jh_median = detail::median(jh);
    cell.gap_median = detail::median(gaps);
    cell.abs_gap_median = detail::median(abs_gaps);
    return cell;
  });

  std::string csv =
      "T,seed,features,task1_mse,jh_median,gap_median,abs_gap_median,undefined_tasks,max_j_minus_h,"
      "gamma_dispersion_median,gamma_dispersion_max,frac_ratio_large,bound_ratio_large,frac_subvector,"
      "bound_subvector,max_abs_v\n";
  io::json per_t = io::json::array();
  std::vector<double> jh_by_t, gap_by_t, disp_by_t;
  double max_j_minus_h = -std::numeric_limits<double>::infinity(), max_exp_one = 0.0;
  bool exch_pass_largest = true;
  for (std::size_t ti = 0; ti < task_counts.size(); ++ti) {
    std::vector<double> jh, gap, disp;
    for (std::size_t si = 0; si < n; ++si) {
      const auto& c = cells[ti * n + si];
      csv += std::to_string(c.T) + "," + std::to_string(c.seed) + "," + std::to_string(c.features) + "," +
             io::format_double(c.task1_mse) + "," + io::format_double(c.jh_median) + "," +
             io::format_double(c.gap_median) + "," + io::format_double(c.abs_gap_median) + "," +
             std::to_string(c.undefined_tasks) + "," + io::format_double(c.max_j_minus_h) + "," +
             io::format_double(c.dispersion.median_rel) + "," + io::format_double(c.dispersion.max_rel) + "," +
             io::format_double(c.exch.frac_ratio_large) + "," + io::format_double(c.exch.bound_ratio_large) + "," +
             io::format_double(c.exch.frac_subvector) + "," + io::format_double(c.exch.bound_subvector) + "," +
             io::format_double(c.max_abs_v) + "\n";
      jh.push_back(c.jh_median);
      gap.push_back(c.abs_gap_median);
      disp.push_back(c.dispersion.median_rel);
      max_j_minus_h = std::max(max_j_minus_h, c.max_j_minus_h);
      max_exp_one = std::max(max_exp_one, c.exch.max_exp_one_error);
      if (ti + 1 == task_counts.size()) exch_pass_largest = exch_pass_largest && c.exch.pass_ratio && c.exch.pass_subvector;
    }
    jh_by_t.push_back(detail::median(jh));
    gap_by_t.push_back(detail::median(gap));
    disp_by_t.push_back(detail::median(disp));
    per_t.push_back({{"T", task_counts[ti]},
                     {"median_abs_j_minus_h", jh_by_t.back()},
                     {"median_abs_gap", gap_by_t.back()},
                     {"median_gamma_dispersion", disp_by_t.back()}});
  }
  auto nonincreasing = [](const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
      if (!(v[i] <= v[i - 1])) return 0.0;
    return 1.0;
  };

  Result r;
  r.criteria.push_back(check("j_minus_h_on_ball_samples", max_j_minus_h, "<=", cfg.tol("j_le_h"), true));
  r.criteria.push_back(check("abs_j_minus_h_largest_T_below_smallest_T", jh_by_t.back(), "<", jh_by_t.front(), true));
  r.criteria.push_back(check("exchangeability_bounds_largest_T", exch_pass_largest ? 1.0 : 0.0, "==", 1.0, true));
  r.criteria.push_back(check("exp_one_identity", max_exp_one, "<=", cfg.tol("exp_one"), true));
  r.criteria.push_back(check("abs_j_minus_h_nonincreasing", nonincreasing(jh_by_t), "==", 1.0, false));
  r.criteria.push_back(check("gamma_dispersion_nonincreasing", nonincreasing(disp_by_t), "==", 1.0, false));
  r.criteria.push_back(check("abs_gap_nonincreasing", nonincreasing(gap_by_t), "==", 1.0, false));
  r.report = {{"experiment", to_string(cfg.experiment)},
              {"per_T", per_t},
              {"max_j_minus_h", max_j_minus_h},
              {"max_exp_one_error", max_exp_one}};
  art.write("t_sweep.csv", csv);
  detail::finish(r, cfg, art, start);
  return r;
}

/// Univariate dataset with standard normal inputs (sorted) and labels.
inline MultiTaskDataset gaussian_dataset(std::uint64_t seed, std::uint64_t index, Eigen::Index n, Eigen::Index T) {
  Rng rng(seed, index);
  Eigen::MatrixXd x(n, 1), y(n, T);
  for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = rng.normal();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index t = 0; t < T; ++t) y(i, t) = rng.normal();
  return MultiTaskDataset(std::move(x), std::move(y));
}

/// Convex first task (increasing secant slopes) and task t = t * task 1, so
/// every consecutive pair of slope differences is aligned.
inline MultiTaskDataset aligned_dataset(std::uint64_t seed, std::uint64_t index, Eigen::Index n, Eigen::Index T) {
  Rng rng(seed, index);
  Eigen::MatrixXd x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = rng.normal();
  std::sort(x.data(), x.data() + n);
  std::vector<double> slopes(static_cast<std::size_t>(n - 1));
  for (auto& s : slopes) s = rng.normal();
  std::sort(slopes.begin(), slopes.end());
  Eigen::MatrixXd y(n, T);
  y(0, 0) = rng.normal();
  for (Eigen::Index i = 1; i < n; ++i) y(i, 0) = y(i - 1, 0) + slopes[static_cast<std::size_t>(i - 1)] * (x(i, 0) - x(i - 1, 0));
  for (Eigen::Index t = 1; t < T; ++t) y.col(t) = static_cast<double>(t + 1) * y.col(0);
  return MultiTaskDataset(std::move(x), std::move(y));
}

inline double max_cosine(const AlignmentReport& rep) {
  double m = -1.0;
  for (const auto& e : rep.entries)
    if (e.both_nonzero) m = std::max(m, e.cosine);
  return m;
}

/// Alignment verdicts for random Gaussian datasets (expected all unique)
/// and for a constructed aligned family (expected all non-unique).
inline Result run_uniqueness_mc(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Artifacts art(cfg.output_dir);
  const auto datasets = cfg.param<long>("datasets");
  const auto aligned_n = cfg.param<long>("aligned_datasets");
  const auto N = cfg.param<Eigen::Index>("points");
  const auto T = cfg.param<Eigen::Index>("tasks");
  const double tol = cfg.tol("cosine");
  const auto seed = cfg.seeds.front();

  struct Row {
    bool non_unique;
    double max_cos;
  };
  auto gauss = parallel_map(static_cast<std::size_t>(datasets), [&](std::size_t i) {
    const auto rep = uniqueness_report(gaussian_dataset(seed, i, N, T), tol);
    return Row{rep.verdict == Verdict::non_unique, max_cosine(rep)};
  });
  auto aligned = parallel_map(static_cast<std::size_t>(aligned_n), [&](std::size_t i) {
    const auto rep = uniqueness_report(aligned_dataset(seed, 1000000 + i, N, T), tol);
    return Row{rep.verdict == Verdict::non_unique, max_cosine(rep)};
  });

  long gauss_non_unique = 0, aligned_non_unique = 0;
  double gauss_max_cos = -1.0;
  std::string csv = "family,index,verdict,max_cosine\n";
  for (std::size_t i = 0; i < gauss.size(); ++i) {
    gauss_non_unique += gauss[i].non_unique;
    gauss_max_cos = std::max(gauss_max_cos, gauss[i].max_cos);
    csv += "gaussian," + std::to_string(i) + "," + (gauss[i].non_unique ? "non-unique" : "unique") + "," +
           io::format_double(gauss[i].max_cos) + "\n";
  }
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    aligned_non_unique += aligned[i].non_unique;
    csv += "aligned," + std::to_string(i) + "," + (aligned[i].non_unique ? "non-unique" : "unique") + "," +
           io::format_double(aligned[i].max_cos) + "\n";
  }
  Result r;
  r.criteria.push_back(check("gaussian_non_unique_count", static_cast<double>(gauss_non_unique), "==", 0.0, true));
  r.criteria.push_back(
      check("aligned_non_unique_count", static_cast<double>(aligned_non_unique), "==", static_cast<double>(aligned_n), true));
  r.report = {{"experiment", to_string(cfg.experiment)},
              {"gaussian_datasets", datasets},
              {"gaussian_non_unique", gauss_non_unique},
              {"gaussian_max_cosine", gauss_max_cos},
              {"aligned_datasets", aligned_n},
              {"aligned_non_unique", aligned_non_unique},
              {"cosine_tolerance", tol}};
  art.write("verdicts.csv", csv);
  detail::finish(r, cfg, art, start);
  return r;
}

inline Result run(const ExperimentConfig& cfg) {
  switch (cfg.experiment) {
    case Kind::fig4_univariate: return run_fig4(cfg);
    case Kind::fig5_two_squares: return run_fig5(cfg);
    case Kind::appendix_teacher: return run_teacher(cfg);
    case Kind::t_sweep: return run_t_sweep(cfg);
    case Kind::uniqueness_montecarlo: return run_uniqueness_mc(cfg);
  }
  throw Error(ErrorCode::invalid_argument, "unknown experiment");
}

}  // namespace experiments
}  // namespace mtlrelu
