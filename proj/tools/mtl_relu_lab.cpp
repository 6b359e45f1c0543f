// mtl-relu-lab: experiment and analysis front end.
//
//   mtl-relu-lab <subcommand> --config path.json [--out dir]
//
// Exit codes: 0 success, 2 soft-criterion miss, 1 hard failure or error.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>

#include "mtlrelu/cpwl.hpp"
#include "mtlrelu/dataset.hpp"
#include "mtlrelu/experiments.hpp"
#include "mtlrelu/kernel.hpp"
#include "mtlrelu/mtl_analysis.hpp"
#include "mtlrelu/network.hpp"
#include "mtlrelu/training.hpp"

namespace fs = std::filesystem;
using namespace mtlrelu;
namespace ex = mtlrelu::experiments;

namespace {

struct Invocation {
  std::string name;
  fs::path config_path;
  io::json config;
  fs::path out;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  ex::Artifacts* artifacts = nullptr;
};

template <class T>
T get_or(const io::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<T>();
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::schema_error, "config key '" + key + "': " + e.what());
  }
}

// Paths in a config are relative to the config file.
fs::path config_path(const Invocation& inv, const std::string& key) {
  require(inv.config.contains(key) && inv.config[key].is_string(), ErrorCode::schema_error,
          "config needs a string '" + key + "'");
  fs::path p = inv.config[key].get<std::string>();
  return p.is_absolute() ? p : inv.config_path.parent_path() / p;
}

MultiTaskDataset load_dataset(const Invocation& inv) { return load_csv(config_path(inv, "dataset")); }

ShallowReLUNet load_net(const Invocation& inv) { return net_from_json(io::read_json(config_path(inv, "net"))); }

void write_manifest(const Invocation& inv, ex::Artifacts& art, int exit_code) {
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - inv.start).count();
  auto files = art.files();
  files.push_back("manifest.json");
  io::json seeds = io::json::array();
  if (inv.config.contains("seed")) seeds.push_back(inv.config["seed"]);
  if (inv.config.contains("train") && inv.config["train"].contains("seed")) seeds.push_back(inv.config["train"]["seed"]);
  io::write_json(art.dir() / "manifest.json",
                 {{"subcommand", inv.name},
                  {"config", inv.config},
                  {"config_hash", ex::hex64(io::fnv1a(inv.config.dump()))},
                  {"versions", {{"mtl_relu_lab", kVersion}}},
                  {"seeds", seeds},
                  {"wall_seconds", wall},
                  {"exit_code", exit_code},
                  {"files", files}});
}

// Grid over the input range padded by a quarter of its width on each side.
Eigen::VectorXd padded_grid(const MultiTaskDataset& data, int points) {
  const double lo = data.inputs().col(0).minCoeff(), hi = data.inputs().col(0).maxCoeff();
  const double pad = 0.25 * (hi - lo);
  return Eigen::VectorXd::LinSpaced(points, lo - pad, hi + pad);
}

std::vector<std::string> task_header(const std::string& first, Eigen::Index T) {
  std::vector<std::string> h = {first};
  for (Eigen::Index t = 0; t < T; ++t) h.push_back("y" + std::to_string(t + 1));
  return h;
}

int cmd_train(Invocation& inv, ex::Artifacts& art) {
  const auto data = load_dataset(inv);
  const auto cfg = train_config_from_json(get_or(inv.config, "train", io::json::object()));
  try {
    const auto [net, rep] = train_from_scratch(data, cfg);
    art.write_json("net.json", to_json(net));
    art.write_json("train_report.json", to_json(rep));
    art.write("trace.csv", trace_csv(rep));
    std::cout << "final objective " << io::format_double(rep.final_objective) << " after " << rep.iterations_run
              << " iterations\n";
    return 0;
  } catch (const TrainingDiverged& e) {
    TrainReport partial;
    partial.objective_trace = e.trace();
    art.write("trace.csv", trace_csv(partial));
    throw;
  }
}

int cmd_ctd(Invocation& inv, ex::Artifacts& art) {
  const auto data = load_dataset(inv);
  const auto f = connect_the_dots(data);
  const Eigen::VectorXd grid = padded_grid(data, get_or(inv.config, "grid_points", 1000));
  Eigen::MatrixXd samples(grid.size(), 1 + data.num_tasks());
  samples.col(0) = grid;
  samples.rightCols(data.num_tasks()) = evaluate(f, grid);
  art.write_json("ctd.json", {{"function", to_json(f)}, {"representational_cost", representational_cost(f)}});
  art.write("samples.csv", io::csv_table(task_header("x", data.num_tasks()), samples));
  std::cout << "connect-the-dots: " << f.num_knots() << " knots, cost " << io::format_double(representational_cost(f))
            << "\n";
  return 0;
}

int cmd_cost(Invocation& inv, ex::Artifacts& art) {
  const auto net = load_net(inv);
  io::json out = {{"width", net.width()},
                  {"path_norm_cost", path_norm_cost(net)},
                  {"weight_decay_cost", weight_decay_cost(net)},
                  {"unit_normalized", is_unit_normalized(net)}};
  if (net.input_dim() == 1) {
    const auto canon = canonicalize_univariate(unit_normalize(net));
    const auto f = net_to_cpwl(canon);
    out["representational_cost"] = representational_cost(f);
    out["function"] = to_json(f);
    if (inv.config.contains("dataset")) {
      const auto data = load_dataset(inv);
      const auto ctd = connect_the_dots(data);
      const double err = (evaluate(f, data.xs()) - data.labels()).cwiseAbs().maxCoeff();
      out["max_interpolation_error"] = err;
      out["ctd_cost"] = representational_cost(ctd);
      out["cost_minus_ctd"] = representational_cost(f) - representational_cost(ctd);
      const Eigen::VectorXd grid = padded_grid(data, get_or(inv.config, "grid_points", 1000));
      Eigen::MatrixXd samples(grid.size(), 1 + net.num_tasks());
      samples.col(0) = grid;
      samples.rightCols(net.num_tasks()) = evaluate(f, grid);
      art.write("samples.csv", io::csv_table(task_header("x", net.num_tasks()), samples));
    }
  }
  art.write_json("cost.json", out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_check_uniqueness(Invocation& inv, ex::Artifacts& art) {
  const auto data = load_dataset(inv);
  const auto rep = uniqueness_report(data, get_or(inv.config, "cosine_tolerance", 1e-9),
                                     get_or(inv.config, "nonzero_tolerance", 1e-9));
  art.write_json("uniqueness.json", to_json(rep));
  std::cout << to_string(rep.verdict) << "\n";
  return 0;
}

int cmd_kernel_fit(Invocation& inv, ex::Artifacts& art) {
  const auto data = load_dataset(inv);
  const auto task = get_or<Eigen::Index>(inv.config, "task", 0);
  const auto variant = get_or<std::string>(inv.config, "kernel", "sobolev_h1");
  KernelSpec spec;
  if (variant == "sobolev_h1") {
    spec = sobolev_for(data);
  } else {
    require(variant == "neuron_kernel", ErrorCode::schema_error, "kernel must be 'sobolev_h1' or 'neuron_kernel'");
    spec = neuron_kernel_from_net(load_net(inv), gamma_mode_from_string(get_or<std::string>(inv.config, "gamma_mode", "common")),
                                  get_or<Eigen::Index>(inv.config, "gamma_task", 0), get_or(inv.config, "threshold", -1.0));
  }
  const auto model = kernel_ridge(spec, data, task, get_or(inv.config, "lambda", 0.0));
  art.write_json("model.json", to_json(model));
  Eigen::MatrixXd points;
  std::vector<std::string> header;
  if (data.input_dim() == 1) {
    points = padded_grid(data, get_or(inv.config, "grid_points", 1000));
    header = {"x"};
  } else if (data.input_dim() == 2) {
    const double half = 1.25 * data.inputs().cwiseAbs().maxCoeff();
    points = ex::detail::square_grid(get_or(inv.config, "grid_points", 101), half);
    header = {"x1", "x2"};
  } else {
    points = data.inputs();
    for (Eigen::Index j = 0; j < data.input_dim(); ++j) header.push_back("x" + std::to_string(j + 1));
  }
  Eigen::MatrixXd table(points.rows(), points.cols() + 1);
  table.leftCols(points.cols()) = points;
  table.col(points.cols()) = predict_batch(model, points);
  header.push_back("prediction");
  art.write("predictions.csv", io::csv_table(header, table));
  const double resid = (predict_batch(model, data.inputs()) + model.lambda * model.alpha - data.labels().col(task)).norm();
  std::cout << "fitted " << model.alpha.size() << " coefficients, system residual " << io::format_double(resid)
            << ", jitter " << io::format_double(model.jitter) << "\n";
  return 0;
}

int cmd_compare_jh(Invocation& inv, ex::Artifacts& art) {
  const auto data = load_dataset(inv);
  const auto net = load_net(inv);
  const auto s = get_or<Eigen::Index>(inv.config, "task", 0);
  TrainConfig tc;
  tc.lambda = get_or(inv.config, "lambda", tc.lambda);
  tc.loss = loss_form_from_string(get_or<std::string>(inv.config, "loss", "mean"));
  const double lam = path_norm_lambda(tc, data.num_points());
  const auto fp = build_feature_problem(net, data, s, lam, get_or(inv.config, "threshold", -1.0));
  const Eigen::VectorXd vs = fp.v_star.col(s);
  io::json report = {{"task", s}, {"features", fp.num_features()}, {"path_lambda", lam}, {"h_defined", fp.h_defined()}};
  Eigen::VectorXd v_prime = Eigen::VectorXd::Constant(fp.num_features(), std::numeric_limits<double>::quiet_NaN());
  if (fp.h_defined()) {
    v_prime = solve_weighted_l2(fp);
    const auto g = gap_report(fp, vs, v_prime);
    report["gap"] = to_json(g);
    Rng rng(get_or<std::uint64_t>(inv.config, "seed", 0), 0xba11);
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < get_or(inv.config, "samples", 1000); ++k) {
      const Eigen::VectorXd v = sample_t16_ball(vs, fp.num_tasks(), rng);
      worst = std::max(worst, objective_J(fp, v) - objective_H(fp, v));
    }
    report["max_j_minus_h_on_ball"] = worst;
  } else {
    report["j_at_star"] = objective_J(fp, vs);
  }
  if (fp.num_tasks() >= 2) {
    report["exchangeability"] = to_json(exchangeability_diagnostics(fp.v_star, get_or(inv.config, "beta", 2.0 / 3.0),
                                                                    get_or(inv.config, "slack", 0.10)));
    const auto d = gamma_dispersion(fp.v_star);
    report["gamma_dispersion"] = {{"max_rel", d.max_rel}, {"median_rel", d.median_rel}};
  }
  const Eigen::VectorXd common = gamma_weights(fp, GammaMode::common);
  Eigen::MatrixXd table(fp.num_features(), 5);
  for (Eigen::Index k = 0; k < fp.num_features(); ++k)
    table.row(k) << static_cast<double>(fp.active[static_cast<std::size_t>(k)]), fp.gamma_s(k), common(k), vs(k),
        v_prime(k);
  art.write_json("report.json", report);
  art.write("gamma.csv", io::csv_table({"neuron", "gamma_ks", "gamma_k", "v_star_s", "v_prime"}, table));
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_experiment(Invocation& inv, ex::Kind kind) {
  io::json j = inv.config;
  if (!j.contains("experiment")) j["experiment"] = ex::to_string(kind);
  auto cfg = ex::experiment_config_from_json(j);
  require(cfg.experiment == kind, ErrorCode::schema_error,
          "config is for '" + ex::to_string(cfg.experiment) + "', not '" + ex::to_string(kind) + "'");
  cfg.output_dir = inv.out;
  const auto result = ex::run(cfg);
  for (const auto& c : result.criteria)
    std::cout << (c.passed ? "PASS " : (c.hard ? "FAIL " : "MISS ")) << c.name << ": " << io::format_double(c.value)
              << " " << c.relation << " " << io::format_double(c.threshold) << (c.hard ? "" : " (soft)") << "\n";
  std::cout << "artifacts in " << inv.out.string() << " (" << io::format_double(result.wall_seconds) << " s)\n";
  return result.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shallow ReLU multi-task experiments: connect-the-dots, kernels, J/H comparison"};
  app.require_subcommand(1);
  std::string config_file, out_dir;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train a net on a dataset CSV"},
      {"ctd", "connect-the-dots interpolant of a univariate dataset"},
      {"cost", "path-norm and representational cost of a net"},
      {"check-uniqueness", "alignment test for the minimum-cost interpolant"},
      {"kernel-fit", "Sobolev or neuron-kernel ridge fit"},
      {"compare-jh", "J versus H and weighted-l2 gap for one task of a trained net"},
      {"fig4", "univariate single- versus multi-task experiment"},
      {"fig5", "two-squares experiment with the RKHS fit"},
      {"teacher", "student-teacher sparsity experiment"},
      {"t-sweep", "J/H gap and exchangeability versus task count"},
      {"uniq-mc", "Monte Carlo of uniqueness verdicts"}};
  for (const auto& [name, desc] : commands) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_file, "JSON config")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory");
  }
  CLI11_PARSE(app, argc, argv);

  Invocation inv;
  inv.name = app.get_subcommands().front()->get_name();
  inv.config_path = fs::absolute(config_file);
  int code = 1;
  try {
    inv.config = io::read_json(inv.config_path);
    require(inv.config.is_object(), ErrorCode::schema_error, "config must be a JSON object");
    if (!out_dir.empty())
      inv.out = out_dir;
    else if (inv.config.contains("output_dir"))
      inv.out = inv.config_path.parent_path() / inv.config["output_dir"].get<std::string>();
    else
      inv.out = fs::path("mtl_relu_out") / inv.name;

    if (inv.name == "fig4") return cmd_experiment(inv, ex::Kind::fig4_univariate);
    if (inv.name == "fig5") return cmd_experiment(inv, ex::Kind::fig5_two_squares);
    if (inv.name == "teacher") return cmd_experiment(inv, ex::Kind::appendix_teacher);
    if (inv.name == "t-sweep") return cmd_experiment(inv, ex::Kind::t_sweep);
    if (inv.name == "uniq-mc") return cmd_experiment(inv, ex::Kind::uniqueness_montecarlo);

    ex::Artifacts art(inv.out);
    if (inv.name == "train") code = cmd_train(inv, art);
    else if (inv.name == "ctd") code = cmd_ctd(inv, art);
    else if (inv.name == "cost") code = cmd_cost(inv, art);
    else if (inv.name == "check-uniqueness") code = cmd_check_uniqueness(inv, art);
    else if (inv.name == "kernel-fit") code = cmd_kernel_fit(inv, art);
    else if (inv.name == "compare-jh") code = cmd_compare_jh(inv, art);
    write_manifest(inv, art, code);
    return code;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 1;
}
