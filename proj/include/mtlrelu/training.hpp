#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtlrelu/dataset.hpp"
#include "mtlrelu/error.hpp"
#include "mtlrelu/io.hpp"
#include "mtlrelu/network.hpp"
#include "mtlrelu/rng.hpp"

namespace mtlrelu {

/// How the data-fit term is scaled: mean over points (sum_i |r_i|^2 / N) or
/// plain sum over points. The sum form matches the regularized-loss problem
/// literally; the mean form matches MSE training.
enum class LossForm { mean, sum };

inline LossForm loss_form_from_string(const std::string& s) {
  if (s == "mean") return LossForm::mean;
  if (s == "sum") return LossForm::sum;
  throw Error(ErrorCode::schema_error, "loss must be 'mean' or 'sum', got '" + s + "'");
}

inline std::string to_string(LossForm f) { return f == LossForm::mean ? "mean" : "sum"; }

/// Which neuron weights weight decay applies to. Biases and the residual are
/// never regularized, so they have no flag.
struct RegularizedBlocks {
  bool input_weights = true;
  bool output_weights = true;
};

struct TrainConfig {
  double lambda = 1e-5;
  Eigen::Index width = 20;
  double learning_rate = 1e-3;
  long max_iters = 500000;
  double plateau_tol = 1e-7;
  int plateau_window = 20;
  int check_every = 1000;
  std::uint64_t seed = 0;
  RegularizedBlocks regularize{};
  bool skip_connection = true;
  LossForm loss = LossForm::mean;

  void validate() const {
    require(lambda >= 0.0, ErrorCode::invalid_argument, "lambda must be >= 0");
    require(width >= 1, ErrorCode::invalid_argument, "width must be >= 1");
    require(learning_rate > 0.0, ErrorCode::invalid_argument, "learning_rate must be > 0");
    require(max_iters >= 1, ErrorCode::invalid_argument, "max_iters must be >= 1");
    require(plateau_tol > 0.0, ErrorCode::invalid_argument, "plateau_tol must be > 0");
    require(plateau_window >= 1, ErrorCode::invalid_argument, "plateau_window must be >= 1");
    require(check_every >= 1, ErrorCode::invalid_argument, "check_every must be >= 1");
  }
};

/// Penalty weight of the path-norm form (sum-of-squares loss + lambda' sum_k |v_k|)
/// that a weight-decay objective with coefficient `lambda` is equivalent to at
/// balanced optima: 2 lambda for the sum form, 2 N lambda for the mean form.
inline double path_norm_lambda(const TrainConfig& cfg, Eigen::Index num_points) {
  return cfg.loss == LossForm::mean ? 2.0 * cfg.lambda * static_cast<double>(num_points) : 2.0 * cfg.lambda;
}

inline io::json to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"width", c.width},
          {"learning_rate", c.learning_rate},
          {"max_iters", c.max_iters},
          {"plateau_tol", c.plateau_tol},
          {"plateau_window", c.plateau_window},
          {"check_every", c.check_every},
          {"seed", c.seed},
          {"regularize", {{"input_weights", c.regularize.input_weights}, {"output_weights", c.regularize.output_weights}}},
          {"skip_connection", c.skip_connection},
          {"loss", to_string(c.loss)}};
}

inline TrainConfig train_config_from_json(const io::json& j, TrainConfig c = {}) {
  try {
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    if (j.contains("width")) c.width = j["width"].get<Eigen::Index>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("max_iters")) c.max_iters = j["max_iters"].get<long>();
    if (j.contains("plateau_tol")) c.plateau_tol = j["plateau_tol"].get<double>();
    if (j.contains("plateau_window")) c.plateau_window = j["plateau_window"].get<int>();
    if (j.contains("check_every")) c.check_every = j["check_every"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("regularize")) {
      const auto& r = j["regularize"];
      if (r.contains("input_weights")) c.regularize.input_weights = r["input_weights"].get<bool>();
      if (r.contains("output_weights")) c.regularize.output_weights = r["output_weights"].get<bool>();
      for (auto it = r.begin(); it != r.end(); ++it)
        require(it.key() == "input_weights" || it.key() == "output_weights", ErrorCode::schema_error,
                "only input_weights/output_weights can be regularized, got '" + it.key() + "'");
    }
    if (j.contains("skip_connection")) c.skip_connection = j["skip_connection"].get<bool>();
    if (j.contains("loss")) c.loss = loss_form_from_string(j["loss"].get<std::string>());
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::schema_error, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

struct TraceSample {
  long iteration;
  double objective;
};

struct TrainReport {
  double final_loss = 0.0;
  double final_objective = 0.0;
  long iterations_run = 0;
  std::vector<TraceSample> objective_trace;
  bool converged = false;
};

inline io::json to_json(const TrainReport& r) {
  io::json trace = io::json::array();
  for (const auto& s : r.objective_trace) trace.push_back({s.iteration, s.objective});
  return {{"final_loss", r.final_loss},
          {"final_objective", r.final_objective},
          {"iterations_run", r.iterations_run},
          {"converged", r.converged},
          {"objective_trace", trace}};
}

inline std::string trace_csv(const TrainReport& r) {
  std::string out = "iteration,objective\n";
  for (const auto& s : r.objective_trace)
    out += std::to_string(s.iteration) + "," + io::format_double(s.objective) + "\n";
  return out;
}

/// Raised when training produces a non-finite objective; keeps the trace.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::vector<TraceSample> trace)
      : Error(ErrorCode::diverged, what), trace_(std::move(trace)) {}
  const std::vector<TraceSample>& trace() const noexcept { return trace_; }

 private:
  std::vector<TraceSample> trace_;
};

/// Objective value and its gradient, laid out like the net.
struct ObjectiveGradient {
  double value = 0.0;
  double loss = 0.0;
  ShallowReLUNet gradient;
};

inline double data_loss(const ShallowReLUNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& labels,
                        LossForm form = LossForm::mean) {
  const double sq = (forward_batch(net, inputs) - labels).squaredNorm();
  return form == LossForm::mean ? sq / static_cast<double>(inputs.rows()) : sq;
}

/// Mean squared error of one task column (averaged over points).
inline double task_mse(const ShallowReLUNet& net, const MultiTaskDataset& data, Eigen::Index task) {
  const Eigen::MatrixXd out = forward_batch(net, data.inputs());
  return (out.col(task) - data.labels().col(task)).squaredNorm() / static_cast<double>(data.num_points());
}

/// loss(net) + lambda * (sum |v_k|^2 [if output regularized] + sum |w_k|^2 [if input regularized]).
///
/// The ReLU derivative at an exactly-zero pre-activation is taken as 0.
/// Residual gradients are zeroed when `skip_connection` is false so the
/// residual stays frozen.
inline ObjectiveGradient objective_and_gradient(const ShallowReLUNet& net, const Eigen::MatrixXd& inputs,
                                                const Eigen::MatrixXd& labels, double lambda,
                                                RegularizedBlocks regularize = {}, LossForm form = LossForm::mean,
                                                bool skip_connection = true) {
  net.validate();
  require(inputs.cols() == net.input_dim() && labels.cols() == net.num_tasks() && inputs.rows() == labels.rows(),
          ErrorCode::dimension_mismatch, "data shape does not match network");
  const auto n = inputs.rows();
  const double scale = form == LossForm::mean ? 1.0 / static_cast<double>(n) : 1.0;

  Eigen::MatrixXd pre = inputs * net.input_weights.transpose();
  pre.rowwise() += net.biases.transpose();
  const Eigen::MatrixXd act = pre.cwiseMax(0.0);
  Eigen::MatrixXd resid = act * net.output_weights + inputs * net.residual_matrix.transpose();
  resid.rowwise() += net.residual_offset.transpose();
  resid -= labels;

  ObjectiveGradient out;
  out.loss = scale * resid.squaredNorm();
  out.value = out.loss;
  if (regularize.output_weights) out.value += lambda * net.output_weights.squaredNorm();
  if (regularize.input_weights) out.value += lambda * net.input_weights.squaredNorm();

  const Eigen::MatrixXd g = (2.0 * scale) * resid;  // d loss / d output, N x T
  auto& grad = out.gradient;
  grad.output_weights = act.transpose() * g;
  Eigen::MatrixXd dpre = g * net.output_weights.transpose();
  dpre = dpre.array() * (pre.array() > 0.0).cast<double>();
  grad.input_weights = dpre.transpose() * inputs;
  grad.biases = dpre.colwise().sum().transpose();
  if (skip_connection) {
    grad.residual_matrix = g.transpose() * inputs;
    grad.residual_offset = g.colwise().sum().transpose();
  } else {
    grad.residual_matrix = Eigen::MatrixXd::Zero(net.num_tasks(), net.input_dim());
    grad.residual_offset = Eigen::VectorXd::Zero(net.num_tasks());
  }
  if (regularize.output_weights) grad.output_weights += 2.0 * lambda * net.output_weights;
  if (regularize.input_weights) grad.input_weights += 2.0 * lambda * net.input_weights;
  return out;
}

inline ObjectiveGradient objective_and_gradient(const ShallowReLUNet& net, const MultiTaskDataset& data,
                                                double lambda, RegularizedBlocks regularize = {},
                                                LossForm form = LossForm::mean, bool skip_connection = true) {
  return objective_and_gradient(net, data.inputs(), data.labels(), lambda, regularize, form, skip_connection);
}

/// Random initial net: w, b ~ U[-1, 1] / sqrt(d); v ~ N(0, (0.1 / sqrt(K))^2);
/// residual zero.
inline ShallowReLUNet init_network(Eigen::Index width, Eigen::Index input_dim, Eigen::Index num_tasks,
                                   std::uint64_t seed) {
  ShallowReLUNet net(width, input_dim, num_tasks);
  Rng rng(seed, 0x1417);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double out_std = 0.1 / std::sqrt(static_cast<double>(width));
  for (Eigen::Index k = 0; k < width; ++k) {
    for (Eigen::Index j = 0; j < input_dim; ++j) net.input_weights(k, j) = in_scale * rng.uniform(-1.0, 1.0);
    net.biases(k) = in_scale * rng.uniform(-1.0, 1.0);
  }
  for (Eigen::Index k = 0; k < width; ++k)
    for (Eigen::Index t = 0; t < num_tasks; ++t) net.output_weights(k, t) = rng.normal(0.0, out_std);
  return net;
}

namespace detail {

struct AdamState {
  ShallowReLUNet m;
  ShallowReLUNet v;
};

template <class Param>
void adam_block(Param& p, const Param& g, Param& m, Param& v, double lr_t, double beta1, double beta2, double eps) {
  m = beta1 * m + (1.0 - beta1) * g;
  v.array() = beta2 * v.array() + (1.0 - beta2) * g.array().square();
  // Moments of parameters with identically zero gradient (biases of dead
  // neurons) would otherwise decay into subnormals, which are very slow.
  m = (m.array().abs() < 1e-150).select(0.0, m);
  v = (v.array() < 1e-290).select(0.0, v);
  p.array() -= lr_t * m.array() / (v.array().sqrt() + eps);
}

}  // namespace detail

/// Full-batch Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) on the weight
/// decay objective.
///
/// Every `check_every` iterations the objective is recorded in the trace; the
/// run stops once the relative improvement over the last `plateau_window`
/// records falls below `plateau_tol`, or at `max_iters`.
inline std::pair<ShallowReLUNet, TrainReport> adam_train(ShallowReLUNet net, const Eigen::MatrixXd& inputs,
                                                         const Eigen::MatrixXd& labels, const TrainConfig& config) {
  config.validate();
  net.validate();
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (!config.skip_connection) {
    net.residual_matrix.setZero();
    net.residual_offset.setZero();
  }
  detail::AdamState st{ShallowReLUNet(net.width(), net.input_dim(), net.num_tasks()),
                       ShallowReLUNet(net.width(), net.input_dim(), net.num_tasks())};
  TrainReport report;
  double b1t = 1.0, b2t = 1.0;
  long it = 0;
  ObjectiveGradient og;
  for (; it < config.max_iters; ++it) {
    og = objective_and_gradient(net, inputs, labels, config.lambda, config.regularize, config.loss,
                                config.skip_connection);
    if (!std::isfinite(og.value)) {
      report.objective_trace.push_back({it, og.value});
      throw TrainingDiverged("objective became non-finite at iteration " + std::to_string(it),
                             std::move(report.objective_trace));
    }
    if (it % config.check_every == 0) {
      report.objective_trace.push_back({it, og.value});
      const auto n = report.objective_trace.size();
      const auto w = static_cast<std::size_t>(config.plateau_window);
      if (n > w) {
        const double old = report.objective_trace[n - 1 - w].objective;
        const double improvement = (old - og.value) / std::max(std::abs(og.value), 1e-300);
        if (improvement < config.plateau_tol) {
          report.converged = true;
          break;
        }
      }
    }
    b1t *= beta1;
    b2t *= beta2;
    const double lr_t = config.learning_rate * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    auto& g = og.gradient;
    detail::adam_block(net.input_weights, g.input_weights, st.m.input_weights, st.v.input_weights, lr_t, beta1, beta2, eps);
    detail::adam_block(net.biases, g.biases, st.m.biases, st.v.biases, lr_t, beta1, beta2, eps);
    detail::adam_block(net.output_weights, g.output_weights, st.m.output_weights, st.v.output_weights, lr_t, beta1,
                       beta2, eps);
    if (config.skip_connection) {
      detail::adam_block(net.residual_matrix, g.residual_matrix, st.m.residual_matrix, st.v.residual_matrix, lr_t,
                         beta1, beta2, eps);
      detail::adam_block(net.residual_offset, g.residual_offset, st.m.residual_offset, st.v.residual_offset, lr_t,
                         beta1, beta2, eps);
    }
  }
  const auto final_og = objective_and_gradient(net, inputs, labels, config.lambda, config.regularize, config.loss,
                                               config.skip_connection);
  if (!std::isfinite(final_og.value))
    throw TrainingDiverged("final objective is non-finite", std::move(report.objective_trace));
  report.final_loss = final_og.loss;
  report.final_objective = final_og.value;
  report.iterations_run = it;
  if (report.objective_trace.empty() || report.objective_trace.back().iteration != it)
    report.objective_trace.push_back({it, final_og.value});
  return {std::move(net), std::move(report)};
}

inline std::pair<ShallowReLUNet, TrainReport> adam_train(ShallowReLUNet net, const MultiTaskDataset& data,
                                                         const TrainConfig& config) {
  return adam_train(std::move(net), data.inputs(), data.labels(), config);
}

/// Initializes from config.seed and trains.
inline std::pair<ShallowReLUNet, TrainReport> train_from_scratch(const MultiTaskDataset& data,
                                                                 const TrainConfig& config) {
  config.validate();
  return adam_train(init_network(config.width, data.input_dim(), data.num_tasks(), config.seed), data, config);
}

/// sum_i |f(x_i) - y_i|^2 + lambda sum_k |v_k| for a unit-normalized
/// univariate net. Evaluation only.
inline double regularized_loss_objective(const ShallowReLUNet& net, const MultiTaskDataset& data, double lambda) {
  require(net.input_dim() == 1 && data.univariate(), ErrorCode::dimension_mismatch,
          "regularized_loss_objective needs d = 1");
  require(is_unit_normalized(net, 1e-9), ErrorCode::invalid_argument, "net must be unit-normalized");
  require(net.num_tasks() == data.num_tasks(), ErrorCode::dimension_mismatch, "task count mismatch");
  return data_loss(net, data.inputs(), data.labels(), LossForm::sum) +
         lambda * net.output_weights.rowwise().norm().sum();
}

}  // namespace mtlrelu
