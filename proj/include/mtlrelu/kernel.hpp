#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <variant>

#include "mtlrelu/dataset.hpp"
#include "mtlrelu/error.hpp"
#include "mtlrelu/io.hpp"

namespace mtlrelu {

/// k(x, x') = 1 - (x - x')_+ + (x - x1)_+ + (x1 - x')_+
struct SobolevKernel {
  double x1 = 0.0;
};

/// kappa(x, x') = sum_k phi_k(x) phi_k(x') / Q_kk with phi_k(x) = (w_k . x + b_k)_+
struct NeuronKernel {
  Eigen::MatrixXd weights;  // K x d
  Eigen::VectorXd biases;
  Eigen::VectorXd q_diag;

  Eigen::VectorXd features(const Eigen::VectorXd& x) const { return (weights * x + biases).cwiseMax(0.0); }

  /// Rows are points: N x d -> N x K.
  Eigen::MatrixXd features_batch(const Eigen::MatrixXd& xs) const {
    Eigen::MatrixXd phi = xs * weights.transpose();
    phi.rowwise() += biases.transpose();
    return phi.cwiseMax(0.0);
  }

  void validate() const {
    require(weights.rows() >= 1, ErrorCode::invalid_argument, "neuron kernel needs at least one feature");
    require(biases.size() == weights.rows() && q_diag.size() == weights.rows(), ErrorCode::dimension_mismatch,
            "neuron kernel blocks disagree on feature count");
    require((q_diag.array() > 0.0).all() && q_diag.allFinite(), ErrorCode::invalid_argument,
            "q_diag entries must be positive and finite");
  }
};

using KernelSpec = std::variant<SobolevKernel, NeuronKernel>;

inline Eigen::Index input_dim(const KernelSpec& spec) {
  if (const auto* n = std::get_if<NeuronKernel>(&spec)) return n->weights.cols();
  return 1;
}

inline double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& xp) {
  require(x.size() == input_dim(spec) && xp.size() == input_dim(spec), ErrorCode::dimension_mismatch,
          "point dimension does not match the kernel");
  if (const auto* s = std::get_if<SobolevKernel>(&spec)) {
    const auto relu = [](double t) { return t > 0.0 ? t : 0.0; };
    return 1.0 - relu(x(0) - xp(0)) + relu(x(0) - s->x1) + relu(s->x1 - xp(0));
  }
  const auto& n = std::get<NeuronKernel>(spec);
  return (n.features(x).array() * n.features(xp).array() / n.q_diag.array()).sum();
}

inline double kernel_eval(const KernelSpec& spec, double x, double xp) {
  return kernel_eval(spec, Eigen::VectorXd::Constant(1, x), Eigen::VectorXd::Constant(1, xp));
}

/// K(a_i, b_j) for rows a_i of `a` and b_j of `b`.
inline Eigen::MatrixXd cross_gram(const KernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.cols() == input_dim(spec) && b.cols() == input_dim(spec), ErrorCode::dimension_mismatch,
          "point dimension does not match the kernel");
  if (const auto* n = std::get_if<NeuronKernel>(&spec)) {
    const Eigen::MatrixXd pa = n->features_batch(a);
    const Eigen::MatrixXd pb = n->features_batch(b);
    return pa * n->q_diag.cwiseInverse().asDiagonal() * pb.transpose();
  }
  Eigen::MatrixXd g(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) g(i, j) = kernel_eval(spec, a(i, 0), b(j, 0));
  return g;
}

inline Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& points) {
  Eigen::MatrixXd g = cross_gram(spec, points, points);
  return (0.5 * (g + g.transpose())).eval();
}

struct KernelModel {
  KernelSpec spec;
  Eigen::MatrixXd centers;  // N x d
  Eigen::VectorXd alpha;
  double lambda = 0.0;
  double jitter = 0.0;  // diagonal shift actually used by the solve
};

inline double predict(const KernelModel& m, const Eigen::VectorXd& x) {
  return (cross_gram(m.spec, x.transpose(), m.centers) * m.alpha)(0);
}

inline Eigen::VectorXd predict_batch(const KernelModel& m, const Eigen::MatrixXd& xs) {
  return cross_gram(m.spec, xs, m.centers) * m.alpha;
}

struct JitteredSolve {
  Eigen::VectorXd x;
  double jitter;
};

/// Solves the symmetric PSD system A x = rhs with an LDL^T factorization.
/// When the plain solve fails or leaves a residual above
/// `rel_tol * |rhs|`, a diagonal shift of 1e-12 * trace / n is added and
/// raised tenfold up to 1e-6 * trace / n. The residual is always measured
/// against the unshifted system.
inline JitteredSolve solve_psd_with_jitter(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs,
                                           double rel_tol = 1e-8) {
  require(a.rows() == a.cols() && a.rows() == rhs.size(), ErrorCode::dimension_mismatch, "system shape mismatch");
  const auto n = a.rows();
  const double mean_diag = std::max(a.trace() / static_cast<double>(n), std::numeric_limits<double>::min());
  const double tol = rel_tol * std::max(rhs.norm(), std::numeric_limits<double>::min());
  double rcond = 0.0;
  for (double shift = 0.0; shift <= 1e-6 * mean_diag * 1.0000001; shift = shift == 0.0 ? 1e-12 * mean_diag : shift * 10) {
    Eigen::MatrixXd m = a;
    m.diagonal().array() += shift;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success) continue;
    rcond = ldlt.rcond();
    if (!(ldlt.vectorD().array() > 0.0).all()) continue;
    Eigen::VectorXd x = ldlt.solve(rhs);
    if (!x.allFinite()) continue;
    if ((a * x - rhs).norm() <= tol) return {x, shift};
  }
  throw Error(ErrorCode::singular_system,
              "system is singular to working precision (reciprocal condition estimate " + io::format_double(rcond) +
                  ") even after diagonal jitter up to 1e-6 * trace / n");
}

/// Minimizer of sum_i (y_i - f(x_i))^2 + lambda |f|^2 over the RKHS:
/// f = sum_j alpha_j k(., x_j) with (G + lambda I) alpha = y.
inline KernelModel kernel_ridge(const KernelSpec& spec, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& y,
                                double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::invalid_argument, "lambda must be finite and >= 0");
  require(inputs.rows() == y.size(), ErrorCode::dimension_mismatch, "one label per input point");
  require(inputs.rows() >= 1, ErrorCode::too_few_points, "kernel fit needs at least one point");
  if (const auto* n = std::get_if<NeuronKernel>(&spec)) n->validate();
  Eigen::MatrixXd g = gram(spec, inputs);
  g.diagonal().array() += lambda;
  auto sol = solve_psd_with_jitter(g, y);
  return {spec, inputs, sol.x, lambda, sol.jitter};
}

inline KernelModel kernel_interpolate(const KernelSpec& spec, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& y) {
  return kernel_ridge(spec, inputs, y, 0.0);
}

inline KernelModel kernel_ridge(const KernelSpec& spec, const MultiTaskDataset& data, Eigen::Index task,
                                double lambda) {
  require(task >= 0 && task < data.num_tasks(), ErrorCode::invalid_argument, "task index out of range");
  return kernel_ridge(spec, data.inputs(), data.labels().col(task), lambda);
}

inline KernelModel kernel_interpolate(const KernelSpec& spec, const MultiTaskDataset& data, Eigen::Index task) {
  return kernel_ridge(spec, data, task, 0.0);
}

/// Sobolev kernel anchored at the leftmost data point.
inline SobolevKernel sobolev_for(const MultiTaskDataset& data) {
  require(data.univariate(), ErrorCode::dimension_mismatch, "Sobolev kernel needs d = 1");
  return {data.inputs().col(0).minCoeff()};
}

/// Output weights v' = Q^{-1} Phi^T alpha of a fitted neuron-kernel model, so
/// that predictions equal phi(x)^T v'.
inline Eigen::VectorXd neuron_output_weights(const KernelModel& m) {
  const auto* n = std::get_if<NeuronKernel>(&m.spec);
  require(n != nullptr, ErrorCode::invalid_argument, "output weights exist only for neuron kernels");
  return n->q_diag.cwiseInverse().asDiagonal() * (n->features_batch(m.centers).transpose() * m.alpha);
}

/// |<kappa(., x), f_v> - f_v(x)| where <f_v, f_u> = v^T Q u and kappa(., x)
/// has coefficients u_k = phi_k(x) / Q_kk.
inline double reproducing_property_check(const NeuronKernel& spec, const Eigen::VectorXd& v, const Eigen::VectorXd& x) {
  spec.validate();
  require(v.size() == spec.weights.rows(), ErrorCode::dimension_mismatch, "coefficient vector length mismatch");
  const Eigen::VectorXd phi = spec.features(x);
  const Eigen::VectorXd u = phi.cwiseQuotient(spec.q_diag);
  const double inner = v.dot(spec.q_diag.asDiagonal() * u);
  return std::abs(inner - phi.dot(v));
}

inline io::json to_json(const KernelSpec& spec) {
  if (const auto* s = std::get_if<SobolevKernel>(&spec)) return {{"variant", "sobolev_h1"}, {"x1", s->x1}};
  const auto& n = std::get<NeuronKernel>(spec);
  return {{"variant", "neuron_kernel"},
          {"weights", io::to_json(n.weights)},
          {"biases", io::to_json(n.biases)},
          {"q_diag", io::to_json(n.q_diag)}};
}

inline KernelSpec kernel_spec_from_json(const io::json& j) {
  require(j.contains("variant") && j["variant"].is_string(), ErrorCode::schema_error, "kernel JSON missing 'variant'");
  const auto variant = j["variant"].get<std::string>();
  if (variant == "sobolev_h1") {
    require(j.contains("x1") && j["x1"].is_number(), ErrorCode::schema_error, "Sobolev kernel needs 'x1'");
    return SobolevKernel{j["x1"].get<double>()};
  }
  require(variant == "neuron_kernel", ErrorCode::schema_error, "unknown kernel variant '" + variant + "'");
  for (const char* key : {"weights", "biases", "q_diag"})
    require(j.contains(key), ErrorCode::schema_error, std::string("neuron kernel JSON missing '") + key + "'");
  NeuronKernel n{io::matrix_from_json(j["weights"]), io::vector_from_json(j["biases"]), io::vector_from_json(j["q_diag"])};
  n.validate();
  return n;
}

inline io::json to_json(const KernelModel& m) {
  return {{"spec", to_json(m.spec)},
          {"centers", io::to_json(m.centers)},
          {"alpha", io::to_json(m.alpha)},
          {"lambda", m.lambda},
          {"jitter", m.jitter}};
}

inline KernelModel kernel_model_from_json(const io::json& j) {
  for (const char* key : {"spec", "centers", "alpha", "lambda"})
    require(j.contains(key), ErrorCode::schema_error, std::string("kernel model JSON missing '") + key + "'");
  KernelModel m;
  m.spec = kernel_spec_from_json(j["spec"]);
  m.centers = io::matrix_from_json(j["centers"], input_dim(m.spec));
  m.alpha = io::vector_from_json(j["alpha"]);
  m.lambda = j["lambda"].get<double>();
  m.jitter = j.value("jitter", 0.0);
  require(m.alpha.size() == m.centers.rows(), ErrorCode::schema_error, "one coefficient per center");
  require(m.centers.cols() == input_dim(m.spec), ErrorCode::schema_error, "center dimension does not match kernel");
  return m;
}

}  // namespace mtlrelu
