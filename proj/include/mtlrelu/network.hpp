#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mtlrelu/error.hpp"
#include "mtlrelu/io.hpp"

namespace mtlrelu {

/// f(x) = sum_k v_k (w_k . x + b_k)_+ + A x + c
///
/// Row k of input_weights is w_k (K x d), row k of output_weights is v_k
/// (K x T). The residual (skip) connection is A (T x d) and c (length T).
struct ShallowReLUNet {
  Eigen::MatrixXd input_weights;
  Eigen::VectorXd biases;
  Eigen::MatrixXd output_weights;
  Eigen::MatrixXd residual_matrix;
  Eigen::VectorXd residual_offset;

  ShallowReLUNet() = default;

  /// All-zero net of the given shape.
  ShallowReLUNet(Eigen::Index width, Eigen::Index input_dim, Eigen::Index num_tasks)
      : input_weights(Eigen::MatrixXd::Zero(width, input_dim)),
        biases(Eigen::VectorXd::Zero(width)),
        output_weights(Eigen::MatrixXd::Zero(width, num_tasks)),
        residual_matrix(Eigen::MatrixXd::Zero(num_tasks, input_dim)),
        residual_offset(Eigen::VectorXd::Zero(num_tasks)) {}

  Eigen::Index width() const noexcept { return input_weights.rows(); }
  Eigen::Index input_dim() const noexcept { return input_weights.cols(); }
  Eigen::Index num_tasks() const noexcept { return output_weights.cols(); }

  void validate() const {
    require(width() >= 1, ErrorCode::dimension_mismatch, "network needs at least one neuron");
    require(biases.size() == width() && output_weights.rows() == width(), ErrorCode::dimension_mismatch,
            "neuron blocks disagree on width");
    require(residual_matrix.rows() == num_tasks() && residual_matrix.cols() == input_dim(),
            ErrorCode::dimension_mismatch, "residual matrix must be T x d");
    require(residual_offset.size() == num_tasks(), ErrorCode::dimension_mismatch, "residual offset must have T entries");
  }

  bool operator==(const ShallowReLUNet& o) const {
    auto same = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; };
    return same(input_weights, o.input_weights) && same(biases, o.biases) && same(output_weights, o.output_weights) &&
           same(residual_matrix, o.residual_matrix) && same(residual_offset, o.residual_offset);
  }
};

inline Eigen::VectorXd forward(const ShallowReLUNet& net, const Eigen::VectorXd& x) {
  require(x.size() == net.input_dim(), ErrorCode::dimension_mismatch,
          "input has dimension " + std::to_string(x.size()) + ", net expects " + std::to_string(net.input_dim()));
  const Eigen::VectorXd act = (net.input_weights * x + net.biases).cwiseMax(0.0);
  return net.output_weights.transpose() * act + net.residual_matrix * x + net.residual_offset;
}

inline Eigen::VectorXd forward(const ShallowReLUNet& net, double x) {
  return forward(net, Eigen::VectorXd::Constant(1, x));
}

/// Row-wise forward pass: inputs N x d -> outputs N x T.
inline Eigen::MatrixXd forward_batch(const ShallowReLUNet& net, const Eigen::MatrixXd& inputs) {
  require(inputs.cols() == net.input_dim(), ErrorCode::dimension_mismatch, "batch input dimension mismatch");
  Eigen::MatrixXd act = inputs * net.input_weights.transpose();
  act.rowwise() += net.biases.transpose();
  act = act.cwiseMax(0.0);
  Eigen::MatrixXd out = act * net.output_weights + inputs * net.residual_matrix.transpose();
  out.rowwise() += net.residual_offset.transpose();
  return out;
}

/// sum_k |v_k|^2 + |w_k|^2; biases and the residual are not penalized.
inline double weight_decay_cost(const ShallowReLUNet& net) {
  return net.output_weights.squaredNorm() + net.input_weights.squaredNorm();
}

/// sum_k |v_k| |w_k|, invariant under w_k -> a w_k, v_k -> v_k / a.
inline double path_norm_cost(const ShallowReLUNet& net) {
  return (net.output_weights.rowwise().norm().array() * net.input_weights.rowwise().norm().array()).sum();
}

inline bool is_unit_normalized(const ShallowReLUNet& net, double tol = 1e-12) {
  for (Eigen::Index k = 0; k < net.width(); ++k) {
    if (net.output_weights.row(k).norm() == 0.0) continue;
    if (std::abs(net.input_weights.row(k).norm() - 1.0) > tol) return false;
  }
  return true;
}

/// Rescales every neuron to |w_k| = 1 (moving the scale into v_k and b_k).
/// Neurons with w_k = 0 are constants (b_k)_+ v_k; they are folded into the
/// residual offset and zeroed. Width is preserved.
inline ShallowReLUNet unit_normalize(const ShallowReLUNet& net) {
  net.validate();
  ShallowReLUNet out = net;
  constexpr double unit_tol = 4 * std::numeric_limits<double>::epsilon();
  for (Eigen::Index k = 0; k < out.width(); ++k) {
    const double norm = out.input_weights.row(k).norm();
    if (norm == 0.0) {
      out.residual_offset += std::max(out.biases(k), 0.0) * out.output_weights.row(k).transpose();
      out.biases(k) = 0.0;
      out.output_weights.row(k).setZero();
    } else if (std::abs(norm - 1.0) > unit_tol) {
      out.input_weights.row(k) /= norm;
      out.biases(k) /= norm;
      out.output_weights.row(k) *= norm;
    }
  }
  return out;
}

/// Indices k with |v_k| > threshold.
inline std::vector<Eigen::Index> active_neurons(const ShallowReLUNet& net, double threshold) {
  require(threshold >= 0.0, ErrorCode::invalid_argument, "threshold must be nonnegative");
  std::vector<Eigen::Index> idx;
  for (Eigen::Index k = 0; k < net.width(); ++k)
    if (net.output_weights.row(k).norm() > threshold) idx.push_back(k);
  return idx;
}

/// 1e-4 of the largest output-weight norm (scale-free).
inline double default_active_threshold(const ShallowReLUNet& net) {
  return 1e-4 * net.output_weights.rowwise().norm().maxCoeff();
}

/// Relative location tolerance used when merging coincident neurons.
inline constexpr double kMergeTolerance = 1e-8;

/// Merges univariate neurons that activate at the same location.
///
/// Same-direction neurons add their output weights. A +1/-1 pair at one
/// location uses x = (x)_+ - (-x)_+ and moves the linear remainder into the
/// residual. Inactive neurons (v_k = 0) are dropped, so the result has one
/// neuron per distinct location (or a single zero neuron if none remain).
/// `scale` is the length scale (typically the data range) multiplying the
/// merge tolerance; 0 means use the span of the activation locations.
inline ShallowReLUNet canonicalize_univariate(const ShallowReLUNet& net, double scale = 0.0) {
  net.validate();
  require(net.input_dim() == 1, ErrorCode::dimension_mismatch, "canonicalize_univariate needs d = 1");
  require(is_unit_normalized(net, 1e-9), ErrorCode::invalid_argument, "net must be unit-normalized");
  const auto T = net.num_tasks();

  struct Neuron {
    double loc;
    double w;
    Eigen::VectorXd v;
  };
  std::vector<Neuron> neurons;
  for (Eigen::Index k = 0; k < net.width(); ++k) {
    if (net.output_weights.row(k).norm() == 0.0) continue;
    const double w = net.input_weights(k, 0) > 0 ? 1.0 : -1.0;
    neurons.push_back({-net.biases(k) / w, w, net.output_weights.row(k).transpose()});
  }
  std::stable_sort(neurons.begin(), neurons.end(), [](const Neuron& a, const Neuron& b) { return a.loc < b.loc; });

  if (scale <= 0.0) {
    scale = neurons.size() > 1 ? neurons.back().loc - neurons.front().loc : 1.0;
    if (scale <= 0.0) scale = 1.0;
  }
  const double tol = kMergeTolerance * scale;

  ShallowReLUNet out;
  out.residual_matrix = net.residual_matrix;
  out.residual_offset = net.residual_offset;
  std::vector<Neuron> merged;
  std::size_t i = 0;
  while (i < neurons.size()) {
    std::size_t j = i + 1;
    while (j < neurons.size() && neurons[j].loc - neurons[j - 1].loc <= tol) ++j;
    if (j - i == 1) {
      merged.push_back(neurons[i]);
    } else {
      const double loc = neurons[i].loc;
      const double dir = neurons[i].w;
      Eigen::VectorXd v = Eigen::VectorXd::Zero(T);
      for (std::size_t m = i; m < j; ++m) {
        v += neurons[m].v;
        if (neurons[m].w != dir) {
          // v (w(x - loc))_+ = v (dir(x - loc))_+ + v w (x - loc)  when w = -dir
          out.residual_matrix.col(0) += neurons[m].w * neurons[m].v;
          out.residual_offset -= neurons[m].w * loc * neurons[m].v;
        }
      }
      if (v.norm() > 0.0) merged.push_back({loc, dir, v});
    }
    i = j;
  }

  const auto K = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(merged.size()));
  out.input_weights = Eigen::MatrixXd::Zero(K, 1);
  out.biases = Eigen::VectorXd::Zero(K);
  out.output_weights = Eigen::MatrixXd::Zero(K, T);
  for (std::size_t m = 0; m < merged.size(); ++m) {
    const auto k = static_cast<Eigen::Index>(m);
    out.input_weights(k, 0) = merged[m].w;
    out.biases(k) = -merged[m].w * merged[m].loc;
    out.output_weights.row(k) = merged[m].v.transpose();
  }
  return out;
}

/// Activation locations -b_k / w_k of the active neurons of a univariate net.
inline std::vector<double> activation_locations(const ShallowReLUNet& net) {
  require(net.input_dim() == 1, ErrorCode::dimension_mismatch, "activation_locations needs d = 1");
  std::vector<double> locs;
  for (Eigen::Index k = 0; k < net.width(); ++k)
    if (net.output_weights.row(k).norm() > 0.0 && net.input_weights(k, 0) != 0.0)
      locs.push_back(-net.biases(k) / net.input_weights(k, 0));
  std::sort(locs.begin(), locs.end());
  return locs;
}

inline io::json to_json(const ShallowReLUNet& net) {
  return {
      {"input_weights", io::to_json(net.input_weights)},
      {"biases", io::to_json(net.biases)},
      {"output_weights", io::to_json(net.output_weights)},
      {"residual_matrix", io::to_json(net.residual_matrix)},
      {"residual_offset", io::to_json(net.residual_offset)},
      {"unit_normalized", is_unit_normalized(net)},
  };
}

inline ShallowReLUNet net_from_json(const io::json& j) {
  for (const char* key : {"input_weights", "biases", "output_weights", "residual_matrix", "residual_offset"})
    require(j.contains(key), ErrorCode::schema_error, std::string("network JSON missing '") + key + "'");
  ShallowReLUNet net;
  net.input_weights = io::matrix_from_json(j["input_weights"]);
  net.biases = io::vector_from_json(j["biases"]);
  net.output_weights = io::matrix_from_json(j["output_weights"]);
  net.residual_offset = io::vector_from_json(j["residual_offset"]);
  net.residual_matrix = io::matrix_from_json(j["residual_matrix"], net.input_weights.cols());
  net.validate();
  if (j.contains("unit_normalized") && j["unit_normalized"].get<bool>())
    require(is_unit_normalized(net), ErrorCode::schema_error, "net flagged unit_normalized but is not");
  return net;
}

}  // namespace mtlrelu
