#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mtlrelu/dataset.hpp"
#include "mtlrelu/error.hpp"
#include "mtlrelu/io.hpp"
#include "mtlrelu/network.hpp"

namespace mtlrelu {

/// Univariate, T-output continuous piecewise-linear function in canonical
/// form:
///
///   f(x) = base_offset + base_slope (x - x0) + sum_k mu_k (x - knot_k)_+
///
/// with x0 the first knot (0 when there are none). Knots are strictly
/// increasing and every slope change mu_k (row k of slope_changes) is a
/// nonzero T-vector.
struct CPWLFunction {
  std::vector<double> knots;
  Eigen::MatrixXd slope_changes;  // K x T
  Eigen::VectorXd base_slope;     // slope on (-inf, first knot)
  Eigen::VectorXd base_offset;    // f(reference_point())

  Eigen::Index num_tasks() const noexcept { return base_slope.size(); }
  Eigen::Index num_knots() const noexcept { return static_cast<Eigen::Index>(knots.size()); }
  double reference_point() const noexcept { return knots.empty() ? 0.0 : knots.front(); }

  /// Slope on the segment right of knot j (j = -1 is the leftmost segment).
  Eigen::VectorXd slope_after(Eigen::Index j) const {
    Eigen::VectorXd s = base_slope;
    for (Eigen::Index k = 0; k <= j; ++k) s += slope_changes.row(k).transpose();
    return s;
  }

  void validate() const {
    require(base_offset.size() == num_tasks(), ErrorCode::dimension_mismatch, "base_offset must have T entries");
    require(slope_changes.rows() == num_knots() && (num_knots() == 0 || slope_changes.cols() == num_tasks()),
            ErrorCode::dimension_mismatch, "slope_changes must be K x T");
    for (std::size_t k = 1; k < knots.size(); ++k)
      require(knots[k] > knots[k - 1], ErrorCode::invalid_argument, "knots must be strictly increasing");
    for (Eigen::Index k = 0; k < num_knots(); ++k)
      require(slope_changes.row(k).norm() > 0.0, ErrorCode::invalid_argument, "zero slope change at a knot");
  }
};

inline Eigen::VectorXd evaluate(const CPWLFunction& f, double x) {
  Eigen::VectorXd out = f.base_offset + f.base_slope * (x - f.reference_point());
  for (Eigen::Index k = 0; k < f.num_knots(); ++k) {
    const double h = x - f.knots[static_cast<std::size_t>(k)];
    if (h > 0.0) out += h * f.slope_changes.row(k).transpose();
  }
  return out;
}

/// Evaluates on a list of points; rows are points, columns tasks.
inline Eigen::MatrixXd evaluate(const CPWLFunction& f, const Eigen::VectorXd& xs) {
  Eigen::MatrixXd out(xs.size(), f.num_tasks());
  for (Eigen::Index i = 0; i < xs.size(); ++i) out.row(i) = evaluate(f, xs(i)).transpose();
  return out;
}

/// R(f) = sum_k |mu_k|; the affine part is carried by the unregularized
/// residual and costs nothing.
inline double representational_cost(const CPWLFunction& f) {
  return f.num_knots() == 0 ? 0.0 : f.slope_changes.rowwise().norm().sum();
}

/// Function defined by its values at sorted nodes plus the two extrapolation
/// slopes. Removing a node joins its neighbours with a straight line.
struct NodeFunction {
  std::vector<double> xs;
  std::vector<Eigen::VectorXd> values;
  Eigen::VectorXd left_slope;
  Eigen::VectorXd right_slope;

  Eigen::VectorXd segment_slope(std::size_t i) const {
    return (values[i + 1] - values[i]) / (xs[i + 1] - xs[i]);
  }
};

/// Canonical form of a node function. Slope changes with norm at most
/// `zero_tol` times the largest slope norm are treated as exact zeros
/// (they arise from rounding when a node lies on a straight segment).
inline CPWLFunction to_cpwl(const NodeFunction& g, double zero_tol = 1e-13) {
  const auto T = g.left_slope.size();
  const std::size_t n = g.xs.size();
  std::vector<Eigen::VectorXd> slopes;
  slopes.push_back(g.left_slope);
  for (std::size_t i = 0; i + 1 < n; ++i) slopes.push_back(g.segment_slope(i));
  slopes.push_back(g.right_slope);
  double scale = 0.0;
  for (const auto& s : slopes) scale = std::max(scale, s.norm());

  CPWLFunction f;
  f.base_slope = g.left_slope;
  std::vector<Eigen::VectorXd> mus;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd mu = slopes[i + 1] - slopes[i];
    if (mu.norm() > zero_tol * std::max(scale, 1.0)) {
      f.knots.push_back(g.xs[i]);
      mus.push_back(std::move(mu));
    }
  }
  f.slope_changes.resize(static_cast<Eigen::Index>(mus.size()), T);
  for (std::size_t k = 0; k < mus.size(); ++k) f.slope_changes.row(static_cast<Eigen::Index>(k)) = mus[k].transpose();
  if (f.knots.empty()) {
    // affine: pin the value at 0 from any node
    f.base_offset = n > 0 ? Eigen::VectorXd(g.values[0] - g.left_slope * g.xs[0]) : Eigen::VectorXd::Zero(T);
  } else {
    const auto it = std::find(g.xs.begin(), g.xs.end(), f.knots.front());
    f.base_offset = g.values[static_cast<std::size_t>(it - g.xs.begin())];
  }
  return f;
}

/// Node form of f with nodes at its knots together with `extra` points.
inline NodeFunction to_nodes(const CPWLFunction& f, const std::vector<double>& extra = {}) {
  std::vector<double> xs = f.knots;
  xs.insert(xs.end(), extra.begin(), extra.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  NodeFunction g;
  g.xs = xs;
  for (double x : xs) g.values.push_back(evaluate(f, x));
  g.left_slope = f.base_slope;
  g.right_slope = f.slope_after(f.num_knots() - 1);
  return g;
}

namespace detail {

/// Per-task slopes s_i between consecutive points; row i is s_{i+1} in
/// 1-based notation (N-1 x T).
inline Eigen::MatrixXd secant_slopes(const MultiTaskDataset& data) {
  const auto n = data.num_points();
  const auto& x = data.inputs();
  const auto& y = data.labels();
  Eigen::MatrixXd s(n - 1, data.num_tasks());
  for (Eigen::Index i = 0; i + 1 < n; ++i) s.row(i) = (y.row(i + 1) - y.row(i)) / (x(i + 1, 0) - x(i, 0));
  return s;
}

}  // namespace detail

/// Straight-line interpolation of consecutive points in every task, extended
/// with the first and last secant slopes.
inline CPWLFunction connect_the_dots(const MultiTaskDataset& data) {
  require(data.univariate(), ErrorCode::dimension_mismatch, "connect_the_dots needs d = 1");
  require(data.num_points() >= 2, ErrorCode::too_few_points, "connect_the_dots needs N >= 2");
  NodeFunction g;
  const auto n = data.num_points();
  for (Eigen::Index i = 0; i < n; ++i) {
    g.xs.push_back(data.inputs()(i, 0));
    g.values.push_back(data.labels().row(i).transpose());
  }
  g.left_slope = g.segment_slope(0);
  g.right_slope = g.segment_slope(static_cast<std::size_t>(n - 2));
  return to_cpwl(g);
}

struct KnotRemovalDelta {
  double cost_with_knot;
  double cost_without_knot;
  bool strictly_decreases;
};

/// Cost of the three knots around an extraneous knot versus the two left
/// after straightening it away.
///
/// Slopes: a before the left knot, b + delta then b - tau delta / (1 - tau)
/// on the two sides of the middle knot, c after the right knot; tau is the
/// middle knot's relative position.
inline KnotRemovalDelta knot_removal_delta(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                                           const Eigen::VectorXd& delta, double tau, double tol = 1e-12) {
  require(tau > 0.0 && tau < 1.0, ErrorCode::invalid_argument, "tau must lie in (0, 1)");
  require(a.size() == b.size() && b.size() == c.size() && c.size() == delta.size(), ErrorCode::dimension_mismatch,
          "slope vectors must share a length");
  KnotRemovalDelta r{};
  r.cost_with_knot = (delta + b - a).norm() + delta.norm() / (1.0 - tau) + (c - b + tau * delta / (1.0 - tau)).norm();
  r.cost_without_knot = (b - a).norm() + (c - b).norm();
  r.strictly_decreases = r.cost_with_knot > r.cost_without_knot + tol * (1.0 + r.cost_without_knot);
  return r;
}

/// u1 and u2 are aligned when u1 . u2 = |u1| |u2|; tested as cosine >= 1 - tol.
inline bool aligned(const Eigen::VectorXd& u1, const Eigen::VectorXd& u2, double cos_tol = 1e-9) {
  const double n1 = u1.norm(), n2 = u2.norm();
  if (n1 == 0.0 || n2 == 0.0) return true;
  return u1.dot(u2) / (n1 * n2) >= 1.0 - cos_tol;
}

struct KnotRemovalResult {
  CPWLFunction function;
  std::vector<double> cost_trace;  // cost before any removal, then after each one
};

/// Removes every knot that is not at an interior data point, one at a time
/// and left to right, joining the neighbouring nodes with a straight line.
/// Knots outside [x_1, x_N] (and at x_1, x_N themselves) are removed by
/// extending the first and last data segments. No step increases the cost;
/// the result is the connect-the-dots interpolant.
inline KnotRemovalResult remove_extraneous_knots_traced(const CPWLFunction& f, const MultiTaskDataset& data) {
  f.validate();
  require(data.univariate(), ErrorCode::dimension_mismatch, "remove_extraneous_knots needs d = 1");
  require(f.num_tasks() == data.num_tasks(), ErrorCode::dimension_mismatch, "task count mismatch");
  const Eigen::VectorXd xs = data.xs();
  const double label_scale = std::max(1.0, data.labels().cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < xs.size(); ++i)
    require((evaluate(f, xs(i)) - data.labels().row(i).transpose()).cwiseAbs().maxCoeff() <= 1e-9 * label_scale,
            ErrorCode::not_interpolating, "function does not interpolate point " + std::to_string(i + 1));

  const double x_first = xs(0), x_last = xs(xs.size() - 1);
  const double snap = 1e-12 * (x_last - x_first);
  // knots within rounding distance of a data point are treated as on it
  CPWLFunction snapped = f;
  for (auto& k : snapped.knots)
    for (Eigen::Index i = 0; i < xs.size(); ++i)
      if (std::abs(k - xs(i)) <= snap) k = xs(i);
  std::vector<double> data_x(xs.data(), xs.data() + xs.size());
  NodeFunction g = to_nodes(snapped, data_x);
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    const auto it = std::find(g.xs.begin(), g.xs.end(), xs(i));
    g.values[static_cast<std::size_t>(it - g.xs.begin())] = data.labels().row(i).transpose();
  }
  auto is_data = [&](double x) { return std::find(data_x.begin(), data_x.end(), x) != data_x.end(); };

  KnotRemovalResult out;
  out.cost_trace.push_back(representational_cost(f));
  auto record = [&] { out.cost_trace.push_back(representational_cost(to_cpwl(g))); };

  // nodes outside [x_1, x_N] first, keeping the end segments' slopes
  while (g.xs.front() < x_first) {
    g.xs.erase(g.xs.begin());
    g.values.erase(g.values.begin());
    g.left_slope = g.segment_slope(0);
    record();
  }
  while (g.xs.back() > x_last) {
    g.xs.pop_back();
    g.values.pop_back();
    g.right_slope = g.segment_slope(g.xs.size() - 2);
    record();
  }
  // interior, left to right
  for (std::size_t i = 1; i + 1 < g.xs.size();) {
    if (!is_data(g.xs[i])) {
      g.xs.erase(g.xs.begin() + static_cast<std::ptrdiff_t>(i));
      g.values.erase(g.values.begin() + static_cast<std::ptrdiff_t>(i));
      record();
    } else {
      ++i;
    }
  }
  // kinks at x_1 and x_N
  if (g.left_slope != g.segment_slope(0)) {
    g.left_slope = g.segment_slope(0);
    record();
  }
  if (g.right_slope != g.segment_slope(g.xs.size() - 2)) {
    g.right_slope = g.segment_slope(g.xs.size() - 2);
    record();
  }
  out.function = to_cpwl(g);
  return out;
}

inline CPWLFunction remove_extraneous_knots(const CPWLFunction& f, const MultiTaskDataset& data) {
  return remove_extraneous_knots_traced(f, data).function;
}

struct AlignmentEntry {
  Eigen::Index index;           // 1-based i in 2..N-2
  Eigen::VectorXd delta_left;   // s_i - s_{i-1}
  Eigen::VectorXd delta_right;  // s_{i+1} - s_i
  bool both_nonzero;
  double cosine;                // NaN unless both_nonzero
  bool aligned;                 // both nonzero and cosine >= 1 - tol
};

enum class Verdict { unique, non_unique };

inline std::string to_string(Verdict v) { return v == Verdict::unique ? "unique" : "non-unique"; }

struct AlignmentReport {
  std::vector<AlignmentEntry> entries;
  Verdict verdict = Verdict::unique;
  double cosine_tolerance = 1e-9;
};

/// Tests, for every interior index i = 2..N-2, whether consecutive slope
/// differences are both nonzero and aligned; any such index makes the
/// minimum-cost interpolant non-unique. N = 2 and N = 3 are always unique.
///
/// A difference counts as nonzero when its norm exceeds `nonzero_tol` times
/// the label scale max |y_it| (1 for all-zero labels).
inline AlignmentReport uniqueness_report(const MultiTaskDataset& data, double cos_tol = 1e-9,
                                         double nonzero_tol = 1e-9) {
  require(data.univariate(), ErrorCode::dimension_mismatch, "uniqueness_report needs d = 1");
  AlignmentReport rep;
  rep.cosine_tolerance = cos_tol;
  const auto n = data.num_points();
  if (n < 4) return rep;
  const Eigen::MatrixXd s = detail::secant_slopes(data);
  double scale = data.labels().cwiseAbs().maxCoeff();
  if (scale == 0.0) scale = 1.0;
  const double zero = nonzero_tol * scale;
  // 1-based i maps to rows i-2 (s_{i-1}), i-1 (s_i), i (s_{i+1})
  for (Eigen::Index i = 2; i <= n - 2; ++i) {
    AlignmentEntry e;
    e.index = i;
    e.delta_left = (s.row(i - 1) - s.row(i - 2)).transpose();
    e.delta_right = (s.row(i) - s.row(i - 1)).transpose();
    const double nl = e.delta_left.norm(), nr = e.delta_right.norm();
    e.both_nonzero = nl > zero && nr > zero;
    e.cosine = e.both_nonzero ? e.delta_left.dot(e.delta_right) / (nl * nr) : std::numeric_limits<double>::quiet_NaN();
    e.aligned = e.both_nonzero && e.cosine >= 1.0 - cos_tol;
    if (e.aligned) rep.verdict = Verdict::non_unique;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

/// Canonical univariate net -> CPWL. Each active neuron v (w x + b)_+ with
/// |w| = 1 is a knot at -b / w whose slope change is |w| v = v; neurons with
/// w = -1 also contribute w v to the slope at -infinity.
inline CPWLFunction net_to_cpwl(const ShallowReLUNet& net) {
  net.validate();
  require(net.input_dim() == 1, ErrorCode::dimension_mismatch, "net_to_cpwl needs d = 1");
  require(is_unit_normalized(net, 1e-9), ErrorCode::invalid_argument, "net must be unit-normalized");
  const auto T = net.num_tasks();
  struct Knot {
    double loc;
    Eigen::VectorXd mu;
  };
  std::vector<Knot> ks;
  Eigen::VectorXd base = net.residual_matrix.col(0);
  for (Eigen::Index k = 0; k < net.width(); ++k) {
    if (net.output_weights.row(k).norm() == 0.0) continue;
    const double w = net.input_weights(k, 0);
    ks.push_back({-net.biases(k) / w, std::abs(w) * net.output_weights.row(k).transpose()});
    if (w < 0) base += w * net.output_weights.row(k).transpose();
  }
  std::sort(ks.begin(), ks.end(), [](const Knot& a, const Knot& b) { return a.loc < b.loc; });
  for (std::size_t k = 1; k < ks.size(); ++k)
    require(ks[k].loc > ks[k - 1].loc, ErrorCode::invalid_argument,
            "net is not canonical: two neurons activate at " + io::format_double(ks[k].loc));
  CPWLFunction f;
  f.base_slope = base;
  f.slope_changes.resize(static_cast<Eigen::Index>(ks.size()), T);
  for (std::size_t k = 0; k < ks.size(); ++k) {
    f.knots.push_back(ks[k].loc);
    f.slope_changes.row(static_cast<Eigen::Index>(k)) = ks[k].mu.transpose();
  }
  f.base_offset = forward(net, f.reference_point());
  return f;
}

/// CPWL -> width-K net with one +1-direction neuron per knot; unused neurons
/// are zero. The affine part goes to the residual.
inline ShallowReLUNet cpwl_to_net(const CPWLFunction& f, Eigen::Index width) {
  f.validate();
  require(width >= std::max<Eigen::Index>(1, f.num_knots()), ErrorCode::invalid_argument,
          "width " + std::to_string(width) + " is smaller than the knot count " + std::to_string(f.num_knots()));
  ShallowReLUNet net(width, 1, f.num_tasks());
  for (Eigen::Index k = 0; k < f.num_knots(); ++k) {
    net.input_weights(k, 0) = 1.0;
    net.biases(k) = -f.knots[static_cast<std::size_t>(k)];
    net.output_weights.row(k) = f.slope_changes.row(k);
  }
  net.residual_matrix.col(0) = f.base_slope;
  net.residual_offset = f.base_offset - f.base_slope * f.reference_point();
  return net;
}

inline io::json to_json(const CPWLFunction& f) {
  return {{"knots", f.knots},
          {"slope_changes", io::to_json(f.slope_changes)},
          {"base_slope", io::to_json(f.base_slope)},
          {"base_offset", io::to_json(f.base_offset)},
          {"reference_point", f.reference_point()}};
}

inline CPWLFunction cpwl_from_json(const io::json& j) {
  for (const char* key : {"knots", "slope_changes", "base_slope", "base_offset"})
    require(j.contains(key), ErrorCode::schema_error, std::string("CPWL JSON missing '") + key + "'");
  CPWLFunction f;
  f.knots = j["knots"].get<std::vector<double>>();
  f.base_slope = io::vector_from_json(j["base_slope"]);
  f.base_offset = io::vector_from_json(j["base_offset"]);
  f.slope_changes = io::matrix_from_json(j["slope_changes"], f.base_slope.size());
  f.validate();
  return f;
}

inline io::json to_json(const AlignmentReport& r) {
  io::json entries = io::json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"index", e.index},
                       {"delta_left", io::to_json(e.delta_left)},
                       {"delta_right", io::to_json(e.delta_right)},
                       {"both_nonzero", e.both_nonzero},
                       {"cosine", e.both_nonzero ? io::json(e.cosine) : io::json(nullptr)},
                       {"aligned", e.aligned}});
  }
  return {{"verdict", to_string(r.verdict)}, {"cosine_tolerance", r.cosine_tolerance}, {"entries", entries}};
}

}  // namespace mtlrelu
