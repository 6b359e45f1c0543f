#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mtlrelu/error.hpp"
#include "mtlrelu/io.hpp"
#include "mtlrelu/rng.hpp"

namespace mtlrelu {

/// N input points in R^d with one label column per task (N x T).
///
/// Univariate datasets are kept sorted by x with labels permuted alongside,
/// and duplicate x values are rejected: two different labels at one x cannot
/// both be interpolated.
class MultiTaskDataset {
 public:
  MultiTaskDataset() = default;

  MultiTaskDataset(Eigen::MatrixXd inputs, Eigen::MatrixXd labels)
      : inputs_(std::move(inputs)), labels_(std::move(labels)) {
    require(inputs_.rows() == labels_.rows(), ErrorCode::dimension_mismatch,
            "inputs have " + std::to_string(inputs_.rows()) + " rows, labels " +
                std::to_string(labels_.rows()));
    require(inputs_.rows() >= 2, ErrorCode::too_few_points, "need at least 2 points");
    require(inputs_.cols() >= 1, ErrorCode::dimension_mismatch, "input dimension must be >= 1");
    require(labels_.cols() >= 1, ErrorCode::schema_error, "need at least one label column");
    require(inputs_.allFinite() && labels_.allFinite(), ErrorCode::invalid_argument,
            "non-finite value in dataset");
    if (inputs_.cols() == 1) canonicalize_univariate();
  }

  const Eigen::MatrixXd& inputs() const noexcept { return inputs_; }
  const Eigen::MatrixXd& labels() const noexcept { return labels_; }
  Eigen::Index num_points() const noexcept { return inputs_.rows(); }
  Eigen::Index input_dim() const noexcept { return inputs_.cols(); }
  Eigen::Index num_tasks() const noexcept { return labels_.cols(); }
  bool univariate() const noexcept { return inputs_.cols() == 1; }

  /// Sorted x values of a univariate dataset.
  Eigen::VectorXd xs() const {
    require(univariate(), ErrorCode::dimension_mismatch, "xs() requires d = 1");
    return inputs_.col(0);
  }

  /// Dataset restricted to a subset of task columns, in the given order.
  MultiTaskDataset select_tasks(const std::vector<Eigen::Index>& tasks) const {
    Eigen::MatrixXd y(num_points(), static_cast<Eigen::Index>(tasks.size()));
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      require(tasks[j] >= 0 && tasks[j] < num_tasks(), ErrorCode::invalid_argument, "task index out of range");
      y.col(static_cast<Eigen::Index>(j)) = labels_.col(tasks[j]);
    }
    return MultiTaskDataset(inputs_, std::move(y));
  }

  bool operator==(const MultiTaskDataset& other) const {
    return inputs_.rows() == other.inputs_.rows() && inputs_.cols() == other.inputs_.cols() &&
           labels_.cols() == other.labels_.cols() && inputs_ == other.inputs_ && labels_ == other.labels_;
  }

 private:
  void canonicalize_univariate() {
    const auto n = inputs_.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return inputs_(a, 0) < inputs_(b, 0); });
    Eigen::MatrixXd x(n, 1), y(n, labels_.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = inputs_(order[static_cast<std::size_t>(i)], 0);
      y.row(i) = labels_.row(order[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index i = 1; i < n; ++i)
      require(x(i, 0) > x(i - 1, 0), ErrorCode::duplicate_input,
              "duplicate univariate input x = " + io::format_double(x(i, 0)));
    inputs_ = std::move(x);
    labels_ = std::move(y);
  }

  Eigen::MatrixXd inputs_;
  Eigen::MatrixXd labels_;
};

enum class TaskKind { bernoulli, gaussian, permutation, student_teacher };

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "bernoulli") return TaskKind::bernoulli;
  if (s == "gaussian") return TaskKind::gaussian;
  if (s == "permutation" || s == "permutation-augment") return TaskKind::permutation;
  if (s == "student-teacher" || s == "student_teacher") return TaskKind::student_teacher;
  throw Error(ErrorCode::schema_error, "unknown task kind '" + s + "'");
}

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::bernoulli: return "bernoulli";
    case TaskKind::gaussian: return "gaussian";
    case TaskKind::permutation: return "permutation";
    case TaskKind::student_teacher: return "student-teacher";
  }
  return "unknown";
}

struct TaskGenSpec {
  TaskKind kind = TaskKind::gaussian;
  int count = 1;
  std::uint64_t seed = 0;
  // student-teacher only
  int teacher_neurons = 25;
  int teacher_dim = 5;
  int teacher_points = 20;
};

// Stream layout for a seed: stream 1000 + t draws task column t, stream 1
// draws column permutations, streams 2 and 3 draw teacher weights and inputs.
namespace streams {
inline constexpr std::uint64_t permutation = 1;
inline constexpr std::uint64_t teacher_weights = 2;
inline constexpr std::uint64_t teacher_inputs = 3;
inline constexpr std::uint64_t task_column_base = 1000;
}  // namespace streams

/// Eight points on the vertices of two origin-centred squares: the outer
/// (side 2) labelled 0, the inner (side 1) labelled 1.
inline MultiTaskDataset make_two_squares() {
  Eigen::MatrixXd x(8, 2);
  Eigen::MatrixXd y(8, 1);
  const double outer[4][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
  for (int i = 0; i < 4; ++i) {
    x(i, 0) = outer[i][0];
    x(i, 1) = outer[i][1];
    y(i, 0) = 0.0;
    x(i + 4, 0) = 0.5 * outer[i][0];
    x(i + 4, 1) = 0.5 * outer[i][1];
    y(i + 4, 0) = 1.0;
  }
  return MultiTaskDataset(std::move(x), std::move(y));
}

/// The five-point univariate dataset used by the fig4 experiment.
///
/// The labels form a convex profile whose consecutive slope changes are
/// aligned, so the single-task interpolation problem has infinitely many
/// minimum-cost solutions while connect-the-dots remains one of them.
inline MultiTaskDataset make_fig4_dataset() {
  Eigen::MatrixXd x(5, 1);
  Eigen::MatrixXd y(5, 1);
  x << -2, -1, 0, 1, 2;
  y << 2, 0.5, 0, 0.5, 2;
  return MultiTaskDataset(std::move(x), std::move(y));
}

/// Draws one label column for task column index `column` of a spec.
inline Eigen::VectorXd draw_task_column(TaskKind kind, std::uint64_t seed, std::uint64_t column, Eigen::Index n) {
  Rng rng(seed, streams::task_column_base + column);
  Eigen::VectorXd col(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (kind) {
      case TaskKind::bernoulli: col(i) = rng.bernoulli() ? 1.0 : 0.0; break;
      case TaskKind::gaussian: col(i) = rng.normal(); break;
      default: throw Error(ErrorCode::invalid_argument, "column draws need bernoulli or gaussian");
    }
  }
  return col;
}

/// Appends spec.count i.i.d. task columns (bernoulli {0,1} or standard normal).
inline MultiTaskDataset augment_with_random_tasks(const MultiTaskDataset& base, const TaskGenSpec& spec) {
  require(spec.count >= 1, ErrorCode::invalid_argument, "task count must be >= 1");
  require(spec.kind == TaskKind::bernoulli || spec.kind == TaskKind::gaussian, ErrorCode::invalid_argument,
          "augment_with_random_tasks draws bernoulli or gaussian columns; use permute_tasks or "
          "make_student_teacher for " + to_string(spec.kind));
  const auto n = base.num_points();
  const auto t0 = base.num_tasks();
  Eigen::MatrixXd y(n, t0 + spec.count);
  y.leftCols(t0) = base.labels();
  for (int j = 0; j < spec.count; ++j)
    y.col(t0 + j) = draw_task_column(spec.kind, spec.seed, static_cast<std::uint64_t>(j), n);
  return MultiTaskDataset(base.inputs(), std::move(y));
}

/// Dataset made only of random task columns on the given inputs.
inline MultiTaskDataset random_tasks_on(const Eigen::MatrixXd& inputs, const TaskGenSpec& spec) {
  require(spec.count >= 1, ErrorCode::invalid_argument, "task count must be >= 1");
  Eigen::MatrixXd y(inputs.rows(), spec.count);
  for (int j = 0; j < spec.count; ++j)
    y.col(j) = draw_task_column(spec.kind, spec.seed, static_cast<std::uint64_t>(j), inputs.rows());
  return MultiTaskDataset(inputs, std::move(y));
}

/// Assigns tasks to outputs by a uniformly random permutation of the label
/// columns. Returns the dataset and the permutation (new column j holds old
/// column perm[j]).
inline std::pair<MultiTaskDataset, std::vector<std::size_t>> permute_tasks(const MultiTaskDataset& base,
                                                                          std::uint64_t seed) {
  Rng rng(seed, streams::permutation);
  auto perm = rng.permutation(static_cast<std::size_t>(base.num_tasks()));
  Eigen::MatrixXd y(base.num_points(), base.num_tasks());
  for (std::size_t j = 0; j < perm.size(); ++j)
    y.col(static_cast<Eigen::Index>(j)) = base.labels().col(static_cast<Eigen::Index>(perm[j]));
  return {MultiTaskDataset(base.inputs(), std::move(y)), std::move(perm)};
}

struct StudentTeacher {
  MultiTaskDataset data;
  Eigen::MatrixXd teacher_weights;  // one unit-norm row per teacher neuron / task
};

/// Teacher neurons with unit-norm input weights, standard normal inputs and
/// labels y_it = (w_t . x_i)_+.
inline StudentTeacher make_student_teacher(const TaskGenSpec& spec) {
  require(spec.kind == TaskKind::student_teacher, ErrorCode::invalid_argument, "spec.kind must be student-teacher");
  require(spec.teacher_neurons >= 1 && spec.teacher_dim >= 1 && spec.teacher_points >= 2,
          ErrorCode::invalid_argument, "bad teacher dimensions");
  Rng wrng(spec.seed, streams::teacher_weights);
  Eigen::MatrixXd w(spec.teacher_neurons, spec.teacher_dim);
  for (Eigen::Index t = 0; t < w.rows(); ++t) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(t, j) = wrng.normal();
    w.row(t) /= w.row(t).norm();
  }
  Rng xrng(spec.seed, streams::teacher_inputs);
  Eigen::MatrixXd x(spec.teacher_points, spec.teacher_dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = xrng.normal();
  Eigen::MatrixXd y = (x * w.transpose()).cwiseMax(0.0);
  return {MultiTaskDataset(std::move(x), std::move(y)), std::move(w)};
}

// CSV exchange format: header x1..xd,y1..yT then one row per point.

inline std::string to_csv(const MultiTaskDataset& data) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < data.input_dim(); ++j) header.push_back("x" + std::to_string(j + 1));
  for (Eigen::Index t = 0; t < data.num_tasks(); ++t) header.push_back("y" + std::to_string(t + 1));
  Eigen::MatrixXd rows(data.num_points(), data.input_dim() + data.num_tasks());
  rows << data.inputs(), data.labels();
  return io::csv_table(header, rows);
}

inline MultiTaskDataset dataset_from_csv(const std::string& text) {
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      auto pos = text.find('\n', start);
      if (pos == std::string::npos) pos = text.size();
      std::string line = text.substr(start, pos - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) lines.push_back(std::move(line));
      start = pos + 1;
    }
  }
  require(!lines.empty(), ErrorCode::schema_error, "empty CSV");
  const auto header = io::split(lines[0]);
  Eigen::Index d = 0, t = 0;
  for (const auto& name : header) {
    const auto expect_x = "x" + std::to_string(d + 1);
    const auto expect_y = "y" + std::to_string(t + 1);
    if (t == 0 && name == expect_x) {
      ++d;
    } else if (name == expect_y) {
      ++t;
    } else {
      throw Error(ErrorCode::schema_error, "unexpected header column '" + name + "' (want x1..xd,y1..yT)");
    }
  }
  require(d >= 1, ErrorCode::schema_error, "no input columns");
  require(t >= 1, ErrorCode::schema_error, "no label columns");
  const auto n = static_cast<Eigen::Index>(lines.size() - 1);
  require(n >= 2, ErrorCode::too_few_points, "need at least 2 data rows");
  Eigen::MatrixXd x(n, d), y(n, t);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto cells = io::split(lines[static_cast<std::size_t>(i + 1)]);
    require(static_cast<Eigen::Index>(cells.size()) == d + t, ErrorCode::parse_error,
            "row " + std::to_string(i + 1) + " has " + std::to_string(cells.size()) + " cells");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = io::parse_double(cells[static_cast<std::size_t>(j)]);
    for (Eigen::Index j = 0; j < t; ++j) y(i, j) = io::parse_double(cells[static_cast<std::size_t>(d + j)]);
  }
  return MultiTaskDataset(std::move(x), std::move(y));
}

inline void save_csv(const MultiTaskDataset& data, const std::filesystem::path& path) {
  io::write_file(path, to_csv(data));
}

inline MultiTaskDataset load_csv(const std::filesystem::path& path) { return dataset_from_csv(io::read_file(path)); }

}  // namespace mtlrelu
