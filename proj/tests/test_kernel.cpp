#include <gtest/gtest.h>

#include <cmath>

#include "mtlrelu/cpwl.hpp"
#include "mtlrelu/kernel.hpp"
#include "mtlrelu/mtl_analysis.hpp"
#include "support/criteria.hpp"
#include "support/generators.hpp"

using namespace mtlrelu;
using namespace mtlrelu::testing;

namespace {

NeuronKernel single_relu_kernel() {
  return {Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
}

double min_eigenvalue(const Eigen::MatrixXd& g) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues().minCoeff();
}

}  // namespace

TEST(KernelEval, SobolevAtAnchor) {
  const KernelSpec k = SobolevKernel{0.7};
  EXPECT_EQ(kernel_eval(k, 0.7, 0.7), 1.0);
}

TEST(KernelEval, SobolevHandValue) {
  const KernelSpec k = SobolevKernel{0.0};
  EXPECT_EQ(kernel_eval(k, 2.0, 3.0), 3.0);
}

TEST(KernelEval, SobolevIsOnePlusMinMinusAnchorRightOfAnchor) {
  Rng rng(1);
  const KernelSpec k = SobolevKernel{-1.0};
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-1.0, 5.0), xp = rng.uniform(-1.0, 5.0);
    EXPECT_NEAR(kernel_eval(k, x, xp), 1.0 + std::min(x, xp) + 1.0, 1e-12);
  }
}

TEST(KernelEval, NeuronSingleFeature) {
  const KernelSpec k = single_relu_kernel();
  EXPECT_EQ(kernel_eval(k, 1.0, 2.0), 2.0);
  EXPECT_EQ(kernel_eval(k, -1.0, 2.0), 0.0);
}

TEST(KernelEval, DimensionMismatch) {
  const KernelSpec k = NeuronKernel{Eigen::MatrixXd::Ones(2, 3), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2)};
  try {
    kernel_eval(k, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

TEST(Gram, SymmetricPsdForBothKernels) {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::MatrixXd pts = normal_matrix(rng, 12, 1, 2.0);
    const KernelSpec s = SobolevKernel{pts.minCoeff()};
    const Eigen::MatrixXd gs = gram(s, pts);
    EXPECT_EQ((gs - gs.transpose()).norm(), 0.0);
    EXPECT_GE(min_eigenvalue(gs), -1e-10 * gs.trace());

    const auto inst = random_duality_instance(rng);
    const Eigen::MatrixXd gn = gram(inst.kernel, inst.inputs);
    EXPECT_EQ((gn - gn.transpose()).norm(), 0.0);
    EXPECT_GE(min_eigenvalue(gn), -1e-10 * std::max(gn.trace(), 1e-300));
  }
}

TEST(Interpolate, SinglePoint) {
  Eigen::MatrixXd x(1, 1);
  x << 0.4;
  const auto m = kernel_interpolate(SobolevKernel{0.4}, x, Eigen::VectorXd::Constant(1, 2.5));
  EXPECT_DOUBLE_EQ(m.alpha(0), 2.5);
}

TEST(Interpolate, SobolevMatchesConnectTheDotsOnThreePoints) {
  Eigen::MatrixXd x(3, 1), y(3, 1);
  x << 0, 1, 2;
  y << 0, 1, 0;
  const MultiTaskDataset data(x, y);
  const auto m = kernel_interpolate(sobolev_for(data), data, 0);
  EXPECT_NEAR(predict(m, Eigen::VectorXd::Constant(1, 0.5)), 0.5, 1e-12);
  EXPECT_NEAR(predict(m, Eigen::VectorXd::Constant(1, 1.5)), 0.5, 1e-12);
}

TEST(Interpolate, SymmetricDataSymmetricValues) {
  Eigen::MatrixXd x(5, 1), y(5, 1);
  x << -2, -1, 0, 1, 2;
  y << 3, 1, 0, 1, 3;
  const MultiTaskDataset data(x, y);
  const auto ctd_like = kernel_interpolate(sobolev_for(data), data, 0);
  for (double t : {0.3, 0.8, 1.7})
    EXPECT_NEAR(predict(ctd_like, Eigen::VectorXd::Constant(1, t)), predict(ctd_like, Eigen::VectorXd::Constant(1, -t)),
                1e-12);
  Rng rng(3);
  NeuronKernel k{normal_matrix(rng, 8, 1), normal_vector(rng, 8), Eigen::VectorXd::Ones(8)};
  // mirrored feature set makes the neuron kernel symmetric too
  NeuronKernel sym{Eigen::MatrixXd(16, 1), Eigen::VectorXd(16), Eigen::VectorXd::Ones(16)};
  sym.weights << k.weights, -k.weights;
  sym.biases << k.biases, k.biases;
  const auto nm = kernel_ridge(sym, data, 0, 1e-3);
  for (double t : {0.3, 0.8, 1.7})
    EXPECT_NEAR(predict(nm, Eigen::VectorXd::Constant(1, t)), predict(nm, Eigen::VectorXd::Constant(1, -t)), 1e-9);
}

TEST(Interpolate, SobolevEqualsConnectTheDotsSweep) {
  Rng rng(4);
  const auto s = sobolev_sweep(rng, 30);
  EXPECT_LE(s.worst_scaled_error, 1e-8);
}

TEST(Interpolate, SatisfiesLinearSystem) {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const auto data = random_univariate(rng, 8, 1);
    const auto m = kernel_ridge(sobolev_for(data), data, 0, rep % 2 == 0 ? 0.0 : 0.1);
    const Eigen::VectorXd lhs = gram(m.spec, m.centers) * m.alpha + (m.lambda + m.jitter) * m.alpha;
    EXPECT_LE((lhs - data.labels().col(0)).norm(), 1e-8 * data.labels().col(0).norm());
  }
}

TEST(Interpolate, SingularGramReportsCondition) {
  // one feature, three points: rank-1 Gram cannot interpolate generic labels
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  try {
    kernel_interpolate(single_relu_kernel(), x, Eigen::Vector3d(1, 0, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::singular_system);
    EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
  }
}

TEST(Ridge, LargeLambdaShrinksToZero) {
  Rng rng(6);
  const auto data = random_univariate(rng, 6, 1);
  const auto m = kernel_ridge(sobolev_for(data), data, 0, 1e12);
  EXPECT_LE(predict_batch(m, data.inputs()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Ridge, RejectsNegativeLambda) {
  const auto data = make_fig4_dataset();
  EXPECT_THROW(kernel_ridge(sobolev_for(data), data, 0, -1.0), Error);
}

TEST(Ridge, NeuronPredictorEqualsFeatureExpansion) {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto inst = random_duality_instance(rng);
    const auto m = kernel_ridge(inst.kernel, inst.inputs, inst.y, inst.lambda);
    const Eigen::VectorXd v = neuron_output_weights(m);
    const Eigen::MatrixXd probe = normal_matrix(rng, 10, inst.inputs.cols());
    const Eigen::VectorXd direct = inst.kernel.features_batch(probe) * v;
    EXPECT_LE((predict_batch(m, probe) - direct).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + direct.cwiseAbs().maxCoeff()));
  }
}

TEST(Ridge, DualityWithWeightedL2) {
  Rng rng(8);
  const auto s = duality_sweep(rng, 100);
  EXPECT_LE(s.worst_rel_diff, 1e-8);
}

TEST(Reproducing, ZeroAndRandom) {
  Rng rng(9);
  const auto inst = random_duality_instance(rng);
  EXPECT_EQ(reproducing_property_check(inst.kernel, Eigen::VectorXd::Zero(inst.kernel.weights.rows()),
                                       Eigen::VectorXd(inst.inputs.row(0).transpose())),
            0.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto d = random_duality_instance(rng);
    const Eigen::VectorXd v = normal_vector(rng, d.kernel.weights.rows());
    const Eigen::VectorXd x = d.inputs.row(0).transpose();
    const double r = reproducing_property_check(d.kernel, v, x);
    EXPECT_LE(r, 1e-10 * (1.0 + std::abs(d.kernel.features(x).dot(v))));
    worst = std::max(worst, r);
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(NeuronKernel, RejectsNonPositiveQ) {
  NeuronKernel k = single_relu_kernel();
  k.q_diag(0) = 0.0;
  EXPECT_THROW(k.validate(), Error);
  Eigen::MatrixXd x(2, 1);
  x << 0, 1;
  EXPECT_THROW(kernel_ridge(k, x, Eigen::Vector2d(1, 2), 0.1), Error);
}

TEST(KernelJson, RoundTrip) {
  Rng rng(10);
  const auto inst = random_duality_instance(rng);
  const auto m = kernel_ridge(inst.kernel, inst.inputs, inst.y, inst.lambda);
  const auto back = kernel_model_from_json(io::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.alpha, m.alpha);
  EXPECT_EQ(back.centers, m.centers);
  EXPECT_EQ(predict_batch(back, inst.inputs), predict_batch(m, inst.inputs));
  const KernelSpec s = SobolevKernel{1.5};
  EXPECT_EQ(std::get<SobolevKernel>(kernel_spec_from_json(to_json(s))).x1, 1.5);
  EXPECT_THROW(kernel_spec_from_json({{"variant", "gaussian"}}), Error);
}
