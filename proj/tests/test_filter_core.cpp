#include <gtest/gtest.h>

#include <random>

#include "flychain/chain_model.hpp"
#include "flychain/filter_core.hpp"
#include "test_support.hpp"

namespace flychain {
namespace {

GaussianBelief scalar(double mean, double var) {
  return {Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Constant(1, 1, var)};
}

Eigen::MatrixXd random_spd(int n, std::mt19937_64& rng) {
  const Eigen::MatrixXd a = testing::random_vector(n * n, 1.0, rng).reshaped(n, n);
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

TEST(KalmanFilter, PredictExamples) {
  std::mt19937_64 rng(1);
  GaussianBelief b{testing::random_vector(3, 1.0, rng), random_spd(3, rng)};
  const auto same = kf_predict(b, Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Zero(3, 3),
                               Eigen::VectorXd::Zero(3));
  EXPECT_EQ(same.mean, b.mean);
  EXPECT_LT(max_abs(same.cov - b.cov), 1e-15);
  const auto grown = kf_predict(scalar(0, 1), Eigen::MatrixXd::Ones(1, 1),
                                Eigen::MatrixXd::Constant(1, 1, 0.5), Eigen::VectorXd::Zero(1));
  EXPECT_DOUBLE_EQ(grown.cov(0, 0), 1.5);
  EXPECT_THROW(kf_predict(b, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(3, 3),
                          Eigen::VectorXd::Zero(3)),
               std::invalid_argument);
}

TEST(KalmanFilter, UpdateExamples) {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  const auto fused = kf_update(scalar(0, 1), Eigen::VectorXd::Ones(1), one, one);
  EXPECT_DOUBLE_EQ(fused.mean(0), 0.5);
  EXPECT_DOUBLE_EQ(fused.cov(0, 0), 0.5);

  const auto ignored = kf_update(scalar(0.3, 2.0), Eigen::VectorXd::Constant(1, 50.0), one,
                                 Eigen::MatrixXd::Constant(1, 1, 1e12));
  EXPECT_NEAR(ignored.mean(0), 0.3, 1e-6);
  EXPECT_NEAR(ignored.cov(0, 0), 2.0, 1e-6);

  EXPECT_THROW(kf_update(scalar(0, 1), Eigen::VectorXd::Ones(1), one, -2.0 * one), FilterError);
}

TEST(KalmanFilter, SequentialEqualsBatch) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    GaussianBelief b{testing::random_vector(4, 1.0, rng), random_spd(4, rng)};
    const Eigen::MatrixXd h = testing::random_vector(8, 1.0, rng).reshaped(2, 4);
    const Eigen::Vector2d z = testing::random_vector(2, 1.0, rng);
    const Eigen::Vector2d r(0.3, 0.7);
    const auto batch = kf_update(b, z, h, Eigen::MatrixXd(r.asDiagonal()));
    auto seq = kf_update(b, z.head(1), h.topRows(1), Eigen::MatrixXd::Constant(1, 1, r(0)));
    seq = kf_update(seq, z.tail(1), h.bottomRows(1), Eigen::MatrixXd::Constant(1, 1, r(1)));
    EXPECT_LT(max_abs(batch.mean - seq.mean), 1e-10);
    EXPECT_LT(max_abs(batch.cov - seq.cov), 1e-10);
  }
}

TEST(KalmanFilter, UpdateNeverInflatesVariances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + trial % 5, m = 1 + trial % 3;
    GaussianBelief b{testing::random_vector(n, 1.0, rng), random_spd(n, rng)};
    const Eigen::MatrixXd h = testing::random_vector(m * n, 2.0, rng).reshaped(m, n);
    const auto post = kf_update(b, testing::random_vector(m, 1.0, rng), h, random_spd(m, rng));
    for (int i = 0; i < n; ++i) EXPECT_LE(post.cov(i, i), b.cov(i, i) * (1 + 1e-12));
    EXPECT_LT(max_abs(post.cov - post.cov.transpose()), 1e-10);
  }
}

TEST(NumericalJacobian, PolynomialAndLinear) {
  const auto f = [](const Eigen::VectorXd& x) {
    return Eigen::Vector2d(x(0) * x(0), x(0) * x(1)).eval();
  };
  Eigen::Matrix2d expected;
  expected << 6, 0, 2, 3;
  EXPECT_LT(max_abs(numerical_jacobian(f, Eigen::Vector2d(3, 2)) - expected), 1e-6);

  std::mt19937_64 rng(4);
  const Eigen::MatrixXd a = testing::random_vector(12, 1.0, rng).reshaped(3, 4);
  const auto lin = [&](const Eigen::VectorXd& x) { return (a * x).eval(); };
  EXPECT_LT(max_abs(numerical_jacobian(lin, testing::random_vector(4, 1.0, rng)) - a), 1e-9);
}

TEST(NumericalJacobian, NamesFailingColumn) {
  const auto f = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, x(1) > 0.5 ? NAN : 0.0);
  };
  try {
    numerical_jacobian(f, Eigen::Vector2d(0.0, 0.5));
    FAIL() << "expected FilterError";
  } catch (const FilterError& e) {
    EXPECT_NE(std::string(e.what()).find("column 1"), std::string::npos);
  }
}

TEST(NumericalJacobian, FullDynamicsStepHalving) {
  std::mt19937_64 rng(5);
  const auto p = testing::random_chain(2, rng);
  const Eigen::VectorXd x = testing::random_vector(8, 2.0, rng);
  const Eigen::VectorXd tau = Eigen::VectorXd::Constant(1, 0.7);
  const auto f = [&](const Eigen::VectorXd& s) {
    Eigen::VectorXd out(8);
    out << s.head(4) + 1e-3 * s.tail(4),
        s.tail(4) + 1e-3 * forward_dynamics(p, s.head(4), s.tail(4), tau, Coordinates::kFull);
    return out;
  };
  EXPECT_LT(max_abs(numerical_jacobian(f, x, 1e-6) - numerical_jacobian(f, x, 5e-7)), 1e-4);
}

// Systems whose entries sit on a coarse binary grid, so every product and
// sum inside the filters is exact and EKF and KF must agree to the bit.
struct DyadicSystem {
  Eigen::MatrixXd f, h, q, r;
  Eigen::VectorXd b, mean, z;
  Eigen::MatrixXd cov;
};

DyadicSystem dyadic_system(int n, int m, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> k(-8, 8);
  const auto grid = [&](int rows, int cols) {
    Eigen::MatrixXd out(rows, cols);
    for (auto& v : out.reshaped()) v = k(rng) / 8.0;
    return out;
  };
  DyadicSystem s;
  s.f = grid(n, n);
  s.h = grid(m, n);
  s.b = grid(n, 1);
  s.mean = grid(n, 1);
  s.z = grid(m, 1);
  const Eigen::MatrixXd a = grid(n, n);
  s.cov = a * a.transpose() + Eigen::MatrixXd::Identity(n, n);
  s.q = Eigen::MatrixXd::Identity(n, n) / 4.0;
  s.r = Eigen::MatrixXd::Identity(m, m) / 2.0;
  return s;
}

TEST(Ekf, EqualsKalmanFilterOnLinearModels) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = dyadic_system(1 + trial % 6, 1 + trial % 3, rng);
    const auto f = [&](const Eigen::VectorXd& x) { return (s.f * x + s.b).eval(); };
    const auto h = [&](const Eigen::VectorXd& x) { return (s.h * x).eval(); };
    const GaussianBelief prior{s.mean, s.cov};
    const auto ekf = ekf_step(prior, f, h, s.q, s.r, s.z);
    const auto kf = kf_update(kf_predict(prior, s.f, s.q, s.b), s.z, s.h, s.r);
    EXPECT_LT(max_abs(ekf.mean - kf.mean), 1e-12);
    EXPECT_LT(max_abs(ekf.cov - kf.cov), 1e-12);
  }
}

TEST(Ekf, CloseToKalmanFilterOnGeneralLinearModels) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4, m = 2;
    const Eigen::MatrixXd a = testing::random_vector(n * n, 1.0, rng).reshaped(n, n);
    const Eigen::MatrixXd c = testing::random_vector(m * n, 1.0, rng).reshaped(m, n);
    const GaussianBelief prior{testing::random_vector(n, 1.0, rng), random_spd(n, rng)};
    const Eigen::MatrixXd q = random_spd(n, rng), r = random_spd(m, rng);
    const Eigen::VectorXd z = testing::random_vector(m, 1.0, rng);
    const auto ekf = ekf_step(prior, [&](const Eigen::VectorXd& x) { return (a * x).eval(); },
                              [&](const Eigen::VectorXd& x) { return (c * x).eval(); }, q, r, z);
    const auto kf = kf_update(kf_predict(prior, a, q, Eigen::VectorXd::Zero(n)), z, c, r);
    EXPECT_LT(max_abs(ekf.mean - kf.mean), 1e-8);
    EXPECT_LT(max_abs(ekf.cov - kf.cov), 1e-8);
  }
}

TEST(Ekf, ZeroInnovationAndNoiselessTracking) {
  const GaussianBelief b{Eigen::Vector2d(1.0, -2.0), Eigen::Matrix2d::Identity()};
  const auto id = [](const Eigen::VectorXd& x) { return x; };
  const auto post = ekf_step(b, id, id, Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Identity(), b.mean);
  EXPECT_LT(max_abs(post.mean - b.mean), 1e-15);
  EXPECT_LT(post.cov(0, 0), b.cov(0, 0));

  // Damped pendulum, exact measurements of its angle.
  const auto f = [](const Eigen::VectorXd& x) {
    return Eigen::Vector2d(x(0) + 0.01 * x(1), x(1) - 0.01 * (9.81 * std::sin(x(0)) + 0.1 * x(1))).eval();
  };
  const auto h = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, std::sin(x(0))); };
  Eigen::VectorXd truth = Eigen::Vector2d(0.8, 0.0);
  GaussianBelief est{truth, 1e-9 * Eigen::Matrix2d::Identity()};
  for (int k = 0; k < 100; ++k) {
    truth = f(truth);
    est = ekf_step(est, f, h, 1e-10 * Eigen::Matrix2d::Identity(), Eigen::MatrixXd::Constant(1, 1, 1e-6), h(truth));
    EXPECT_LT((est.mean - truth).norm(), 1e-6);
  }
}

TEST(Ukf, WeightIdentities) {
  for (const UkfScaling sc : {UkfScaling{}, UkfScaling{1.0, 2.0, 0.0}, UkfScaling{0.5, 2.0, 1.0}}) {
    for (int l : {1, 3, 8, 12}) {
      const GaussianBelief b{Eigen::VectorXd::Zero(l), Eigen::MatrixXd::Identity(l, l)};
      const auto set = sigma_points(b, sc);
      ASSERT_EQ(set.points.size(), static_cast<std::size_t>(2 * l + 1));
      // Each weight carries its own rounding error, of order eps times its
      // magnitude, which bounds how exactly the sums can close.
      const double scale = std::max(1.0, set.mean_weights.cwiseAbs().sum());
      EXPECT_NEAR(set.mean_weights.sum(), 1.0, 1e-12 * scale);
      EXPECT_NEAR(set.cov_weights.sum(), 1.0 + (1.0 - sc.alpha * sc.alpha + sc.beta), 1e-12 * scale);
    }
  }
}

TEST(Ukf, SigmaPointsReproduceMoments) {
  std::mt19937_64 rng(8);
  const GaussianBelief b{testing::random_vector(5, 1.0, rng), random_spd(5, rng)};
  const auto set = sigma_points(b, UkfScaling{});
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(5);
  for (std::size_t i = 1; i < set.points.size(); ++i) mean += set.mean_weights(i) * (set.points[i] - set.points[0]);
  EXPECT_LT(max_abs(mean), 1e-9);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(5, 5);
  for (std::size_t i = 0; i < set.points.size(); ++i) {
    const Eigen::VectorXd d = set.points[i] - b.mean;
    cov += set.cov_weights(i) * d * d.transpose();
  }
  EXPECT_LT(max_abs(cov - b.cov), 1e-9);
}

TEST(Ukf, EqualsKalmanFilterOnLinearModels) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6, m = 1 + trial % 3;
    const Eigen::MatrixXd a = testing::random_vector(n * n, 1.0, rng).reshaped(n, n);
    const Eigen::MatrixXd c = testing::random_vector(m * n, 1.0, rng).reshaped(m, n);
    const Eigen::VectorXd u = testing::random_vector(n, 1.0, rng);
    const GaussianBelief prior{testing::random_vector(n, 1.0, rng), random_spd(n, rng)};
    const Eigen::MatrixXd q = random_spd(n, rng), r = random_spd(m, rng);
    const Eigen::VectorXd z = testing::random_vector(m, 1.0, rng);
    const auto ukf = ukf_step(prior, [&](const Eigen::VectorXd& x) { return (a * x + u).eval(); },
                              [&](const Eigen::VectorXd& x) { return (c * x).eval(); }, q, r, z);
    const auto kf = kf_update(kf_predict(prior, a, q, u), z, c, r);
    EXPECT_LT(max_abs(ukf.mean - kf.mean), 1e-9);
    EXPECT_LT(max_abs(ukf.cov - kf.cov), 1e-9);
  }
}

TEST(Ukf, CapturesSecondMoment) {
  const auto set = sigma_points(scalar(0.0, 1.0), UkfScaling{});
  double mean = 0.0;
  for (std::size_t i = 0; i < set.points.size(); ++i) {
    mean += set.mean_weights(i) * set.points[i](0) * set.points[i](0);
  }
  EXPECT_NEAR(mean, 1.0, 1e-9);
}

TEST(Ukf, CholeskyJitterAndFailure) {
  Eigen::Matrix2d singular;
  singular << 1, 1, 1, 1;
  const Eigen::MatrixXd l = robust_cholesky(singular);
  EXPECT_LT(max_abs(l * l.transpose() - singular), 1e-6);
  Eigen::Matrix2d indefinite;
  indefinite << 1, 0, 0, -1;
  EXPECT_THROW(robust_cholesky(indefinite), FilterError);
  EXPECT_THROW(sigma_points({Eigen::Vector2d::Zero(), indefinite}, UkfScaling{}), FilterError);
}

}  // namespace
}  // namespace flychain
