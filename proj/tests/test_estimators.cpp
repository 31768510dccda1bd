#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "flychain/estimators.hpp"
#include "test_support.hpp"

namespace flychain {
namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

struct Scenario {
  ChainParameters params = ChainParameters::two_link_acrobat();
  std::vector<TruthRecord> truth;
  std::vector<SensorSample> sensors;
  std::vector<Eigen::VectorXd> torques;
  EstimatorConfig config;

  Scenario(const TrajectorySpec& traj, const NoiseSpec& noise, bool undamped = false) {
    if (undamped) params.damping.assign(params.damping.size(), 0.0);
    WorldConfig world;
    world.noise = noise;
    truth = simulate_truth(params, traj, world);
    Rng rng = make_rng(world.seed, 0, Stream::kSensorNoise);
    sensors = sample_stream(params, truth, noise, rng);
    for (const auto& r : truth) torques.push_back(r.tau);
    config.noise = noise;
  }

  EstimateRun run(EstimatorKind kind) const {
    return estimate_run(kind, sensors, torques, InitialState::from(truth.front()), params, config);
  }
};

const Scenario& default_noisy() {
  static const Scenario s(TrajectorySpec::back_somersault(), NoiseSpec{});
  return s;
}

const Scenario& default_noiseless() {
  static const Scenario s(TrajectorySpec::back_somersault(), NoiseSpec::noiseless());
  return s;
}

TEST(EstimatorKinds, NamesRoundTrip) {
  for (auto k : kAllEstimatorKinds) EXPECT_EQ(parse_estimator_kind(to_string(k)), k);
  EXPECT_THROW(parse_estimator_kind("kalman"), std::invalid_argument);
}

TEST(FullFilter, MeasurementDimensions) {
  const auto& s = default_noisy();
  Eigen::VectorXd x(8);
  x << s.truth[10].q, s.truth[10].qdot;
  EXPECT_EQ(full_measurement(s.params, x, s.truth[10].tau).size(), 5);
  EXPECT_EQ(stack_full_measurement(s.sensors[10]).size(), 5);
  EXPECT_EQ(stack_posture_measurement(s.sensors[10]).size(), 3);
  EXPECT_EQ(posture_measurement(Eigen::VectorXd::Zero(6), 2).size(), 3);
}

TEST(FullFilter, MeasurementModelMatchesSensorSynthesis) {
  const auto& s = default_noiseless();
  for (std::size_t k = 0; k < s.truth.size(); k += 111) {
    Eigen::VectorXd x(8);
    x << s.truth[k].q, s.truth[k].qdot;
    EXPECT_LT(max_abs(full_measurement(s.params, x, s.truth[k].tau) - stack_full_measurement(s.sensors[k])), 1e-9);
  }
}

TEST(FullFilter, NoiselessPostureTracking) {
  const auto& s = default_noiseless();
  for (auto kind : {EstimatorKind::kFullEkf, EstimatorKind::kFullUkf}) {
    const auto run = s.run(kind);
    for (std::size_t k = 0; k < s.truth.size(); ++k) {
      EXPECT_LT(max_abs(run.estimates[k].q.head(2) - s.truth[k].q.head(2)), 1e-3) << to_string(kind) << " k=" << k;
    }
  }
}

TEST(FullFilter, BaseAngleIsTheEulerSumOfGyroRates) {
  const auto& s = default_noiseless();
  for (auto kind : {EstimatorKind::kFullEkf, EstimatorKind::kFullUkf}) {
    const auto run = s.run(kind);
    double alpha = s.truth[0].q(0);
    for (std::size_t k = 1; k < s.truth.size(); ++k) {
      alpha += s.config.dt * s.truth[k - 1].qdot(0);
      EXPECT_NEAR(run.estimates[k].q(0), alpha, 1e-6) << to_string(kind) << " k=" << k;
      EXPECT_LT(std::abs(run.estimates[k].q(1) - s.truth[k].q(1)), 1e-6) << to_string(kind) << " k=" << k;
    }
  }
}

TEST(FullFilter, EkfAndUkfAgree) {
  const auto& s = default_noiseless();
  const auto ekf = s.run(EstimatorKind::kFullEkf);
  const auto ukf = s.run(EstimatorKind::kFullUkf);
  const NoiseSpec sigma;
  for (std::size_t k = 0; k < s.truth.size(); ++k) {
    EXPECT_LT(max_abs(ekf.estimates[k].q.head(2) - ukf.estimates[k].q.head(2)), 10 * sigma.sigma_enc_pos);
    EXPECT_LT(max_abs(ekf.estimates[k].qdot.head(2) - ukf.estimates[k].qdot.head(2)), 10 * sigma.sigma_enc_vel);
  }
}

TEST(DecoupledPosture, RestAndSingleBodySpinHaveNoAcceleration) {
  auto p = ChainParameters::two_link_acrobat();
  p.damping = {0.0};
  Eigen::VectorXd xp(6);
  xp << 0.3, -0.4, 0.0, 0.0, 5.0, 5.0;
  const Eigen::VectorXd next = posture_prediction(p, xp, Eigen::VectorXd::Zero(1), 1e-3);
  EXPECT_LT(max_abs(next.tail(2)), 1e-12);
  EXPECT_EQ(next(0), 0.3);

  const auto body = testing::single_body();
  const Eigen::VectorXd spin = posture_prediction(body, Eigen::Vector3d(0.3, -6.0, 5.0), Eigen::VectorXd::Zero(0), 1e-3);
  EXPECT_LT(std::abs(spin(2)), 1e-12);
  EXPECT_NEAR(spin(0), 0.3 - 6e-3, 1e-15);
}

TEST(DecoupledPosture, NoiselessAccelerationMatchesTruth) {
  const auto& s = default_noiseless();
  const int n = 2;
  GaussianBelief b;
  b.mean.resize(6);
  b.mean << s.truth[0].q.head(n), s.truth[0].qdot.head(n), s.truth[0].qddot.head(n);
  b.cov = 1e-9 * Eigen::MatrixXd::Identity(6, 6);
  for (std::size_t k = 1; k < s.truth.size(); ++k) {
    b = de_posture_step(b, s.torques[k - 1], s.sensors[k], s.params, s.config, PostureFilter::kEkf);
    EXPECT_LT(max_abs(b.mean.tail(2) - s.truth[k - 1].qddot.head(2)), 1e-3) << "k=" << k;
  }
}

TEST(BallisticPosture, AxisPrediction) {
  EstimatorConfig c;
  c.dt = 0.1;
  const GaussianBelief a{Eigen::Vector3d(1, 1, 0), Eigen::Matrix3d::Identity()};
  EXPECT_LT(max_abs(axis_predict(a, c).mean - Eigen::Vector3d(1.1, 1, 0)), 1e-15);
  const GaussianBelief b{Eigen::Vector3d(0, 0, 2), Eigen::Matrix3d::Identity()};
  EXPECT_LT(max_abs(axis_predict(b, c).mean - Eigen::Vector3d(0.01, 0.2, 2)), 1e-15);
  const Eigen::Vector3d g = axis_noise_gain(0.1);
  EXPECT_LT(max_abs(axis_predict(b, c).cov -
                    (axis_transition(0.1) * b.cov * axis_transition(0.1).transpose() +
                     c.sigma_axis_jerk * c.sigma_axis_jerk * g * g.transpose())), 1e-9);
}

TEST(BallisticPosture, AxesAreIndependent) {
  const auto& s = default_noisy();
  EstimatorConfig c;
  AxisBank bank;
  for (int i = 0; i < 2; ++i) {
    bank.push_back({Eigen::Vector3d(s.truth[0].q(i), s.truth[0].qdot(i), 0.0), 1e-9 * Eigen::Matrix3d::Identity()});
  }
  for (std::size_t k = 1; k < 50; ++k) {
    const AxisBank forward = bme_posture_step(bank, s.sensors[k], c);
    AxisBank reversed(2);
    for (int i : {1, 0}) reversed[i] = axis_update(axis_predict(bank[i], c), i, s.sensors[k], c);
    for (int i = 0; i < 2; ++i) {
      ASSERT_EQ(forward[i].mean, reversed[i].mean);
      ASSERT_EQ(forward[i].cov, reversed[i].cov);
    }
    bank = forward;
  }
}

TEST(ComFilter, PredictionByHand) {
  ChainParameters p = ChainParameters::two_link_acrobat();
  p.gravity = 9.81;
  EstimatorConfig c;
  c.dt = 0.1;
  Eigen::VectorXd x(6);
  x << 0, 1, 0, 0, 0, -9.81;
  const auto out = com_tvkf_predict({x, Eigen::MatrixXd::Identity(6, 6)}, p, c);
  Eigen::VectorXd expected(6);
  expected << 0.1, 1, 0, -0.04905, -0.981, -9.81;
  EXPECT_LT(max_abs(out.mean - expected), 1e-14);
}

TEST(ComFilter, MeasurementModel) {
  ChainParameters p = ChainParameters::two_link_acrobat();
  p.imu_offset = Eigen::Vector2d::Zero();
  Eigen::VectorXd x(6);
  x << 0, 0, 0, 0, 0, -p.gravity;
  // With a one-link body the CoM of the chain is the link CoM; make the
  // chain CoM acceleration vanish by using zero rates.
  PostureEstimate still{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  EXPECT_LT(com_measurement(x, still, p).norm(), 1e-12);

  ChainParameters one;
  one.mass = {1.0};
  one.inertia = {0.1};
  one.com_x = {0.0};
  one.com_y = {0.0};
  one.imu_offset = {0.1, 0.0};
  PostureEstimate spin{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Zero(1)};
  EXPECT_LT((com_measurement(x, spin, one) - Eigen::Vector2d(-0.4, 0.0)).norm(), 1e-9);

  const auto h = com_measurement_matrix(0.7);
  const Eigen::Matrix2d rt = rotation(0.7).transpose();
  for (int col : {0, 1, 3, 4}) EXPECT_EQ(h.col(col).norm(), 0.0);
  EXPECT_EQ(h.col(2), rt.col(0));
  EXPECT_EQ(h.col(5), rt.col(1));
}

TEST(ComFilter, UpdateLeavesUncorrelatedPositionAlone) {
  const auto& s = default_noisy();
  Eigen::VectorXd x(6);
  x << 1, 2, 0.3, 4, 5, -9.0;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(6, 6);
  const PostureEstimate posture{s.truth[5].q.head(2), s.truth[5].qdot.head(2), s.truth[5].qddot.head(2)};
  const auto post = com_tvkf_update({x, cov}, posture, s.sensors[5].accel, s.params, s.config);
  for (int i : {0, 1, 3, 4}) EXPECT_NEAR(post.mean(i), x(i), 1e-12);
  EXPECT_GT(std::abs(post.mean(2) - x(2)) + std::abs(post.mean(5) - x(5)), 0.0);
}

TEST(ReferencePoint, Recovery) {
  ChainParameters one;
  one.mass = {1.0};
  one.inertia = {0.1};
  one.com_x = {0.5};
  one.com_y = {0.0};
  Eigen::VectorXd x(6);
  x << 1, 0.7, 0, 2, -0.3, 0;
  PostureEstimate still{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  const auto ref = recover_reference_point(x, still, one);
  EXPECT_NEAR(ref.d, 0.5, 1e-15);
  EXPECT_NEAR(ref.h, 2.0, 1e-15);
  EXPECT_EQ(ref.d_dot, 0.7);
  EXPECT_EQ(ref.h_dot, -0.3);

  const auto& s = default_noisy();
  for (std::size_t k = 0; k < s.truth.size(); k += 50) {
    const auto& r = s.truth[k];
    Eigen::VectorXd com(6);
    com << r.com_position.x(), r.com_velocity.x(), r.com_acceleration.x(), r.com_position.y(),
        r.com_velocity.y(), r.com_acceleration.y();
    const auto back = recover_reference_point(com, {r.q.head(2), r.qdot.head(2), r.qddot.head(2)}, s.params);
    EXPECT_NEAR(back.d, r.q(2), 1e-9);
    EXPECT_NEAR(back.h, r.q(3), 1e-9);
    EXPECT_NEAR(back.d_dot, r.qdot(2), 1e-9);
    EXPECT_NEAR(back.h_dot, r.qdot(3), 1e-9);
  }
}

TEST(EstimateRun, AlignedOutputs) {
  const auto& s = default_noisy();
  for (auto kind : kAllEstimatorKinds) {
    const auto run = s.run(kind);
    ASSERT_EQ(run.estimates.size(), s.truth.size());
    ASSERT_EQ(run.step_us.size(), s.truth.size());
    for (std::size_t k = 0; k < s.truth.size(); ++k) ASSERT_EQ(run.estimates[k].t, s.sensors[k].t);
    EXPECT_GT(run.mean_step_us(), 0.0);
  }
}

TEST(EstimateRun, BallisticCenterOfMassIsExact) {
  const auto def = TrajectorySpec::back_somersault();
  const Scenario s(TrajectorySpec::passive(def.q0, def.qdot0), NoiseSpec::noiseless(), true);
  const auto run = s.run(EstimatorKind::kBme);
  for (std::size_t k = 0; k < s.truth.size(); ++k) {
    const auto& e = run.estimates[k];
    const Eigen::Vector2d com = e.q.tail(2) + chain_com(s.params, e.q.head(2));
    EXPECT_LT((com - s.truth[k].com_position).norm(), 1e-6) << "k=" << k;
  }
}

TEST(EstimateRun, CenterOfMassFilterIsExactOnTruePosture) {
  const auto def = TrajectorySpec::back_somersault();
  const Scenario s(TrajectorySpec::passive(def.q0, def.qdot0), NoiseSpec::noiseless(), true);
  const auto& r0 = s.truth.front();
  GaussianBelief com;
  com.mean.resize(6);
  com.mean << r0.com_position.x(), r0.com_velocity.x(), 0.0, r0.com_position.y(), r0.com_velocity.y(),
      -s.params.gravity;
  com.cov = s.config.initial_variance * Eigen::MatrixXd::Identity(6, 6);
  for (std::size_t k = 1; k < s.truth.size(); ++k) {
    const auto& r = s.truth[k];
    com = com_tvkf_step(com, {r.q.head(2), r.qdot.head(2), r.qddot.head(2)}, s.sensors[k].accel, s.params, s.config);
    EXPECT_LT((Eigen::Vector2d(com.mean(0), com.mean(3)) - r.com_position).norm(), 1e-9) << "k=" << k;
  }
}

TEST(EstimateRun, SanityEnvelopeWithDefaultNoise) {
  const auto& s = default_noisy();
  for (auto kind : kAllEstimatorKinds) {
    const auto run = s.run(kind);
    double sum = 0;
    for (std::size_t k = 0; k < s.truth.size(); ++k) {
      const double e = run.estimates[k].q(2) - s.truth[k].q(2);
      sum += e * e;
    }
    EXPECT_LT(std::sqrt(sum / s.truth.size()), 0.05) << to_string(kind);
  }
}

TEST(EstimateRun, PostureIgnoresTranslation) {
  const auto& s = default_noisy();
  std::vector<TruthRecord> shifted = s.truth;
  for (auto& r : shifted) {
    r.q(2) += 3.0 - 1.5 * r.t;
    r.q(3) += -2.0 + 0.25 * r.t;
    r.qdot(2) += -1.5;
    r.qdot(3) += 0.25;
    complete_com_fields(s.params, r);
  }
  Rng rng = make_rng(WorldConfig{}.seed, 0, Stream::kSensorNoise);
  const auto sensors = sample_stream(s.params, shifted, NoiseSpec{}, rng);
  for (auto kind : {EstimatorKind::kBme, EstimatorKind::kDeEkf, EstimatorKind::kDeUkf}) {
    const auto a = s.run(kind);
    const auto b = estimate_run(kind, sensors, s.torques, InitialState::from(shifted.front()), s.params, s.config);
    for (std::size_t k = 0; k < a.estimates.size(); ++k) {
      ASSERT_EQ(a.estimates[k].q.head(2), b.estimates[k].q.head(2)) << to_string(kind);
      ASSERT_EQ(a.estimates[k].qdot.head(2), b.estimates[k].qdot.head(2)) << to_string(kind);
    }
  }
}

TEST(EstimateRun, RejectsMisalignedStreams) {
  const auto& s = default_noisy();
  auto sensors = s.sensors;
  sensors[7].t += 5e-4;
  EXPECT_THROW(estimate_run(EstimatorKind::kBme, sensors, s.torques, InitialState::from(s.truth.front()),
                            s.params, s.config),
               std::invalid_argument);
  auto torques = s.torques;
  torques.pop_back();
  EXPECT_THROW(estimate_run(EstimatorKind::kBme, s.sensors, torques, InitialState::from(s.truth.front()),
                            s.params, s.config),
               std::invalid_argument);
}

TEST(EstimateRun, FailuresCarryStepIndex) {
  const auto& s = default_noisy();
  auto sensors = s.sensors;
  sensors[42].gyro = NAN;
  // The corrupted update poisons the mean; linearizing around it fails on
  // the following step.
  try {
    estimate_run(EstimatorKind::kFullEkf, sensors, s.torques, InitialState::from(s.truth.front()), s.params,
                 s.config);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("full-ekf failed at step 43:"), std::string::npos) << e.what();
  }
}

TEST(EstimateRun, CsvLayout) {
  const auto& s = default_noisy();
  const auto path = std::filesystem::temp_directory_path() / "flychain_estimates_test.csv";
  write_estimates_csv(path, {s.run(EstimatorKind::kBme)});
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,kind,alpha_0,alpha_1,alpha_0_dot,alpha_1_dot,d,h,d_dot,h_dot,step_duration_us");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(s.truth.size()));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace flychain
