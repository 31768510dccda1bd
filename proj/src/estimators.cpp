#include "flychain/estimators.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace flychain {
namespace {

// Smallest measurement variance used, so noiseless configurations still give
// a well-posed innovation covariance.
constexpr double kVarianceFloor = 1e-12;

double variance(double sigma) { return std::max(sigma * sigma, kVarianceFloor); }

Eigen::Matrix2d lambda_matrix(double rate, double accel) {
  Eigen::Matrix2d l;
  l << -rate * rate, -accel, accel, -rate * rate;
  return l;
}

Eigen::MatrixXd full_process_noise(int dim, const EstimatorConfig& c) {
  Eigen::VectorXd diag(2 * dim);
  diag << Eigen::VectorXd::Constant(dim, c.q_position),
      Eigen::VectorXd::Constant(dim, c.q_rate);
  return diag.asDiagonal();
}

Eigen::MatrixXd full_measurement_noise(int n, const NoiseSpec& noise) {
  Eigen::VectorXd diag(3 + 2 * (n - 1));
  diag(0) = variance(noise.sigma_gyro);
  diag(1) = diag(2) = variance(noise.sigma_accel);
  for (int i = 1; i < n; ++i) {
    diag(1 + 2 * i) = variance(noise.sigma_enc_pos);
    diag(2 + 2 * i) = variance(noise.sigma_enc_vel);
  }
  return diag.asDiagonal();
}

Eigen::MatrixXd posture_process_noise(int n, const EstimatorConfig& c) {
  Eigen::VectorXd diag(3 * n);
  diag << Eigen::VectorXd::Constant(n, c.q_position),
      Eigen::VectorXd::Constant(n, c.q_rate),
      Eigen::VectorXd::Constant(n, c.q_acceleration);
  return diag.asDiagonal();
}

Eigen::MatrixXd posture_measurement_noise(int n, const NoiseSpec& noise) {
  Eigen::VectorXd diag(1 + 2 * (n - 1));
  diag(0) = variance(noise.sigma_gyro);
  for (int i = 1; i < n; ++i) {
    diag(2 * i - 1) = variance(noise.sigma_enc_pos);
    diag(2 * i) = variance(noise.sigma_enc_vel);
  }
  return diag.asDiagonal();
}

GaussianBelief isotropic(Eigen::VectorXd mean, double var) {
  GaussianBelief b;
  b.cov = var * Eigen::MatrixXd::Identity(mean.size(), mean.size());
  b.mean = std::move(mean);
  return b;
}

GaussianBelief initial_com_belief(const ChainParameters& params,
                                  const InitialState& init, double var) {
  const int n = params.links();
  const ComKinematics local = chain_com_derivatives(
      params, init.q.head(n), init.qdot.head(n), Eigen::VectorXd::Zero(n));
  const Eigen::Vector2d p = init.q.tail(2) + local.position;
  const Eigen::Vector2d v = init.qdot.tail(2) + local.velocity;
  Eigen::VectorXd mean(6);
  mean << p.x(), v.x(), 0.0, p.y(), v.y(), -params.gravity;
  return isotropic(mean, var);
}

FullEstimate cascade_estimate(double t, const PostureEstimate& posture,
                              const GaussianBelief& com,
                              const ChainParameters& params) {
  const int n = params.links();
  const ReferencePoint ref = recover_reference_point(com.mean, posture, params);
  FullEstimate e;
  e.t = t;
  e.q.resize(n + 2);
  e.qdot.resize(n + 2);
  e.q << posture.qbar, ref.d, ref.h;
  e.qdot << posture.qbardot, ref.d_dot, ref.h_dot;
  return e;
}

class FullEstimator final : public Estimator {
 public:
  FullEstimator(EstimatorKind kind, const ChainParameters& params,
                const EstimatorConfig& config, const InitialState& init)
      : kind_(kind), params_(params), config_(config) {
    Eigen::VectorXd mean(init.q.size() * 2);
    mean << init.q, init.qdot;
    belief_ = isotropic(mean, config.initial_variance);
  }

  EstimatorKind kind() const override { return kind_; }

  FullEstimate estimate(double t) const override {
    const auto dim = belief_.dim() / 2;
    return {t, belief_.mean.head(dim), belief_.mean.tail(dim)};
  }

  FullEstimate step(const Eigen::VectorXd& tau_prev, const Eigen::VectorXd& tau,
                    const SensorSample& sample) override {
    belief_ = kind_ == EstimatorKind::kFullEkf
                  ? full_ekf_step(belief_, tau_prev, tau, sample, params_, config_)
                  : full_ukf_step(belief_, tau_prev, tau, sample, params_, config_);
    return estimate(sample.t);
  }

 private:
  EstimatorKind kind_;
  ChainParameters params_;
  EstimatorConfig config_;
  GaussianBelief belief_;
};

class DecoupledEstimator final : public Estimator {
 public:
  DecoupledEstimator(PostureFilter variant, const ChainParameters& params,
                     const EstimatorConfig& config, const InitialState& init)
      : variant_(variant), params_(params), config_(config) {
    const int n = params.links();
    Eigen::VectorXd mean(3 * n);
    mean << init.q.head(n), init.qdot.head(n), init.qddot.head(n);
    posture_ = isotropic(mean, config.initial_variance);
    com_ = initial_com_belief(params, init, config.initial_variance);
  }

  EstimatorKind kind() const override {
    return variant_ == PostureFilter::kEkf ? EstimatorKind::kDeEkf
                                           : EstimatorKind::kDeUkf;
  }

  FullEstimate estimate(double t) const override {
    return cascade_estimate(t, posture_from_vector(posture_.mean, params_.links()),
                            com_, params_);
  }

  FullEstimate step(const Eigen::VectorXd& tau, const Eigen::VectorXd&,
                    const SensorSample& sample) override {
    posture_ = de_posture_step(posture_, tau, sample, params_, config_, variant_);
    const PostureEstimate p = posture_from_vector(posture_.mean, params_.links());
    com_ = com_tvkf_step(com_, p, sample.accel, params_, config_);
    return cascade_estimate(sample.t, p, com_, params_);
  }

 private:
  PostureFilter variant_;
  ChainParameters params_;
  EstimatorConfig config_;
  GaussianBelief posture_;
  GaussianBelief com_;
};

class BallisticEstimator final : public Estimator {
 public:
  BallisticEstimator(const ChainParameters& params, const EstimatorConfig& config,
                     const InitialState& init)
      : params_(params), config_(config) {
    for (int i = 0; i < params.links(); ++i) {
      bank_.push_back(isotropic(
          Eigen::Vector3d(init.q(i), init.qdot(i), init.qddot(i)),
          config.initial_variance));
    }
    com_ = initial_com_belief(params, init, config.initial_variance);
  }

  EstimatorKind kind() const override { return EstimatorKind::kBme; }

  FullEstimate estimate(double t) const override {
    return cascade_estimate(t, posture_from_bank(bank_), com_, params_);
  }

  FullEstimate step(const Eigen::VectorXd&, const Eigen::VectorXd&,
                    const SensorSample& sample) override {
    bank_ = bme_posture_step(bank_, sample, config_);
    const PostureEstimate p = posture_from_bank(bank_);
    com_ = com_tvkf_step(com_, p, sample.accel, params_, config_);
    return cascade_estimate(sample.t, p, com_, params_);
  }

 private:
  ChainParameters params_;
  EstimatorConfig config_;
  AxisBank bank_;
  GaussianBelief com_;
};

}  // namespace

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kFullEkf: return "full-ekf";
    case EstimatorKind::kFullUkf: return "full-ukf";
    case EstimatorKind::kDeEkf: return "de-ekf";
    case EstimatorKind::kDeUkf: return "de-ukf";
    case EstimatorKind::kBme: return "bme";
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view name) {
  for (EstimatorKind k : kAllEstimatorKinds) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown estimator kind '" + std::string(name) +
                              "' (expected full-ekf, full-ukf, de-ekf, de-ukf or bme)");
}

void EstimatorConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("estimator dt must be > 0");
  for (double v : {initial_variance, q_position, q_rate, q_acceleration,
                   sigma_axis_jerk, sigma_com_jerk}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("estimator noise settings must be >= 0");
    }
  }
  noise.validate();
}

InitialState InitialState::from(const TruthRecord& record) {
  return {record.q, record.qdot, record.qddot};
}

Eigen::VectorXd full_prediction(const ChainParameters& params,
                                const Eigen::VectorXd& x,
                                const Eigen::VectorXd& tau, double dt) {
  const auto dim = x.size() / 2;
  const Eigen::VectorXd q = x.head(dim);
  const Eigen::VectorXd qdot = x.tail(dim);
  Eigen::VectorXd out(x.size());
  out.head(dim) = q + dt * qdot;
  out.tail(dim) =
      qdot + dt * forward_dynamics(params, q, qdot, tau, Coordinates::kFull);
  return out;
}

Eigen::VectorXd full_measurement(const ChainParameters& params,
                                 const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& tau) {
  const int n = params.links();
  const int dim = n + 2;
  const Eigen::VectorXd q = x.head(dim);
  const Eigen::VectorXd qdot = x.tail(dim);
  const Eigen::VectorXd qddot =
      forward_dynamics(params, q, qdot, tau, Coordinates::kFull);

  // The IMU sits at a fixed offset in link 1, whose origin is (d, h).
  const Eigen::Vector2d specific =
      rotation(q(0)).transpose() *
          (qddot.tail(2) + Eigen::Vector2d(0.0, params.gravity)) +
      lambda_matrix(qdot(0), qddot(0)) * params.imu_offset;

  Eigen::VectorXd y(3 + 2 * (n - 1));
  y(0) = qdot(0);
  y.segment<2>(1) = specific;
  for (int i = 1; i < n; ++i) {
    y(1 + 2 * i) = q(i);
    y(2 + 2 * i) = qdot(i);
  }
  return y;
}

Eigen::VectorXd stack_full_measurement(const SensorSample& s) {
  Eigen::VectorXd z(3 + 2 * s.encoders.size());
  z(0) = s.gyro;
  z.segment<2>(1) = s.accel;
  for (std::size_t i = 0; i < s.encoders.size(); ++i) {
    z.segment<2>(3 + 2 * static_cast<Eigen::Index>(i)) = s.encoders[i];
  }
  return z;
}

GaussianBelief full_ekf_step(const GaussianBelief& belief,
                             const Eigen::VectorXd& tau_prev,
                             const Eigen::VectorXd& tau,
                             const SensorSample& sample,
                             const ChainParameters& params,
                             const EstimatorConfig& config) {
  const int n = params.links();
  return ekf_step(
      belief,
      [&](const Eigen::VectorXd& x) { return full_prediction(params, x, tau_prev, config.dt); },
      [&](const Eigen::VectorXd& x) { return full_measurement(params, x, tau); },
      full_process_noise(n + 2, config), full_measurement_noise(n, config.noise),
      stack_full_measurement(sample));
}

GaussianBelief full_ukf_step(const GaussianBelief& belief,
                             const Eigen::VectorXd& tau_prev,
                             const Eigen::VectorXd& tau,
                             const SensorSample& sample,
                             const ChainParameters& params,
                             const EstimatorConfig& config) {
  const int n = params.links();
  return ukf_step(
      belief,
      [&](const Eigen::VectorXd& x) { return full_prediction(params, x, tau_prev, config.dt); },
      [&](const Eigen::VectorXd& x) { return full_measurement(params, x, tau); },
      full_process_noise(n + 2, config), full_measurement_noise(n, config.noise),
      stack_full_measurement(sample), config.ukf);
}

Eigen::VectorXd posture_prediction(const ChainParameters& params,
                                   const Eigen::VectorXd& xp,
                                   const Eigen::VectorXd& tau, double dt) {
  const int n = params.links();
  const Eigen::VectorXd qbar = xp.head(n);
  const Eigen::VectorXd qbardot = xp.segment(n, n);
  const Eigen::VectorXd accel =
      forward_dynamics(params, qbar, qbardot, tau, Coordinates::kReduced);
  Eigen::VectorXd out(3 * n);
  out << qbar + dt * qbardot, qbardot + dt * accel, accel;
  return out;
}

Eigen::VectorXd posture_measurement(const Eigen::VectorXd& xp, int n) {
  Eigen::VectorXd y(1 + 2 * (n - 1));
  y(0) = xp(n);
  for (int i = 1; i < n; ++i) {
    y(2 * i - 1) = xp(i);
    y(2 * i) = xp(n + i);
  }
  return y;
}

Eigen::VectorXd stack_posture_measurement(const SensorSample& s) {
  Eigen::VectorXd z(1 + 2 * s.encoders.size());
  z(0) = s.gyro;
  for (std::size_t i = 0; i < s.encoders.size(); ++i) {
    z.segment<2>(1 + 2 * static_cast<Eigen::Index>(i)) = s.encoders[i];
  }
  return z;
}

GaussianBelief de_posture_step(const GaussianBelief& belief,
                               const Eigen::VectorXd& tau,
                               const SensorSample& sample,
                               const ChainParameters& params,
                               const EstimatorConfig& config,
                               PostureFilter variant) {
  const int n = params.links();
  const auto f = [&](const Eigen::VectorXd& xp) {
    return posture_prediction(params, xp, tau, config.dt);
  };
  const auto h = [n](const Eigen::VectorXd& xp) { return posture_measurement(xp, n); };
  const Eigen::MatrixXd q = posture_process_noise(n, config);
  const Eigen::MatrixXd r = posture_measurement_noise(n, config.noise);
  const Eigen::VectorXd z = stack_posture_measurement(sample);
  return variant == PostureFilter::kEkf ? ekf_step(belief, f, h, q, r, z)
                                        : ukf_step(belief, f, h, q, r, z, config.ukf);
}

Eigen::Matrix3d axis_transition(double dt) {
  Eigen::Matrix3d f;
  f << 1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0;
  return f;
}

Eigen::Vector3d axis_noise_gain(double dt) {
  return {dt * dt * dt / 6.0, 0.5 * dt * dt, dt};
}

GaussianBelief axis_predict(const GaussianBelief& axis, const EstimatorConfig& config) {
  const Eigen::Vector3d g = axis_noise_gain(config.dt);
  const double s2 = config.sigma_axis_jerk * config.sigma_axis_jerk;
  return kf_predict(axis, axis_transition(config.dt), s2 * g * g.transpose(),
                    Eigen::Vector3d::Zero());
}

GaussianBelief axis_update(const GaussianBelief& axis, int index,
                           const SensorSample& sample,
                           const EstimatorConfig& config) {
  if (index == 0) {
    Eigen::RowVector3d h(0.0, 1.0, 0.0);
    Eigen::Matrix<double, 1, 1> r(variance(config.noise.sigma_gyro));
    return kf_update(axis, Eigen::Matrix<double, 1, 1>(sample.gyro), h, r);
  }
  Eigen::Matrix<double, 2, 3> h;
  h << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  const Eigen::Matrix2d r = Eigen::Vector2d(variance(config.noise.sigma_enc_pos),
                                            variance(config.noise.sigma_enc_vel))
                                .asDiagonal();
  return kf_update(axis, sample.encoders.at(static_cast<std::size_t>(index - 1)), h, r);
}

AxisBank bme_posture_step(const AxisBank& bank, const SensorSample& sample,
                          const EstimatorConfig& config) {
  AxisBank out(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    out[i] = axis_update(axis_predict(bank[i], config), static_cast<int>(i), sample, config);
  }
  return out;
}

PostureEstimate posture_from_bank(const AxisBank& bank) {
  const auto n = static_cast<Eigen::Index>(bank.size());
  PostureEstimate p{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& m = bank[static_cast<std::size_t>(i)].mean;
    p.qbar(i) = m(0);
    p.qbardot(i) = m(1);
    p.qbarddot(i) = m(2);
  }
  return p;
}

PostureEstimate posture_from_vector(const Eigen::VectorXd& xp, int n) {
  return {xp.head(n), xp.segment(n, n), xp.segment(2 * n, n)};
}

GaussianBelief com_tvkf_predict(const GaussianBelief& belief,
                                const ChainParameters& params,
                                const EstimatorConfig& config) {
  const double dt = config.dt;
  const double g = params.gravity;
  Eigen::Matrix3d axis_f;
  axis_f << 1.0, dt, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0;
  const Eigen::Vector3d gain = axis_noise_gain(dt);
  const Eigen::Matrix3d axis_q =
      config.sigma_com_jerk * config.sigma_com_jerk * gain * gain.transpose();

  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(6, 6);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(6, 6);
  f.topLeftCorner<3, 3>() = axis_f;
  f.bottomRightCorner<3, 3>() = axis_f;
  q.topLeftCorner<3, 3>() = axis_q;
  q.bottomRightCorner<3, 3>() = axis_q;
  Eigen::VectorXd u(6);
  u << 0.0, 0.0, 0.0, -0.5 * g * dt * dt, -g * dt, -g;
  return kf_predict(belief, f, q, u);
}

Eigen::Matrix<double, 2, 6> com_measurement_matrix(double alpha0) {
  const Eigen::Matrix2d rt = rotation(alpha0).transpose();
  Eigen::Matrix<double, 2, 6> h = Eigen::Matrix<double, 2, 6>::Zero();
  h.col(2) = rt.col(0);
  h.col(5) = rt.col(1);
  return h;
}

Eigen::Vector2d com_measurement(const Eigen::VectorXd& xc,
                                const PostureEstimate& posture,
                                const ChainParameters& params) {
  const ComKinematics local = chain_com_derivatives(
      params, posture.qbar, posture.qbardot, posture.qbarddot);
  const Eigen::Vector2d com_acc(xc(2), xc(5) + params.gravity);
  return rotation(posture.qbar(0)).transpose() * (com_acc - local.acceleration) +
         lambda_matrix(posture.qbardot(0), posture.qbarddot(0)) * params.imu_offset;
}

GaussianBelief com_tvkf_update(const GaussianBelief& belief,
                               const PostureEstimate& posture,
                               const Eigen::Vector2d& accel,
                               const ChainParameters& params,
                               const EstimatorConfig& config) {
  const Eigen::Matrix2d r =
      variance(config.noise.sigma_accel) * Eigen::Matrix2d::Identity();
  const Eigen::Vector2d innovation = accel - com_measurement(belief.mean, posture, params);
  return kf_update_innovation(belief, innovation,
                              com_measurement_matrix(posture.qbar(0)), r);
}

GaussianBelief com_tvkf_step(const GaussianBelief& belief,
                             const PostureEstimate& posture,
                             const Eigen::Vector2d& accel,
                             const ChainParameters& params,
                             const EstimatorConfig& config) {
  return com_tvkf_update(com_tvkf_predict(belief, params, config), posture, accel,
                         params, config);
}

ReferencePoint recover_reference_point(const Eigen::VectorXd& com_mean,
                                       const PostureEstimate& posture,
                                       const ChainParameters& params) {
  const int n = params.links();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd& accel = posture.qbarddot.size() == n ? posture.qbarddot : zero;
  const ComKinematics local =
      chain_com_derivatives(params, posture.qbar, posture.qbardot, accel);
  return {com_mean(0) - local.position.x(), com_mean(3) - local.position.y(),
          com_mean(1) - local.velocity.x(), com_mean(4) - local.velocity.y()};
}

std::unique_ptr<Estimator> make_estimator(EstimatorKind kind,
                                          const ChainParameters& params,
                                          const EstimatorConfig& config,
                                          const InitialState& initial) {
  params.validate();
  config.validate();
  switch (kind) {
    case EstimatorKind::kFullEkf:
    case EstimatorKind::kFullUkf:
      return std::make_unique<FullEstimator>(kind, params, config, initial);
    case EstimatorKind::kDeEkf:
      return std::make_unique<DecoupledEstimator>(PostureFilter::kEkf, params, config,
                                                  initial);
    case EstimatorKind::kDeUkf:
      return std::make_unique<DecoupledEstimator>(PostureFilter::kUkf, params, config,
                                                  initial);
    case EstimatorKind::kBme:
      return std::make_unique<BallisticEstimator>(params, config, initial);
  }
  throw std::invalid_argument("unknown estimator kind");
}

double EstimateRun::mean_step_us(int warmup) const {
  // step_us[0] belongs to the prior and is never timed.
  const auto first = static_cast<std::size_t>(1 + warmup);
  if (step_us.size() <= first) return 0.0;
  const double sum = std::accumulate(step_us.begin() + static_cast<long>(first),
                                     step_us.end(), 0.0);
  return sum / static_cast<double>(step_us.size() - first);
}

EstimateRun estimate_run(EstimatorKind kind,
                         const std::vector<SensorSample>& sensors,
                         const std::vector<Eigen::VectorXd>& torques,
                         const InitialState& initial,
                         const ChainParameters& params,
                         const EstimatorConfig& config) {
  if (sensors.empty()) throw std::invalid_argument("estimate_run: empty sensor stream");
  if (torques.size() != sensors.size()) {
    throw std::invalid_argument("estimate_run: torque and sensor streams differ in length");
  }
  for (std::size_t k = 1; k < sensors.size(); ++k) {
    const double expected = sensors.front().t + static_cast<double>(k) * config.dt;
    if (std::abs(sensors[k].t - expected) > 1e-6 * config.dt) {
      throw std::invalid_argument("estimate_run: sample " + std::to_string(k) +
                                  " is not on the estimator time grid");
    }
  }

  auto estimator = make_estimator(kind, params, config, initial);
  EstimateRun run;
  run.kind = kind;
  run.estimates.reserve(sensors.size());
  run.step_us.reserve(sensors.size());
  run.estimates.push_back(estimator->estimate(sensors.front().t));
  run.step_us.push_back(0.0);

  using Clock = std::chrono::steady_clock;
  for (std::size_t k = 1; k < sensors.size(); ++k) {
    try {
      const auto start = Clock::now();
      FullEstimate e = estimator->step(torques[k - 1], torques[k], sensors[k]);
      const auto stop = Clock::now();
      run.estimates.push_back(std::move(e));
      run.step_us.push_back(
          std::chrono::duration<double, std::micro>(stop - start).count());
    } catch (const std::exception& e) {
      throw NumericalError(std::string(to_string(kind)) + " failed at step " +
                           std::to_string(k) + ": " + e.what());
    }
  }
  return run;
}

void write_estimates_csv(const std::filesystem::path& path,
                         const std::vector<EstimateRun>& runs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto n = runs.empty() || runs.front().estimates.empty()
                     ? Eigen::Index{1}
                     : runs.front().estimates.front().q.size() - 2;
  out << "t,kind";
  for (Eigen::Index i = 0; i < n; ++i) out << ",alpha_" << i;
  for (Eigen::Index i = 0; i < n; ++i) out << ",alpha_" << i << "_dot";
  out << ",d,h,d_dot,h_dot,step_duration_us\n" << std::setprecision(17);
  for (const auto& run : runs) {
    for (std::size_t k = 0; k < run.estimates.size(); ++k) {
      const auto& e = run.estimates[k];
      out << e.t << ',' << to_string(run.kind);
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << e.q(i);
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << e.qdot(i);
      out << ',' << e.q(n) << ',' << e.q(n + 1) << ',' << e.qdot(n) << ','
          << e.qdot(n + 1) << ',' << run.step_us[k] << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace flychain
