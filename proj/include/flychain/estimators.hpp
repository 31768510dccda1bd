#pragma once

// The five estimator architectures:
//   full-ekf / full-ukf  joint estimation of (q, qdot) with the full dynamics,
//   de-ekf / de-ukf      posture filter on the reduced dynamics cascaded into
//                        a time-varying KF on the CoM,
//   bme                  bank of constant-jerk LTI KFs, one per posture axis,
//                        cascaded into the same CoM filter.

#include <Eigen/Dense>

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "flychain/chain_model.hpp"
#include "flychain/filter_core.hpp"
#include "flychain/sim_world.hpp"

namespace flychain {

enum class EstimatorKind { kFullEkf, kFullUkf, kDeEkf, kDeUkf, kBme };

inline constexpr std::array<EstimatorKind, 5> kAllEstimatorKinds = {
    EstimatorKind::kBme, EstimatorKind::kFullEkf, EstimatorKind::kFullUkf,
    EstimatorKind::kDeEkf, EstimatorKind::kDeUkf};

std::string_view to_string(EstimatorKind kind);
// Accepts "full-ekf", "full-ukf", "de-ekf", "de-ukf", "bme".
EstimatorKind parse_estimator_kind(std::string_view name);

enum class PostureFilter { kEkf, kUkf };

struct EstimatorConfig {
  double dt = 1e-3;
  double initial_variance = 1e-9;
  // Per-step process variances for the nonlinear filters.
  double q_position = 1e-8;
  double q_rate = 1e-6;
  double q_acceleration = 1e-2;  // posture acceleration block of the DE filter
  double sigma_axis_jerk = 50.0;  // rad/s^3, BME posture axes
  double sigma_com_jerk = 5.0;    // m/s^3, CoM filter
  NoiseSpec noise;                // measurement covariances
  UkfScaling ukf;

  void validate() const;
};

struct PostureEstimate {
  Eigen::VectorXd qbar;
  Eigen::VectorXd qbardot;
  Eigen::VectorXd qbarddot;
};

struct ReferencePoint {
  double d = 0.0;
  double h = 0.0;
  double d_dot = 0.0;
  double h_dot = 0.0;
};

struct FullEstimate {
  double t = 0.0;
  Eigen::VectorXd q;     // (n+2): posture, d, h
  Eigen::VectorXd qdot;  // (n+2)
};

// Known initial condition handed to every estimator.
struct InitialState {
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;
  Eigen::VectorXd qddot;

  static InitialState from(const TruthRecord& record);
};

// --- full dynamics ------------------------------------------------------

// Euler step of the full dynamics over x = (q, qdot).
Eigen::VectorXd full_prediction(const ChainParameters& params,
                                const Eigen::VectorXd& x,
                                const Eigen::VectorXd& tau, double dt);
// Stacked (z_g, z_a, z_e...) predicted from x; recomputes qddot.
Eigen::VectorXd full_measurement(const ChainParameters& params,
                                 const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& tau);
Eigen::VectorXd stack_full_measurement(const SensorSample& sample);

GaussianBelief full_ekf_step(const GaussianBelief& belief,
                             const Eigen::VectorXd& tau_prev,
                             const Eigen::VectorXd& tau,
                             const SensorSample& sample,
                             const ChainParameters& params,
                             const EstimatorConfig& config);
GaussianBelief full_ukf_step(const GaussianBelief& belief,
                             const Eigen::VectorXd& tau_prev,
                             const Eigen::VectorXd& tau,
                             const SensorSample& sample,
                             const ChainParameters& params,
                             const EstimatorConfig& config);

// --- decoupled estimator posture stage ------------------------------------

// x_p = (qbar, qbardot, qbarddot); the acceleration block is replaced by the
// reduced-dynamics evaluation.
Eigen::VectorXd posture_prediction(const ChainParameters& params,
                                   const Eigen::VectorXd& xp,
                                   const Eigen::VectorXd& tau, double dt);
Eigen::VectorXd posture_measurement(const Eigen::VectorXd& xp, int links);
Eigen::VectorXd stack_posture_measurement(const SensorSample& sample);

GaussianBelief de_posture_step(const GaussianBelief& belief,
                               const Eigen::VectorXd& tau,
                               const SensorSample& sample,
                               const ChainParameters& params,
                               const EstimatorConfig& config,
                               PostureFilter variant);

// --- ballistic multibody estimator posture bank -----------------------------

using AxisBank = std::vector<GaussianBelief>;

Eigen::Matrix3d axis_transition(double dt);
Eigen::Vector3d axis_noise_gain(double dt);
GaussianBelief axis_predict(const GaussianBelief& axis, const EstimatorConfig& config);
// Axis 0 is corrected by the gyro, axis i >= 1 by encoder i.
GaussianBelief axis_update(const GaussianBelief& axis, int index,
                           const SensorSample& sample,
                           const EstimatorConfig& config);
AxisBank bme_posture_step(const AxisBank& bank, const SensorSample& sample,
                          const EstimatorConfig& config);

PostureEstimate posture_from_bank(const AxisBank& bank);
PostureEstimate posture_from_vector(const Eigen::VectorXd& xp, int links);

// --- CoM time-varying KF ------------------------------------------------

// x_c = (p_x, p_x_dot, p_x_ddot, p_y, p_y_dot, p_y_ddot).
GaussianBelief com_tvkf_predict(const GaussianBelief& belief,
                                const ChainParameters& params,
                                const EstimatorConfig& config);
Eigen::Matrix<double, 2, 6> com_measurement_matrix(double alpha0);
Eigen::Vector2d com_measurement(const Eigen::VectorXd& xc,
                                const PostureEstimate& posture,
                                const ChainParameters& params);
GaussianBelief com_tvkf_update(const GaussianBelief& belief,
                               const PostureEstimate& posture,
                               const Eigen::Vector2d& accel,
                               const ChainParameters& params,
                               const EstimatorConfig& config);
GaussianBelief com_tvkf_step(const GaussianBelief& belief,
                             const PostureEstimate& posture,
                             const Eigen::Vector2d& accel,
                             const ChainParameters& params,
                             const EstimatorConfig& config);

ReferencePoint recover_reference_point(const Eigen::VectorXd& com_mean,
                                       const PostureEstimate& posture,
                                       const ChainParameters& params);

// --- assembled estimators -----------------------------------------------

class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual EstimatorKind kind() const = 0;
  // Current estimate without advancing.
  virtual FullEstimate estimate(double t) const = 0;
  // Predict with tau_prev, held over the last interval, then correct with the
  // sample taken at its end, when tau is applied.
  virtual FullEstimate step(const Eigen::VectorXd& tau_prev, const Eigen::VectorXd& tau,
                            const SensorSample& sample) = 0;
};

std::unique_ptr<Estimator> make_estimator(EstimatorKind kind,
                                          const ChainParameters& params,
                                          const EstimatorConfig& config,
                                          const InitialState& initial);

struct EstimateRun {
  EstimatorKind kind = EstimatorKind::kBme;
  std::vector<FullEstimate> estimates;  // one per sample, first is the prior
  std::vector<double> step_us;          // 0 for the initial sample

  // Mean over measured steps after discarding `warmup` of them.
  double mean_step_us(int warmup = 10) const;
};

// torques[k] is the torque applied from sample k to sample k+1.
EstimateRun estimate_run(EstimatorKind kind,
                         const std::vector<SensorSample>& sensors,
                         const std::vector<Eigen::VectorXd>& torques,
                         const InitialState& initial,
                         const ChainParameters& params,
                         const EstimatorConfig& config);

void write_estimates_csv(const std::filesystem::path& path,
                         const std::vector<EstimateRun>& runs);

}  // namespace flychain
