#pragma once

// Ground-truth flight simulation, sensor synthesis and parameter perturbation.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "flychain/chain_model.hpp"
#include "flychain/rng.hpp"

namespace flychain {

struct NoiseSpec {
  double sigma_gyro = 5e-3;      // rad/s
  double sigma_accel = 5e-2;     // m/s^2
  double sigma_enc_pos = 1e-3;   // rad
  double sigma_enc_vel = 1e-2;   // rad/s

  static NoiseSpec noiseless() { return {0.0, 0.0, 0.0, 0.0}; }
  void validate() const;
};

struct WorldConfig {
  double truth_step = 1e-4;
  double estimator_step = 1e-3;
  double duration = 1.0;
  std::uint64_t seed = 42;
  NoiseSpec noise;

  // Truth steps per estimator step; throws if not an integer multiple.
  int substeps() const;
  int estimator_steps() const;
  void validate() const;
};

// Joint i follows alpha_i(0) + A (sin(w t + phase) - sin(phase)), tracked by
// a computed-torque law with PD correction.
struct JointMotion {
  double amplitude = 0.0;  // rad
  double period = 1.0;     // s
  double phase = 0.0;      // rad
};

struct TrajectorySpec {
  Eigen::VectorXd q0;     // (n+2): posture, d, h
  Eigen::VectorXd qdot0;  // (n+2)
  // Empty means the chain flies passively with zero joint torque.
  std::vector<JointMotion> joints;
  double kp = 400.0;  // 1/s^2
  double kd = 40.0;   // 1/s

  void validate(int links) const;

  // One back somersault of the two-link acrobat with a 0.8 rad, 0.5 s joint
  // swing. The joint starts on its reference rate.
  static TrajectorySpec back_somersault();
  // Same initial conditions, no actuation.
  static TrajectorySpec passive(const Eigen::VectorXd& q0,
                                const Eigen::VectorXd& qdot0);
};

// "nominal(half-width)" value, half-width in units of the last digit.
struct UncertainValue {
  double nominal = 0.0;
  double half_width = 0.0;
};

// "1.5790(76)" -> {1.5790, 0.0076}; the parenthetical counts units of the
// last printed digit. Throws std::invalid_argument on malformed text.
UncertainValue parse_uncertain_value(const std::string& text);

// Per-parameter bounds; an empty vector leaves that parameter unperturbed.
struct ParameterUncertainty {
  std::vector<UncertainValue> mass;
  std::vector<UncertainValue> inertia;
  std::vector<UncertainValue> com_x;
  std::vector<UncertainValue> com_y;
  std::vector<UncertainValue> damping;

  static ParameterUncertainty acrobat_tolerances();
  // Same entries with every half-width set to zero.
  ParameterUncertainty without_spread() const;
};

struct SensorSample {
  double t = 0.0;
  double gyro = 0.0;
  Eigen::Vector2d accel = Eigen::Vector2d::Zero();
  std::vector<Eigen::Vector2d> encoders;  // (alpha_i, alpha_i_dot), i = 1..n-1
};

struct TruthRecord {
  double t = 0.0;
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;
  Eigen::VectorXd qddot;
  Eigen::VectorXd tau;  // joint torques held over the following interval
  Eigen::Vector2d com_position = Eigen::Vector2d::Zero();
  Eigen::Vector2d com_velocity = Eigen::Vector2d::Zero();
  Eigen::Vector2d com_acceleration = Eigen::Vector2d::Zero();
};

using Derivative = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Classical fourth-order Runge-Kutta step. Throws NumericalError on a
// non-finite derivative.
Eigen::VectorXd rk4_step(const Derivative& derivative, const Eigen::VectorXd& x,
                         double dt);

// Joint torques commanded by the trajectory tracker at time t.
Eigen::VectorXd commanded_torques(const ChainParameters& params,
                                  const TrajectorySpec& traj, double t,
                                  const Eigen::VectorXd& qbar,
                                  const Eigen::VectorXd& qbardot);

// Integrates the full dynamics and emits one record per estimator step
// (duration / estimator_step + 1 records, starting at t = 0).
std::vector<TruthRecord> simulate_truth(const ChainParameters& params,
                                        const TrajectorySpec& traj,
                                        const WorldConfig& world);

// Fills the CoM fields of a record from its full state.
void complete_com_fields(const ChainParameters& params, TruthRecord& record);

// Always consumes 3 + 2(n-1) standard normals so the stream stays aligned
// whatever the noise levels.
SensorSample sample_sensors(const ChainParameters& params,
                            const TruthRecord& record, const NoiseSpec& noise,
                            Rng& rng);

std::vector<SensorSample> sample_stream(const ChainParameters& params,
                                        const std::vector<TruthRecord>& truth,
                                        const NoiseSpec& noise, Rng& rng);

// Uniform draw inside each bound. Throws std::invalid_argument if a bound
// disagrees with the nominal parameters or admits non-physical values.
ChainParameters perturb_parameters(const ChainParameters& nominal,
                                   const ParameterUncertainty& uncertainty,
                                   Rng& rng);

struct RecordedStream {
  std::vector<TruthRecord> truth;  // CoM fields are not stored
  std::vector<SensorSample> sensors;
};

void write_stream_csv(const std::filesystem::path& path,
                      const std::vector<TruthRecord>& truth,
                      const std::vector<SensorSample>& sensors);
RecordedStream read_stream_csv(const std::filesystem::path& path);

}  // namespace flychain
