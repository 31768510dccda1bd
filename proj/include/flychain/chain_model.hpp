#pragma once

// Kinematics and dynamics of a planar free-flying open kinematic chain.
//
// Coordinates come in two flavours:
//   full     q = (alpha_0 .. alpha_{n-1}, d, h)   -- posture plus the world
//            position of the link-1 frame origin,
//   reduced  q = (alpha_0 .. alpha_{n-1})         -- posture only, expressed in
//            the inertial frame that moves with the chain's center of mass.
//
// Links are numbered 1..n. alpha_0 is the absolute orientation of link 1 and
// alpha_i (i >= 1) is the relative angle of joint i. Angles are never wrapped.

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace flychain {

// Raised when a linear solve or factorization fails on physical quantities
// (typically a sign of non-physical parameters or a blown-up state).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Coordinates { kFull, kReduced };

struct ChainParameters {
  std::vector<double> mass;         // m_i, kg, size n
  std::vector<double> inertia;      // I_zz_i, kg m^2, size n
  std::vector<double> com_x;        // r_i, m, size n
  std::vector<double> com_y;        // a_i, m, size n
  std::vector<double> link_length;  // l_2 .. l_n, m, size n-1
  std::vector<double> damping;      // beta_1 .. beta_{n-1}, N m s/rad
  Eigen::Vector2d imu_offset = Eigen::Vector2d::Zero();
  double gravity = 9.81;

  int links() const { return static_cast<int>(mass.size()); }
  double total_mass() const;

  // Throws std::invalid_argument naming the first violated invariant.
  void validate() const;

  // Two-link acrobat with the nominal values of the reference robot.
  static ChainParameters two_link_acrobat();
};

// Position, velocity and acceleration of the chain CoM relative to the link-1
// frame origin, in world-aligned axes.
struct ComKinematics {
  Eigen::Vector2d position;
  Eigen::Vector2d velocity;
  Eigen::Vector2d acceleration;
};

Eigen::Matrix2d rotation(double theta);

// p_1^{c_i}: CoM of link i (1-based) relative to the link-1 origin.
Eigen::Vector2d link_com_position(const ChainParameters& params,
                                  const Eigen::VectorXd& qbar, int link);

// Mass-weighted mean of all link CoMs, relative to the link-1 origin.
Eigen::Vector2d chain_com(const ChainParameters& params,
                          const Eigen::VectorXd& qbar);

// d(chain_com)/d(qbar), 2 x n.
Eigen::MatrixXd chain_com_jacobian(const ChainParameters& params,
                                   const Eigen::VectorXd& qbar);

// Velocity and acceleration of chain_com. The Jacobian rate term is taken by a
// central difference along qbardot.
ComKinematics chain_com_derivatives(const ChainParameters& params,
                                    const Eigen::VectorXd& qbar,
                                    const Eigen::VectorXd& qbardot,
                                    const Eigen::VectorXd& qbarddot);

// Linear Jacobian of link i's CoM. Full mode: d p_G^{c_i} / d q, 2 x (n+2).
// Reduced mode: d (p_1^{c_i} - p_1^c) / d qbar, 2 x n.
Eigen::MatrixXd linear_jacobian(const ChainParameters& params,
                                const Eigen::VectorXd& q, int link,
                                Coordinates mode);

// Row of ones in columns 1..i, zero elsewhere.
Eigen::RowVectorXd angular_jacobian(int link, int dim);

Eigen::MatrixXd mass_matrix(const ChainParameters& params,
                            const Eigen::VectorXd& q, Coordinates mode);

// Christoffel-symbol Coriolis matrix contracted against the rates.
Eigen::MatrixXd coriolis_matrix(const ChainParameters& params,
                                const Eigen::VectorXd& q,
                                const Eigen::VectorXd& qdot, Coordinates mode);

Eigen::VectorXd gravity_vector(const ChainParameters& params,
                               const Eigen::VectorXd& q, Coordinates mode);

Eigen::MatrixXd damping_matrix(const ChainParameters& params,
                               Coordinates mode);

// Generalized force for joint torques tau_1..tau_{n-1}. The base orientation
// slot (and d, h in full mode) is unactuated.
Eigen::VectorXd generalized_input(const ChainParameters& params,
                                  const Eigen::VectorXd& joint_torques,
                                  Coordinates mode);

// Solves M qddot = u - C qdot - B qdot - g with a Cholesky factorization.
// Throws NumericalError if M is not positive definite.
Eigen::VectorXd forward_dynamics(const ChainParameters& params,
                                 const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qdot,
                                 const Eigen::VectorXd& joint_torques,
                                 Coordinates mode);

// ubar = Mbar qbarddot + Cbar qbardot + Bbar qbardot + gbar. Entry 0 is the
// (unactuated) base slot.
Eigen::VectorXd inverse_dynamics_reduced(const ChainParameters& params,
                                         const Eigen::VectorXd& qbar,
                                         const Eigen::VectorXd& qbardot,
                                         const Eigen::VectorXd& qbarddot);

// World acceleration of the IMU origin from the CoM acceleration and posture.
Eigen::Vector2d imu_point_acceleration(const ChainParameters& params,
                                       const Eigen::VectorXd& qbar,
                                       const Eigen::VectorXd& qbardot,
                                       const Eigen::VectorXd& qbarddot,
                                       const Eigen::Vector2d& com_acceleration);

// Angular momentum about the chain CoM, computed link by link.
double angular_momentum_about_com(const ChainParameters& params,
                                  const Eigen::VectorXd& qbar,
                                  const Eigen::VectorXd& qbardot);

// Kinetic plus gravitational potential energy for a full state.
double mechanical_energy(const ChainParameters& params,
                         const Eigen::VectorXd& q, const Eigen::VectorXd& qdot);

}  // namespace flychain
