#include "flychain/chain_model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace flychain {
namespace {

// Step for the central difference of the CoM Jacobian.
constexpr double kDiffStep = 1e-6;

struct LinkKinematics {
  std::vector<Eigen::Vector2d> com;          // p_1^{c_i}
  std::vector<Eigen::Matrix2Xd> jacobian;    // d p_1^{c_i} / d qbar
};

void require_posture(const ChainParameters& params, const Eigen::VectorXd& q,
                     Coordinates mode) {
  const Eigen::Index expected =
      params.links() + (mode == Coordinates::kFull ? 2 : 0);
  if (q.size() != expected) {
    std::ostringstream msg;
    msg << "coordinate vector has size " << q.size() << ", expected "
        << expected;
    throw std::invalid_argument(msg.str());
  }
}

void require_link(const ChainParameters& params, int link) {
  if (link < 1 || link > params.links()) {
    throw std::out_of_range("link index " + std::to_string(link) +
                            " outside 1.." + std::to_string(params.links()));
  }
}

LinkKinematics link_kinematics(const ChainParameters& params,
                               const Eigen::VectorXd& qbar) {
  const int n = params.links();
  LinkKinematics out;
  out.com.reserve(n);
  out.jacobian.reserve(n);

  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  Eigen::Matrix2Xd origin_jac = Eigen::Matrix2Xd::Zero(2, n);
  double sigma = 0.0;
  for (int i = 0; i < n; ++i) {
    // sigma of link i+1 accumulates alpha_0 .. alpha_i.
    sigma += qbar(i);
    const double c = std::cos(sigma);
    const double s = std::sin(sigma);
    if (i > 0) {
      const double l = params.link_length[i - 1];
      origin += l * Eigen::Vector2d(c, s);
      for (int k = 0; k <= i; ++k) {
        origin_jac(0, k) -= l * s;
        origin_jac(1, k) += l * c;
      }
    }
    const double r = params.com_x[i];
    const double a = params.com_y[i];
    Eigen::Vector2d com = origin + Eigen::Vector2d(c * r - s * a, s * r + c * a);
    Eigen::Matrix2Xd jac = origin_jac;
    const Eigen::Vector2d dcom(-s * r - c * a, c * r - s * a);
    for (int k = 0; k <= i; ++k) jac.col(k) += dcom;
    out.com.push_back(com);
    out.jacobian.push_back(std::move(jac));
  }
  return out;
}

// tails[i].col(j): sum of the position segments of link i whose direction
// depends on alpha_j. The Jacobian column is that sum turned by +90 degrees,
// its partial along alpha_k is minus the column max(j, k).
std::vector<Eigen::Matrix2Xd> link_tails(const ChainParameters& params,
                                         const Eigen::VectorXd& qbar) {
  const int n = params.links();
  std::vector<Eigen::Vector2d> segment(n, Eigen::Vector2d::Zero());
  std::vector<Eigen::Vector2d> offset(n);
  double sigma = 0.0;
  for (int i = 0; i < n; ++i) {
    sigma += qbar(i);
    const double c = std::cos(sigma);
    const double s = std::sin(sigma);
    if (i > 0) segment[i] = params.link_length[i - 1] * Eigen::Vector2d(c, s);
    const double r = params.com_x[i];
    const double a = params.com_y[i];
    offset[i] = Eigen::Vector2d(c * r - s * a, s * r + c * a);
  }
  std::vector<Eigen::Matrix2Xd> tails(n, Eigen::Matrix2Xd::Zero(2, n));
  for (int i = 0; i < n; ++i) {
    Eigen::Vector2d acc = offset[i];
    for (int j = i; j >= 0; --j) {
      acc += segment[j];
      tails[i].col(j) = acc;
    }
  }
  return tails;
}

Eigen::Matrix2Xd turn(const Eigen::Matrix2Xd& m) {
  Eigen::Matrix2Xd out(2, m.cols());
  out.row(0) = -m.row(1);
  out.row(1) = m.row(0);
  return out;
}

// Exact partials of the mass matrix with respect to each posture coordinate.
std::vector<Eigen::MatrixXd> mass_matrix_partials(const ChainParameters& params,
                                                  const Eigen::VectorXd& q,
                                                  Coordinates mode) {
  const int n = params.links();
  const auto dim = q.size();
  const auto tails = link_tails(params, q.head(n));
  std::vector<Eigen::Matrix2Xd> jac(n);
  Eigen::Matrix2Xd jc = Eigen::Matrix2Xd::Zero(2, n);
  for (int i = 0; i < n; ++i) {
    jac[i] = turn(tails[i]);
    jc += params.mass[i] * jac[i] / params.total_mass();
  }

  std::vector<Eigen::MatrixXd> dm(n, Eigen::MatrixXd::Zero(dim, dim));
  std::vector<Eigen::Matrix2Xd> djac(n, Eigen::Matrix2Xd(2, n));
  for (int k = 0; k < n; ++k) {
    Eigen::Matrix2Xd djc = Eigen::Matrix2Xd::Zero(2, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) djac[i].col(j) = -tails[i].col(std::max(j, k));
      djc += params.mass[i] * djac[i] / params.total_mass();
    }
    for (int i = 0; i < n; ++i) {
      Eigen::Matrix2Xd j = jac[i];
      Eigen::Matrix2Xd dj = djac[i];
      if (mode == Coordinates::kReduced) {
        j -= jc;
        dj -= djc;
      }
      const Eigen::MatrixXd half = params.mass[i] * dj.transpose() * j;
      dm[k].topLeftCorner(n, n) += half + half.transpose();
      if (mode == Coordinates::kFull) {
        dm[k].topRightCorner(n, 2) += params.mass[i] * dj.transpose();
      }
    }
    if (mode == Coordinates::kFull) {
      dm[k].bottomLeftCorner(2, n) = dm[k].topRightCorner(n, 2).transpose();
    }
  }
  return dm;
}

Eigen::Matrix2Xd com_jacobian_from(const ChainParameters& params,
                                   const LinkKinematics& kin) {
  Eigen::Matrix2Xd jc = Eigen::Matrix2Xd::Zero(2, params.links());
  for (int i = 0; i < params.links(); ++i) jc += params.mass[i] * kin.jacobian[i];
  return jc / params.total_mass();
}

// Sum of I_zz_i J_w_i^T J_w_i over the posture block: entry (j, k) is the
// total inertia of links whose angular Jacobian covers both columns.
void add_rotational_inertia(const ChainParameters& params,
                            Eigen::MatrixXd& m) {
  const int n = params.links();
  double tail = 0.0;
  std::vector<double> tail_sum(n);
  for (int i = n - 1; i >= 0; --i) {
    tail += params.inertia[i];
    tail_sum[i] = tail;
  }
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) m(j, k) += tail_sum[std::max(j, k)];
  }
}

Eigen::VectorXd posture_of(const ChainParameters& params,
                           const Eigen::VectorXd& q) {
  return q.head(params.links());
}

}  // namespace

double ChainParameters::total_mass() const {
  return std::accumulate(mass.begin(), mass.end(), 0.0);
}

void ChainParameters::validate() const {
  const auto n = mass.size();
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("chain parameters: " + what);
  };
  if (n < 1) fail("need at least one link");
  if (inertia.size() != n || com_x.size() != n || com_y.size() != n) {
    fail("per-link arrays must all have n entries");
  }
  if (link_length.size() != n - 1) fail("need n-1 link lengths");
  if (damping.size() != n - 1) fail("need n-1 damping coefficients");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(mass[i] > 0.0) || !std::isfinite(mass[i])) fail("masses must be > 0");
    if (!(inertia[i] > 0.0) || !std::isfinite(inertia[i])) {
      fail("inertias must be > 0");
    }
    if (!std::isfinite(com_x[i]) || !std::isfinite(com_y[i])) {
      fail("CoM offsets must be finite");
    }
  }
  for (double l : link_length) {
    if (!(l > 0.0) || !std::isfinite(l)) fail("link lengths must be > 0");
  }
  for (double b : damping) {
    if (!(b >= 0.0) || !std::isfinite(b)) fail("damping must be >= 0");
  }
  if (!imu_offset.allFinite()) fail("IMU offset must be finite");
  if (!(gravity > 0.0) || !std::isfinite(gravity)) fail("gravity must be > 0");
}

ChainParameters ChainParameters::two_link_acrobat() {
  ChainParameters p;
  p.mass = {1.5790, 1.4370};
  p.inertia = {0.0375, 0.0237};
  p.com_x = {0.1443, 0.1268};
  p.com_y = {-0.0055, 0.0001};
  p.link_length = {0.35};
  p.damping = {0.20};
  p.imu_offset = Eigen::Vector2d(0.05, 0.0);
  p.gravity = 9.81;
  return p;
}

Eigen::Matrix2d rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

Eigen::Vector2d link_com_position(const ChainParameters& params,
                                  const Eigen::VectorXd& qbar, int link) {
  require_link(params, link);
  require_posture(params, qbar, Coordinates::kReduced);
  return link_kinematics(params, qbar).com[link - 1];
}

Eigen::Vector2d chain_com(const ChainParameters& params,
                          const Eigen::VectorXd& qbar) {
  require_posture(params, qbar, Coordinates::kReduced);
  const LinkKinematics kin = link_kinematics(params, qbar);
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  for (int i = 0; i < params.links(); ++i) sum += params.mass[i] * kin.com[i];
  return sum / params.total_mass();
}

Eigen::MatrixXd chain_com_jacobian(const ChainParameters& params,
                                   const Eigen::VectorXd& qbar) {
  require_posture(params, qbar, Coordinates::kReduced);
  return com_jacobian_from(params, link_kinematics(params, qbar));
}

ComKinematics chain_com_derivatives(const ChainParameters& params,
                                    const Eigen::VectorXd& qbar,
                                    const Eigen::VectorXd& qbardot,
                                    const Eigen::VectorXd& qbarddot) {
  require_posture(params, qbar, Coordinates::kReduced);
  require_posture(params, qbardot, Coordinates::kReduced);
  require_posture(params, qbarddot, Coordinates::kReduced);
  const LinkKinematics kin = link_kinematics(params, qbar);
  Eigen::Vector2d pos = Eigen::Vector2d::Zero();
  for (int i = 0; i < params.links(); ++i) pos += params.mass[i] * kin.com[i];

  const Eigen::Matrix2Xd jc = com_jacobian_from(params, kin);
  ComKinematics out;
  out.position = pos / params.total_mass();
  out.velocity = jc * qbardot;

  const Eigen::Matrix2Xd jc_plus =
      com_jacobian_from(params, link_kinematics(params, qbar + kDiffStep * qbardot));
  const Eigen::Matrix2Xd jc_minus =
      com_jacobian_from(params, link_kinematics(params, qbar - kDiffStep * qbardot));
  const Eigen::Matrix2Xd jc_rate = (jc_plus - jc_minus) / (2.0 * kDiffStep);
  out.acceleration = jc * qbarddot + jc_rate * qbardot;
  return out;
}

Eigen::MatrixXd linear_jacobian(const ChainParameters& params,
                                const Eigen::VectorXd& q, int link,
                                Coordinates mode) {
  require_link(params, link);
  require_posture(params, q, mode);
  const int n = params.links();
  const LinkKinematics kin = link_kinematics(params, posture_of(params, q));
  if (mode == Coordinates::kReduced) {
    return kin.jacobian[link - 1] - com_jacobian_from(params, kin);
  }
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2, n + 2);
  jac.leftCols(n) = kin.jacobian[link - 1];
  jac.rightCols(2).setIdentity();
  return jac;
}

Eigen::RowVectorXd angular_jacobian(int link, int dim) {
  if (link < 1 || link > dim) {
    throw std::out_of_range("angular_jacobian: link index out of range");
  }
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dim);
  row.head(link).setOnes();
  return row;
}

Eigen::MatrixXd mass_matrix(const ChainParameters& params,
                            const Eigen::VectorXd& q, Coordinates mode) {
  require_posture(params, q, mode);
  const int n = params.links();
  const LinkKinematics kin = link_kinematics(params, posture_of(params, q));

  if (mode == Coordinates::kReduced) {
    const Eigen::Matrix2Xd jc = com_jacobian_from(params, kin);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      const Eigen::Matrix2Xd jbar = kin.jacobian[i] - jc;
      m.noalias() += params.mass[i] * jbar.transpose() * jbar;
    }
    add_rotational_inertia(params, m);
    return 0.5 * (m + m.transpose());
  }

  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 2, n + 2);
  Eigen::Matrix2Xd weighted = Eigen::Matrix2Xd::Zero(2, n);
  for (int i = 0; i < n; ++i) {
    m.topLeftCorner(n, n).noalias() +=
        params.mass[i] * kin.jacobian[i].transpose() * kin.jacobian[i];
    weighted += params.mass[i] * kin.jacobian[i];
  }
  Eigen::MatrixXd top_left = m.topLeftCorner(n, n);
  add_rotational_inertia(params, top_left);
  m.topLeftCorner(n, n) = 0.5 * (top_left + top_left.transpose());
  m.topRightCorner(n, 2) = weighted.transpose();
  m.bottomLeftCorner(2, n) = weighted;
  m.bottomRightCorner(2, 2) = params.total_mass() * Eigen::Matrix2d::Identity();
  return m;
}

Eigen::MatrixXd coriolis_matrix(const ChainParameters& params,
                                const Eigen::VectorXd& q,
                                const Eigen::VectorXd& qdot, Coordinates mode) {
  require_posture(params, q, mode);
  require_posture(params, qdot, mode);
  const int n = params.links();
  const auto dim = static_cast<int>(q.size());

  // M does not depend on (d, h), so only the posture partials are non-zero.
  const std::vector<Eigen::MatrixXd> dm = mass_matrix_partials(params, q, mode);

  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) {
      double sum = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double dmij_dk = k < n ? dm[k](i, j) : 0.0;
        const double dmik_dj = j < n ? dm[j](i, k) : 0.0;
        const double dmkj_di = i < n ? dm[i](k, j) : 0.0;
        sum += (dmij_dk + dmik_dj - dmkj_di) * qdot(k);
      }
      c(i, j) = 0.5 * sum;
    }
  }
  return c;
}

Eigen::VectorXd gravity_vector(const ChainParameters& params,
                               const Eigen::VectorXd& q, Coordinates mode) {
  require_posture(params, q, mode);
  const int n = params.links();
  const LinkKinematics kin = link_kinematics(params, posture_of(params, q));
  const auto dim = q.size();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);

  if (mode == Coordinates::kReduced) {
    const Eigen::Matrix2Xd jc = com_jacobian_from(params, kin);
    for (int i = 0; i < n; ++i) {
      g += params.mass[i] * params.gravity *
           (kin.jacobian[i].row(1) - jc.row(1)).transpose();
    }
    return g;
  }
  for (int i = 0; i < n; ++i) {
    g.head(n) += params.mass[i] * params.gravity * kin.jacobian[i].row(1).transpose();
  }
  g(n + 1) = params.total_mass() * params.gravity;
  return g;
}

Eigen::MatrixXd damping_matrix(const ChainParameters& params,
                               Coordinates mode) {
  const int n = params.links();
  const int dim = n + (mode == Coordinates::kFull ? 2 : 0);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(dim, dim);
  for (int j = 1; j < n; ++j) b(j, j) = params.damping[j - 1];
  return b;
}

Eigen::VectorXd generalized_input(const ChainParameters& params,
                                  const Eigen::VectorXd& joint_torques,
                                  Coordinates mode) {
  const int n = params.links();
  if (joint_torques.size() != n - 1) {
    throw std::invalid_argument("expected " + std::to_string(n - 1) +
                                " joint torques");
  }
  const int dim = n + (mode == Coordinates::kFull ? 2 : 0);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(dim);
  u.segment(1, n - 1) = joint_torques;
  return u;
}

Eigen::VectorXd forward_dynamics(const ChainParameters& params,
                                 const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qdot,
                                 const Eigen::VectorXd& joint_torques,
                                 Coordinates mode) {
  const Eigen::MatrixXd m = mass_matrix(params, q, mode);
  const Eigen::VectorXd rhs =
      generalized_input(params, joint_torques, mode) -
      coriolis_matrix(params, q, qdot, mode) * qdot -
      damping_matrix(params, mode) * qdot - gravity_vector(params, q, mode);
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("mass matrix is not positive definite");
  }
  Eigen::VectorXd qddot = llt.solve(rhs);
  if (!qddot.allFinite()) {
    throw NumericalError("forward dynamics produced a non-finite acceleration");
  }
  return qddot;
}

Eigen::VectorXd inverse_dynamics_reduced(const ChainParameters& params,
                                         const Eigen::VectorXd& qbar,
                                         const Eigen::VectorXd& qbardot,
                                         const Eigen::VectorXd& qbarddot) {
  constexpr auto kMode = Coordinates::kReduced;
  return mass_matrix(params, qbar, kMode) * qbarddot +
         coriolis_matrix(params, qbar, qbardot, kMode) * qbardot +
         damping_matrix(params, kMode) * qbardot +
         gravity_vector(params, qbar, kMode);
}

Eigen::Vector2d imu_point_acceleration(const ChainParameters& params,
                                       const Eigen::VectorXd& qbar,
                                       const Eigen::VectorXd& qbardot,
                                       const Eigen::VectorXd& qbarddot,
                                       const Eigen::Vector2d& com_acceleration) {
  const ComKinematics local =
      chain_com_derivatives(params, qbar, qbardot, qbarddot);
  const double w = qbardot(0);
  const double dw = qbarddot(0);
  Eigen::Matrix2d lambda;
  lambda << -w * w, -dw, dw, -w * w;
  return com_acceleration - local.acceleration +
         rotation(qbar(0)) * lambda * params.imu_offset;
}

double angular_momentum_about_com(const ChainParameters& params,
                                  const Eigen::VectorXd& qbar,
                                  const Eigen::VectorXd& qbardot) {
  require_posture(params, qbar, Coordinates::kReduced);
  const LinkKinematics kin = link_kinematics(params, qbar);
  const Eigen::Matrix2Xd jc = com_jacobian_from(params, kin);
  Eigen::Vector2d com = Eigen::Vector2d::Zero();
  for (int i = 0; i < params.links(); ++i) com += params.mass[i] * kin.com[i];
  com /= params.total_mass();

  double momentum = 0.0;
  double omega = 0.0;
  for (int i = 0; i < params.links(); ++i) {
    omega += qbardot(i);
    const Eigen::Vector2d r = kin.com[i] - com;
    const Eigen::Vector2d v = (kin.jacobian[i] - jc) * qbardot;
    momentum += params.mass[i] * (r.x() * v.y() - r.y() * v.x());
    momentum += params.inertia[i] * omega;
  }
  return momentum;
}

double mechanical_energy(const ChainParameters& params,
                         const Eigen::VectorXd& q, const Eigen::VectorXd& qdot) {
  const int n = params.links();
  const double kinetic =
      0.5 * qdot.dot(mass_matrix(params, q, Coordinates::kFull) * qdot);
  const LinkKinematics kin = link_kinematics(params, q.head(n));
  double potential = 0.0;
  for (int i = 0; i < n; ++i) {
    potential += params.mass[i] * params.gravity * (q(n + 1) + kin.com[i].y());
  }
  return kinetic + potential;
}

}  // namespace flychain
