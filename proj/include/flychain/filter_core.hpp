#pragma once

// Gaussian filtering primitives shared by every estimator: linear KF steps,
// finite-difference Jacobians, and EKF/UKF steps over arbitrary models.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>

namespace flychain {

class FilterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  Eigen::Index dim() const { return mean.size(); }
};

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct UkfScaling {
  double alpha = 1e-3;
  double beta = 2.0;
  double kappa = 0.0;
};

struct SigmaSet {
  std::vector<Eigen::VectorXd> points;  // 2L+1, centre first
  Eigen::VectorXd mean_weights;
  Eigen::VectorXd cov_weights;
  UkfScaling scaling;
};

GaussianBelief kf_predict(const GaussianBelief& belief, const Eigen::MatrixXd& f,
                          const Eigen::MatrixXd& q,
                          const Eigen::VectorXd& u_add);

// Joseph-form measurement update.
GaussianBelief kf_update(const GaussianBelief& belief, const Eigen::VectorXd& z,
                         const Eigen::MatrixXd& h, const Eigen::MatrixXd& r);

// Same as kf_update but with an explicit predicted measurement, for models
// whose innovation is z - h(x) rather than z - H x.
GaussianBelief kf_update_innovation(const GaussianBelief& belief,
                                    const Eigen::VectorXd& innovation,
                                    const Eigen::MatrixXd& h,
                                    const Eigen::MatrixXd& r);

// Central-difference Jacobian. Without an explicit eps, column j uses the
// power of two nearest to 1e-6 * max(1, |x_j|) so that x_j +/- eps is exact.
Eigen::MatrixXd numerical_jacobian(const VectorFunction& f,
                                   const Eigen::VectorXd& x,
                                   std::optional<double> eps = std::nullopt);

GaussianBelief ekf_step(const GaussianBelief& belief, const VectorFunction& f,
                        const VectorFunction& h, const Eigen::MatrixXd& q,
                        const Eigen::MatrixXd& r, const Eigen::VectorXd& z);

SigmaSet sigma_points(const GaussianBelief& belief, const UkfScaling& scaling);

// Lower-triangular factor of a symmetric PSD matrix. Adds 1e-12 I, growing by
// 10x up to 1e-6 I, before giving up with FilterError.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& p);

GaussianBelief ukf_step(const GaussianBelief& belief, const VectorFunction& f,
                        const VectorFunction& h, const Eigen::MatrixXd& q,
                        const Eigen::MatrixXd& r, const Eigen::VectorXd& z,
                        const UkfScaling& scaling = {});

// Split form used by the cascade estimators.
GaussianBelief ukf_predict(const GaussianBelief& belief, const VectorFunction& f,
                           const Eigen::MatrixXd& q, const UkfScaling& scaling);
GaussianBelief ukf_update(const GaussianBelief& belief, const VectorFunction& h,
                          const Eigen::MatrixXd& r, const Eigen::VectorXd& z,
                          const UkfScaling& scaling);

void symmetrize(Eigen::MatrixXd& m);

}  // namespace flychain
