#include "flychain/filter_core.hpp"

#include <cmath>
#include <string>

namespace flychain {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

double power_of_two_step(double scale) {
  return std::exp2(std::round(std::log2(scale)));
}

Eigen::VectorXd checked(Eigen::VectorXd v, const char* what) {
  if (!v.allFinite()) throw FilterError(std::string(what) + " returned a non-finite value");
  return v;
}

// Weighted mean of propagated points, accumulated as deviations from the
// centre point to avoid cancellation under the large negative centre weight.
Eigen::VectorXd weighted_mean(const std::vector<Eigen::VectorXd>& ys,
                              const Eigen::VectorXd& weights) {
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(ys.front().size());
  for (std::size_t i = 1; i < ys.size(); ++i) {
    delta += weights(static_cast<Eigen::Index>(i)) * (ys[i] - ys[0]);
  }
  return ys[0] + delta;
}

Eigen::MatrixXd weighted_cross(const std::vector<Eigen::VectorXd>& a,
                               const Eigen::VectorXd& a_mean,
                               const std::vector<Eigen::VectorXd>& b,
                               const Eigen::VectorXd& b_mean,
                               const Eigen::VectorXd& weights) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a_mean.size(), b_mean.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.noalias() += weights(static_cast<Eigen::Index>(i)) * (a[i] - a_mean) *
                     (b[i] - b_mean).transpose();
  }
  return out;
}

}  // namespace

void symmetrize(Eigen::MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

GaussianBelief kf_predict(const GaussianBelief& belief, const Eigen::MatrixXd& f,
                          const Eigen::MatrixXd& q,
                          const Eigen::VectorXd& u_add) {
  const auto n = belief.dim();
  require(f.rows() == n && f.cols() == n, "kf_predict: F has wrong shape");
  require(q.rows() == n && q.cols() == n, "kf_predict: Q has wrong shape");
  require(u_add.size() == n, "kf_predict: input has wrong size");
  GaussianBelief out;
  out.mean = f * belief.mean + u_add;
  out.cov = f * belief.cov * f.transpose() + q;
  symmetrize(out.cov);
  return out;
}

GaussianBelief kf_update_innovation(const GaussianBelief& belief,
                                    const Eigen::VectorXd& innovation,
                                    const Eigen::MatrixXd& h,
                                    const Eigen::MatrixXd& r) {
  const auto n = belief.dim();
  const auto m = innovation.size();
  require(h.rows() == m && h.cols() == n, "kf_update: H has wrong shape");
  require(r.rows() == m && r.cols() == m, "kf_update: R has wrong shape");

  const Eigen::MatrixXd ph = belief.cov * h.transpose();
  Eigen::MatrixXd s = h * ph + r;
  symmetrize(s);
  const Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    throw FilterError("innovation covariance is not positive definite");
  }
  const Eigen::MatrixXd gain = llt.solve(ph.transpose()).transpose();

  GaussianBelief out;
  out.mean = belief.mean + gain * innovation;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - gain * h;
  out.cov = a * belief.cov * a.transpose() + gain * r * gain.transpose();
  symmetrize(out.cov);
  return out;
}

GaussianBelief kf_update(const GaussianBelief& belief, const Eigen::VectorXd& z,
                         const Eigen::MatrixXd& h, const Eigen::MatrixXd& r) {
  require(h.cols() == belief.dim() && h.rows() == z.size(),
          "kf_update: H has wrong shape");
  return kf_update_innovation(belief, z - h * belief.mean, h, r);
}

Eigen::MatrixXd numerical_jacobian(const VectorFunction& f,
                                   const Eigen::VectorXd& x,
                                   std::optional<double> eps) {
  const double rel = eps.value_or(1e-6);
  require(rel > 0.0, "numerical_jacobian: eps must be positive");
  Eigen::VectorXd probe = x;
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = power_of_two_step(rel * std::max(1.0, std::abs(x(j))));
    probe(j) = x(j) + step;
    const Eigen::VectorXd plus = f(probe);
    probe(j) = x(j) - step;
    const Eigen::VectorXd minus = f(probe);
    probe(j) = x(j);
    if (!plus.allFinite() || !minus.allFinite()) {
      throw FilterError("numerical_jacobian: non-finite value in column " +
                        std::to_string(j));
    }
    if (j == 0) jac.resize(plus.size(), x.size());
    jac.col(j) = (plus - minus) / (2.0 * step);
  }
  return jac;
}

GaussianBelief ekf_step(const GaussianBelief& belief, const VectorFunction& f,
                        const VectorFunction& h, const Eigen::MatrixXd& q,
                        const Eigen::MatrixXd& r, const Eigen::VectorXd& z) {
  const Eigen::MatrixXd f_jac = numerical_jacobian(f, belief.mean);
  GaussianBelief predicted;
  predicted.mean = checked(f(belief.mean), "prediction model");
  require(q.rows() == predicted.dim() && q.cols() == predicted.dim(),
          "ekf_step: Q has wrong shape");
  predicted.cov = f_jac * belief.cov * f_jac.transpose() + q;
  symmetrize(predicted.cov);

  const Eigen::MatrixXd h_jac = numerical_jacobian(h, predicted.mean);
  const Eigen::VectorXd expected = checked(h(predicted.mean), "measurement model");
  return kf_update_innovation(predicted, z - expected, h_jac, r);
}

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& p) {
  const auto n = p.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(p);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  for (double jitter = 1e-12; jitter <= 1e-6 * 1.0001; jitter *= 10.0) {
    llt.compute(p + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw FilterError("covariance is not positive semidefinite; square root failed");
}

SigmaSet sigma_points(const GaussianBelief& belief, const UkfScaling& scaling) {
  const auto dim = belief.dim();
  require(dim >= 1, "sigma_points: empty state");
  const double l = static_cast<double>(dim);
  const double lambda = scaling.alpha * scaling.alpha * (l + scaling.kappa) - l;
  const double spread = l + lambda;
  if (!(spread > 0.0)) throw FilterError("UKF scaling gives L + lambda <= 0");

  SigmaSet set;
  set.scaling = scaling;
  set.mean_weights = Eigen::VectorXd::Constant(2 * dim + 1, 0.5 / spread);
  set.cov_weights = set.mean_weights;
  set.mean_weights(0) = lambda / spread;
  set.cov_weights(0) =
      lambda / spread + (1.0 - scaling.alpha * scaling.alpha + scaling.beta);

  const Eigen::MatrixXd root = std::sqrt(spread) * robust_cholesky(belief.cov);
  set.points.reserve(2 * dim + 1);
  set.points.push_back(belief.mean);
  for (Eigen::Index i = 0; i < dim; ++i) set.points.push_back(belief.mean + root.col(i));
  for (Eigen::Index i = 0; i < dim; ++i) set.points.push_back(belief.mean - root.col(i));
  return set;
}

GaussianBelief ukf_predict(const GaussianBelief& belief, const VectorFunction& f,
                           const Eigen::MatrixXd& q, const UkfScaling& scaling) {
  const SigmaSet set = sigma_points(belief, scaling);
  std::vector<Eigen::VectorXd> ys;
  ys.reserve(set.points.size());
  for (const auto& p : set.points) ys.push_back(checked(f(p), "prediction model"));

  GaussianBelief out;
  out.mean = weighted_mean(ys, set.mean_weights);
  require(q.rows() == out.dim() && q.cols() == out.dim(),
          "ukf_predict: Q has wrong shape");
  out.cov = weighted_cross(ys, out.mean, ys, out.mean, set.cov_weights) + q;
  symmetrize(out.cov);
  return out;
}

GaussianBelief ukf_update(const GaussianBelief& belief, const VectorFunction& h,
                          const Eigen::MatrixXd& r, const Eigen::VectorXd& z,
                          const UkfScaling& scaling) {
  const SigmaSet set = sigma_points(belief, scaling);
  std::vector<Eigen::VectorXd> zs;
  zs.reserve(set.points.size());
  for (const auto& p : set.points) zs.push_back(checked(h(p), "measurement model"));
  require(z.size() == zs.front().size(), "ukf_update: measurement size mismatch");
  require(r.rows() == z.size() && r.cols() == z.size(),
          "ukf_update: R has wrong shape");

  const Eigen::VectorXd z_mean = weighted_mean(zs, set.mean_weights);
  Eigen::MatrixXd s = weighted_cross(zs, z_mean, zs, z_mean, set.cov_weights) + r;
  symmetrize(s);
  const Eigen::MatrixXd pxz =
      weighted_cross(set.points, belief.mean, zs, z_mean, set.cov_weights);

  const Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    throw FilterError("UKF innovation covariance is not positive definite");
  }
  const Eigen::MatrixXd gain = llt.solve(pxz.transpose()).transpose();

  GaussianBelief out;
  out.mean = belief.mean + gain * (z - z_mean);
  out.cov = belief.cov - gain * s * gain.transpose();
  symmetrize(out.cov);
  return out;
}

GaussianBelief ukf_step(const GaussianBelief& belief, const VectorFunction& f,
                        const VectorFunction& h, const Eigen::MatrixXd& q,
                        const Eigen::MatrixXd& r, const Eigen::VectorXd& z,
                        const UkfScaling& scaling) {
  return ukf_update(ukf_predict(belief, f, q, scaling), h, r, z, scaling);
}

}  // namespace flychain
