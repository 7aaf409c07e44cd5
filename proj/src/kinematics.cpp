#include "stgdat/kinematics.hpp"

#include <cmath>
#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat::kin {

void BicycleParams::validate() const {
  if (!(l_r > 0.0)) throw std::invalid_argument("BicycleParams: l_r must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("BicycleParams: dt must be positive");
  if (!(a_max > 0.0) || !(beta_dot_max > 0.0)) {
    throw std::invalid_argument("BicycleParams: saturation bounds must be positive");
  }
}

Eigen::Matrix<double, 5, 1> VehicleState::vec() const {
  Eigen::Matrix<double, 5, 1> m;
  m << x, y, psi, v, beta;
  return m;
}

VehicleState VehicleState::from_vec(const Eigen::Matrix<double, 5, 1>& m) {
  return {m(0), m(1), m(2), m(3), m(4)};
}

bool VehicleState::finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(psi) &&
         std::isfinite(v) && std::isfinite(beta);
}

ControlInput saturate(double a_raw, double beta_dot_raw, const BicycleParams& p) {
  return {p.a_max * std::tanh(a_raw / p.a_max),
          p.beta_dot_max * std::tanh(beta_dot_raw / p.beta_dot_max)};
}

VehicleState bicycle_step(const VehicleState& s, const ControlInput& u,
                          const BicycleParams& p) {
  if (!s.finite() || !std::isfinite(u.a) || !std::isfinite(u.beta_dot)) {
    throw std::invalid_argument("bicycle_step: non-finite state or control");
  }
  VehicleState n;
  const double course = s.psi + s.beta;
  n.x = s.x + s.v * std::cos(course) * p.dt;
  n.y = s.y + s.v * std::sin(course) * p.dt;
  n.psi = wrap_angle(s.psi + (s.v / p.l_r) * std::sin(s.beta) * p.dt);
  n.v = s.v + u.a * p.dt;
  n.beta = wrap_angle(s.beta + u.beta_dot * p.dt);
  return n;
}

void jacobians(const VehicleState& s, const BicycleParams& p, Mat5& df_s, Mat52& df_u) {
  const double course = s.psi + s.beta;
  const double c = std::cos(course), sn = std::sin(course);
  df_s = Mat5::Identity();
  // x' row: d/dpsi, d/dv, d/dbeta
  df_s(0, 2) = -s.v * sn * p.dt;
  df_s(0, 3) = c * p.dt;
  df_s(0, 4) = -s.v * sn * p.dt;
  // y' row
  df_s(1, 2) = s.v * c * p.dt;
  df_s(1, 3) = sn * p.dt;
  df_s(1, 4) = s.v * c * p.dt;
  // psi' row
  df_s(2, 3) = std::sin(s.beta) / p.l_r * p.dt;
  df_s(2, 4) = s.v / p.l_r * std::cos(s.beta) * p.dt;

  df_u = Mat52::Zero();
  df_u(3, 0) = p.dt;  // dv'/da
  df_u(4, 1) = p.dt;  // dbeta'/dbeta_dot
}

namespace {

// Symmetry and eigenvalue tolerance for PSD validation.
constexpr double kPsdTol = 1e-9;

void require_psd(const Eigen::MatrixXd& m, const char* what) {
  if (!m.isApprox(m.transpose(), 1e-9) && (m - m.transpose()).cwiseAbs().maxCoeff() > kPsdTol) {
    throw std::invalid_argument(std::string(what) + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.eigenvalues().minCoeff() < -kPsdTol) {
    throw std::invalid_argument(std::string(what) + " is not positive semidefinite");
  }
}

}  // namespace

GaussianBelief propagate_gaussian(const GaussianBelief& belief, const ControlInput& mu_u,
                                  const Eigen::Matrix2d& cov_u, const BicycleParams& p) {
  require_psd(belief.cov, "state covariance");
  require_psd(cov_u, "control covariance");

  const VehicleState s = VehicleState::from_vec(belief.mean);
  Mat5 df_s;
  Mat52 df_u;
  jacobians(s, p, df_s, df_u);

  GaussianBelief out;
  out.mean = bicycle_step(s, mu_u, p).vec();
  Mat5 cov = df_s * belief.cov * df_s.transpose() + df_u * cov_u * df_u.transpose();
  cov = 0.5 * (cov + cov.transpose());
  // Floor tiny negative eigenvalues introduced by round-off.
  Eigen::SelfAdjointEigenSolver<Mat5> es(cov);
  if (es.eigenvalues().minCoeff() < 0.0) {
    const Eigen::Matrix<double, 5, 1> lam = es.eigenvalues().cwiseMax(0.0);
    cov = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    cov = 0.5 * (cov + cov.transpose());
  }
  out.cov = cov;
  return out;
}

void propagate_monte_carlo(std::vector<VehicleState>& particles, const ControlInput& mu_u,
                           const Eigen::Matrix2d& cov_u, Rng& rng,
                           const BicycleParams& p) {
  if (particles.empty()) {
    throw std::invalid_argument("propagate_monte_carlo: needs at least one particle");
  }
  require_psd(cov_u, "control covariance");
  // Lower-triangular factor for correlated control noise (LDLT handles the
  // semidefinite case, including exact zeros).
  Eigen::LDLT<Eigen::Matrix2d> ldlt(cov_u);
  const Eigen::Matrix2d l = ldlt.matrixL();
  const Eigen::Vector2d d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  for (VehicleState& s : particles) {
    const Eigen::Vector2d eps(rng.normal(), rng.normal());
    Eigen::Vector2d noise = l * d.cwiseProduct(eps);
    noise = ldlt.transpositionsP().transpose() * noise;
    const ControlInput u{mu_u.a + noise(0), mu_u.beta_dot + noise(1)};
    s = bicycle_step(s, u, p);
  }
}

}  // namespace stgdat::kin
