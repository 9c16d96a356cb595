#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "linv/denoise.hpp"
#include "linv/model.hpp"

namespace linv::amp {

struct ScalarChannelState {
  int t = 0;
  double sigma_t2 = 0.0;
  double predicted_mse = 0.0;
};

struct SeOptions {
  int max_iters = 400;
  double rel_tol = 1e-9;
};

// sigma_{t+1}^2 = sigma_Z^2 + (1/kappa) MSE(eta_t, sigma_t^2 + PD_t), starting
// from sigma_1^2 = sigma_Z^2 + E[X^2]/kappa. PD_schedule entries are the
// fusion-side quantization penalties P*D_t; empty or zero means lossless.
inline std::vector<ScalarChannelState> state_evolution(
    const denoise::MseCurve& mse, double kappa, double sigma_z2, int T,
    const std::vector<double>* PD_schedule = nullptr) {
  if (T < 1) throw std::invalid_argument("state_evolution: T >= 1");
  if (PD_schedule && static_cast<int>(PD_schedule->size()) != T) {
    throw std::invalid_argument("state_evolution: schedule length != T");
  }
  std::vector<ScalarChannelState> out;
  out.reserve(T);
  double sigma2 = sigma_z2 + mse.second_moment() / kappa;
  for (int t = 1; t <= T; ++t) {
    const double pd = PD_schedule ? (*PD_schedule)[t - 1] : 0.0;
    ScalarChannelState st;
    st.t = t;
    st.sigma_t2 = sigma2;
    st.predicted_mse = mse(sigma2 + pd);
    out.push_back(st);
    sigma2 = sigma_z2 + st.predicted_mse / kappa;
  }
  return out;
}

struct FixedPoint {
  double sigma_inf2 = 0.0;
  double mmse = 0.0;
  int iters = 0;
  bool converged = false;
};

inline FixedPoint se_fixed_point(const denoise::MseCurve& mse, double kappa,
                                 double sigma_z2, SeOptions opt = {}) {
  FixedPoint fp;
  double sigma2 = sigma_z2 + mse.second_moment() / kappa;
  for (int t = 0; t < opt.max_iters; ++t) {
    const double next = sigma_z2 + mse(sigma2) / kappa;
    ++fp.iters;
    if (std::abs(next - sigma2) <= opt.rel_tol * sigma2) {
      sigma2 = next;
      fp.converged = true;
      break;
    }
    sigma2 = next;
  }
  fp.sigma_inf2 = sigma2;
  fp.mmse = mse(sigma2);
  return fp;
}

enum class StopReason { max_iter, delta_below_eps, diverged };

struct AmpRunReport {
  std::vector<double> mse;         // against ground truth, per iteration
  std::vector<double> sigma_hat2;  // ||r_t||^2 / M per iteration
  Eigen::MatrixXd estimate;        // N x J (J=1 for the centralized run)
  int iterations = 0;
  StopReason stop = StopReason::max_iter;
};

struct DivergenceError : std::runtime_error {
  int iteration;
  DivergenceError(int t, const std::string& what)
      : std::runtime_error(what), iteration(t) {}
};

enum class VarianceRule { empirical, theta, se };

struct AmpOptions {
  int T_max = 50;
  double eps = 0.0;  // stop when mean-squared estimate change < eps
  VarianceRule rule = VarianceRule::empirical;
  const std::vector<ScalarChannelState>* se_states = nullptr;  // rule==se
  double theta_init = -1.0;  // rule==theta; <0 picks Var(X)*kappa*sigma_z2
  double divergence_factor = 1e3;
  bool throw_on_divergence = false;
};

// Centralized AMP on a column-normalized system (matrix_scale = 1/M):
//   x_{t+1} = eta_t(A^T r_t + x_t)
//   r_t = y - A x_t + (1/kappa) r_{t-1} <eta'_{t-1}>
// The denoiser's channel variance comes from the configured rule; <eta'> uses
// the exact posterior-variance identity.
inline AmpRunReport run_amp(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                            const denoise::ScalarPrior& prior, double sigma_z2,
                            const Eigen::VectorXd* truth, AmpOptions opt = {}) {
  const int M = static_cast<int>(A.rows()), N = static_cast<int>(A.cols());
  const double kappa = double(M) / double(N);
  const double EX2 = prior.second_moment();
  const double sigma_12 = sigma_z2 + EX2 / kappa;

  AmpRunReport rep;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd r = y;  // r_1 = y - A*0; no Onsager term at t=1
  double theta = opt.theta_init >= 0.0
                     ? opt.theta_init
                     : prior.variance() * kappa * sigma_z2;
  rep.stop = StopReason::max_iter;

  for (int t = 1; t <= opt.T_max; ++t) {
    const double sigma_hat2 = r.squaredNorm() / double(M);
    if (!std::isfinite(sigma_hat2) ||
        sigma_hat2 > opt.divergence_factor * sigma_12) {
      rep.stop = StopReason::diverged;
      rep.iterations = t - 1;
      if (opt.throw_on_divergence) {
        throw DivergenceError(t, "amp diverged at iteration " +
                                     std::to_string(t));
      }
      break;
    }
    double sigma_t2 = sigma_hat2;
    if (opt.rule == VarianceRule::theta) {
      sigma_t2 = sigma_z2 + theta / kappa;
    } else if (opt.rule == VarianceRule::se) {
      if (!opt.se_states || t > static_cast<int>(opt.se_states->size())) {
        throw std::invalid_argument("run_amp: se rule needs se_states");
      }
      sigma_t2 = (*opt.se_states)[t - 1].sigma_t2;
    }
    Eigen::VectorXd f = A.transpose() * r + x;
    Eigen::VectorXd x_next(N);
    double vsum = 0.0;
    for (int l = 0; l < N; ++l) {
      const auto mo = denoise::posterior(prior, f(l), sigma_t2);
      x_next(l) = mo.mean;
      vsum += mo.var;
    }
    theta = vsum / double(N);
    const double omega = theta / sigma_t2;  // <eta'_t>
    const double delta = (x_next - x).squaredNorm() / double(N);
    x = x_next;
    rep.sigma_hat2.push_back(sigma_hat2);
    if (truth) rep.mse.push_back((x - *truth).squaredNorm() / double(N));
    rep.iterations = t;
    if (delta < opt.eps) {
      rep.stop = StopReason::delta_below_eps;
      break;
    }
    r = y - A * x + (omega / kappa) * r;
  }
  rep.estimate = x;
  return rep;
}

// Multi-channel AMP, evaluated strictly in the listed line order with
// Theta_j = 0 on the first sweep and v initialized to rho*sigma_z2. Expects a
// matrix_scale = 1/N system. T_max is the "maximum iterations" input T and the
// loop runs while t < T, matching the printed control flow.
inline AmpRunReport run_mmv_amp(const model::MmvProblem& prob,
                                const Eigen::MatrixXd& y, double rho,
                                int T_max, double eps,
                                const Eigen::MatrixXd* truth,
                                bool throw_on_divergence = false) {
  prob.validate();
  const int N = prob.system.N, M = prob.system.M, J = prob.J;
  const double sigma_z2 = prob.system.sigma_z2;
  if (y.rows() != M || y.cols() != J) {
    throw std::invalid_argument("run_mmv_amp: y shape mismatch");
  }
  std::vector<Eigen::MatrixXd> A(J);
  for (int j = 0; j < J; ++j) A[j] = model::channel_matrix(prob, j);

  const double sigma_12 = sigma_z2 + rho * double(N) * prob.system.matrix_scale;

  AmpRunReport rep;
  int t = 1;
  double delta = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd w = y;
  Eigen::VectorXd Theta = Eigen::VectorXd::Zero(J);
  Eigen::MatrixXd v = Eigen::MatrixXd::Constant(N, J, rho * sigma_z2);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, J);
  Eigen::MatrixXd q(M, J), R(N, J), a_hat(N, J);
  Eigen::VectorXd Sigma(J);
  rep.stop = StopReason::max_iter;

  while (t < T_max && delta > eps) {
    for (int j = 0; j < J; ++j) {
      q.col(j) = (y.col(j) - w.col(j)) / (sigma_z2 + Theta(j));
      Theta(j) = v.col(j).sum() / double(N);
      w.col(j) = A[j] * a.col(j) - Theta(j) * q.col(j);
      Sigma(j) = double(N) * (sigma_z2 + Theta(j)) / double(M);
      R.col(j) = a.col(j) + Sigma(j) * (A[j].transpose() *
                                        ((y.col(j) - w.col(j)) /
                                         (sigma_z2 + Theta(j))));
      a_hat.col(j) = a.col(j);
    }
    for (int l = 0; l < N; ++l) {
      double Rl[16], Sl[16], al[16], vl[16];
      for (int j = 0; j < J; ++j) {
        Rl[j] = R(l, j);
        Sl[j] = Sigma(j);
      }
      denoise::joint_bg(rho, Rl, Sl, J, al, vl);
      for (int j = 0; j < J; ++j) {
        v(l, j) = vl[j];
        a(l, j) = al[j];
      }
    }
    t = t + 1;
    delta = (a_hat - a).squaredNorm() / double(N * J);

    double sig_hat = 0.0;
    for (int j = 0; j < J; ++j) {
      sig_hat += (y.col(j) - w.col(j)).squaredNorm() / double(M);
    }
    sig_hat /= double(J);
    rep.sigma_hat2.push_back(sig_hat);
    if (truth) rep.mse.push_back((a - *truth).squaredNorm() / double(N * J));
    rep.iterations = t - 1;
    if (!std::isfinite(delta) || sig_hat > 1e3 * sigma_12) {
      rep.stop = StopReason::diverged;
      if (throw_on_divergence) {
        throw DivergenceError(t, "mmv amp diverged at iteration " +
                                     std::to_string(t));
      }
      break;
    }
  }
  if (rep.stop != StopReason::diverged && delta <= eps) {
    rep.stop = StopReason::delta_below_eps;
  }
  rep.estimate = a;
  return rep;
}

}  // namespace linv::amp
