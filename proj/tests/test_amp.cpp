#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <linv/amp.hpp>
#include <linv/denoise.hpp>
#include <linv/model.hpp>
#include <linv/util.hpp>

namespace amp = linv::amp;
namespace denoise = linv::denoise;
namespace model = linv::model;
namespace util = linv::util;

namespace {

double db(double v) { return 10.0 * std::log10(v); }

const denoise::MseCurve& bg_curve() {
  static denoise::MseCurve curve(denoise::ScalarPrior::bernoulli_gauss(0.1),
                                 200000, 77);
  return curve;
}

}  // namespace

TEST_CASE("state evolution follows the scalar-channel recursion") {
  const auto& curve = bg_curve();
  const double kappa = 0.4, sigma_z2 = 0.0025;
  const int T = 9;

  const auto states = amp::state_evolution(curve, kappa, sigma_z2, T);
  REQUIRE(states.size() == size_t(T));
  double sigma2 = sigma_z2 + curve.second_moment() / kappa;
  for (int t = 0; t < T; ++t) {
    CHECK(states[t].t == t + 1);
    CHECK(states[t].sigma_t2 == Catch::Approx(sigma2).epsilon(1e-12));
    CHECK(states[t].predicted_mse == Catch::Approx(curve(sigma2)).epsilon(1e-12));
    sigma2 = sigma_z2 + states[t].predicted_mse / kappa;
  }

  // an additive per-iteration distortion enters the denoiser's channel
  std::vector<double> pd(T, 3e-4);
  const auto noisy = amp::state_evolution(curve, kappa, sigma_z2, T, &pd);
  sigma2 = sigma_z2 + curve.second_moment() / kappa;
  for (int t = 0; t < T; ++t) {
    CHECK(noisy[t].predicted_mse ==
          Catch::Approx(curve(sigma2 + pd[t])).epsilon(1e-12));
    CHECK(noisy[t].predicted_mse > states[t].predicted_mse);
    sigma2 = sigma_z2 + noisy[t].predicted_mse / kappa;
  }

  std::vector<double> bad(T - 1, 0.0);
  CHECK_THROWS_AS(amp::state_evolution(curve, kappa, sigma_z2, T, &bad),
                  std::invalid_argument);
  CHECK_THROWS_AS(amp::state_evolution(curve, kappa, sigma_z2, 0),
                  std::invalid_argument);
}

TEST_CASE("state evolution decreases to a self-consistent fixed point") {
  const auto& curve = bg_curve();
  const double kappa = 0.4, sigma_z2 = 0.0025;

  const auto states = amp::state_evolution(curve, kappa, sigma_z2, 60);
  for (size_t t = 1; t < states.size(); ++t) {
    CHECK(states[t].sigma_t2 <= states[t - 1].sigma_t2 * (1.0 + 1e-12));
  }

  const amp::FixedPoint fp = amp::se_fixed_point(curve, kappa, sigma_z2);
  CHECK(fp.converged);
  CHECK(fp.mmse == Catch::Approx(curve(fp.sigma_inf2)).epsilon(1e-12));
  const double residual = sigma_z2 + curve(fp.sigma_inf2) / kappa;
  CHECK(residual == Catch::Approx(fp.sigma_inf2).epsilon(1e-6));
  CHECK(states.back().sigma_t2 == Catch::Approx(fp.sigma_inf2).epsilon(1e-6));
  CHECK(fp.sigma_inf2 > sigma_z2);
}

TEST_CASE("amp tracks state evolution iteration by iteration") {
  const auto& curve = bg_curve();
  const auto prior = denoise::ScalarPrior::bernoulli_gauss(0.1);
  const int N = 2000, M = 800, T = 12, trials = 8;
  const double sigma_z2 = 0.0025, kappa = double(M) / N;

  const auto se = amp::state_evolution(curve, kappa, sigma_z2, T);

  std::vector<double> mse_sum(T, 0.0), sig_sum(T, 0.0);
  for (int trial = 0; trial < trials; ++trial) {
    model::LinearSystem sys;
    sys.N = N;
    sys.M = M;
    sys.sigma_z2 = sigma_z2;
    sys.matrix_scale = 1.0 / M;
    const Eigen::MatrixXd A = model::generate_matrix(sys, 100 + trial);
    const Eigen::MatrixXd xs = model::generate_signal(
        model::SignalPrior::bernoulli_gauss(0.1), N, 200 + trial);
    const Eigen::VectorXd x = xs.col(0);
    util::Rng rng(util::derive_seed(300 + trial, 0x5eed));
    Eigen::VectorXd y = A * x;
    for (int mu = 0; mu < M; ++mu) y(mu) += std::sqrt(sigma_z2) * rng.normal();

    amp::AmpOptions opt;
    opt.T_max = T;
    const auto rep = amp::run_amp(A, y, prior, sigma_z2, &x, opt);
    REQUIRE(rep.iterations == T);
    REQUIRE(rep.mse.size() == size_t(T));
    for (int t = 0; t < T; ++t) {
      mse_sum[t] += rep.mse[t];
      sig_sum[t] += rep.sigma_hat2[t];
    }
  }
  for (int t = 0; t < T; ++t) {
    CHECK(std::abs(db(mse_sum[t] / trials) - db(se[t].predicted_mse)) <= 0.6);
    CHECK(std::abs(db(sig_sum[t] / trials) - db(se[t].sigma_t2)) <= 0.6);
  }
}

TEST_CASE("all variance rules reach the same floor") {
  const auto& curve = bg_curve();
  const auto prior = denoise::ScalarPrior::bernoulli_gauss(0.1);
  const int N = 2000, M = 800, T = 25;
  const double sigma_z2 = 0.0025;

  model::LinearSystem sys;
  sys.N = N;
  sys.M = M;
  sys.sigma_z2 = sigma_z2;
  sys.matrix_scale = 1.0 / M;
  const Eigen::MatrixXd A = model::generate_matrix(sys, 11);
  const Eigen::VectorXd x =
      model::generate_signal(model::SignalPrior::bernoulli_gauss(0.1), N, 12)
          .col(0);
  util::Rng rng(util::derive_seed(13, 0x5eed));
  Eigen::VectorXd y = A * x;
  for (int mu = 0; mu < M; ++mu) y(mu) += std::sqrt(sigma_z2) * rng.normal();

  const auto se = amp::state_evolution(curve, double(M) / N, sigma_z2, T);

  amp::AmpOptions base;
  base.T_max = T;

  amp::AmpOptions o_emp = base;
  const double m_emp = amp::run_amp(A, y, prior, sigma_z2, &x, o_emp).mse.back();

  amp::AmpOptions o_theta = base;
  o_theta.rule = amp::VarianceRule::theta;
  const double m_theta =
      amp::run_amp(A, y, prior, sigma_z2, &x, o_theta).mse.back();

  amp::AmpOptions o_se = base;
  o_se.rule = amp::VarianceRule::se;
  o_se.se_states = &se;
  const double m_se = amp::run_amp(A, y, prior, sigma_z2, &x, o_se).mse.back();

  CHECK(std::abs(db(m_emp) - db(m_theta)) <= 0.8);
  CHECK(std::abs(db(m_emp) - db(m_se)) <= 0.8);

  amp::AmpOptions o_bad = base;
  o_bad.rule = amp::VarianceRule::se;  // missing se_states
  CHECK_THROWS_AS(amp::run_amp(A, y, prior, sigma_z2, &x, o_bad),
                  std::invalid_argument);
}

TEST_CASE("a mis-scaled operator trips the divergence stop") {
  const auto prior = denoise::ScalarPrior::bernoulli_gauss(0.1);
  const int N = 1200, M = 480;
  const double sigma_z2 = 0.0025;

  model::LinearSystem sys;
  sys.N = N;
  sys.M = M;
  sys.sigma_z2 = sigma_z2;
  sys.matrix_scale = 9.0 / M;  // columns three times too long
  const Eigen::MatrixXd A = model::generate_matrix(sys, 21);
  const Eigen::VectorXd x =
      model::generate_signal(model::SignalPrior::bernoulli_gauss(0.1), N, 22)
          .col(0);
  util::Rng rng(util::derive_seed(23, 0x5eed));
  Eigen::VectorXd y = A * x;
  for (int mu = 0; mu < M; ++mu) y(mu) += std::sqrt(sigma_z2) * rng.normal();

  amp::AmpOptions opt;
  opt.T_max = 50;
  const auto rep = amp::run_amp(A, y, prior, sigma_z2, &x, opt);
  CHECK(rep.stop == amp::StopReason::diverged);
  CHECK(rep.iterations < 50);

  opt.throw_on_divergence = true;
  CHECK_THROWS_AS(amp::run_amp(A, y, prior, sigma_z2, &x, opt),
                  amp::DivergenceError);
}

TEST_CASE("single-channel mmv run agrees with the rescaled centralized run") {
  // entries at variance 1/N with noise kappa*s2 describe the same inverse
  // problem as entries at 1/M with noise s2, so both floors must match the
  // same scalar fixed point
  const auto& curve = bg_curve();
  const auto prior = denoise::ScalarPrior::bernoulli_gauss(0.1);
  const int N = 2000, M = 800, T = 30, trials = 4;
  const double kappa = double(M) / N;
  const double s2 = 0.0025;

  const amp::FixedPoint fp = amp::se_fixed_point(curve, kappa, s2);

  double mse_cent = 0.0, mse_mmv = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    {
      model::LinearSystem sys;
      sys.N = N;
      sys.M = M;
      sys.sigma_z2 = s2;
      sys.matrix_scale = 1.0 / M;
      const Eigen::MatrixXd A = model::generate_matrix(sys, 500 + trial);
      const Eigen::VectorXd x =
          model::generate_signal(model::SignalPrior::bernoulli_gauss(0.1), N,
                                 600 + trial)
              .col(0);
      util::Rng rng(util::derive_seed(700 + trial, 0x5eed));
      Eigen::VectorXd y = A * x;
      for (int mu = 0; mu < M; ++mu) y(mu) += std::sqrt(s2) * rng.normal();
      amp::AmpOptions opt;
      opt.T_max = T;
      mse_cent += amp::run_amp(A, y, prior, s2, &x, opt).mse.back();
    }
    {
      model::MmvProblem prob;
      prob.system.N = N;
      prob.system.M = M;
      prob.system.sigma_z2 = kappa * s2;
      prob.system.matrix_scale = 1.0 / N;
      prob.system.matrix_seed = 800 + trial;
      prob.J = 1;
      const Eigen::MatrixXd x = model::generate_signal(
          model::SignalPrior::joint_bernoulli_gauss(0.1, 1), N, 900 + trial);
      const Eigen::MatrixXd y = model::measure(prob, x, 1000 + trial);
      const auto rep = amp::run_mmv_amp(prob, y, 0.1, T, 0.0, &x);
      REQUIRE_FALSE(rep.mse.empty());
      mse_mmv += rep.mse.back();
    }
  }
  CHECK(std::abs(db(mse_cent / trials) - db(fp.mmse)) <= 1.0);
  CHECK(std::abs(db(mse_mmv / trials) - db(fp.mmse)) <= 1.0);
}

TEST_CASE("mmv amp recovers jointly sparse channels in both matrix modes") {
  const int N = 1200, M = 480, J = 3, T = 30;
  const double rho = 0.1;
  const double s2 = 0.4 * 0.0025;  // per-entry variance 1/N convention

  for (auto mode : {model::MatrixMode::distinct, model::MatrixMode::shared}) {
    model::MmvProblem prob;
    prob.system.N = N;
    prob.system.M = M;
    prob.system.sigma_z2 = s2;
    prob.system.matrix_scale = 1.0 / N;
    prob.system.matrix_seed = 41;
    prob.J = J;
    prob.mode = mode;
    const Eigen::MatrixXd x = model::generate_signal(
        model::SignalPrior::joint_bernoulli_gauss(rho, J), N, 42);
    const Eigen::MatrixXd y = model::measure(prob, x, 43);
    const auto rep = amp::run_mmv_amp(prob, y, rho, T, 0.0, &x);
    REQUIRE_FALSE(rep.mse.empty());
    for (double m : rep.mse) CHECK(std::isfinite(m));
    CHECK(rep.mse.back() < rep.mse.front() / 10.0);
    CHECK(rep.mse.back() < rho / 10.0);
  }
}

TEST_CASE("mmv amp flags the wrong matrix convention as divergent") {
  const int N = 1200, M = 480, J = 2;
  model::MmvProblem prob;
  prob.system.N = N;
  prob.system.M = M;
  prob.system.sigma_z2 = 0.001;
  prob.system.matrix_scale = 1.0 / M;  // expected 1/N
  prob.system.matrix_seed = 51;
  prob.J = J;
  const Eigen::MatrixXd x = model::generate_signal(
      model::SignalPrior::joint_bernoulli_gauss(0.1, J), N, 52);
  const Eigen::MatrixXd y = model::measure(prob, x, 53);
  CHECK_THROWS_AS(amp::run_mmv_amp(prob, y, 0.1, 40, 0.0, &x, true),
                  amp::DivergenceError);
}
