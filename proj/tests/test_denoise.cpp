#include <catch2/catch_amalgamated.hpp>

#include <linv/denoise.hpp>
#include <linv/model.hpp>

#include <cmath>

using namespace linv;

namespace {

double phi(double t, double var) {
  return std::exp(-0.5 * t * t / var) / std::sqrt(2.0 * std::acos(-1.0) * var);
}

// posterior moments for a Bernoulli-Gaussian prior by brute-force trapezoid
// over the continuous part plus the exact point mass at zero
denoise::Moments bg_posterior_quadrature(double rho, double v, double sigma2) {
  const int K = 40001;
  const double lo = -12.0, hi = 12.0;
  const double h = (hi - lo) / (K - 1);
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < K; ++i) {
    const double x = lo + i * h;
    double w = rho * phi(x, 1.0) * phi(v - x, sigma2) * h;
    if (i == 0 || i == K - 1) w *= 0.5;
    z += w;
    m1 += w * x;
    m2 += w * x * x;
  }
  const double spike = (1.0 - rho) * phi(v, sigma2);
  z += spike;
  const double mean = m1 / z;
  return {mean, m2 / z - mean * mean};
}

}  // namespace

TEST_CASE("bernoulli-gauss posterior matches quadrature") {
  const double rho = 0.1;
  const auto p = denoise::ScalarPrior::bernoulli_gauss(rho);
  for (double sigma2 : {0.01, 0.1, 1.0}) {
    for (double v : {-2.0, -0.3, 0.0, 0.05, 0.7, 3.0}) {
      const denoise::Moments got = denoise::posterior(p, v, sigma2);
      const denoise::Moments want = bg_posterior_quadrature(rho, v, sigma2);
      CAPTURE(sigma2, v);
      CHECK(got.mean == Catch::Approx(want.mean).margin(1e-8));
      CHECK(got.var == Catch::Approx(want.var).margin(1e-8));
    }
  }
}

TEST_CASE("gaussian prior posterior is the linear shrinkage") {
  const auto p = denoise::ScalarPrior::gaussian(0.5, 2.0);
  const double v = 1.3, sigma2 = 0.7;
  // x | v is Gaussian: mean pulls v toward the prior mean by tau/(tau+s2)
  const double g = 2.0 / (2.0 + sigma2);
  const denoise::Moments got = denoise::posterior(p, v, sigma2);
  CHECK(got.mean == Catch::Approx(0.5 + g * (v - 0.5)).epsilon(1e-12));
  CHECK(got.var == Catch::Approx(g * sigma2).epsilon(1e-12));
}

TEST_CASE("posterior variance is nonnegative; its average is the mse") {
  const auto p = denoise::ScalarPrior::bernoulli_gauss(0.05);
  // pointwise the variance may exceed the channel noise (bimodal posterior
  // near ambiguous inputs), but averaged over the channel it cannot
  for (double sigma2 : {1e-4, 0.03, 2.0}) {
    util::Rng rng(31);
    double avg = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double v = p.sample(rng) + std::sqrt(sigma2) * rng.normal();
      const denoise::Moments m = denoise::posterior(p, v, sigma2);
      REQUIRE(m.var >= 0.0);
      avg += m.var;
    }
    avg /= n;
    CHECK(avg <= std::min(sigma2, p.second_moment()) * 1.02);
  }
}

TEST_CASE("scalar prior moments and sampling agree") {
  const auto p = denoise::ScalarPrior::bernoulli_gauss(0.1);
  CHECK(p.second_moment() == Catch::Approx(0.1).epsilon(1e-12));
  util::Rng rng(17);
  double s2 = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    const double x = p.sample(rng);
    s2 += x * x;
  }
  CHECK(s2 / n == Catch::Approx(0.1).epsilon(0.03));
}

TEST_CASE("from_model covers the mixture-representable priors") {
  const auto bg =
      denoise::ScalarPrior::from_model(model::SignalPrior::bernoulli_gauss(0.2));
  CHECK(bg.second_moment() == Catch::Approx(0.2).epsilon(1e-12));
  const auto mix = denoise::ScalarPrior::from_model(
      model::SignalPrior::mixture_gauss({0.5, 0.3, 0.2}, {0.0, -1.5, 2.0},
                                        {0.1, 0.8, 1.0}));
  CHECK(mix.second_moment() ==
        Catch::Approx(0.5 * 0.1 + 0.3 * (2.25 + 0.8) + 0.2 * 5.0)
            .epsilon(1e-12));
}

TEST_CASE("mse curve: limits, monotonicity, grid interpolation") {
  const denoise::MseCurve mse(denoise::ScalarPrior::bernoulli_gauss(0.1),
                              200000, 77);
  // huge channel noise: the denoiser falls back on the prior
  CHECK(mse(1e7) == Catch::Approx(0.1).epsilon(0.02));
  // tiny channel noise: near-perfect estimation
  CHECK(mse(1e-7) < 1e-6);

  double prev = 0.0;
  for (double s2 = 1e-4; s2 < 10.0; s2 *= 3.0) {
    const double cur = mse(s2);
    CHECK(cur >= prev * 0.98);  // nondecreasing up to MC wobble
    CHECK(cur <= std::min(s2, 0.1 + 0.01));
    prev = cur;
  }

  denoise::MseCurve gridded(denoise::ScalarPrior::bernoulli_gauss(0.1), 200000,
                            77);
  gridded.build_grid(1e-4, 1.0, 0.05, 1);
  REQUIRE(gridded.has_grid());
  // the gridded lookup reproduces the raw values where it sampled them
  for (double s2 : {2e-4, 1e-3, 1e-2, 0.5}) {
    CHECK(gridded(s2) == Catch::Approx(mse(s2)).epsilon(0.02));
  }
}
