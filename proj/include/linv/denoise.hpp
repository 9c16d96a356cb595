#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "linv/model.hpp"
#include "linv/util.hpp"

namespace linv::denoise {

// Scalar prior as a Gaussian mixture; point masses are components with
// tau = 0. Covers bernoulli_gauss, mixture_gauss, and the pure Gaussian case.
struct ScalarPrior {
  std::vector<double> w, m, tau;

  static ScalarPrior bernoulli_gauss(double rho) {
    ScalarPrior p;
    p.w = {rho, 1.0 - rho};
    p.m = {0.0, 0.0};
    p.tau = {1.0, 0.0};
    return p;
  }
  static ScalarPrior gaussian(double mean = 0.0, double var = 1.0) {
    ScalarPrior p;
    p.w = {1.0};
    p.m = {mean};
    p.tau = {var};
    return p;
  }
  static ScalarPrior from_model(const model::SignalPrior& sp) {
    switch (sp.kind) {
      case model::PriorKind::bernoulli_gauss:
      case model::PriorKind::joint_bernoulli_gauss:
        return sp.rho >= 1.0 ? gaussian() : bernoulli_gauss(sp.rho);
      case model::PriorKind::mixture_gauss: {
        ScalarPrior p;
        p.w = sp.weights;
        p.m = sp.means;
        p.tau = sp.vars;
        return p;
      }
      default:
        throw std::invalid_argument(
            "ScalarPrior: prior kind has no scalar conditional-mean denoiser");
    }
  }

  double second_moment() const {
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      s += w[k] * (m[k] * m[k] + tau[k]);
    }
    return s;
  }
  double mean() const {
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * m[k];
    return s;
  }
  double variance() const {
    const double mu = mean();
    return second_moment() - mu * mu;
  }

  double sample(util::Rng& rng) const {
    double u = rng.uniform(), acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < w.size(); ++k) {
      acc += w[k];
      if (u < acc) break;
    }
    return m[k] + (tau[k] > 0.0 ? std::sqrt(tau[k]) * rng.normal() : 0.0);
  }
};

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

// Posterior mean/variance of x given v = x + noise, noise ~ N(0, sigma2).
inline Moments posterior(const ScalarPrior& p, double v, double sigma2) {
  if (!(sigma2 > 0.0)) throw std::domain_error("posterior: sigma2 must be > 0");
  const std::size_t K = p.w.size();
  double max_lw = -std::numeric_limits<double>::infinity();
  thread_local std::vector<double> lw, pm, pv;
  lw.assign(K, 0.0);
  pm.assign(K, 0.0);
  pv.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double s = p.tau[k] + sigma2;
    const double d = v - p.m[k];
    lw[k] = (p.w[k] > 0.0 ? std::log(p.w[k]) : -1e300) - 0.5 * std::log(s) -
            d * d / (2.0 * s);
    pm[k] = p.m[k] + p.tau[k] / s * d;
    pv[k] = p.tau[k] * sigma2 / s;
    max_lw = std::max(max_lw, lw[k]);
  }
  double z = 0.0, mean = 0.0, second = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double wk = std::exp(lw[k] - max_lw);
    z += wk;
    mean += wk * pm[k];
    second += wk * (pv[k] + pm[k] * pm[k]);
  }
  mean /= z;
  second /= z;
  Moments out;
  out.mean = mean;
  out.var = std::max(0.0, second - mean * mean);
  return out;
}

// Conditional-mean denoiser derivative via the Gaussian-channel identity
// d/dv E[x|v] = Var(x|v)/sigma2.
inline double posterior_derivative(const ScalarPrior& p, double v,
                                   double sigma2) {
  return posterior(p, v, sigma2).var / sigma2;
}

// Joint J-dimensional Bernoulli-Gaussian denoiser: the closed-form f_a/f_v
// pair used row-wise by the multi-channel algorithm, evaluated in the log
// domain. Sigma_j is channel j's pseudodata noise variance.
inline void joint_bg(double rho, const double* R, const double* Sigma, int J,
                     double* a_out, double* v_out) {
  if (!(rho > 0.0) || rho > 1.0) throw std::domain_error("joint_bg: rho");
  double log_term = rho < 1.0 ? std::log1p(-rho) : -1e300;
  for (int j = 0; j < J; ++j) {
    if (!(Sigma[j] > 0.0)) throw std::domain_error("joint_bg: Sigma <= 0");
    log_term += 0.5 * std::log1p(1.0 / Sigma[j]) -
                R[j] * R[j] / (2.0 * Sigma[j] * (Sigma[j] + 1.0));
  }
  // p_active = rho / (rho + exp(log_term)); evaluate as a stable sigmoid.
  const double lambda = log_term - std::log(rho);
  double p_active;
  if (lambda > 0.0) {
    const double e = std::exp(-lambda);
    p_active = e / (1.0 + e);
  } else {
    p_active = 1.0 / (1.0 + std::exp(lambda));
  }
  for (int j = 0; j < J; ++j) {
    const double shrink = R[j] / (Sigma[j] + 1.0);
    a_out[j] = p_active * shrink;
    v_out[j] =
        p_active * (shrink * R[j] / (Sigma[j] + 1.0) + Sigma[j] / (Sigma[j] + 1.0)) -
        a_out[j] * a_out[j];
    if (v_out[j] < 0.0) v_out[j] = 0.0;
  }
}

// d f_a^(j) / d R^(j) (same Gaussian-channel identity per channel).
inline void joint_bg_derivative(double rho, const double* R,
                                const double* Sigma, int J, double* d_out) {
  thread_local std::vector<double> a, v;
  a.assign(J, 0.0);
  v.assign(J, 0.0);
  joint_bg(rho, R, Sigma, J, a.data(), v.data());
  for (int j = 0; j < J; ++j) d_out[j] = v[j] / Sigma[j];
}

// MSE(eta, sigma2) = E[(eta(X + sigma W) - X)^2] by Monte Carlo with common
// random numbers: one fixed (x_i, w_i) sample set serves every sigma2, so the
// curve is smooth in sigma2 and finite differences estimate the derivative.
class MseCurve {
 public:
  MseCurve(ScalarPrior prior, std::size_t samples, std::uint64_t seed)
      : prior_(std::move(prior)), samples_(samples), seed_(seed) {
    if (samples_ < 10000) {
      throw std::invalid_argument("MseCurve: need >= 1e4 samples");
    }
    util::Rng rng(util::derive_seed(seed_, 0x5eedc));
    x_.resize(samples_);
    w_.resize(samples_);
    for (std::size_t i = 0; i < samples_; ++i) {
      x_[i] = prior_.sample(rng);
      w_[i] = rng.normal();
    }
    fast_bg_ = prior_.w.size() == 2 && prior_.m[0] == 0.0 &&
               prior_.m[1] == 0.0 && prior_.tau[0] == 1.0 &&
               prior_.tau[1] == 0.0;
  }

  const ScalarPrior& prior() const { return prior_; }
  double second_moment() const { return prior_.second_moment(); }

  struct Stat {
    double mse = 0.0;
    double stderr_ = 0.0;
  };

  Stat raw_stat(double sigma2) const {
    Stat st;
    if (sigma2 <= 0.0) return st;
    const double sigma = std::sqrt(sigma2);
    util::CompensatedSum s1, s2;
    if (fast_bg_) {
      const double rho = prior_.w[0];
      const double base =
          std::log1p(-rho) - std::log(rho) + 0.5 * std::log1p(1.0 / sigma2);
      const double q = 1.0 / (2.0 * sigma2 * (sigma2 + 1.0));
      const double shrink = 1.0 / (sigma2 + 1.0);
      for (std::size_t i = 0; i < samples_; ++i) {
        const double v = x_[i] + sigma * w_[i];
        const double lambda = base - v * v * q;
        double p_active;
        if (lambda > 0.0) {
          const double e = std::exp(-lambda);
          p_active = e / (1.0 + e);
        } else {
          p_active = 1.0 / (1.0 + std::exp(lambda));
        }
        const double err = p_active * shrink * v - x_[i];
        const double e2 = err * err;
        s1.add(e2);
        s2.add(e2 * e2);
      }
    } else {
      for (std::size_t i = 0; i < samples_; ++i) {
        const double v = x_[i] + sigma * w_[i];
        const double err = posterior(prior_, v, sigma2).mean - x_[i];
        const double e2 = err * err;
        s1.add(e2);
        s2.add(e2 * e2);
      }
    }
    const double n = double(samples_);
    st.mse = s1.value() / n;
    const double var = std::max(0.0, s2.value() / n - st.mse * st.mse);
    st.stderr_ = std::sqrt(var / n);
    return st;
  }

  double raw(double sigma2) const { return raw_stat(sigma2).mse; }

  // Cached log-spaced grid at step_db resolution; immutable once built.
  void build_grid(double lo, double hi, double step_db = 0.01, int jobs = 1) {
    grid_sigma2_ = util::logspace_db(lo, hi, step_db);
    grid_mse_.assign(grid_sigma2_.size(), 0.0);
    util::parallel_for(grid_sigma2_.size(), jobs, [&](std::size_t i) {
      grid_mse_[i] = raw(grid_sigma2_[i]);
    });
    lo_ = lo;
    hi_ = hi;
  }

  bool has_grid() const { return !grid_sigma2_.empty(); }
  double grid_lo() const { return lo_; }
  double grid_hi() const { return hi_; }

  // Interpolated lookup (linear between log-spaced grid points); out-of-range
  // arguments clamp to the grid ends. Falls back to direct MC without a grid.
  double operator()(double sigma2) const {
    if (grid_sigma2_.empty()) return raw(sigma2);
    if (sigma2 <= lo_) return grid_mse_.front();
    if (sigma2 >= hi_) return grid_mse_.back();
    const auto it =
        std::upper_bound(grid_sigma2_.begin(), grid_sigma2_.end(), sigma2);
    const std::size_t k = std::distance(grid_sigma2_.begin(), it);
    const double x0 = grid_sigma2_[k - 1], x1 = grid_sigma2_[k];
    const double t = (sigma2 - x0) / (x1 - x0);
    return grid_mse_[k - 1] * (1.0 - t) + grid_mse_[k] * t;
  }

  std::string fingerprint() const {
    std::ostringstream ss;
    ss << "prior";
    for (std::size_t k = 0; k < prior_.w.size(); ++k) {
      ss << ":" << prior_.w[k] << "," << prior_.m[k] << "," << prior_.tau[k];
    }
    ss << ";samples=" << samples_ << ";seed=" << seed_;
    return ss.str();
  }

  // Cache file: fingerprint header plus (sigma2, mse, stderr) rows.
  void save_grid(const std::string& path) const {
    if (!has_grid()) throw std::logic_error("save_grid: no grid built");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "# schema=mse_cache.v1\n# " << fingerprint() << "\n";
    f << "sigma2,mse,stderr\n";
    f.precision(17);
    for (std::size_t i = 0; i < grid_sigma2_.size(); ++i) {
      f << grid_sigma2_[i] << "," << grid_mse_[i] << ",0\n";
    }
  }

  bool load_grid(const std::string& path) {
    std::ifstream f(path);
    if (!f) return false;
    std::string line;
    if (!std::getline(f, line) || line != "# schema=mse_cache.v1") return false;
    if (!std::getline(f, line) || line != "# " + fingerprint()) return false;
    if (!std::getline(f, line)) return false;  // header row
    std::vector<double> s2, mse;
    while (std::getline(f, line)) {
      std::istringstream row(line);
      std::string a, b, c;
      if (!std::getline(row, a, ',') || !std::getline(row, b, ',') ||
          !std::getline(row, c)) {
        return false;
      }
      s2.push_back(std::stod(a));
      mse.push_back(std::stod(b));
    }
    if (s2.size() < 2) return false;
    grid_sigma2_ = std::move(s2);
    grid_mse_ = std::move(mse);
    lo_ = grid_sigma2_.front();
    hi_ = grid_sigma2_.back();
    return true;
  }

 private:
  ScalarPrior prior_;
  std::size_t samples_;
  std::uint64_t seed_;
  std::vector<double> x_, w_;
  bool fast_bg_ = false;
  std::vector<double> grid_sigma2_, grid_mse_;
  double lo_ = 0.0, hi_ = 0.0;
};

}  // namespace linv::denoise
