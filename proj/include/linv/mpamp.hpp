#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "linv/amp.hpp"
#include "linv/denoise.hpp"
#include "linv/quant.hpp"
#include "linv/util.hpp"

namespace linv::mpamp {

enum class RateModel { ecsq, gaussian_rd };

// Per-node message distortion for a given coding rate. ECSQ scales with the
// input std, so the unit-variance solve is shared; gaussian_rd is the Shannon
// bound D = var * 2^{-2R}.
struct RateDistortionModel {
  RateModel kind = RateModel::ecsq;

  RateDistortionModel() = default;
  explicit RateDistortionModel(RateModel k) : kind(k) {}

  // returns {gamma, distortion} for input variance var at rate R
  std::pair<double, double> at(double rate, double var) const {
    if (rate < 1e-6 || !(var > 0.0)) {
      return {std::numeric_limits<double>::infinity(), var};
    }
    if (kind == RateModel::gaussian_rd) {
      return {std::numeric_limits<double>::infinity(),
              quant::rd_gaussian_distortion(var, rate)};
    }
    const quant::EcsqPoint unit = unit_point(rate);
    return {unit.gamma * std::sqrt(var), unit.distortion * var};
  }

 private:
  // cache of unit-variance ECSQ solves on the 0.1-bit grid plus exact rates
  mutable std::vector<std::pair<double, quant::EcsqPoint>> cache_;
  const quant::EcsqPoint& unit_point(double rate) const {
    for (const auto& e : cache_) {
      if (std::abs(e.first - rate) < 1e-12) return e.second;
    }
    cache_.emplace_back(rate, quant::ecsq_for_rate(1.0, rate));
    return cache_.back().second;
  }
};

struct MpIterRecord {
  int t = 0;
  double rate = 0.0;
  double gamma = 0.0;
  double D_model = 0.0;
  double D_empirical = 0.0;
  double sigma_hat2 = 0.0;
  double fused_var = 0.0;
  double mse = 0.0;
  bool gamma_valid = true;
};

struct MpAmpReport {
  std::vector<MpIterRecord> iters;
  Eigen::VectorXd estimate;
  amp::StopReason stop = amp::StopReason::max_iter;
};

struct MpAmpOptions {
  int P = 1;
  std::vector<double> rates;  // one per iteration; defines T
  RateDistortionModel rd;
  bool lossless = false;  // skip quantization entirely
  std::uint64_t dither_seed = 1;
  double divergence_factor = 1e3;
  bool throw_on_divergence = false;
};

// Multi-processor AMP. Node p owns M/P rows; per iteration each node forms
// its residual and pseudodata slice, quantizes the slice with a dithered
// uniform quantizer, and the fusion center denoises the sum.
inline MpAmpReport run_mp_amp(const Eigen::MatrixXd& A,
                              const Eigen::VectorXd& y,
                              const denoise::ScalarPrior& prior,
                              double sigma_z2, const Eigen::VectorXd* truth,
                              const MpAmpOptions& opt) {
  const int M = int(A.rows());
  const int N = int(A.cols());
  const int P = opt.P;
  if (P < 1 || M % P != 0) {
    throw std::invalid_argument("run_mp_amp: M must be divisible by P");
  }
  if (opt.rates.empty()) {
    throw std::invalid_argument("run_mp_amp: empty rate schedule");
  }
  const int T = int(opt.rates.size());
  const int Mp = M / P;
  const double kappa = double(M) / N;
  const double var_x = prior.variance();
  const double sigma1_2 = sigma_z2 + prior.second_moment() / kappa;

  util::Rng dither(util::derive_seed(opt.dither_seed, 0xd17e5));
  MpAmpReport rep;
  rep.estimate = Eigen::VectorXd::Zero(N);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(M);
  Eigen::VectorXd f_node(N), f_fused(N), comp(N);
  double omega_prev = 0.0;
  bool first = true;

  for (int t = 1; t <= T; ++t) {
    MpIterRecord rec;
    rec.t = t;
    rec.rate = opt.lossless ? 0.0 : opt.rates[std::size_t(t - 1)];

    if (first) {
      r = y;
      first = false;
    } else {
      r = y - A * x + (omega_prev / kappa) * r;
    }
    rec.sigma_hat2 = r.squaredNorm() / M;
    if (!std::isfinite(rec.sigma_hat2) ||
        rec.sigma_hat2 > opt.divergence_factor * sigma1_2) {
      rep.stop = amp::StopReason::diverged;
      if (opt.throw_on_divergence) {
        throw amp::DivergenceError(t, "mp-amp residual energy diverged");
      }
      break;
    }

    const double node_var =
        quant::node_pseudodata_variance(var_x, P, rec.sigma_hat2);
    double gamma = 0.0, D_model = 0.0;
    if (!opt.lossless) {
      auto [g, d] = opt.rd.at(opt.rates[std::size_t(t - 1)], node_var);
      gamma = g;
      D_model = d;
      rec.gamma = gamma;
      rec.D_model = D_model;
      rec.gamma_valid =
          opt.rd.kind == RateModel::gaussian_rd ||
          quant::dither_valid(gamma, std::sqrt(rec.sigma_hat2), P);
    }

    // fusion sum with compensated summation so node order cannot matter
    f_fused.setZero();
    comp.setZero();
    double err_acc = 0.0;
    for (int p = 0; p < P; ++p) {
      f_node = x / double(P) +
               A.middleRows(p * Mp, Mp).transpose() * r.segment(p * Mp, Mp);
      if (!opt.lossless && opt.rates[std::size_t(t - 1)] >= 1e-6) {
        if (opt.rd.kind == RateModel::ecsq) {
          const double offset = (dither.uniform() - 0.5) * gamma;
          for (int i = 0; i < N; ++i) {
            const double q = quant::quantize(f_node[i], gamma, offset);
            err_acc += (q - f_node[i]) * (q - f_node[i]);
            f_node[i] = q;
          }
        } else {
          const double sd = std::sqrt(D_model);
          for (int i = 0; i < N; ++i) {
            const double n = sd * dither.normal();
            err_acc += n * n;
            f_node[i] += n;
          }
        }
      }
      // Neumaier update per entry
      for (int i = 0; i < N; ++i) {
        const double v = f_node[i];
        const double s = f_fused[i] + v;
        comp[i] += std::abs(f_fused[i]) >= std::abs(v)
                       ? (f_fused[i] - s) + v
                       : (v - s) + f_fused[i];
        f_fused[i] = s;
      }
    }
    f_fused += comp;
    rec.D_empirical = err_acc / (double(N) * P);

    rec.fused_var = rec.sigma_hat2 + (opt.lossless ? 0.0 : P * D_model);
    double theta = 0.0;
    for (int i = 0; i < N; ++i) {
      const denoise::Moments m = denoise::posterior(prior, f_fused[i],
                                                    rec.fused_var);
      x[i] = m.mean;
      theta += m.var;
    }
    theta /= N;
    omega_prev = theta / rec.fused_var;

    if (truth) rec.mse = (x - *truth).squaredNorm() / N;
    rep.iters.push_back(rec);
  }
  rep.estimate = x;
  return rep;
}

struct LossySeIter {
  int t = 0;
  double rate = 0.0;
  double sigma_t2 = 0.0;
  double node_var = 0.0;
  double gamma = 0.0;
  double D = 0.0;
  double fused_var = 0.0;
  double mse = 0.0;
  bool gamma_valid = true;
};

struct LossySeResult {
  std::vector<LossySeIter> iters;
  double final_mse = 0.0;
  double final_sigma2 = 0.0;
};

// Deterministic lossy state evolution: the fused scalar channel gains P*D_t
// of quantization-error variance each iteration. A zero rate transmits
// nothing, so the iteration is a no-op rather than a free update.
inline LossySeResult lossy_se(const denoise::MseCurve& mse, double kappa,
                              double sigma_z2, int P,
                              const std::vector<double>& rates,
                              const RateDistortionModel& rd = {}) {
  const double var_x = mse.prior().variance();
  LossySeResult out;
  double sigma2 = sigma_z2 + mse.second_moment() / kappa;
  double cur_mse = mse.second_moment();
  for (std::size_t t = 0; t < rates.size(); ++t) {
    LossySeIter it;
    it.t = int(t) + 1;
    it.rate = rates[t];
    it.sigma_t2 = sigma2;
    it.node_var = quant::node_pseudodata_variance(var_x, P, sigma2);
    if (rates[t] < 1e-6) {
      it.D = it.node_var;
      it.fused_var = sigma2;
      it.mse = cur_mse;
      out.iters.push_back(it);
      continue;
    }
    auto [g, d] = rd.at(rates[t], it.node_var);
    it.gamma = g;
    it.D = d;
    it.gamma_valid = rd.kind == RateModel::gaussian_rd ||
                     quant::dither_valid(g, std::sqrt(sigma2), P);
    it.fused_var = sigma2 + P * it.D;
    it.mse = mse(it.fused_var);
    cur_mse = it.mse;
    sigma2 = sigma_z2 + cur_mse / kappa;
    out.iters.push_back(it);
  }
  out.final_mse = cur_mse;
  out.final_sigma2 = sigma2;
  return out;
}

// Random schedule whose bin sizes stay inside the validity region, per the
// lossy-SE evaluation protocol.
inline std::vector<double> random_valid_schedule(const denoise::MseCurve& mse,
                                                 double kappa, double sigma_z2,
                                                 int P, int T, util::Rng& rng,
                                                 double rate_step = 0.1,
                                                 int max_extra_steps = 10) {
  RateDistortionModel rd;
  const double var_x = mse.prior().variance();
  double sigma2 = sigma_z2 + mse.second_moment() / kappa;
  std::vector<double> rates;
  for (int t = 0; t < T; ++t) {
    const double node_var =
        quant::node_pseudodata_variance(var_x, P, sigma2);
    double rate = rate_step;
    for (int k = 1; k < 400; ++k) {
      rate = rate_step * k;
      auto [g, d] = rd.at(rate, node_var);
      if (quant::dither_valid(g, std::sqrt(sigma2), P)) break;
    }
    rate += rate_step * double(rng.index(std::size_t(max_extra_steps) + 1));
    rates.push_back(rate);
    auto [g, d] = rd.at(rate, node_var);
    sigma2 = sigma_z2 + mse(sigma2 + P * d) / kappa;
  }
  return rates;
}

struct IndependenceResult {
  double reject_wn = 0.0;   // fraction rejecting "w and n uncorrelated"
  double reject_wnx = 0.0;  // fraction rejecting "w+n and x uncorrelated"
};

namespace detail {

inline bool pcc_reject(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       double alpha) {
  const int n = int(a.size());
  const double am = a.mean(), bm = b.mean();
  const double sa = (a.array() - am).matrix().squaredNorm();
  const double sb = (b.array() - bm).matrix().squaredNorm();
  if (sa <= 0.0 || sb <= 0.0) return false;
  double r = ((a.array() - am) * (b.array() - bm)).sum() / std::sqrt(sa * sb);
  r = std::clamp(r, -0.999999999999, 0.999999999999);
  const double tstat = r * std::sqrt((n - 2) / (1.0 - r * r));
  boost::math::students_t dist(n - 2);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(
                             dist, std::abs(tstat)));
  return p < alpha;
}

}  // namespace detail

// Scalar-channel hypothesis tests: per trial, build the per-node pseudodata
// f^p = x/P + w^p, quantize with bin size gamma, and test (w, n) and
// (w+n, x) for correlation at the 5% level. gamma <= 0 means no quantizer.
inline IndependenceResult independence_diagnostic(double sigma_node,
                                                  double gamma, int trials,
                                                  int P = 100,
                                                  int n_samples = 1000,
                                                  double rho = 0.1,
                                                  std::uint64_t seed = 1) {
  if (trials < 30) {
    throw std::invalid_argument("independence_diagnostic: trials >= 30");
  }
  util::Rng rng(util::derive_seed(seed, 0xb1));
  IndependenceResult res;
  Eigen::VectorXd x(n_samples), w(n_samples), nq(n_samples);
  for (int tr = 0; tr < trials; ++tr) {
    for (int i = 0; i < n_samples; ++i) {
      x[i] = rng.uniform() < rho ? rng.normal() : 0.0;
    }
    w.setZero();
    nq.setZero();
    for (int p = 0; p < P; ++p) {
      for (int i = 0; i < n_samples; ++i) {
        const double wp = sigma_node * rng.normal();
        const double f = x[i] / P + wp;
        w[i] += wp;
        if (gamma > 0.0) nq[i] += quant::quantize(f, gamma, 0.0) - f;
      }
    }
    if (detail::pcc_reject(w, nq, 0.05)) res.reject_wn += 1.0;
    if (detail::pcc_reject(w + nq, x, 0.05)) res.reject_wnx += 1.0;
  }
  res.reject_wn /= trials;
  res.reject_wnx /= trials;
  return res;
}

}  // namespace linv::mpamp
