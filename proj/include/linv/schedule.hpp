#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "linv/amp.hpp"
#include "linv/denoise.hpp"
#include "linv/mpamp.hpp"
#include "linv/quant.hpp"

namespace linv::schedule {

struct CostParams {
  double b = 1.0;  // one iteration's computation, in bits of communication

  static CostParams from_platform(double C4, double C5) {
    CostParams c;
    c.b = C4 / C5;
    return c;
  }
};

struct RateSchedule {
  std::vector<double> rates;

  int T() const { return int(rates.size()); }
  double R_agg() const {
    double s = 0.0;
    for (double r : rates) s += r;
    return s;
  }
  int nonzero_count() const {
    int n = 0;
    for (double r : rates) n += r > 0.0 ? 1 : 0;
    return n;
  }
};

// Def: cost = b * (number of non-zero-rate iterations) + aggregate rate.
inline double cost(const RateSchedule& s, double b) {
  return b * s.nonzero_count() + s.R_agg();
}

struct DpOptions {
  double sigma_step_db = 0.01;
  double rate_step = 0.1;
  int T_max = 64;
  mpamp::RateModel model = mpamp::RateModel::ecsq;
  // gamma-validity constraint applies to real quantizers; the Shannon-bound
  // model ignores it
  bool enforce_gamma_validity = true;
  double mmse_baseline = std::numeric_limits<double>::quiet_NaN();
};

struct DpInfeasible : std::runtime_error {
  double lowest_emse;
  explicit DpInfeasible(double e)
      : std::runtime_error(
            "dp_schedule: EMSE target unreachable within T_max; lowest "
            "achievable EMSE = " +
            std::to_string(e)),
        lowest_emse(e) {}
};

struct DpResult {
  RateSchedule schedule;
  double b = 0.0;
  double total_cost = 0.0;
  double mmse = 0.0;        // EMSE baseline used
  double target_mse = 0.0;  // mmse + delta
  bool monotone = true;     // rates non-decreasing (reported, not enforced)
  mpamp::LossySeResult replay;
};

namespace detail {

// piecewise-linear in log(sigma^2 - floor); the state contracts toward the
// floor geometrically, so this coordinate keeps resolution uniform along
// trajectories
struct Interp {
  const std::vector<double>* leps;  // log(sigma2 - floor), ascending
  double floor;

  double operator()(const std::vector<double>& phi, double sigma2) const {
    const std::vector<double>& u = *leps;
    const double e = sigma2 - floor;
    if (!(e > 0.0)) return phi.front();
    const double x = std::log(e);
    if (x <= u.front()) return phi.front();
    if (x >= u.back()) return phi.back();
    const auto it = std::upper_bound(u.begin(), u.end(), x);
    const std::size_t j = std::size_t(it - u.begin());
    const double a = phi[j - 1], b = phi[j];
    if (!std::isfinite(a) || !std::isfinite(b)) {
      return std::numeric_limits<double>::infinity();
    }
    const double f = (x - u[j - 1]) / (u[j] - u[j - 1]);
    return a + f * (b - a);
  }
};

}  // namespace detail

// Backward induction over the remaining-iterations horizon on a sigma^2 state
// grid, linear interpolation of the value function, exact forward pass. A
// zero rate transmits nothing and is a free no-op, which makes Phi_h(sigma^2)
// = min over schedules of length <= h; T is therefore an output. Tie-breaks
// prefer the smallest rate.
inline DpResult dp_schedule(const denoise::MseCurve& mse, double kappa,
                            double sigma_z2, int P, double delta,
                            CostParams cp, DpOptions opt = {}) {
  if (!(delta > 0.0)) throw std::invalid_argument("dp_schedule: delta > 0");
  if (!(cp.b > 0.0)) throw std::invalid_argument("dp_schedule: b > 0");
  if (!mse.has_grid()) {
    throw std::invalid_argument("dp_schedule: MSE curve needs a cached grid");
  }
  const double EX2 = mse.second_moment();
  const double var_x = mse.prior().variance();

  const amp::FixedPoint fp = amp::se_fixed_point(mse, kappa, sigma_z2);
  const double baseline =
      std::isnan(opt.mmse_baseline) ? fp.mmse : opt.mmse_baseline;
  DpResult out;
  out.b = cp.b;
  out.mmse = baseline;
  out.target_mse = baseline + delta;

  if (EX2 <= out.target_mse) {
    // the all-zero estimate already meets the target
    out.replay = mpamp::lossy_se(mse, kappa, sigma_z2, P, {},
                                 mpamp::RateDistortionModel{opt.model});
    return out;
  }
  if (out.target_mse <= fp.mmse) {
    throw DpInfeasible(fp.mmse - baseline);
  }

  const double lo = sigma_z2 + fp.mmse / kappa;   // lossless floor
  const double hi = sigma_z2 + EX2 / kappa;       // sigma_1^2
  const double basin = sigma_z2 + out.target_mse / kappa;

  // two-zone state grid: dB-uniform bulk plus a log-spaced tail in
  // eps = sigma^2 - lo, so targets far finer than one dB cell stay resolved
  std::vector<double> grid;
  {
    const double lo_db = 10.0 * std::log10(lo);
    const double hi_db = 10.0 * std::log10(hi);
    const int nb =
        std::max(2, int(std::ceil((hi_db - lo_db) / opt.sigma_step_db)) + 1);
    const double step_db = (hi_db - lo_db) / (nb - 1);
    for (int i = 1; i < nb; ++i) {
      grid.push_back(std::pow(10.0, (lo_db + step_db * i) / 10.0));
    }
    grid.back() = hi;
    const double eps_join = lo * (std::pow(10.0, step_db / 10.0) - 1.0);
    const double eps_b = basin - lo;
    const double eps_min = std::min(eps_b * 0.5, eps_join * 0.05);
    const int per_decade = 24;
    const int nt = std::max(
        2, int(std::ceil(std::log10(eps_join / eps_min) * per_decade)) + 1);
    for (int i = 0; i < nt; ++i) {
      const double e =
          eps_min * std::pow(eps_join / eps_min, double(i) / (nt - 1));
      grid.push_back(lo + e);
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(
        std::unique(grid.begin(), grid.end(),
                    [](double a, double b) { return b - a < 1e-14 * b; }),
        grid.end());
  }
  const int n_grid = int(grid.size());
  std::vector<double> leps(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    leps[i] = std::log(grid[i] - lo);
  }

  // rate set {0, rate_step, ...}. The ceiling must never bind the interior
  // optimum, whose final per-node distortion scales like
  // delta / (T * kappa * P); cap with a wide margin, plus the near-lossless
  // 1e-3 sigma^2 / P rule for loose targets.
  mpamp::RateDistortionModel rd{opt.model};
  std::vector<double> rates{0.0};
  std::vector<double> Dbar{1.0}, gbar{0.0};
  {
    const double u2_lo = quant::node_pseudodata_variance(var_x, P, lo);
    const double need = std::min(1e-3 * lo / P,
                                 0.1 * delta / (double(opt.T_max) * kappa * P)) /
                        u2_lo;
    for (int k = 1; k < 4000; ++k) {
      const double r = opt.rate_step * k;
      auto [g, d] = rd.at(r, 1.0);
      rates.push_back(r);
      Dbar.push_back(d);
      gbar.push_back(g);
      if (d < need) break;
    }
  }
  const int K = int(rates.size());

  // mse grid coverage check for the largest possible fused variance
  const double fused_max = hi + P * quant::node_pseudodata_variance(
                                        var_x, P, hi) * Dbar[std::size_t(
                                        std::min(1, K - 1))];
  if (mse.has_grid() &&
      (mse.grid_hi() < fused_max * (1.0 - 1e-9) ||
       mse.grid_lo() > lo * (1.0 + 1e-9))) {
    throw std::invalid_argument(
        "dp_schedule: mse grid must cover [" + std::to_string(lo) + ", " +
        std::to_string(fused_max) + "]");
  }

  // transitions are horizon-independent
  std::vector<double> next(std::size_t(n_grid) * K);
  std::vector<char> valid(std::size_t(n_grid) * K, 1);
  for (int i = 0; i < n_grid; ++i) {
    const double s2 = grid[std::size_t(i)];
    const double u2 = quant::node_pseudodata_variance(var_x, P, s2);
    for (int k = 1; k < K; ++k) {
      const double D = u2 * Dbar[std::size_t(k)];
      next[std::size_t(i) * K + k] = sigma_z2 + mse(s2 + P * D) / kappa;
      if (opt.enforce_gamma_validity && opt.model == mpamp::RateModel::ecsq) {
        valid[std::size_t(i) * K + k] =
            quant::dither_valid(gbar[std::size_t(k)] * std::sqrt(u2),
                                std::sqrt(s2), P);
      }
    }
  }

  detail::Interp interp{&leps, lo};
  const double INF = std::numeric_limits<double>::infinity();
  auto lookup = [&](const std::vector<double>& phi, double s2) {
    if (s2 <= basin) return 0.0;
    return interp(phi, s2);
  };

  std::vector<std::vector<double>> Phi;
  Phi.emplace_back(std::size_t(n_grid));
  for (int i = 0; i < n_grid; ++i) {
    Phi[0][std::size_t(i)] = grid[std::size_t(i)] <= basin ? 0.0 : INF;
  }
  int H = 0;
  for (int h = 1; h <= opt.T_max; ++h) {
    Phi.emplace_back(std::size_t(n_grid));
    bool changed = false;
    for (int i = 0; i < n_grid; ++i) {
      double best = Phi[std::size_t(h) - 1][std::size_t(i)];  // no-op
      if (grid[std::size_t(i)] <= basin) best = 0.0;
      for (int k = 1; k < K; ++k) {
        if (!valid[std::size_t(i) * K + k]) continue;
        const double cand =
            cp.b + rates[std::size_t(k)] +
            lookup(Phi[std::size_t(h) - 1], next[std::size_t(i) * K + k]);
        if (cand < best) best = cand;
      }
      Phi[std::size_t(h)][std::size_t(i)] = best;
      if (best != Phi[std::size_t(h) - 1][std::size_t(i)]) changed = true;
    }
    H = h;
    if (!changed) break;
  }

  if (!std::isfinite(lookup(Phi[std::size_t(H)], hi))) {
    // report what lossless SE can reach in T_max iterations
    const auto se = amp::state_evolution(mse, kappa, sigma_z2, opt.T_max);
    double lowest = EX2;
    for (const auto& s : se) lowest = std::min(lowest, s.predicted_mse);
    throw DpInfeasible(lowest - baseline);
  }

  // forward pass: re-minimize at the exact state, using stored value tables
  // for the continuation. If interpolation optimism exhausts the horizon just
  // short of the target, continue with the deepest table as a stationary
  // policy; outside the horizon the no-op is disallowed so every turn acts.
  double s2 = hi;
  int h = H;
  int turns = 0;
  while (kappa * (s2 - sigma_z2) > out.target_mse) {
    if (++turns > 6 * opt.T_max) {
      throw DpInfeasible(kappa * (s2 - sigma_z2) - baseline);
    }
    const std::vector<double>& cont =
        h >= 1 ? Phi[std::size_t(h) - 1] : Phi[std::size_t(H)];
    const double u2 = quant::node_pseudodata_variance(var_x, P, s2);
    int best_k = 0;
    double best = h >= 1 ? lookup(cont, s2) : INF;  // no-op
    double best_next = s2;
    for (int k = 1; k < K; ++k) {
      if (opt.enforce_gamma_validity && opt.model == mpamp::RateModel::ecsq &&
          !quant::dither_valid(gbar[std::size_t(k)] * std::sqrt(u2),
                               std::sqrt(s2), P)) {
        continue;
      }
      const double D = u2 * Dbar[std::size_t(k)];
      const double nxt = sigma_z2 + mse(s2 + P * D) / kappa;
      const double cand = cp.b + rates[std::size_t(k)] + lookup(cont, nxt);
      if (cand < best) {
        best = cand;
        best_k = k;
        best_next = nxt;
      }
    }
    if (!std::isfinite(best)) {
      throw DpInfeasible(kappa * (s2 - sigma_z2) - baseline);
    }
    if (best_k > 0) {
      out.schedule.rates.push_back(rates[std::size_t(best_k)]);
      s2 = best_next;
    }
    if (h >= 1) --h;
  }

  out.total_cost = cost(out.schedule, cp.b);
  out.monotone = std::is_sorted(out.schedule.rates.begin(),
                                out.schedule.rates.end());
  out.replay =
      mpamp::lossy_se(mse, kappa, sigma_z2, P, out.schedule.rates, rd);
  if (out.replay.final_mse > out.target_mse * (1.0 + 1e-9)) {
    throw std::logic_error("dp_schedule: replay missed the target");
  }
  return out;
}

// Brute-force optimum over positive-rate sequences of length <= T_cap on the
// same rate grid and transition model; the Bellman-optimality oracle.
inline DpResult exhaustive_schedule(const denoise::MseCurve& mse, double kappa,
                                    double sigma_z2, int P, double delta,
                                    CostParams cp, int T_cap,
                                    DpOptions opt = {}) {
  const double EX2 = mse.second_moment();
  const double var_x = mse.prior().variance();
  const amp::FixedPoint fp = amp::se_fixed_point(mse, kappa, sigma_z2);
  const double baseline =
      std::isnan(opt.mmse_baseline) ? fp.mmse : opt.mmse_baseline;
  const double target = baseline + delta;

  DpResult out;
  out.b = cp.b;
  out.mmse = baseline;
  out.target_mse = target;
  mpamp::RateDistortionModel rd{opt.model};

  if (EX2 <= target) {
    out.replay = mpamp::lossy_se(mse, kappa, sigma_z2, P, {}, rd);
    return out;
  }

  std::vector<double> rate_set;
  {
    const double lo = sigma_z2 + fp.mmse / kappa;
    const double u2_lo = quant::node_pseudodata_variance(var_x, P, lo);
    const double need = std::min(1e-3 * lo / P,
                                 0.1 * delta / (double(opt.T_max) * kappa * P)) /
                        u2_lo;
    for (int k = 1; k < 4000; ++k) {
      rate_set.push_back(opt.rate_step * k);
      if (rd.at(opt.rate_step * k, 1.0).second < need) break;
    }
  }

  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<double> cur, best_seq;
  const double hi = sigma_z2 + EX2 / kappa;

  auto dfs = [&](auto&& self, double s2, double cost_so_far) -> void {
    if (kappa * (s2 - sigma_z2) <= target) {
      if (cost_so_far < best_cost) {
        best_cost = cost_so_far;
        best_seq = cur;
      }
      return;
    }
    if (int(cur.size()) >= T_cap) return;
    const double u2 = quant::node_pseudodata_variance(var_x, P, s2);
    for (double r : rate_set) {
      const double add = cp.b + r;
      if (cost_so_far + add >= best_cost) continue;
      if (opt.enforce_gamma_validity && opt.model == mpamp::RateModel::ecsq) {
        auto [g, d] = rd.at(r, u2);
        if (!quant::dither_valid(g, std::sqrt(s2), P)) continue;
      }
      const double nxt = sigma_z2 + mse(s2 + P * rd.at(r, u2).second) / kappa;
      cur.push_back(r);
      self(self, nxt, cost_so_far + add);
      cur.pop_back();
    }
  };
  dfs(dfs, hi, 0.0);

  if (!std::isfinite(best_cost)) throw DpInfeasible(fp.mmse - baseline);
  out.schedule.rates = best_seq;
  out.total_cost = best_cost;
  out.monotone =
      std::is_sorted(best_seq.begin(), best_seq.end());
  out.replay = mpamp::lossy_se(mse, kappa, sigma_z2, P, best_seq, rd);
  return out;
}

// Slope of the state-evolution map at its fixed point.
inline double theta(const denoise::MseCurve& mse, double kappa,
                    double sigma_z2, double fd_rel_step = 1e-3) {
  const amp::FixedPoint fp = amp::se_fixed_point(mse, kappa, sigma_z2);
  const double s = fp.sigma_inf2;
  const double h = fd_rel_step * s;
  const double th = (mse(s + h) - mse(s - h)) / (2.0 * h * kappa);
  if (!(th > 0.0) || !(th < 1.0)) {
    throw std::runtime_error("theta: SE slope outside (0,1): " +
                             std::to_string(th));
  }
  return th;
}

struct GrowthReport {
  double tail_growth = 0.0;  // (R_T - R_{T-k}) / k
  double predicted = 0.0;    // 1/2 log2(1/theta)
  double diff = 0.0;
  int k = 0;
  bool short_schedule = false;  // T < 8
  std::vector<double> emse_ratios;
  double mean_tail_emse_ratio = 0.0;
  bool distortion_to_emse_decreasing = true;  // D_t / emse_t over the tail
};

inline GrowthReport growth_rate_check(const RateSchedule& sched, double th,
                                      const mpamp::LossySeResult& replay,
                                      double mmse, int tail = 6) {
  GrowthReport g;
  const int T = sched.T();
  g.short_schedule = T < 8;
  g.k = std::min(tail, T - 1);
  g.predicted = 0.5 * std::log2(1.0 / th);
  if (g.k >= 1) {
    g.tail_growth = (sched.rates[std::size_t(T) - 1] -
                     sched.rates[std::size_t(T - 1 - g.k)]) /
                    g.k;
  }
  g.diff = std::abs(g.tail_growth - g.predicted);
  std::vector<double> emse;
  for (const auto& it : replay.iters) emse.push_back(it.mse - mmse);
  for (std::size_t t = 1; t < emse.size(); ++t) {
    if (emse[t - 1] > 0.0 && emse[t] > 0.0) {
      g.emse_ratios.push_back(emse[t] / emse[t - 1]);
    }
  }
  const int rk = std::min<int>(g.k, int(g.emse_ratios.size()));
  if (rk > 0) {
    double acc = 0.0;
    for (int i = 0; i < rk; ++i) {
      acc += g.emse_ratios[g.emse_ratios.size() - 1 - std::size_t(i)];
    }
    g.mean_tail_emse_ratio = acc / rk;
  }
  for (std::size_t t = replay.iters.size() >= std::size_t(g.k)
                           ? replay.iters.size() - std::size_t(g.k)
                           : 1;
       t < replay.iters.size(); ++t) {
    const double prev = replay.iters[t - 1].D / std::max(emse[t - 1], 1e-300);
    const double curv = replay.iters[t].D / std::max(emse[t], 1e-300);
    if (curv > prev * (1.0 + 1e-9)) g.distortion_to_emse_decreasing = false;
  }
  return g;
}

struct ParetoPoint {
  double b = 0.0;
  double delta = 0.0;
  int T = 0;
  double R_agg = 0.0;
  double final_mse = 0.0;
  RateSchedule schedule;
};

// DP solutions over the (b, delta) product, filtered to the non-dominated
// set in (T, R_agg, MSE).
inline std::vector<ParetoPoint> pareto_sweep(
    const denoise::MseCurve& mse, double kappa, double sigma_z2, int P,
    const std::vector<double>& b_list, const std::vector<double>& delta_list,
    DpOptions opt = {}) {
  if (b_list.empty() || delta_list.empty()) {
    throw std::invalid_argument("pareto_sweep: empty sweep list");
  }
  std::vector<ParetoPoint> pts;
  for (double b : b_list) {
    for (double d : delta_list) {
      CostParams cp;
      cp.b = b;
      const DpResult r = dp_schedule(mse, kappa, sigma_z2, P, d, cp, opt);
      ParetoPoint p;
      p.b = b;
      p.delta = d;
      p.T = r.schedule.T();
      p.R_agg = r.schedule.R_agg();
      p.final_mse = r.replay.final_mse;
      p.schedule = r.schedule;
      pts.push_back(std::move(p));
    }
  }
  auto dominates = [](const ParetoPoint& a, const ParetoPoint& b) {
    const bool le = a.T <= b.T && a.R_agg <= b.R_agg + 1e-12 &&
                    a.final_mse <= b.final_mse * (1.0 + 1e-12);
    const bool lt = a.T < b.T || a.R_agg < b.R_agg - 1e-12 ||
                    a.final_mse < b.final_mse * (1.0 - 1e-12);
    return le && lt;
  };
  std::vector<ParetoPoint> keep;
  for (const auto& p : pts) {
    bool dominated = false;
    for (const auto& q : pts) {
      if (&p != &q && dominates(q, p)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) keep.push_back(p);
  }
  return keep;
}

}  // namespace linv::schedule
