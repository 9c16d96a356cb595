#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "linv/util.hpp"

namespace linv::replica {

// The free energy is derived under matrix entries of variance 1/N. A system
// scaled 1/M with noise sigma_z2 is statistically identical to a 1/N system
// with noise kappa*sigma_z2, so the 1/M convention evaluates the same formula
// at that effective noise.
enum class NoiseConvention { one_over_N, one_over_M };

struct ReplicaParams {
  double rho = 0.1;
  double kappa = 0.2;
  double sigma_z2 = 1e-3;
  int J = 1;
  NoiseConvention convention = NoiseConvention::one_over_N;

  double sigma_eff2() const {
    return convention == NoiseConvention::one_over_M ? kappa * sigma_z2
                                                     : sigma_z2;
  }
  void validate() const {
    if (!(rho > 0.0) || rho >= 1.0) {
      throw std::invalid_argument("replica: rho must be in (0,1)");
    }
    if (!(kappa > 0.0)) throw std::invalid_argument("replica: kappa > 0");
    if (!(sigma_z2 >= 0.0)) throw std::invalid_argument("replica: sigma_z2");
    if (J < 1) throw std::invalid_argument("replica: J >= 1");
  }
};

namespace detail {

// E over the chi-square(J) law of ||g||^2 of
//   log(rho * c^{J/2} + (1-rho) * exp(-coef * s)),
// computed as an adaptive 1-D radial integral (the J-sphere reduction).
inline double radial_log_term(double rho, double log_c_half_J, double coef,
                              int J) {
  const double half_J = 0.5 * J;
  const double log_norm =
      -half_J * std::log(2.0) - std::lgamma(half_J);
  // chi-square tail bound: P(S > J + 2 sqrt(J x) + 2 x) <= exp(-x).
  const double x = 30.0;
  const double s_max = J + 2.0 * std::sqrt(double(J) * x) + 2.0 * x;
  const double log_rho = std::log(rho);
  const double log_1mrho = std::log1p(-rho);
  auto f = [&](double s) {
    const double log_pdf = log_norm + (half_J - 1.0) * std::log(s) - 0.5 * s;
    const double val = util::logsumexp(log_rho + log_c_half_J,
                                       log_1mrho - coef * s);
    return std::exp(log_pdf) * val;
  };
  double error = 0.0;
  const double result =
      boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
          f, 0.0, s_max, 12, 1e-11, &error);
  if (!std::isfinite(result)) {
    throw std::runtime_error("replica quadrature failed (non-finite)");
  }
  return result;
}

}  // namespace detail

// Free energy F(E) as a function of candidate MSE E; its global maximizer is
// the MMSE in the large system limit.
inline double free_energy(double E, const ReplicaParams& p) {
  p.validate();
  if (!(E > 0.0)) throw std::invalid_argument("free_energy: E > 0 required");
  const double rho = p.rho, kappa = p.kappa;
  const double sz2 = p.sigma_eff2();
  const double A = E + sz2;
  const double B = kappa + E + sz2;
  const double log_c_half_J = 0.5 * p.J * (std::log(A) - std::log(B));
  const double two_pi = 6.283185307179586476925286766559;

  double F = -0.5 * p.J * kappa * (std::log(two_pi * A) + sz2 / A);
  F += p.J * kappa * (1.0 - rho) / (2.0 * B);
  F += rho * detail::radial_log_term(rho, log_c_half_J, kappa / (2.0 * A), p.J);
  F += (1.0 - rho) *
       detail::radial_log_term(rho, log_c_half_J, kappa / (2.0 * B), p.J);
  return F;
}

struct LocalMax {
  double E = 0.0;
  double F = 0.0;
};

struct FreeEnergyCurve {
  ReplicaParams params;
  std::vector<double> E_grid;
  std::vector<double> F_values;
  std::vector<LocalMax> local_maxima;  // sorted by E
  int region = 0;                      // 1..4
  bool floor_hit = false;  // global maximizer at the search-grid floor
};

namespace detail {

// Golden-section ascent on [lo, hi] for a unimodal bump.
inline LocalMax golden_max(const ReplicaParams& p, double lo, double hi) {
  const double gr = 0.61803398874989484820;
  double a = std::log(lo), b = std::log(hi);
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = free_energy(std::exp(c), p), fd = free_energy(std::exp(d), p);
  for (int it = 0; it < 80 && (b - a) > 1e-12; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = free_energy(std::exp(c), p);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = free_energy(std::exp(d), p);
    }
  }
  LocalMax m;
  m.E = std::exp(0.5 * (a + b));
  m.F = free_energy(m.E, p);
  return m;
}

}  // namespace detail

struct CurveOptions {
  int grid_points = 400;
  double E_floor_factor = 1e-8;  // grid floor = factor * rho
  double E_ceil_factor = 2.0;    // grid ceiling = factor * rho
};

inline FreeEnergyCurve compute_curve(const ReplicaParams& p,
                                     CurveOptions opt = {}) {
  p.validate();
  FreeEnergyCurve c;
  c.params = p;
  c.E_grid = util::logspace_points(opt.E_floor_factor * p.rho,
                                   opt.E_ceil_factor * p.rho, opt.grid_points);
  c.F_values.resize(c.E_grid.size());
  for (std::size_t i = 0; i < c.E_grid.size(); ++i) {
    c.F_values[i] = free_energy(c.E_grid[i], p);
  }
  // Strict interior sign change of the discrete gradient, confirmed on a
  // 3-point neighborhood, then golden-section refinement.
  const std::size_t n = c.E_grid.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const bool rising = c.F_values[i] > c.F_values[i - 1];
    const bool falling = c.F_values[i] > c.F_values[i + 1];
    if (rising && falling) {
      c.local_maxima.push_back(
          detail::golden_max(p, c.E_grid[i - 1], c.E_grid[i + 1]));
    }
  }
  // Grid-edge maxima (monotone approach to the boundary).
  if (n >= 2 && c.F_values[0] > c.F_values[1]) {
    LocalMax m;
    m.E = c.E_grid[0];
    m.F = c.F_values[0];
    c.local_maxima.insert(c.local_maxima.begin(), m);
    c.floor_hit = true;
  }
  if (n >= 2 && c.F_values[n - 1] > c.F_values[n - 2]) {
    LocalMax m;
    m.E = c.E_grid[n - 1];
    m.F = c.F_values[n - 1];
    c.local_maxima.push_back(m);
  }
  // Region classification. Two maxima: 2 if the small-MSE branch wins the
  // global comparison, else 3. One maximum: 1 on the small-MSE branch, 4 on
  // the large-MSE branch, split at the geometric scale sqrt(rho*sigma_eff2).
  if (c.local_maxima.size() >= 2) {
    const LocalMax& d1 = c.local_maxima.front();
    const LocalMax& d2 = c.local_maxima.back();
    c.region = d1.F > d2.F ? 2 : 3;
  } else if (c.local_maxima.size() == 1) {
    const double split =
        std::sqrt(p.rho * std::max(p.sigma_eff2(), 1e-12 * p.rho));
    c.region = c.local_maxima[0].E < split ? 1 : 4;
  } else {
    throw std::runtime_error("replica: no local maximum found in range");
  }
  return c;
}

struct MmseResult {
  double mmse = 0.0;
  FreeEnergyCurve curve;
};

inline MmseResult mmse_from_replica(const ReplicaParams& p,
                                    CurveOptions opt = {}) {
  MmseResult r;
  r.curve = compute_curve(p, opt);
  const LocalMax* best = &r.curve.local_maxima.front();
  for (const auto& m : r.curve.local_maxima) {
    if (m.F > best->F) best = &m;
  }
  r.mmse = best->E;
  return r;
}

// BP converges to the larger-MSE local maximum when two exist.
inline double bp_predicted_mse(const ReplicaParams& p, CurveOptions opt = {}) {
  const FreeEnergyCurve c = compute_curve(p, opt);
  return c.local_maxima.back().E;
}

struct Thresholds {
  double kappa_BP = 0.0;
  double kappa_l = 0.0;
  double kappa_c = 0.0;
};

struct ThresholdOptions {
  double kappa_min = 0.05;
  double kappa_max = 0.45;
  double scan_step = 0.005;
  double bisect_tol = 1e-3;
  CurveOptions curve;
};

struct ResolutionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Region boundaries by bisection on kappa at fixed sigma_z2. Regions must
// appear in the order 4,3,2,1 as kappa increases.
inline Thresholds find_thresholds(double rho, int J, double sigma_z2,
                                  NoiseConvention conv,
                                  ThresholdOptions opt = {}) {
  auto classify = [&](double kappa) {
    ReplicaParams p;
    p.rho = rho;
    p.kappa = kappa;
    p.sigma_z2 = sigma_z2;
    p.J = J;
    p.convention = conv;
    return compute_curve(p, opt.curve).region;
  };
  std::vector<double> ks;
  for (double k = opt.kappa_min; k <= opt.kappa_max + 1e-12;
       k += opt.scan_step) {
    ks.push_back(k);
  }
  std::vector<int> regions(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) regions[i] = classify(ks[i]);
  // Monotonicity in the region sequence (4 -> 3 -> 2 -> 1, some may be absent).
  for (std::size_t i = 1; i < ks.size(); ++i) {
    if (regions[i] > regions[i - 1] &&
        !(regions[i] == 4 && regions[i - 1] == 1)) {
      throw ResolutionError(
          "region classification non-monotone on the kappa grid; refine "
          "scan_step near kappa=" +
          std::to_string(ks[i]));
    }
  }
  auto bisect = [&](int hi_region, int lo_region) -> double {
    // Boundary where classification drops from hi_region to lo_region.
    double a = -1.0, b = -1.0;
    for (std::size_t i = 1; i < ks.size(); ++i) {
      if (regions[i - 1] >= hi_region && regions[i] <= lo_region) {
        a = ks[i - 1];
        b = ks[i];
        break;
      }
    }
    if (a < 0.0) return std::numeric_limits<double>::quiet_NaN();
    while (b - a > opt.bisect_tol) {
      const double mid = 0.5 * (a + b);
      if (classify(mid) >= hi_region) {
        a = mid;
      } else {
        b = mid;
      }
    }
    return 0.5 * (a + b);
  };
  Thresholds th;
  th.kappa_c = bisect(4, 3);
  th.kappa_l = bisect(3, 2);
  th.kappa_BP = bisect(2, 1);
  return th;
}

}  // namespace linv::replica
