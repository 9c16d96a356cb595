#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace linv::quant {

inline double normal_cdf(double t) {
  return 0.5 * std::erfc(-t * 0.70710678118654752440);
}

inline double normal_pdf(double t) {
  return 0.3989422804014326779399461 * std::exp(-0.5 * t * t);
}

// Uniform scalar quantizer with centers offset + k*gamma. Ties go to the
// lower-index center.
inline double quantize(double v, double gamma, double offset) {
  if (!(gamma > 0.0)) return v;
  const double k = std::ceil((v - offset) / gamma - 0.5);
  return offset + k * gamma;
}

struct RateDistortion {
  double rate = 0.0;
  double distortion = 0.0;
};

// Rate (bin-probability entropy, bits) and exact mean squared error of the
// uniform quantizer applied to N(0, sigma2). Per-bin second moments use the
// closed-form Gaussian partial moments.
inline RateDistortion ecsq_rate_distortion(double gamma, double offset,
                                           double sigma2) {
  if (!(sigma2 > 0.0)) return {0.0, 0.0};
  const double sigma = std::sqrt(sigma2);
  if (!(gamma > 0.0) || gamma > 50.0 * sigma + 2.0 * std::abs(offset)) {
    // everything lands in one bin
    return {0.0, sigma2};
  }
  if (gamma < 0.03125 * sigma) {
    // fine-quantization asymptotics: H = h(X) - log2(gamma), D = gamma^2/12;
    // the correction terms are O((gamma/sigma)^2) ~ 1e-4 and shrink further
    RateDistortion out;
    out.rate = 0.5 * std::log2(2.0 * 3.14159265358979323846 *
                               2.71828182845904523536 * sigma2) -
               std::log2(gamma);
    out.distortion = gamma * gamma / 12.0;
    return out;
  }
  const double span = 9.0 * sigma;
  const int k_lo = int(std::floor((-span - offset) / gamma)) - 1;
  const int k_hi = int(std::ceil((span - offset) / gamma)) + 1;
  RateDistortion out;
  for (int k = k_lo; k <= k_hi; ++k) {
    const double c = offset + k * gamma;
    double a = (c - 0.5 * gamma) / sigma;
    double b = (c + 0.5 * gamma) / sigma;
    if (k == k_lo) a = -std::numeric_limits<double>::infinity();
    if (k == k_hi) b = std::numeric_limits<double>::infinity();
    const double pa = std::isinf(a) ? 0.0 : normal_pdf(a);
    const double pb = std::isinf(b) ? 0.0 : normal_pdf(b);
    const double mass = std::isinf(a)
                            ? normal_cdf(b)
                            : (std::isinf(b) ? normal_cdf(-a)
                                             : normal_cdf(b) - normal_cdf(a));
    if (mass <= 0.0) continue;
    // E[(X - c)^2 ; a*sigma < X < b*sigma], X ~ N(0, sigma^2)
    const double second =
        sigma2 * (mass - ((std::isinf(b) ? 0.0 : b * pb) -
                          (std::isinf(a) ? 0.0 : a * pa)));
    const double first = sigma * (pa - pb);
    out.distortion += second - 2.0 * c * first + c * c * mass;
    if (mass > 1e-300) out.rate -= mass * std::log2(mass);
  }
  if (out.rate < 1e-6) return {0.0, sigma2};
  return out;
}

// Shannon rate-distortion bound for a Gaussian source.
inline double rd_gaussian_rate(double var, double D) {
  if (D >= var) return 0.0;
  if (!(D > 0.0)) throw std::invalid_argument("rd_gaussian_rate: D > 0");
  return 0.5 * std::log2(var / D);
}

inline double rd_gaussian_distortion(double var, double rate) {
  if (rate <= 0.0) return var;
  return var * std::exp2(-2.0 * rate);
}

struct EcsqPoint {
  double gamma = std::numeric_limits<double>::infinity();
  double rate = 0.0;
  double distortion = 0.0;
};

// Bin width whose entropy hits rate_target for N(0, sigma2); rate is
// monotone decreasing in gamma, so bisection on log(gamma).
inline EcsqPoint ecsq_for_rate(double sigma2, double rate_target,
                               double offset = 0.0) {
  EcsqPoint p;
  if (!(sigma2 > 0.0)) return p;
  if (rate_target < 1e-6) {
    p.distortion = sigma2;
    return p;
  }
  const double sigma = std::sqrt(sigma2);
  double lo = sigma * std::exp2(-rate_target - 6.0);
  double hi = 30.0 * sigma;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double r = ecsq_rate_distortion(mid, offset, sigma2).rate;
    if (r > rate_target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi / lo < 1.0 + 1e-12) break;
  }
  p.gamma = std::sqrt(lo * hi);
  const RateDistortion rd = ecsq_rate_distortion(p.gamma, offset, sigma2);
  p.rate = rd.rate;
  p.distortion = rd.distortion;
  return p;
}

// Variance of one node's pseudodata about the fused mean: the signal part is
// split 1/P per node and the noise part averages down as 1/P.
inline double node_pseudodata_variance(double var_x, int P, double sigma_t2) {
  return var_x / (double(P) * P) + sigma_t2 / P;
}

// Quantizer-error independence needs bins fine relative to the per-node
// pseudodata spread.
inline bool dither_valid(double gamma, double sigma_t, int P) {
  return gamma < 2.0 * sigma_t / std::sqrt(double(P));
}

}  // namespace linv::quant
