#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "linv/util.hpp"

namespace linv::model {

enum class PriorKind {
  bernoulli_gauss,
  joint_bernoulli_gauss,
  mixture_gauss,
  sparse_laplace,
  markov_support,
};

// Amplitude law for markov_support sources. four_cycle is the switching
// pattern +1,+1,-1,-1,... whose state machine errs with probability
// cycle_error (early or late switch, equally likely).
enum class Amplitude { gauss, constant_one, rademacher, uniform01, four_cycle };

struct SignalPrior {
  PriorKind kind = PriorKind::bernoulli_gauss;
  double rho = 1.0;
  int J = 1;
  // mixture_gauss
  std::vector<double> weights, means, vars;
  // markov_support
  double P01 = 0.0, P10 = 0.0;
  Amplitude amplitude = Amplitude::gauss;
  double cycle_error = 0.0;

  static SignalPrior bernoulli_gauss(double rho) {
    SignalPrior p;
    p.kind = PriorKind::bernoulli_gauss;
    p.rho = rho;
    return p;
  }
  static SignalPrior joint_bernoulli_gauss(double rho, int J) {
    SignalPrior p;
    p.kind = PriorKind::joint_bernoulli_gauss;
    p.rho = rho;
    p.J = J;
    return p;
  }
  static SignalPrior mixture_gauss(std::vector<double> w, std::vector<double> m,
                                   std::vector<double> v) {
    SignalPrior p;
    p.kind = PriorKind::mixture_gauss;
    p.rho = 1.0;
    p.weights = std::move(w);
    p.means = std::move(m);
    p.vars = std::move(v);
    return p;
  }
  static SignalPrior sparse_laplace(double rho) {
    SignalPrior p;
    p.kind = PriorKind::sparse_laplace;
    p.rho = rho;
    return p;
  }
  static SignalPrior markov_support(double P01, double P10, Amplitude amp) {
    SignalPrior p;
    p.kind = PriorKind::markov_support;
    p.P01 = P01;
    p.P10 = P10;
    p.amplitude = amp;
    return p;
  }
  static SignalPrior markov_four_cycle(double err) {
    SignalPrior p;
    p.kind = PriorKind::markov_support;
    p.amplitude = Amplitude::four_cycle;
    p.cycle_error = err;
    p.P01 = 1.0;  // always "active"
    p.P10 = 0.0;
    return p;
  }

  void validate() const {
    if (J < 1) throw std::invalid_argument("prior: J must be >= 1");
    switch (kind) {
      case PriorKind::bernoulli_gauss:
      case PriorKind::joint_bernoulli_gauss:
      case PriorKind::sparse_laplace:
        if (!(rho > 0.0) || rho > 1.0) {
          throw std::invalid_argument("prior: rho must be in (0,1]");
        }
        if (kind == PriorKind::bernoulli_gauss && J != 1) {
          throw std::invalid_argument("prior: bernoulli_gauss is scalar (J=1)");
        }
        break;
      case PriorKind::mixture_gauss: {
        if (weights.empty() || weights.size() != means.size() ||
            weights.size() != vars.size()) {
          throw std::invalid_argument("prior: mixture arrays must align");
        }
        double s = 0.0;
        for (double w : weights) {
          if (w < 0.0) throw std::invalid_argument("prior: negative weight");
          s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) {
          throw std::invalid_argument("prior: mixture weights must sum to 1");
        }
        for (double v : vars) {
          if (v < 0.0) throw std::invalid_argument("prior: negative variance");
        }
        break;
      }
      case PriorKind::markov_support:
        if (amplitude == Amplitude::four_cycle) {
          if (cycle_error < 0.0 || cycle_error >= 1.0) {
            throw std::invalid_argument("prior: cycle_error in [0,1)");
          }
        } else if (!(P01 > 0.0) || !(P10 > 0.0) || P01 > 1.0 || P10 > 1.0) {
          throw std::invalid_argument("prior: P01,P10 must be in (0,1]");
        }
        break;
    }
  }

  double nonzero_fraction() const {
    switch (kind) {
      case PriorKind::bernoulli_gauss:
      case PriorKind::joint_bernoulli_gauss:
      case PriorKind::sparse_laplace:
        return rho;
      case PriorKind::mixture_gauss:
        return 1.0;
      case PriorKind::markov_support:
        if (amplitude == Amplitude::four_cycle) return 1.0;
        return P01 / (P01 + P10);
    }
    return 1.0;
  }

  double amplitude_second_moment() const {
    switch (amplitude) {
      case Amplitude::gauss:
      case Amplitude::constant_one:
      case Amplitude::rademacher:
      case Amplitude::four_cycle:
        return 1.0;
      case Amplitude::uniform01:
        return 1.0 / 3.0;
    }
    return 1.0;
  }

  // E[X^2] per entry.
  double second_moment() const {
    switch (kind) {
      case PriorKind::bernoulli_gauss:
      case PriorKind::joint_bernoulli_gauss:
      case PriorKind::sparse_laplace:
        return rho;
      case PriorKind::mixture_gauss: {
        double s = 0.0;
        for (std::size_t k = 0; k < weights.size(); ++k) {
          s += weights[k] * (means[k] * means[k] + vars[k]);
        }
        return s;
      }
      case PriorKind::markov_support:
        return nonzero_fraction() * amplitude_second_moment();
    }
    return 0.0;
  }
};

struct LinearSystem {
  int N = 0;
  int M = 0;
  int P = 1;
  double sigma_z2 = 0.0;
  std::uint64_t matrix_seed = 1;
  double matrix_scale = 0.0;  // per-entry variance: 1/M or 1/N

  double kappa() const { return double(M) / double(N); }

  void validate() const {
    if (N < 1 || M < 1) throw std::invalid_argument("system: N,M must be >= 1");
    if (P < 1 || M % P != 0) {
      throw std::invalid_argument("system: M must be divisible by P");
    }
    if (sigma_z2 < 0.0) throw std::invalid_argument("system: sigma_z2 >= 0");
    if (!(matrix_scale > 0.0)) {
      throw std::invalid_argument("system: matrix_scale must be > 0");
    }
  }
};

enum class MatrixMode { distinct, shared };  // MMV-1 / MMV-2

struct MmvProblem {
  LinearSystem system;
  int J = 1;
  MatrixMode mode = MatrixMode::distinct;

  void validate() const {
    system.validate();
    if (J < 1) throw std::invalid_argument("mmv: J must be >= 1");
  }
};

namespace detail {
inline double laplace_unit_var(double u) {
  // Inverse CDF of Laplace(0, b) with variance 1 (b = 1/sqrt(2)).
  const double b = 0.70710678118654752440;
  return u < 0.5 ? b * std::log(2.0 * u) : -b * std::log(2.0 * (1.0 - u));
}

inline double draw_amplitude(util::Rng& rng, Amplitude amp) {
  switch (amp) {
    case Amplitude::gauss:
      return rng.normal();
    case Amplitude::constant_one:
      return 1.0;
    case Amplitude::rademacher:
      return rng.uniform() < 0.5 ? -1.0 : 1.0;
    case Amplitude::uniform01:
      return rng.uniform();
    case Amplitude::four_cycle:
      throw std::logic_error("four_cycle handled by the chain generator");
  }
  return 0.0;
}
}  // namespace detail

// N x J signal matrix; deterministic in (prior, N, seed).
inline Eigen::MatrixXd generate_signal(const SignalPrior& prior, int N,
                                       std::uint64_t seed) {
  prior.validate();
  if (N < 1) throw std::invalid_argument("generate_signal: N >= 1");
  util::Rng rng(util::derive_seed(seed, 0xabcde));
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(N, prior.J);
  switch (prior.kind) {
    case PriorKind::bernoulli_gauss:
    case PriorKind::joint_bernoulli_gauss:
      for (int l = 0; l < N; ++l) {
        if (rng.uniform() < prior.rho) {
          for (int j = 0; j < prior.J; ++j) x(l, j) = rng.normal();
        }
      }
      break;
    case PriorKind::mixture_gauss:
      for (int l = 0; l < N; ++l) {
        for (int j = 0; j < prior.J; ++j) {
          double u = rng.uniform(), acc = 0.0;
          std::size_t k = 0;
          for (; k + 1 < prior.weights.size(); ++k) {
            acc += prior.weights[k];
            if (u < acc) break;
          }
          x(l, j) = prior.means[k] + std::sqrt(prior.vars[k]) * rng.normal();
        }
      }
      break;
    case PriorKind::sparse_laplace:
      for (int l = 0; l < N; ++l) {
        for (int j = 0; j < prior.J; ++j) {
          if (rng.uniform() < prior.rho) {
            x(l, j) = detail::laplace_unit_var(rng.uniform());
          }
        }
      }
      break;
    case PriorKind::markov_support: {
      if (prior.amplitude == Amplitude::four_cycle) {
        static const double pattern[4] = {1.0, 1.0, -1.0, -1.0};
        for (int j = 0; j < prior.J; ++j) {
          int state = static_cast<int>(rng.index(4));
          for (int l = 0; l < N; ++l) {
            x(l, j) = pattern[state];
            int step = 1;
            if (rng.uniform() < prior.cycle_error) {
              step = rng.uniform() < 0.5 ? 0 : 2;  // late or early switch
            }
            state = (state + step) % 4;
          }
        }
        break;
      }
      const double stat1 = prior.P01 / (prior.P01 + prior.P10);
      for (int j = 0; j < prior.J; ++j) {
        bool active = rng.uniform() < stat1;
        for (int l = 0; l < N; ++l) {
          if (active) x(l, j) = detail::draw_amplitude(rng, prior.amplitude);
          const double u = rng.uniform();
          active = active ? (u >= prior.P10) : (u < prior.P01);
        }
      }
      break;
    }
  }
  return x;
}

// M x N i.i.d. N(0, matrix_scale) matrix, filled column-major.
inline Eigen::MatrixXd generate_matrix(const LinearSystem& sys,
                                       std::uint64_t seed) {
  sys.validate();
  util::Rng rng(util::derive_seed(seed, 0x3a7c0de));
  Eigen::MatrixXd A(sys.M, sys.N);
  const double s = std::sqrt(sys.matrix_scale);
  for (int l = 0; l < sys.N; ++l) {
    for (int mu = 0; mu < sys.M; ++mu) A(mu, l) = s * rng.normal();
  }
  return A;
}

// Channel j's matrix: distinct mode derives seed+j (channel 0 keeps the base
// seed so a J=1 problem matches the SMV instance); shared mode reuses it.
inline Eigen::MatrixXd channel_matrix(const MmvProblem& prob, int j) {
  const std::uint64_t seed = prob.mode == MatrixMode::distinct
                                 ? prob.system.matrix_seed + std::uint64_t(j)
                                 : prob.system.matrix_seed;
  return generate_matrix(prob.system, seed);
}

// y^(j) = A^(j) x^(j) + z^(j); M x J.
inline Eigen::MatrixXd measure(const MmvProblem& prob,
                               const Eigen::MatrixXd& signal,
                               std::uint64_t noise_seed) {
  prob.validate();
  if (signal.rows() != prob.system.N || signal.cols() != prob.J) {
    throw std::invalid_argument("measure: signal shape mismatch");
  }
  Eigen::MatrixXd y(prob.system.M, prob.J);
  const double sz = std::sqrt(prob.system.sigma_z2);
  for (int j = 0; j < prob.J; ++j) {
    const Eigen::MatrixXd A = channel_matrix(prob, j);
    y.col(j) = A * signal.col(j);
    util::Rng rng(util::derive_seed(noise_seed, 0x90125 + std::uint64_t(j)));
    for (int mu = 0; mu < prob.system.M; ++mu) y(mu, j) += sz * rng.normal();
  }
  return y;
}

struct StackedSmv {
  Eigen::MatrixXd A;  // MJ x NJ
  Eigen::VectorXd x;  // NJ
  Eigen::VectorXd y;  // MJ
};

// Super-symbol stacking: x_{(l-1)J+j} = x_l^(j), block-diagonal-by-channel
// matrix placement A_{(j-1)M+mu,(l-1)J+j} = A^(j)_{mu,l}.
inline StackedSmv mmv_to_smv(const MmvProblem& prob,
                             const Eigen::MatrixXd& signals,
                             const Eigen::MatrixXd& measurements) {
  prob.validate();
  const int N = prob.system.N, M = prob.system.M, J = prob.J;
  if (signals.rows() != N || signals.cols() != J || measurements.rows() != M ||
      measurements.cols() != J) {
    throw std::invalid_argument("mmv_to_smv: shape mismatch");
  }
  StackedSmv s;
  s.A = Eigen::MatrixXd::Zero(M * J, N * J);
  s.x.resize(N * J);
  s.y.resize(M * J);
  for (int j = 0; j < J; ++j) {
    const Eigen::MatrixXd A = channel_matrix(prob, j);
    for (int l = 0; l < N; ++l) {
      s.x(l * J + j) = signals(l, j);
      for (int mu = 0; mu < M; ++mu) s.A(j * M + mu, l * J + j) = A(mu, l);
    }
    s.y.segment(j * M, M) = measurements.col(j);
  }
  return s;
}

struct ComplexAsMmv {
  // real kind: two channels over the shared real matrix.
  Eigen::MatrixXd A;  // M x N
  Eigen::MatrixXd y;  // M x 2, columns (Re y, Im y)
};

struct ComplexAsStacked {
  // complex kind: 2M x 2N real system with interleaved super-symbol columns
  // (x_re_l, x_im_l); row mu+M equals row mu right-multiplied by T = [0 1; -1 0]
  // within each column pair.
  Eigen::MatrixXd A;  // 2M x 2N
  Eigen::VectorXd y;  // 2M
};

inline ComplexAsMmv complex_to_mmv_real(const Eigen::MatrixXcd& A,
                                        const Eigen::VectorXcd& y) {
  if (A.imag().cwiseAbs().maxCoeff() != 0.0) {
    throw std::invalid_argument(
        "complex_to_mmv: real kind requires a real matrix");
  }
  if (y.size() != A.rows()) {
    throw std::invalid_argument("complex_to_mmv: y length mismatch");
  }
  ComplexAsMmv out;
  out.A = A.real();
  out.y.resize(A.rows(), 2);
  out.y.col(0) = y.real();
  out.y.col(1) = y.imag();
  return out;
}

inline ComplexAsStacked complex_to_stacked(const Eigen::MatrixXcd& A,
                                           const Eigen::VectorXcd& y) {
  if (y.size() != A.rows()) {
    throw std::invalid_argument("complex_to_stacked: y length mismatch");
  }
  const int M = static_cast<int>(A.rows()), N = static_cast<int>(A.cols());
  ComplexAsStacked out;
  out.A.resize(2 * M, 2 * N);
  out.y.resize(2 * M);
  for (int l = 0; l < N; ++l) {
    out.A.block(0, 2 * l, M, 1) = A.real().col(l);
    out.A.block(0, 2 * l + 1, M, 1) = -A.imag().col(l);
    out.A.block(M, 2 * l, M, 1) = A.imag().col(l);
    out.A.block(M, 2 * l + 1, M, 1) = A.real().col(l);
  }
  out.y.head(M) = y.real();
  out.y.tail(M) = y.imag();
  return out;
}

// Interleave a complex vector into the stacked real layout (Re, Im pairs).
inline Eigen::VectorXd interleave_complex(const Eigen::VectorXcd& x) {
  Eigen::VectorXd out(2 * x.size());
  for (int l = 0; l < x.size(); ++l) {
    out(2 * l) = x(l).real();
    out(2 * l + 1) = x(l).imag();
  }
  return out;
}

}  // namespace linv::model
