// linv: command line front end for the library. Subcommands cover scalar
// state evolution, AMP and MMV-AMP simulation, replica free-energy analysis,
// multi-processor AMP with quantized messages, rate-schedule optimization,
// Pareto sweeps, alphabet-learning MCMC estimation, and the fusion
// independence diagnostic. Every output CSV embeds the resolved
// configuration, so a run record is self-describing.

#include <CLI11.hpp>

#include <linv/amp.hpp>
#include <linv/config.hpp>
#include <linv/csv.hpp>
#include <linv/denoise.hpp>
#include <linv/model.hpp>
#include <linv/mpamp.hpp>
#include <linv/quant.hpp>
#include <linv/replica.hpp>
#include <linv/schedule.hpp>
#include <linv/umcmc.hpp>
#include <linv/util.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace {

namespace cfg = linv::config;
namespace csvio = linv::csv;
namespace model = linv::model;
namespace denoise = linv::denoise;
namespace amp = linv::amp;
namespace replica = linv::replica;
namespace mpamp = linv::mpamp;
namespace schedule = linv::schedule;
namespace umcmc = linv::umcmc;
namespace util = linv::util;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;       // unexpected failure
constexpr int kExitValidation = 2;  // bad config, bad preset, unknown keys
constexpr int kExitInfeasible = 3;  // target unreachable / unresolved regions
constexpr int kExitDiverged = 4;    // iterative reconstruction diverged

// seed streams, one per random object family
constexpr std::uint64_t kStreamMatrix = 0xA000;
constexpr std::uint64_t kStreamSignal = 0xB000;
constexpr std::uint64_t kStreamNoise = 0xC000;
constexpr std::uint64_t kStreamChain = 0xCC00;
constexpr std::uint64_t kStreamDither = 0xD000;
constexpr std::uint64_t kStreamDiag = 0xE000;

// ------------------------------------------------------------ presets

const std::map<std::string, std::string>& preset_table() {
  static const std::map<std::string, std::string> t = {
      {"sensor-net", R"(# low-power sensor network: slow radio, slow CPU
[system]
n = 1000
m = 400
p = 100
sigma_z2 = 0.0025
scale = m
[prior]
kind = bernoulli_gauss
rho = 0.1
[dp]
c4 = 0.0025
c5 = 0.008
target_db = 0.5
model = gaussian_rd
)"},
      {"cloud", R"(# cloud cluster: fast network, large problem
[system]
n = 50000
m = 20000
p = 100
sigma_z2 = 0.0025
scale = m
[prior]
kind = bernoulli_gauss
rho = 0.1
[dp]
b = 2.2222222222222223
target_db = 0.5
model = gaussian_rd
)"},
      {"gpu", R"(# gpu cluster: same problem as the cloud case, much cheaper compute
[system]
n = 50000
m = 20000
p = 100
sigma_z2 = 0.0025
scale = m
[prior]
kind = bernoulli_gauss
rho = 0.1
[dp]
b = 0.022222222222222223
target_db = 0.5
model = gaussian_rd
)"},
      {"fig4-1", R"(# reference rate-schedule setting
[system]
kappa = 0.4
p = 100
sigma_z2 = 0.0025
[prior]
kind = bernoulli_gauss
rho = 0.1
[dp]
b = 2
delta = 5e-5
rate_step = 0.05
model = ecsq
)"},
      {"fig3-5", R"(# multi-measurement phase map and a mid-grid simulation cell
[system]
n = 5000
m = 1000
sigma_z2 = 3.1622776601683794e-04
scale = n
[prior]
kind = bernoulli_gauss
rho = 0.1
j = 3
[mmv]
mode = distinct
trials = 50
t_max = 30
[replica]
convention = n
[phase]
kappa_min = 0.11
kappa_max = 0.24
kappa_step = 0.01
sigma_db_min = -50
sigma_db_max = -20
sigma_db_step = 5
)"},
      {"mcmc-bernoulli", R"(# sparse on/off source
[system]
n = 10000
m = 5000
snr_db = 10
[prior]
kind = markov_support
p01 = 0.03
p10 = 0.97
amplitude = one
[mcmc]
seeds = 5
)"},
      {"mcmc-mrad", R"(# bursty two-sided source
[system]
n = 10000
m = 8000
snr_db = 15
[prior]
kind = markov_support
p01 = 0.042857142857142858
p10 = 0.1
amplitude = rademacher
[mcmc]
seeds = 5
)"},
      {"mcmc-munif", R"(# bursty continuous-amplitude source
[system]
n = 10000
m = 4000
snr_db = 10
[prior]
kind = markov_support
p01 = 0.0030927835051546392
p10 = 0.1
amplitude = uniform01
[mcmc]
seeds = 5
)"},
      {"mcmc-laplace", R"(# sparse heavy-tailed source
[system]
n = 10000
m = 5000
snr_db = 10
[prior]
kind = sparse_laplace
rho = 0.03
[mcmc]
seeds = 5
)"},
      {"mcmc-markov4", R"(# dense patterned source with transition errors
[system]
n = 10000
m = 3000
snr_db = 10
[prior]
kind = markov_four_cycle
cycle_error = 0.03
[mcmc]
seeds = 5
)"},
  };
  return t;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> k = {
      "run.seed", "run.jobs", "run.out_dir",
      "system.n", "system.m", "system.p", "system.kappa", "system.sigma_z2",
      "system.snr_db", "system.scale",
      "prior.kind", "prior.rho", "prior.j", "prior.p01", "prior.p10",
      "prior.amplitude", "prior.cycle_error", "prior.weights", "prior.means",
      "prior.vars",
      "mse.samples", "mse.seed",
      "se.t",
      "amp.t_max", "amp.eps", "amp.rule", "amp.trials",
      "mmv.mode", "mmv.trials", "mmv.t_max", "mmv.eps",
      "replica.grid_points", "replica.convention",
      "phase.kappa_min", "phase.kappa_max", "phase.kappa_step",
      "phase.sigma_db_min", "phase.sigma_db_max", "phase.sigma_db_step",
      "mpamp.rates", "mpamp.rate", "mpamp.t", "mpamp.model", "mpamp.trials",
      "dp.b", "dp.c4", "dp.c5", "dp.delta", "dp.target_db",
      "dp.sigma_step_db", "dp.rate_step", "dp.t_max", "dp.model",
      "pareto.b_list", "pareto.delta_list",
      "growth.tail",
      "mcmc.seeds", "mcmc.max_super", "mcmc.c", "mcmc.q", "mcmc.dq_quantile",
      "mcmc.z_init",
      "diag.sigma_node", "diag.gamma_list", "diag.trials", "diag.p",
      "diag.samples", "diag.rho",
  };
  return k;
}

// ------------------------------------------------------------ config helpers

struct Run {
  cfg::Config c;
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
  int jobs = 1;
};

model::SignalPrior prior_from(const cfg::Config& c) {
  const std::string kind = c.get_string("prior.kind", "bernoulli_gauss");
  const int J = int(c.get_int("prior.j", 1));
  if (kind == "bernoulli_gauss") {
    const double rho = c.get_double("prior.rho", 0.1);
    return J > 1 ? model::SignalPrior::joint_bernoulli_gauss(rho, J)
                 : model::SignalPrior::bernoulli_gauss(rho);
  }
  if (kind == "sparse_laplace") {
    return model::SignalPrior::sparse_laplace(c.get_double("prior.rho", 0.1));
  }
  if (kind == "mixture_gauss") {
    return model::SignalPrior::mixture_gauss(c.get_doubles("prior.weights"),
                                             c.get_doubles("prior.means"),
                                             c.get_doubles("prior.vars"));
  }
  if (kind == "markov_support") {
    const std::string a = c.get_string("prior.amplitude", "gauss");
    model::Amplitude amp;
    if (a == "gauss") {
      amp = model::Amplitude::gauss;
    } else if (a == "one") {
      amp = model::Amplitude::constant_one;
    } else if (a == "rademacher") {
      amp = model::Amplitude::rademacher;
    } else if (a == "uniform01") {
      amp = model::Amplitude::uniform01;
    } else {
      throw cfg::ParseError("prior.amplitude: unknown value '" + a + "'");
    }
    return model::SignalPrior::markov_support(c.get_double("prior.p01"),
                                              c.get_double("prior.p10"), amp);
  }
  if (kind == "markov_four_cycle") {
    return model::SignalPrior::markov_four_cycle(
        c.get_double("prior.cycle_error", 0.0));
  }
  throw cfg::ParseError("prior.kind: unknown value '" + kind + "'");
}

// sigma_z2 directly, or derived from an SNR target for the measured energy
double sigma_z2_from(const cfg::Config& c, const model::SignalPrior& prior) {
  if (c.has("system.sigma_z2")) return c.get_double("system.sigma_z2");
  if (c.has("system.snr_db")) {
    const double snr = util::from_db(c.get_double("system.snr_db"));
    const double N = double(c.get_int("system.n"));
    const double M = double(c.get_int("system.m"));
    return N * prior.second_moment() / (M * snr);
  }
  throw cfg::ParseError("need system.sigma_z2 or system.snr_db");
}

model::LinearSystem system_from(const cfg::Config& c,
                                const model::SignalPrior& prior,
                                const char* default_scale) {
  model::LinearSystem sys;
  sys.N = int(c.get_int("system.n"));
  sys.M = int(c.get_int("system.m"));
  sys.P = int(c.get_int("system.p", 1));
  sys.sigma_z2 = sigma_z2_from(c, prior);
  const std::string sc = c.get_string("system.scale", default_scale);
  if (sc == "m") {
    sys.matrix_scale = 1.0 / sys.M;
  } else if (sc == "n") {
    sys.matrix_scale = 1.0 / sys.N;
  } else {
    throw cfg::ParseError("system.scale: expected 'm' or 'n'");
  }
  return sys;
}

double kappa_from(const cfg::Config& c) {
  if (c.has("system.kappa")) return c.get_double("system.kappa");
  return double(c.get_int("system.m")) / double(c.get_int("system.n"));
}

denoise::MseCurve mse_curve_from(const cfg::Config& c,
                                 const model::SignalPrior& prior) {
  const auto samples = std::size_t(c.get_int("mse.samples", 200000));
  const auto seed = std::uint64_t(c.get_int("mse.seed", 77));
  return denoise::MseCurve(denoise::ScalarPrior::from_model(prior), samples,
                           seed);
}

mpamp::RateModel rate_model_from(const cfg::Config& c, const std::string& key) {
  const std::string m = c.get_string(key, "ecsq");
  if (m == "ecsq") return mpamp::RateModel::ecsq;
  if (m == "gaussian_rd") return mpamp::RateModel::gaussian_rd;
  throw cfg::ParseError(key + ": expected 'ecsq' or 'gaussian_rd'");
}

void stamp(csvio::Table& t, const std::string& subcmd, const Run& run) {
  t.comment("linv " + subcmd);
  t.comment("seed streams: matrix=0xA000+trial signal=0xB000+trial "
            "noise=0xC000+trial chain=0xCC00+chain dither=0xD000+trial "
            "diag=0xE000+index, each derived from run.seed");
  for (const std::string& line : run.c.resolved_lines()) t.comment(line);
}

void write_out(csvio::Table& t, const Run& run, const std::string& name) {
  std::filesystem::create_directories(run.out_dir);
  t.write((run.out_dir / name).string());
  std::printf("wrote %s\n", (run.out_dir / name).string().c_str());
}

std::string join_levels(const std::vector<double>& levels) {
  std::string s;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i) s += ';';
    s += csvio::format_double(levels[i]);
  }
  return s;
}

// per-iteration mean over trials of possibly ragged trajectories
std::vector<double> ragged_mean(const std::vector<std::vector<double>>& rows,
                                std::size_t T) {
  std::vector<double> mean(T, 0.0);
  std::vector<int> count(T, 0);
  for (const auto& r : rows) {
    for (std::size_t t = 0; t < r.size() && t < T; ++t) {
      mean[t] += r[t];
      ++count[t];
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    mean[t] = count[t] ? mean[t] / count[t]
                       : std::numeric_limits<double>::quiet_NaN();
  }
  return mean;
}

// ------------------------------------------------------------ subcommands

int cmd_se(const Run& run) {
  const model::SignalPrior prior = prior_from(run.c);
  const double kappa = kappa_from(run.c);
  const double sigma_z2 = sigma_z2_from(run.c, prior);
  const int T = int(run.c.get_int("se.t", 30));
  const denoise::MseCurve mse = mse_curve_from(run.c, prior);
  const auto states = amp::state_evolution(mse, kappa, sigma_z2, T);
  const amp::FixedPoint fp = amp::se_fixed_point(mse, kappa, sigma_z2);

  csvio::Table t("se-trajectory-v1", {"t", "sigma_t2", "predicted_mse"});
  stamp(t, "se", run);
  t.comment("fixed point: sigma_inf2=" + csvio::format_double(fp.sigma_inf2) +
            " mmse=" + csvio::format_double(fp.mmse) +
            " converged=" + std::to_string(int(fp.converged)));
  for (const auto& s : states) {
    t.row().cell(s.t).cell(s.sigma_t2).cell(s.predicted_mse);
  }
  write_out(t, run, "se.csv");
  return kExitOk;
}

int cmd_amp(const Run& run) {
  const model::SignalPrior prior = prior_from(run.c);
  model::LinearSystem sys = system_from(run.c, prior, "m");
  const denoise::ScalarPrior sp = denoise::ScalarPrior::from_model(prior);
  const int T = int(run.c.get_int("amp.t_max", 30));
  const double eps = run.c.get_double("amp.eps", 0.0);
  const int trials = int(run.c.get_int("amp.trials", 1));
  const std::string rule = run.c.get_string("amp.rule", "empirical");

  const denoise::MseCurve mse = mse_curve_from(run.c, prior);
  const auto states = amp::state_evolution(mse, sys.kappa(), sys.sigma_z2, T);

  amp::AmpOptions opt;
  opt.T_max = T;
  opt.eps = eps;
  opt.throw_on_divergence = true;
  if (rule == "empirical") {
    opt.rule = amp::VarianceRule::empirical;
  } else if (rule == "theta") {
    opt.rule = amp::VarianceRule::theta;
  } else if (rule == "se") {
    opt.rule = amp::VarianceRule::se;
    opt.se_states = &states;
  } else {
    throw cfg::ParseError("amp.rule: expected empirical, theta, or se");
  }

  std::vector<std::vector<double>> mses(trials), shat(trials);
  util::parallel_for(std::size_t(trials), run.jobs, [&](std::size_t i) {
    model::LinearSystem s = sys;
    s.matrix_seed = util::derive_seed(run.seed, kStreamMatrix + i);
    const Eigen::MatrixXd A = model::generate_matrix(s, s.matrix_seed);
    const Eigen::MatrixXd x0 = model::generate_signal(
        prior, s.N, util::derive_seed(run.seed, kStreamSignal + i));
    const Eigen::VectorXd x = x0.col(0);
    Eigen::VectorXd y = A * x;
    util::Rng rng(util::derive_seed(run.seed, kStreamNoise + i));
    const double sz = std::sqrt(s.sigma_z2);
    for (int mu = 0; mu < s.M; ++mu) y[mu] += sz * rng.normal();
    const amp::AmpRunReport rep = amp::run_amp(A, y, sp, s.sigma_z2, &x, opt);
    mses[i] = rep.mse;
    shat[i] = rep.sigma_hat2;
  });

  const auto mse_mean = ragged_mean(mses, std::size_t(T));
  const auto shat_mean = ragged_mean(shat, std::size_t(T));
  csvio::Table t("amp-trajectory-v1",
                 {"t", "se_sigma_t2", "se_mse", "amp_mse_mean",
                  "amp_sigma_hat2_mean"});
  stamp(t, "amp", run);
  t.comment("trials=" + std::to_string(trials));
  for (int i = 0; i < T; ++i) {
    t.row()
        .cell(states[i].t)
        .cell(states[i].sigma_t2)
        .cell(states[i].predicted_mse)
        .cell(mse_mean[std::size_t(i)])
        .cell(shat_mean[std::size_t(i)]);
  }
  write_out(t, run, "amp.csv");
  return kExitOk;
}

int cmd_mmv_amp(const Run& run) {
  const model::SignalPrior prior = prior_from(run.c);
  model::LinearSystem sys = system_from(run.c, prior, "n");
  const int J = int(run.c.get_int("prior.j", 1));
  const std::string mode = run.c.get_string("mmv.mode", "distinct");
  const int T = int(run.c.get_int("mmv.t_max", 30));
  const double eps = run.c.get_double("mmv.eps", 0.0);
  const int trials = int(run.c.get_int("mmv.trials", 1));
  const double rho = run.c.get_double("prior.rho", 0.1);

  model::MmvProblem prob;
  prob.system = sys;
  prob.J = J;
  prob.mode = mode == "shared" ? model::MatrixMode::shared
                               : model::MatrixMode::distinct;

  std::vector<std::vector<double>> mses(trials);
  util::parallel_for(std::size_t(trials), run.jobs, [&](std::size_t i) {
    model::MmvProblem p = prob;
    p.system.matrix_seed = util::derive_seed(run.seed, kStreamMatrix + i);
    const Eigen::MatrixXd x = model::generate_signal(
        prior, p.system.N, util::derive_seed(run.seed, kStreamSignal + i));
    const Eigen::MatrixXd y =
        model::measure(p, x, util::derive_seed(run.seed, kStreamNoise + i));
    const amp::AmpRunReport rep =
        amp::run_mmv_amp(p, y, rho, T, eps, &x, true);
    mses[i] = rep.mse;
  });

  replica::ReplicaParams rp;
  rp.rho = rho;
  rp.kappa = sys.kappa();
  rp.sigma_z2 = sys.sigma_z2;
  rp.J = J;
  rp.convention = run.c.get_string("replica.convention", "n") == "m"
                      ? replica::NoiseConvention::one_over_M
                      : replica::NoiseConvention::one_over_N;
  const double bp = replica::bp_predicted_mse(rp);
  const double mmse = replica::mmse_from_replica(rp).mmse;

  std::size_t T_rec = 0;
  for (const auto& r : mses) T_rec = std::max(T_rec, r.size());
  const auto mse_mean = ragged_mean(mses, T_rec);
  csvio::Table t("mmv-amp-trajectory-v1", {"t", "mse_mean", "bp_mse"});
  stamp(t, "mmv-amp", run);
  t.comment("trials=" + std::to_string(trials));
  t.comment("replica mmse=" + csvio::format_double(mmse));
  for (int i = 0; i < int(T_rec); ++i) {
    t.row().cell(i + 1).cell(mse_mean[std::size_t(i)]).cell(bp);
  }
  write_out(t, run, "mmv_amp.csv");
  return kExitOk;
}

int cmd_replica(const Run& run) {
  replica::ReplicaParams p;
  p.rho = run.c.get_double("prior.rho", 0.1);
  p.kappa = kappa_from(run.c);
  p.sigma_z2 = run.c.get_double("system.sigma_z2");
  p.J = int(run.c.get_int("prior.j", 1));
  p.convention = run.c.get_string("replica.convention", "n") == "m"
                     ? replica::NoiseConvention::one_over_M
                     : replica::NoiseConvention::one_over_N;
  replica::CurveOptions opt;
  opt.grid_points = int(run.c.get_int("replica.grid_points", 400));
  const replica::FreeEnergyCurve curve = replica::compute_curve(p, opt);

  // a grid point is flagged when it is the nearest neighbor of a refined max
  std::vector<int> is_max(curve.E_grid.size(), 0);
  for (const auto& lm : curve.local_maxima) {
    std::size_t best = 0;
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < curve.E_grid.size(); ++i) {
      const double di = std::abs(curve.E_grid[i] - lm.E);
      if (di < d) {
        d = di;
        best = i;
      }
    }
    is_max[best] = 1;
  }

  csvio::Table t("replica-free-energy-v1", {"E", "F", "is_local_max"});
  stamp(t, "replica", run);
  t.comment("region=" + std::to_string(curve.region));
  t.comment("mmse=" + csvio::format_double(replica::mmse_from_replica(p, opt).mmse));
  t.comment("bp_mse=" +
            csvio::format_double(replica::bp_predicted_mse(p, opt)));
  t.comment("floor_hit=" + std::to_string(int(curve.floor_hit)));
  for (const auto& lm : curve.local_maxima) {
    t.comment("local_max E=" + csvio::format_double(lm.E) +
              " F=" + csvio::format_double(lm.F));
  }
  for (std::size_t i = 0; i < curve.E_grid.size(); ++i) {
    t.row().cell(curve.E_grid[i]).cell(curve.F_values[i]).cell(is_max[i]);
  }
  write_out(t, run, "replica.csv");
  return kExitOk;
}

int cmd_phase_diagram(const Run& run) {
  const double rho = run.c.get_double("prior.rho", 0.1);
  const int J = int(run.c.get_int("prior.j", 3));
  const auto conv = run.c.get_string("replica.convention", "n") == "m"
                        ? replica::NoiseConvention::one_over_M
                        : replica::NoiseConvention::one_over_N;
  const double k_min = run.c.get_double("phase.kappa_min", 0.11);
  const double k_max = run.c.get_double("phase.kappa_max", 0.24);
  const double k_step = run.c.get_double("phase.kappa_step", 0.01);
  const double s_min = run.c.get_double("phase.sigma_db_min", -50.0);
  const double s_max = run.c.get_double("phase.sigma_db_max", -20.0);
  const double s_step = run.c.get_double("phase.sigma_db_step", 5.0);

  std::vector<double> kappas, sigmas_db;
  for (double k = k_min; k <= k_max + 1e-12; k += k_step) kappas.push_back(k);
  for (double s = s_min; s <= s_max + 1e-12; s += s_step) {
    sigmas_db.push_back(s);
  }

  struct Cell {
    int region = 0;
    double mmse = 0.0;
  };
  std::vector<std::vector<Cell>> grid(sigmas_db.size());
  std::vector<replica::Thresholds> ths(sigmas_db.size());
  util::parallel_for(sigmas_db.size(), run.jobs, [&](std::size_t si) {
    const double sigma_z2 = util::from_db(sigmas_db[si]);
    grid[si].resize(kappas.size());
    for (std::size_t ki = 0; ki < kappas.size(); ++ki) {
      replica::ReplicaParams p;
      p.rho = rho;
      p.kappa = kappas[ki];
      p.sigma_z2 = sigma_z2;
      p.J = J;
      p.convention = conv;
      const replica::FreeEnergyCurve c = replica::compute_curve(p);
      grid[si][ki].region = c.region;
      grid[si][ki].mmse = replica::mmse_from_replica(p).mmse;
    }
    replica::ThresholdOptions topt;
    topt.kappa_min = std::max(0.02, k_min - 0.05);
    topt.kappa_max = std::min(0.49, k_max + 0.1);
    ths[si] = replica::find_thresholds(rho, J, sigma_z2, conv, topt);
  });

  csvio::Table tg("phase-grid-v1", {"sigma_z2_db", "kappa", "region", "mmse"});
  stamp(tg, "phase-diagram", run);
  for (std::size_t si = 0; si < sigmas_db.size(); ++si) {
    for (std::size_t ki = 0; ki < kappas.size(); ++ki) {
      tg.row()
          .cell(sigmas_db[si])
          .cell(kappas[ki])
          .cell(grid[si][ki].region)
          .cell(grid[si][ki].mmse);
    }
  }
  csvio::Table tt("phase-thresholds-v1",
                  {"sigma_z2_db", "kappa_bp", "kappa_l", "kappa_c"});
  stamp(tt, "phase-diagram", run);
  for (std::size_t si = 0; si < sigmas_db.size(); ++si) {
    tt.row()
        .cell(sigmas_db[si])
        .cell(ths[si].kappa_BP)
        .cell(ths[si].kappa_l)
        .cell(ths[si].kappa_c);
  }
  write_out(tg, run, "phase_grid.csv");
  write_out(tt, run, "phase_thresholds.csv");
  return kExitOk;
}

std::vector<double> rates_from(const cfg::Config& c) {
  if (c.has("mpamp.rates")) return c.get_doubles("mpamp.rates");
  const int T = int(c.get_int("mpamp.t", 10));
  const double r = c.get_double("mpamp.rate", 2.0);
  return std::vector<double>(std::size_t(T), r);
}

int cmd_mpamp(const Run& run) {
  const model::SignalPrior prior = prior_from(run.c);
  model::LinearSystem sys = system_from(run.c, prior, "m");
  const denoise::ScalarPrior sp = denoise::ScalarPrior::from_model(prior);
  const int trials = int(run.c.get_int("mpamp.trials", 1));
  const std::string model_name = run.c.get_string("mpamp.model", "ecsq");

  mpamp::MpAmpOptions opt;
  opt.P = sys.P;
  opt.rates = rates_from(run.c);
  opt.lossless = model_name == "lossless";
  if (!opt.lossless) {
    opt.rd = mpamp::RateDistortionModel(rate_model_from(run.c, "mpamp.model"));
  }
  opt.throw_on_divergence = true;
  const std::size_t T = opt.rates.size();

  const denoise::MseCurve mse = mse_curve_from(run.c, prior);
  const mpamp::LossySeResult se = mpamp::lossy_se(
      mse, sys.kappa(), sys.sigma_z2, sys.P, opt.rates,
      opt.lossless ? mpamp::RateDistortionModel() : opt.rd);

  std::vector<std::vector<double>> mses(trials), semp(trials), demp(trials);
  util::parallel_for(std::size_t(trials), run.jobs, [&](std::size_t i) {
    model::LinearSystem s = sys;
    s.matrix_seed = util::derive_seed(run.seed, kStreamMatrix + i);
    const Eigen::MatrixXd A = model::generate_matrix(s, s.matrix_seed);
    const Eigen::VectorXd x =
        model::generate_signal(prior, s.N,
                               util::derive_seed(run.seed, kStreamSignal + i))
            .col(0);
    Eigen::VectorXd y = A * x;
    util::Rng rng(util::derive_seed(run.seed, kStreamNoise + i));
    const double sz = std::sqrt(s.sigma_z2);
    for (int mu = 0; mu < s.M; ++mu) y[mu] += sz * rng.normal();
    mpamp::MpAmpOptions o = opt;
    o.dither_seed = util::derive_seed(run.seed, kStreamDither + i);
    const mpamp::MpAmpReport rep =
        mpamp::run_mp_amp(A, y, sp, s.sigma_z2, &x, o);
    for (const auto& it : rep.iters) {
      mses[i].push_back(it.mse);
      semp[i].push_back(it.sigma_hat2);
      demp[i].push_back(it.D_empirical);
    }
  });

  const auto mse_mean = ragged_mean(mses, T);
  const auto shat_mean = ragged_mean(semp, T);
  const auto demp_mean = ragged_mean(demp, T);
  csvio::Table t("mpamp-trajectory-v1",
                 {"t", "rate", "gamma", "d_model", "d_emp_mean",
                  "sigma_hat2_mean", "se_mse", "mse_mean", "gamma_valid"});
  stamp(t, "mpamp", run);
  t.comment("trials=" + std::to_string(trials));
  t.comment("se final_mse=" + csvio::format_double(se.final_mse));
  for (std::size_t i = 0; i < T && i < se.iters.size(); ++i) {
    const auto& si = se.iters[i];
    t.row()
        .cell(si.t)
        .cell(si.rate)
        .cell(si.gamma)
        .cell(si.D)
        .cell(demp_mean[i])
        .cell(shat_mean[i])
        .cell(si.mse)
        .cell(mse_mean[i])
        .cell(int(si.gamma_valid));
  }
  write_out(t, run, "mpamp.csv");
  return kExitOk;
}

// shared by dp, pareto, growth: SE floor, grid build, cost parameters
struct DpSetup {
  denoise::MseCurve mse;
  double kappa;
  double sigma_z2;
  int P;
  schedule::CostParams cp;
  schedule::DpOptions opt;
  double mmse;
  double delta;
};

DpSetup dp_setup(const Run& run) {
  const model::SignalPrior prior = prior_from(run.c);
  const double kappa = kappa_from(run.c);
  const double sigma_z2 = sigma_z2_from(run.c, prior);
  const int P = int(run.c.get_int("system.p", 100));

  schedule::CostParams cp;
  if (run.c.has("dp.b")) {
    cp.b = run.c.get_double("dp.b");
  } else {
    cp = schedule::CostParams::from_platform(run.c.get_double("dp.c4"),
                                             run.c.get_double("dp.c5"));
  }

  schedule::DpOptions opt;
  opt.sigma_step_db = run.c.get_double("dp.sigma_step_db", 0.01);
  opt.rate_step = run.c.get_double("dp.rate_step", 0.1);
  opt.T_max = int(run.c.get_int("dp.t_max", 64));
  opt.model = rate_model_from(run.c, "dp.model");
  opt.enforce_gamma_validity = opt.model == mpamp::RateModel::ecsq;

  denoise::MseCurve mse = mse_curve_from(run.c, prior);
  const amp::FixedPoint fp = amp::se_fixed_point(mse, kappa, sigma_z2);
  const double lo = fp.sigma_inf2;
  const double hi = sigma_z2 + mse.second_moment() / kappa;
  const double varx = mse.prior().variance();
  mse.build_grid(lo * 0.98, (2.0 * hi + varx / P) * 1.02, opt.sigma_step_db,
                 1);
  const double mmse = amp::se_fixed_point(mse, kappa, sigma_z2).mmse;
  opt.mmse_baseline = mmse;

  double delta;
  if (run.c.has("dp.delta")) {
    delta = run.c.get_double("dp.delta");
  } else if (run.c.has("dp.target_db")) {
    delta = mmse * (util::from_db(run.c.get_double("dp.target_db")) - 1.0);
  } else {
    throw cfg::ParseError("need dp.delta or dp.target_db");
  }
  return DpSetup{std::move(mse), kappa, sigma_z2, P, cp, opt, mmse, delta};
}

void schedule_rows(csvio::Table& t, const schedule::DpResult& r) {
  t.comment("T=" + std::to_string(r.schedule.T()) +
            " R_agg=" + csvio::format_double(r.schedule.R_agg()) +
            " total_cost=" + csvio::format_double(r.total_cost));
  t.comment("mmse=" + csvio::format_double(r.mmse) +
            " target_mse=" + csvio::format_double(r.target_mse) +
            " monotone=" + std::to_string(int(r.monotone)));
  for (const auto& it : r.replay.iters) {
    t.row()
        .cell(it.t)
        .cell(it.rate)
        .cell(it.sigma_t2)
        .cell(it.D)
        .cell(it.mse);
  }
}

int cmd_dp(const Run& run) {
  const DpSetup s = dp_setup(run);
  const schedule::DpResult r = schedule::dp_schedule(
      s.mse, s.kappa, s.sigma_z2, s.P, s.delta, s.cp, s.opt);
  csvio::Table t("rate-schedule-v1",
                 {"t", "R_t", "sigma_t2", "D_t", "EMSE_t"});
  stamp(t, "dp", run);
  t.comment("b=" + csvio::format_double(r.b));
  schedule_rows(t, r);
  write_out(t, run, "schedule.csv");
  return kExitOk;
}

int cmd_pareto(const Run& run) {
  const DpSetup s = dp_setup(run);
  const std::vector<double> b_list = run.c.get_doubles("pareto.b_list");
  const std::vector<double> d_list = run.c.get_doubles("pareto.delta_list");
  const auto points = schedule::pareto_sweep(s.mse, s.kappa, s.sigma_z2, s.P,
                                             b_list, d_list, s.opt);
  csvio::Table t("pareto-front-v1", {"b", "delta", "T", "R_agg", "mse"});
  stamp(t, "pareto", run);
  for (const auto& p : points) {
    t.row().cell(p.b).cell(p.delta).cell(p.T).cell(p.R_agg).cell(p.final_mse);
  }
  write_out(t, run, "pareto.csv");
  return kExitOk;
}

int cmd_growth(const Run& run) {
  const DpSetup s = dp_setup(run);
  const schedule::DpResult r = schedule::dp_schedule(
      s.mse, s.kappa, s.sigma_z2, s.P, s.delta, s.cp, s.opt);
  const double th = schedule::theta(s.mse, s.kappa, s.sigma_z2);
  const int tail = int(run.c.get_int("growth.tail", 6));
  const schedule::GrowthReport g =
      schedule::growth_rate_check(r.schedule, th, r.replay, r.mmse, tail);
  csvio::Table t("growth-check-v1",
                 {"T", "theta", "predicted", "tail_growth", "diff", "k",
                  "mean_tail_emse_ratio", "d_to_emse_decreasing",
                  "short_schedule"});
  stamp(t, "growth", run);
  t.row()
      .cell(r.schedule.T())
      .cell(th)
      .cell(g.predicted)
      .cell(g.tail_growth)
      .cell(g.diff)
      .cell(g.k)
      .cell(g.mean_tail_emse_ratio)
      .cell(int(g.distortion_to_emse_decreasing))
      .cell(int(g.short_schedule));
  write_out(t, run, "growth.csv");
  return kExitOk;
}

int cmd_mcmc(const Run& run) {
  const model::SignalPrior prior = prior_from(run.c);
  model::LinearSystem sys = system_from(run.c, prior, "n");
  const int chains = int(run.c.get_int("mcmc.seeds", 5));

  umcmc::SlaParams par;
  par.max_super = int(run.c.get_int("mcmc.max_super", par.max_super));
  par.c = run.c.get_double("mcmc.c", par.c);
  par.q = int(run.c.get_int("mcmc.q", par.q));
  par.dq_quantile = run.c.get_double("mcmc.dq_quantile", par.dq_quantile);
  par.z_init = int(run.c.get_int("mcmc.z_init", par.z_init));

  // one instance, several chains
  sys.matrix_seed = util::derive_seed(run.seed, kStreamMatrix);
  Eigen::MatrixXd A = model::generate_matrix(sys, sys.matrix_seed);
  umcmc::normalize_columns(A);
  const Eigen::VectorXd x =
      model::generate_signal(prior, sys.N,
                             util::derive_seed(run.seed, kStreamSignal))
          .col(0);
  Eigen::VectorXd y = A * x;
  util::Rng rng(util::derive_seed(run.seed, kStreamNoise));
  const double sz = std::sqrt(sys.sigma_z2);
  for (int mu = 0; mu < sys.M; ++mu) y[mu] += sz * rng.normal();

  std::vector<umcmc::SlaResult> res(chains);
  util::parallel_for(std::size_t(chains), run.jobs, [&](std::size_t s) {
    res[s] = umcmc::sla_mcmc(y, A, sys.sigma_z2, par,
                             util::derive_seed(run.seed, kStreamChain + s));
  });

  Eigen::VectorXd mixed = Eigen::VectorXd::Zero(sys.N);
  for (const auto& r : res) mixed += r.estimate;
  mixed /= double(chains);

  csvio::Table ts("mcmc-summary-v1",
                  {"chain", "chain_seed", "supers_used", "stage_reached",
                   "zsize", "energy", "budget_exhausted", "msdr_db",
                   "levels"});
  stamp(ts, "mcmc", run);
  for (int s = 0; s < chains; ++s) {
    const auto& r = res[std::size_t(s)];
    ts.row()
        .cell(s)
        .cell(std::size_t(util::derive_seed(run.seed, kStreamChain +
                                                          std::uint64_t(s))))
        .cell(r.supers_used)
        .cell(r.stage_reached)
        .cell(std::size_t(r.levels.size()))
        .cell(r.energy)
        .cell(int(r.budget_exhausted))
        .cell(umcmc::msdr(x, r.estimate))
        .cell(join_levels(r.levels));
  }
  ts.row()
      .cell(-1)
      .cell(std::size_t(0))
      .cell(0)
      .cell(0)
      .cell(std::size_t(0))
      .cell(std::numeric_limits<double>::quiet_NaN())
      .cell(0)
      .cell(umcmc::msdr(x, mixed))
      .cell(std::string("mixed"));

  csvio::Table tr("mcmc-rounds-v1",
                  {"chain", "stage", "round", "zsize", "energy", "hq", "res2",
                   "supers", "levels"});
  stamp(tr, "mcmc", run);
  for (int s = 0; s < chains; ++s) {
    int round = 0;
    for (const auto& rec : res[std::size_t(s)].rounds) {
      tr.row()
          .cell(s)
          .cell(rec.stage)
          .cell(round++)
          .cell(rec.zsize)
          .cell(rec.energy)
          .cell(rec.hq)
          .cell(rec.res2)
          .cell(rec.supers)
          .cell(join_levels(rec.levels));
    }
  }
  write_out(ts, run, "mcmc_summary.csv");
  write_out(tr, run, "mcmc_rounds.csv");
  return kExitOk;
}

int cmd_diag_independence(const Run& run) {
  const double sigma_node = run.c.get_double("diag.sigma_node", 1.0);
  std::vector<double> gammas{0.5, 1.0, 2.0};
  if (run.c.has("diag.gamma_list")) {
    gammas = run.c.get_doubles("diag.gamma_list");
  }
  const int trials = int(run.c.get_int("diag.trials", 50));
  const int P = int(run.c.get_int("diag.p", 100));
  const int samples = int(run.c.get_int("diag.samples", 1000));
  const double rho = run.c.get_double("diag.rho", 0.1);

  std::vector<mpamp::IndependenceResult> out(gammas.size());
  util::parallel_for(gammas.size(), run.jobs, [&](std::size_t i) {
    out[i] = mpamp::independence_diagnostic(
        sigma_node, gammas[i], trials, P, samples, rho,
        util::derive_seed(run.seed, kStreamDiag + i));
  });

  csvio::Table t("fusion-independence-v1", {"gamma", "reject_wn",
                                            "reject_wnx"});
  stamp(t, "diag-independence", run);
  t.comment("trials=" + std::to_string(trials));
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    t.row().cell(gammas[i]).cell(out[i].reject_wn).cell(out[i].reject_wnx);
  }
  write_out(t, run, "independence.csv");
  return kExitOk;
}

// ------------------------------------------------------------ dispatch

const char* kHelpFooter = R"(Config keys (section.key, defaults in parens):
  run:    seed (1), jobs (1), out_dir (.)
  system: n, m, p (1), kappa, sigma_z2, snr_db, scale (m|n)
  prior:  kind (bernoulli_gauss|sparse_laplace|mixture_gauss|markov_support|
          markov_four_cycle), rho (0.1), j (1), p01, p10,
          amplitude (gauss|one|rademacher|uniform01), cycle_error,
          weights, means, vars
  mse:    samples (200000), seed (77)
  se:     t (30)
  amp:    t_max (30), eps (0), rule (empirical|theta|se), trials (1)
  mmv:    mode (distinct|shared), trials (1), t_max (30), eps (0)
  replica: grid_points (400), convention (n|m)
  phase:  kappa_min (0.11), kappa_max (0.24), kappa_step (0.01),
          sigma_db_min (-50), sigma_db_max (-20), sigma_db_step (5)
  mpamp:  rates | rate (2) + t (10), model (ecsq|gaussian_rd|lossless),
          trials (1)
  dp:     b | c4 + c5, delta | target_db, sigma_step_db (0.01),
          rate_step (0.1), t_max (64), model (ecsq|gaussian_rd)
  pareto: b_list, delta_list
  growth: tail (6)
  mcmc:   seeds (5), max_super (240), c (1.25), q (2), dq_quantile (0.4),
          z_init (7)
  diag:   sigma_node (1), gamma_list (0.5,1,2), trials (50), p (100),
          samples (1000), rho (0.1)
Any key can be overridden with LINV_SECTION_KEY environment variables.
Presets: sensor-net, cloud, gpu, fig4-1, fig3-5, mcmc-bernoulli, mcmc-mrad,
mcmc-munif, mcmc-laplace, mcmc-markov4.
Exit codes: 0 ok, 2 invalid config, 3 infeasible target, 4 diverged.)";

int dispatch(const std::string& sub, const Run& run) {
  if (sub == "se") return cmd_se(run);
  if (sub == "amp") return cmd_amp(run);
  if (sub == "mmv-amp") return cmd_mmv_amp(run);
  if (sub == "replica") return cmd_replica(run);
  if (sub == "phase-diagram") return cmd_phase_diagram(run);
  if (sub == "mpamp") return cmd_mpamp(run);
  if (sub == "dp") return cmd_dp(run);
  if (sub == "pareto") return cmd_pareto(run);
  if (sub == "growth") return cmd_growth(run);
  if (sub == "mcmc") return cmd_mcmc(run);
  if (sub == "diag-independence") return cmd_diag_independence(run);
  throw cfg::ParseError("unknown subcommand " + sub);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linear inverse problem toolkit"};
  app.footer(kHelpFooter);
  app.require_subcommand(1);
  app.fallthrough(true);

  std::string config_path, preset_name, out_dir_flag;
  long long seed_flag = -1;
  int jobs_flag = 0;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--preset", preset_name, "named preset configuration");
  app.add_option("--seed", seed_flag, "base seed (overrides config)");
  app.add_option("--jobs", jobs_flag, "worker threads for trial loops");
  app.add_option("--out-dir", out_dir_flag, "output directory");

  const char* subs[] = {"se",     "amp",    "mmv-amp", "replica",
                        "phase-diagram", "mpamp",  "dp",      "pareto",
                        "growth", "mcmc",   "diag-independence"};
  for (const char* s : subs) app.add_subcommand(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    Run run;
    if (!preset_name.empty()) {
      const auto& presets = preset_table();
      const auto it = presets.find(preset_name);
      if (it == presets.end()) {
        throw cfg::ParseError("unknown preset " + preset_name);
      }
      run.c = cfg::Config::parse_text(it->second);
    }
    if (!config_path.empty()) {
      const cfg::Config file = cfg::Config::parse_file(config_path);
      for (const auto& [k, v] : file.items()) run.c.set(k, v);
    }
    if (!run.c.has("run.seed")) run.c.set("run.seed", "1");
    if (!run.c.has("run.jobs")) run.c.set("run.jobs", "1");
    if (!run.c.has("run.out_dir")) run.c.set("run.out_dir", ".");
    run.c.apply_env_overrides();
    if (seed_flag >= 0) run.c.set("run.seed", std::to_string(seed_flag));
    if (jobs_flag > 0) run.c.set("run.jobs", std::to_string(jobs_flag));
    if (!out_dir_flag.empty()) run.c.set("run.out_dir", out_dir_flag);
    run.c.require_known_keys(known_keys());

    run.seed = std::uint64_t(run.c.get_int("run.seed"));
    run.jobs = int(run.c.get_int("run.jobs"));
    run.out_dir = run.c.get_string("run.out_dir");
    if (run.jobs < 1) throw cfg::ParseError("run.jobs must be >= 1");

    return dispatch(app.get_subcommands().front()->get_name(), run);
  } catch (const cfg::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const schedule::DpInfeasible& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInfeasible;
  } catch (const replica::ResolutionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInfeasible;
  } catch (const amp::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
}
