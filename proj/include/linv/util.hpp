#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace linv::util {

// Seed derivation: hash a base seed and a stream index into an independent
// engine seed so trials/channels/nodes never share streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x51ed2701));
}

// mt19937_64 + Box-Muller. std::normal_distribution is not pinned by the
// standard, so normals are generated explicitly to keep runs byte-identical.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() {  // (0,1)
    const double u = (eng_() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t integer() { return eng_(); }

  // Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: n == 0");
    const std::uint64_t bound = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t v;
    do {
      v = eng_();
    } while (v >= bound);
    return static_cast<std::size_t>(v % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double logsumexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Neumaier compensated summation; order-insensitive to ~1e-16 relative.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double to_db(double x) { return 10.0 * std::log10(x); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

inline std::vector<double> logspace_db(double lo, double hi, double step_db) {
  if (!(lo > 0.0) || !(hi >= lo) || !(step_db > 0.0)) {
    throw std::invalid_argument("logspace_db: bad range");
  }
  std::vector<double> out;
  const double lo_db = to_db(lo), hi_db = to_db(hi);
  const int n = static_cast<int>(std::ceil((hi_db - lo_db) / step_db)) + 1;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(from_db(lo_db + i * step_db));
  out.back() = hi;
  return out;
}

inline std::vector<double> logspace_points(double lo, double hi, int n) {
  std::vector<double> out(n);
  const double l0 = std::log(lo), l1 = std::log(hi);
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(l0 + (l1 - l0) * i / double(n - 1));
  }
  return out;
}

// Runs fn(i) for i in [0, n); jobs <= 1 stays on the calling thread.
inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min<std::size_t>(jobs, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::atomic<std::size_t> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr r;
  r.n = v.size();
  if (v.empty()) return r;
  CompensatedSum s;
  for (double x : v) s.add(x);
  r.mean = s.value() / double(v.size());
  if (v.size() > 1) {
    CompensatedSum q;
    for (double x : v) q.add((x - r.mean) * (x - r.mean));
    r.stderr_ = std::sqrt(q.value() / double(v.size() - 1) / double(v.size()));
  }
  return r;
}

}  // namespace linv::util
