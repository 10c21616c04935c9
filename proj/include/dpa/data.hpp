// Synthetic datasets: analytic distributions with density/score callbacks,
// the Mueller-Brown potential with an overdamped Langevin sampler, and the
// manifold datasets for the independence experiments.
#pragma once

#include "dpa/common.hpp"
#include "dpa/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace dpa::data {

struct Dataset {
  std::string name;
  Matrix X;               // N x p
  int intrinsic_dim = -1; // true K where known, else -1
};

// A density with analytic score, used by the level-set diagnostics.
class AnalyticDistribution {
 public:
  virtual ~AnalyticDistribution() = default;
  virtual int dim() const = 0;
  virtual double log_density(const Vector& y) const = 0;
  virtual Vector score(const Vector& y) const = 0;  // grad log density
  virtual Matrix sample(int n, std::uint64_t seed) const = 0;
};

class StandardNormal final : public AnalyticDistribution {
 public:
  explicit StandardNormal(int p) : p_(p) {
    if (p < 1) throw std::invalid_argument("data: dimension must be positive");
  }
  int dim() const override { return p_; }
  double log_density(const Vector& y) const override {
    return -0.5 * p_ * std::log(2.0 * std::numbers::pi) - 0.5 * y.squaredNorm();
  }
  Vector score(const Vector& y) const override { return -y; }
  Matrix sample(int n, std::uint64_t seed) const override {
    auto rng = make_rng(seed);
    return gaussian_matrix(n, p_, rng);
  }

 private:
  int p_;
};

// Equal-weight trimodal Gaussian mixture, shared isotropic sigma.
class TrimodalMixture final : public AnalyticDistribution {
 public:
  TrimodalMixture() {
    means_[0] << -1.1, -1.1;
    means_[1] << 1.1, -0.9;
    means_[2] << -0.33, 1.0;
  }
  int dim() const override { return 2; }
  double sigma() const { return sigma_; }
  const std::array<Eigen::Vector2d, 3>& means() const { return means_; }

  double log_density(const Vector& y) const override {
    return logsumexp(component_logs(y));
  }

  Vector score(const Vector& y) const override {
    std::array<double, 3> lp = component_logs(y);
    const double lse = logsumexp(lp);
    Vector s = Vector::Zero(2);
    for (int j = 0; j < 3; ++j) {
      const double w = std::exp(lp[j] - lse);  // responsibility
      s += w * (means_[j] - y.head<2>()) / (sigma_ * sigma_);
    }
    return s;
  }

  Matrix sample(int n, std::uint64_t seed) const override {
    auto rng = make_rng(seed);
    std::uniform_int_distribution<int> pick(0, 2);
    std::normal_distribution<double> normal;
    Matrix X(n, 2);
    for (int i = 0; i < n; ++i) {
      const auto& mu = means_[pick(rng)];
      X(i, 0) = mu(0) + sigma_ * normal(rng);
      X(i, 1) = mu(1) + sigma_ * normal(rng);
    }
    return X;
  }

 private:
  std::array<double, 3> component_logs(const Vector& y) const {
    std::array<double, 3> lp{};
    const double norm_const = -std::log(3.0) - std::log(2.0 * std::numbers::pi) - 2.0 * std::log(sigma_);
    for (int j = 0; j < 3; ++j)
      lp[j] = norm_const - 0.5 * (y.head<2>() - means_[j]).squaredNorm() / (sigma_ * sigma_);
    return lp;
  }
  static double logsumexp(const std::array<double, 3>& v) {
    const double m = std::max({v[0], v[1], v[2]});
    return m + std::log(std::exp(v[0] - m) + std::exp(v[1] - m) + std::exp(v[2] - m));
  }

  std::array<Eigen::Vector2d, 3> means_;
  double sigma_ = 0.66;
};

// Mueller-Brown potential with the standard literature constants.
struct MuellerBrown {
  std::array<double, 4> A{-200.0, -100.0, -170.0, 15.0};
  std::array<double, 4> a{-1.0, -1.0, -6.5, 0.7};
  std::array<double, 4> b{0.0, 0.0, 11.0, 0.6};
  std::array<double, 4> c{-10.0, -10.0, -6.5, 0.7};
  std::array<double, 4> x0{1.0, 0.0, -0.5, -1.0};
  std::array<double, 4> y0{0.0, 0.5, 1.5, 1.0};

  double potential(double x, double y) const {
    double u = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double dx = x - x0[i], dy = y - y0[i];
      u += A[i] * std::exp(a[i] * dx * dx + b[i] * dx * dy + c[i] * dy * dy);
    }
    return u;
  }
  double potential(const Vector& p) const { return potential(p(0), p(1)); }

  Vector gradient(const Vector& p) const {
    const double x = p(0), y = p(1);
    Vector g = Vector::Zero(2);
    for (int i = 0; i < 4; ++i) {
      const double dx = x - x0[i], dy = y - y0[i];
      const double e = A[i] * std::exp(a[i] * dx * dx + b[i] * dx * dy + c[i] * dy * dy);
      g(0) += e * (2.0 * a[i] * dx + b[i] * dy);
      g(1) += e * (b[i] * dx + 2.0 * c[i] * dy);
    }
    return g;
  }

  Eigen::Matrix2d hessian(const Vector& p) const {
    const double x = p(0), y = p(1);
    Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
    for (int i = 0; i < 4; ++i) {
      const double dx = x - x0[i], dy = y - y0[i];
      const double e = A[i] * std::exp(a[i] * dx * dx + b[i] * dx * dy + c[i] * dy * dy);
      const double gx = 2.0 * a[i] * dx + b[i] * dy;
      const double gy = b[i] * dx + 2.0 * c[i] * dy;
      h(0, 0) += e * (gx * gx + 2.0 * a[i]);
      h(0, 1) += e * (gx * gy + b[i]);
      h(1, 1) += e * (gy * gy + 2.0 * c[i]);
    }
    h(1, 0) = h(0, 1);
    return h;
  }

  // Local minimum by damped Newton from a starting point.
  Vector minimize_from(Vector p, int max_iter = 200) const {
    for (int it = 0; it < max_iter; ++it) {
      Vector g = gradient(p);
      if (g.norm() < 1e-10) break;
      Eigen::Matrix2d h = hessian(p);
      // fall back toward gradient descent when the Hessian is not PD
      const double tr = h.trace(), det = h.determinant();
      Vector step;
      if (det > 0.0 && tr > 0.0) {
        step = h.ldlt().solve(g);
      } else {
        step = g / std::max(1.0, g.norm());
      }
      double t = 1.0;
      const double u0 = potential(p);
      while (t > 1e-8 && potential(Vector(p - t * step)) > u0) t *= 0.5;
      p -= t * step;
    }
    return p;
  }

  // The three local minima, found numerically, ordered by increasing x.
  std::vector<Vector> minima() const {
    std::vector<Vector> found;
    const std::array<std::array<double, 2>, 6> starts{{{-0.6, 1.4}, {0.0, 0.5}, {0.6, 0.0}, {-1.0, 1.0}, {0.5, 0.3}, {-0.2, 0.8}}};
    for (const auto& s : starts) {
      Vector p(2);
      p << s[0], s[1];
      Vector m = minimize_from(p);
      if (gradient(m).norm() > 1e-6) continue;
      bool dup = false;
      for (const auto& f : found)
        if ((f - m).norm() < 1e-3) dup = true;
      if (!dup) found.push_back(m);
    }
    std::sort(found.begin(), found.end(), [](const Vector& l, const Vector& r) { return l(0) < r(0); });
    return found;
  }
};

struct LangevinConfig {
  double dt = 1e-4;
  int burn_in = 1000;
  int thin = 10;
  double bound = 1e3;  // |x|_inf beyond this is treated as divergence
};

// Euler-Maruyama overdamped Langevin: x <- x - grad(x) dt + sqrt(2 kT dt) xi.
// Returns n_keep states after burn-in, keeping every thin-th state.
inline Matrix langevin_sample(const std::function<Vector(const Vector&)>& grad, Vector x,
                              int n_keep, double kT, const LangevinConfig& cfg, std::uint64_t seed) {
  if (cfg.dt <= 0.0) throw std::invalid_argument("data: langevin dt must be positive");
  auto rng = make_rng(seed);
  std::normal_distribution<double> normal;
  const double noise_scale = std::sqrt(2.0 * kT * cfg.dt);
  const int p = static_cast<int>(x.size());
  Matrix out(n_keep, p);
  int kept = 0;
  long step = 0;
  while (kept < n_keep) {
    Vector g = grad(x);
    for (int j = 0; j < p; ++j) x(j) += -g(j) * cfg.dt + noise_scale * normal(rng);
    if (x.cwiseAbs().maxCoeff() > cfg.bound)
      throw std::runtime_error("data: langevin trajectory diverged at step " + std::to_string(step) +
                               "; use a smaller dt");
    ++step;
    if (step > cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0) out.row(kept++) = x.transpose();
  }
  return out;
}

// Boltzmann density exp(-U/kT) for the Mueller-Brown potential (unnormalized
// log density; the score and relative-density cutoffs do not need the constant).
class MuellerBrownBoltzmann final : public AnalyticDistribution {
 public:
  MuellerBrownBoltzmann(MuellerBrown mb, double kT, LangevinConfig lcfg = {})
      : mb_(std::move(mb)), kT_(kT), lcfg_(lcfg) {}

  int dim() const override { return 2; }
  double kT() const { return kT_; }
  const MuellerBrown& potential() const { return mb_; }

  double log_density(const Vector& y) const override { return -mb_.potential(y) / kT_; }
  Vector score(const Vector& y) const override { return -mb_.gradient(y) / kT_; }

  // One chain per minimum, states interleaved by a seeded shuffle.
  Matrix sample(int n, std::uint64_t seed) const override {
    auto minima = mb_.minima();
    const int chains = static_cast<int>(minima.size());
    const int per = (n + chains - 1) / chains;
    Matrix X(per * chains, 2);
    for (int c = 0; c < chains; ++c)
      X.middleRows(c * per, per) =
          langevin_sample([this](const Vector& v) { return mb_.gradient(v); }, minima[c], per, kT_,
                          lcfg_, derive_seed(seed, c));
    std::vector<int> idx(X.rows());
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = make_rng(derive_seed(seed, 1000));
    std::shuffle(idx.begin(), idx.end(), rng);
    Matrix out(n, 2);
    for (int i = 0; i < n; ++i) out.row(i) = X.row(idx[i]);
    return out;
  }

 private:
  MuellerBrown mb_;
  double kT_;
  LangevinConfig lcfg_;
};

inline Dataset standard_normal_dataset(int p, int n, std::uint64_t seed) {
  if (p < 1 || n < 1) throw std::invalid_argument("data: p and n must be positive");
  return {"standard_normal", StandardNormal(p).sample(n, seed), p};
}

inline Dataset trimodal_mixture_dataset(int n, std::uint64_t seed) {
  return {"trimodal_mixture", TrimodalMixture().sample(n, seed), 2};
}

// Manifold datasets for the extraneous-latent experiments. Ambient dimension
// p and intrinsic dimension K per name:
//   gaussian_line (2,1)  parabola (2,1)  exponential (2,1)
//   helix_slice (3,2)    grid_sum (3,2)  s_curve (3,2)  swiss_roll (3,2)
inline Dataset manifold_dataset(const std::string& name, int n, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix X;
  int K = -1;

  if (name == "gaussian_line") {
    // line at 30 degrees with small orthogonal Gaussian noise
    const double th = std::numbers::pi / 6.0;
    const Eigen::Vector2d u(std::cos(th), std::sin(th)), nvec(-std::sin(th), std::cos(th));
    X.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      const double t = normal(rng);
      const double eps = 0.05 * normal(rng);
      X.row(i) = (t * u + eps * nvec).transpose();
    }
    K = 1;
  } else if (name == "parabola") {
    X.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      const double t = -1.5 + 3.0 * unif(rng);
      X(i, 0) = t;
      X(i, 1) = t * t;
    }
    K = 1;
  } else if (name == "exponential") {
    X.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      const double t = -2.0 + 3.0 * unif(rng);
      X(i, 0) = t;
      X(i, 1) = std::exp(t);
    }
    K = 1;
  } else if (name == "helix_slice") {
    // helical sheet: radius ribbon around (cos t, sin t, t)
    X.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      const double t = 3.0 * std::numbers::pi * unif(rng);
      const double s = -0.2 + 0.4 * unif(rng);
      X(i, 0) = (1.0 + s) * std::cos(t);
      X(i, 1) = (1.0 + s) * std::sin(t);
      X(i, 2) = t;
    }
    K = 2;
  } else if (name == "grid_sum") {
    X.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      const double x = -1.0 + 2.0 * unif(rng);
      const double y = -1.0 + 2.0 * unif(rng);
      X(i, 0) = x;
      X(i, 1) = y;
      X(i, 2) = x + y;
    }
    K = 2;
  } else if (name == "s_curve") {
    X.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      const double t = 3.0 * std::numbers::pi * (unif(rng) - 0.5);
      X(i, 0) = std::sin(t);
      X(i, 1) = 2.0 * unif(rng);
      X(i, 2) = (t >= 0.0 ? 1.0 : -1.0) * (std::cos(t) - 1.0);
    }
    K = 2;
  } else if (name == "swiss_roll") {
    X.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * unif(rng));
      X(i, 0) = t * std::cos(t);
      X(i, 1) = 21.0 * unif(rng);
      X(i, 2) = t * std::sin(t);
    }
    K = 2;
  } else {
    throw config_error("data: unknown manifold dataset '" + name + "'");
  }
  return {name, std::move(X), K};
}

inline const std::vector<std::string>& manifold_names() {
  static const std::vector<std::string> names{"gaussian_line", "parabola",  "exponential", "helix_slice",
                                              "grid_sum",      "s_curve",   "swiss_roll"};
  return names;
}

inline void export_dataset(const std::filesystem::path& csv_path, const Dataset& ds,
                           std::uint64_t seed, const std::string& config_desc) {
  io::write_matrix_csv(csv_path, ds.X, {"dataset=" + ds.name});
  io::write_sidecar(csv_path, "dataset=" + ds.name + "\nseed=" + std::to_string(seed) + "\n" +
                                  config_desc + "\n");
}

}  // namespace dpa::data
