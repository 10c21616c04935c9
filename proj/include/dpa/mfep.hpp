// Minimum free-energy path machinery: the string method (steepest descent
// plus arc-length reparameterization), encoder-based path extraction by
// root-finding or gradient-following, and the path distance metrics.
#pragma once

#include "dpa/common.hpp"
#include "dpa/model.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

namespace dpa::mfep {

struct Path {
  Matrix points;    // n x 2, ordered
  Vector cum_len;   // nondecreasing, cum_len(0) = 0
  bool truncated = false;

  static Path from_points(Matrix pts) {
    if (pts.rows() < 2) throw std::invalid_argument("mfep: a path needs at least 2 points");
    Path p;
    p.cum_len = Vector::Zero(pts.rows());
    for (Eigen::Index i = 1; i < pts.rows(); ++i)
      p.cum_len(i) = p.cum_len(i - 1) + (pts.row(i) - pts.row(i - 1)).norm();
    p.points = std::move(pts);
    return p;
  }
  double length() const { return cum_len(cum_len.size() - 1); }
};

// Linear re-interpolation of a polyline to n points at equal arc length.
inline Matrix reparameterize(const Matrix& pts, int n) {
  Vector cum = Vector::Zero(pts.rows());
  for (Eigen::Index i = 1; i < pts.rows(); ++i)
    cum(i) = cum(i - 1) + (pts.row(i) - pts.row(i - 1)).norm();
  const double total = cum(cum.size() - 1);
  Matrix out(n, pts.cols());
  out.row(0) = pts.row(0);
  out.row(n - 1) = pts.row(pts.rows() - 1);
  Eigen::Index seg = 0;
  for (int i = 1; i + 1 < n; ++i) {
    const double target = total * i / (n - 1.0);
    while (seg + 2 < pts.rows() && cum(seg + 1) < target) ++seg;
    const double t = (target - cum(seg)) / std::max(cum(seg + 1) - cum(seg), 1e-300);
    out.row(i) = pts.row(seg) + t * (pts.row(seg + 1) - pts.row(seg));
  }
  return out;
}

struct StringOptions {
  int n_nodes = 32;
  double tol = 1e-7;      // max node displacement per iteration
  double step = 1e-4;     // descent step
  long max_iter = 400000;
};

// Simplified string method: alternate a steepest-descent step on every node
// with reparameterization to equal arc length. Endpoints are pinned (they are
// minima). Converged when the largest node displacement over one full
// iteration falls below tol.
inline Path string_method(const std::function<Vector(const Vector&)>& grad, const Vector& a,
                          const Vector& b, const StringOptions& opt = {},
                          const std::optional<Matrix>& init = std::nullopt) {
  if (opt.n_nodes < 3) throw std::invalid_argument("mfep: string needs at least 3 nodes");
  Matrix nodes(opt.n_nodes, 2);
  if (init) {
    nodes = (init->rows() == opt.n_nodes) ? *init : reparameterize(*init, opt.n_nodes);
  } else {
    for (int i = 0; i < opt.n_nodes; ++i) {
      const double t = i / (opt.n_nodes - 1.0);
      nodes.row(i) = ((1.0 - t) * a + t * b).transpose();
    }
  }
  double disp = 0.0;
  for (long it = 0; it < opt.max_iter; ++it) {
    Matrix prev = nodes;
    for (int i = 1; i + 1 < opt.n_nodes; ++i)
      nodes.row(i) -= opt.step * grad(nodes.row(i).transpose()).transpose();
    nodes = reparameterize(nodes, opt.n_nodes);
    disp = (nodes - prev).rowwise().norm().maxCoeff();
    if (disp < opt.tol) return Path::from_points(std::move(nodes));
  }
  throw std::runtime_error("mfep: string method did not converge; residual displacement " +
                           std::to_string(disp));
}

// Scalar encoder component as a differentiable field on data space.
struct ComponentField {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
};

inline ComponentField make_component_field(const model::DpaModel& m, int component) {
  if (component < 0 || component >= m.k_max) throw std::invalid_argument("mfep: component out of range");
  ComponentField f;
  f.value = [&m, component](const Vector& x) { return m.encode(x.transpose())(0, component); };
  f.grad = [&m, component](const Vector& x) {
    return Vector(m.encoder_jacobian(x).row(component).transpose());
  };
  return f;
}

enum class ExtractMethod { root_find, gradient_follow };

struct ExtractOptions {
  int n_steps = 200;
  ExtractMethod method = ExtractMethod::root_find;
  double step = 0.02;       // gradient-follow step length
  double z_tol = 1e-8;      // root solve tolerance in z
  double bracket_max = 1.0; // furthest bracket distance along the gradient ray
};

namespace detail {

// Solve e(x0 + t dir) = target for t >= 0 by doubling bracket + bisection.
inline std::optional<Vector> line_root(const ComponentField& f, const Vector& x0, const Vector& dir,
                                       double target, double z_tol, double t_max) {
  const double f0 = f.value(x0) - target;
  if (std::abs(f0) <= z_tol) return x0;
  double lo = 0.0, hi = 1e-3;
  double f_hi = f.value(x0 + hi * dir) - target;
  while (f0 * f_hi > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > t_max) return std::nullopt;
    f_hi = f.value(x0 + hi * dir) - target;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f.value(x0 + mid * dir) - target;
    if (std::abs(fm) <= z_tol) return Vector(x0 + mid * dir);
    if (fm * f0 > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return Vector(x0 + 0.5 * (lo + hi) * dir);
}

// Damped Newton fallback in the full space: x <- x - damp * (e(x)-z) g/|g|^2.
inline std::optional<Vector> newton_root(const ComponentField& f, Vector x, double target,
                                         double z_tol) {
  for (int it = 0; it < 100; ++it) {
    const double err = f.value(x) - target;
    if (std::abs(err) <= z_tol) return x;
    Vector g = f.grad(x);
    const double g2 = g.squaredNorm();
    if (g2 < 1e-16) return std::nullopt;
    double damp = 1.0;
    Vector cand;
    for (; damp > 1e-4; damp *= 0.5) {
      cand = x - damp * err / g2 * g;
      if (std::abs(f.value(cand) - target) < std::abs(err)) break;
    }
    if (damp <= 1e-4) return std::nullopt;
    x = cand;
  }
  return std::nullopt;
}

}  // namespace detail

// March the latent across [z_start, z_end] from x_start, solving
// e_component(x) = z_next at every step. root_find brackets along the local
// gradient direction with bisection (Newton fallback); gradient_follow takes
// a normalized gradient step first and re-projects with the same solve.
// A failed solve truncates the path and sets the flag.
inline Path extract_path(const ComponentField& f, const Vector& x_start, double z_start, double z_end,
                         const ExtractOptions& opt = {}) {
  std::vector<Vector> pts{x_start};
  Vector x = x_start;
  bool truncated = false;
  for (int s = 1; s < opt.n_steps; ++s) {
    const double z_next = z_start + (z_end - z_start) * s / (opt.n_steps - 1.0);
    Vector base = x;
    if (opt.method == ExtractMethod::gradient_follow) {
      Vector g = f.grad(x);
      if (g.norm() > 1e-12) base = x + opt.step * (z_end >= z_start ? 1.0 : -1.0) * g.normalized();
    }
    Vector g = f.grad(base);
    std::optional<Vector> next;
    if (g.norm() > 1e-12) {
      Vector dir = g.normalized();
      if (f.value(base) > z_next) dir = -dir;
      next = detail::line_root(f, base, dir, z_next, opt.z_tol, opt.bracket_max);
    }
    if (!next) next = detail::newton_root(f, base, z_next, opt.z_tol);
    if (!next) {
      truncated = true;
      break;
    }
    x = *next;
    pts.push_back(x);
  }
  Matrix m(pts.size(), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(i) = pts[i].transpose();
  Path p = Path::from_points(std::move(m));
  p.truncated = truncated;
  return p;
}

struct PathMetrics {
  double chamfer = 0.0;
  double hausdorff = 0.0;
  double p95 = 0.0;              // larger of the two directed 95th percentiles
  double d_mfep_to_path = 0.0;   // mean nearest distance, reference -> candidate
  double d_path_to_mfep = 0.0;
  int best_component = -1;       // filled by the parameterization search
  double best_r2 = 0.0;
};

namespace detail {

inline double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                                     const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// directed vertex-to-polyline distances (segment projection)
inline std::vector<double> directed_distances(const Path& from, const Path& to) {
  std::vector<double> out;
  out.reserve(from.points.rows());
  for (Eigen::Index i = 0; i < from.points.rows(); ++i) {
    const Eigen::Vector2d p(from.points(i, 0), from.points(i, 1));
    double best = std::numeric_limits<double>::infinity();
    if (to.points.rows() == 1) {
      best = (p - Eigen::Vector2d(to.points(0, 0), to.points(0, 1))).norm();
    } else {
      for (Eigen::Index j = 0; j + 1 < to.points.rows(); ++j)
        best = std::min(best, point_segment_distance(p, Eigen::Vector2d(to.points(j, 0), to.points(j, 1)),
                                                     Eigen::Vector2d(to.points(j + 1, 0), to.points(j + 1, 1))));
    }
    out.push_back(best);
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace detail

inline PathMetrics path_metrics(const Path& candidate, const Path& reference) {
  auto d_ref = detail::directed_distances(reference, candidate);  // MFEP -> path
  auto d_cand = detail::directed_distances(candidate, reference); // path -> MFEP
  PathMetrics m;
  m.d_mfep_to_path = detail::mean_of(d_ref);
  m.d_path_to_mfep = detail::mean_of(d_cand);
  m.chamfer = 0.5 * (m.d_mfep_to_path + m.d_path_to_mfep);
  m.hausdorff = std::max(*std::max_element(d_ref.begin(), d_ref.end()),
                         *std::max_element(d_cand.begin(), d_cand.end()));
  m.p95 = std::max(detail::percentile(d_ref, 0.95), detail::percentile(d_cand, 0.95));
  return m;
}

// Cubic-polynomial R^2 of one latent against cumulative arc length.
inline double parameterization_r2(const Vector& z, const Vector& arc_len) {
  const Eigen::Index n = z.size();
  const double mean = z.mean();
  double tss = (z.array() - mean).square().sum();
  if (tss < 1e-14) return 0.0;  // constant latent on the path
  Matrix X(n, 4);
  const double scale = std::max(arc_len(n - 1), 1e-300);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = arc_len(i) / scale;
    X(i, 0) = 1.0;
    X(i, 1) = s;
    X(i, 2) = s * s;
    X(i, 3) = s * s * s;
  }
  Vector beta = (X.transpose() * X).ldlt().solve(X.transpose() * z);
  const double rss = (z - X * beta).squaredNorm();
  return 1.0 - rss / tss;
}

// Encodes the path and returns (component with the largest R^2, that R^2).
inline std::pair<int, double> best_parameterizing_component(
    const std::function<Matrix(const Matrix&)>& encode, int k, const Path& path) {
  Matrix Z = encode(path.points);
  if (Z.cols() != k) throw std::invalid_argument("mfep: encoder width mismatch");
  int best = 0;
  double best_r2 = -1.0;
  for (int c = 0; c < k; ++c) {
    const double r2 = parameterization_r2(Z.col(c), path.cum_len);
    if (r2 > best_r2) {
      best_r2 = r2;
      best = c;
    }
  }
  return {best, best_r2};
}

// One seed's outcome inside the multi-seed protocol.
struct SeedOutcome {
  int seed = 0;
  bool failed = false;
  std::string error;
  PathMetrics metrics;
};

struct ProtocolSummary {
  std::string model;
  int n_trained = 0;
  int n_kept = 0;
  std::vector<int> kept_seeds;
  std::vector<int> failed_seeds;
  // mean / sd over kept seeds
  double param_comp_mean = 0.0, param_comp_sd = 0.0;
  double chamfer_mean = 0.0, chamfer_sd = 0.0;
  double hausdorff_mean = 0.0, hausdorff_sd = 0.0;
  double p95_mean = 0.0, p95_sd = 0.0;
  double d_mfep_mean = 0.0, d_mfep_sd = 0.0;
  double d_path_mean = 0.0, d_path_sd = 0.0;
};

// Drops the worst seed by Chamfer distance and reports mean +- sd over the
// rest; failed seeds are excluded up front and reported.
inline ProtocolSummary summarize_protocol(const std::string& model_name,
                                          const std::vector<SeedOutcome>& outcomes) {
  ProtocolSummary s;
  s.model = model_name;
  s.n_trained = static_cast<int>(outcomes.size());
  std::vector<const SeedOutcome*> ok;
  for (const auto& o : outcomes) {
    if (o.failed)
      s.failed_seeds.push_back(o.seed);
    else
      ok.push_back(&o);
  }
  if (ok.size() < 2) throw std::runtime_error("mfep: seed protocol needs at least 2 successful seeds");
  auto worst = std::max_element(ok.begin(), ok.end(), [](const SeedOutcome* a, const SeedOutcome* b) {
    return a->metrics.chamfer < b->metrics.chamfer;
  });
  ok.erase(worst);
  for (const auto* o : ok) s.kept_seeds.push_back(o->seed);
  s.n_kept = static_cast<int>(ok.size());

  auto stats = [&](auto getter, double& mean, double& sd) {
    double m = 0.0;
    for (const auto* o : ok) m += getter(*o);
    m /= ok.size();
    double v = 0.0;
    for (const auto* o : ok) v += (getter(*o) - m) * (getter(*o) - m);
    sd = ok.size() > 1 ? std::sqrt(v / (ok.size() - 1)) : 0.0;
    mean = m;
  };
  stats([](const SeedOutcome& o) { return static_cast<double>(o.metrics.best_component); },
        s.param_comp_mean, s.param_comp_sd);
  stats([](const SeedOutcome& o) { return o.metrics.chamfer; }, s.chamfer_mean, s.chamfer_sd);
  stats([](const SeedOutcome& o) { return o.metrics.hausdorff; }, s.hausdorff_mean, s.hausdorff_sd);
  stats([](const SeedOutcome& o) { return o.metrics.p95; }, s.p95_mean, s.p95_sd);
  stats([](const SeedOutcome& o) { return o.metrics.d_mfep_to_path; }, s.d_mfep_mean, s.d_mfep_sd);
  stats([](const SeedOutcome& o) { return o.metrics.d_path_to_mfep; }, s.d_path_mean, s.d_path_sd);
  return s;
}

}  // namespace dpa::mfep
