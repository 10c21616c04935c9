// Level-set extraction on 2-D grids (marching squares with polyline
// stitching), delta-integral level-set moments Z/c/V with the coarea weight,
// and the score-alignment and extrema diagnostics.
#pragma once

#include "dpa/common.hpp"
#include "dpa/data.hpp"
#include "dpa/model.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <vector>

namespace dpa::levelset {

struct GridSpec {
  double x_min = -4.0, x_max = 4.0;
  double y_min = -4.0, y_max = 4.0;
  int nx = 100, ny = 100;

  double x_at(int i) const { return x_min + (x_max - x_min) * i / (nx - 1.0); }
  double y_at(int j) const { return y_min + (y_max - y_min) * j / (ny - 1.0); }
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  Matrix points() const {  // all grid points, row-major in (i, j)
    Matrix P(static_cast<Eigen::Index>(nx) * ny, 2);
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < ny; ++j) {
        P(static_cast<Eigen::Index>(i) * ny + j, 0) = x_at(i);
        P(static_cast<Eigen::Index>(i) * ny + j, 1) = y_at(j);
      }
    return P;
  }
};

struct GridField {
  GridSpec spec;
  Matrix values;  // nx x ny, values(i, j) = f(x_i, y_j)

  double cell_w() const { return (spec.x_max - spec.x_min) / (spec.nx - 1.0); }
  double cell_h() const { return (spec.y_max - spec.y_min) / (spec.ny - 1.0); }

  double interpolate(double x, double y) const {
    const double fx = std::clamp((x - spec.x_min) / cell_w(), 0.0, spec.nx - 1.0);
    const double fy = std::clamp((y - spec.y_min) / cell_h(), 0.0, spec.ny - 1.0);
    const int i = std::min(static_cast<int>(fx), spec.nx - 2);
    const int j = std::min(static_cast<int>(fy), spec.ny - 2);
    const double tx = fx - i, ty = fy - j;
    return (1 - tx) * (1 - ty) * values(i, j) + tx * (1 - ty) * values(i + 1, j) +
           (1 - tx) * ty * values(i, j + 1) + tx * ty * values(i + 1, j + 1);
  }

  static GridField from_flat(const GridSpec& s, const Vector& flat) {
    GridField g;
    g.spec = s;
    g.values.resize(s.nx, s.ny);
    for (int i = 0; i < s.nx; ++i)
      for (int j = 0; j < s.ny; ++j) g.values(i, j) = flat(static_cast<Eigen::Index>(i) * s.ny + j);
    return g;
  }

  template <typename F>
  static GridField evaluate(const GridSpec& s, F&& f) {
    if (s.nx < 2 || s.ny < 2) throw std::invalid_argument("levelset: grid resolution must be >= 2");
    if (!(std::isfinite(s.x_min) && std::isfinite(s.x_max) && std::isfinite(s.y_min) &&
          std::isfinite(s.y_max)))
      throw std::invalid_argument("levelset: grid bounds must be finite");
    GridField g;
    g.spec = s;
    g.values.resize(s.nx, s.ny);
    for (int i = 0; i < s.nx; ++i)
      for (int j = 0; j < s.ny; ++j) {
        Vector p(2);
        p << s.x_at(i), s.y_at(j);
        g.values(i, j) = f(p);
      }
    return g;
  }
};

using Polyline = std::vector<Eigen::Vector2d>;

struct LevelSet {
  double level = 0.0;
  int component = 0;
  std::vector<Polyline> polylines;
};

// Marching squares at one level; segments are stitched into polylines by
// shared cell-edge crossings, with the ambiguous saddle cases resolved by
// the cell-center average.
inline std::vector<Polyline> marching_squares(const GridField& g, double level) {
  const int nx = g.spec.nx, ny = g.spec.ny;
  // edge id: 2 * (j * nx + i) for the horizontal edge (i,j)-(i+1,j),
  //          2 * (j * nx + i) + 1 for the vertical edge (i,j)-(i,j+1)
  auto h_edge = [nx](int i, int j) { return 2 * (j * nx + i); };
  auto v_edge = [nx](int i, int j) { return 2 * (j * nx + i) + 1; };

  std::map<int, Eigen::Vector2d> points;
  auto crossing = [&](int id, double xa, double ya, double va, double xb, double yb, double vb) {
    if (points.count(id)) return;
    const double t = (level - va) / (vb - va);
    points[id] = Eigen::Vector2d(xa + t * (xb - xa), ya + t * (yb - ya));
  };

  std::vector<std::pair<int, int>> segments;
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      const double v00 = g.values(i, j), v10 = g.values(i + 1, j);
      const double v01 = g.values(i, j + 1), v11 = g.values(i + 1, j + 1);
      const int config = (v00 >= level ? 1 : 0) | (v10 >= level ? 2 : 0) | (v01 >= level ? 4 : 0) |
                         (v11 >= level ? 8 : 0);
      if (config == 0 || config == 15) continue;
      const double x0 = g.spec.x_at(i), x1 = g.spec.x_at(i + 1);
      const double y0 = g.spec.y_at(j), y1 = g.spec.y_at(j + 1);

      const int bottom = h_edge(i, j), top = h_edge(i, j + 1);
      const int left = v_edge(i, j), right = v_edge(i + 1, j);
      auto pt_bottom = [&] { crossing(bottom, x0, y0, v00, x1, y0, v10); };
      auto pt_top = [&] { crossing(top, x0, y1, v01, x1, y1, v11); };
      auto pt_left = [&] { crossing(left, x0, y0, v00, x0, y1, v01); };
      auto pt_right = [&] { crossing(right, x1, y0, v10, x1, y1, v11); };
      auto emit = [&](int a, int b) { segments.emplace_back(a, b); };

      switch (config) {
        case 1: case 14: pt_left(); pt_bottom(); emit(left, bottom); break;
        case 2: case 13: pt_bottom(); pt_right(); emit(bottom, right); break;
        case 4: case 11: pt_left(); pt_top(); emit(left, top); break;
        case 8: case 7: pt_top(); pt_right(); emit(top, right); break;
        case 3: case 12: pt_left(); pt_right(); emit(left, right); break;
        case 5: case 10: pt_bottom(); pt_top(); emit(bottom, top); break;
        case 6: case 9: {
          pt_left(); pt_right(); pt_bottom(); pt_top();
          const double center = 0.25 * (v00 + v10 + v01 + v11);
          // connect crossings so the region containing the center stays consistent
          if ((center >= level) == (config == 6)) {
            emit(left, top);
            emit(bottom, right);
          } else {
            emit(left, bottom);
            emit(top, right);
          }
          break;
        }
        default: break;
      }
    }
  }

  // stitch segments into chains
  std::map<int, std::vector<int>> adj;  // edge id -> incident segment indices
  for (std::size_t s = 0; s < segments.size(); ++s) {
    adj[segments[s].first].push_back(static_cast<int>(s));
    adj[segments[s].second].push_back(static_cast<int>(s));
  }
  std::vector<bool> used(segments.size(), false);
  std::vector<Polyline> polylines;

  auto walk = [&](int start_edge) {
    std::vector<int> chain{start_edge};
    int cur = start_edge;
    while (true) {
      int next_seg = -1;
      for (int s : adj[cur])
        if (!used[s]) {
          next_seg = s;
          break;
        }
      if (next_seg < 0) break;
      used[next_seg] = true;
      cur = segments[next_seg].first == cur ? segments[next_seg].second : segments[next_seg].first;
      chain.push_back(cur);
    }
    Polyline pl;
    pl.reserve(chain.size());
    for (int id : chain) pl.push_back(points[id]);
    return pl;
  };

  // open chains first (their endpoints have a single incident segment)
  for (const auto& [edge, segs] : adj) {
    if (segs.size() != 1 || used[segs[0]]) continue;
    used[segs[0]] = true;
    int other = segments[segs[0]].first == edge ? segments[segs[0]].second : segments[segs[0]].first;
    Polyline pl = walk(other);
    pl.insert(pl.begin(), points[edge]);
    if (pl.size() >= 2) polylines.push_back(std::move(pl));
  }
  // remaining closed loops
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (used[s]) continue;
    used[s] = true;
    Polyline pl = walk(segments[s].second);
    pl.insert(pl.begin(), points[segments[s].first]);
    if (pl.size() >= 2) polylines.push_back(std::move(pl));
  }
  return polylines;
}

struct ContourSegment {
  Eigen::Vector2d mid;
  double len = 0.0;
};

// Unstitched contour segments (midpoint + length). The level-set moments only
// need segment quadrature nodes, so this skips the polyline bookkeeping.
inline std::vector<ContourSegment> contour_segments(const GridField& g, double level) {
  std::vector<ContourSegment> segs;
  const int nx = g.spec.nx, ny = g.spec.ny;
  Eigen::Vector2d pt[4];
  for (int j = 0; j + 1 < ny; ++j) {
    const double y0 = g.spec.y_at(j), y1 = g.spec.y_at(j + 1);
    for (int i = 0; i + 1 < nx; ++i) {
      const double v00 = g.values(i, j), v10 = g.values(i + 1, j);
      const double v01 = g.values(i, j + 1), v11 = g.values(i + 1, j + 1);
      const int config = (v00 >= level ? 1 : 0) | (v10 >= level ? 2 : 0) | (v01 >= level ? 4 : 0) |
                         (v11 >= level ? 8 : 0);
      if (config == 0 || config == 15) continue;
      const double x0 = g.spec.x_at(i), x1 = g.spec.x_at(i + 1);
      int n_pts = 0;
      auto cross = [&](double xa, double ya, double va, double xb, double yb, double vb) {
        const double t = (level - va) / (vb - va);
        pt[n_pts++] = Eigen::Vector2d(xa + t * (xb - xa), ya + t * (yb - ya));
      };
      const bool b = (v00 >= level) != (v10 >= level);
      const bool t = (v01 >= level) != (v11 >= level);
      const bool l = (v00 >= level) != (v01 >= level);
      const bool r = (v10 >= level) != (v11 >= level);
      if (l) cross(x0, y0, v00, x0, y1, v01);
      if (r) cross(x1, y0, v10, x1, y1, v11);
      if (b) cross(x0, y0, v00, x1, y0, v10);
      if (t) cross(x0, y1, v01, x1, y1, v11);
      auto emit = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& bb) {
        const double len = (a - bb).norm();
        if (len > 0.0) segs.push_back({0.5 * (a + bb), len});
      };
      if (n_pts == 2) {
        emit(pt[0], pt[1]);
      } else if (n_pts == 4) {
        // saddle: pair (left,right,bottom,top) crossings by the center value
        const double center = 0.25 * (v00 + v10 + v01 + v11);
        if ((center >= level) == (config == 6)) {
          emit(pt[0], pt[3]);  // left-top
          emit(pt[2], pt[1]);  // bottom-right
        } else {
          emit(pt[0], pt[2]);  // left-bottom
          emit(pt[3], pt[1]);  // top-right
        }
      }
    }
  }
  return segs;
}

inline std::vector<LevelSet> extract_level_sets(const GridField& field, int component,
                                                const std::vector<double>& levels) {
  std::vector<LevelSet> out;
  out.reserve(levels.size());
  for (double lv : levels) {
    LevelSet ls;
    ls.level = lv;
    ls.component = component;
    ls.polylines = marching_squares(field, lv);
    out.push_back(std::move(ls));
  }
  return out;
}

struct LevelSetMoments {
  double Z = 0.0;  // level-set mass
  Vector c;        // center of mass
  double V = 0.0;  // level-set variance
};

struct degenerate_level_set : std::runtime_error {
  degenerate_level_set() : std::runtime_error("levelset: density vanishes on the level set") {}
};

// Discretizes the delta-function line integrals: each segment is weighted by
// density x length x 1/||grad e|| at its midpoint (the coarea factor turns
// the delta-function volume integral into a line integral; coarea=false is
// the rough density-length variant).
template <typename DensityFn, typename GradNormFn>
LevelSetMoments level_set_moments(const LevelSet& ls, DensityFn&& density, GradNormFn&& grad_norm,
                                  bool coarea = true) {
  std::size_t vertices = 0;
  for (const auto& pl : ls.polylines) vertices += pl.size();
  if (vertices < 2) throw std::invalid_argument("levelset: moments need at least 2 vertices");

  double Z = 0.0;
  Eigen::Vector2d first_moment = Eigen::Vector2d::Zero();
  std::vector<std::pair<Eigen::Vector2d, double>> weighted;
  for (const auto& pl : ls.polylines) {
    for (std::size_t i = 0; i + 1 < pl.size(); ++i) {
      const Eigen::Vector2d mid = 0.5 * (pl[i] + pl[i + 1]);
      const double len = (pl[i + 1] - pl[i]).norm();
      if (len == 0.0) continue;
      double w = density(Vector(mid)) * len;
      if (coarea) w /= std::max(grad_norm(Vector(mid)), 1e-12);
      Z += w;
      first_moment += w * mid;
      weighted.emplace_back(mid, w);
    }
  }
  if (Z <= 0.0) throw degenerate_level_set{};
  LevelSetMoments m;
  m.Z = Z;
  Eigen::Vector2d c = first_moment / Z;
  m.c = c;
  for (const auto& [mid, w] : weighted) m.V += w * (mid - c).squaredNorm();
  return m;
}

// Encoder surface used by the diagnostics: batched component values and the
// full Jacobian (all k rows) per point, both in raw data coordinates.
struct EncoderFields {
  int k = 1;
  std::function<Matrix(const Matrix&)> encode_batch;                 // N x p -> N x k
  std::function<std::vector<Matrix>(const Matrix&)> jacobian_batch;  // N x p -> N of (k x p)
};

inline EncoderFields make_encoder_fields(const model::DpaModel& m) {
  EncoderFields f;
  f.k = m.k_max;
  f.encode_batch = [&m](const Matrix& Y) { return m.encode(Y); };
  f.jacobian_batch = [&m](const Matrix& Y) {
    const int n = static_cast<int>(Y.rows());
    std::vector<Matrix> out(n, Matrix(m.k_max, Y.cols()));
    // one batched backward pass per component; rows stay independent
    for (int c = 0; c < m.k_max; ++c) {
      nn::Tape t;
      nn::Var x = t.leaf(Y);
      nn::Var centered = t.sub(x, t.leaf(m.stdz.mean.replicate(n, 1)));
      nn::Var scaled = t.mul(centered, t.leaf(m.stdz.inv_std.replicate(n, 1)));
      nn::Var z = const_cast<nn::Mlp&>(m.encoder).forward(t, scaled);
      t.backward(t.sum_all(t.cols(z, c, 1)));
      const Matrix& g = t.grad(x);
      for (int i = 0; i < n; ++i) out[i].row(c) = g.row(i);
    }
    return out;
  };
  return f;
}

struct AlignmentRecord {
  Eigen::Vector2d y;
  Vector lhs;  // (y - c) projected through the full encoder Jacobian
  Vector rhs;  // score projected the same way
  double cos_abs = 0.0;
  double density = 0.0;
  int component = 0;
};

struct AlignmentSummary {
  int component = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double p95 = 0.0;
  int kept = 0;
  int skipped = 0;  // degenerate projections or level sets
};

struct AlignmentResult {
  std::vector<AlignmentRecord> records;
  std::vector<AlignmentSummary> summaries;
  std::vector<std::vector<LevelSet>> level_sets;  // per requested component
};

struct AlignmentOptions {
  GridSpec grid;
  double density_cutoff = 0.005;  // relative to the grid maximum
  int n_levels = 64;              // contour levels stored / used when snap_levels is on
  bool coarea = true;
  // snap_levels=true reproduces the cheaper quantile-snap variant. It leaves a
  // transverse offset in c near each set's critical shell, which caps the mean
  // cosine well below 1 even for an exact optimum; the default contours each
  // grid point's own level, with grid-interpolated density/coarea weights.
  bool snap_levels = false;
};

namespace detail {

inline double weighted_quantile(const std::vector<std::pair<double, double>>& sorted_vw, double q) {
  double total = 0.0;
  for (const auto& [v, w] : sorted_vw) total += w;
  double acc = 0.0;
  for (const auto& [v, w] : sorted_vw) {
    acc += w;
    if (acc >= q * total) return v;
  }
  return sorted_vw.back().first;
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("levelset: quantile of empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

// Moments for a batch of level sets of one component, with the density and
// coarea evaluations batched over all segment midpoints.
inline std::vector<std::optional<LevelSetMoments>> batched_moments(
    const std::vector<LevelSet>& sets, const EncoderFields& enc,
    const data::AnalyticDistribution& dist, int component, bool coarea) {
  struct Seg {
    int set;
    Eigen::Vector2d mid;
    double len;
  };
  std::vector<Seg> segs;
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (const auto& pl : sets[s].polylines)
      for (std::size_t i = 0; i + 1 < pl.size(); ++i) {
        const double len = (pl[i + 1] - pl[i]).norm();
        if (len > 0.0) segs.push_back({static_cast<int>(s), 0.5 * (pl[i] + pl[i + 1]), len});
      }

  std::vector<std::optional<LevelSetMoments>> out(sets.size());
  if (segs.empty()) return out;
  Matrix mids(segs.size(), 2);
  for (std::size_t i = 0; i < segs.size(); ++i) mids.row(i) = segs[i].mid.transpose();
  std::vector<Matrix> jacs;
  if (coarea) jacs = enc.jacobian_batch(mids);

  std::vector<double> Z(sets.size(), 0.0), V(sets.size(), 0.0);
  std::vector<Eigen::Vector2d> M1(sets.size(), Eigen::Vector2d::Zero());
  std::vector<double> w(segs.size());
  for (std::size_t i = 0; i < segs.size(); ++i) {
    double wi = std::exp(dist.log_density(Vector(segs[i].mid))) * segs[i].len;
    if (coarea) wi /= std::max(jacs[i].row(component).norm(), 1e-12);
    w[i] = wi;
    Z[segs[i].set] += wi;
    M1[segs[i].set] += wi * segs[i].mid;
  }
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const int s = segs[i].set;
    if (Z[s] > 0.0) V[s] += w[i] * (segs[i].mid - M1[s] / Z[s]).squaredNorm();
  }
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (Z[s] > 0.0) {
      LevelSetMoments m;
      m.Z = Z[s];
      m.c = Vector(M1[s] / Z[s]);
      m.V = V[s];
      out[s] = m;
    }
  }
  return out;
}

}  // namespace detail

// Theorem-level diagnostic. At every grid point above the density cutoff,
// take the level set of the component through that point, compute its center
// of mass c, and compare the directions of (y - c) D_e^T and s_data(y) D_e^T
// (scalar prefactors discarded). D_e is the full k x p encoder Jacobian;
// records with a vanishing projection are dropped and counted.
inline AlignmentResult score_alignment(const EncoderFields& enc,
                                       const data::AnalyticDistribution& dist,
                                       const std::vector<int>& components,
                                       const AlignmentOptions& opt) {
  const GridSpec& gs = opt.grid;
  Matrix P_all = gs.points();
  Vector logd(P_all.rows());
  for (Eigen::Index r = 0; r < P_all.rows(); ++r) logd(r) = dist.log_density(P_all.row(r).transpose());
  const double log_cut = logd.maxCoeff() + std::log(opt.density_cutoff);

  Matrix Z_all = enc.encode_batch(P_all);  // grid encodings, all components at once
  GridField dens_field = GridField::from_flat(gs, logd.array().exp().matrix());

  std::vector<Eigen::Index> kept_rows;
  for (Eigen::Index r = 0; r < P_all.rows(); ++r)
    if (logd(r) >= log_cut) kept_rows.push_back(r);
  const int n_kept = static_cast<int>(kept_rows.size());
  Matrix P(n_kept, 2), Zk(n_kept, enc.k);
  Vector dens(n_kept);
  for (int i = 0; i < n_kept; ++i) {
    P.row(i) = P_all.row(kept_rows[i]);
    Zk.row(i) = Z_all.row(kept_rows[i]);
    dens(i) = std::exp(logd(kept_rows[i]));
  }
  std::vector<Matrix> jacs = enc.jacobian_batch(P);
  std::vector<Matrix> grid_jacs;  // coarea weights are interpolated from the grid
  if (opt.coarea) grid_jacs = enc.jacobian_batch(P_all);

  AlignmentResult result;
  result.level_sets.resize(components.size());
  for (std::size_t ci = 0; ci < components.size(); ++ci) {
    const int c = components[ci];
    if (c < 0 || c >= enc.k) throw std::invalid_argument("levelset: component out of range");
    GridField field = GridField::from_flat(gs, Z_all.col(c));
    GridField gradnorm;
    if (opt.coarea) {
      Vector gn(P_all.rows());
      for (Eigen::Index r = 0; r < P_all.rows(); ++r) gn(r) = grid_jacs[r].row(c).norm();
      gradnorm = GridField::from_flat(gs, gn);
    }
    auto soup_moments = [&](double level) -> std::optional<LevelSetMoments> {
      auto segs = contour_segments(field, level);
      double Zm = 0.0, V = 0.0;
      Eigen::Vector2d M1 = Eigen::Vector2d::Zero();
      for (const auto& s : segs) {
        double w = dens_field.interpolate(s.mid(0), s.mid(1)) * s.len;
        if (opt.coarea) w /= std::max(gradnorm.interpolate(s.mid(0), s.mid(1)), 1e-12);
        Zm += w;
        M1 += w * s.mid;
      }
      if (Zm <= 0.0) return std::nullopt;
      const Eigen::Vector2d cc = M1 / Zm;
      for (const auto& s : segs) {
        double w = dens_field.interpolate(s.mid(0), s.mid(1)) * s.len;
        if (opt.coarea) w /= std::max(gradnorm.interpolate(s.mid(0), s.mid(1)), 1e-12);
        V += w * (s.mid - cc).squaredNorm();
      }
      LevelSetMoments m;
      m.Z = Zm;
      m.c = Vector(cc);
      m.V = V;
      return m;
    };

    // quantile levels: stored for rendering, and the snap target when enabled
    std::vector<std::pair<double, double>> vw(n_kept);
    for (int i = 0; i < n_kept; ++i) vw[i] = {Zk(i, c), dens(i)};
    std::sort(vw.begin(), vw.end());
    std::vector<double> levels;
    for (int l = 0; l < opt.n_levels; ++l)
      levels.push_back(detail::weighted_quantile(vw, (l + 0.5) / opt.n_levels));
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    result.level_sets[ci] = extract_level_sets(field, c, levels);
    std::vector<std::optional<LevelSetMoments>> snap_moments;
    if (opt.snap_levels)
      for (double lv : levels) snap_moments.push_back(soup_moments(lv));

    std::vector<double> cosines;
    int skipped = 0;
    for (int i = 0; i < n_kept; ++i) {
      std::optional<LevelSetMoments> mom;
      if (opt.snap_levels) {
        auto it = std::lower_bound(levels.begin(), levels.end(), Zk(i, c));
        int idx = static_cast<int>(it - levels.begin());
        if (idx > 0 && (idx == static_cast<int>(levels.size()) ||
                        std::abs(levels[idx - 1] - Zk(i, c)) <= std::abs(levels[idx] - Zk(i, c))))
          --idx;
        mom = snap_moments[idx];
      } else {
        mom = soup_moments(Zk(i, c));
      }
      if (!mom) {
        ++skipped;
        continue;
      }
      Vector diff = P.row(i).transpose() - mom->c;
      Vector lhs = jacs[i] * diff;
      Vector rhs = jacs[i] * dist.score(P.row(i).transpose());
      if (lhs.norm() < 1e-10 || rhs.norm() < 1e-10) {
        ++skipped;
        continue;
      }
      AlignmentRecord rec;
      rec.y = Eigen::Vector2d(P(i, 0), P(i, 1));
      rec.lhs = lhs;
      rec.rhs = rhs;
      rec.cos_abs = std::abs(lhs.dot(rhs)) / (lhs.norm() * rhs.norm());
      rec.density = dens(i);
      rec.component = c;
      cosines.push_back(rec.cos_abs);
      result.records.push_back(std::move(rec));
    }

    AlignmentSummary s;
    s.component = c;
    s.kept = static_cast<int>(cosines.size());
    s.skipped = skipped;
    if (!cosines.empty()) {
      double mean = 0.0;
      for (double v : cosines) mean += v;
      mean /= cosines.size();
      double var = 0.0;
      for (double v : cosines) var += (v - mean) * (v - mean);
      s.mean = mean;
      s.stddev = std::sqrt(var / cosines.size());
      s.p95 = detail::quantile(cosines, 0.95);
    }
    result.summaries.push_back(s);
  }
  return result;
}

struct ExtremumReport {
  Eigen::Vector2d y_star;
  int component = 0;
  double dist_to_c = 0.0;       // branch 1: center of mass at the extremum
  double tangency_ratio = 0.0;  // branch 2: unit-normal component of (y*-c), scale-free
  double branch_min = 0.0;
};

// Corollary check at density extrema: for the level set through each
// extremum, either c(X) sits at the extremum or (y*-c) is tangent to the set.
inline std::vector<ExtremumReport> extrema_check(const EncoderFields& enc,
                                                 const data::AnalyticDistribution& dist,
                                                 const std::vector<Vector>& extrema,
                                                 const AlignmentOptions& opt) {
  std::vector<ExtremumReport> reports;
  if (extrema.empty()) return reports;
  const GridSpec& gs = opt.grid;
  Matrix P_all = gs.points();
  Matrix Z_all = enc.encode_batch(P_all);

  for (const Vector& y_star : extrema) {
    if (!gs.contains(y_star(0), y_star(1))) continue;  // outside grid: skipped
    Matrix row = y_star.transpose();
    Matrix z = enc.encode_batch(row);
    std::vector<Matrix> jac = enc.jacobian_batch(row);
    for (int c = 0; c < enc.k; ++c) {
      GridField field = GridField::from_flat(gs, Z_all.col(c));
      LevelSet ls;
      ls.level = z(0, c);
      ls.component = c;
      ls.polylines = marching_squares(field, ls.level);
      auto moments = detail::batched_moments({ls}, enc, dist, c, opt.coarea);
      if (!moments[0]) continue;
      ExtremumReport rep;
      rep.y_star = Eigen::Vector2d(y_star(0), y_star(1));
      rep.component = c;
      Vector diff = y_star - moments[0]->c;
      rep.dist_to_c = diff.norm();
      Vector g = jac[0].row(c).transpose();
      rep.tangency_ratio = (diff.norm() > 1e-12 && g.norm() > 1e-12)
                               ? std::abs(g.normalized().dot(diff)) / diff.norm()
                               : 0.0;
      rep.branch_min = std::min(rep.dist_to_c, rep.tangency_ratio);
      reports.push_back(rep);
    }
  }
  return reports;
}

inline void write_alignment_csv(const std::filesystem::path& path, const AlignmentResult& res,
                                const std::vector<std::string>& comments = {}) {
  io::CsvTable t;
  t.comments = comments;
  t.header = {"y1", "y2", "cos_abs", "density", "component"};
  for (const auto& r : res.records)
    t.rows.push_back({r.y(0), r.y(1), r.cos_abs, r.density, static_cast<double>(r.component)});
  io::write_csv(path, t);
}

inline void write_alignment_summary_csv(const std::filesystem::path& path, const AlignmentResult& res,
                                        const std::vector<std::string>& comments = {}) {
  io::CsvTable t;
  t.comments = comments;
  t.header = {"component", "mean_abs_cos", "std", "p95", "points_kept", "points_skipped"};
  for (const auto& s : res.summaries)
    t.rows.push_back({static_cast<double>(s.component), s.mean, s.stddev, s.p95,
                      static_cast<double>(s.kept), static_cast<double>(s.skipped)});
  io::write_csv(path, t);
}

}  // namespace dpa::levelset
