// The distributional principal autoencoder: deterministic encoder, stochastic
// decoder fed with noise padding, and the nested energy-score objective
// summed over latent widths k = 0..k_max.
#pragma once

#include "dpa/common.hpp"
#include "dpa/data.hpp"
#include "dpa/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <vector>

namespace dpa::model {

using nn::Mlp;
using nn::Tape;
using nn::Var;

struct Standardizer {
  RowVector mean;
  RowVector inv_std;

  static Standardizer fit(const Matrix& X) {
    Standardizer s;
    s.mean = X.colwise().mean();
    RowVector var = (X.rowwise() - s.mean).array().square().colwise().mean();
    s.inv_std = var.array().sqrt().max(1e-12).inverse();
    return s;
  }
  static Standardizer identity(int p) {
    Standardizer s;
    s.mean = RowVector::Zero(p);
    s.inv_std = RowVector::Ones(p);
    return s;
  }
  Matrix apply(const Matrix& X) const {
    return (X.rowwise() - mean).array().rowwise() * inv_std.array();
  }
  Matrix invert(const Matrix& Z) const {
    return (Z.array().rowwise() / inv_std.array()).matrix().rowwise() + mean;
  }
};

struct DpaConfig {
  int k_max = 2;
  double beta = 2.0;       // 2 for score-alignment runs, 1 for independence runs
  int hidden_width = 64;
  int hidden_layers = 3;
  bool residual = true;
  int m = 2;               // decoder draws per input when estimating the loss
  int epochs = 200;
  int batch = 1024;
  double lr = 1e-3;
  double lr_min_frac = 1.0;   // < 1 enables cosine decay down to lr * lr_min_frac
  std::vector<double> omega;  // empty = uniform weights over k = 0..k_max
  bool standardize = true;
  std::uint64_t seed = 42;

  std::vector<int> encoder_widths(int p) const {
    std::vector<int> w{p};
    for (int i = 0; i < hidden_layers; ++i) w.push_back(hidden_width);
    w.push_back(k_max);
    return w;
  }
  std::vector<int> decoder_widths(int p) const {
    std::vector<int> w{k_max};
    for (int i = 0; i < hidden_layers; ++i) w.push_back(hidden_width);
    w.push_back(p);
    return w;
  }
};

struct EnergyScoreEstimate {
  double reconstruction = 0.0;
  double pairwise = 0.0;
  double L = 0.0;
  int m = 0;
};

// Monte-Carlo energy score terms from explicit decoder draws:
//   reconstruction = mean_i mean_j ||x_i - Y_i^j||^beta
//   pairwise       = mean_i mean over the m(m-1) ordered draw pairs ||Y - Y'||^beta
//   L              = reconstruction - pairwise / 2
inline EnergyScoreEstimate energy_score_terms(const Matrix& x, const std::vector<Matrix>& draws,
                                              double beta) {
  const int m = static_cast<int>(draws.size());
  if (m < 1) throw std::invalid_argument("model: need at least one decoder draw");
  EnergyScoreEstimate est;
  est.m = m;
  for (const Matrix& y : draws)
    est.reconstruction += (x - y).rowwise().norm().array().pow(beta).mean();
  est.reconstruction /= m;
  if (m >= 2) {
    int pairs = 0;
    for (int a = 0; a < m; ++a)
      for (int b = a + 1; b < m; ++b) {
        est.pairwise += (draws[a] - draws[b]).rowwise().norm().array().pow(beta).mean();
        ++pairs;
      }
    est.pairwise /= pairs;  // ordered-pair mean equals the unordered mean by symmetry
  }
  est.L = est.reconstruction - 0.5 * est.pairwise;
  return est;
}

class DpaModel {
 public:
  Mlp encoder;
  Mlp decoder;
  double beta = 2.0;
  int k_max = 0;
  Standardizer stdz;

  int data_dim() const { return encoder.in_width(); }

  // Deterministic: raw coordinates in, latent components out.
  Matrix encode(const Matrix& X) const {
    if (X.cols() != data_dim())
      throw std::invalid_argument("model: encode expects " + std::to_string(data_dim()) + " columns");
    return encoder.apply(stdz.apply(X));
  }

  // Pads latent positions k..k_max-1 with fresh standard normal noise.
  // Stochastic across seeds, deterministic per seed; k = k_max uses no noise.
  Matrix decode(const Matrix& z_prefix, int k, std::uint64_t seed) const {
    if (k < 0 || k > k_max) throw std::invalid_argument("model: k out of [0, k_max]");
    if (z_prefix.cols() != k) throw std::invalid_argument("model: z_prefix must have k columns");
    Matrix zin(z_prefix.rows(), k_max);
    if (k > 0) zin.leftCols(k) = z_prefix;
    if (k < k_max) {
      auto rng = make_rng(seed);
      zin.rightCols(k_max - k) = gaussian_matrix(z_prefix.rows(), k_max - k, rng);
    }
    return stdz.invert(decoder.apply(zin));
  }

  // Full-width deterministic decode (used by the conditional randomization test).
  Matrix decode_full(const Matrix& z_full) const {
    if (z_full.cols() != k_max) throw std::invalid_argument("model: decode_full expects k_max columns");
    return stdz.invert(decoder.apply(z_full));
  }

  // Jacobian of the encoder (including standardization) at a raw-space point:
  // k_max x p, one backward pass per latent component.
  Matrix encoder_jacobian(const Vector& y) const {
    Matrix jac(k_max, data_dim());
    Matrix y_row = y.transpose();
    for (int c = 0; c < k_max; ++c) {
      Tape t;
      Var x = t.leaf(y_row);
      Var centered = t.sub(x, t.leaf(stdz.mean));
      Var scaled = t.mul(centered, t.leaf(stdz.inv_std));
      Mlp& enc = const_cast<Mlp&>(encoder);  // forward() watches params; weights are not modified
      Var out = enc.forward(t, scaled);
      t.backward(t.sum_all(t.cols(out, c, 1)));
      jac.row(c) = t.grad(x).row(0);
    }
    return jac;
  }
};

// Per-input energy score estimate through the model (no gradients).
inline EnergyScoreEstimate energy_score_loss(const DpaModel& model, const Matrix& X_raw, int k, int m,
                                             std::uint64_t seed) {
  if (m < 2) throw std::invalid_argument("model: m must be >= 2 for the pairwise term");
  const Matrix Xs = model.stdz.apply(X_raw);
  const Matrix z = model.encoder.apply(Xs);
  auto rng = make_rng(seed);
  std::vector<Matrix> draws;
  const int m_eff = (k == model.k_max) ? 1 : m;
  for (int j = 0; j < m_eff; ++j) {
    Matrix zin(Xs.rows(), model.k_max);
    if (k > 0) zin.leftCols(k) = z.leftCols(k);
    if (k < model.k_max) zin.rightCols(model.k_max - k) = gaussian_matrix(Xs.rows(), model.k_max - k, rng);
    draws.push_back(model.decoder.apply(zin));
  }
  EnergyScoreEstimate est = energy_score_terms(Xs, draws, model.beta);
  est.m = m_eff;
  return est;
}

struct TrainResult {
  DpaModel model;
  Matrix loss_curves;  // epochs x (k_max + 1), mean per-batch L_k
};

// Minimizes sum_k omega_k L_k by Adam over shuffled mini-batches.
inline TrainResult train_dpa(const Matrix& X_raw, const DpaConfig& cfg) {
  if (cfg.batch < 2) throw std::invalid_argument("model: batch must be >= 2");
  if (cfg.beta <= 0.0 || cfg.beta > 2.0) throw std::invalid_argument("model: beta must be in (0, 2]");
  if (cfg.m < 2) throw std::invalid_argument("model: m must be >= 2");
  const int p = static_cast<int>(X_raw.cols());
  const int n = static_cast<int>(X_raw.rows());

  DpaModel model;
  model.beta = cfg.beta;
  model.k_max = cfg.k_max;
  model.stdz = cfg.standardize ? Standardizer::fit(X_raw) : Standardizer::identity(p);
  model.encoder = Mlp::make(cfg.encoder_widths(p), cfg.residual, derive_seed(cfg.seed, 1), "enc");
  model.decoder = Mlp::make(cfg.decoder_widths(p), cfg.residual, derive_seed(cfg.seed, 2), "dec");

  std::vector<double> omega = cfg.omega;
  if (omega.empty()) omega.assign(cfg.k_max + 1, 1.0 / (cfg.k_max + 1));
  if (static_cast<int>(omega.size()) != cfg.k_max + 1)
    throw std::invalid_argument("model: omega must have k_max + 1 entries");
  for (double w : omega)
    if (w < 0.0 || w > 1.0) throw std::invalid_argument("model: omega entries must lie in [0, 1]");

  const Matrix Xs = model.stdz.apply(X_raw);
  std::vector<nn::Param*> params = model.encoder.params();
  for (auto* pp : model.decoder.params()) params.push_back(pp);
  nn::Adam opt(cfg.lr);

  auto rng = make_rng(derive_seed(cfg.seed, 3));
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);

  Matrix curves(cfg.epochs, cfg.k_max + 1);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.lr_min_frac < 1.0) {
      const double t = epoch / std::max(1.0, cfg.epochs - 1.0);
      const double frac = cfg.lr_min_frac + (1.0 - cfg.lr_min_frac) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
      opt.lr = cfg.lr * frac;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    Vector epoch_lk = Vector::Zero(cfg.k_max + 1);
    int batches = 0;
    for (int start = 0; start + 2 <= n; start += cfg.batch) {
      const int bs = std::min(cfg.batch, n - start);
      if (bs < 2) break;
      Matrix xb(bs, p);
      for (int i = 0; i < bs; ++i) xb.row(i) = Xs.row(idx[start + i]);

      for (auto* pp : params) pp->zero_grad();
      Tape t;
      Var x = t.leaf(xb);
      Var z = model.encoder.forward(t, x);
      Var total = t.leaf(Matrix::Zero(1, 1));
      for (int k = 0; k <= cfg.k_max; ++k) {
        const int m_eff = (k == cfg.k_max) ? 1 : cfg.m;
        std::vector<Var> ys;
        for (int j = 0; j < m_eff; ++j) {
          Var zin;
          if (k == cfg.k_max) {
            zin = z;
          } else {
            Var noise = t.leaf(gaussian_matrix(bs, cfg.k_max - k, rng));
            zin = (k == 0) ? noise : t.hconcat(t.cols(z, 0, k), noise);
          }
          ys.push_back(model.decoder.forward(t, zin));
        }
        Var recon = t.mean_all(t.rows_norm_pow(t.sub(x, ys[0]), cfg.beta));
        for (int j = 1; j < m_eff; ++j)
          recon = t.add(recon, t.mean_all(t.rows_norm_pow(t.sub(x, ys[j]), cfg.beta)));
        recon = t.scale(recon, 1.0 / m_eff);
        Var lk = recon;
        if (m_eff >= 2) {
          int pairs = 0;
          Var pw{-1};
          for (int a = 0; a < m_eff; ++a)
            for (int b = a + 1; b < m_eff; ++b) {
              Var term = t.mean_all(t.rows_norm_pow(t.sub(ys[a], ys[b]), cfg.beta));
              pw = (pairs == 0) ? term : t.add(pw, term);
              ++pairs;
            }
          lk = t.sub(recon, t.scale(pw, 0.5 / pairs));
        }
        epoch_lk(k) += t.val(lk)(0, 0);
        total = t.add(total, t.scale(lk, omega[k]));
      }
      const double loss_val = t.val(total)(0, 0);
      if (!std::isfinite(loss_val))
        throw std::runtime_error("model: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches));
      t.backward(total);
      opt.step(params);
      ++batches;
    }
    curves.row(epoch) = (epoch_lk / std::max(1, batches)).transpose();
  }
  return {std::move(model), std::move(curves)};
}

// Stable post-training loss estimates: full-batch, rep-averaged, for k = 0..k_max.
inline std::vector<EnergyScoreEstimate> evaluate_losses(const DpaModel& model, const Matrix& X_raw,
                                                        int m, int reps, std::uint64_t seed) {
  std::vector<EnergyScoreEstimate> out(model.k_max + 1);
  for (int k = 0; k <= model.k_max; ++k) {
    EnergyScoreEstimate acc;
    for (int r = 0; r < reps; ++r) {
      EnergyScoreEstimate e = energy_score_loss(model, X_raw, k, m, derive_seed(seed, 31 * k + r));
      acc.reconstruction += e.reconstruction;
      acc.pairwise += e.pairwise;
      acc.L += e.L;
      acc.m = e.m;
    }
    acc.reconstruction /= reps;
    acc.pairwise /= reps;
    acc.L /= reps;
    out[k] = acc;
  }
  return out;
}

// --- checkpoints: nn-core format plus DPA metadata ---

inline nlohmann::json dpa_to_json(const DpaModel& m) {
  return {{"format_version", 1},
          {"kind", "dpa"},
          {"beta", m.beta},
          {"k_max", m.k_max},
          {"std_mean", std::vector<double>(m.stdz.mean.data(), m.stdz.mean.data() + m.stdz.mean.size())},
          {"std_inv", std::vector<double>(m.stdz.inv_std.data(), m.stdz.inv_std.data() + m.stdz.inv_std.size())},
          {"encoder", nn::mlp_to_json(m.encoder)},
          {"decoder", nn::mlp_to_json(m.decoder)}};
}

inline DpaModel dpa_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != 1) throw std::runtime_error("model: unknown checkpoint version");
  DpaModel m;
  m.beta = j.at("beta");
  m.k_max = j.at("k_max");
  auto mean = j.at("std_mean").get<std::vector<double>>();
  auto inv = j.at("std_inv").get<std::vector<double>>();
  m.stdz.mean = Eigen::Map<RowVector>(mean.data(), mean.size());
  m.stdz.inv_std = Eigen::Map<RowVector>(inv.data(), inv.size());
  m.encoder = nn::mlp_from_json(j.at("encoder"), "enc");
  m.decoder = nn::mlp_from_json(j.at("decoder"), "dec");
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const DpaModel& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("model: cannot write checkpoint " + path.string());
  out << dpa_to_json(m).dump();
}

inline DpaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("model: cannot read checkpoint " + path.string());
  nlohmann::json j;
  in >> j;
  return dpa_from_json(j);
}

inline void write_loss_curves(const std::filesystem::path& path, const Matrix& curves,
                              const std::vector<std::string>& comments = {}) {
  io::CsvTable t;
  t.comments = comments;
  t.header = {"epoch", "k", "L_k"};
  for (Eigen::Index e = 0; e < curves.rows(); ++e)
    for (Eigen::Index k = 0; k < curves.cols(); ++k)
      t.rows.push_back({static_cast<double>(e), static_cast<double>(k), curves(e, k)});
  io::write_csv(path, t);
}

}  // namespace dpa::model
