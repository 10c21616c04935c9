// Autoencoder baselines for the MFEP comparison: plain AE, VAE, beta-VAE and
// beta-TC-VAE (total-correlation decomposition with minibatch-weighted
// sampling). Variational decoders output a mean with unit observation
// variance, so the reconstruction term is squared error.
#pragma once

#include "dpa/common.hpp"
#include "dpa/model.hpp"
#include "dpa/nn.hpp"

#include <numbers>

namespace dpa::baselines {

using nn::Mlp;
using nn::Tape;
using nn::Var;

enum class BaselineKind { AE, VAE, BetaVAE, BetaTcVae };

inline const char* kind_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::AE: return "ae";
    case BaselineKind::VAE: return "vae";
    case BaselineKind::BetaVAE: return "beta_vae";
    case BaselineKind::BetaTcVae: return "beta_tcvae";
  }
  return "?";
}

inline BaselineKind kind_from_name(const std::string& s) {
  if (s == "ae") return BaselineKind::AE;
  if (s == "vae") return BaselineKind::VAE;
  if (s == "beta_vae") return BaselineKind::BetaVAE;
  if (s == "beta_tcvae") return BaselineKind::BetaTcVae;
  throw config_error("baselines: unknown model kind '" + s + "'");
}

struct BaselineConfig {
  int latent = 2;
  int hidden_width = 100;
  int hidden_layers = 2;
  int epochs = 1200;
  int batch = 5000;        // 256 for the TC-VAE
  double lr = 1e-3;
  double lr_min_frac = 1.0;
  double beta_kl = 4.0;    // beta-VAE weight
  double tc_alpha = 1.0, tc_beta = 6.0, tc_gamma = 1.0;
  bool standardize = true;
  std::uint64_t seed = 42;
};

struct BaselineModel {
  BaselineKind kind = BaselineKind::AE;
  int latent = 2;
  Mlp encoder;  // outputs [mu, logvar] for variational kinds, mu only for the AE
  Mlp decoder;
  model::Standardizer stdz;

  bool variational() const { return kind != BaselineKind::AE; }

  // Deterministic latent (mu); this is what the MFEP comparison encodes.
  Matrix encode_mean(const Matrix& X) const {
    Matrix out = encoder.apply(stdz.apply(X));
    return variational() ? Matrix(out.leftCols(latent)) : out;
  }

  Matrix decode_mean(const Matrix& Z) const { return stdz.invert(decoder.apply(Z)); }

  // k x p Jacobian of the mean latent at a raw point (used for path extraction).
  Matrix encoder_jacobian(const Vector& y) const {
    Matrix jac(latent, y.size());
    Matrix y_row = y.transpose();
    for (int c = 0; c < latent; ++c) {
      Tape t;
      Var x = t.leaf(y_row);
      Var scaled = t.mul(t.sub(x, t.leaf(stdz.mean)), t.leaf(stdz.inv_std));
      Var out = const_cast<Mlp&>(encoder).forward(t, scaled);
      t.backward(t.sum_all(t.cols(out, c, 1)));
      jac.row(c) = t.grad(x).row(0);
    }
    return jac;
  }
};

namespace detail {

struct VaeLossParts {
  Var total;
  double recon = 0.0, kl = 0.0, mi = 0.0, tc = 0.0, dim_kl = 0.0;
};

// log N(z | mu, exp(logvar)) summed over dims happens at the call sites; this
// builds the M x M cross matrix for one latent dim: entry (i, j) is the
// log-density of z_i under component j of the batch posterior.
inline Var cross_log_density(Tape& t, Var z_d, Var mu_d, Var logvar_d, int M) {
  Var zi = t.bcast_col(z_d, M);                       // rows: z_i
  Var muj = t.bcast_row(t.transpose(mu_d), M);        // cols: mu_j
  Var lvj = t.bcast_row(t.transpose(logvar_d), M);
  Var diff2 = t.square(t.sub(zi, muj));
  Var prec = t.exp(t.scale(lvj, -1.0));
  Var quad = t.scale(t.mul(diff2, prec), -0.5);
  Var norm = t.scale(lvj, -0.5);
  Var c = t.leaf(Matrix::Constant(M, M, -0.5 * std::log(2.0 * std::numbers::pi)));
  return t.add(t.add(quad, norm), c);
}

// Builds the training loss on one standardized batch with explicit decoder
// noise (fixed noise makes the loss deterministic for gradient checks).
inline VaeLossParts build_loss(Tape& t, BaselineModel& m, const Matrix& xb, const Matrix& noise,
                               const BaselineConfig& cfg, long dataset_size) {
  const int M = static_cast<int>(xb.rows());
  VaeLossParts parts;
  Var x = t.leaf(xb);
  if (m.kind == BaselineKind::AE) {
    Var xhat = m.decoder.forward(t, m.encoder.forward(t, x));
    parts.total = t.mean_all(t.rows_norm_pow(t.sub(x, xhat), 2.0));
    parts.recon = t.val(parts.total)(0, 0);
    return parts;
  }
  if (m.kind == BaselineKind::BetaTcVae && M < 2)
    throw config_error("baselines: TC-VAE needs batch >= 2 for log-density-ratio estimation");

  Var enc = m.encoder.forward(t, x);
  Var mu = t.cols(enc, 0, m.latent);
  Var logvar = t.cols(enc, m.latent, m.latent);
  Var sigma = t.exp(t.scale(logvar, 0.5));
  Var z = t.add(mu, t.mul(sigma, t.leaf(noise)));
  Var xhat = m.decoder.forward(t, z);
  // Gaussian observation model with unit variance: 0.5 * squared error
  Var recon = t.scale(t.mean_all(t.rows_norm_pow(t.sub(x, xhat), 2.0)), 0.5);
  parts.recon = t.val(recon)(0, 0);

  if (m.kind == BaselineKind::VAE || m.kind == BaselineKind::BetaVAE) {
    // closed-form KL(q(z|x) || N(0, I)) averaged over the batch
    Var mu2 = t.square(mu);
    Var var = t.exp(logvar);
    Var kl_terms = t.sub(t.add(mu2, var), logvar);  // mu^2 + sigma^2 - logvar
    Var kl = t.scale(t.mean_all(t.sum_rows(kl_terms)), 0.5);
    kl = t.add(kl, t.leaf(Matrix::Constant(1, 1, -0.5 * m.latent)));
    parts.kl = t.val(kl)(0, 0);
    const double w = m.kind == BaselineKind::VAE ? 1.0 : cfg.beta_kl;
    parts.total = t.add(recon, t.scale(kl, w));
    return parts;
  }

  // beta-TC-VAE: recon + alpha*MI + beta*TC + gamma*dimwise-KL with
  // minibatch-weighted sampling over the known dataset size
  const double log_mn = std::log(static_cast<double>(M) * static_cast<double>(dataset_size));
  std::vector<Var> per_dim;
  Var joint{-1};
  for (int d = 0; d < m.latent; ++d) {
    Var mat = cross_log_density(t, t.cols(z, d, 1), t.cols(mu, d, 1), t.cols(logvar, d, 1), M);
    per_dim.push_back(mat);
    joint = (d == 0) ? mat : t.add(joint, mat);
  }
  Var log_qz = t.add(t.logsumexp_rows(joint), t.leaf(Matrix::Constant(M, 1, -log_mn)));
  Var log_prod_marg{-1};
  for (int d = 0; d < m.latent; ++d) {
    Var marg = t.add(t.logsumexp_rows(per_dim[d]), t.leaf(Matrix::Constant(M, 1, -log_mn)));
    log_prod_marg = (d == 0) ? marg : t.add(log_prod_marg, marg);
  }
  // log q(z_i | x_i): same per-dim Gaussian evaluated at the own parameters
  Var own = t.scale(t.sum_rows(t.add(t.square(t.leaf(noise)), logvar)), -0.5);
  own = t.add(own, t.leaf(Matrix::Constant(M, 1, -0.5 * m.latent * std::log(2.0 * std::numbers::pi))));
  Var log_pz = t.scale(t.sum_rows(t.square(z)), -0.5);
  log_pz = t.add(log_pz, t.leaf(Matrix::Constant(M, 1, -0.5 * m.latent * std::log(2.0 * std::numbers::pi))));

  Var mi = t.mean_all(t.sub(own, log_qz));
  Var tc = t.mean_all(t.sub(log_qz, log_prod_marg));
  Var dkl = t.mean_all(t.sub(log_prod_marg, log_pz));
  parts.mi = t.val(mi)(0, 0);
  parts.tc = t.val(tc)(0, 0);
  parts.dim_kl = t.val(dkl)(0, 0);
  parts.total = t.add(recon, t.add(t.scale(mi, cfg.tc_alpha),
                                   t.add(t.scale(tc, cfg.tc_beta), t.scale(dkl, cfg.tc_gamma))));
  return parts;
}

}  // namespace detail

struct BaselineTrainResult {
  BaselineModel model;
  Vector loss_curve;  // per-epoch mean total loss
};

inline BaselineTrainResult train_baseline(BaselineKind kind, const Matrix& X_raw,
                                          const BaselineConfig& cfg) {
  if (kind == BaselineKind::BetaTcVae && cfg.batch < 2)
    throw config_error("baselines: TC-VAE needs batch >= 2 for log-density-ratio estimation");
  const int p = static_cast<int>(X_raw.cols());
  const int n = static_cast<int>(X_raw.rows());

  BaselineModel m;
  m.kind = kind;
  m.latent = cfg.latent;
  m.stdz = cfg.standardize ? model::Standardizer::fit(X_raw) : model::Standardizer::identity(p);
  std::vector<int> enc_w{p}, dec_w{cfg.latent};
  for (int i = 0; i < cfg.hidden_layers; ++i) {
    enc_w.push_back(cfg.hidden_width);
    dec_w.push_back(cfg.hidden_width);
  }
  enc_w.push_back(m.variational() ? 2 * cfg.latent : cfg.latent);
  dec_w.push_back(p);
  m.encoder = Mlp::make(enc_w, false, derive_seed(cfg.seed, 11), "enc");
  m.decoder = Mlp::make(dec_w, false, derive_seed(cfg.seed, 12), "dec");

  const Matrix Xs = m.stdz.apply(X_raw);
  std::vector<nn::Param*> params = m.encoder.params();
  for (auto* pp : m.decoder.params()) params.push_back(pp);
  nn::Adam opt(cfg.lr);
  auto rng = make_rng(derive_seed(cfg.seed, 13));
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);

  Vector curve(cfg.epochs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.lr_min_frac < 1.0) {
      const double t = epoch / std::max(1.0, cfg.epochs - 1.0);
      opt.lr = cfg.lr * (cfg.lr_min_frac +
                         (1.0 - cfg.lr_min_frac) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start + 2 <= n; start += cfg.batch) {
      const int bs = std::min(cfg.batch, n - start);
      if (bs < 2) break;
      Matrix xb(bs, p);
      for (int i = 0; i < bs; ++i) xb.row(i) = Xs.row(idx[start + i]);
      Matrix noise = m.variational() ? gaussian_matrix(bs, cfg.latent, rng) : Matrix();

      for (auto* pp : params) pp->zero_grad();
      Tape t;
      auto parts = detail::build_loss(t, m, xb, noise, cfg, n);
      const double loss = t.val(parts.total)(0, 0);
      if (!std::isfinite(loss))
        throw std::runtime_error("baselines: non-finite loss at epoch " + std::to_string(epoch));
      t.backward(parts.total);
      opt.step(params);
      epoch_loss += loss;
      ++batches;
    }
    curve(epoch) = epoch_loss / std::max(1, batches);
  }
  return {std::move(m), std::move(curve)};
}

// Loss parts on a fixed batch and fixed noise (testing hook; no training).
inline detail::VaeLossParts loss_parts_fixed(BaselineModel& m, const Matrix& xb_std,
                                             const Matrix& noise, const BaselineConfig& cfg,
                                             long dataset_size, Tape& t) {
  return detail::build_loss(t, m, xb_std, noise, cfg, dataset_size);
}

}  // namespace dpa::baselines
