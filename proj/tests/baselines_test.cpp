#include "dpa/baselines.hpp"

#include "dpa/data.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace dpa;
using namespace dpa::baselines;

namespace {

// VAE whose encoder passes [mu, logvar] straight through (identity weights),
// so the posterior parameters are chosen by the test input.
BaselineModel rigged_vae(int latent) {
  BaselineModel m;
  m.kind = BaselineKind::VAE;
  m.latent = latent;
  m.stdz = model::Standardizer::identity(2 * latent);
  m.encoder = nn::Mlp::make({2 * latent, 2 * latent}, false, 1, "enc");
  m.encoder.weights[0].value = Matrix::Identity(2 * latent, 2 * latent);
  m.encoder.biases[0].value.setZero();
  m.decoder = nn::Mlp::make({latent, 8, 2 * latent}, false, 2, "dec");
  return m;
}

double model_kl(BaselineModel& m, const Matrix& xb, const Matrix& noise) {
  BaselineConfig cfg;
  nn::Tape t;
  auto parts = loss_parts_fixed(m, xb, noise, cfg, 1000, t);
  return parts.kl;
}

}  // namespace

TEST_CASE("vae kl: encoder at the prior gives exactly zero") {
  BaselineModel m = rigged_vae(2);
  Matrix xb = Matrix::Zero(8, 4);  // mu = 0, logvar = 0
  auto rng = make_rng(3);
  Matrix noise = gaussian_matrix(8, 2, rng);
  CHECK(model_kl(m, xb, noise) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("vae kl: closed form matches a Monte-Carlo estimate within 2 se") {
  BaselineModel m = rigged_vae(2);
  auto rng = make_rng(9);
  Matrix xb(1, 4);
  xb << 0.7, -0.4, 0.5, -0.8;  // mu = (0.7, -0.4), logvar = (0.5, -0.8)
  Matrix noise = Matrix::Zero(1, 2);
  const double closed = model_kl(m, xb, noise);

  // MC: E_q[log q(z) - log p(z)]
  const int n = 200000;
  std::normal_distribution<double> normal;
  Vector samples(n);
  for (int i = 0; i < n; ++i) {
    double lq = 0.0, lp = 0.0;
    for (int d = 0; d < 2; ++d) {
      const double mu = xb(0, d), lv = xb(0, 2 + d);
      const double z = mu + std::exp(0.5 * lv) * normal(rng);
      lq += -0.5 * std::log(2 * std::numbers::pi) - 0.5 * lv - (z - mu) * (z - mu) / (2 * std::exp(lv));
      lp += -0.5 * std::log(2 * std::numbers::pi) - 0.5 * z * z;
    }
    samples(i) = lq - lp;
  }
  const double mc = samples.mean();
  const double se = std::sqrt((samples.array() - mc).square().mean() / n);
  CHECK(std::abs(closed - mc) < 2.0 * se);
}

TEST_CASE("vae: reparameterized ELBO gradient matches finite differences") {
  data::Dataset ds = data::standard_normal_dataset(2, 16, 5);
  BaselineConfig cfg;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  cfg.epochs = 1;
  cfg.batch = 16;
  BaselineModel m = train_baseline(BaselineKind::VAE, ds.X, cfg).model;
  Matrix xb = m.stdz.apply(ds.X);
  auto rng = make_rng(6);
  Matrix noise = gaussian_matrix(16, 2, rng);

  auto loss_at = [&]() {
    nn::Tape t;
    return t.val(loss_parts_fixed(m, xb, noise, cfg, 16, t).total)(0, 0);
  };
  for (auto* par : m.encoder.params()) par->zero_grad();
  for (auto* par : m.decoder.params()) par->zero_grad();
  nn::Tape t;
  auto parts = loss_parts_fixed(m, xb, noise, cfg, 16, t);
  t.backward(parts.total);

  const double h = 1e-5;
  double worst = 0.0;
  for (auto* par : {&m.encoder.weights[0], &m.decoder.weights[0], &m.encoder.biases[1]}) {
    for (Eigen::Index i = 0; i < par->value.rows(); ++i)
      for (Eigen::Index j = 0; j < par->value.cols(); ++j) {
        const double orig = par->value(i, j);
        par->value(i, j) = orig + h;
        const double lp = loss_at();
        par->value(i, j) = orig - h;
        const double lm = loss_at();
        par->value(i, j) = orig;
        const double fd = (lp - lm) / (2 * h);
        const double an = par->grad(i, j);
        worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4}));
      }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("beta-tcvae: with unit weights the decomposition telescopes to the sampled ELBO KL") {
  data::Dataset ds = data::standard_normal_dataset(3, 32, 8);
  BaselineConfig cfg;
  cfg.hidden_width = 12;
  cfg.hidden_layers = 1;
  cfg.epochs = 1;
  cfg.batch = 32;
  cfg.tc_alpha = cfg.tc_beta = cfg.tc_gamma = 1.0;
  BaselineModel m = train_baseline(BaselineKind::BetaTcVae, ds.X, cfg).model;
  Matrix xb = m.stdz.apply(ds.X);
  auto rng = make_rng(10);
  Matrix noise = gaussian_matrix(32, 2, rng);

  nn::Tape t;
  auto parts = loss_parts_fixed(m, xb, noise, cfg, 32, t);
  const double total = t.val(parts.total)(0, 0);

  // independent evaluation: recon + mean_i [log q(z_i | x_i) - log p(z_i)];
  // the estimated marginal terms must cancel exactly
  Matrix enc = m.encoder.apply(xb);
  Matrix mu = enc.leftCols(2), logvar = enc.rightCols(2);
  Matrix z = mu + (logvar.array() * 0.5).exp().matrix().cwiseProduct(noise);
  Matrix xhat = m.decoder.apply(z);
  double recon = 0.5 * (xb - xhat).rowwise().squaredNorm().mean();
  double kl_sampled = 0.0;
  for (int i = 0; i < 32; ++i) {
    double lq = 0.0, lp = 0.0;
    for (int d = 0; d < 2; ++d) {
      lq += -0.5 * std::log(2 * std::numbers::pi) - 0.5 * logvar(i, d) - 0.5 * noise(i, d) * noise(i, d);
      lp += -0.5 * std::log(2 * std::numbers::pi) - 0.5 * z(i, d) * z(i, d);
    }
    kl_sampled += (lq - lp) / 32.0;
  }
  CHECK(total == Catch::Approx(recon + kl_sampled).margin(1e-9));
  CHECK(parts.mi + parts.tc + parts.dim_kl == Catch::Approx(kl_sampled).margin(1e-9));
}

TEST_CASE("ae: identity-capable architecture drives reconstruction error near zero") {
  data::Dataset ds = data::standard_normal_dataset(2, 1000, 21);
  BaselineConfig cfg;
  cfg.latent = 2;
  cfg.hidden_width = 32;
  cfg.hidden_layers = 2;
  cfg.epochs = 400;
  cfg.batch = 256;
  cfg.lr = 2e-3;
  cfg.lr_min_frac = 0.05;
  BaselineTrainResult r = train_baseline(BaselineKind::AE, ds.X, cfg);
  Matrix xhat = r.model.decode_mean(r.model.encode_mean(ds.X));
  const double mse = (ds.X - xhat).rowwise().squaredNorm().mean();
  CHECK(mse < 0.02);
}

TEST_CASE("beta-tcvae: batch below 2 is a config error") {
  data::Dataset ds = data::standard_normal_dataset(2, 16, 3);
  BaselineConfig cfg;
  cfg.batch = 1;
  CHECK_THROWS_AS(train_baseline(BaselineKind::BetaTcVae, ds.X, cfg), config_error);
}

TEST_CASE("baseline encoder jacobian matches finite differences") {
  data::Dataset ds = data::standard_normal_dataset(2, 64, 4);
  BaselineConfig cfg;
  cfg.hidden_width = 16;
  cfg.hidden_layers = 1;
  cfg.epochs = 2;
  cfg.batch = 32;
  BaselineModel m = train_baseline(BaselineKind::BetaVAE, ds.X, cfg).model;
  Vector y(2);
  y << 0.4, -0.9;
  Matrix jac = m.encoder_jacobian(y);
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    Vector yp = y, ym = y;
    yp(j) += h;
    ym(j) -= h;
    Matrix fd = (m.encode_mean(yp.transpose()) - m.encode_mean(ym.transpose())) / (2 * h);
    for (int c = 0; c < 2; ++c)
      CHECK(jac(c, j) == Catch::Approx(fd(0, c)).margin(1e-5));
  }
}

TEST_CASE("model kinds round trip by name") {
  for (auto k : {BaselineKind::AE, BaselineKind::VAE, BaselineKind::BetaVAE, BaselineKind::BetaTcVae})
    CHECK(kind_from_name(kind_name(k)) == k);
  CHECK_THROWS_AS(kind_from_name("factor_vae"), config_error);
}
