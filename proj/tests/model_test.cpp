#include "dpa/model.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

using namespace dpa;
using namespace dpa::model;

namespace {

// Exact population energy score of predicting distribution q for truth p on a
// shared finite support: S(q) = E_p E_q ||X-Y||^b - 0.5 E_q E_q ||Y-Y'||^b.
double population_energy_score(const Matrix& support, const Vector& p, const Vector& q, double beta) {
  const int n = static_cast<int>(support.rows());
  Matrix d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      d(i, j) = std::pow((support.row(i) - support.row(j)).norm(), beta);
  double recon = 0.0, pair = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      recon += p(i) * q(j) * d(i, j);
      pair += q(i) * q(j) * d(i, j);
    }
  return recon - 0.5 * pair;
}

model::DpaModel quick_normal_model(int n, int epochs) {
  data::Dataset ds = data::standard_normal_dataset(2, n, 42);
  DpaConfig cfg;
  cfg.k_max = 2;
  cfg.beta = 2.0;
  cfg.hidden_width = 32;
  cfg.hidden_layers = 2;
  cfg.epochs = epochs;
  cfg.batch = 512;
  cfg.lr = 2e-3;
  cfg.seed = 42;
  return train_dpa(ds.X, cfg).model;
}

// Shared converged model for the statistical checks below; trained once.
const model::DpaModel& normal_model() {
  static model::DpaModel m = quick_normal_model(2000, 200);
  return m;
}

}  // namespace

TEST_CASE("energy score: a decoder that reproduces x exactly scores zero") {
  auto rng = make_rng(5);
  Matrix x = gaussian_matrix(50, 3, rng);
  EnergyScoreEstimate est = energy_score_terms(x, {x, x}, 2.0);
  CHECK(est.reconstruction == 0.0);
  CHECK(est.pairwise == 0.0);
  CHECK(est.L == 0.0);
}

TEST_CASE("energy score: two-point draw enumeration matches the closed form") {
  // x = 0 scalar; draws are iid uniform on {-1, +1}. Enumerate the 4 equally
  // likely draw outcomes and average the estimator.
  Matrix x = Matrix::Zero(1, 1);
  const double vals[2] = {-1.0, 1.0};
  for (double beta : {2.0, 1.0}) {
    double recon = 0.0, pair = 0.0, L = 0.0;
    for (double v1 : vals)
      for (double v2 : vals) {
        Matrix y1 = Matrix::Constant(1, 1, v1), y2 = Matrix::Constant(1, 1, v2);
        EnergyScoreEstimate est = energy_score_terms(x, {y1, y2}, beta);
        recon += est.reconstruction / 4.0;
        pair += est.pairwise / 4.0;
        L += est.L / 4.0;
      }
    if (beta == 2.0) {
      CHECK(recon == Catch::Approx(1.0));
      CHECK(pair == Catch::Approx(2.0));
      CHECK(L == Catch::Approx(0.0).margin(1e-12));
    } else {
      CHECK(recon == Catch::Approx(1.0));
      CHECK(pair == Catch::Approx(1.0));
      CHECK(L == Catch::Approx(0.5));
    }
  }
}

TEST_CASE("energy score: truth never scores worse than any other conditional (4-point toy)") {
  Matrix support(4, 2);
  support << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.5, 1.5;
  Vector p(4);
  p << 0.4, 0.3, 0.2, 0.1;
  const double s_truth = population_energy_score(support, p, p, 1.0);
  auto rng = make_rng(77);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector q(4);
    double tot = 0.0;
    for (int i = 0; i < 4; ++i) {
      q(i) = unif(rng) + 1e-3;
      tot += q(i);
    }
    q /= tot;
    CHECK(s_truth <= population_energy_score(support, p, q, 1.0) + 1e-12);
  }
}

TEST_CASE("energy score: estimate is unbiased in m (doubling m stays within 3 se)") {
  DpaModel m = quick_normal_model(500, 10);
  data::Dataset ds = data::standard_normal_dataset(2, 256, 7);
  auto collect = [&](int mm, int reps) {
    Vector v(reps);
    for (int r = 0; r < reps; ++r) v(r) = energy_score_loss(m, ds.X, 1, mm, derive_seed(99, r)).L;
    return v;
  };
  Vector a = collect(2, 120), b = collect(4, 120);
  const double se = std::sqrt((a.array() - a.mean()).square().mean() / a.size() +
                              (b.array() - b.mean()).square().mean() / b.size());
  CHECK(std::abs(a.mean() - b.mean()) < 3.0 * se);
}

TEST_CASE("encode: zero-weight encoder is constant; calls are bit-deterministic") {
  data::Dataset ds = data::standard_normal_dataset(2, 64, 3);
  DpaConfig cfg;
  cfg.k_max = 2;
  cfg.epochs = 1;
  cfg.batch = 32;
  TrainResult tr = train_dpa(ds.X, cfg);
  DpaModel m = tr.model;
  for (auto& w : m.encoder.weights) w.value.setZero();
  for (auto& b : m.encoder.biases) b.value.setZero();
  Matrix z = m.encode(ds.X);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);

  DpaModel m2 = quick_normal_model(300, 5);
  Matrix z1 = m2.encode(ds.X), z2 = m2.encode(ds.X);
  CHECK((z1 - z2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decode: full-width decode is deterministic, seeds control the padding") {
  DpaModel m = quick_normal_model(300, 5);
  Matrix z = m.encode(data::standard_normal_dataset(2, 16, 9).X);
  Matrix a = m.decode(z, 2, 1), b = m.decode(z, 2, 2);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);  // k = k_max: no noise left
  Matrix c = m.decode(z.leftCols(1), 1, 5), d = m.decode(z.leftCols(1), 1, 5);
  CHECK((c - d).cwiseAbs().maxCoeff() == 0.0);  // same seed
  Matrix e = m.decode(z.leftCols(1), 1, 6);
  CHECK((c - e).cwiseAbs().maxCoeff() > 0.0);  // fresh seed
  CHECK_THROWS_AS(m.decode(z, 3, 1), std::invalid_argument);
}

TEST_CASE("decode: k = 0 generative samples match the data mean") {
  const DpaModel& m = normal_model();
  Matrix z0(10000, 0);
  Matrix samples = m.decode(z0, 0, 11);
  CHECK(std::abs(samples.col(0).mean()) < 0.1);
  CHECK(std::abs(samples.col(1).mean()) < 0.1);
}

TEST_CASE("training: nested losses decrease in k at convergence (2 se slack)") {
  const DpaModel& m = normal_model();
  data::Dataset holdout = data::standard_normal_dataset(2, 2000, 101);
  const int reps = 24;
  Matrix L(reps, m.k_max + 1);
  for (int k = 0; k <= m.k_max; ++k)
    for (int r = 0; r < reps; ++r)
      L(r, k) = energy_score_loss(m, holdout.X, k, 4, derive_seed(55, 100 * k + r)).L;
  for (int k = 0; k < m.k_max; ++k) {
    const double mean_hi = L.col(k).mean(), mean_lo = L.col(k + 1).mean();
    const double se = std::sqrt((L.col(k).array() - mean_hi).square().mean() / reps +
                                (L.col(k + 1).array() - mean_lo).square().mean() / reps);
    CHECK(mean_hi >= mean_lo - 2.0 * se);
  }
  // more latents explain strictly more on Gaussian data
  CHECK(L.col(0).mean() > L.col(m.k_max).mean());
}

TEST_CASE("training: config validation") {
  data::Dataset ds = data::standard_normal_dataset(2, 64, 3);
  DpaConfig cfg;
  cfg.beta = 2.5;
  CHECK_THROWS_AS(train_dpa(ds.X, cfg), std::invalid_argument);
  cfg.beta = 1.0;
  cfg.m = 1;
  CHECK_THROWS_AS(train_dpa(ds.X, cfg), std::invalid_argument);
  cfg.m = 2;
  cfg.omega = {0.5, 0.5};  // wrong length for k_max = 2
  CHECK_THROWS_AS(train_dpa(ds.X, cfg), std::invalid_argument);
}

TEST_CASE("checkpoint: DPA metadata and weights round trip") {
  DpaModel m = quick_normal_model(300, 5);
  auto dir = std::filesystem::temp_directory_path() / "dpa_model_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "m.json", m);
  DpaModel r = load_checkpoint(dir / "m.json");
  CHECK(r.beta == m.beta);
  CHECK(r.k_max == m.k_max);
  data::Dataset ds = data::standard_normal_dataset(2, 32, 4);
  CHECK((r.encode(ds.X) - m.encode(ds.X)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.decode_full(m.encode(ds.X)) - m.decode_full(m.encode(ds.X))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("training: loss curves are recorded per epoch and per k") {
  data::Dataset ds = data::standard_normal_dataset(2, 256, 3);
  DpaConfig cfg;
  cfg.k_max = 2;
  cfg.epochs = 5;
  cfg.batch = 128;
  cfg.hidden_width = 16;
  cfg.hidden_layers = 2;
  TrainResult tr = train_dpa(ds.X, cfg);
  CHECK(tr.loss_curves.rows() == 5);
  CHECK(tr.loss_curves.cols() == 3);
  CHECK(all_finite(tr.loss_curves));
  auto dir = std::filesystem::temp_directory_path() / "dpa_model_test";
  std::filesystem::create_directories(dir);
  write_loss_curves(dir / "curves.csv", tr.loss_curves);
  CHECK(io::read_csv(dir / "curves.csv").rows.size() == 15);
}
