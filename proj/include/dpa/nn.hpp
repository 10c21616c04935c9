// Dense reverse-mode autodiff on matrices, MLP layers with optional residual
// blocks and ELU activations, the Adam optimizer, and checkpoint I/O.
//
// The tape records one computation graph per forward pass; node creation order
// is a valid topological order, so backward() is a single reverse sweep.
// Values and gradients are Eigen matrices (batch-major: rows are samples).
#pragma once

#include "dpa/common.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace dpa::nn {

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;  // empty until a backward pass touches it

  void zero_grad() {
    if (grad.size() > 0) grad.setZero();
  }
};

struct Var {
  int id = -1;
};

class Tape {
 public:
  Var leaf(Matrix v) { return push(std::move(v), -1, -1, nullptr); }

  // Registers a parameter as a leaf; backward() accumulates into Param::grad.
  Var watch(Param& p) {
    Var v = leaf(p.value);
    watched_.emplace_back(&p, v.id);
    return v;
  }

  const Matrix& val(Var v) const { return nodes_[v.id].val; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b) {
    const Matrix& A = val(a);
    const Matrix& B = val(b);
    if (A.cols() != B.rows())
      throw std::invalid_argument("nn: matmul shape mismatch " + shape_str(A) + " x " + shape_str(B));
    return push(A * B, a.id, b.id, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad.noalias() += n.grad * t.nodes_[n.p1].val.transpose();
      t.nodes_[n.p1].grad.noalias() += t.nodes_[n.p0].val.transpose() * n.grad;
    });
  }

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    return push(val(a) + val(b), a.id, b.id, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad;
      t.nodes_[n.p1].grad += n.grad;
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    return push(val(a) - val(b), a.id, b.id, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad;
      t.nodes_[n.p1].grad -= n.grad;
    });
  }

  // a: batch x n, bias: 1 x n broadcast over rows.
  Var add_rowvec(Var a, Var bias) {
    const Matrix& A = val(a);
    const Matrix& B = val(bias);
    if (B.rows() != 1 || B.cols() != A.cols())
      throw std::invalid_argument("nn: add_rowvec expects 1x" + std::to_string(A.cols()) + " bias");
    return push(A.rowwise() + B.row(0), a.id, bias.id, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad;
      t.nodes_[n.p1].grad += n.grad.colwise().sum();
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    return push(val(a).cwiseProduct(val(b)), a.id, b.id, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad.cwiseProduct(t.nodes_[n.p1].val);
      t.nodes_[n.p1].grad += n.grad.cwiseProduct(t.nodes_[n.p0].val);
    });
  }

  Var scale(Var a, double s) {
    return push(val(a) * s, a.id, -1, [s](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad * s;
    });
  }

  Var square(Var a) {
    return push(val(a).array().square().matrix(), a.id, -1, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += 2.0 * n.grad.cwiseProduct(t.nodes_[n.p0].val);
    });
  }

  Var exp(Var a) {
    Matrix e = val(a).array().exp().matrix();
    return push(std::move(e), a.id, -1, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad.cwiseProduct(n.val);
    });
  }

  Var log(Var a) {
    return push(val(a).array().log().matrix(), a.id, -1, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad.cwiseQuotient(t.nodes_[n.p0].val);
    });
  }

  Var elu(Var a) {
    const Matrix& A = val(a);
    Matrix out = A.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    return push(std::move(out), a.id, -1, [](Tape& t, const Node& n) {
      const Matrix& x = t.nodes_[n.p0].val;
      Matrix d = x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
      t.nodes_[n.p0].grad += n.grad.cwiseProduct(d);
    });
  }

  Var transpose(Var a) {
    return push(val(a).transpose(), a.id, -1, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad.transpose();
    });
  }

  // Columns [j0, j0+n) of a. n == 0 yields an empty block (used for k=0 prefixes).
  Var cols(Var a, int j0, int n) {
    const Matrix& A = val(a);
    if (j0 < 0 || n < 0 || j0 + n > A.cols())
      throw std::invalid_argument("nn: cols out of range");
    return push(A.middleCols(j0, n), a.id, -1, [j0, n](Tape& t, const Node& n_) {
      t.nodes_[n_.p0].grad.middleCols(j0, n) += n_.grad;
    });
  }

  Var hconcat(Var a, Var b) {
    const Matrix& A = val(a);
    const Matrix& B = val(b);
    if (A.cols() == 0) return b;
    if (B.cols() == 0) return a;
    if (A.rows() != B.rows()) throw std::invalid_argument("nn: hconcat row mismatch");
    Matrix out(A.rows(), A.cols() + B.cols());
    out << A, B;
    const int ac = static_cast<int>(A.cols());
    return push(std::move(out), a.id, b.id, [ac](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad.leftCols(ac);
      t.nodes_[n.p1].grad += n.grad.rightCols(n.grad.cols() - ac);
    });
  }

  // Row-wise ||row||^beta of a batch of difference vectors -> batch x 1.
  // For beta < 2 the derivative is singular at zero rows; those rows get
  // zero gradient (they contribute a constant 0 to the value).
  Var rows_norm_pow(Var a, double beta) {
    const Matrix& A = val(a);
    Vector sq = A.rowwise().squaredNorm();
    Matrix out = sq.array().pow(beta / 2.0).matrix();
    return push(std::move(out), a.id, -1, [beta](Tape& t, const Node& n) {
      const Matrix& A_ = t.nodes_[n.p0].val;
      Vector sq_ = A_.rowwise().squaredNorm();
      // d||r||^beta / dr = beta * ||r||^(beta-2) * r
      Vector coef(sq_.size());
      for (Eigen::Index i = 0; i < sq_.size(); ++i)
        coef(i) = sq_(i) > 1e-300 ? beta * std::pow(sq_(i), beta / 2.0 - 1.0) : 0.0;
      t.nodes_[n.p0].grad += (A_.array().colwise() * (coef.cwiseProduct(n.grad.col(0))).array()).matrix();
    });
  }

  Var sum_rows(Var a) {  // batch x n -> batch x 1
    return push(val(a).rowwise().sum(), a.id, -1, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad += n.grad.col(0).replicate(1, t.nodes_[n.p0].val.cols());
    });
  }

  Var mean_all(Var a) {  // -> 1 x 1
    const Matrix& A = val(a);
    Matrix out(1, 1);
    out(0, 0) = A.mean();
    const double inv = 1.0 / static_cast<double>(A.size());
    return push(std::move(out), a.id, -1, [inv](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad.array() += n.grad(0, 0) * inv;
    });
  }

  Var sum_all(Var a) {
    Matrix out(1, 1);
    out(0, 0) = val(a).sum();
    return push(std::move(out), a.id, -1, [](Tape& t, const Node& n) {
      t.nodes_[n.p0].grad.array() += n.grad(0, 0);
    });
  }

  // col: m x 1 replicated to m x n. Gradient is the row-wise sum.
  Var bcast_col(Var col, int n) {
    const Matrix& C = val(col);
    if (C.cols() != 1) throw std::invalid_argument("nn: bcast_col expects a column");
    return push(C.replicate(1, n), col.id, -1, [](Tape& t, const Node& n_) {
      t.nodes_[n_.p0].grad += n_.grad.rowwise().sum();
    });
  }

  // row: 1 x n replicated to m x n. Gradient is the column-wise sum.
  Var bcast_row(Var row, int m) {
    const Matrix& R = val(row);
    if (R.rows() != 1) throw std::invalid_argument("nn: bcast_row expects a row");
    return push(R.replicate(m, 1), row.id, -1, [](Tape& t, const Node& n_) {
      t.nodes_[n_.p0].grad += n_.grad.colwise().sum();
    });
  }

  // Numerically stable log(sum_j exp(a_ij)) -> m x 1.
  Var logsumexp_rows(Var a) {
    const Matrix& A = val(a);
    Vector mx = A.rowwise().maxCoeff();
    Matrix out(A.rows(), 1);
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      out(i, 0) = mx(i) + std::log((A.row(i).array() - mx(i)).exp().sum());
    return push(std::move(out), a.id, -1, [](Tape& t, const Node& n) {
      const Matrix& A_ = t.nodes_[n.p0].val;
      for (Eigen::Index i = 0; i < A_.rows(); ++i) {
        Eigen::ArrayXd soft = (A_.row(i).array() - n.val(i, 0)).exp();
        t.nodes_[n.p0].grad.row(i) += n.grad(i, 0) * soft.matrix().transpose();
      }
    });
  }

  // Reverse sweep from a scalar loss. Populates Param::grad for watched params.
  void backward(Var loss) {
    if (backward_done_) throw std::runtime_error("nn: backward called twice on the same tape");
    backward_done_ = true;
    const Matrix& L = val(loss);
    if (L.rows() != 1 || L.cols() != 1)
      throw std::invalid_argument("nn: backward expects a 1x1 loss node");
    for (auto& n : nodes_) n.grad = Matrix::Zero(n.val.rows(), n.val.cols());
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      const Node& n = nodes_[i];
      if (n.back) n.back(*this, n);
    }
    for (auto& [param, id] : watched_) {
      if (param->grad.size() == 0) param->grad = Matrix::Zero(param->value.rows(), param->value.cols());
      param->grad += nodes_[id].grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix val;
    Matrix grad;
    int p0 = -1, p1 = -1;
    std::function<void(Tape&, const Node&)> back;
  };

  Var push(Matrix v, int p0, int p1, std::function<void(Tape&, const Node&)> back) {
    Node n;
    n.val = std::move(v);
    n.p0 = p0;
    n.p1 = p1;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument(std::string("nn: ") + op + " shape mismatch " + shape_str(val(a)) +
                                  " vs " + shape_str(val(b)));
  }

  static std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Param*, int>> watched_;
  bool backward_done_ = false;
};

// Multilayer perceptron: x @ W + b per layer, ELU between layers, linear
// output. With residual=true, equal-width hidden transitions become
// h + elu(h @ W + b).
struct Mlp {
  std::vector<int> widths;
  bool residual = false;
  std::vector<Param> weights;  // one W and one b per layer, interleaved in params()
  std::vector<Param> biases;

  static Mlp make(std::vector<int> widths, bool residual, std::uint64_t seed,
                  const std::string& name = "mlp") {
    if (widths.size() < 2) throw std::invalid_argument("nn: mlp needs at least two widths");
    for (int w : widths)
      if (w <= 0) throw std::invalid_argument("nn: nonpositive layer width");
    Mlp m;
    m.widths = std::move(widths);
    m.residual = residual;
    auto rng = make_rng(seed);
    for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
      const int in = m.widths[l], out = m.widths[l + 1];
      const double sd = std::sqrt(2.0 / in);
      Param W{name + ".W" + std::to_string(l), gaussian_matrix(in, out, rng) * sd, {}};
      Param b{name + ".b" + std::to_string(l), Matrix::Zero(1, out), {}};
      m.weights.push_back(std::move(W));
      m.biases.push_back(std::move(b));
    }
    return m;
  }

  int in_width() const { return widths.front(); }
  int out_width() const { return widths.back(); }

  bool residual_at(std::size_t l) const {
    return residual && l + 2 < widths.size() && widths[l] == widths[l + 1];
  }

  // Plain inference path (no tape); bit-identical to the recorded forward.
  Matrix apply(const Matrix& x) const {
    if (x.cols() != in_width())
      throw std::invalid_argument("nn: input has " + std::to_string(x.cols()) + " columns, expected " +
                                  std::to_string(in_width()));
    Matrix h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Matrix lin = (h * weights[l].value).rowwise() + biases[l].value.row(0);
      if (l + 1 == weights.size()) {
        h = std::move(lin);
      } else {
        Matrix act = lin.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
        h = residual_at(l) ? Matrix(h + act) : std::move(act);
      }
    }
    return h;
  }

  Var forward(Tape& t, Var x) {
    if (t.val(x).cols() != in_width())
      throw std::invalid_argument("nn: input has " + std::to_string(t.val(x).cols()) +
                                  " columns, expected " + std::to_string(in_width()));
    Var h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Var lin = t.add_rowvec(t.matmul(h, t.watch(weights[l])), t.watch(biases[l]));
      if (l + 1 == weights.size()) {
        h = lin;
      } else {
        Var act = t.elu(lin);
        h = residual_at(l) ? t.add(h, act) : act;
      }
    }
    return h;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
};

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<Matrix> m, v;

  explicit Adam(double lr_ = 1e-3) : lr(lr_) {}

  void step(const std::vector<Param*>& params) {
    if (m.empty()) {
      for (auto* p : params) {
        m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m.size() != params.size()) throw std::invalid_argument("nn: adam parameter list changed");
    ++step_count;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      if (p.grad.size() == 0) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
      if (!all_finite(p.grad))
        throw std::runtime_error("nn: non-finite gradient for parameter '" + p.name + "'");
      m[i] = beta1 * m[i] + (1.0 - beta1) * p.grad;
      v[i] = beta2 * v[i] + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
      Matrix mhat = m[i] / c1;
      Matrix vhat = v[i] / c2;
      p.value -= lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() + Matrix::Constant(vhat.rows(), vhat.cols(), eps));
    }
  }
};

// --- checkpoint I/O (versioned JSON: shapes + row-major arrays) ---

inline nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data[i * m.cols() + j] = m(i, j);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = j.at("rows"), cols = j.at("cols");
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::runtime_error("nn: checkpoint matrix size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[i * cols + j2];
  return m;
}

inline nlohmann::json mlp_to_json(const Mlp& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < m.weights.size(); ++l)
    layers.push_back({{"W", matrix_to_json(m.weights[l].value)}, {"b", matrix_to_json(m.biases[l].value)}});
  return {{"widths", m.widths}, {"residual", m.residual}, {"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j, const std::string& name = "mlp") {
  Mlp m = Mlp::make(j.at("widths").get<std::vector<int>>(), j.at("residual").get<bool>(), 0, name);
  const auto& layers = j.at("layers");
  if (layers.size() != m.weights.size()) throw std::runtime_error("nn: checkpoint layer count mismatch");
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    m.weights[l].value = matrix_from_json(layers[l].at("W"));
    m.biases[l].value = matrix_from_json(layers[l].at("b"));
  }
  return m;
}

}  // namespace dpa::nn
