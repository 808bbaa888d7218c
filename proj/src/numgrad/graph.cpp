#include "loopsr/numgrad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "loopsr/common/error.hpp"

namespace loopsr::numgrad {

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Graph::Graph() { nodes_.reserve(256); }

Graph::Graph(const ParamSet& params) : params_(&params) { nodes_.reserve(256); }

Var Graph::push(Matrix value, const char* op, std::initializer_list<Var> inputs) {
  return push(std::move(value), op, std::span<const Var>(inputs.begin(), inputs.size()));
}

Var Graph::push(Matrix value, const char* op, std::span<const Var> inputs) {
  if (!value.allFinite()) throw NumericalError(op, "output " + dims(value));
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (Var in : inputs) node.requires_grad = node.requires_grad || needs(in);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Matrix& Graph::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename Expr>
void Graph::accumulate(Var v, const Expr& g) {
  if (!needs(v)) return;
  grad_ref(v) += g;
}

void Graph::require_same_shape(Var a, Var b, const char* op) const {
  if (rows(a) != rows(b) || cols(a) != cols(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + dims(value(a)) + " vs " +
                         dims(value(b)));
  }
}

Var Graph::param(std::string_view name) {
  if (!params_) throw UsageError("graph has no bound parameters");
  auto idx = params_->index_of(name);
  if (!idx) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  if (auto it = param_vars_.find(*idx); it != param_vars_.end()) return it->second;
  const Tensor& t = params_->at(*idx);
  Matrix m = t.as_matrix();
  if (t.rank() == 1) m.resize(1, static_cast<Eigen::Index>(t.size()));
  Var v = push(std::move(m), "param", {});
  nodes_[v.id].requires_grad = true;
  nodes_[v.id].param_index = static_cast<int>(*idx);
  param_vars_.emplace(*idx, v);
  return v;
}

Var Graph::constant(Matrix value) { return push(std::move(value), "constant", {}); }

Var Graph::scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

double Graph::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.size() != 1) throw DimensionError("scalar() on " + dims(m));
  return m(0, 0);
}

void Graph::backward(Var loss) {
  if (backward_done_) throw UsageError("backward() may only be called once per graph");
  if (value(loss).size() != 1) throw DimensionError("loss must be 1x1, got " + dims(value(loss)));
  backward_done_ = true;
  if (!needs(loss)) return;
  grad_ref(loss)(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward();
    if (!n.grad.allFinite()) throw NumericalError(n.op, "gradient " + dims(n.grad));
  }
}

ParamSet Graph::gradients() const {
  if (!params_) return {};
  ParamSet out = params_->zeros_like();
  for (const auto& [index, var] : param_vars_) {
    const Matrix& g = nodes_[var.id].grad;
    if (g.size() == 0) continue;
    Tensor& dst = out.at(index);
    std::copy(g.data(), g.data() + g.size(), dst.values().begin());
  }
  return out;
}

Matrix Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Graph::matmul(Var a, Var b) {
  if (cols(a) != rows(b)) {
    throw DimensionError("matmul: " + dims(value(a)) + " * " + dims(value(b)));
  }
  Matrix out = value(a) * value(b);
  Var o = push(std::move(out), "matmul", {a, b});
  nodes_[o.id].backward = [this, a, b, o] {
    const Matrix& g = nodes_[o.id].grad;
    if (needs(a)) grad_ref(a).noalias() += g * value(b).transpose();
    if (needs(b)) grad_ref(b).noalias() += value(a).transpose() * g;
  };
  return o;
}

Var Graph::affine(Var x, Var weight, Var bias) {
  if (cols(x) != rows(weight) || rows(bias) != 1 || cols(bias) != cols(weight)) {
    throw DimensionError("affine: x " + dims(value(x)) + ", W " + dims(value(weight)) + ", b " +
                         dims(value(bias)));
  }
  Matrix out = value(x) * value(weight);
  out.rowwise() += value(bias).row(0);
  Var o = push(std::move(out), "affine", {x, weight, bias});
  nodes_[o.id].backward = [this, x, weight, bias, o] {
    const Matrix& g = nodes_[o.id].grad;
    if (needs(x)) grad_ref(x).noalias() += g * value(weight).transpose();
    if (needs(weight)) grad_ref(weight).noalias() += value(x).transpose() * g;
    if (needs(bias)) grad_ref(bias) += g.colwise().sum();
  };
  return o;
}

Var Graph::transpose(Var a) {
  Var o = push(value(a).transpose(), "transpose", {a});
  nodes_[o.id].backward = [this, a, o] { accumulate(a, nodes_[o.id].grad.transpose()); };
  return o;
}

// ---------------------------------------------------------------------------
// Elementwise

Var Graph::add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Var o = push(value(a) + value(b), "add", {a, b});
  nodes_[o.id].backward = [this, a, b, o] {
    accumulate(a, nodes_[o.id].grad);
    accumulate(b, nodes_[o.id].grad);
  };
  return o;
}

Var Graph::sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Var o = push(value(a) - value(b), "sub", {a, b});
  nodes_[o.id].backward = [this, a, b, o] {
    accumulate(a, nodes_[o.id].grad);
    accumulate(b, -nodes_[o.id].grad);
  };
  return o;
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Var o = push(value(a).cwiseProduct(value(b)), "mul", {a, b});
  nodes_[o.id].backward = [this, a, b, o] {
    const Matrix& g = nodes_[o.id].grad;
    accumulate(a, g.cwiseProduct(value(b)));
    accumulate(b, g.cwiseProduct(value(a)));
  };
  return o;
}

Var Graph::minimum(Var a, Var b) {
  require_same_shape(a, b, "minimum");
  Var o = push(value(a).cwiseMin(value(b)), "minimum", {a, b});
  nodes_[o.id].backward = [this, a, b, o] {
    const Matrix& g = nodes_[o.id].grad;
    // ties route the gradient to the first operand
    auto pick_a = (value(a).array() <= value(b).array()).cast<double>();
    accumulate(a, (g.array() * pick_a).matrix());
    accumulate(b, (g.array() * (1.0 - pick_a)).matrix());
  };
  return o;
}

Var Graph::scale(Var a, double s) {
  Var o = push(value(a) * s, "scale", {a});
  nodes_[o.id].backward = [this, a, o, s] { accumulate(a, nodes_[o.id].grad * s); };
  return o;
}

Var Graph::add_scalar(Var a, double s) {
  Var o = push((value(a).array() + s).matrix(), "add_scalar", {a});
  nodes_[o.id].backward = [this, a, o] { accumulate(a, nodes_[o.id].grad); };
  return o;
}

Var Graph::tanh(Var a) {
  Var o = push(tanh_values(value(a)), "tanh", {a});
  nodes_[o.id].backward = [this, a, o] {
    const auto y = value(o).array();
    accumulate(a, (nodes_[o.id].grad.array() * (1.0 - y * y)).matrix());
  };
  return o;
}

Var Graph::gelu(Var a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = value(a).unaryExpr([inv_sqrt2](double x) {
    return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  });
  Var o = push(std::move(out), "gelu", {a});
  nodes_[o.id].backward = [this, a, o, inv_sqrt2] {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = value(a).unaryExpr([inv_sqrt2, inv_sqrt_2pi](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    accumulate(a, nodes_[o.id].grad.cwiseProduct(d));
  };
  return o;
}

Var Graph::sigmoid(Var a) {
  Matrix out = value(a).unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  Var o = push(std::move(out), "sigmoid", {a});
  nodes_[o.id].backward = [this, a, o] {
    const auto y = value(o).array();
    accumulate(a, (nodes_[o.id].grad.array() * y * (1.0 - y)).matrix());
  };
  return o;
}

Var Graph::exp(Var a) {
  Var o = push(value(a).array().exp().matrix(), "exp", {a});
  nodes_[o.id].backward = [this, a, o] {
    accumulate(a, nodes_[o.id].grad.cwiseProduct(value(o)));
  };
  return o;
}

Var Graph::log(Var a) {
  Var o = push(value(a).array().log().matrix(), "log", {a});
  nodes_[o.id].backward = [this, a, o] {
    accumulate(a, nodes_[o.id].grad.cwiseQuotient(value(a)));
  };
  return o;
}

Var Graph::square(Var a) {
  Var o = push(value(a).array().square().matrix(), "square", {a});
  nodes_[o.id].backward = [this, a, o] {
    accumulate(a, (2.0 * nodes_[o.id].grad.array() * value(a).array()).matrix());
  };
  return o;
}

Var Graph::abs(Var a) {
  Var o = push(value(a).cwiseAbs(), "abs", {a});
  nodes_[o.id].backward = [this, a, o] {
    Matrix sign = value(a).unaryExpr([](double x) { return double((x > 0) - (x < 0)); });
    accumulate(a, nodes_[o.id].grad.cwiseProduct(sign));
  };
  return o;
}

Var Graph::clamp(Var a, double lo, double hi) {
  Var o = push(value(a).cwiseMax(lo).cwiseMin(hi), "clamp", {a});
  nodes_[o.id].backward = [this, a, o, lo, hi] {
    const auto x = value(a).array();
    auto inside = ((x > lo) && (x < hi)).cast<double>();
    accumulate(a, (nodes_[o.id].grad.array() * inside).matrix());
  };
  return o;
}

// ---------------------------------------------------------------------------
// Shape

Var Graph::broadcast(Var a, Eigen::Index r, Eigen::Index c) {
  const Matrix& v = value(a);
  const bool row_ok = v.rows() == r || v.rows() == 1;
  const bool col_ok = v.cols() == c || v.cols() == 1;
  if (!row_ok || !col_ok) {
    throw DimensionError("broadcast: cannot expand " + dims(v) + " to " + std::to_string(r) +
                         "x" + std::to_string(c));
  }
  Matrix out = v.replicate(r / v.rows(), c / v.cols());
  Var o = push(std::move(out), "broadcast", {a});
  nodes_[o.id].backward = [this, a, o] {
    const Matrix& g = nodes_[o.id].grad;
    const Matrix& src = value(a);
    Matrix reduced = g;
    if (src.rows() == 1 && g.rows() != 1) reduced = reduced.colwise().sum().eval();
    if (src.cols() == 1 && g.cols() != 1) reduced = reduced.rowwise().sum().eval();
    accumulate(a, reduced);
  };
  return o;
}

Var Graph::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > cols(a)) {
    throw DimensionError("slice_cols out of range on " + dims(value(a)));
  }
  Var o = push(value(a).middleCols(start, count), "slice_cols", {a});
  nodes_[o.id].backward = [this, a, o, start, count] {
    if (needs(a)) grad_ref(a).middleCols(start, count) += nodes_[o.id].grad;
  };
  return o;
}

Var Graph::slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > rows(a)) {
    throw DimensionError("slice_rows out of range on " + dims(value(a)));
  }
  Var o = push(value(a).middleRows(start, count), "slice_rows", {a});
  nodes_[o.id].backward = [this, a, o, start, count] {
    if (needs(a)) grad_ref(a).middleRows(start, count) += nodes_[o.id].grad;
  };
  return o;
}

Var Graph::gather_rows(Var a, std::span<const std::size_t> indices) {
  const Matrix& src = value(a);
  Matrix out(static_cast<Eigen::Index>(indices.size()), src.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= static_cast<std::size_t>(src.rows())) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " >= " +
                           std::to_string(src.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(indices[i]));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  Var o = push(std::move(out), "gather_rows", {a});
  nodes_[o.id].backward = [this, a, o, idx] {
    if (!needs(a)) return;
    Matrix& ga = grad_ref(a);
    const Matrix& g = nodes_[o.id].grad;
    for (std::size_t i = 0; i < idx->size(); ++i) {
      ga.row(static_cast<Eigen::Index>((*idx)[i])) += g.row(static_cast<Eigen::Index>(i));
    }
  };
  return o;
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Eigen::Index r = rows(parts[0]);
  Eigen::Index c = 0;
  for (Var p : parts) {
    if (rows(p) != r) throw DimensionError("concat_cols: row mismatch");
    c += cols(p);
  }
  Matrix out(r, c);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, cols(p)) = value(p);
    at += cols(p);
  }
  auto saved = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  Var o = push(std::move(out), "concat_cols", parts);
  nodes_[o.id].backward = [this, saved, o] {
    Eigen::Index at = 0;
    for (Var p : *saved) {
      if (needs(p)) grad_ref(p) += nodes_[o.id].grad.middleCols(at, cols(p));
      at += cols(p);
    }
  };
  return o;
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Eigen::Index c = cols(parts[0]);
  Eigen::Index r = 0;
  for (Var p : parts) {
    if (cols(p) != c) throw DimensionError("concat_rows: column mismatch");
    r += rows(p);
  }
  Matrix out(r, c);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, rows(p)) = value(p);
    at += rows(p);
  }
  auto saved = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  Var o = push(std::move(out), "concat_rows", parts);
  nodes_[o.id].backward = [this, saved, o] {
    Eigen::Index at = 0;
    for (Var p : *saved) {
      if (needs(p)) grad_ref(p) += nodes_[o.id].grad.middleRows(at, rows(p));
      at += rows(p);
    }
  };
  return o;
}

Var Graph::interleave_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("interleave_rows: no inputs");
  const Eigen::Index r = rows(parts[0]);
  const Eigen::Index c = cols(parts[0]);
  for (Var p : parts) {
    if (rows(p) != r || cols(p) != c) throw DimensionError("interleave_rows: shape mismatch");
  }
  const auto k = static_cast<Eigen::Index>(parts.size());
  Matrix out(r * k, c);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Matrix& src = value(parts[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < r; ++i) out.row(i * k + j) = src.row(i);
  }
  auto saved = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  Var o = push(std::move(out), "interleave_rows", parts);
  nodes_[o.id].backward = [this, saved, o, r, k] {
    const Matrix& g = nodes_[o.id].grad;
    for (Eigen::Index j = 0; j < k; ++j) {
      Var p = (*saved)[static_cast<std::size_t>(j)];
      if (!needs(p)) continue;
      Matrix& gp = grad_ref(p);
      for (Eigen::Index i = 0; i < r; ++i) gp.row(i) += g.row(i * k + j);
    }
  };
  return o;
}

// ---------------------------------------------------------------------------
// Reductions

Var Graph::sum(Var a) {
  Var o = push(Matrix::Constant(1, 1, value(a).sum()), "sum", {a});
  nodes_[o.id].backward = [this, a, o] {
    if (needs(a)) grad_ref(a).array() += nodes_[o.id].grad(0, 0);
  };
  return o;
}

Var Graph::mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  Var o = push(Matrix::Constant(1, 1, value(a).sum() / n), "mean", {a});
  nodes_[o.id].backward = [this, a, o, n] {
    if (needs(a)) grad_ref(a).array() += nodes_[o.id].grad(0, 0) / n;
  };
  return o;
}

Var Graph::sum_over_rows(Var a) {
  Var o = push(value(a).colwise().sum(), "sum_over_rows", {a});
  nodes_[o.id].backward = [this, a, o] {
    if (needs(a)) grad_ref(a).rowwise() += nodes_[o.id].grad.row(0);
  };
  return o;
}

Var Graph::sum_over_cols(Var a) {
  Var o = push(value(a).rowwise().sum(), "sum_over_cols", {a});
  nodes_[o.id].backward = [this, a, o] {
    if (needs(a)) grad_ref(a).colwise() += nodes_[o.id].grad.col(0);
  };
  return o;
}

Var Graph::segment_mean_rows(Var a, std::size_t seg_len) {
  const auto seg = static_cast<Eigen::Index>(seg_len);
  if (seg <= 0 || rows(a) % seg != 0) {
    throw DimensionError("segment_mean_rows: " + std::to_string(rows(a)) +
                         " rows not divisible by " + std::to_string(seg_len));
  }
  const Eigen::Index n = rows(a) / seg;
  Matrix out(n, cols(a));
  for (Eigen::Index s = 0; s < n; ++s) {
    out.row(s) = value(a).middleRows(s * seg, seg).colwise().mean();
  }
  Var o = push(std::move(out), "segment_mean_rows", {a});
  nodes_[o.id].backward = [this, a, o, seg, n] {
    if (!needs(a)) return;
    Matrix& ga = grad_ref(a);
    const Matrix& g = nodes_[o.id].grad;
    for (Eigen::Index s = 0; s < n; ++s) {
      ga.middleRows(s * seg, seg).rowwise() += g.row(s) / static_cast<double>(seg);
    }
  };
  return o;
}

// ---------------------------------------------------------------------------
// Normalizations

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& in = value(x);
  const Eigen::Index d = in.cols();
  if (rows(gamma) != 1 || cols(gamma) != d || rows(beta) != 1 || cols(beta) != d) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  auto xhat = std::make_shared<Matrix>(in.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(in.rows());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const double mu = in.row(i).mean();
    const double var = (in.row(i).array() - mu).square().mean();
    (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
    xhat->row(i) = (in.row(i).array() - mu) * (*inv_std)(i);
  }
  Matrix out = xhat->array().rowwise() * value(gamma).row(0).array();
  out.rowwise() += value(beta).row(0);
  Var o = push(std::move(out), "layer_norm", {x, gamma, beta});
  nodes_[o.id].backward = [this, x, gamma, beta, o, xhat, inv_std, d] {
    const Matrix& g = nodes_[o.id].grad;
    if (needs(beta)) grad_ref(beta) += g.colwise().sum();
    if (needs(gamma)) grad_ref(gamma) += g.cwiseProduct(*xhat).colwise().sum();
    if (!needs(x)) return;
    Matrix dxhat = g.array().rowwise() * value(gamma).row(0).array();
    Matrix& gx = grad_ref(x);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double m1 = dxhat.row(i).sum() * inv_d;
      const double m2 = dxhat.row(i).dot(xhat->row(i)) * inv_d;
      gx.row(i).array() +=
          (*inv_std)(i) * (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
    }
  };
  return o;
}

Var Graph::softmax_rows(Var a) {
  Matrix out = value(a);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i).array() -= out.row(i).maxCoeff();
    out.row(i) = out.row(i).array().exp();
    out.row(i) /= out.row(i).sum();
  }
  Var o = push(std::move(out), "softmax_rows", {a});
  nodes_[o.id].backward = [this, a, o] {
    if (!needs(a)) return;
    const Matrix& y = value(o);
    const Matrix& g = nodes_[o.id].grad;
    Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    grad_ref(a) += (y.array() * (g.array().colwise() - dots.array())).matrix();
  };
  return o;
}

Var Graph::log_softmax_rows(Var a) {
  Matrix out = value(a);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    out.row(i).array() -= lse;
  }
  Var o = push(std::move(out), "log_softmax_rows", {a});
  nodes_[o.id].backward = [this, a, o] {
    if (!needs(a)) return;
    const Matrix& g = nodes_[o.id].grad;
    Matrix p = value(o).array().exp();
    Eigen::VectorXd gsum = g.rowwise().sum();
    grad_ref(a) += g - (p.array().colwise() * gsum.array()).matrix();
  };
  return o;
}

Var Graph::l2_normalize_rows(Var a) {
  const Matrix& in = value(a);
  Eigen::VectorXd norms = in.rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw NumericalError("l2_normalize_rows", "zero-norm row");
  Matrix out = in.array().colwise() / norms.array();
  auto saved_norms = std::make_shared<Eigen::VectorXd>(std::move(norms));
  Var o = push(std::move(out), "l2_normalize_rows", {a});
  nodes_[o.id].backward = [this, a, o, saved_norms] {
    if (!needs(a)) return;
    const Matrix& y = value(o);
    const Matrix& g = nodes_[o.id].grad;
    Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix d = g - (y.array().colwise() * dots.array()).matrix();
    grad_ref(a) += (d.array().colwise() / saved_norms->array()).matrix();
  };
  return o;
}

// ---------------------------------------------------------------------------
// Attention

Var Graph::self_attention(Var qkv, const AttentionSpec& spec) {
  const Matrix& in = value(qkv);
  const Eigen::Index total = in.rows();
  if (in.cols() % 3 != 0) throw DimensionError("self_attention: columns must be 3*d");
  const Eigen::Index d = in.cols() / 3;
  const auto heads = static_cast<Eigen::Index>(spec.heads);
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError("self_attention: model width " + std::to_string(d) +
                      " not divisible by head count " + std::to_string(spec.heads));
  }
  const auto seq = static_cast<Eigen::Index>(spec.seq_len == 0 ? total : spec.seq_len);
  if (seq <= 0 || total % seq != 0) {
    throw DimensionError("self_attention: rows not divisible by sequence length");
  }
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto window = static_cast<Eigen::Index>(spec.window);
  const bool causal = spec.causal;

  auto key_range = [=](Eigen::Index i) {
    Eigen::Index lo = 0;
    Eigen::Index hi = causal ? i : seq - 1;
    if (window > 0) {
      lo = std::max<Eigen::Index>(0, i - window + 1);
      if (!causal) hi = std::min<Eigen::Index>(seq - 1, i + window - 1);
    }
    return std::pair{lo, hi};
  };

  // probabilities for every (sequence, head, query) row, packed back to back
  auto probs = std::make_shared<std::vector<double>>();
  auto offsets = std::make_shared<std::vector<std::size_t>>();
  offsets->reserve(static_cast<std::size_t>(total * heads) + 1);
  Matrix out = Matrix::Zero(total, d);
  std::vector<double> scores;

  for (Eigen::Index s = 0; s < total / seq; ++s) {
    const Eigen::Index base = s * seq;
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Eigen::Index qc = h * dh, kc = d + h * dh, vc = 2 * d + h * dh;
      for (Eigen::Index i = 0; i < seq; ++i) {
        const auto [lo, hi] = key_range(i);
        const double* q = &in(base + i, qc);
        scores.resize(static_cast<std::size_t>(hi - lo + 1));
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = lo; j <= hi; ++j) {
          const double* k = &in(base + j, kc);
          double acc = 0.0;
          for (Eigen::Index c = 0; c < dh; ++c) acc += q[c] * k[c];
          acc *= scale;
          scores[static_cast<std::size_t>(j - lo)] = acc;
          mx = std::max(mx, acc);
        }
        double z = 0.0;
        for (double& v : scores) {
          v = std::exp(v - mx);
          z += v;
        }
        offsets->push_back(probs->size());
        double* o_row = &out(base + i, qc);
        for (Eigen::Index j = lo; j <= hi; ++j) {
          const double p = scores[static_cast<std::size_t>(j - lo)] / z;
          probs->push_back(p);
          const double* v = &in(base + j, vc);
          for (Eigen::Index c = 0; c < dh; ++c) o_row[c] += p * v[c];
        }
      }
    }
  }

  Var o = push(std::move(out), "self_attention", {qkv});
  nodes_[o.id].backward = [this, qkv, o, probs, offsets, key_range, total, seq, heads, d, dh,
                           scale] {
    if (!needs(qkv)) return;
    const Matrix& in = value(qkv);
    const Matrix& g = nodes_[o.id].grad;
    Matrix& gin = grad_ref(qkv);
    std::vector<double> dp;
    std::size_t row = 0;
    for (Eigen::Index s = 0; s < total / seq; ++s) {
      const Eigen::Index base = s * seq;
      for (Eigen::Index h = 0; h < heads; ++h) {
        const Eigen::Index qc = h * dh, kc = d + h * dh, vc = 2 * d + h * dh;
        for (Eigen::Index i = 0; i < seq; ++i, ++row) {
          const auto [lo, hi] = key_range(i);
          const double* p = probs->data() + (*offsets)[row];
          const double* go = &g(base + i, qc);
          const auto n = static_cast<std::size_t>(hi - lo + 1);
          dp.resize(n);
          double dot = 0.0;
          for (Eigen::Index j = lo; j <= hi; ++j) {
            const auto jj = static_cast<std::size_t>(j - lo);
            const double* v = &in(base + j, vc);
            double acc = 0.0;
            for (Eigen::Index c = 0; c < dh; ++c) acc += go[c] * v[c];
            dp[jj] = acc;
            dot += p[jj] * acc;
            double* gv = &gin(base + j, vc);
            for (Eigen::Index c = 0; c < dh; ++c) gv[c] += p[jj] * go[c];
          }
          const double* q = &in(base + i, qc);
          double* gq = &gin(base + i, qc);
          for (Eigen::Index j = lo; j <= hi; ++j) {
            const auto jj = static_cast<std::size_t>(j - lo);
            const double ds = p[jj] * (dp[jj] - dot) * scale;
            if (ds == 0.0) continue;
            const double* k = &in(base + j, kc);
            double* gk = &gin(base + j, kc);
            for (Eigen::Index c = 0; c < dh; ++c) {
              gq[c] += ds * k[c];
              gk[c] += ds * q[c];
            }
          }
        }
      }
    }
  };
  return o;
}

}  // namespace loopsr::numgrad
