#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "loopsr/numgrad/param_set.hpp"
#include "loopsr/numgrad/tensor.hpp"

namespace loopsr::numgrad {

// Handle to a node of a Graph.
struct Var {
  std::uint32_t id = 0;
};

struct AttentionSpec {
  std::size_t heads = 1;
  std::size_t seq_len = 0;  // rows are split into independent sequences of this length
  bool causal = true;
  std::size_t window = 0;   // max look-back in positions (0 = unlimited)
};

// Single-use reverse-mode tape over 2-D matrices.
//
// Build a loss by calling ops, then backward(loss) once. Every op checks its
// output for non-finite values and raises NumericalError naming the op.
// Parameters are read from the bound ParamSet; gradients come back through
// gradients() in the same layout.
class Graph {
 public:
  Graph();
  explicit Graph(const ParamSet& params);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves
  Var param(std::string_view name);
  Var constant(Matrix value);
  Var constant(const Tensor& value) { return constant(value.to_matrix()); }
  Var scalar_constant(double v);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const;
  Eigen::Index rows(Var v) const { return value(v).rows(); }
  Eigen::Index cols(Var v) const { return value(v).cols(); }
  std::size_t node_count() const { return nodes_.size(); }

  void backward(Var loss);
  ParamSet gradients() const;
  // Gradient w.r.t. any node after backward(); zeros if unreached.
  Matrix grad(Var v) const;

  // Linear algebra
  Var matmul(Var a, Var b);
  Var affine(Var x, Var weight, Var bias);
  Var transpose(Var a);

  // Elementwise (operands must share a shape; use broadcast() first)
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var minimum(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var neg(Var a) { return scale(a, -1.0); }
  Var tanh(Var a);
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var abs(Var a);
  Var clamp(Var a, double lo, double hi);

  // Shape
  Var broadcast(Var a, Eigen::Index rows, Eigen::Index cols);
  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
  Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
  Var gather_rows(Var a, std::span<const std::size_t> indices);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  // Row r*k + j of the result is row r of parts[j].
  Var interleave_rows(std::span<const Var> parts);

  // Reductions
  Var sum(Var a);
  Var mean(Var a);
  Var sum_over_rows(Var a);  // -> 1 x cols
  Var sum_over_cols(Var a);  // -> rows x 1
  Var segment_mean_rows(Var a, std::size_t seg_len);

  // Row-wise normalizations
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var l2_normalize_rows(Var a);

  // Multi-head scaled dot-product self-attention over packed [Q | K | V]
  // columns (rows x 3d) -> rows x d.
  Var self_attention(Var qkv, const AttentionSpec& spec);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    int param_index = -1;
    std::function<void()> backward;
    const char* op = "";
  };

  Var push(Matrix value, const char* op, std::initializer_list<Var> inputs);
  Var push(Matrix value, const char* op, std::span<const Var> inputs);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Matrix& grad_ref(Var v);
  template <typename Expr>
  void accumulate(Var v, const Expr& g);
  void require_same_shape(Var a, Var b, const char* op) const;

  const ParamSet* params_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, Var> param_vars_;
  bool backward_done_ = false;
};

}  // namespace loopsr::numgrad
