#include "loopsr/numgrad/layers.hpp"

#include <cmath>
#include <numbers>

#include "loopsr/common/error.hpp"

namespace loopsr::numgrad {

Tensor affine_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || x.cols() != weight.rows() ||
      bias.size() != weight.cols()) {
    throw DimensionError("affine_forward: x " + x.shape_string() + ", W " +
                         weight.shape_string() + ", b " + bias.shape_string());
  }
  Matrix y = x.as_matrix() * weight.as_matrix();
  y.rowwise() += bias.as_matrix().row(0);
  return Tensor::from_matrix(y);
}

void init_affine(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w({in, out});
  for (double& v : w.values()) v = uniform(rng, -limit, limit);
  params.add(prefix + ".W", std::move(w));
  params.add(prefix + ".b", Tensor({out}, 0.0));
}

Var affine(Graph& g, Var x, const std::string& prefix) {
  return g.affine(x, g.param(prefix + ".W"), g.param(prefix + ".b"));
}

void init_layer_norm(ParamSet& params, const std::string& prefix, std::size_t width) {
  params.add(prefix + ".gain", Tensor({width}, 1.0));
  params.add(prefix + ".bias", Tensor({width}, 0.0));
}

Var layer_norm(Graph& g, Var x, const std::string& prefix) {
  return g.layer_norm(x, g.param(prefix + ".gain"), g.param(prefix + ".bias"));
}

void init_mlp(ParamSet& params, const std::string& prefix, std::span<const std::size_t> sizes,
              Rng& rng) {
  if (sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    init_affine(params, prefix + "." + std::to_string(i), sizes[i], sizes[i + 1], rng);
  }
}

Var mlp(Graph& g, Var x, const std::string& prefix, std::size_t layers, Activation act) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = affine(g, x, prefix + "." + std::to_string(i));
    if (i + 1 < layers) x = act == Activation::kTanh ? g.tanh(x) : g.gelu(x);
  }
  return x;
}

Matrix mlp_forward(const ParamSet& params, const std::string& prefix, std::size_t layers,
                   Activation act, Matrix x) {
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = prefix + "." + std::to_string(i);
    const Tensor& w = params.at(name + ".W");
    const Tensor& b = params.at(name + ".b");
    if (x.cols() != static_cast<Eigen::Index>(w.rows())) {
      throw DimensionError("mlp_forward: input width " + std::to_string(x.cols()) + " for " + name);
    }
    Matrix y = x * w.as_matrix();
    y.rowwise() += b.as_matrix().row(0);
    if (i + 1 < layers) {
      if (act == Activation::kTanh) {
        y = tanh_values(y);
      } else {
        y = y.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * (1.0 / std::numbers::sqrt2))); });
      }
    }
    x = std::move(y);
  }
  return x;
}

void init_attention_block(ParamSet& params, const std::string& prefix,
                          const AttentionBlockConfig& cfg, Rng& rng) {
  if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
    throw ConfigError("attention block: d_model " + std::to_string(cfg.d_model) +
                      " not divisible by heads " + std::to_string(cfg.heads));
  }
  const std::size_t d = cfg.d_model;
  init_layer_norm(params, prefix + ".ln1", d);
  // no bias on the packed projection: a key bias shifts every score of a
  // query equally and has an identically zero gradient
  const double limit = std::sqrt(6.0 / static_cast<double>(4 * d));
  Tensor qkv({d, 3 * d});
  for (double& v : qkv.values()) v = uniform(rng, -limit, limit);
  params.add(prefix + ".qkv.W", std::move(qkv));
  init_affine(params, prefix + ".proj", d, d, rng);
  init_layer_norm(params, prefix + ".ln2", d);
  init_affine(params, prefix + ".ff1", d, cfg.ff_multiplier * d, rng);
  init_affine(params, prefix + ".ff2", cfg.ff_multiplier * d, d, rng);
}

Var attention_block(Graph& g, Var tokens, const std::string& prefix,
                    const AttentionBlockConfig& cfg, std::size_t seq_len) {
  if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
    throw ConfigError("attention block: d_model not divisible by heads");
  }
  AttentionSpec spec{cfg.heads, seq_len, cfg.causal, cfg.window};
  Var qkv = g.matmul(layer_norm(g, tokens, prefix + ".ln1"), g.param(prefix + ".qkv.W"));
  Var attended = affine(g, g.self_attention(qkv, spec), prefix + ".proj");
  Var h = g.add(tokens, attended);
  Var ff = affine(g, g.gelu(affine(g, layer_norm(g, h, prefix + ".ln2"), prefix + ".ff1")),
                  prefix + ".ff2");
  return g.add(h, ff);
}

}  // namespace loopsr::numgrad
