#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "loopsr/common/rng.hpp"
#include "loopsr/numgrad/graph.hpp"
#include "loopsr/numgrad/param_set.hpp"
#include "loopsr/numgrad/tensor.hpp"

namespace loopsr::numgrad {

// y = xW + b for x [n x d_in], W [d_in x d_out], b [d_out].
Tensor affine_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Uniform Xavier weights under `<prefix>.W`, zero bias under `<prefix>.b`.
void init_affine(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng);
Var affine(Graph& g, Var x, const std::string& prefix);

void init_layer_norm(ParamSet& params, const std::string& prefix, std::size_t width);
Var layer_norm(Graph& g, Var x, const std::string& prefix);

enum class Activation { kTanh, kGelu };

// Fully connected stack; `sizes` = {in, hidden..., out}. The activation is
// applied after every layer except the last.
void init_mlp(ParamSet& params, const std::string& prefix, std::span<const std::size_t> sizes,
              Rng& rng);
Var mlp(Graph& g, Var x, const std::string& prefix, std::size_t layers, Activation act);
// Tape-free forward pass of the same stack, for inference.
Matrix mlp_forward(const ParamSet& params, const std::string& prefix, std::size_t layers,
                   Activation act, Matrix x);

struct AttentionBlockConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ff_multiplier = 4;
  bool causal = true;
  std::size_t window = 0;  // look-back in token positions, 0 = unlimited
};

// Pre-norm transformer block (bias-free packed QKV projection):
//   h = x + Wo * MHA(LN1(x)),  y = h + FFN(LN2(h)),  FFN = W2 * gelu(W1 * .)
void init_attention_block(ParamSet& params, const std::string& prefix,
                          const AttentionBlockConfig& cfg, Rng& rng);
Var attention_block(Graph& g, Var tokens, const std::string& prefix,
                    const AttentionBlockConfig& cfg, std::size_t seq_len);

}  // namespace loopsr::numgrad
