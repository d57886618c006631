#pragma once

#include <cstdint>
#include <vector>

#include "afm/tensor.hpp"

namespace afm::model {

struct EncoderConfig {
  std::size_t window_len = 192;
  std::size_t patch_len = 12;
  std::size_t d_model = 64;
  std::size_t num_blocks = 4;
  std::size_t num_heads = 4;
  std::size_t ffn_expansion = 4;
  std::size_t proj_dim = 256;
  double dropout_prob = 0.0;
  double layernorm_eps = 1e-5;

  std::size_t tokens() const { return window_len / patch_len; }
  std::size_t head_dim() const { return d_model / num_heads; }
  std::size_t ffn_hidden() const { return ffn_expansion * d_model; }
  void validate() const;
};

// Per-head projections W_i^Q/K/V (d_model x head_dim each) plus the output
// projection W^O (d_model x d_model). No biases.
struct AttentionParams {
  std::vector<ad::Tensor> wq, wk, wv;
  ad::Tensor wo;
};

struct BlockParams {
  AttentionParams attn;
  std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
  ad::Tensor w1;              // d_model x hidden
  std::vector<double> b1;
  ad::Tensor w2;              // hidden x d_model
  std::vector<double> b2;
};

double gelu_scalar(double x);  // exact Gaussian-CDF form

// softmax_rowwise(Q K^T / sqrt(d)) V, row-max stabilized. d is the key width.
ad::Tensor attention(const ad::Tensor& q, const ad::Tensor& k,
                     const ad::Tensor& v);

// The row-stochastic weight matrix of attention(), exposed for testing.
ad::Tensor attention_weights(const ad::Tensor& q, const ad::Tensor& k);

// Heads computed on (xW_i^Q, xW_i^K, xW_i^V), concatenated, projected by W^O.
ad::Tensor multi_head_attention(const ad::Tensor& x, const AttentionParams& p);

// (x - mean) / sqrt(var + eps) * g + b with population variance.
std::vector<double> layer_norm(const std::vector<double>& x,
                               const std::vector<double>& g,
                               const std::vector<double>& b, double eps);

// (GeLU(x) W1 + b1) W2 + b2: the activation precedes both affine maps.
std::vector<double> ffn(const std::vector<double>& x, const ad::Tensor& w1,
                        const std::vector<double>& b1, const ad::Tensor& w2,
                        const std::vector<double>& b2);

// x_hat = LN(MSA(x)) + x;  out = LN(FNN(x_hat)) + x_hat, per token row.
ad::Tensor transformer_block(const ad::Tensor& x, const BlockParams& p,
                             double eps);

// Fixed sinusoidal table, tokens x d_model:
// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same argument).
ad::Tensor positional_encoding(std::size_t tokens, std::size_t d_model);

}  // namespace afm::model
