#include "afm/encoder.hpp"

#include <cmath>

#include "afm/errors.hpp"

namespace afm::model {

void EncoderConfig::validate() const {
  if (window_len == 0 || patch_len == 0 || d_model == 0 || num_blocks == 0 ||
      num_heads == 0 || ffn_expansion == 0 || proj_dim == 0) {
    throw DataError("encoder config counts must be positive");
  }
  if (window_len % patch_len != 0) {
    throw DataError("window_len must be divisible by patch_len");
  }
  if (d_model % num_heads != 0) {
    throw DataError("d_model must be divisible by num_heads");
  }
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) {
    throw DataError("dropout_prob must be in [0, 1)");
  }
  if (dropout_prob != 0.0) {
    // No dropout placement is defined for this architecture; a nonzero value
    // would silently train a different model than it evaluates.
    throw DataError("nonzero dropout_prob is not supported");
  }
  if (!(layernorm_eps > 0.0)) throw DataError("layernorm_eps must be positive");
}

double gelu_scalar(double x) {
  return x * 0.5 * std::erfc(-x * 0.70710678118654752440);
}

ad::Tensor attention_weights(const ad::Tensor& q, const ad::Tensor& k) {
  if (q.cols() != k.cols() || q.cols() == 0) {
    throw DataError("attention: Q and K widths must agree and be positive");
  }
  if (!q.all_finite() || !k.all_finite()) {
    throw NumericError("attention: non-finite input");
  }
  const std::size_t m = q.rows();
  const std::size_t n = k.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  ad::Tensor w(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < q.cols(); ++t) s += q(i, t) * k(j, t);
      w(i, j) = s * scale;
      if (w(i, j) > mx) mx = w(i, j);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      w(i, j) = std::exp(w(i, j) - mx);
      denom += w(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) w(i, j) /= denom;
  }
  return w;
}

ad::Tensor attention(const ad::Tensor& q, const ad::Tensor& k,
                     const ad::Tensor& v) {
  if (k.rows() != v.rows()) {
    throw DataError("attention: K and V row counts must agree");
  }
  if (!v.all_finite()) throw NumericError("attention: non-finite input");
  const ad::Tensor w = attention_weights(q, k);
  ad::Tensor out(q.rows(), v.cols());
  ad::matmul(w, v, out);
  return out;
}

ad::Tensor multi_head_attention(const ad::Tensor& x, const AttentionParams& p) {
  const std::size_t heads = p.wq.size();
  if (heads == 0 || p.wk.size() != heads || p.wv.size() != heads) {
    throw DataError("multi_head_attention: inconsistent head count");
  }
  const std::size_t d_model = x.cols();
  const std::size_t dh = p.wq[0].cols();
  if (dh * heads != d_model || p.wo.rows() != d_model ||
      p.wo.cols() != d_model) {
    throw DataError("multi_head_attention: shape mismatch");
  }
  ad::Tensor concat(x.rows(), d_model);
  for (std::size_t h = 0; h < heads; ++h) {
    if (p.wq[h].rows() != d_model || p.wq[h].cols() != dh ||
        !p.wk[h].same_shape(p.wq[h]) || !p.wv[h].same_shape(p.wq[h])) {
      throw DataError("multi_head_attention: head weight shape mismatch");
    }
    ad::Tensor qh(x.rows(), dh), kh(x.rows(), dh), vh(x.rows(), dh);
    ad::matmul(x, p.wq[h], qh);
    ad::matmul(x, p.wk[h], kh);
    ad::matmul(x, p.wv[h], vh);
    const ad::Tensor oh = attention(qh, kh, vh);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < dh; ++c) concat(r, h * dh + c) = oh(r, c);
    }
  }
  ad::Tensor out(x.rows(), d_model);
  ad::matmul(concat, p.wo, out);
  return out;
}

std::vector<double> layer_norm(const std::vector<double>& x,
                               const std::vector<double>& g,
                               const std::vector<double>& b, double eps) {
  if (x.empty() || g.size() != x.size() || b.size() != x.size()) {
    throw DataError("layer_norm: shape mismatch");
  }
  const std::size_t n = x.size();
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) {
    const double t = v - mu;
    var += t * t;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = (x[i] - mu) * inv * g[i] + b[i];
  }
  return out;
}

std::vector<double> ffn(const std::vector<double>& x, const ad::Tensor& w1,
                        const std::vector<double>& b1, const ad::Tensor& w2,
                        const std::vector<double>& b2) {
  if (w1.rows() != x.size() || w1.cols() != b1.size() ||
      w2.rows() != b1.size() || w2.cols() != b2.size()) {
    throw DataError("ffn: shape mismatch");
  }
  std::vector<double> act(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) act[i] = gelu_scalar(x[i]);
  std::vector<double> hidden(b1);
  for (std::size_t j = 0; j < w1.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < w1.rows(); ++i) s += act[i] * w1(i, j);
    hidden[j] += s;
  }
  std::vector<double> out(b2);
  for (std::size_t j = 0; j < w2.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < w2.rows(); ++i) s += hidden[i] * w2(i, j);
    out[j] += s;
  }
  return out;
}

ad::Tensor transformer_block(const ad::Tensor& x, const BlockParams& p,
                             double eps) {
  const std::size_t tokens = x.rows();
  const std::size_t d = x.cols();
  const ad::Tensor msa = multi_head_attention(x, p.attn);
  ad::Tensor xhat(tokens, d);
  for (std::size_t r = 0; r < tokens; ++r) {
    std::vector<double> row(d);
    for (std::size_t c = 0; c < d; ++c) row[c] = msa(r, c);
    const auto ln = layer_norm(row, p.ln1_g, p.ln1_b, eps);
    for (std::size_t c = 0; c < d; ++c) xhat(r, c) = ln[c] + x(r, c);
  }
  ad::Tensor out(tokens, d);
  for (std::size_t r = 0; r < tokens; ++r) {
    std::vector<double> row(d);
    for (std::size_t c = 0; c < d; ++c) row[c] = xhat(r, c);
    const auto f = ffn(row, p.w1, p.b1, p.w2, p.b2);
    const auto ln = layer_norm(f, p.ln2_g, p.ln2_b, eps);
    for (std::size_t c = 0; c < d; ++c) out(r, c) = ln[c] + xhat(r, c);
  }
  return out;
}

ad::Tensor positional_encoding(std::size_t tokens, std::size_t d_model) {
  ad::Tensor pe(tokens, d_model);
  for (std::size_t pos = 0; pos < tokens; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double expo = static_cast<double>(i) / static_cast<double>(d_model);
      const double arg =
          static_cast<double>(pos) / std::pow(10000.0, expo);
      pe(pos, i) = std::sin(arg);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(arg);
    }
  }
  return pe;
}

}  // namespace afm::model
