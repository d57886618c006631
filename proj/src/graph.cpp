#include "afm/graph.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include "afm/errors.hpp"

namespace afm::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gauss_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double gauss_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

Param& ParamStore::add(const std::string& name, std::size_t rows,
                       std::size_t cols) {
  if (has(name)) throw std::logic_error("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Tensor(rows, cols);
  p->grad = Tensor(rows, cols);
  p->m = Tensor(rows, cols);
  p->v = Tensor(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::get(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw std::logic_error("unknown parameter: " + name);
}

const Param& ParamStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw std::logic_error("unknown parameter: " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return true;
  }
  return false;
}

void ParamStore::remove_prefix(const std::string& prefix) {
  params_.erase(std::remove_if(params_.begin(), params_.end(),
                               [&](const std::unique_ptr<Param>& p) {
                                 return p->name.rfind(prefix, 0) == 0;
                               }),
                params_.end());
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.set_zero();
}

Var Graph::emit(Tensor value, std::function<void(Graph&)> back, Param* p) {
  Node n;
  n.value = std::move(value);
  if (!inference_) n.back = std::move(back);
  n.param = p;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Tensor t) { return emit(std::move(t), nullptr); }

Var Graph::param(Param& p) {
  Tensor copy = p.value;
  return emit(std::move(copy), nullptr, &p);
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  assert(va.cols() == vb.rows());
  Tensor out(va.rows(), vb.cols());
  ad::matmul(va, vb, out);
  return emit(std::move(out), [a, b, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    ad::matmul_nt(d, g.val(b), g.gref(a), true);
    ad::matmul_tn(g.val(a), d, g.gref(b), true);
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  assert(va.cols() == vb.cols());
  Tensor out(va.rows(), vb.rows());
  ad::matmul_nt(va, vb, out);
  return emit(std::move(out), [a, b, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    ad::matmul(d, g.val(b), g.gref(a), true);
    ad::matmul_tn(d, g.val(a), g.gref(b), true);
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  assert(va.same_shape(vb));
  Tensor out = va;
  out.add_scaled(vb, 1.0);
  return emit(std::move(out), [a, b, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    g.gref(a).add_scaled(d, 1.0);
    g.gref(b).add_scaled(d, 1.0);
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  assert(va.same_shape(vb));
  Tensor out = va;
  out.add_scaled(vb, -1.0);
  return emit(std::move(out), [a, b, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    g.gref(a).add_scaled(d, 1.0);
    g.gref(b).add_scaled(d, -1.0);
  });
}

Var Graph::add_row_broadcast(Var x, Var row) {
  const Tensor& vx = val(x);
  const Tensor& vr = val(row);
  assert(vr.rows() == 1 && vr.cols() == vx.cols());
  Tensor out = vx;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.row_ptr(r);
    const double* b = vr.row_ptr(0);
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] += b[c];
  }
  return emit(std::move(out), [x, row, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    g.gref(x).add_scaled(d, 1.0);
    Tensor& gr = g.gref(row);
    for (std::size_t r = 0; r < d.rows(); ++r) {
      const double* dr = d.row_ptr(r);
      for (std::size_t c = 0; c < d.cols(); ++c) gr(0, c) += dr[c];
    }
  });
}

Var Graph::add_constant(Var x, const Tensor& c) {
  const Tensor& vx = val(x);
  assert(vx.same_shape(c));
  Tensor out = vx;
  out.add_scaled(c, 1.0);
  return emit(std::move(out), [x, out_id = (int)nodes_.size()](Graph& g) {
    g.gref(x).add_scaled(g.grad(Var{out_id}), 1.0);
  });
}

Var Graph::scale(Var x, double s) {
  Tensor out = val(x);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
  return emit(std::move(out), [x, s, out_id = (int)nodes_.size()](Graph& g) {
    g.gref(x).add_scaled(g.grad(Var{out_id}), s);
  });
}

Var Graph::hadamard(Var a, Var b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  assert(va.same_shape(vb));
  Tensor out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= vb.data()[i];
  return emit(std::move(out), [a, b, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    const Tensor& va2 = g.val(a);
    const Tensor& vb2 = g.val(b);
    Tensor& ga = g.gref(a);
    Tensor& gb = g.gref(b);
    for (std::size_t i = 0; i < d.size(); ++i) {
      ga.data()[i] += d.data()[i] * vb2.data()[i];
      gb.data()[i] += d.data()[i] * va2.data()[i];
    }
  });
}

Var Graph::relu(Var x) {
  Tensor out = val(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.data()[i] < 0.0) out.data()[i] = 0.0;
  }
  return emit(std::move(out), [x, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    const Tensor& vx = g.val(x);
    Tensor& gx = g.gref(x);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (vx.data()[i] > 0.0) gx.data()[i] += d.data()[i];
    }
  });
}

Var Graph::gelu(Var x) {
  const Tensor& vx = val(x);
  Tensor out(vx.rows(), vx.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = vx.data()[i];
    out.data()[i] = v * gauss_cdf(v);
  }
  return emit(std::move(out), [x, out_id = (int)nodes_.size()](Graph& g) {
    const Tensor& d = g.grad(Var{out_id});
    const Tensor& vx2 = g.val(x);
    Tensor& gx = g.gref(x);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = vx2.data()[i];
      gx.data()[i] += d.data()[i] * (gauss_cdf(v) + v * gauss_pdf(v));
    }
  });
}

Var Graph::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Tensor& vx = val(x);
  const Tensor& vg = val(gain);
  const Tensor& vb = val(bias);
  assert(vg.rows() == 1 && vg.cols() == vx.cols() && vb.same_shape(vg));
  const std::size_t n = vx.rows();
  const std::size_t d = vx.cols();
  Tensor xhat(n, d);
  std::vector<double> inv_std(n);
  Tensor out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = vx.row_ptr(r);
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double t = xr[c] - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xr[c] - mu) * is;
      xhat(r, c) = h;
      out(r, c) = h * vg(0, c) + vb(0, c);
    }
  }
  return emit(std::move(out),
              [x, gain, bias, xhat = std::move(xhat),
               inv_std = std::move(inv_std),
               out_id = (int)nodes_.size()](Graph& g) {
                const Tensor& dy = g.grad(Var{out_id});
                const Tensor& vg2 = g.val(gain);
                Tensor& gx = g.gref(x);
                Tensor& gg = g.gref(gain);
                Tensor& gb = g.gref(bias);
                const std::size_t n2 = dy.rows();
                const std::size_t d2 = dy.cols();
                for (std::size_t r = 0; r < n2; ++r) {
                  const double* dyr = dy.row_ptr(r);
                  const double* hr = xhat.row_ptr(r);
                  double mean_dh = 0.0;
                  double mean_dh_h = 0.0;
                  for (std::size_t c = 0; c < d2; ++c) {
                    const double dh = dyr[c] * vg2(0, c);
                    mean_dh += dh;
                    mean_dh_h += dh * hr[c];
                    gg(0, c) += dyr[c] * hr[c];
                    gb(0, c) += dyr[c];
                  }
                  mean_dh /= static_cast<double>(d2);
                  mean_dh_h /= static_cast<double>(d2);
                  double* gxr = gx.row_ptr(r);
                  for (std::size_t c = 0; c < d2; ++c) {
                    const double dh = dyr[c] * vg2(0, c);
                    gxr[c] += inv_std[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                  }
                }
              });
}

Var Graph::multi_head_attention(Var q, Var k, Var v, std::size_t tokens,
                                std::size_t num_heads) {
  const Tensor& vq = val(q);
  const Tensor& vk = val(k);
  const Tensor& vv = val(v);
  assert(vq.same_shape(vk) && vq.same_shape(vv));
  assert(tokens > 0 && vq.rows() % tokens == 0);
  assert(num_heads > 0 && vq.cols() % num_heads == 0);
  const std::size_t batch = vq.rows() / tokens;
  const std::size_t dh = vq.cols() / num_heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out(vq.rows(), vq.cols());
  // Attention probabilities per (window, head), stacked: (batch*heads*T) x T.
  Tensor probs(batch * num_heads * tokens, tokens);
  std::vector<double> scores(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * tokens;
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t c0 = h * dh;
      const std::size_t p0 = (b * num_heads + h) * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < tokens; ++j) {
          double s = 0.0;
          const double* qr = vq.row_ptr(r0 + i) + c0;
          const double* kr = vk.row_ptr(r0 + j) + c0;
          for (std::size_t t = 0; t < dh; ++t) s += qr[t] * kr[t];
          s *= alpha;
          scores[j] = s;
          if (s > mx) mx = s;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double e = std::exp(scores[j] - mx);
          probs(p0 + i, j) = e;
          denom += e;
        }
        double* orow = out.row_ptr(r0 + i) + c0;
        for (std::size_t t = 0; t < dh; ++t) orow[t] = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double p = probs(p0 + i, j) / denom;
          probs(p0 + i, j) = p;
          const double* vr = vv.row_ptr(r0 + j) + c0;
          for (std::size_t t = 0; t < dh; ++t) orow[t] += p * vr[t];
        }
      }
    }
  }
  return emit(
      std::move(out),
      [q, k, v, tokens, num_heads, batch, dh, alpha, probs = std::move(probs),
       out_id = (int)nodes_.size()](Graph& g) {
        const Tensor& dout = g.grad(Var{out_id});
        const Tensor& vq2 = g.val(q);
        const Tensor& vk2 = g.val(k);
        const Tensor& vv2 = g.val(v);
        Tensor& gq = g.gref(q);
        Tensor& gk = g.gref(k);
        Tensor& gv = g.gref(v);
        std::vector<double> dp(tokens), ds(tokens);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t r0 = b * tokens;
          for (std::size_t h = 0; h < num_heads; ++h) {
            const std::size_t c0 = h * dh;
            const std::size_t p0 = (b * num_heads + h) * tokens;
            for (std::size_t i = 0; i < tokens; ++i) {
              const double* drow = dout.row_ptr(r0 + i) + c0;
              // dV and dP for this query row.
              double dot = 0.0;
              for (std::size_t j = 0; j < tokens; ++j) {
                const double p = probs(p0 + i, j);
                const double* vr = vv2.row_ptr(r0 + j) + c0;
                double* gvr = gv.row_ptr(r0 + j) + c0;
                double s = 0.0;
                for (std::size_t t = 0; t < dh; ++t) {
                  s += drow[t] * vr[t];
                  gvr[t] += p * drow[t];
                }
                dp[j] = s;
                dot += s * p;
              }
              // Softmax backward, then scatter into Q and K.
              double* gqr = gq.row_ptr(r0 + i) + c0;
              for (std::size_t j = 0; j < tokens; ++j) {
                ds[j] = probs(p0 + i, j) * (dp[j] - dot) * alpha;
              }
              for (std::size_t j = 0; j < tokens; ++j) {
                const double* kr = vk2.row_ptr(r0 + j) + c0;
                const double* qr = vq2.row_ptr(r0 + i) + c0;
                double* gkr = gk.row_ptr(r0 + j) + c0;
                for (std::size_t t = 0; t < dh; ++t) {
                  gqr[t] += ds[j] * kr[t];
                  gkr[t] += ds[j] * qr[t];
                }
              }
            }
          }
        }
      });
}

Var Graph::mean_pool_rows(Var x, std::size_t group) {
  const Tensor& vx = val(x);
  assert(group > 0 && vx.rows() % group == 0);
  const std::size_t batch = vx.rows() / group;
  const std::size_t d = vx.cols();
  Tensor out(batch, d);
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t b = 0; b < batch; ++b) {
    double* o = out.row_ptr(b);
    for (std::size_t r = 0; r < group; ++r) {
      const double* xr = vx.row_ptr(b * group + r);
      for (std::size_t c = 0; c < d; ++c) o[c] += xr[c];
    }
    for (std::size_t c = 0; c < d; ++c) o[c] *= inv;
  }
  return emit(std::move(out),
              [x, group, inv, out_id = (int)nodes_.size()](Graph& g) {
                const Tensor& d2 = g.grad(Var{out_id});
                Tensor& gx = g.gref(x);
                for (std::size_t b = 0; b < d2.rows(); ++b) {
                  const double* dr = d2.row_ptr(b);
                  for (std::size_t r = 0; r < group; ++r) {
                    double* gxr = gx.row_ptr(b * group + r);
                    for (std::size_t c = 0; c < d2.cols(); ++c) {
                      gxr[c] += dr[c] * inv;
                    }
                  }
                }
              });
}

Var Graph::batch_norm(Var x, Var gamma, Var beta, Tensor* running_mean,
                      Tensor* running_var, bool train_mode,
                      bool update_running, double momentum, double eps) {
  const Tensor& vx = val(x);
  const Tensor& vg = val(gamma);
  const Tensor& vb = val(beta);
  const std::size_t n = vx.rows();
  const std::size_t d = vx.cols();
  assert(vg.rows() == 1 && vg.cols() == d && vb.same_shape(vg));

  Tensor xhat(n, d);
  std::vector<double> inv_std(d);
  if (train_mode) {
    if (n < 2) {
      throw NumericError("batch norm in train mode needs at least 2 rows");
    }
    for (std::size_t c = 0; c < d; ++c) {
      double mu = 0.0;
      for (std::size_t r = 0; r < n; ++r) mu += vx(r, c);
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double t = vx(r, c) - mu;
        var += t * t;
      }
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[c] = is;
      for (std::size_t r = 0; r < n; ++r) xhat(r, c) = (vx(r, c) - mu) * is;
      if (update_running && running_mean != nullptr) {
        (*running_mean)(0, c) = momentum * (*running_mean)(0, c) +
                                (1.0 - momentum) * mu;
        (*running_var)(0, c) = momentum * (*running_var)(0, c) +
                               (1.0 - momentum) * var;
      }
    }
  } else {
    if (running_mean == nullptr || running_var == nullptr) {
      throw NumericError("batch norm in eval mode needs running statistics");
    }
    for (std::size_t c = 0; c < d; ++c) {
      const double is = 1.0 / std::sqrt((*running_var)(0, c) + eps);
      inv_std[c] = is;
      const double mu = (*running_mean)(0, c);
      for (std::size_t r = 0; r < n; ++r) xhat(r, c) = (vx(r, c) - mu) * is;
    }
  }
  Tensor out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out(r, c) = xhat(r, c) * vg(0, c) + vb(0, c);
    }
  }
  return emit(std::move(out),
              [x, gamma, beta, train_mode, xhat = std::move(xhat),
               inv_std = std::move(inv_std),
               out_id = (int)nodes_.size()](Graph& g) {
                const Tensor& dy = g.grad(Var{out_id});
                const Tensor& vg2 = g.val(gamma);
                Tensor& gx = g.gref(x);
                Tensor& gg = g.gref(gamma);
                Tensor& gb = g.gref(beta);
                const std::size_t n2 = dy.rows();
                const std::size_t d2 = dy.cols();
                for (std::size_t c = 0; c < d2; ++c) {
                  double sum_dh = 0.0;
                  double sum_dh_h = 0.0;
                  for (std::size_t r = 0; r < n2; ++r) {
                    const double dh = dy(r, c) * vg2(0, c);
                    sum_dh += dh;
                    sum_dh_h += dh * xhat(r, c);
                    gg(0, c) += dy(r, c) * xhat(r, c);
                    gb(0, c) += dy(r, c);
                  }
                  if (train_mode) {
                    const double mean_dh = sum_dh / static_cast<double>(n2);
                    const double mean_dh_h = sum_dh_h / static_cast<double>(n2);
                    for (std::size_t r = 0; r < n2; ++r) {
                      const double dh = dy(r, c) * vg2(0, c);
                      gx(r, c) += inv_std[c] *
                                  (dh - mean_dh - xhat(r, c) * mean_dh_h);
                    }
                  } else {
                    for (std::size_t r = 0; r < n2; ++r) {
                      gx(r, c) += dy(r, c) * vg2(0, c) * inv_std[c];
                    }
                  }
                }
              });
}

Var Graph::l2_normalize_rows(Var x) {
  const Tensor& vx = val(x);
  const std::size_t n = vx.rows();
  const std::size_t d = vx.cols();
  Tensor out(n, d);
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = vx.row_ptr(r);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += xr[c] * xr[c];
    const double nrm = std::sqrt(s);
    norms[r] = nrm;
    if (nrm == 0.0) {
      out(r, 0) = 1.0;  // canonical direction for a degenerate embedding
    } else {
      for (std::size_t c = 0; c < d; ++c) out(r, c) = xr[c] / nrm;
    }
  }
  return emit(std::move(out),
              [x, norms = std::move(norms), out_id = (int)nodes_.size()](Graph& g) {
                const Tensor& dy = g.grad(Var{out_id});
                const Tensor& y = g.val(Var{out_id});
                Tensor& gx = g.gref(x);
                const std::size_t n2 = dy.rows();
                const std::size_t d2 = dy.cols();
                for (std::size_t r = 0; r < n2; ++r) {
                  if (norms[r] == 0.0) continue;
                  const double* dyr = dy.row_ptr(r);
                  const double* yr = y.row_ptr(r);
                  double dot = 0.0;
                  for (std::size_t c = 0; c < d2; ++c) dot += dyr[c] * yr[c];
                  double* gxr = gx.row_ptr(r);
                  for (std::size_t c = 0; c < d2; ++c) {
                    gxr[c] += (dyr[c] - yr[c] * dot) / norms[r];
                  }
                }
              });
}

Var Graph::concat_rows(Var a, Var b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  assert(va.cols() == vb.cols());
  Tensor out(va.rows() + vb.rows(), va.cols());
  for (std::size_t r = 0; r < va.rows(); ++r) {
    for (std::size_t c = 0; c < va.cols(); ++c) out(r, c) = va(r, c);
  }
  for (std::size_t r = 0; r < vb.rows(); ++r) {
    for (std::size_t c = 0; c < vb.cols(); ++c) out(va.rows() + r, c) = vb(r, c);
  }
  return emit(std::move(out),
              [a, b, na = va.rows(), out_id = (int)nodes_.size()](Graph& g) {
                const Tensor& d = g.grad(Var{out_id});
                Tensor& ga = g.gref(a);
                Tensor& gb = g.gref(b);
                for (std::size_t r = 0; r < ga.rows(); ++r) {
                  for (std::size_t c = 0; c < d.cols(); ++c) {
                    ga(r, c) += d(r, c);
                  }
                }
                for (std::size_t r = 0; r < gb.rows(); ++r) {
                  for (std::size_t c = 0; c < d.cols(); ++c) {
                    gb(r, c) += d(na + r, c);
                  }
                }
              });
}

Var Graph::slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& vx = val(x);
  assert(begin < end && end <= vx.rows());
  Tensor out(end - begin, vx.cols());
  for (std::size_t r = begin; r < end; ++r) {
    for (std::size_t c = 0; c < vx.cols(); ++c) out(r - begin, c) = vx(r, c);
  }
  return emit(std::move(out),
              [x, begin, out_id = (int)nodes_.size()](Graph& g) {
                const Tensor& d = g.grad(Var{out_id});
                Tensor& gx = g.gref(x);
                for (std::size_t r = 0; r < d.rows(); ++r) {
                  for (std::size_t c = 0; c < d.cols(); ++c) {
                    gx(begin + r, c) += d(r, c);
                  }
                }
              });
}

Var Graph::row_logsumexp(Var x, std::vector<std::uint8_t> keep) {
  const Tensor& vx = val(x);
  const std::size_t n = vx.rows();
  const std::size_t d = vx.cols();
  assert(keep.size() == n * d);
  Tensor out(n, 1);
  Tensor weights(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -1e300;
    bool any = false;
    for (std::size_t c = 0; c < d; ++c) {
      if (keep[r * d + c] && vx(r, c) > mx) {
        mx = vx(r, c);
        any = true;
      }
    }
    if (!any) throw NumericError("logsumexp row with empty mask");
    double sum = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      if (keep[r * d + c]) {
        const double e = std::exp(vx(r, c) - mx);
        weights(r, c) = e;
        sum += e;
      }
    }
    out(r, 0) = mx + std::log(sum);
    for (std::size_t c = 0; c < d; ++c) weights(r, c) /= sum;
  }
  return emit(std::move(out),
              [x, weights = std::move(weights),
               out_id = (int)nodes_.size()](Graph& g) {
                const Tensor& d2 = g.grad(Var{out_id});
                Tensor& gx = g.gref(x);
                for (std::size_t r = 0; r < gx.rows(); ++r) {
                  const double dr = d2(r, 0);
                  for (std::size_t c = 0; c < gx.cols(); ++c) {
                    gx(r, c) += dr * weights(r, c);
                  }
                }
              });
}

Var Graph::weighted_sum(Var x, Tensor w) {
  const Tensor& vx = val(x);
  assert(vx.same_shape(w));
  double s = 0.0;
  for (std::size_t i = 0; i < vx.size(); ++i) s += vx.data()[i] * w.data()[i];
  Tensor out(1, 1);
  out(0, 0) = s;
  return emit(std::move(out),
              [x, w = std::move(w), out_id = (int)nodes_.size()](Graph& g) {
                const double d = g.grad(Var{out_id})(0, 0);
                g.gref(x).add_scaled(w, d);
              });
}

Var Graph::cross_entropy(Var logits, std::vector<int> labels) {
  const Tensor& vx = val(logits);
  const std::size_t n = vx.rows();
  const std::size_t d = vx.cols();
  assert(labels.size() == n);
  Tensor probs(n, d);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= d) {
      throw DataError("cross entropy label out of range");
    }
    double mx = vx(r, 0);
    for (std::size_t c = 1; c < d; ++c) mx = std::max(mx, vx(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = std::exp(vx(r, c) - mx);
      probs(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < d; ++c) probs(r, c) /= sum;
    loss += mx + std::log(sum) - vx(r, y);
  }
  loss /= static_cast<double>(n);
  Tensor out(1, 1);
  out(0, 0) = loss;
  return emit(std::move(out),
              [logits, labels = std::move(labels), probs = std::move(probs),
               out_id = (int)nodes_.size()](Graph& g) {
                const double d = g.grad(Var{out_id})(0, 0);
                Tensor& gx = g.gref(logits);
                const std::size_t n2 = gx.rows();
                const double scale = d / static_cast<double>(n2);
                for (std::size_t r = 0; r < n2; ++r) {
                  for (std::size_t c = 0; c < gx.cols(); ++c) {
                    double t = probs(r, c);
                    if (static_cast<int>(c) == labels[r]) t -= 1.0;
                    gx(r, c) += t * scale;
                  }
                }
              });
}

Tensor Graph::softmax_rows_value(Var logits) const {
  const Tensor& vx = val(logits);
  Tensor out(vx.rows(), vx.cols());
  for (std::size_t r = 0; r < vx.rows(); ++r) {
    double mx = vx(r, 0);
    for (std::size_t c = 1; c < vx.cols(); ++c) mx = std::max(mx, vx(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < vx.cols(); ++c) {
      const double e = std::exp(vx(r, c) - mx);
      out(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < vx.cols(); ++c) out(r, c) /= sum;
  }
  return out;
}

void Graph::backward(Var loss) {
  if (inference_) {
    throw std::logic_error("backward called on an inference graph");
  }
  const Tensor& lv = val(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::logic_error("backward expects a scalar loss node");
  }
  for (int i = 0; i <= loss.id; ++i) {
    nodes_[i].grad = Tensor(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
  for (int i = 0; i <= loss.id; ++i) {
    if (nodes_[i].param != nullptr) {
      nodes_[i].param->grad.add_scaled(nodes_[i].grad, 1.0);
    }
  }
}

std::vector<double> softmax_vec(const std::vector<double>& logits) {
  std::vector<double> out(logits.size());
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace afm::ad
