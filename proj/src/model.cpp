#include "afm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "afm/errors.hpp"
#include "afm/rng.hpp"

namespace afm::model {

namespace {

constexpr double kBnMomentum = 0.9;
constexpr std::size_t kInferenceChunk = 256;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

Model::Model(const EncoderConfig& cfg, int num_classes, std::uint64_t init_seed)
    : cfg_(cfg), num_classes_(num_classes), init_seed_(init_seed) {
  cfg_.validate();
  if (num_classes < 2) throw DataError("model needs at least 2 classes");
  const std::size_t d = cfg_.d_model;
  const std::size_t hidden = cfg_.ffn_hidden();
  const std::size_t p = cfg_.proj_dim;

  auto weight = [&](const std::string& name, std::size_t r, std::size_t c) {
    glorot_init(params_.add(name, r, c), derive_seed(init_seed_, fnv1a(name)));
  };
  auto zeros = [&](const std::string& name, std::size_t c) {
    params_.add(name, 1, c);
  };
  auto ones = [&](const std::string& name, std::size_t c) {
    ad::Param& q = params_.add(name, 1, c);
    for (std::size_t i = 0; i < c; ++i) q.value(0, i) = 1.0;
  };

  weight("enc.patch.w", cfg_.patch_len, d);
  zeros("enc.patch.b", d);
  for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
    const std::string b = "enc.b" + std::to_string(i) + ".";
    weight(b + "attn.wq", d, d);
    weight(b + "attn.wk", d, d);
    weight(b + "attn.wv", d, d);
    weight(b + "attn.wo", d, d);
    ones(b + "ln1.g", d);
    zeros(b + "ln1.b", d);
    ones(b + "ln2.g", d);
    zeros(b + "ln2.b", d);
    weight(b + "ffn.w1", d, hidden);
    zeros(b + "ffn.b1", hidden);
    weight(b + "ffn.w2", hidden, d);
    zeros(b + "ffn.b2", d);
  }
  weight("proj.fc1.w", d, p);
  zeros("proj.fc1.b", p);
  ones("proj.bn.g", p);
  zeros("proj.bn.b", p);
  weight("proj.fc2.w", p, p);
  zeros("proj.fc2.b", p);
  buffers_.emplace_back("proj.bn.rm", ad::Tensor(1, p));
  buffers_.emplace_back("proj.bn.rv", ad::Tensor(1, p, 1.0));

  add_head_params(init_seed_);
  pe_ = positional_encoding(cfg_.tokens(), d);
}

void Model::add_head_params(std::uint64_t seed) {
  const std::size_t d = cfg_.d_model;
  const std::size_t p = cfg_.proj_dim;
  const std::size_t c = static_cast<std::size_t>(num_classes_);
  auto weight = [&](const std::string& name, std::size_t r, std::size_t cc) {
    glorot_init(params_.add(name, r, cc), derive_seed(seed, fnv1a(name)));
  };
  weight("head.fc1.w", d, p);
  params_.add("head.fc1.b", 1, p);
  ad::Param& g = params_.add("head.bn.g", 1, p);
  for (std::size_t i = 0; i < p; ++i) g.value(0, i) = 1.0;
  params_.add("head.bn.b", 1, p);
  weight("head.out.w", p, c);
  params_.add("head.out.b", 1, c);
  weight("probe.w", d, c);
  params_.add("probe.b", 1, c);
  buffers_.emplace_back("head.bn.rm", ad::Tensor(1, p));
  buffers_.emplace_back("head.bn.rv", ad::Tensor(1, p, 1.0));
}

void Model::glorot_init(ad::Param& p, std::uint64_t seed) {
  RngStream rng(seed);
  const double limit = std::sqrt(
      6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (std::size_t r = 0; r < p.value.rows(); ++r) {
    for (std::size_t c = 0; c < p.value.cols(); ++c) {
      p.value(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
    }
  }
}

ad::Tensor& Model::buffer(const std::string& name) {
  for (auto& [n, t] : buffers_) {
    if (n == name) return t;
  }
  throw std::logic_error("unknown buffer: " + name);
}

void Model::reset_classifier(int new_num_classes, std::uint64_t seed) {
  if (new_num_classes < 2) throw DataError("model needs at least 2 classes");
  params_.remove_prefix("head.");
  params_.remove_prefix("probe.");
  buffers_.erase(std::remove_if(buffers_.begin(), buffers_.end(),
                                [](const auto& kv) {
                                  return kv.first.rfind("head.", 0) == 0;
                                }),
                 buffers_.end());
  num_classes_ = new_num_classes;
  add_head_params(seed);
}

ad::Var Model::encode_batch(
    ad::Graph& g, const std::vector<const signal::SignalWindow*>& batch) {
  if (batch.empty()) throw DataError("encode_batch: empty batch");
  const std::size_t t = cfg_.tokens();
  const std::size_t pl = cfg_.patch_len;
  const std::size_t b = batch.size();
  ad::Tensor x(b * t, pl);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& vals = batch[i]->values;
    if (vals.size() != cfg_.window_len) {
      throw DataError("encode_batch: window length " +
                      std::to_string(vals.size()) + " != " +
                      std::to_string(cfg_.window_len));
    }
    for (std::size_t k = 0; k < t; ++k) {
      for (std::size_t j = 0; j < pl; ++j) {
        const double v = vals[k * pl + j];
        if (!std::isfinite(v)) {
          throw NumericError("encode_batch: non-finite sample");
        }
        x(i * t + k, j) = v;
      }
    }
  }

  ad::Var e = g.add_row_broadcast(
      g.matmul(g.constant(std::move(x)), g.param(params_.get("enc.patch.w"))),
      g.param(params_.get("enc.patch.b")));
  ad::Tensor pe_tile(b * t, cfg_.d_model);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < t; ++k) {
      for (std::size_t c = 0; c < cfg_.d_model; ++c) {
        pe_tile(i * t + k, c) = pe_(k, c);
      }
    }
  }
  e = g.add_constant(e, pe_tile);

  for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
    const std::string bp = "enc.b" + std::to_string(i) + ".";
    ad::Var q = g.matmul(e, g.param(params_.get(bp + "attn.wq")));
    ad::Var k = g.matmul(e, g.param(params_.get(bp + "attn.wk")));
    ad::Var v = g.matmul(e, g.param(params_.get(bp + "attn.wv")));
    ad::Var a = g.multi_head_attention(q, k, v, t, cfg_.num_heads);
    a = g.matmul(a, g.param(params_.get(bp + "attn.wo")));
    ad::Var xhat =
        g.add(g.layer_norm_rows(a, g.param(params_.get(bp + "ln1.g")),
                                g.param(params_.get(bp + "ln1.b")),
                                cfg_.layernorm_eps),
              e);
    ad::Var f = g.add_row_broadcast(
        g.matmul(g.gelu(xhat), g.param(params_.get(bp + "ffn.w1"))),
        g.param(params_.get(bp + "ffn.b1")));
    f = g.add_row_broadcast(g.matmul(f, g.param(params_.get(bp + "ffn.w2"))),
                            g.param(params_.get(bp + "ffn.b2")));
    e = g.add(g.layer_norm_rows(f, g.param(params_.get(bp + "ln2.g")),
                                g.param(params_.get(bp + "ln2.b")),
                                cfg_.layernorm_eps),
              xhat);
  }
  return g.mean_pool_rows(e, t);
}

ad::Var Model::project_batch(ad::Graph& g, ad::Var embeddings, bool train_mode,
                             bool update_running) {
  ad::Var h = g.add_row_broadcast(
      g.matmul(embeddings, g.param(params_.get("proj.fc1.w"))),
      g.param(params_.get("proj.fc1.b")));
  h = g.batch_norm(h, g.param(params_.get("proj.bn.g")),
                   g.param(params_.get("proj.bn.b")), &buffer("proj.bn.rm"),
                   &buffer("proj.bn.rv"), train_mode, update_running,
                   kBnMomentum, cfg_.layernorm_eps);
  h = g.relu(h);
  ad::Var z = g.add_row_broadcast(
      g.matmul(h, g.param(params_.get("proj.fc2.w"))),
      g.param(params_.get("proj.fc2.b")));
  return g.l2_normalize_rows(z);
}

ad::Var Model::mlp_logits(ad::Graph& g, ad::Var embeddings, bool train_mode,
                          bool update_running) {
  ad::Var h = g.add_row_broadcast(
      g.matmul(embeddings, g.param(params_.get("head.fc1.w"))),
      g.param(params_.get("head.fc1.b")));
  h = g.batch_norm(h, g.param(params_.get("head.bn.g")),
                   g.param(params_.get("head.bn.b")), &buffer("head.bn.rm"),
                   &buffer("head.bn.rv"), train_mode, update_running,
                   kBnMomentum, cfg_.layernorm_eps);
  h = g.relu(h);
  return g.add_row_broadcast(g.matmul(h, g.param(params_.get("head.out.w"))),
                             g.param(params_.get("head.out.b")));
}

ad::Var Model::probe_logits(ad::Graph& g, ad::Var embeddings) {
  return g.add_row_broadcast(
      g.matmul(embeddings, g.param(params_.get("probe.w"))),
      g.param(params_.get("probe.b")));
}

ad::Tensor Model::embed_windows(
    const std::vector<const signal::SignalWindow*>& ws) {
  if (ws.empty()) throw DataError("embed_windows: empty input");
  ad::Tensor out(ws.size(), cfg_.d_model);
  for (std::size_t begin = 0; begin < ws.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(begin + kInferenceChunk, ws.size());
    std::vector<const signal::SignalWindow*> chunk(ws.begin() + begin,
                                                   ws.begin() + end);
    ad::Graph g(true);
    const ad::Tensor& emb = g.val(encode_batch(g, chunk));
    for (std::size_t r = 0; r < emb.rows(); ++r) {
      for (std::size_t c = 0; c < emb.cols(); ++c) {
        out(begin + r, c) = emb(r, c);
      }
    }
  }
  return out;
}

ad::Tensor Model::head_probabilities(const ad::Tensor& embeddings,
                                     HeadKind kind) {
  ad::Graph g(true);
  ad::Var e = g.constant(embeddings);
  const ad::Var logits = (kind == HeadKind::Mlp)
                             ? mlp_logits(g, e, false, false)
                             : probe_logits(g, e);
  return g.softmax_rows_value(logits);
}

std::vector<std::vector<double>> Model::score_windows(
    const std::vector<const signal::SignalWindow*>& ws, HeadKind kind,
    std::size_t threads) {
  std::vector<std::vector<double>> out(ws.size());
  auto score_range = [&](std::size_t begin, std::size_t end) {
    if (begin >= end) return;
    std::vector<const signal::SignalWindow*> part(ws.begin() + begin,
                                                  ws.begin() + end);
    // Each worker builds its own graphs; model parameters are read-only here.
    const ad::Tensor emb = embed_windows(part);
    const ad::Tensor probs = head_probabilities(emb, kind);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      out[begin + r].assign(probs.row_ptr(r), probs.row_ptr(r) + probs.cols());
    }
  };
  if (threads <= 1 || ws.size() < 2 * kInferenceChunk) {
    score_range(0, ws.size());
    return out;
  }
  const std::size_t workers = std::min<std::size_t>(threads, 8);
  const std::size_t shard = (ws.size() + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * shard;
    const std::size_t end = std::min(begin + shard, ws.size());
    pool.emplace_back(score_range, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

std::vector<int> Model::predict(const signal::LabeledDataset& ds, HeadKind kind,
                                std::size_t threads) {
  std::vector<const signal::SignalWindow*> ptrs;
  ptrs.reserve(ds.size());
  for (const auto& w : ds.windows) ptrs.push_back(&w);
  const auto probs = score_windows(ptrs, kind, threads);
  std::vector<int> pred(ds.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs[i].size(); ++c) {
      if (probs[i][c] > probs[i][best]) best = c;
    }
    pred[i] = static_cast<int>(best);
  }
  return pred;
}

}  // namespace afm::model
