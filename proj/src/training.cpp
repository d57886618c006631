#include "afm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "afm/errors.hpp"

namespace afm::train {

namespace {

constexpr std::uint64_t kShuffleTag = 0x53485546;
constexpr std::uint64_t kViewTag = 0x56494557;
constexpr std::uint64_t kHeadAugTag = 0x48415547;
constexpr std::uint64_t kSeedSplitTag = 0x53454544;
constexpr std::uint64_t kHeadInitTag = 0x48494e49;
constexpr std::uint64_t kRandomArmTag = 0x52414e44;
constexpr std::uint64_t kFinetuneTag = 0x46545354;

bool in_frozen_scope(const std::string& name,
                     const std::set<std::string>& scopes) {
  for (const auto& s : scopes) {
    if (name.rfind(s, 0) == 0) return true;
  }
  return false;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  RngStream rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_below(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

signal::LabeledDataset subset_with_labels(const signal::LabeledDataset& ds,
                                          const std::vector<std::size_t>& idx,
                                          const std::vector<int>& labels) {
  signal::LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    signal::SignalWindow w = ds.windows[idx[i]];
    w.label = labels[i];
    out.windows.push_back(std::move(w));
  }
  return out;
}

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw DataError("batch_size must be >= 2 for batch norm");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw DataError("lr must be positive");
  if (!(temperature > 0.0)) throw DataError("temperature must be positive");
  if (support_capacity == 0) throw DataError("support_capacity must be positive");
}

void adam_step(ad::ParamStore& params, OptimizerState& state,
               const std::set<std::string>& frozen_scopes) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& p : params.all()) {
    if (in_frozen_scope(p->name, frozen_scopes)) continue;
    const std::size_t n = p->value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p->grad.data()[i];
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter " + p->name);
      }
      double& m = p->m.data()[i];
      double& v = p->v.data()[i];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p->value.data()[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double cross_entropy_loss(const std::vector<std::vector<double>>& logits,
                          const std::vector<int>& labels) {
  if (logits.empty() || logits.size() != labels.size()) {
    throw DataError("cross_entropy_loss: batch/label mismatch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    const auto& row = logits[r];
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= row.size()) {
      throw DataError("cross_entropy_loss: label out of range");
    }
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - mx);
    total += mx + std::log(denom) - row[static_cast<std::size_t>(y)];
  }
  return total / static_cast<double>(logits.size());
}

PretrainLog pretrain_backbone(model::Model& m,
                              const std::vector<signal::SignalWindow>& windows,
                              const TrainConfig& cfg, OptimizerState& opt) {
  cfg.validate();
  cfg.strong.validate(m.config().window_len);
  if (windows.size() < 2 * cfg.batch_size) {
    throw DataError("pretrain needs at least 2 * batch_size windows");
  }
  std::set<std::string> frozen = cfg.frozen_scopes;
  frozen.insert("head.");
  frozen.insert("probe.");

  contrastive::SupportSet support(cfg.support_capacity);
  PretrainLog log;
  bool warmed = false;
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    const auto order =
        shuffled_indices(windows.size(), derive_seed(cfg.seed, kShuffleTag, epoch));
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      const std::size_t b = end - start;
      if (b < 2) break;  // partial batch below the batch-norm minimum

      std::vector<signal::SignalWindow> views;
      views.reserve(2 * b);
      for (std::size_t view = 0; view < 2; ++view) {
        for (std::size_t j = 0; j < b; ++j) {
          const std::size_t idx = order[start + j];
          RngStream rng(
              derive_seed(cfg.seed, kViewTag, epoch, batch_no, (idx << 1) | view));
          views.push_back(
              augment::contrastive_augment(windows[idx], cfg.strong, rng));
        }
      }
      std::vector<const signal::SignalWindow*> ptrs;
      ptrs.reserve(views.size());
      for (const auto& v : views) ptrs.push_back(&v);

      ad::Graph g;
      const ad::Var emb = m.encode_batch(g, ptrs);
      const ad::Var z = m.project_batch(g, emb, true, true);
      const ad::Var za = g.slice_rows(z, 0, b);
      const ad::Var zb = g.slice_rows(z, b, 2 * b);

      if (!warmed) {
        // Warm-up: the queue must be populated before the first loss.
        support.push_rows(g.val(za));
        warmed = true;
        continue;
      }
      const ad::Var loss =
          contrastive::nnclr_loss(g, za, zb, support, cfg.temperature);
      const double loss_value = g.val(loss)(0, 0);
      if (!std::isfinite(loss_value)) {
        throw NumericError("pretrain loss is not finite");
      }
      m.params().zero_grads();
      g.backward(loss);
      adam_step(m.params(), opt, frozen);
      support.push_rows(g.val(za));
      log.batch_loss.push_back(loss_value);
      epoch_sum += loss_value;
      ++epoch_batches;
    }
    log.epoch_mean_loss.push_back(
        epoch_batches > 0 ? epoch_sum / static_cast<double>(epoch_batches)
                          : 0.0);
  }
  log.support_size = support.size();
  return log;
}

HeadTrainLog train_head(model::Model& m, const signal::LabeledDataset& labeled,
                        model::HeadKind kind, const TrainConfig& cfg,
                        OptimizerState& opt) {
  cfg.validate();
  cfg.mild.validate(m.config().window_len);
  labeled.validate();
  if (static_cast<std::size_t>(m.num_classes()) != labeled.num_classes) {
    throw DataError("train_head: model/dataset class count mismatch");
  }
  // Backbone and projection head stay frozen; so does the head that is not
  // being trained, which keeps its optimizer moments from decaying.
  std::set<std::string> frozen = cfg.frozen_scopes;
  frozen.insert("enc.");
  frozen.insert("proj.");
  frozen.insert(kind == model::HeadKind::Mlp ? "probe." : "head.");

  HeadTrainLog log;
  for (std::size_t epoch = 0; epoch < cfg.head_epochs; ++epoch) {
    const auto order = shuffled_indices(
        labeled.size(), derive_seed(cfg.seed, kShuffleTag, 0x4845, epoch));
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      const std::size_t b = end - start;
      if (b < 2) break;

      std::vector<signal::SignalWindow> aug;
      std::vector<int> labels;
      aug.reserve(b);
      labels.reserve(b);
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t idx = order[start + j];
        RngStream rng(derive_seed(cfg.seed, kHeadAugTag, epoch, batch_no, idx));
        aug.push_back(
            augment::classification_augment(labeled.windows[idx], cfg.mild, rng));
        labels.push_back(labeled.label_of(idx));
      }
      std::vector<const signal::SignalWindow*> ptrs;
      ptrs.reserve(b);
      for (const auto& w : aug) ptrs.push_back(&w);

      // Forward-only embeddings guarantee no gradient ever reaches the
      // backbone; the head graph starts from constants.
      const ad::Tensor emb = m.embed_windows(ptrs);
      ad::Graph g;
      const ad::Var e = g.constant(emb);
      const ad::Var logits = (kind == model::HeadKind::Mlp)
                                 ? m.mlp_logits(g, e, true, true)
                                 : m.probe_logits(g, e);
      const ad::Var loss = g.cross_entropy(logits, labels);
      const double loss_value = g.val(loss)(0, 0);
      if (!std::isfinite(loss_value)) {
        throw NumericError("head training loss is not finite");
      }
      m.params().zero_grads();
      g.backward(loss);
      adam_step(m.params(), opt, frozen);
      epoch_sum += loss_value;
      ++epoch_batches;
    }
    log.epoch_mean_loss.push_back(
        epoch_batches > 0 ? epoch_sum / static_cast<double>(epoch_batches)
                          : 0.0);
  }
  return log;
}

ALRunResult al_training_loop(model::Model& m,
                             const signal::DatasetSplits& splits,
                             const al::ALConfig& alcfg, const TrainConfig& cfg,
                             Strategy strategy, model::HeadKind kind) {
  alcfg.validate();
  cfg.validate();
  const signal::LabeledDataset& universe = splits.train;
  universe.validate();
  splits.val.validate();
  splits.test.validate();
  const std::size_t total = universe.size();

  al::Oracle oracle(universe);
  al::ALState state;
  {
    const auto seed_idx = al::stratified_seed_indices(
        universe, alcfg.seed_fraction, derive_seed(alcfg.seed, kSeedSplitTag));
    std::set<std::size_t> chosen(seed_idx.begin(), seed_idx.end());
    for (std::size_t i : seed_idx) {
      state.labeled.push_back(i);
      state.labels.push_back(oracle.label(i));
    }
    for (std::size_t i = 0; i < total; ++i) {
      if (chosen.count(i) == 0) state.pool.push_back(i);
    }
  }

  ALRunResult result;
  auto retrain_and_eval = [&](std::size_t round_no) {
    const double t0 = now_seconds();
    m.reset_classifier(static_cast<int>(universe.num_classes),
                       derive_seed(alcfg.seed, kHeadInitTag, round_no));
    TrainConfig round_cfg = cfg;
    round_cfg.seed = derive_seed(cfg.seed, kHeadInitTag, round_no);
    OptimizerState opt;
    opt.lr = cfg.lr;
    train_head(m, subset_with_labels(universe, state.labeled, state.labels),
               kind, round_cfg, opt);
    CurvePoint pt;
    pt.label_fraction =
        static_cast<double>(state.labeled.size()) / static_cast<double>(total);
    pt.accuracy = eval::evaluate(m, splits.test, kind, "al_curve",
                                 pt.label_fraction, alcfg.seed, cfg.threads)
                      .accuracy;
    pt.oracle_count = oracle.query_count();
    pt.wall_seconds = now_seconds() - t0;
    result.curve.push_back(pt);
    return eval::evaluate(m, splits.val, kind, "al_val", pt.label_fraction,
                          alcfg.seed, cfg.threads)
        .accuracy;
  };

  retrain_and_eval(0);  // seed phase
  for (std::size_t r = 1; r <= alcfg.rounds; ++r) {
    // A pool that is empty (or holds only already-paid-for cache items)
    // cannot fund another query round.
    if (state.pool.size() <= state.cache.size()) break;
    al::RoundLog log;
    if (strategy == Strategy::ActiveLearning) {
      auto scorer = [&](const std::vector<std::size_t>& indices) {
        std::vector<const signal::SignalWindow*> ptrs;
        ptrs.reserve(indices.size());
        for (std::size_t i : indices) ptrs.push_back(&universe.windows[i]);
        return m.score_windows(ptrs, kind, cfg.threads);
      };
      log = al::al_round(scorer, state, oracle, alcfg, total, r);
    } else {
      RngStream rng(derive_seed(alcfg.seed, kRandomArmTag, r));
      log = al::random_baseline_round(state, oracle, alcfg, total, r, rng);
    }
    if (cfg.retrain_backbone_each_round) {
      TrainConfig bb_cfg = cfg;
      bb_cfg.pretrain_epochs = 1;
      bb_cfg.seed = derive_seed(cfg.seed, kShuffleTag, 0xBB, r);
      OptimizerState bb_opt;
      bb_opt.lr = cfg.lr;
      pretrain_backbone(m, universe.windows, bb_cfg, bb_opt);
    }
    log.labeled_fraction =
        static_cast<double>(state.labeled.size()) / static_cast<double>(total);
    log.val_accuracy = retrain_and_eval(r);
    result.rounds.push_back(log);
  }
  return result;
}

eval::EvalResult finetune_for_task(model::Model& m, const eval::TaskSpec& task,
                                   const signal::DatasetSplits& splits,
                                   double fraction, const TrainConfig& cfg,
                                   model::HeadKind kind, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DataError("fine-tune fraction must be in (0, 1]");
  }
  const auto task_train = eval::build_task(splits.train, task);
  const auto task_test = eval::build_task(splits.test, task);
  const std::size_t count = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(task_train.size())));
  const std::uint64_t task_seed =
      derive_seed(seed, kFinetuneTag, fnv1a(task.name),
                  static_cast<std::uint64_t>(std::llround(fraction * 1e6)));
  const auto indices =
      al::stratified_subset_indices(task_train, count, task_seed);
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(task_train.label_of(i));

  m.reset_classifier(static_cast<int>(task_train.num_classes),
                     derive_seed(task_seed, kHeadInitTag));
  TrainConfig ft_cfg = cfg;
  ft_cfg.seed = task_seed;
  OptimizerState opt;
  opt.lr = cfg.lr;
  train_head(m, subset_with_labels(task_train, indices, labels), kind, ft_cfg,
             opt);
  return eval::evaluate(m, task_test, kind, task.name, fraction, seed,
                        cfg.threads);
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'F', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

void write_string(std::ofstream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

void write_tensor(std::ofstream& os, const ad::Tensor& t) {
  write_pod<std::uint64_t>(os, t.rows());
  write_pod<std::uint64_t>(os, t.cols());
  write_bytes(os, t.data(), t.size() * sizeof(double));
}

void read_bytes(std::ifstream& is, void* p, std::size_t n,
                const std::string& what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw DataError("checkpoint truncated while reading " + what);
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& what) {
  T v;
  read_bytes(is, &v, sizeof(T), what);
  return v;
}

std::string read_string(std::ifstream& is, const std::string& what) {
  const auto n = read_pod<std::uint32_t>(is, what);
  if (n > (1u << 20)) throw DataError("checkpoint string too long: " + what);
  std::string s(n, '\0');
  read_bytes(is, s.data(), n, what);
  return s;
}

ad::Tensor read_tensor(std::ifstream& is, const std::string& what) {
  const auto rows = read_pod<std::uint64_t>(is, what);
  const auto cols = read_pod<std::uint64_t>(is, what);
  if (rows * cols > (1ull << 28)) {
    throw DataError("checkpoint tensor too large: " + what);
  }
  ad::Tensor t(rows, cols);
  read_bytes(is, t.data(), t.size() * sizeof(double), what);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const model::Model& m,
                     const OptimizerState& opt, const std::string& phase,
                     const std::vector<double>& metric_history) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  write_bytes(os, kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, kVersion);
  // Support-set contents are intentionally absent; resume re-runs warm-up.
  write_pod<std::uint8_t>(os, 0);

  const auto& cfg = m.config();
  write_pod<std::uint64_t>(os, cfg.window_len);
  write_pod<std::uint64_t>(os, cfg.patch_len);
  write_pod<std::uint64_t>(os, cfg.d_model);
  write_pod<std::uint64_t>(os, cfg.num_blocks);
  write_pod<std::uint64_t>(os, cfg.num_heads);
  write_pod<std::uint64_t>(os, cfg.ffn_expansion);
  write_pod<std::uint64_t>(os, cfg.proj_dim);
  write_pod<double>(os, cfg.dropout_prob);
  write_pod<double>(os, cfg.layernorm_eps);
  write_pod<std::int32_t>(os, m.num_classes());

  write_string(os, phase);
  write_pod<std::uint64_t>(os, metric_history.size());
  if (!metric_history.empty()) {
    write_bytes(os, metric_history.data(),
                metric_history.size() * sizeof(double));
  }

  write_pod<double>(os, opt.lr);
  write_pod<double>(os, opt.beta1);
  write_pod<double>(os, opt.beta2);
  write_pod<double>(os, opt.eps);
  write_pod<std::uint64_t>(os, opt.step);

  write_pod<std::uint64_t>(os, m.buffers().size());
  for (const auto& [name, t] : m.buffers()) {
    write_string(os, name);
    write_tensor(os, t);
  }
  write_pod<std::uint64_t>(os, m.params().all().size());
  for (const auto& p : m.params().all()) {
    write_string(os, p->name);
    write_tensor(os, p->value);
    write_tensor(os, p->m);
    write_tensor(os, p->v);
  }
  os.flush();
  if (!os) throw DataError("write failure on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  read_bytes(is, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic): " + path);
  }
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  (void)read_pod<std::uint8_t>(is, "support flag");

  model::EncoderConfig cfg;
  cfg.window_len = read_pod<std::uint64_t>(is, "config");
  cfg.patch_len = read_pod<std::uint64_t>(is, "config");
  cfg.d_model = read_pod<std::uint64_t>(is, "config");
  cfg.num_blocks = read_pod<std::uint64_t>(is, "config");
  cfg.num_heads = read_pod<std::uint64_t>(is, "config");
  cfg.ffn_expansion = read_pod<std::uint64_t>(is, "config");
  cfg.proj_dim = read_pod<std::uint64_t>(is, "config");
  cfg.dropout_prob = read_pod<double>(is, "config");
  cfg.layernorm_eps = read_pod<double>(is, "config");
  const auto num_classes = read_pod<std::int32_t>(is, "num_classes");

  const std::string phase = read_string(is, "phase");
  const auto hist_len = read_pod<std::uint64_t>(is, "history length");
  if (hist_len > (1ull << 24)) throw DataError("checkpoint history too long");
  std::vector<double> history(hist_len);
  if (hist_len > 0) {
    read_bytes(is, history.data(), hist_len * sizeof(double), "history");
  }

  OptimizerState opt;
  opt.lr = read_pod<double>(is, "optimizer");
  opt.beta1 = read_pod<double>(is, "optimizer");
  opt.beta2 = read_pod<double>(is, "optimizer");
  opt.eps = read_pod<double>(is, "optimizer");
  opt.step = read_pod<std::uint64_t>(is, "optimizer");

  model::Model m(cfg, num_classes, 0);

  const auto buffer_count = read_pod<std::uint64_t>(is, "buffer count");
  if (buffer_count != m.buffers().size()) {
    throw DataError("checkpoint buffer count mismatch");
  }
  for (std::uint64_t i = 0; i < buffer_count; ++i) {
    const std::string name = read_string(is, "buffer name");
    ad::Tensor t = read_tensor(is, name);
    bool known = false;
    for (const auto& [n, unused] : m.buffers()) {
      if (n == name) known = true;
    }
    if (!known) throw DataError("checkpoint names unknown buffer: " + name);
    ad::Tensor& dst = m.buffer(name);
    if (!dst.same_shape(t)) {
      throw DataError("checkpoint buffer shape mismatch: " + name);
    }
    dst = std::move(t);
  }
  const auto param_count = read_pod<std::uint64_t>(is, "param count");
  if (param_count != m.params().all().size()) {
    throw DataError("checkpoint parameter count mismatch");
  }
  for (std::uint64_t i = 0; i < param_count; ++i) {
    const std::string name = read_string(is, "param name");
    if (!m.params().has(name)) {
      throw DataError("checkpoint names unknown parameter: " + name);
    }
    ad::Param& p = m.params().get(name);
    ad::Tensor value = read_tensor(is, name);
    ad::Tensor mm = read_tensor(is, name);
    ad::Tensor vv = read_tensor(is, name);
    if (!p.value.same_shape(value)) {
      throw DataError("checkpoint parameter shape mismatch: " + name);
    }
    p.value = std::move(value);
    p.m = std::move(mm);
    p.v = std::move(vv);
  }
  return LoadedCheckpoint{std::move(m), opt, phase, std::move(history)};
}

}  // namespace afm::train
