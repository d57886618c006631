#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "afm/errors.hpp"
#include "afm/eval.hpp"
#include "afm/model.hpp"
#include "afm/rng.hpp"
#include "afm/signal.hpp"
#include "afm/training.hpp"
#include "doctest.h"

using afm::DataError;
using afm::NumericError;
using afm::RngStream;
using namespace afm::train;

namespace {

afm::model::EncoderConfig small_config() {
  afm::model::EncoderConfig cfg;
  cfg.window_len = 24;
  cfg.patch_len = 6;
  cfg.d_model = 8;
  cfg.num_blocks = 2;
  cfg.num_heads = 2;
  cfg.ffn_expansion = 4;
  cfg.proj_dim = 8;
  return cfg;
}

// Tiny four-class corpus matching small_config's window length.
afm::signal::LabeledDataset tiny_corpus(std::size_t per_class,
                                        std::uint64_t seed) {
  afm::signal::SyntheticSpec spec;
  spec.window_len = 24;
  spec.windows_per_class = per_class;
  auto ds = afm::signal::synth_generate(spec, seed);
  afm::signal::normalize_dataset(ds);
  return ds;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.pretrain_epochs = 3;
  cfg.head_epochs = 3;
  cfg.support_capacity = 64;
  cfg.seed = 11;
  // Default masks are sized for production windows; 24-sample windows
  // need shorter segments to stay valid.
  cfg.strong.zero_seg_len = 4;
  cfg.mild.zero_seg_len = 3;
  return cfg;
}

std::vector<std::vector<double>> snapshot_values(afm::ad::ParamStore& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& p : ps.all()) {
    out.emplace_back(p->value.data(), p->value.data() + p->value.size());
  }
  return out;
}

bool prefix_matches(const std::string& name, const std::string& prefix) {
  return name.rfind(prefix, 0) == 0;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("adam first and second steps match the closed form") {
  afm::ad::ParamStore ps;
  auto& p = ps.add("w", 1, 3);
  p.value(0, 0) = 1.0;
  p.value(0, 1) = -2.0;
  p.value(0, 2) = 0.5;
  const double grads[3] = {0.3, -4.0, 1e-9};
  for (int i = 0; i < 3; ++i) p.grad.data()[i] = grads[i];

  OptimizerState opt;  // lr 1e-3, betas 0.9/0.999, eps 1e-8
  adam_step(ps, opt, {});
  CHECK(opt.step == 1);
  // After bias correction the first step is lr * g / (|g| + eps).
  const double start[3] = {1.0, -2.0, 0.5};
  for (int i = 0; i < 3; ++i) {
    const double expect =
        start[i] - opt.lr * grads[i] / (std::abs(grads[i]) + opt.eps);
    CHECK(p.value.data()[i] == doctest::Approx(expect).epsilon(1e-15));
  }

  // Second step against a hand-rolled recurrence, same gradients.
  double m[3], v[3], val[3];
  for (int i = 0; i < 3; ++i) {
    m[i] = 0.1 * grads[i];
    v[i] = 0.001 * grads[i] * grads[i];
    val[i] = p.value.data()[i];
  }
  for (int i = 0; i < 3; ++i) p.grad.data()[i] = grads[i];
  adam_step(ps, opt, {});
  CHECK(opt.step == 2);
  for (int i = 0; i < 3; ++i) {
    m[i] = 0.9 * m[i] + 0.1 * grads[i];
    v[i] = 0.999 * v[i] + 0.001 * grads[i] * grads[i];
    const double mhat = m[i] / (1.0 - 0.9 * 0.9);
    const double vhat = v[i] / (1.0 - 0.999 * 0.999);
    val[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    CHECK(p.value.data()[i] == doctest::Approx(val[i]).epsilon(1e-15));
  }
}

TEST_CASE("adam leaves parameters and moments untouched under zero gradients") {
  afm::ad::ParamStore ps;
  auto& p = ps.add("w", 2, 2);
  p.value(0, 0) = 3.0;
  p.value(1, 1) = -7.0;
  OptimizerState opt;
  for (int s = 0; s < 5; ++s) {
    ps.zero_grads();
    adam_step(ps, opt, {});
  }
  CHECK(opt.step == 5);
  CHECK(p.value(0, 0) == 3.0);
  CHECK(p.value(0, 1) == 0.0);
  CHECK(p.value(1, 1) == -7.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(p.m.data()[i] == 0.0);
    CHECK(p.v.data()[i] == 0.0);
  }
}

TEST_CASE("frozen scopes skip values and moments by name prefix") {
  afm::ad::ParamStore ps;
  auto& frozen = ps.add("enc.x", 1, 1);
  auto& lookalike = ps.add("encx", 1, 1);
  auto& live = ps.add("head.w", 1, 1);
  frozen.value(0, 0) = 1.0;
  lookalike.value(0, 0) = 1.0;
  live.value(0, 0) = 1.0;
  frozen.grad(0, 0) = 2.0;
  lookalike.grad(0, 0) = 2.0;
  live.grad(0, 0) = 2.0;

  OptimizerState opt;
  adam_step(ps, opt, {"enc."});

  CHECK(frozen.value(0, 0) == 1.0);
  CHECK(frozen.m(0, 0) == 0.0);
  CHECK(frozen.v(0, 0) == 0.0);
  // "encx" does not live under the "enc." scope; the dot is part of the name.
  CHECK(lookalike.value(0, 0) != 1.0);
  CHECK(lookalike.value(0, 0) == live.value(0, 0));
  CHECK(live.m(0, 0) != 0.0);
}

TEST_CASE("adam rejects non-finite gradients and names the parameter") {
  afm::ad::ParamStore ps;
  auto& p = ps.add("proj.fc1.w", 1, 2);
  p.grad(0, 0) = 1.0;
  p.grad(0, 1) = std::nan("");
  OptimizerState opt;
  CHECK_THROWS_WITH_AS(adam_step(ps, opt, {}),
                       doctest::Contains("proj.fc1.w"), NumericError);
}

TEST_CASE("cross entropy matches independent log-sum-exp evaluation") {
  // Uniform logits over four classes cost exactly ln 4.
  const std::vector<std::vector<double>> uniform = {{0.0, 0.0, 0.0, 0.0}};
  CHECK(cross_entropy_loss(uniform, {2}) ==
        doctest::Approx(1.3862943611198906).epsilon(1e-15));

  // A dominant correct logit costs nearly nothing.
  const std::vector<std::vector<double>> confident = {{30.0, 0.0, 0.0}};
  CHECK(cross_entropy_loss(confident, {0}) < 1e-12);

  // Batch loss is the mean of per-row losses.
  const std::vector<std::vector<double>> row = {{0.4, -1.2, 2.0}};
  const double single = cross_entropy_loss(row, {1});
  const std::vector<std::vector<double>> twice = {row[0], row[0]};
  CHECK(cross_entropy_loss(twice, {1, 1}) ==
        doctest::Approx(single).epsilon(1e-15));

  // Random batch against a long-double max-shifted recomputation.
  RngStream rng(77);
  std::vector<std::vector<double>> logits(5,
                                          std::vector<double>(4));
  std::vector<int> labels;
  long double expect = 0.0L;
  for (auto& r : logits) {
    for (auto& x : r) x = 3.0 * rng.normal();
    labels.push_back(static_cast<int>(rng.uniform_below(4)));
  }
  for (std::size_t i = 0; i < logits.size(); ++i) {
    long double mx = logits[i][0];
    for (double x : logits[i]) mx = std::max<long double>(mx, x);
    long double denom = 0.0L;
    for (double x : logits[i]) denom += expl(x - mx);
    expect += logl(denom) + mx - logits[i][labels[i]];
  }
  expect /= logits.size();
  CHECK(cross_entropy_loss(logits, labels) ==
        doctest::Approx(static_cast<double>(expect)).epsilon(1e-13));
}

TEST_CASE("cross entropy rejects malformed batches") {
  CHECK_THROWS_AS(cross_entropy_loss({}, {}), DataError);
  CHECK_THROWS_AS(cross_entropy_loss({{0.0, 1.0}}, {0, 1}), DataError);
  CHECK_THROWS_AS(cross_entropy_loss({{0.0, 1.0}}, {2}), DataError);
  CHECK_THROWS_AS(cross_entropy_loss({{0.0, 1.0}}, {-1}), DataError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg.lr = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.support_capacity = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("pretraining warms up on the first batch and logs by epoch") {
  const auto ds = tiny_corpus(30, 5);  // 120 windows
  const auto cfg = tiny_train_config();
  afm::model::Model m(small_config(), 4, 21);
  OptimizerState opt;
  opt.lr = cfg.lr;
  const auto log = pretrain_backbone(m, ds.windows, cfg, opt);

  // 15 full batches per epoch; the very first is warm-up and records no loss.
  REQUIRE(log.epoch_mean_loss.size() == 3);
  REQUIRE(log.batch_loss.size() == 44);
  double head = 0.0;
  for (std::size_t i = 0; i < 14; ++i) head += log.batch_loss[i];
  CHECK(log.epoch_mean_loss[0] == doctest::Approx(head / 14.0).epsilon(1e-15));
  double mid = 0.0;
  for (std::size_t i = 14; i < 29; ++i) mid += log.batch_loss[i];
  CHECK(log.epoch_mean_loss[1] == doctest::Approx(mid / 15.0).epsilon(1e-15));

  // Capacity is the binding constraint: 45 pushes of 8 rows each.
  CHECK(log.support_size == 64);

  // Optimization makes progress on this corpus.
  CHECK(log.epoch_mean_loss.back() < log.epoch_mean_loss.front());

  // The warm-up batch never stepped the optimizer.
  CHECK(opt.step == 44);
}

TEST_CASE("pretraining skips classifier parameters and is deterministic") {
  const auto ds = tiny_corpus(16, 9);  // 64 windows, 8 batches per epoch
  auto cfg = tiny_train_config();
  cfg.pretrain_epochs = 2;

  afm::model::Model a(small_config(), 4, 33);
  std::vector<std::string> names;
  std::vector<std::vector<double>> before;
  for (const auto& p : a.params().all()) {
    names.push_back(p->name);
    before.emplace_back(p->value.data(), p->value.data() + p->value.size());
  }
  OptimizerState opt_a;
  const auto log_a = pretrain_backbone(a, ds.windows, cfg, opt_a);

  std::size_t moved = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& p = *a.params().all()[i];
    const bool classifier = prefix_matches(p.name, "head.") ||
                            prefix_matches(p.name, "probe.");
    bool identical = true;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      if (p.value.data()[j] != before[i][j]) identical = false;
    }
    if (classifier) {
      CHECK(identical);
    } else if (!identical) {
      ++moved;
    }
  }
  CHECK(moved > 0);

  // A fresh model under the same seeds reproduces the run bit for bit.
  afm::model::Model b(small_config(), 4, 33);
  OptimizerState opt_b;
  const auto log_b = pretrain_backbone(b, ds.windows, cfg, opt_b);
  REQUIRE(log_b.batch_loss.size() == log_a.batch_loss.size());
  for (std::size_t i = 0; i < log_a.batch_loss.size(); ++i) {
    CHECK(log_a.batch_loss[i] == log_b.batch_loss[i]);
  }
  const auto va = snapshot_values(a.params());
  const auto vb = snapshot_values(b.params());
  REQUIRE(va.size() == vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    for (std::size_t j = 0; j < va[i].size(); ++j) {
      CHECK(va[i][j] == vb[i][j]);
    }
  }
}

TEST_CASE("pretraining needs two batches of windows") {
  const auto ds = tiny_corpus(3, 5);  // 12 windows
  auto cfg = tiny_train_config();     // batch_size 8 needs >= 16
  afm::model::Model m(small_config(), 4, 2);
  OptimizerState opt;
  CHECK_THROWS_AS(pretrain_backbone(m, ds.windows, cfg, opt), DataError);
}

TEST_CASE("head training moves only the selected head") {
  const auto ds = tiny_corpus(10, 13);  // 40 windows, 4 classes
  auto cfg = tiny_train_config();
  cfg.head_epochs = 4;
  afm::model::Model m(small_config(), 4, 55);

  std::vector<std::vector<double>> before = snapshot_values(m.params());
  OptimizerState opt;
  const auto log = train_head(m, ds, afm::model::HeadKind::Mlp, cfg, opt);
  REQUIRE(log.epoch_mean_loss.size() == 4);
  CHECK(log.epoch_mean_loss.back() < log.epoch_mean_loss.front());

  bool head_moved = false;
  for (std::size_t i = 0; i < m.params().all().size(); ++i) {
    const auto& p = *m.params().all()[i];
    bool identical = true;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      if (p.value.data()[j] != before[i][j]) identical = false;
    }
    if (prefix_matches(p.name, "head.")) {
      if (!identical) head_moved = true;
    } else {
      // Backbone, projector, and the unused probe stay frozen.
      CHECK(identical);
    }
  }
  CHECK(head_moved);
}

TEST_CASE("linear probe training freezes the mlp head") {
  const auto ds = tiny_corpus(8, 3);
  auto cfg = tiny_train_config();
  cfg.head_epochs = 2;
  afm::model::Model m(small_config(), 4, 7);
  std::vector<std::vector<double>> before = snapshot_values(m.params());
  OptimizerState opt;
  train_head(m, ds, afm::model::HeadKind::Probe, cfg, opt);
  bool probe_moved = false;
  for (std::size_t i = 0; i < m.params().all().size(); ++i) {
    const auto& p = *m.params().all()[i];
    bool identical = true;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      if (p.value.data()[j] != before[i][j]) identical = false;
    }
    if (prefix_matches(p.name, "probe.")) {
      if (!identical) probe_moved = true;
    } else {
      CHECK(identical);
    }
  }
  CHECK(probe_moved);
}

TEST_CASE("head training separates an easy two-class problem") {
  // Smooth sine versus impulse train: far apart in patch space, so even a
  // frozen random encoder yields separable embeddings.
  afm::signal::LabeledDataset binary;
  binary.num_classes = 2;
  RngStream rng(2024);
  for (int i = 0; i < 24; ++i) {
    afm::signal::SignalWindow w;
    w.values.resize(24);
    const int label = i % 2;
    const double phase = rng.uniform() * 6.28318530717958647;
    for (int t = 0; t < 24; ++t) {
      const double noise = 0.05 * rng.normal();
      w.values[t] = label == 0 ? std::sin(6.28318530717958647 * t / 6.0 + phase) + noise
                               : (t % 4 == 0 ? 1.5 : 0.0) + noise;
    }
    w.label = label;
    binary.windows.push_back(afm::signal::normalize_window(w));
  }
  auto cfg = tiny_train_config();
  cfg.head_epochs = 40;
  cfg.lr = 0.01;
  afm::model::Model m(small_config(), 2, 99);
  OptimizerState opt;
  opt.lr = cfg.lr;
  train_head(m, binary, afm::model::HeadKind::Mlp, cfg, opt);
  const auto result = afm::eval::evaluate(m, binary, afm::model::HeadKind::Mlp,
                                          "train_fit", 1.0, 0, 1);
  CHECK(result.accuracy >= 0.9);
}

TEST_CASE("head training rejects a class-count mismatch") {
  const auto ds = tiny_corpus(4, 1);  // num_classes 4
  afm::model::Model m(small_config(), 3, 5);
  auto cfg = tiny_train_config();
  OptimizerState opt;
  CHECK_THROWS_AS(train_head(m, ds, afm::model::HeadKind::Mlp, cfg, opt),
                  DataError);
}

TEST_CASE("checkpoint round trip restores every bit of model state") {
  const auto ds = tiny_corpus(16, 41);
  auto cfg = tiny_train_config();
  cfg.pretrain_epochs = 1;
  afm::model::Model m(small_config(), 4, 123);
  OptimizerState opt;
  opt.lr = 0.002;
  pretrain_backbone(m, ds.windows, cfg, opt);
  train_head(m, ds, afm::model::HeadKind::Mlp, cfg, opt);

  const std::string path = "ckpt_roundtrip.bin";
  const std::vector<double> history = {0.5, 0.25, 0.125};
  save_checkpoint(path, m, opt, "head", history);
  auto loaded = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.phase == "head");
  REQUIRE(loaded.metric_history.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.metric_history[i] == history[i]);
  }
  CHECK(loaded.opt.lr == opt.lr);
  CHECK(loaded.opt.beta1 == opt.beta1);
  CHECK(loaded.opt.beta2 == opt.beta2);
  CHECK(loaded.opt.eps == opt.eps);
  CHECK(loaded.opt.step == opt.step);

  CHECK(loaded.model.num_classes() == m.num_classes());
  CHECK(loaded.model.config().window_len == m.config().window_len);
  CHECK(loaded.model.config().proj_dim == m.config().proj_dim);

  REQUIRE(loaded.model.buffers().size() == m.buffers().size());
  for (std::size_t i = 0; i < m.buffers().size(); ++i) {
    CHECK(loaded.model.buffers()[i].first == m.buffers()[i].first);
    const auto& ta = m.buffers()[i].second;
    const auto& tb = loaded.model.buffers()[i].second;
    REQUIRE(ta.size() == tb.size());
    for (std::size_t j = 0; j < ta.size(); ++j) {
      CHECK(ta.data()[j] == tb.data()[j]);
    }
  }

  REQUIRE(loaded.model.params().all().size() == m.params().all().size());
  for (std::size_t i = 0; i < m.params().all().size(); ++i) {
    const auto& pa = *m.params().all()[i];
    const auto& pb = *loaded.model.params().all()[i];
    REQUIRE(pa.name == pb.name);
    REQUIRE(pa.value.size() == pb.value.size());
    for (std::size_t j = 0; j < pa.value.size(); ++j) {
      CHECK(pa.value.data()[j] == pb.value.data()[j]);
      CHECK(pa.m.data()[j] == pb.m.data()[j]);
      CHECK(pa.v.data()[j] == pb.v.data()[j]);
    }
  }

  // Identical state implies identical inference outputs.
  std::vector<const afm::signal::SignalWindow*> probe;
  for (std::size_t i = 0; i < 6; ++i) probe.push_back(&ds.windows[i]);
  const auto sa = m.score_windows(probe, afm::model::HeadKind::Mlp, 1);
  const auto sb =
      loaded.model.score_windows(probe, afm::model::HeadKind::Mlp, 1);
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    for (std::size_t c = 0; c < sa[i].size(); ++c) {
      CHECK(sa[i][c] == sb[i][c]);
    }
  }
}

TEST_CASE("checkpoint loading rejects missing, foreign, and truncated files") {
  CHECK_THROWS_AS(load_checkpoint("no_such_dir/absent.bin"), DataError);

  const std::string garbage = "ckpt_garbage.bin";
  {
    std::ofstream os(garbage, std::ios::binary);
    os << "NOTACKPTFILE and then some padding bytes";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(garbage), doctest::Contains("magic"),
                       DataError);
  std::remove(garbage.c_str());

  afm::model::Model m(small_config(), 4, 1);
  OptimizerState opt;
  const std::string full = "ckpt_full.bin";
  save_checkpoint(full, m, opt, "pretrain", {});
  std::ifstream is(full, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                          std::istreambuf_iterator<char>());
  is.close();
  const std::string cut = "ckpt_cut.bin";
  {
    std::ofstream os(cut, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(cut), doctest::Contains("truncated"),
                       DataError);
  std::remove(full.c_str());
  std::remove(cut.c_str());
}

TEST_CASE("active learning loop pays the oracle per the query schedule") {
  const auto ds = tiny_corpus(40, 29);  // 160 windows
  const auto splits = afm::signal::split_dataset(ds, {}, 71);
  REQUIRE(splits.train.size() == 112);

  afm::al::ALConfig alcfg;
  alcfg.seed_fraction = 0.15;   // 17 seed labels on 112
  alcfg.round_fraction = 0.05;  // 6 admitted, 12 screened per round
  alcfg.rounds = 2;
  alcfg.seed = 5;
  auto cfg = tiny_train_config();
  cfg.head_epochs = 2;

  afm::model::Model m(small_config(), 4, 61);
  const auto run =
      al_training_loop(m, splits, alcfg, cfg, Strategy::ActiveLearning);

  REQUIRE(run.curve.size() == 3);
  REQUIRE(run.rounds.size() == 2);
  CHECK(run.curve[0].oracle_count == 17);
  CHECK(run.curve[1].oracle_count == 17 + 12);
  CHECK(run.curve[2].oracle_count == 17 + 24);
  CHECK(run.curve[0].label_fraction == doctest::Approx(17.0 / 112.0));
  CHECK(run.curve[1].label_fraction == doctest::Approx(23.0 / 112.0));
  CHECK(run.curve[2].label_fraction == doctest::Approx(35.0 / 112.0));
  for (std::size_t i = 1; i < run.curve.size(); ++i) {
    CHECK(run.curve[i].label_fraction > run.curve[i - 1].label_fraction);
    CHECK(run.curve[i].oracle_count > run.curve[i - 1].oracle_count);
  }
  for (const auto& pt : run.curve) {
    CHECK(pt.accuracy >= 0.0);
    CHECK(pt.accuracy <= 1.0);
    CHECK(pt.wall_seconds >= 0.0);
  }
  for (const auto& log : run.rounds) {
    CHECK(log.admitted == 6);
    CHECK(log.pool_shrunk == false);
  }

  // The random arm pays exactly the admitted count per round.
  afm::model::Model r(small_config(), 4, 61);
  const auto rand_run =
      al_training_loop(r, splits, alcfg, cfg, Strategy::RandomBaseline);
  REQUIRE(rand_run.curve.size() == 3);
  CHECK(rand_run.curve[0].oracle_count == 17);
  CHECK(rand_run.curve[1].oracle_count == 17 + 6);
  CHECK(rand_run.curve[2].oracle_count == 17 + 12);

  // Both strategies share the seed phase, so the runs are paired.
  CHECK(run.curve[0].accuracy == rand_run.curve[0].accuracy);
  CHECK(run.curve[0].label_fraction == rand_run.curve[0].label_fraction);
}

TEST_CASE("active learning loop is deterministic and honors rounds=0") {
  const auto ds = tiny_corpus(25, 31);  // 100 windows
  const auto splits = afm::signal::split_dataset(ds, {}, 3);
  afm::al::ALConfig alcfg;
  alcfg.rounds = 1;
  alcfg.seed = 9;
  auto cfg = tiny_train_config();
  cfg.head_epochs = 2;

  afm::model::Model a(small_config(), 4, 14);
  afm::model::Model b(small_config(), 4, 14);
  const auto ra = al_training_loop(a, splits, alcfg, cfg,
                                   Strategy::ActiveLearning);
  const auto rb = al_training_loop(b, splits, alcfg, cfg,
                                   Strategy::ActiveLearning);
  REQUIRE(ra.curve.size() == rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) {
    CHECK(ra.curve[i].accuracy == rb.curve[i].accuracy);
    CHECK(ra.curve[i].oracle_count == rb.curve[i].oracle_count);
    CHECK(ra.curve[i].label_fraction == rb.curve[i].label_fraction);
  }

  alcfg.rounds = 0;
  afm::model::Model c(small_config(), 4, 14);
  const auto rc = al_training_loop(c, splits, alcfg, cfg,
                                   Strategy::ActiveLearning);
  CHECK(rc.curve.size() == 1);
  CHECK(rc.rounds.empty());
}

TEST_CASE("task fine-tuning resizes the head and spares the backbone") {
  const auto ds = tiny_corpus(20, 47);  // 80 windows
  const auto splits = afm::signal::split_dataset(ds, {}, 19);
  const auto tasks = afm::eval::synthetic_tasks();
  const auto& detection = afm::eval::find_task(tasks, "fault_detection");
  const auto& diagnosis = afm::eval::find_task(tasks, "fault_diagnosis");

  auto cfg = tiny_train_config();
  cfg.head_epochs = 2;
  afm::model::Model m(small_config(), 4, 83);

  std::vector<std::vector<double>> backbone;
  std::vector<std::string> names;
  for (const auto& p : m.params().all()) {
    if (prefix_matches(p->name, "head.") || prefix_matches(p->name, "probe.")) {
      continue;
    }
    names.push_back(p->name);
    backbone.emplace_back(p->value.data(),
                          p->value.data() + p->value.size());
  }

  const auto res = finetune_for_task(m, detection, splits, 0.5, cfg,
                                     afm::model::HeadKind::Mlp, 7);
  CHECK(m.num_classes() == 2);
  CHECK(res.task == "fault_detection");
  CHECK(res.label_fraction == 0.5);
  CHECK(res.accuracy >= 0.0);
  CHECK(res.accuracy <= 1.0);
  std::size_t total = 0;
  for (const auto& row : res.confusion) {
    for (std::size_t n : row) total += n;
  }
  CHECK(total == afm::eval::build_task(splits.test, detection).size());

  // A wider task re-widens the classifier.
  finetune_for_task(m, diagnosis, splits, 0.5, cfg,
                    afm::model::HeadKind::Mlp, 7);
  CHECK(m.num_classes() == 4);

  std::size_t k = 0;
  for (const auto& p : m.params().all()) {
    if (prefix_matches(p->name, "head.") || prefix_matches(p->name, "probe.")) {
      continue;
    }
    REQUIRE(p->name == names[k]);
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      CHECK(p->value.data()[j] == backbone[k][j]);
    }
    ++k;
  }

  CHECK_THROWS_AS(finetune_for_task(m, detection, splits, 0.0, cfg,
                                    afm::model::HeadKind::Mlp, 7),
                  DataError);
  CHECK_THROWS_AS(finetune_for_task(m, detection, splits, 1.5, cfg,
                                    afm::model::HeadKind::Mlp, 7),
                  DataError);
}

}  // TEST_SUITE
