#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "afm/active_learning.hpp"
#include "afm/augment.hpp"
#include "afm/contrastive.hpp"
#include "afm/eval.hpp"
#include "afm/model.hpp"
#include "afm/signal.hpp"

namespace afm::train {

struct OptimizerState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
};

// Bias-corrected Adam over every parameter whose name does not start with a
// frozen scope prefix. Moment buffers live on the parameters themselves;
// frozen parameters keep value, moments and gradients untouched.
void adam_step(ad::ParamStore& params, OptimizerState& state,
               const std::set<std::string>& frozen_scopes);

// Mean over rows of -ln softmax(logits)[label], max-shifted.
double cross_entropy_loss(const std::vector<std::vector<double>>& logits,
                          const std::vector<int>& labels);

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t pretrain_epochs = 12;
  std::size_t head_epochs = 16;
  double lr = 0.001;
  std::uint64_t seed = 0;
  std::set<std::string> frozen_scopes;
  bool retrain_backbone_each_round = false;
  double temperature = 0.1;
  std::size_t support_capacity = 1024;
  augment::AugmentConfig strong = augment::AugmentConfig::strong_defaults();
  augment::AugmentConfig mild = augment::AugmentConfig::mild_defaults();
  std::size_t threads = 1;

  void validate() const;
};

struct PretrainLog {
  std::vector<double> epoch_mean_loss;
  std::vector<double> batch_loss;
  std::size_t support_size = 0;
};

// NNCLR pretraining of encoder + projection head. Windows must be
// normalized. The first batch only warms up the support set (no loss, no
// step); every later batch pushes its first-view projections after the loss.
PretrainLog pretrain_backbone(model::Model& m,
                              const std::vector<signal::SignalWindow>& windows,
                              const TrainConfig& cfg, OptimizerState& opt);

struct HeadTrainLog {
  std::vector<double> epoch_mean_loss;
};

// Trains the chosen classifier head on frozen-backbone embeddings with mild
// augmentation. Backbone and projection parameters are bit-identical before
// and after: embeddings are produced by forward-only passes and the frozen
// scopes never reach the optimizer.
HeadTrainLog train_head(model::Model& m, const signal::LabeledDataset& labeled,
                        model::HeadKind kind, const TrainConfig& cfg,
                        OptimizerState& opt);

enum class Strategy { ActiveLearning, RandomBaseline };

struct CurvePoint {
  double label_fraction = 0.0;
  double accuracy = 0.0;  // held-out test accuracy
  std::uint64_t oracle_count = 0;
  double wall_seconds = 0.0;  // recorded to the side, not in the curve file
};

struct ALRunResult {
  std::vector<CurvePoint> curve;  // seed point plus one point per round
  std::vector<al::RoundLog> rounds;
};

// Seed-phase stratified labeling, then rounds of (query, retrain head,
// evaluate). Both strategies share the seed split and per-round retrain
// seeds so runs are paired. The backbone stays frozen unless
// retrain_backbone_each_round is set.
ALRunResult al_training_loop(model::Model& m,
                             const signal::DatasetSplits& splits,
                             const al::ALConfig& alcfg, const TrainConfig& cfg,
                             Strategy strategy,
                             model::HeadKind kind = model::HeadKind::Mlp);

// Fresh classifier sized to the task, head-only training on a stratified
// ceil(fraction * N) subset of the task's train split, then test evaluation.
eval::EvalResult finetune_for_task(model::Model& m, const eval::TaskSpec& task,
                                   const signal::DatasetSplits& splits,
                                   double fraction, const TrainConfig& cfg,
                                   model::HeadKind kind, std::uint64_t seed);

// Self-describing binary checkpoint: config, every parameter tensor with its
// Adam moments, batch-norm running buffers, optimizer state, phase tag and
// metric history. Support-set contents are not persisted (warm-up rebuilds
// them); the header records that.
void save_checkpoint(const std::string& path, const model::Model& m,
                     const OptimizerState& opt, const std::string& phase,
                     const std::vector<double>& metric_history);

struct LoadedCheckpoint {
  model::Model model;
  OptimizerState opt;
  std::string phase;
  std::vector<double> metric_history;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace afm::train
