#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "afm/encoder.hpp"
#include "afm/graph.hpp"
#include "afm/signal.hpp"

namespace afm::model {

enum class HeadKind { Probe, Mlp };

// The full differentiable model: patch embedding + positional encoding +
// transformer blocks + mean pooling (the backbone), projection head for
// contrastive training, prediction MLP and linear probe for classification.
//
// Graph builders operate on batches laid out as flattened token rows
// ((batch*tokens) x d_model); attention is block-diagonal per window.
class Model {
 public:
  Model(const EncoderConfig& cfg, int num_classes, std::uint64_t init_seed);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const EncoderConfig& config() const { return cfg_; }
  int num_classes() const { return num_classes_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  std::vector<std::pair<std::string, ad::Tensor>>& buffers() { return buffers_; }
  const std::vector<std::pair<std::string, ad::Tensor>>& buffers() const {
    return buffers_;
  }
  ad::Tensor& buffer(const std::string& name);
  const ad::Tensor& positional_table() const { return pe_; }

  // Windows must be normalized and of length window_len (augmentation, if
  // any, happens upstream on the normalized signal).
  ad::Var encode_batch(ad::Graph& g,
                       const std::vector<const signal::SignalWindow*>& batch);
  ad::Var project_batch(ad::Graph& g, ad::Var embeddings, bool train_mode,
                        bool update_running);
  ad::Var mlp_logits(ad::Graph& g, ad::Var embeddings, bool train_mode,
                     bool update_running);
  ad::Var probe_logits(ad::Graph& g, ad::Var embeddings);

  // Inference helpers (no gradients, running statistics untouched).
  ad::Tensor embed_windows(const std::vector<const signal::SignalWindow*>& ws);
  ad::Tensor head_probabilities(const ad::Tensor& embeddings, HeadKind kind);
  std::vector<std::vector<double>> score_windows(
      const std::vector<const signal::SignalWindow*>& ws, HeadKind kind,
      std::size_t threads = 1);
  std::vector<int> predict(const signal::LabeledDataset& ds, HeadKind kind,
                           std::size_t threads = 1);

  // Fresh prediction MLP and probe sized to new_num_classes; encoder and
  // projection head untouched. Resets the head's batch-norm running stats
  // and optimizer moments.
  void reset_classifier(int new_num_classes, std::uint64_t seed);

 private:
  void add_head_params(std::uint64_t seed);
  void glorot_init(ad::Param& p, std::uint64_t seed);

  EncoderConfig cfg_;
  int num_classes_ = 0;
  std::uint64_t init_seed_ = 0;
  ad::ParamStore params_;
  std::vector<std::pair<std::string, ad::Tensor>> buffers_;
  ad::Tensor pe_;
};

}  // namespace afm::model
