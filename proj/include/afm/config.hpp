#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afm/active_learning.hpp"
#include "afm/augment.hpp"
#include "afm/encoder.hpp"
#include "afm/signal.hpp"
#include "afm/training.hpp"

namespace afm::config {

// Flat sectioned key=value run configuration. Every field defaults to the
// module-level default; parsing rejects unknown sections and keys so typos
// cannot silently fall back to defaults.
struct RunConfig {
  struct Run {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::size_t threads = 1;
  } run;

  struct Signal {
    std::size_t window_len = 192;
    std::size_t stride = 192;
    std::string manifest;  // empty: use the synthetic generator
    double sample_rate = 12000.0;
    std::size_t synth_classes = 4;
    std::size_t windows_per_class = 500;
    double noise_sigma = 0.6;
    std::vector<double> base_freq_hz = {433.0, 811.0, 852.0, 1741.0};
    std::vector<std::size_t> impulse_period = {97, 53, 53, 29};
    std::vector<double> impulse_amplitude = {0.0, 1.6, 1.6, 1.6};
  } signal;

  afm::signal::SplitFractions split;

  augment::AugmentConfig strong = augment::AugmentConfig::strong_defaults();
  augment::AugmentConfig mild = augment::AugmentConfig::mild_defaults();

  struct Encoder {
    std::size_t patch_len = 12;
    std::size_t d_model = 64;
    std::size_t num_blocks = 4;
    std::size_t num_heads = 4;
    std::size_t ffn_expansion = 4;
    std::size_t proj_dim = 256;
    double dropout_prob = 0.0;
    double layernorm_eps = 1e-5;
  } encoder;

  struct Contrastive {
    double temperature = 0.1;
    std::size_t support_capacity = 1024;
  } contrastive;

  struct Al {
    double seed_fraction = 0.15;
    double round_fraction = 0.05;
    std::size_t screen_multiplier = 2;
    std::size_t rounds = 3;
  } al;

  struct Training {
    std::size_t batch_size = 64;
    std::size_t pretrain_epochs = 12;
    std::size_t head_epochs = 16;
    double lr = 0.001;
    std::string head = "mlp";  // mlp | probe
    bool retrain_backbone = false;
    std::string checkpoint = "backbone.ckpt";
  } training;

  struct Eval {
    std::string task = "fault_diagnosis";
    std::vector<double> fractions = {0.05, 0.10, 0.15, 0.20, 0.25};
    std::string format = "csv";  // csv | markdown
  } eval;

  void validate() const;

  // Derived module configs.
  afm::signal::SyntheticSpec synth_spec() const;
  model::EncoderConfig encoder_config() const;
  train::TrainConfig train_config() const;
  afm::al::ALConfig al_config() const;
  model::HeadKind head_kind() const;

  // Serialization in the same sectioned format parse_config accepts.
  std::string to_ini() const;
};

// Parses the sectioned key=value format. '#' or ';' lines are comments.
// Unknown sections or keys, malformed values, and keys outside any section
// are DataErrors naming the offending line.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

}  // namespace afm::config
