#pragma once

#include "afm/rng.hpp"
#include "afm/signal.hpp"

namespace afm::augment {

struct AugmentConfig {
  double jitter_sigma = 0.0;
  double zero_prob = 0.0;
  std::size_t zero_seg_len = 0;
  std::size_t zero_num_segs = 0;

  void validate(std::size_t window_len) const;

  // Contrastive views: heavy corruption so the pretext task is nontrivial.
  static AugmentConfig strong_defaults() { return {0.2, 0.8, 16, 2}; }
  // Classifier training: mild perturbation only.
  static AugmentConfig mild_defaults() { return {0.05, 0.2, 8, 1}; }
};

// out[t] = w[t] + Normal(0, sigma^2); label and origin preserved.
signal::SignalWindow jitter(const signal::SignalWindow& w, double sigma,
                            RngStream& rng);

// With probability zero_prob, zeroes zero_num_segs segments of length
// zero_seg_len at uniform start offsets (segments may overlap).
signal::SignalWindow random_zeros(const signal::SignalWindow& w,
                                  const AugmentConfig& cfg, RngStream& rng);

// jitter composed after random_zeros; fresh randomness per call.
signal::SignalWindow contrastive_augment(const signal::SignalWindow& w,
                                         const AugmentConfig& cfg_strong,
                                         RngStream& rng);

// Same transform chain with mild strengths.
signal::SignalWindow classification_augment(const signal::SignalWindow& w,
                                            const AugmentConfig& cfg_mild,
                                            RngStream& rng);

}  // namespace afm::augment
