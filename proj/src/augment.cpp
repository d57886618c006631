#include "afm/augment.hpp"

#include <cmath>

#include "afm/errors.hpp"

namespace afm::augment {

void AugmentConfig::validate(std::size_t window_len) const {
  if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma)) {
    throw DataError("jitter_sigma must be finite and >= 0");
  }
  if (!(zero_prob >= 0.0 && zero_prob <= 1.0)) {
    throw DataError("zero_prob must be in [0, 1]");
  }
  if (zero_seg_len * zero_num_segs > window_len) {
    throw DataError("zeroed samples would exceed the window length");
  }
}

signal::SignalWindow jitter(const signal::SignalWindow& w, double sigma,
                            RngStream& rng) {
  signal::SignalWindow out = w;
  if (sigma == 0.0) return out;
  for (double& v : out.values) v += sigma * rng.normal();
  return out;
}

signal::SignalWindow random_zeros(const signal::SignalWindow& w,
                                  const AugmentConfig& cfg, RngStream& rng) {
  signal::SignalWindow out = w;
  if (cfg.zero_prob == 0.0) return out;
  const bool apply = rng.uniform() < cfg.zero_prob;
  if (!apply || cfg.zero_seg_len == 0 || cfg.zero_num_segs == 0) return out;
  const std::size_t len = out.values.size();
  if (cfg.zero_seg_len > len) return out;  // config validated upstream
  const std::size_t starts = len - cfg.zero_seg_len + 1;
  for (std::size_t s = 0; s < cfg.zero_num_segs; ++s) {
    const std::size_t start = rng.uniform_below(starts);
    for (std::size_t i = 0; i < cfg.zero_seg_len; ++i) {
      out.values[start + i] = 0.0;
    }
  }
  return out;
}

signal::SignalWindow contrastive_augment(const signal::SignalWindow& w,
                                         const AugmentConfig& cfg_strong,
                                         RngStream& rng) {
  return jitter(random_zeros(w, cfg_strong, rng), cfg_strong.jitter_sigma, rng);
}

signal::SignalWindow classification_augment(const signal::SignalWindow& w,
                                            const AugmentConfig& cfg_mild,
                                            RngStream& rng) {
  return jitter(random_zeros(w, cfg_mild, rng), cfg_mild.jitter_sigma, rng);
}

}  // namespace afm::augment
