#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "afm/rng.hpp"
#include "afm/signal.hpp"

namespace afm::al {

// H(p) = -sum p ln p with 0 ln 0 = 0. Validates p as a distribution.
double shannon_entropy(const std::vector<double>& p);

// KL(q||p) with one-hot q at `label`: -ln p[label], p clamped at 1e-12.
double class_kl(int label, const std::vector<double>& p);

// Indices of the `count` highest-entropy distributions, descending entropy,
// ties broken by lower index.
std::vector<std::size_t> select_by_entropy(
    const std::vector<std::vector<double>>& pool_probs, std::size_t count);

// candidates[i] has oracle label labels[i]; returns the `count` candidates
// of highest class_kl(label, pool_probs[candidate]), descending, ties by
// lower candidate index.
std::vector<std::size_t> rerank_by_kl(
    const std::vector<std::size_t>& candidates, const std::vector<int>& labels,
    const std::vector<std::vector<double>>& pool_probs, std::size_t count);

// Ground-truth-backed labeling authority; every call is a charged query.
class Oracle {
 public:
  explicit Oracle(const signal::LabeledDataset& truth) : truth_(&truth) {}
  int label(std::size_t index);
  std::uint64_t query_count() const { return queries_; }

 private:
  const signal::LabeledDataset* truth_;
  std::uint64_t queries_ = 0;
};

struct ALConfig {
  double seed_fraction = 0.15;
  double round_fraction = 0.05;
  std::size_t screen_multiplier = 2;
  std::size_t rounds = 3;
  std::uint64_t seed = 0;
  void validate() const;
};

struct RoundLog {
  std::size_t round = 0;
  std::uint64_t oracle_count = 0;
  double entropy_mean = 0.0;
  double entropy_max = 0.0;
  double kl_mean = 0.0;
  double kl_max = 0.0;
  double labeled_fraction = 0.0;
  double val_accuracy = 0.0;
  std::size_t admitted = 0;
  bool pool_shrunk = false;
};

std::string format_round_log(const RoundLog& log);

// Labeled/pool bookkeeping over universe indices. The side cache holds
// screened-but-not-admitted items whose labels are already paid for; they
// are admitted at the start of the next round before new queries.
struct ALState {
  std::vector<std::size_t> labeled;  // universe indices, admission order
  std::vector<int> labels;           // aligned with labeled
  std::vector<std::size_t> pool;     // ascending universe indices
  std::map<std::size_t, int> cache;

  void check_disjoint() const;  // labeled and pool disjoint, cache within pool
};

// Scores the given universe indices, returning one distribution per index.
using PoolScorer =
    std::function<std::vector<std::vector<double>>(const std::vector<std::size_t>&)>;

// One entropy-screen / KL-rerank query round. total_size fixes K via
// round_fraction; a pool smaller than the screen budget shrinks K and flags
// the log. The oracle is charged exactly once per screened item.
RoundLog al_round(const PoolScorer& scorer, ALState& state, Oracle& oracle,
                  const ALConfig& cfg, std::size_t total_size,
                  std::size_t round_no);

// Comparison arm: K uniform pool picks without replacement.
RoundLog random_baseline_round(ALState& state, Oracle& oracle,
                               const ALConfig& cfg, std::size_t total_size,
                               std::size_t round_no, RngStream& rng);

// Deterministic stratified sample of exactly `count` indices (capped at the
// dataset size): per-class largest-remainder shares, at least one per class
// when count allows.
std::vector<std::size_t> stratified_subset_indices(
    const signal::LabeledDataset& ds, std::size_t count, std::uint64_t seed);

// Stratified seed selection: round(fraction * size) indices, at least one
// per class, shuffled deterministically.
std::vector<std::size_t> stratified_seed_indices(
    const signal::LabeledDataset& ds, double fraction, std::uint64_t seed);

}  // namespace afm::al
