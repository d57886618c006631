#include "afm/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "afm/errors.hpp"

namespace afm::al {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr std::uint64_t kSeedPhaseTag = 0x5345454450;

void validate_distribution(const std::vector<double>& p) {
  if (p.empty()) throw DataError("empty class distribution");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DataError("class distribution has negative or non-finite entry");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DataError("class distribution does not sum to 1");
  }
}

// Descending by score, ties broken by lower index.
std::vector<std::size_t> top_by_score(const std::vector<double>& scores,
                                      std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(count);
  return order;
}

}  // namespace

double shannon_entropy(const std::vector<double>& p) {
  validate_distribution(p);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double class_kl(int label, const std::vector<double>& p) {
  validate_distribution(p);
  if (label < 0 || static_cast<std::size_t>(label) >= p.size()) {
    throw DataError("class_kl: label out of range");
  }
  return -std::log(std::max(p[static_cast<std::size_t>(label)], kProbFloor));
}

std::vector<std::size_t> select_by_entropy(
    const std::vector<std::vector<double>>& pool_probs, std::size_t count) {
  if (count > pool_probs.size()) {
    throw DataError("select_by_entropy: count exceeds pool size");
  }
  std::vector<double> h(pool_probs.size());
  for (std::size_t i = 0; i < pool_probs.size(); ++i) {
    h[i] = shannon_entropy(pool_probs[i]);
  }
  return top_by_score(h, count);
}

std::vector<std::size_t> rerank_by_kl(
    const std::vector<std::size_t>& candidates, const std::vector<int>& labels,
    const std::vector<std::vector<double>>& pool_probs, std::size_t count) {
  if (labels.size() != candidates.size()) {
    throw DataError("rerank_by_kl: a candidate is missing its label");
  }
  if (count > candidates.size()) {
    throw DataError("rerank_by_kl: count exceeds candidate count");
  }
  std::vector<double> kl(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    kl[i] = class_kl(labels[i], pool_probs.at(candidates[i]));
  }
  const auto top = top_by_score(kl, count);
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = candidates[top[i]];
  return out;
}

int Oracle::label(std::size_t index) {
  ++queries_;
  return truth_->label_of(index);
}

void ALConfig::validate() const {
  if (!(seed_fraction > 0.0 && seed_fraction <= 1.0) ||
      !(round_fraction > 0.0 && round_fraction <= 1.0)) {
    throw DataError("AL fractions must be in (0, 1]");
  }
  if (screen_multiplier < 1) throw DataError("screen_multiplier must be >= 1");
}

std::string format_round_log(const RoundLog& log) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "round=" << log.round << " oracle_count=" << log.oracle_count
     << " entropy_mean=" << log.entropy_mean
     << " entropy_max=" << log.entropy_max << " kl_mean=" << log.kl_mean
     << " kl_max=" << log.kl_max << " labeled_fraction=" << log.labeled_fraction
     << " val_accuracy=" << log.val_accuracy << " admitted=" << log.admitted
     << " pool_shrunk=" << (log.pool_shrunk ? 1 : 0);
  return os.str();
}

void ALState::check_disjoint() const {
  std::set<std::size_t> seen(labeled.begin(), labeled.end());
  if (seen.size() != labeled.size()) {
    throw DataError("labeled set contains duplicates");
  }
  for (std::size_t idx : pool) {
    if (seen.count(idx) != 0) {
      throw DataError("labeled set and pool overlap");
    }
  }
  const std::set<std::size_t> pool_set(pool.begin(), pool.end());
  for (const auto& [idx, lab] : cache) {
    (void)lab;
    if (pool_set.count(idx) == 0) {
      throw DataError("cache entry is not in the pool");
    }
  }
}

namespace {

// Moves cached (already labeled) items from the pool into the labeled set;
// cache admission never touches the oracle.
std::size_t flush_cache(ALState& state) {
  if (state.cache.empty()) return 0;
  const std::size_t flushed = state.cache.size();
  for (const auto& [idx, lab] : state.cache) {
    state.labeled.push_back(idx);
    state.labels.push_back(lab);
  }
  state.pool.erase(std::remove_if(state.pool.begin(), state.pool.end(),
                                  [&](std::size_t idx) {
                                    return state.cache.count(idx) != 0;
                                  }),
                   state.pool.end());
  state.cache.clear();
  return flushed;
}

std::size_t round_k(const ALConfig& cfg, std::size_t total_size) {
  const std::size_t k = static_cast<std::size_t>(
      std::llround(cfg.round_fraction * static_cast<double>(total_size)));
  return std::max<std::size_t>(k, 1);
}

}  // namespace

RoundLog al_round(const PoolScorer& scorer, ALState& state, Oracle& oracle,
                  const ALConfig& cfg, std::size_t total_size,
                  std::size_t round_no) {
  cfg.validate();
  RoundLog log;
  log.round = round_no;
  flush_cache(state);
  if (state.pool.empty()) throw DataError("al_round: empty pool");

  std::size_t k = round_k(cfg, total_size);
  std::size_t screen = k * cfg.screen_multiplier;
  if (screen > state.pool.size()) {
    screen = state.pool.size();
    k = std::max<std::size_t>(screen / cfg.screen_multiplier, 1);
    log.pool_shrunk = true;
  }

  const auto pool_probs = scorer(state.pool);
  if (pool_probs.size() != state.pool.size()) {
    throw DataError("al_round: scorer returned wrong count");
  }

  double h_sum = 0.0;
  for (const auto& p : pool_probs) {
    const double h = shannon_entropy(p);
    h_sum += h;
    log.entropy_max = std::max(log.entropy_max, h);
  }
  log.entropy_mean = h_sum / static_cast<double>(pool_probs.size());

  const auto screened = select_by_entropy(pool_probs, screen);
  std::vector<int> screened_labels(screened.size());
  double kl_sum = 0.0;
  for (std::size_t i = 0; i < screened.size(); ++i) {
    screened_labels[i] = oracle.label(state.pool[screened[i]]);
    const double kl = class_kl(screened_labels[i], pool_probs[screened[i]]);
    kl_sum += kl;
    log.kl_max = std::max(log.kl_max, kl);
  }
  log.kl_mean = kl_sum / static_cast<double>(screened.size());

  const auto admit = rerank_by_kl(screened, screened_labels, pool_probs, k);
  const std::set<std::size_t> admit_set(admit.begin(), admit.end());
  std::map<std::size_t, int> label_by_pos;
  for (std::size_t i = 0; i < screened.size(); ++i) {
    label_by_pos[screened[i]] = screened_labels[i];
  }
  for (std::size_t pos : admit) {
    state.labeled.push_back(state.pool[pos]);
    state.labels.push_back(label_by_pos[pos]);
  }
  for (std::size_t pos : screened) {
    if (admit_set.count(pos) == 0) {
      state.cache[state.pool[pos]] = label_by_pos[pos];
    }
  }
  std::vector<std::size_t> new_pool;
  new_pool.reserve(state.pool.size() - admit.size());
  for (std::size_t i = 0; i < state.pool.size(); ++i) {
    if (admit_set.count(i) == 0) new_pool.push_back(state.pool[i]);
  }
  state.pool = std::move(new_pool);

  log.admitted = admit.size();
  log.oracle_count = oracle.query_count();
  state.check_disjoint();
  return log;
}

RoundLog random_baseline_round(ALState& state, Oracle& oracle,
                               const ALConfig& cfg, std::size_t total_size,
                               std::size_t round_no, RngStream& rng) {
  cfg.validate();
  RoundLog log;
  log.round = round_no;
  if (state.pool.empty()) throw DataError("random_baseline_round: empty pool");
  std::size_t k = round_k(cfg, total_size);
  if (k > state.pool.size()) {
    k = state.pool.size();
    log.pool_shrunk = true;
  }
  // Partial Fisher-Yates over pool positions.
  std::vector<std::size_t> positions(state.pool.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_below(positions.size() - i);
    std::swap(positions[i], positions[j]);
  }
  std::set<std::size_t> picked(positions.begin(), positions.begin() + k);
  for (std::size_t pos : picked) {
    const std::size_t idx = state.pool[pos];
    state.labeled.push_back(idx);
    state.labels.push_back(oracle.label(idx));
  }
  std::vector<std::size_t> new_pool;
  new_pool.reserve(state.pool.size() - k);
  for (std::size_t i = 0; i < state.pool.size(); ++i) {
    if (picked.count(i) == 0) new_pool.push_back(state.pool[i]);
  }
  state.pool = std::move(new_pool);
  log.admitted = k;
  log.oracle_count = oracle.query_count();
  state.check_disjoint();
  return log;
}

std::vector<std::size_t> stratified_subset_indices(
    const signal::LabeledDataset& ds, std::size_t count, std::uint64_t seed) {
  ds.validate();
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.label_of(i))].push_back(i);
  }
  const std::size_t want = std::min(count, ds.size());
  if (want == 0) throw DataError("stratified subset: count must be positive");

  // Proportional targets, filled greedily by largest remaining gap; every
  // class gets one first when the budget allows.
  std::vector<std::size_t> take(ds.num_classes, 0);
  std::size_t assigned = 0;
  if (want >= ds.num_classes) {
    for (std::size_t c = 0; c < ds.num_classes; ++c) take[c] = 1;
    assigned = ds.num_classes;
  }
  const double frac = static_cast<double>(want) / static_cast<double>(ds.size());
  std::vector<double> score(ds.num_classes);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    score[c] = frac * static_cast<double>(by_class[c].size());
  }
  while (assigned < want) {
    std::size_t best = ds.num_classes;
    double best_gap = -1e300;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      if (take[c] >= by_class[c].size()) continue;
      const double gap = score[c] - static_cast<double>(take[c]);
      if (gap > best_gap) {
        best_gap = gap;
        best = c;
      }
    }
    if (best == ds.num_classes) break;  // every class exhausted
    take[best] += 1;
    ++assigned;
  }

  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto members = by_class[c];
    RngStream rng(derive_seed(seed, kSeedPhaseTag, c));
    for (std::size_t i = members.size(); i > 1; --i) {
      const std::size_t j = rng.uniform_below(i);
      std::swap(members[i - 1], members[j]);
    }
    const std::size_t n = std::min(take[c], members.size());
    out.insert(out.end(), members.begin(), members.begin() + n);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> stratified_seed_indices(
    const signal::LabeledDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DataError("seed fraction must be in (0, 1]");
  }
  const std::size_t want = std::max<std::size_t>(
      static_cast<std::size_t>(
          std::llround(fraction * static_cast<double>(ds.size()))),
      ds.num_classes);
  return stratified_subset_indices(ds, want, seed);
}

}  // namespace afm::al
