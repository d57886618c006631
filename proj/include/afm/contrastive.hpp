#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "afm/graph.hpp"

namespace afm::contrastive {

// Bounded FIFO of unit-normalized projections (a MoCo-like queue). Entries
// are plain values: nothing queued here participates in any gradient graph.
class SupportSet {
 public:
  explicit SupportSet(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t total_pushed() const { return total_pushed_; }

  // Entries in insertion order, oldest first.
  const std::vector<double>& entry(std::size_t i) const { return entries_[i]; }

  // Appends one unit-norm projection, evicting the oldest beyond capacity.
  void push(const std::vector<double>& p);
  // Appends tensor rows in row order.
  void push_rows(const ad::Tensor& rows);

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> entries_;
  std::uint64_t total_pushed_ = 0;
};

// <u,v>/(|u||v|); zero vectors are rejected.
double cosine_sim(const std::vector<double>& u, const std::vector<double>& v);

struct ContrastiveBatch {
  std::vector<std::vector<double>> z_a;
  std::vector<std::vector<double>> z_b;
  double temperature = 0.1;
};

// Symmetric NT-Xent over the 2N views: mean over pairs of l(i,j)+l(j,i),
// halved. Each directional term's denominator spans the other 2N-1 views.
double nt_xent_loss(const ContrastiveBatch& batch);

// argmin over the queue of Euclidean distance to z; ties resolve to the
// earliest-inserted entry.
std::size_t nearest_neighbor_index(const std::vector<double>& z,
                                   const SupportSet& s);
const std::vector<double>& nearest_neighbor(const std::vector<double>& z,
                                            const SupportSet& s);

// NNCLR loss over two aligned views of N unit projections. Directional term
// for i: numerator sim(NN(z_a[i],S), z_b[i])/tau; denominator sums
// exp(sim(NN(z_a[i],S), z_b[k])/tau) over the opposing batch with k != i.
// Symmetrized by swapping the view roles and averaging. NN lookups are
// constants: no gradient reaches the support set.
double nnclr_loss_value(const std::vector<std::vector<double>>& z_a,
                        const std::vector<std::vector<double>>& z_b,
                        const SupportSet& s, double tau);

// Graph form of the same loss for training; z_a/z_b are N x proj_dim nodes
// holding unit rows.
ad::Var nnclr_loss(ad::Graph& g, ad::Var z_a, ad::Var z_b, const SupportSet& s,
                   double tau);

}  // namespace afm::contrastive
