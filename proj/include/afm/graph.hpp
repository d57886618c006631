#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "afm/tensor.hpp"

namespace afm::ad {

// Trainable tensor with its gradient accumulator and Adam moment buffers.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
};

// Owns parameters; iteration follows insertion order, which fixes the update
// and serialization order.
class ParamStore {
 public:
  Param& add(const std::string& name, std::size_t rows, std::size_t cols);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const;
  void remove_prefix(const std::string& prefix);
  void zero_grads();

  std::vector<std::unique_ptr<Param>>& all() { return params_; }
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

// Handle to a node in a Graph.
struct Var {
  int id = -1;
};

// Define-by-run reverse-mode autodiff over 2D tensors. Each op records a
// closure that scatters the node's gradient into its parents' gradients.
// An inference graph skips the tape entirely; calling backward on it throws.
class Graph {
 public:
  explicit Graph(bool inference = false) : inference_(inference) {}

  bool inference() const { return inference_; }

  Var constant(Tensor t);
  Var param(Param& p);

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);          // a * b^T
  Var add(Var a, Var b);                // same shape
  Var sub(Var a, Var b);
  Var add_row_broadcast(Var x, Var row);  // row vector added to every row of x
  Var add_constant(Var x, const Tensor& c);
  Var scale(Var x, double s);
  Var hadamard(Var a, Var b);
  Var relu(Var x);
  Var gelu(Var x);                      // exact Gaussian-CDF form

  // Per-row layer norm with population variance; gain/bias are 1 x cols.
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps);

  // Scaled dot-product attention applied independently to each window's token
  // block and each head. q/k/v are (batch*tokens) x d_model, d_model divides
  // into num_heads slices, scaling is 1/sqrt(d_model/num_heads). Output heads
  // are re-concatenated in place, so the result is (batch*tokens) x d_model.
  Var multi_head_attention(Var q, Var k, Var v, std::size_t tokens,
                           std::size_t num_heads);

  // (batch*group) x d  ->  batch x d, mean over each group of rows.
  Var mean_pool_rows(Var x, std::size_t group);

  // Column-wise batch norm. In train mode statistics come from the batch
  // (population variance, >= 2 rows required) and, when update_running is
  // set, running buffers are updated with momentum. In eval mode the running
  // buffers are used and must be non-null.
  Var batch_norm(Var x, Var gamma, Var beta, Tensor* running_mean,
                 Tensor* running_var, bool train_mode, bool update_running,
                 double momentum, double eps);

  // Rows scaled to unit L2 norm; an all-zero row maps to the first basis
  // vector and receives zero gradient.
  Var l2_normalize_rows(Var x);

  Var concat_rows(Var a, Var b);
  Var slice_rows(Var x, std::size_t begin, std::size_t end);

  // Per-row log(sum_j keep(i,j) * exp(x(i,j))), computed max-shifted.
  // keep has x's shape with 0/1 entries; every row keeps at least one entry.
  Var row_logsumexp(Var x, std::vector<std::uint8_t> keep);

  // Scalar sum of w (*) x for a fixed weight tensor.
  Var weighted_sum(Var x, Tensor w);

  // Mean softmax cross-entropy of logits rows against integer labels.
  Var cross_entropy(Var logits, std::vector<int> labels);

  // Softmax probabilities of the given node's rows, computed outside the tape.
  Tensor softmax_rows_value(Var logits) const;

  // Seeds d(loss)=1, walks the tape, then adds node gradients into Params.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&)> back;
    Param* param = nullptr;
  };

  Tensor& gref(Var v) { return nodes_[v.id].grad; }
  Var emit(Tensor value, std::function<void(Graph&)> back, Param* p = nullptr);

  std::vector<Node> nodes_;
  bool inference_ = false;
};

// Softmax of a single row vector (numerically stabilized).
std::vector<double> softmax_vec(const std::vector<double>& logits);

}  // namespace afm::ad
