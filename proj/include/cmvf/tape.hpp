#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>

#include "cmvf/array.hpp"

namespace cmvf {

using NodeId = std::int32_t;

// Define-by-run reverse-mode tape over Array-valued nodes.
//
// Every op appends a node holding its value plus a closure that scatters the
// node's adjoint into its inputs. backward() walks nodes in reverse creation
// order; a node is always created after its inputs, so each adjoint is
// complete before it is propagated. The graph is rebuilt per batch.
//
// Parameter nodes reference external storage for both value and gradient, so
// one tape per student costs no parameter copies and gradients accumulate
// straight into the trainer's buffers.
class Tape {
 public:
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----
  NodeId constant(Array value);
  // value/grad_sink must outlive the tape; grad_sink may be null (frozen).
  NodeId param(const Array* value, Array* grad_sink);
  // Copies row `row` of a rank-2 table; adjoints accumulate into the same
  // row of grad_table (may be null).
  NodeId table_row(const Array& table, Array* grad_table, std::size_t row);

  // ---- access ----
  const Array& value(NodeId id) const { return *nodes_[static_cast<std::size_t>(id)].value; }
  const Array& grad(NodeId id) const { return *nodes_[static_cast<std::size_t>(id)].grad; }
  bool tracking() const { return track_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = seed and propagates. root must be scalar.
  void backward(NodeId root, double seed = 1.0);

  // ---- elementwise / reshaping ----
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId sum(NodeId a);
  NodeId dot(NodeId a, NodeId b);
  NodeId concat(std::span<const NodeId> parts);
  NodeId slice(NodeId a, std::size_t begin, std::size_t len);
  NodeId mean_of(std::span<const NodeId> parts);  // elementwise mean of same-shape nodes
  NodeId sigmoid(NodeId a);
  NodeId tanh_(NodeId a);
  NodeId exp_(NodeId a);
  NodeId log_(NodeId a);
  // Hard clamp; adjoint passes only where lo < x < hi.
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId softmax(NodeId v);

  // ---- dense linear algebra ----
  NodeId matvec(NodeId weight, NodeId input);             // [m,n]x[n] -> [m]
  NodeId linear(NodeId weight, NodeId input, NodeId bias);  // W x + b
  // Applies one [d,d] map to every row of [K,d]: out_j = W row_j + b.
  NodeId rows_linear(NodeId weight, NodeId rows, NodeId bias);
  // Stacked per-capsule transform: stacked [K,d,d], x [d] -> [K,d], out_j = S_j x.
  NodeId caps_matvec(NodeId stacked, NodeId x);

  // ---- rowwise ops over [K,d] (rank-1 input treated as a single row) ----
  NodeId row_scale(NodeId rows, NodeId weights);        // out_j = w_j * row_j
  NodeId row_dot(NodeId a, NodeId b);                   // [K]: dot per row
  NodeId row_norms(NodeId rows);                        // [K]: L2 norm per row
  NodeId squash_rows(NodeId rows);                      // capsule squash per row
  NodeId weighted_row_sum(NodeId rows, NodeId weights);  // [d]: sum_j w_j row_j

  // p_j = v_j / sum(v); all-zero input falls back to uniform (constant there).
  NodeId normalize_sum(NodeId v);

  // ---- model-level fused ops ----
  // Positive cross-entropy with prediction clamped to [eps, 1-eps], eps = 1e-7.
  NodeId binary_cross_entropy(NodeId pred, int label);
  // KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p)) summed over dimensions.
  NodeId kl_diag(NodeId mu_q, NodeId lv_q, NodeId mu_p, NodeId lv_p);
  // KL against the standard normal.
  NodeId kl_std(NodeId mu, NodeId lv);
  // mu + exp(lv/2) * noise; noise is a constant.
  NodeId reparam(NodeId mu, NodeId lv, Array noise);

  static constexpr double kBceEps = 1e-7;

 private:
  struct Node {
    Array owned_value;
    const Array* value = nullptr;
    Array owned_grad;
    Array* grad = nullptr;
    std::size_t grad_offset = 0;  // for table rows: offset into *grad
    std::function<void(Tape&, const Array&)> pull;  // scatters adjoint to inputs
  };

  NodeId push_value(Array value);
  Array& grad_mut(NodeId id) { return *nodes_[static_cast<std::size_t>(id)].grad; }
  void set_pull(NodeId id, std::function<void(Tape&, const Array&)> fn);
  void accumulate(NodeId id, const Array& g);
  void require_same_shape(const char* op, NodeId a, NodeId b) const;

  std::deque<Node> nodes_;
  bool track_;
};

}  // namespace cmvf
