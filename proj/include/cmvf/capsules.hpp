#pragma once

#include "cmvf/array.hpp"
#include "cmvf/tape.hpp"

namespace cmvf {

// How capsule membership probabilities are formed from the output norms.
// `norm` is the ratio form p_j = |m_j| / sum_k |m_k|; `softmax` is the
// alternative reading of the surrounding prose, kept behind a config switch.
enum class MembershipMode { norm, softmax };

// Pure single-vector squash: (|s|^2 / (1 + |s|^2)) * s / |s|, zero at zero.
Array squash(const Array& s);

struct Routed {
  NodeId capsules;    // [K, d] output vectors m_j
  NodeId membership;  // [K] probabilities p(m_j | history)
};

// Differentiable dynamic routing. Routing logits start at zero on every call;
// gradients flow through all iterations. caps_matrices is the stacked [K,d,d]
// bilinear map bank, h the encoded sequence.
Routed route(Tape& tape, NodeId caps_matrices, NodeId h, int iterations,
             MembershipMode mode = MembershipMode::norm);

// Probability-weighted pooling of capsule vectors: M = sum_j p_j m_j.
NodeId mode_pool(Tape& tape, NodeId capsules, NodeId membership);

// Value-level convenience wrapper (runs a throwaway non-tracking tape).
struct RoutedValues {
  Array capsules;
  Array membership;
};
RoutedValues route_values(const Array& caps_matrices, const Array& h, int iterations,
                          MembershipMode mode = MembershipMode::norm);

}  // namespace cmvf
