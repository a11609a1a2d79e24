#include "cmvf/capsules.hpp"

#include <cmath>

#include "cmvf/errors.hpp"

namespace cmvf {

Array squash(const Array& s) {
  double n2 = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) n2 += s[i] * s[i];
  double n = std::sqrt(n2);
  Array out(s.shape());
  if (n < 1e-12) return out;
  double c = n / (1.0 + n2);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = c * s[i];
  return out;
}

Routed route(Tape& tape, NodeId caps_matrices, NodeId h, int iterations, MembershipMode mode) {
  const Array& s = tape.value(caps_matrices);
  if (s.ndim() != 3 || s.dim(0) == 0) {
    throw ValidationError("route: capsule bank must be [K,d,d] with K >= 1, got " +
                          shape_str(s.shape()));
  }
  if (iterations < 1) {
    throw ValidationError("route: iteration count must be >= 1, got " +
                          std::to_string(iterations));
  }
  std::size_t k = s.dim(0);

  // u_j = S_j h does not change across iterations
  NodeId u = tape.caps_matvec(caps_matrices, h);
  NodeId logits = tape.constant(Array({k}));  // b starts at zero on every call
  NodeId capsules = -1;
  for (int it = 0; it < iterations; ++it) {
    NodeId w = tape.softmax(logits);
    NodeId scaled = tape.row_scale(u, w);
    capsules = tape.squash_rows(scaled);
    logits = tape.add(logits, tape.row_dot(capsules, u));
  }
  NodeId norms = tape.row_norms(capsules);
  NodeId membership =
      mode == MembershipMode::norm ? tape.normalize_sum(norms) : tape.softmax(norms);
  return {capsules, membership};
}

NodeId mode_pool(Tape& tape, NodeId capsules, NodeId membership) {
  return tape.weighted_row_sum(capsules, membership);
}

RoutedValues route_values(const Array& caps_matrices, const Array& h, int iterations,
                          MembershipMode mode) {
  Tape tape(false);
  NodeId sn = tape.param(&caps_matrices, nullptr);
  NodeId hn = tape.param(&h, nullptr);
  Routed r = route(tape, sn, hn, iterations, mode);
  return {tape.value(r.capsules), tape.value(r.membership)};
}

}  // namespace cmvf
