#pragma once

#include <cstdint>
#include <vector>

#include "cmvf/array.hpp"
#include "cmvf/tape.hpp"

namespace cmvf {

// log-variance clamp applied before every exponentiation
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// ---------------------------------------------------------------------------
// Value-level distribution parameters (tests, inference helpers, bindings).
// ---------------------------------------------------------------------------

struct GaussianParams {
  Array mu;
  Array log_var;
};

// Closed-form KL between diagonal Gaussians, summed over dimensions.
double kl_diag(const GaussianParams& q, const GaussianParams& p);

// mu + exp(log_var / 2) * noise. Zero noise gives exactly mu, which is the
// inference-phase embedding rule.
Array reparameterize(const GaussianParams& g, const Array& noise);

// Personalized prior weight beta = 1 - sigmoid(n), monotone decreasing from
// 0.5 at n = 0 and effectively vanishing for frequent entities.
double prior_weight(std::int64_t n);

// Moment-matched mixture of diagonal Gaussians: mean = sum p_i mu_i,
// variance = sum p_i var_i.
GaussianParams mixture_prior(const std::vector<double>& p,
                             const std::vector<GaussianParams>& components);

// ---------------------------------------------------------------------------
// Tape-side builders used by the model graph.
// ---------------------------------------------------------------------------

struct Gauss {
  NodeId mu = -1;
  NodeId log_var = -1;
};

// Parameter nodes of one Gaussian head: two parallel linear maps.
struct GaussHeadNodes {
  NodeId w_mu = -1;
  NodeId b_mu = -1;
  NodeId w_lv = -1;
  NodeId b_lv = -1;
};

// mu = W_mu x + b_mu, log_var = clamp(W_lv x + b_lv).
Gauss gaussian_head(Tape& tape, const GaussHeadNodes& head, NodeId input);

// Applies the head to every capsule row and moment-matches the p-weighted
// mixture back to a single diagonal Gaussian.
Gauss capsule_mixture(Tape& tape, const GaussHeadNodes& head, NodeId capsules,
                      NodeId membership);

NodeId reparameterize(Tape& tape, const Gauss& g, Array noise);
NodeId kl(Tape& tape, const Gauss& q, const Gauss& p);
NodeId kl_standard(Tape& tape, const Gauss& q);

}  // namespace cmvf
