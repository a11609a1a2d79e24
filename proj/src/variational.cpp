#include "cmvf/variational.hpp"

#include <cmath>

#include "cmvf/errors.hpp"

namespace cmvf {

double kl_diag(const GaussianParams& q, const GaussianParams& p) {
  if (!q.mu.same_shape(p.mu) || !q.mu.same_shape(q.log_var) || !p.mu.same_shape(p.log_var)) {
    throw DimensionError("kl_diag: mismatched parameter shapes " + shape_str(q.mu.shape()) +
                         " vs " + shape_str(p.mu.shape()));
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    double lq = q.log_var[i];
    double lp = p.log_var[i];
    double diff = q.mu[i] - p.mu[i];
    kl += 0.5 * ((lp - lq) + (std::exp(lq) + diff * diff) * std::exp(-lp) - 1.0);
  }
  return kl;
}

Array reparameterize(const GaussianParams& g, const Array& noise) {
  if (!g.mu.same_shape(noise) || !g.mu.same_shape(g.log_var)) {
    throw DimensionError("reparameterize: noise " + shape_str(noise.shape()) + " vs mu " +
                         shape_str(g.mu.shape()));
  }
  Array out(g.mu.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = g.mu[i] + std::exp(0.5 * g.log_var[i]) * noise[i];
  }
  return out;
}

double prior_weight(std::int64_t n) {
  if (n < 0) throw ValidationError("prior_weight: count must be >= 0, got " + std::to_string(n));
  double e = std::exp(-static_cast<double>(n));
  return e / (1.0 + e);
}

GaussianParams mixture_prior(const std::vector<double>& p,
                             const std::vector<GaussianParams>& components) {
  if (p.size() != components.size() || components.empty()) {
    throw DimensionError("mixture_prior: " + std::to_string(p.size()) + " weights vs " +
                         std::to_string(components.size()) + " components");
  }
  std::size_t d = components[0].mu.size();
  Array mu({d});
  Array var({d});
  for (std::size_t j = 0; j < components.size(); ++j) {
    if (components[j].mu.size() != d) {
      throw DimensionError("mixture_prior: component " + std::to_string(j) + " has dimension " +
                           std::to_string(components[j].mu.size()) + ", expected " +
                           std::to_string(d));
    }
    for (std::size_t i = 0; i < d; ++i) {
      mu[i] += p[j] * components[j].mu[i];
      var[i] += p[j] * std::exp(components[j].log_var[i]);
    }
  }
  GaussianParams out{std::move(mu), Array({d})};
  for (std::size_t i = 0; i < d; ++i) out.log_var[i] = std::log(var[i]);
  return out;
}

Gauss gaussian_head(Tape& tape, const GaussHeadNodes& head, NodeId input) {
  NodeId mu = tape.linear(head.w_mu, input, head.b_mu);
  NodeId lv = tape.clamp(tape.linear(head.w_lv, input, head.b_lv), kLogVarMin, kLogVarMax);
  return {mu, lv};
}

Gauss capsule_mixture(Tape& tape, const GaussHeadNodes& head, NodeId capsules,
                      NodeId membership) {
  NodeId mu_rows = tape.rows_linear(head.w_mu, capsules, head.b_mu);
  NodeId lv_rows =
      tape.clamp(tape.rows_linear(head.w_lv, capsules, head.b_lv), kLogVarMin, kLogVarMax);
  NodeId mu = tape.weighted_row_sum(mu_rows, membership);
  NodeId var = tape.weighted_row_sum(tape.exp_(lv_rows), membership);
  return {mu, tape.log_(var)};
}

NodeId reparameterize(Tape& tape, const Gauss& g, Array noise) {
  return tape.reparam(g.mu, g.log_var, std::move(noise));
}

NodeId kl(Tape& tape, const Gauss& q, const Gauss& p) {
  return tape.kl_diag(q.mu, q.log_var, p.mu, p.log_var);
}

NodeId kl_standard(Tape& tape, const Gauss& q) { return tape.kl_std(q.mu, q.log_var); }

}  // namespace cmvf
