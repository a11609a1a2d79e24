#include "cmvf/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <utility>
#include <vector>

#include "cmvf/errors.hpp"

namespace cmvf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<const RowMat>;
using MatMut = Eigen::Map<RowMat>;
using VecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMut = Eigen::Map<Eigen::VectorXd>;

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

NodeId Tape::push_value(Array value) {
  Node& n = nodes_.emplace_back();
  n.owned_value = std::move(value);
  n.value = &n.owned_value;
  if (track_) {
    n.owned_grad = Array(n.owned_value.shape());
    n.grad = &n.owned_grad;
  }
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::set_pull(NodeId id, std::function<void(Tape&, const Array&)> fn) {
  if (track_) nodes_[static_cast<std::size_t>(id)].pull = std::move(fn);
}

void Tape::accumulate(NodeId id, const Array& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad) return;
  double* dst = n.grad->data() + n.grad_offset;
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tape::require_same_shape(const char* op, NodeId a, NodeId b) const {
  if (!value(a).same_shape(value(b))) {
    throw DimensionError(std::string(op) + ": operands " + shape_str(value(a).shape()) +
                         " vs " + shape_str(value(b).shape()));
  }
}

NodeId Tape::constant(Array value) {
  Node& n = nodes_.emplace_back();
  n.owned_value = std::move(value);
  n.value = &n.owned_value;
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::param(const Array* value, Array* grad_sink) {
  if (track_ && grad_sink && !grad_sink->same_shape(*value)) {
    throw DimensionError("param: gradient sink " + shape_str(grad_sink->shape()) + " vs value " +
                         shape_str(value->shape()));
  }
  Node& n = nodes_.emplace_back();
  n.value = value;
  if (track_ && grad_sink) n.grad = grad_sink;
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::table_row(const Array& table, Array* grad_table, std::size_t row) {
  if (table.ndim() != 2) {
    throw DimensionError("table_row: table must be rank-2, got " + shape_str(table.shape()));
  }
  if (row >= table.dim(0)) {
    throw ValidationError("table_row: row " + std::to_string(row) + " out of " +
                          std::to_string(table.dim(0)));
  }
  std::size_t d = table.dim(1);
  Array v({d});
  const double* src = table.data() + row * d;
  for (std::size_t i = 0; i < d; ++i) v[i] = src[i];

  Node& n = nodes_.emplace_back();
  n.owned_value = std::move(v);
  n.value = &n.owned_value;
  if (track_ && grad_table) {
    n.grad = grad_table;
    n.grad_offset = row * d;
  }
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::backward(NodeId root, double seed) {
  if (!track_) throw NumericError("backward: tape built with gradients disabled");
  const Array& rv = value(root);
  if (rv.size() != 1) {
    throw DimensionError("backward: root must be scalar, got " + shape_str(rv.shape()));
  }
  Array s({1});
  s[0] = seed;
  accumulate(root, s);
  for (NodeId i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.pull) n.pull(*this, n.owned_grad);
  }
}

// ---------------------------------------------------------------------------
// elementwise / reshaping
// ---------------------------------------------------------------------------

NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape("add", a, b);
  const Array& av = value(a);
  const Array& bv = value(b);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, b](Tape& t, const Array& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
  return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require_same_shape("sub", a, b);
  const Array& av = value(a);
  const Array& bv = value(b);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, b](Tape& t, const Array& g) {
    t.accumulate(a, g);
    Array neg(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    t.accumulate(b, neg);
  });
  return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_shape("mul", a, b);
  const Array& av = value(a);
  const Array& bv = value(b);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, b](Tape& t, const Array& g) {
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    Array ga(g.shape());
    Array gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
  return id;
}

NodeId Tape::scale(NodeId a, double c) {
  const Array& av = value(a);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, c](Tape& t, const Array& g) {
    Array ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::sum(NodeId a) {
  const Array& av = value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  NodeId id = push_value(Array::scalar(s));
  set_pull(id, [a](Tape& t, const Array& g) {
    Array ga(t.value(a).shape());
    ga.fill(g[0]);
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::dot(NodeId a, NodeId b) {
  require_same_shape("dot", a, b);
  const Array& av = value(a);
  const Array& bv = value(b);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  NodeId id = push_value(Array::scalar(s));
  set_pull(id, [a, b](Tape& t, const Array& g) {
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    Array ga(av.shape());
    Array gb(bv.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
      ga[i] = g[0] * bv[i];
      gb[i] = g[0] * av[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
  return id;
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  std::size_t total = 0;
  for (NodeId p : parts) total += value(p).size();
  Array out({total});
  std::size_t off = 0;
  for (NodeId p : parts) {
    const Array& pv = value(p);
    for (std::size_t i = 0; i < pv.size(); ++i) out[off + i] = pv[i];
    off += pv.size();
  }
  std::vector<NodeId> ids(parts.begin(), parts.end());
  NodeId id = push_value(std::move(out));
  set_pull(id, [ids](Tape& t, const Array& g) {
    std::size_t off = 0;
    for (NodeId p : ids) {
      std::size_t n = t.value(p).size();
      Array gp(t.value(p).shape());
      for (std::size_t i = 0; i < n; ++i) gp[i] = g[off + i];
      t.accumulate(p, gp);
      off += n;
    }
  });
  return id;
}

NodeId Tape::slice(NodeId a, std::size_t begin, std::size_t len) {
  const Array& av = value(a);
  if (begin + len > av.size()) {
    throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                         ") out of " + shape_str(av.shape()));
  }
  Array out({len});
  for (std::size_t i = 0; i < len; ++i) out[i] = av[begin + i];
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, begin, len](Tape& t, const Array& g) {
    Array ga(t.value(a).shape());
    for (std::size_t i = 0; i < len; ++i) ga[begin + i] = g[i];
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::mean_of(std::span<const NodeId> parts) {
  if (parts.empty()) throw DimensionError("mean_of: no operands");
  for (NodeId p : parts) require_same_shape("mean_of", parts[0], p);
  const Array& first = value(parts[0]);
  Array out(first.shape());
  for (NodeId p : parts) {
    const Array& pv = value(p);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += pv[i];
  }
  double inv = 1.0 / static_cast<double>(parts.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  std::vector<NodeId> ids(parts.begin(), parts.end());
  NodeId id = push_value(std::move(out));
  set_pull(id, [ids, inv](Tape& t, const Array& g) {
    Array gp(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] = g[i] * inv;
    for (NodeId p : ids) t.accumulate(p, gp);
  });
  return id;
}

NodeId Tape::sigmoid(NodeId a) {
  const Array& av = value(a);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(av[i]);
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, id](Tape& t, const Array& g) {
    const Array& s = t.value(id);
    Array ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s[i] * (1.0 - s[i]);
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::tanh_(NodeId a) {
  const Array& av = value(a);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, id](Tape& t, const Array& g) {
    const Array& y = t.value(id);
    Array ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::exp_(NodeId a) {
  const Array& av = value(a);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, id](Tape& t, const Array& g) {
    const Array& y = t.value(id);
    Array ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i];
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::log_(NodeId a) {
  const Array& av = value(a);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (av[i] <= 0.0) throw NumericError("log: non-positive input " + std::to_string(av[i]));
    out[i] = std::log(av[i]);
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [a](Tape& t, const Array& g) {
    const Array& x = t.value(a);
    Array ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / x[i];
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
  const Array& av = value(a);
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(av[i], lo), hi);
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, lo, hi](Tape& t, const Array& g) {
    const Array& x = t.value(a);
    Array ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = (x[i] > lo && x[i] < hi) ? g[i] : 0.0;
    }
    t.accumulate(a, ga);
  });
  return id;
}

NodeId Tape::softmax(NodeId v) {
  const Array& x = value(v);
  if (x.size() == 0) throw DimensionError("softmax: empty vector");
  double mx = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, x[i]);
  Array out(x.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] /= z;
  NodeId id = push_value(std::move(out));
  set_pull(id, [v, id](Tape& t, const Array& g) {
    const Array& s = t.value(id);
    double gs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gs += g[i] * s[i];
    Array gv(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] = s[i] * (g[i] - gs);
    t.accumulate(v, gv);
  });
  return id;
}

// ---------------------------------------------------------------------------
// dense linear algebra
// ---------------------------------------------------------------------------

NodeId Tape::matvec(NodeId weight, NodeId input) {
  const Array& w = value(weight);
  const Array& x = value(input);
  if (w.ndim() != 2 || x.ndim() != 1 || w.dim(1) != x.dim(0)) {
    throw DimensionError("matvec: weight " + shape_str(w.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  std::size_t m = w.dim(0), n = w.dim(1);
  Array out({m});
  VecMut(out.data(), static_cast<Eigen::Index>(m)) =
      MatMap(w.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) *
      VecMap(x.data(), static_cast<Eigen::Index>(n));
  NodeId id = push_value(std::move(out));
  set_pull(id, [weight, input, m, n](Tape& t, const Array& g) {
    const Array& w = t.value(weight);
    const Array& x = t.value(input);
    VecMap gv(g.data(), static_cast<Eigen::Index>(m));
    Array gw({m, n});
    MatMut(gw.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
        gv * VecMap(x.data(), static_cast<Eigen::Index>(n)).transpose();
    t.accumulate(weight, gw);
    Array gx({n});
    VecMut(gx.data(), static_cast<Eigen::Index>(n)).noalias() =
        MatMap(w.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).transpose() *
        gv;
    t.accumulate(input, gx);
  });
  return id;
}

NodeId Tape::linear(NodeId weight, NodeId input, NodeId bias) {
  const Array& w = value(weight);
  const Array& x = value(input);
  const Array& b = value(bias);
  if (w.ndim() != 2 || x.ndim() != 1 || b.ndim() != 1 || w.dim(1) != x.dim(0) ||
      w.dim(0) != b.dim(0)) {
    throw DimensionError("linear: weight " + shape_str(w.shape()) + ", input " +
                         shape_str(x.shape()) + ", bias " + shape_str(b.shape()));
  }
  NodeId y = matvec(weight, input);
  return add(y, bias);
}

NodeId Tape::rows_linear(NodeId weight, NodeId rows, NodeId bias) {
  const Array& w = value(weight);
  const Array& x = value(rows);
  const Array& b = value(bias);
  if (w.ndim() != 2 || x.ndim() != 2 || b.ndim() != 1 || w.dim(1) != x.dim(1) ||
      w.dim(0) != b.dim(0)) {
    throw DimensionError("rows_linear: weight " + shape_str(w.shape()) + ", rows " +
                         shape_str(x.shape()) + ", bias " + shape_str(b.shape()));
  }
  std::size_t k = x.dim(0), n = x.dim(1), m = w.dim(0);
  Array out({k, m});
  {
    MatMut o(out.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
    o.noalias() = MatMap(x.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) *
                  MatMap(w.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n))
                      .transpose();
    o.rowwise() += VecMap(b.data(), static_cast<Eigen::Index>(m)).transpose();
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [weight, rows, bias, k, n, m](Tape& t, const Array& g) {
    const Array& w = t.value(weight);
    const Array& x = t.value(rows);
    MatMap gm(g.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
    Array gw({m, n});
    MatMut(gw.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
        gm.transpose() *
        MatMap(x.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    t.accumulate(weight, gw);
    Array gx({k, n});
    MatMut(gx.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)).noalias() =
        gm * MatMap(w.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    t.accumulate(rows, gx);
    Array gb({m});
    VecMut(gb.data(), static_cast<Eigen::Index>(m)).noalias() = gm.colwise().sum().transpose();
    t.accumulate(bias, gb);
  });
  return id;
}

NodeId Tape::caps_matvec(NodeId stacked, NodeId x) {
  const Array& s = value(stacked);
  const Array& h = value(x);
  if (s.ndim() != 3 || h.ndim() != 1 || s.dim(2) != h.dim(0)) {
    throw DimensionError("caps_matvec: stacked " + shape_str(s.shape()) + " vs input " +
                         shape_str(h.shape()));
  }
  std::size_t k = s.dim(0), m = s.dim(1), n = s.dim(2);
  Array out({k, m});
  for (std::size_t j = 0; j < k; ++j) {
    VecMut(out.data() + j * m, static_cast<Eigen::Index>(m)).noalias() =
        MatMap(s.data() + j * m * n, static_cast<Eigen::Index>(m),
               static_cast<Eigen::Index>(n)) *
        VecMap(h.data(), static_cast<Eigen::Index>(n));
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [stacked, x, k, m, n](Tape& t, const Array& g) {
    const Array& s = t.value(stacked);
    const Array& h = t.value(x);
    VecMap hv(h.data(), static_cast<Eigen::Index>(n));
    Array gs({k, m, n});
    Array gh({n});
    VecMut ghv(gh.data(), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < k; ++j) {
      VecMap gj(g.data() + j * m, static_cast<Eigen::Index>(m));
      MatMut(gs.data() + j * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n))
          .noalias() = gj * hv.transpose();
      ghv.noalias() += MatMap(s.data() + j * m * n, static_cast<Eigen::Index>(m),
                              static_cast<Eigen::Index>(n))
                           .transpose() *
                       gj;
    }
    t.accumulate(stacked, gs);
    t.accumulate(x, gh);
  });
  return id;
}

// ---------------------------------------------------------------------------
// rowwise ops
// ---------------------------------------------------------------------------

namespace {

// [K,d] view of a rank-1 or rank-2 node value
std::pair<std::size_t, std::size_t> rows_dims(const Array& a, const char* op) {
  if (a.ndim() == 1) return {1, a.dim(0)};
  if (a.ndim() == 2) return {a.dim(0), a.dim(1)};
  throw DimensionError(std::string(op) + ": expected rank-1 or rank-2, got " +
                       shape_str(a.shape()));
}

}  // namespace

NodeId Tape::row_scale(NodeId rows, NodeId weights) {
  const Array& x = value(rows);
  const Array& w = value(weights);
  auto [k, d] = rows_dims(x, "row_scale");
  if (w.size() != k) {
    throw DimensionError("row_scale: rows " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  }
  Array out(x.shape());
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d; ++i) out[j * d + i] = w[j] * x[j * d + i];
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [rows, weights, k, d](Tape& t, const Array& g) {
    const Array& x = t.value(rows);
    const Array& w = t.value(weights);
    Array gx(x.shape());
    Array gw(t.value(weights).shape());
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        gx[j * d + i] = w[j] * g[j * d + i];
        s += g[j * d + i] * x[j * d + i];
      }
      gw[j] = s;
    }
    t.accumulate(rows, gx);
    t.accumulate(weights, gw);
  });
  return id;
}

NodeId Tape::row_dot(NodeId a, NodeId b) {
  require_same_shape("row_dot", a, b);
  const Array& av = value(a);
  auto [k, d] = rows_dims(av, "row_dot");
  const Array& bv = value(b);
  Array out({k});
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += av[j * d + i] * bv[j * d + i];
    out[j] = s;
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [a, b, k, d](Tape& t, const Array& g) {
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    Array ga(av.shape());
    Array gb(bv.shape());
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        ga[j * d + i] = g[j] * bv[j * d + i];
        gb[j * d + i] = g[j] * av[j * d + i];
      }
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
  return id;
}

NodeId Tape::row_norms(NodeId rows) {
  const Array& x = value(rows);
  auto [k, d] = rows_dims(x, "row_norms");
  Array out({k});
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += x[j * d + i] * x[j * d + i];
    out[j] = std::sqrt(s);
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [rows, id, k, d](Tape& t, const Array& g) {
    const Array& x = t.value(rows);
    const Array& nrm = t.value(id);
    Array gx(x.shape());
    for (std::size_t j = 0; j < k; ++j) {
      if (nrm[j] < 1e-300) continue;
      double c = g[j] / nrm[j];
      for (std::size_t i = 0; i < d; ++i) gx[j * d + i] = c * x[j * d + i];
    }
    t.accumulate(rows, gx);
  });
  return id;
}

NodeId Tape::squash_rows(NodeId rows) {
  const Array& x = value(rows);
  auto [k, d] = rows_dims(x, "squash_rows");
  Array out(x.shape());
  for (std::size_t j = 0; j < k; ++j) {
    double s2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) s2 += x[j * d + i] * x[j * d + i];
    double n = std::sqrt(s2);
    double c = (n < 1e-12) ? 0.0 : n / (1.0 + s2);
    for (std::size_t i = 0; i < d; ++i) out[j * d + i] = c * x[j * d + i];
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [rows, k, d](Tape& t, const Array& g) {
    const Array& x = t.value(rows);
    Array gx(x.shape());
    for (std::size_t j = 0; j < k; ++j) {
      double s2 = 0.0;
      double gdots = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        s2 += x[j * d + i] * x[j * d + i];
        gdots += g[j * d + i] * x[j * d + i];
      }
      double n = std::sqrt(s2);
      if (n < 1e-12) continue;  // squash has a zero Jacobian limit at the origin
      double c = n / (1.0 + s2);
      double dc = (1.0 - s2) / ((1.0 + s2) * (1.0 + s2));  // dc/dn
      double t2 = dc * gdots / n;
      for (std::size_t i = 0; i < d; ++i) gx[j * d + i] = c * g[j * d + i] + t2 * x[j * d + i];
    }
    t.accumulate(rows, gx);
  });
  return id;
}

NodeId Tape::weighted_row_sum(NodeId rows, NodeId weights) {
  const Array& x = value(rows);
  const Array& w = value(weights);
  auto [k, d] = rows_dims(x, "weighted_row_sum");
  if (w.size() != k) {
    throw DimensionError("weighted_row_sum: rows " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  }
  Array out({d});
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d; ++i) out[i] += w[j] * x[j * d + i];
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [rows, weights, k, d](Tape& t, const Array& g) {
    const Array& x = t.value(rows);
    const Array& w = t.value(weights);
    Array gx(x.shape());
    Array gw(w.shape());
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        gx[j * d + i] = w[j] * g[i];
        s += g[i] * x[j * d + i];
      }
      gw[j] = s;
    }
    t.accumulate(rows, gx);
    t.accumulate(weights, gw);
  });
  return id;
}

NodeId Tape::normalize_sum(NodeId v) {
  const Array& x = value(v);
  if (x.size() == 0) throw DimensionError("normalize_sum: empty vector");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i];
  Array out(x.shape());
  if (total <= 0.0) {
    // all-zero norms: fall back to the uniform distribution (constant)
    out.fill(1.0 / static_cast<double>(x.size()));
    return push_value(std::move(out));
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / total;
  NodeId id = push_value(std::move(out));
  set_pull(id, [v, id, total](Tape& t, const Array& g) {
    const Array& p = t.value(id);
    double gp = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gp += g[i] * p[i];
    Array gv(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] = (g[i] - gp) / total;
    t.accumulate(v, gv);
  });
  return id;
}

// ---------------------------------------------------------------------------
// model-level fused ops
// ---------------------------------------------------------------------------

NodeId Tape::binary_cross_entropy(NodeId pred, int label) {
  if (label != 0 && label != 1) {
    throw ValidationError("binary_cross_entropy: label must be 0 or 1, got " +
                          std::to_string(label));
  }
  const Array& p = value(pred);
  if (p.size() != 1) {
    throw DimensionError("binary_cross_entropy: prediction must be scalar, got " +
                         shape_str(p.shape()));
  }
  double pc = std::min(std::max(p[0], kBceEps), 1.0 - kBceEps);
  double loss = (label == 1) ? -std::log(pc) : -std::log(1.0 - pc);
  NodeId id = push_value(Array::scalar(loss));
  set_pull(id, [pred, label](Tape& t, const Array& g) {
    double p0 = t.value(pred)[0];
    if (p0 <= kBceEps || p0 >= 1.0 - kBceEps) return;  // clamped flat region
    Array gp({1});
    gp[0] = g[0] * (p0 - static_cast<double>(label)) / (p0 * (1.0 - p0));
    t.accumulate(pred, gp);
  });
  return id;
}

NodeId Tape::kl_diag(NodeId mu_q, NodeId lv_q, NodeId mu_p, NodeId lv_p) {
  require_same_shape("kl_diag", mu_q, lv_q);
  require_same_shape("kl_diag", mu_q, mu_p);
  require_same_shape("kl_diag", mu_q, lv_p);
  const Array& mq = value(mu_q);
  const Array& lq = value(lv_q);
  const Array& mp = value(mu_p);
  const Array& lp = value(lv_p);
  double kl = 0.0;
  for (std::size_t i = 0; i < mq.size(); ++i) {
    double diff = mq[i] - mp[i];
    kl += 0.5 * ((lp[i] - lq[i]) + (std::exp(lq[i]) + diff * diff) * std::exp(-lp[i]) - 1.0);
  }
  NodeId id = push_value(Array::scalar(kl));
  set_pull(id, [mu_q, lv_q, mu_p, lv_p](Tape& t, const Array& g) {
    const Array& mq = t.value(mu_q);
    const Array& lq = t.value(lv_q);
    const Array& mp = t.value(mu_p);
    const Array& lp = t.value(lv_p);
    std::size_t n = mq.size();
    Array gmq(mq.shape()), glq(lq.shape()), gmp(mp.shape()), glp(lp.shape());
    for (std::size_t i = 0; i < n; ++i) {
      double inv_vp = std::exp(-lp[i]);
      double vq = std::exp(lq[i]);
      double diff = mq[i] - mp[i];
      gmq[i] = g[0] * diff * inv_vp;
      gmp[i] = -gmq[i];
      glq[i] = g[0] * 0.5 * (vq * inv_vp - 1.0);
      glp[i] = g[0] * 0.5 * (1.0 - (vq + diff * diff) * inv_vp);
    }
    t.accumulate(mu_q, gmq);
    t.accumulate(lv_q, glq);
    t.accumulate(mu_p, gmp);
    t.accumulate(lv_p, glp);
  });
  return id;
}

NodeId Tape::kl_std(NodeId mu, NodeId lv) {
  require_same_shape("kl_std", mu, lv);
  const Array& m = value(mu);
  const Array& l = value(lv);
  double kl = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    kl += 0.5 * (m[i] * m[i] + std::exp(l[i]) - l[i] - 1.0);
  }
  NodeId id = push_value(Array::scalar(kl));
  set_pull(id, [mu, lv](Tape& t, const Array& g) {
    const Array& m = t.value(mu);
    const Array& l = t.value(lv);
    Array gm(m.shape()), gl(l.shape());
    for (std::size_t i = 0; i < m.size(); ++i) {
      gm[i] = g[0] * m[i];
      gl[i] = g[0] * 0.5 * (std::exp(l[i]) - 1.0);
    }
    t.accumulate(mu, gm);
    t.accumulate(lv, gl);
  });
  return id;
}

NodeId Tape::reparam(NodeId mu, NodeId lv, Array noise) {
  require_same_shape("reparam", mu, lv);
  const Array& m = value(mu);
  if (!m.same_shape(noise)) {
    throw DimensionError("reparam: noise " + shape_str(noise.shape()) + " vs mu " +
                         shape_str(m.shape()));
  }
  const Array& l = value(lv);
  Array out(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    out[i] = m[i] + std::exp(0.5 * l[i]) * noise[i];
  }
  NodeId id = push_value(std::move(out));
  set_pull(id, [mu, lv, noise = std::move(noise)](Tape& t, const Array& g) {
    const Array& l = t.value(lv);
    t.accumulate(mu, g);
    Array gl(l.shape());
    for (std::size_t i = 0; i < l.size(); ++i) {
      gl[i] = g[i] * 0.5 * std::exp(0.5 * l[i]) * noise[i];
    }
    t.accumulate(lv, gl);
  });
  return id;
}

}  // namespace cmvf
