#include "cmvf/model.hpp"

#include <cmath>

#include "cmvf/errors.hpp"
#include "cmvf/rng.hpp"

namespace cmvf {

namespace {

template <typename Params, typename ArrayPtr>
std::vector<std::pair<std::string, ArrayPtr>> collect_entries(Params& p) {
  std::vector<std::pair<std::string, ArrayPtr>> out;
  out.emplace_back("student_emb", &p.student_emb);
  out.emplace_back("question_emb", &p.question_emb);
  out.emplace_back("concept_emb", &p.concept_emb);
  out.emplace_back("response_emb", &p.response_emb);
  out.emplace_back("lstm_wx", &p.lstm_wx);
  out.emplace_back("lstm_wh", &p.lstm_wh);
  out.emplace_back("lstm_b", &p.lstm_b);
  out.emplace_back("caps_s", &p.caps_s);
  auto head = [&out](const char* prefix, auto& h) {
    out.emplace_back(std::string(prefix) + ".w_mu", &h.w_mu);
    out.emplace_back(std::string(prefix) + ".b_mu", &h.b_mu);
    out.emplace_back(std::string(prefix) + ".w_lv", &h.w_lv);
    out.emplace_back(std::string(prefix) + ".b_lv", &h.b_lv);
  };
  head("head_student", p.head_student);
  head("head_question", p.head_question);
  head("head_concept", p.head_concept);
  head("head_capsule", p.head_capsule);
  out.emplace_back("pred_w1", &p.pred_w1);
  out.emplace_back("pred_b1", &p.pred_b1);
  out.emplace_back("pred_w2", &p.pred_w2);
  out.emplace_back("pred_b2", &p.pred_b2);
  return out;
}

void xavier_fill(Array& a, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-bound, bound);
}

}  // namespace

std::vector<std::pair<std::string, Array*>> ModelParams::entries() {
  return collect_entries<ModelParams, Array*>(*this);
}

std::vector<std::pair<std::string, const Array*>> ModelParams::entries() const {
  return collect_entries<const ModelParams, const Array*>(*this);
}

ModelParams allocate_params(const ModelDims& dims) {
  if (dims.students == 0 || dims.questions == 0 || dims.concepts == 0) {
    throw ValidationError("allocate_params: empty vocabulary");
  }
  if (dims.embedding == 0 || dims.capsules == 0) {
    throw ValidationError("allocate_params: embedding size and capsule count must be positive");
  }
  std::size_t d = dims.embedding;
  std::size_t k = dims.capsules;

  ModelParams p;
  p.dims = dims;
  p.student_emb = Array({dims.students, d});
  p.question_emb = Array({dims.questions, d});
  p.concept_emb = Array({dims.concepts, d});
  p.response_emb = Array({2, d});
  p.lstm_wx = Array({4 * d, 2 * d});
  p.lstm_wh = Array({4 * d, d});
  p.lstm_b = Array({4 * d});
  p.caps_s = Array({k, d, d});
  for (GaussHeadParams* h : {&p.head_student, &p.head_question, &p.head_concept,
                             &p.head_capsule}) {
    h->w_mu = Array({d, d});
    h->b_mu = Array({d});
    h->w_lv = Array({d, d});
    h->b_lv = Array({d});
  }
  p.pred_w1 = Array({2 * d, 4 * d});
  p.pred_b1 = Array({2 * d});
  p.pred_w2 = Array({1, 2 * d});
  p.pred_b2 = Array({1});
  return p;
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p = allocate_params(dims);
  std::size_t d = dims.embedding;

  Rng rng(stream_seed(seed, "init"));
  xavier_fill(p.student_emb, dims.students, d, rng);
  xavier_fill(p.question_emb, dims.questions, d, rng);
  xavier_fill(p.concept_emb, dims.concepts, d, rng);
  xavier_fill(p.response_emb, 2, d, rng);
  xavier_fill(p.lstm_wx, 2 * d, 4 * d, rng);
  xavier_fill(p.lstm_wh, d, 4 * d, rng);
  // per-capsule bilinear maps are d x d each
  xavier_fill(p.caps_s, d, d, rng);
  for (GaussHeadParams* h : {&p.head_student, &p.head_question, &p.head_concept,
                             &p.head_capsule}) {
    xavier_fill(h->w_mu, d, d, rng);
    xavier_fill(h->w_lv, d, d, rng);
  }
  xavier_fill(p.pred_w1, 4 * d, 2 * d, rng);
  xavier_fill(p.pred_w2, 2 * d, 1, rng);
  // biases (lstm_b, b_mu, b_lv, pred_b1, pred_b2) stay zero
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z;
  z.dims = params.dims;
  auto src = params.entries();
  auto dst = z.entries();
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].second = Array(src[i].second->shape());
  }
  return z;
}

BoundModel::BoundModel(Tape& tape_, const ModelParams& params_, ModelParams* grads)
    : tape(tape_), params(params_), grads_(grads) {
  auto bind = [&](const Array& value, Array ModelParams::* member) {
    return tape.param(&value, grads ? &(grads->*member) : nullptr);
  };
  lstm_wx = bind(params.lstm_wx, &ModelParams::lstm_wx);
  lstm_wh = bind(params.lstm_wh, &ModelParams::lstm_wh);
  lstm_b = bind(params.lstm_b, &ModelParams::lstm_b);
  caps_s = bind(params.caps_s, &ModelParams::caps_s);

  auto bind_head = [&](const GaussHeadParams& h, GaussHeadParams ModelParams::* member) {
    GaussHeadNodes nodes;
    nodes.w_mu = tape.param(&h.w_mu, grads ? &((grads->*member).w_mu) : nullptr);
    nodes.b_mu = tape.param(&h.b_mu, grads ? &((grads->*member).b_mu) : nullptr);
    nodes.w_lv = tape.param(&h.w_lv, grads ? &((grads->*member).w_lv) : nullptr);
    nodes.b_lv = tape.param(&h.b_lv, grads ? &((grads->*member).b_lv) : nullptr);
    return nodes;
  };
  head_student = bind_head(params.head_student, &ModelParams::head_student);
  head_question = bind_head(params.head_question, &ModelParams::head_question);
  head_concept = bind_head(params.head_concept, &ModelParams::head_concept);
  head_capsule = bind_head(params.head_capsule, &ModelParams::head_capsule);

  pred_w1 = bind(params.pred_w1, &ModelParams::pred_w1);
  pred_b1 = bind(params.pred_b1, &ModelParams::pred_b1);
  pred_w2 = bind(params.pred_w2, &ModelParams::pred_w2);
  pred_b2 = bind(params.pred_b2, &ModelParams::pred_b2);
}

NodeId BoundModel::student_row(std::size_t u) {
  auto it = student_cache_.find(u);
  if (it != student_cache_.end()) return it->second;
  NodeId id = tape.table_row(params.student_emb, grads_ ? &grads_->student_emb : nullptr, u);
  student_cache_.emplace(u, id);
  return id;
}

NodeId BoundModel::question_row(std::size_t q) {
  auto it = question_cache_.find(q);
  if (it != question_cache_.end()) return it->second;
  NodeId id = tape.table_row(params.question_emb, grads_ ? &grads_->question_emb : nullptr, q);
  question_cache_.emplace(q, id);
  return id;
}

NodeId BoundModel::concept_row(std::size_t c) {
  auto it = concept_cache_.find(c);
  if (it != concept_cache_.end()) return it->second;
  NodeId id = tape.table_row(params.concept_emb, grads_ ? &grads_->concept_emb : nullptr, c);
  concept_cache_.emplace(c, id);
  return id;
}

NodeId BoundModel::response_row(int y) {
  if (y != 0 && y != 1) {
    throw ValidationError("response_row: response must be 0 or 1, got " + std::to_string(y));
  }
  if (response_cache_[y] < 0) {
    response_cache_[y] = tape.table_row(params.response_emb,
                                        grads_ ? &grads_->response_emb : nullptr,
                                        static_cast<std::size_t>(y));
  }
  return response_cache_[y];
}

}  // namespace cmvf
