#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmvf/array.hpp"
#include "cmvf/tape.hpp"
#include "cmvf/variational.hpp"

namespace cmvf {

struct ModelDims {
  std::size_t students = 0;
  std::size_t questions = 0;
  std::size_t concepts = 0;
  std::size_t embedding = 64;  // d
  std::size_t capsules = 30;   // K

  bool operator==(const ModelDims&) const = default;
};

struct GaussHeadParams {
  Array w_mu;  // [d, d]
  Array b_mu;  // [d]
  Array w_lv;  // [d, d]
  Array b_lv;  // [d]
};

// Every learnable array in the model. entries() fixes the canonical order
// used by the optimizer, the checkpoint format and the gradient checker.
struct ModelParams {
  ModelDims dims;

  Array student_emb;   // [n_students, d]
  Array question_emb;  // [n_questions, d]
  Array concept_emb;   // [n_concepts, d]
  Array response_emb;  // [2, d]

  Array lstm_wx;  // [4d, 2d]
  Array lstm_wh;  // [4d, d]
  Array lstm_b;   // [4d]

  Array caps_s;  // [K, d, d]

  GaussHeadParams head_student;
  GaussHeadParams head_question;
  GaussHeadParams head_concept;
  GaussHeadParams head_capsule;

  Array pred_w1;  // [2d, 4d]
  Array pred_b1;  // [2d]
  Array pred_w2;  // [1, 2d]
  Array pred_b2;  // [1]

  std::vector<std::pair<std::string, Array*>> entries();
  std::vector<std::pair<std::string, const Array*>> entries() const;
};

// All arrays allocated to their canonical shapes, zero-filled.
ModelParams allocate_params(const ModelDims& dims);

// Xavier-uniform weights, zero biases, deterministic in (dims, seed).
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

// Same shapes, all zeros; used for gradient accumulators.
ModelParams zeros_like(const ModelParams& params);

// Registers every parameter array on a tape once and hands out embedding-row
// nodes with per-row caching. grads may be null for frozen evaluation.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params, ModelParams* grads);

  Tape& tape;
  const ModelParams& params;

  NodeId lstm_wx, lstm_wh, lstm_b;
  NodeId caps_s;
  GaussHeadNodes head_student, head_question, head_concept, head_capsule;
  NodeId pred_w1, pred_b1, pred_w2, pred_b2;

  NodeId student_row(std::size_t u);
  NodeId question_row(std::size_t q);
  NodeId concept_row(std::size_t c);
  NodeId response_row(int y);

 private:
  ModelParams* grads_;
  std::unordered_map<std::size_t, NodeId> student_cache_;
  std::unordered_map<std::size_t, NodeId> question_cache_;
  std::unordered_map<std::size_t, NodeId> concept_cache_;
  NodeId response_cache_[2] = {-1, -1};
};

}  // namespace cmvf
