#include "cmvf/encoder.hpp"

#include <algorithm>

#include "cmvf/errors.hpp"

namespace cmvf {

EncoderState encoder_zero_state(Tape& tape, std::size_t d) {
  NodeId zero = tape.constant(Array({d}));
  return {zero, zero};
}

NodeId encoder_step_input(BoundModel& model, const InteractionEvent& event) {
  Tape& t = model.tape;
  if (event.concepts.empty()) {
    throw ValidationError("encoder_step_input: event has no concepts");
  }
  std::vector<NodeId> rows;
  rows.reserve(event.concepts.size());
  for (std::size_t c : event.concepts) rows.push_back(model.concept_row(c));
  NodeId concept_mean = rows.size() == 1 ? rows[0] : t.mean_of(rows);
  NodeId parts[] = {concept_mean, model.response_row(event.response)};
  return t.concat(parts);
}

EncoderState encode_step(BoundModel& model, const EncoderState& state, NodeId step_input) {
  Tape& t = model.tape;
  std::size_t d = model.params.dims.embedding;
  NodeId gates = t.add(t.linear(model.lstm_wx, step_input, model.lstm_b),
                       t.matvec(model.lstm_wh, state.hidden));
  NodeId in_gate = t.sigmoid(t.slice(gates, 0, d));
  NodeId forget_gate = t.sigmoid(t.slice(gates, d, d));
  NodeId out_gate = t.sigmoid(t.slice(gates, 2 * d, d));
  NodeId candidate = t.tanh_(t.slice(gates, 3 * d, d));
  NodeId cell = t.add(t.mul(forget_gate, state.cell), t.mul(in_gate, candidate));
  NodeId hidden = t.mul(out_gate, t.tanh_(cell));
  return {hidden, cell};
}

NodeId encode_sequence(BoundModel& model, std::span<const InteractionEvent> prefix,
                       std::size_t window) {
  std::size_t start = prefix.size() > window ? prefix.size() - window : 0;
  EncoderState state = encoder_zero_state(model.tape, model.params.dims.embedding);
  for (std::size_t i = start; i < prefix.size(); ++i) {
    state = encode_step(model, state, encoder_step_input(model, prefix[i]));
  }
  return state.hidden;
}

std::vector<NodeId> encode_prefix_taps(BoundModel& model,
                                       std::span<const InteractionEvent> events,
                                       std::span<const std::size_t> needed) {
  if (events.size() > kMaxSequenceLength) {
    throw ValidationError("encode_prefix_taps: sequence of " + std::to_string(events.size()) +
                          " events exceeds the window of " +
                          std::to_string(kMaxSequenceLength));
  }
  std::vector<NodeId> taps(needed.size(), -1);
  if (needed.empty()) return taps;
  std::size_t max_t = *std::max_element(needed.begin(), needed.end());
  if (max_t > events.size()) {
    throw ValidationError("encode_prefix_taps: tap " + std::to_string(max_t) + " beyond " +
                          std::to_string(events.size()) + " events");
  }

  EncoderState state = encoder_zero_state(model.tape, model.params.dims.embedding);
  std::size_t cursor = 0;
  auto emit = [&](std::size_t t) {
    for (std::size_t i = 0; i < needed.size(); ++i) {
      if (needed[i] == t) taps[i] = state.hidden;
    }
  };
  emit(0);
  for (cursor = 0; cursor < max_t; ++cursor) {
    state = encode_step(model, state, encoder_step_input(model, events[cursor]));
    emit(cursor + 1);
  }
  return taps;
}

}  // namespace cmvf
