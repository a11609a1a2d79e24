#pragma once

#include <span>
#include <vector>

#include "cmvf/dataio.hpp"
#include "cmvf/model.hpp"
#include "cmvf/tape.hpp"

namespace cmvf {

// Recurrent carry of the sequence encoder.
struct EncoderState {
  NodeId hidden = -1;
  NodeId cell = -1;
};

EncoderState encoder_zero_state(Tape& tape, std::size_t d);

// Step featurization: mean of the event's concept embeddings concatenated
// with the response embedding. Question identity stays out of the sequence
// path; question-ID embeddings feed the variational head instead.
NodeId encoder_step_input(BoundModel& model, const InteractionEvent& event);

// One gated recurrent update over the step input.
EncoderState encode_step(BoundModel& model, const EncoderState& state, NodeId step_input);

// Final hidden vector of the fold over the prefix, windowed to the most
// recent `window` events. The empty prefix encodes to the zero vector.
NodeId encode_sequence(BoundModel& model, std::span<const InteractionEvent> prefix,
                       std::size_t window = kMaxSequenceLength);

// Incremental fold over one student's events with taps: result[i] is the
// encoding of the prefix events[0, needed[i]). Requires events.size() <= the
// window (load-time truncation guarantees this), so every tap equals the
// windowed encode_sequence of that prefix.
std::vector<NodeId> encode_prefix_taps(BoundModel& model,
                                       std::span<const InteractionEvent> events,
                                       std::span<const std::size_t> needed);

}  // namespace cmvf
