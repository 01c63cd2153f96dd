#pragma once

#include "hctc/chunking.hpp"
#include "hctc/encoder.hpp"

namespace hctc {

struct ReceptiveField {
    int past_extent = 0;    // frames before the probe that influence it
    int future_extent = 0;  // frames after the probe that influence it
};

// Empirical receptive field of the layer stack at `probe_frame`: every input
// frame is perturbed in turn and counted when the probe output moves by more
// than `tolerance`. The model's conv mode is overridden by `conv_mode`.
ReceptiveField measure_receptive_field(const EncoderModel& model, int frames, int probe_frame,
                                       const ChunkSpec& spec, ConvMode conv_mode, std::uint64_t seed = 1,
                                       double tolerance = 1e-12);

}  // namespace hctc
