#include "hctc/receptive_field.hpp"

#include <random>

namespace hctc {

ReceptiveField measure_receptive_field(const EncoderModel& model, int frames, int probe_frame,
                                       const ChunkSpec& spec, ConvMode conv_mode, std::uint64_t seed,
                                       double tolerance) {
    if (probe_frame < 0 || probe_frame >= frames) throw ValidationError("probe frame outside the sequence");
    EncoderModel m = model;
    m.config.conv_mode = conv_mode;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix input(frames, m.config.d_model);
    for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = normal(rng);

    const Matrix base = forward_layers(m, input, spec);
    ReceptiveField rf;
    for (int j = 0; j < frames; ++j) {
        // A random direction: a constant shift of a row would vanish in the layer norms.
        Matrix perturbed = input;
        for (Eigen::Index c = 0; c < perturbed.cols(); ++c) perturbed(j, c) += normal(rng);
        const Matrix out = forward_layers(m, perturbed, spec);
        const double diff = (out.row(probe_frame) - base.row(probe_frame)).cwiseAbs().maxCoeff();
        if (diff > tolerance) {
            if (j < probe_frame) rf.past_extent = std::max(rf.past_extent, probe_frame - j);
            if (j > probe_frame) rf.future_extent = std::max(rf.future_extent, j - probe_frame);
        }
    }
    return rf;
}

}  // namespace hctc
