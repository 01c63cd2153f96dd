#pragma once

#include "hctc/autodiff.hpp"
#include "hctc/chunking.hpp"
#include "hctc/signal.hpp"
#include "hctc/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hctc {

// standard: symmetric window. chunkwise_causal: window clipped at the end of the
// frame's own chunk. causal: window clipped at the frame itself.
enum class ConvMode { standard, chunkwise_causal, causal };

ConvMode parse_conv_mode(const std::string& text);
std::string to_string(ConvMode mode);

struct EncoderConfig {
    int input_dim = kDefaultMels;
    int n_layers = 4;
    int d_model = 64;
    int n_heads = 4;
    int conv_kernel = 5;
    int ff_mult = 4;
    int subsample = 4;
    ConvMode conv_mode = ConvMode::standard;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    int ff_dim() const { return d_model * ff_mult; }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Named parameter arrays; iteration order (sorted by name) is the canonical order.
using ParameterSet = std::map<std::string, Matrix>;

std::size_t count_parameters(const ParameterSet& params);

struct EncoderModel {
    EncoderConfig config;
    ParameterSet params;
    // Global feature normalization applied before frame stacking (not trained).
    RowVector feature_mean;
    RowVector feature_inv_std;

    static EncoderModel init(const EncoderConfig& config, std::uint64_t seed);
    // Closed form for the trainable parameter count of `config`.
    static std::size_t expected_parameter_count(const EncoderConfig& config);

    void set_feature_stats(const RowVector& mean, const RowVector& inv_std);
    std::size_t parameter_count() const { return count_parameters(params); }
};

// Per-dimension mean and inverse standard deviation over all frames.
std::pair<RowVector, RowVector> feature_stats(std::span<const Matrix> features);

// Per-layer hidden states; entry 0 is the layer-stack input (after subsampling and
// positional encoding), entry i the output of layer i.
struct LayerStates {
    std::vector<Matrix> layers;
};

struct EncoderOutput {
    LayerStates states;
    Matrix final_states;
};

inline int subsampled_length(int frames, int factor = 4) { return (frames + factor - 1) / factor; }

// Stacks `factor` consecutive rows into one; the ragged tail is zero padded.
Matrix stack_frames(const Matrix& features, int factor);
Matrix sinusoidal_positions(int frames, int d_model, int offset = 0);

// Linear projection of stacked (normalized) feature frames: T' x d_model.
Matrix subsample(const EncoderModel& model, const Matrix& features);

// Right window limit per frame for the depthwise convolution.
std::vector<int> conv_right_limits(int frames, ConvMode mode, const ChunkSpec& spec);

// ---- graph-level interface used by the training loops ----

using BoundParams = std::map<std::string, ad::Var>;

// Registers every array of `params` on the tape (as variables or constants).
void bind_params(ad::Tape& tape, const ParameterSet& params, BoundParams& out, bool trainable = true);

struct GraphOutput {
    std::vector<ad::Var> layers;  // n_layers + 1
    ad::Var final;
};

// Projected, optionally masked, encoder input before positional encoding.
ad::Var subsample_graph(ad::Tape& tape, const BoundParams& p, const EncoderModel& model, const Matrix& features);

// Runs the layer stack on `input` (T' x d_model, positional encoding not yet added).
GraphOutput encode_graph(ad::Tape& tape, const BoundParams& p, const EncoderConfig& cfg, ad::Var input,
                         const ChunkSpec& spec);

// Same as encode_graph but `input` already includes positional information; used
// to probe the layer stack directly.
GraphOutput layer_stack_graph(ad::Tape& tape, const BoundParams& p, const EncoderConfig& cfg, ad::Var input,
                              const ChunkSpec& spec);

// ---- value-level interface ----

EncoderOutput forward(const EncoderModel& model, const Matrix& features, const ChunkSpec& spec);
inline EncoderOutput forward(const EncoderModel& model, const FeatureSequence& f, const ChunkSpec& spec) {
    return forward(model, f.frames, spec);
}

// Layer stack only, starting from layer-stack input states.
Matrix forward_layers(const EncoderModel& model, const Matrix& states, const ChunkSpec& spec);

using Gradients = std::map<std::string, Matrix>;

struct GradientResult {
    double loss = 0.0;
    Gradients grads;
};

using LossFn = std::function<ad::Var(ad::Tape&, const GraphOutput&, const BoundParams&)>;

// Exact reverse-mode gradients of loss_fn(forward(features)) for every encoder
// parameter and every entry of `extra` (e.g. an output head).
GradientResult gradients(const EncoderModel& model, const Matrix& features, const ChunkSpec& spec,
                         const LossFn& loss_fn, const ParameterSet& extra = {});

// ---- streaming ----

struct FeatureChunk {
    int index = 0;
    Matrix frames;  // feature frames; subsample * chunk_frames rows except for the last chunk
};

// Chunk-by-chunk inference with per-layer convolution caches. Requires a
// convolution mode whose window never crosses the chunk end.
class StreamingEncoder {
public:
    StreamingEncoder(const EncoderModel& model, int chunk_frames);

    // Encoder states for this chunk's frames.
    Matrix push(const FeatureChunk& chunk);

    int frames_emitted() const { return frames_emitted_; }
    bool finished() const { return finished_; }

private:
    const EncoderModel& model_;
    int chunk_frames_;
    int next_index_ = 0;
    int frames_emitted_ = 0;
    bool finished_ = false;
    std::vector<Matrix> conv_cache_;
};

}  // namespace hctc
