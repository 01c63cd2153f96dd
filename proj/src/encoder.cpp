#include "hctc/encoder.hpp"

#include <cmath>
#include <random>

namespace hctc {

ConvMode parse_conv_mode(const std::string& text) {
    if (text == "standard") return ConvMode::standard;
    if (text == "chunkwise-causal" || text == "chunkwise_causal") return ConvMode::chunkwise_causal;
    if (text == "causal") return ConvMode::causal;
    throw ValidationError("unknown conv mode '" + text + "'");
}

std::string to_string(ConvMode mode) {
    switch (mode) {
    case ConvMode::standard:
        return "standard";
    case ConvMode::chunkwise_causal:
        return "chunkwise-causal";
    case ConvMode::causal:
        return "causal";
    }
    return "?";
}

void EncoderConfig::validate() const {
    if (n_layers < 1) throw ValidationError("n_layers must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw ValidationError("d_model must be a positive multiple of n_heads");
    if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ValidationError("conv_kernel must be odd");
    if (ff_mult < 1) throw ValidationError("ff_mult must be >= 1");
    if (subsample != 4) throw ValidationError("subsample factor is fixed at 4");
    if (input_dim < 1) throw ValidationError("input_dim must be >= 1");
}

std::size_t count_parameters(const ParameterSet& params) {
    std::size_t n = 0;
    for (const auto& [name, m] : params) n += static_cast<std::size_t>(m.size());
    return n;
}

namespace {

std::string layer_key(int layer, const std::string& name) {
    return "layers." + std::to_string(layer) + "." + name;
}

// (name, rows, cols, init) in creation order; creation order fixes the RNG stream.
enum class Init { normal_fan_in, zeros, ones, unit_normal };
struct Spec {
    std::string name;
    int rows;
    int cols;
    Init init;
};

std::vector<Spec> parameter_specs(const EncoderConfig& c) {
    const int d = c.d_model;
    const int f = c.ff_dim();
    std::vector<Spec> s;
    s.push_back({"subsample.weight", c.subsample * c.input_dim, d, Init::normal_fan_in});
    s.push_back({"subsample.bias", 1, d, Init::zeros});
    s.push_back({"mask_embedding", 1, d, Init::unit_normal});
    for (int l = 0; l < c.n_layers; ++l) {
        auto add = [&](const std::string& n, int r, int col, Init i) { s.push_back({layer_key(l, n), r, col, i}); };
        for (const std::string ffn : {"ffn1.", "ffn2."}) {
            add(ffn + "norm.gain", 1, d, Init::ones);
            add(ffn + "norm.bias", 1, d, Init::zeros);
            add(ffn + "w1", d, f, Init::normal_fan_in);
            add(ffn + "b1", 1, f, Init::zeros);
            add(ffn + "w2", f, d, Init::normal_fan_in);
            add(ffn + "b2", 1, d, Init::zeros);
        }
        add("attn.norm.gain", 1, d, Init::ones);
        add("attn.norm.bias", 1, d, Init::zeros);
        for (const std::string m : {"q", "k", "v", "o"}) {
            add("attn.w" + m, d, d, Init::normal_fan_in);
            add("attn.b" + m, 1, d, Init::zeros);
        }
        add("conv.norm.gain", 1, d, Init::ones);
        add("conv.norm.bias", 1, d, Init::zeros);
        add("conv.w1", d, d, Init::normal_fan_in);
        add("conv.b1", 1, d, Init::zeros);
        add("conv.depthwise", c.conv_kernel, d, Init::normal_fan_in);
        add("conv.depthwise_bias", 1, d, Init::zeros);
        add("conv.w2", d, d, Init::normal_fan_in);
        add("conv.b2", 1, d, Init::zeros);
        add("out.gain", 1, d, Init::ones);
        add("out.bias", 1, d, Init::zeros);
    }
    return s;
}

}  // namespace

EncoderModel EncoderModel::init(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    EncoderModel m;
    m.config = config;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& s : parameter_specs(config)) {
        Matrix w(s.rows, s.cols);
        switch (s.init) {
        case Init::zeros:
            w.setZero();
            break;
        case Init::ones:
            w.setOnes();
            break;
        case Init::normal_fan_in: {
            const double sd = 1.0 / std::sqrt(static_cast<double>(s.rows));
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = sd * normal(rng);
            break;
        }
        case Init::unit_normal:
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
            break;
        }
        m.params.emplace(s.name, std::move(w));
    }
    m.feature_mean = RowVector::Zero(config.input_dim);
    m.feature_inv_std = RowVector::Ones(config.input_dim);
    return m;
}

std::size_t EncoderModel::expected_parameter_count(const EncoderConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t f = c.ff_dim();
    const std::size_t k = c.conv_kernel;
    const std::size_t ffn = 2 * d + d * f + f + f * d + d;
    const std::size_t attn = 2 * d + 4 * (d * d + d);
    const std::size_t conv = 2 * d + (d * d + d) + (k * d + d) + (d * d + d);
    const std::size_t layer = 2 * ffn + attn + conv + 2 * d;
    return static_cast<std::size_t>(c.subsample * c.input_dim) * d + d + d + c.n_layers * layer;
}

void EncoderModel::set_feature_stats(const RowVector& mean, const RowVector& inv_std) {
    if (mean.size() != config.input_dim || inv_std.size() != config.input_dim)
        throw ValidationError("feature statistics dimension mismatch");
    feature_mean = mean;
    feature_inv_std = inv_std;
}

std::pair<RowVector, RowVector> feature_stats(std::span<const Matrix> features) {
    if (features.empty()) throw ValidationError("no features for statistics");
    const auto dim = features[0].cols();
    RowVector sum = RowVector::Zero(dim);
    RowVector sq = RowVector::Zero(dim);
    double n = 0.0;
    for (const auto& f : features) {
        if (f.cols() != dim) throw ValidationError("feature dimension mismatch");
        sum += f.colwise().sum();
        sq += f.array().square().matrix().colwise().sum();
        n += static_cast<double>(f.rows());
    }
    RowVector mean = sum / n;
    RowVector var = (sq / n).array() - mean.array().square();
    RowVector inv_std = (var.array().max(0.0) + 1e-8).rsqrt();
    return {mean, inv_std};
}

Matrix stack_frames(const Matrix& features, int factor) {
    const int frames = static_cast<int>(features.rows());
    const int dim = static_cast<int>(features.cols());
    const int out_frames = subsampled_length(frames, factor);
    Matrix out = Matrix::Zero(out_frames, static_cast<Eigen::Index>(factor) * dim);
    for (int t = 0; t < frames; ++t)
        out.block(t / factor, static_cast<Eigen::Index>(t % factor) * dim, 1, dim) = features.row(t);
    return out;
}

Matrix sinusoidal_positions(int frames, int d_model, int offset) {
    Matrix pe(frames, d_model);
    for (int t = 0; t < frames; ++t) {
        const double pos = t + offset;
        for (int i = 0; i < d_model; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
            pe(t, i) = std::sin(pos * freq);
            if (i + 1 < d_model) pe(t, i + 1) = std::cos(pos * freq);
        }
    }
    return pe;
}

namespace {

Matrix normalized_stack(const EncoderModel& model, const Matrix& features) {
    const auto& c = model.config;
    if (features.cols() != c.input_dim) throw ValidationError("feature dimension does not match encoder input_dim");
    if (features.rows() < c.subsample) throw ValidationError("need at least 4 feature frames to subsample");
    Matrix norm = (features.rowwise() - model.feature_mean).array().rowwise() * model.feature_inv_std.array();
    return stack_frames(norm, c.subsample);
}

}  // namespace

Matrix subsample(const EncoderModel& model, const Matrix& features) {
    Matrix out = normalized_stack(model, features) * model.params.at("subsample.weight");
    out.rowwise() += model.params.at("subsample.bias").row(0);
    return out;
}

std::vector<int> conv_right_limits(int frames, ConvMode mode, const ChunkSpec& spec) {
    if (!spec.is_resolved()) throw ValidationError("dynamic chunk spec must be resolved before building conv windows");
    std::vector<int> lim(frames, frames - 1);
    if (mode == ConvMode::causal) {
        for (int t = 0; t < frames; ++t) lim[t] = t;
    } else if (mode == ConvMode::chunkwise_causal && !spec.is_full()) {
        const int c = spec.chunk_frames;
        for (int t = 0; t < frames; ++t) lim[t] = std::min(frames - 1, (chunk_id(t, c) + 1) * c - 1);
    }
    return lim;
}

void bind_params(ad::Tape& tape, const ParameterSet& params, BoundParams& out, bool trainable) {
    for (const auto& [name, value] : params) out[name] = trainable ? tape.variable(value) : tape.constant(value);
}

namespace {

using ad::Var;

Var ffn_module(const BoundParams& p, const std::string& pre, Var x) {
    Var h = ad::layer_norm(x, p.at(pre + "norm.gain"), p.at(pre + "norm.bias"));
    h = ad::silu(ad::linear(h, p.at(pre + "w1"), p.at(pre + "b1")));
    return ad::linear(h, p.at(pre + "w2"), p.at(pre + "b2"));
}

Var attention_module(const BoundParams& p, const std::string& pre, const EncoderConfig& c, Var x,
                     const AttentionMask& mask) {
    Var h = ad::layer_norm(x, p.at(pre + "norm.gain"), p.at(pre + "norm.bias"));
    Var q = ad::linear(h, p.at(pre + "wq"), p.at(pre + "bq"));
    Var k = ad::linear(h, p.at(pre + "wk"), p.at(pre + "bk"));
    Var v = ad::linear(h, p.at(pre + "wv"), p.at(pre + "bv"));
    const int dh = c.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    for (int i = 0; i < c.n_heads; ++i) {
        Var qi = ad::col_block(q, i * dh, dh);
        Var ki = ad::col_block(k, i * dh, dh);
        Var vi = ad::col_block(v, i * dh, dh);
        Var probs = ad::masked_softmax(ad::scale(ad::matmul_nt(qi, ki), inv_sqrt), mask);
        heads.push_back(ad::matmul(probs, vi));
    }
    Var cat = c.n_heads == 1 ? heads[0] : ad::hconcat(heads);
    return ad::linear(cat, p.at(pre + "wo"), p.at(pre + "bo"));
}

// Streaming convolution state: left context rows of the depthwise input.
struct ConvHistory {
    const Matrix* in = nullptr;
    Matrix* out = nullptr;
};

Var conv_module(ad::Tape& tape, const BoundParams& p, const std::string& pre, const EncoderConfig& c, Var x,
                std::span<const int> limits, ConvHistory history) {
    Var h = ad::layer_norm(x, p.at(pre + "norm.gain"), p.at(pre + "norm.bias"));
    Var u = ad::relu(ad::linear(h, p.at(pre + "w1"), p.at(pre + "b1")));
    Var y;
    if (history.in == nullptr) {
        y = ad::depthwise_conv(u, p.at(pre + "depthwise"), p.at(pre + "depthwise_bias"), limits);
    } else {
        const int half = c.conv_kernel / 2;
        const int past = static_cast<int>(history.in->rows());
        const int n = static_cast<int>(u.value().rows());
        Var ext = u;
        if (past > 0) {
            const std::vector<Var> parts{tape.constant(*history.in), u};
            ext = ad::vconcat(parts);
        }
        const int rows = past + n;
        std::vector<int> lim(rows, rows - 1);
        if (c.conv_mode == ConvMode::causal)
            for (int t = 0; t < rows; ++t) lim[t] = t;
        y = ad::depthwise_conv(ext, p.at(pre + "depthwise"), p.at(pre + "depthwise_bias"), lim);
        if (past > 0) y = ad::row_block(y, past, n);
        const int keep = std::min(half, rows);
        *history.out = ext.value().bottomRows(keep);
    }
    return ad::linear(ad::relu(y), p.at(pre + "w2"), p.at(pre + "b2"));
}

Var conformer_layer(ad::Tape& tape, const BoundParams& p, const EncoderConfig& c, int layer, Var x,
                    const AttentionMask& mask, std::span<const int> limits, ConvHistory history) {
    const std::string pre = "layers." + std::to_string(layer) + ".";
    x = ad::add(x, ad::scale(ffn_module(p, pre + "ffn1.", x), 0.5));
    x = ad::add(x, attention_module(p, pre + "attn.", c, x, mask));
    x = ad::add(x, conv_module(tape, p, pre + "conv.", c, x, limits, history));
    x = ad::add(x, ad::scale(ffn_module(p, pre + "ffn2.", x), 0.5));
    return ad::layer_norm(x, p.at(pre + "out.gain"), p.at(pre + "out.bias"));
}

void check_finite(const Matrix& m, int layer) {
    if (!m.allFinite()) throw DivergenceError("numerical divergence in layer " + std::to_string(layer), layer);
}

}  // namespace

ad::Var subsample_graph(ad::Tape& tape, const BoundParams& p, const EncoderModel& model, const Matrix& features) {
    Var stacked = tape.constant(normalized_stack(model, features));
    return ad::linear(stacked, p.at("subsample.weight"), p.at("subsample.bias"));
}

GraphOutput layer_stack_graph(ad::Tape& tape, const BoundParams& p, const EncoderConfig& cfg, ad::Var input,
                              const ChunkSpec& spec) {
    const int frames = static_cast<int>(input.value().rows());
    const AttentionMask mask = attention_mask(frames, spec);
    const std::vector<int> limits = conv_right_limits(frames, cfg.conv_mode, spec);
    GraphOutput out;
    check_finite(input.value(), 0);
    out.layers.push_back(input);
    Var x = input;
    for (int l = 0; l < cfg.n_layers; ++l) {
        x = conformer_layer(tape, p, cfg, l, x, mask, limits, {});
        check_finite(x.value(), l + 1);
        out.layers.push_back(x);
    }
    out.final = x;
    return out;
}

GraphOutput encode_graph(ad::Tape& tape, const BoundParams& p, const EncoderConfig& cfg, ad::Var input,
                         const ChunkSpec& spec) {
    const int frames = static_cast<int>(input.value().rows());
    Var x = ad::add_constant(input, sinusoidal_positions(frames, cfg.d_model));
    return layer_stack_graph(tape, p, cfg, x, spec);
}

EncoderOutput forward(const EncoderModel& model, const Matrix& features, const ChunkSpec& spec) {
    ad::Tape tape;
    BoundParams p;
    bind_params(tape, model.params, p, false);
    const GraphOutput g = encode_graph(tape, p, model.config, subsample_graph(tape, p, model, features), spec);
    EncoderOutput out;
    for (const Var& v : g.layers) out.states.layers.push_back(v.value());
    out.final_states = g.final.value();
    return out;
}

Matrix forward_layers(const EncoderModel& model, const Matrix& states, const ChunkSpec& spec) {
    ad::Tape tape;
    BoundParams p;
    bind_params(tape, model.params, p, false);
    return layer_stack_graph(tape, p, model.config, tape.constant(states), spec).final.value();
}

GradientResult gradients(const EncoderModel& model, const Matrix& features, const ChunkSpec& spec,
                         const LossFn& loss_fn, const ParameterSet& extra) {
    ad::Tape tape;
    BoundParams p;
    bind_params(tape, model.params, p, true);
    bind_params(tape, extra, p, true);
    const GraphOutput g = encode_graph(tape, p, model.config, subsample_graph(tape, p, model, features), spec);
    Var loss = loss_fn(tape, g, p);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw DivergenceError("non-finite loss", -1);
    tape.backward(loss);
    GradientResult r;
    r.loss = value;
    for (const auto& [name, var] : p) r.grads.emplace(name, tape.grad(var));
    return r;
}

StreamingEncoder::StreamingEncoder(const EncoderModel& model, int chunk_frames)
    : model_(model), chunk_frames_(chunk_frames), conv_cache_(model.config.n_layers) {
    if (chunk_frames < 1) throw ValidationError("chunk size must be >= 1 frame");
    if (model.config.conv_mode == ConvMode::standard)
        throw ValidationError("streaming requires chunkwise-causal or causal convolutions");
}

Matrix StreamingEncoder::push(const FeatureChunk& chunk) {
    if (finished_) throw ValidationError("stream already received its final (short) chunk");
    if (chunk.index != next_index_)
        throw ValidationError("out-of-order chunk: expected " + std::to_string(next_index_) + ", got " +
                              std::to_string(chunk.index));
    const auto& c = model_.config;
    const int expected = c.subsample * chunk_frames_;
    const int rows = static_cast<int>(chunk.frames.rows());
    if (rows < 1 || rows > expected)
        throw ValidationError("chunk must have between 1 and " + std::to_string(expected) + " feature frames");
    if (rows < expected) finished_ = true;

    ad::Tape tape;
    BoundParams p;
    bind_params(tape, model_.params, p, false);
    Matrix padded = chunk.frames;
    if (rows < c.subsample) {
        // Zero-pad like the batch path does for the ragged tail.
        padded = Matrix::Zero(c.subsample, chunk.frames.cols());
        padded.topRows(rows) = chunk.frames;
        padded.bottomRows(c.subsample - rows).rowwise() = model_.feature_mean;
    }
    Var x = subsample_graph(tape, p, model_, padded);
    const int n = static_cast<int>(x.value().rows());
    x = ad::add_constant(x, sinusoidal_positions(n, c.d_model, frames_emitted_));
    const AttentionMask mask(n, true);
    for (int l = 0; l < c.n_layers; ++l) {
        Matrix next_cache;
        x = conformer_layer(tape, p, c, l, x, mask, {}, {&conv_cache_[l], &next_cache});
        check_finite(x.value(), l + 1);
        conv_cache_[l] = std::move(next_cache);
    }
    frames_emitted_ += n;
    ++next_index_;
    return x.value();
}

}  // namespace hctc
