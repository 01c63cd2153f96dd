#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace hctc {

inline constexpr int kEncoderFrameMs = 40;

// {200 ms, 1 s, 2 s, 4 s, 8 s} in 40 ms encoder frames.
inline const std::vector<int> kCanonicalChunkFrames = {5, 25, 50, 100, 200};
// 200 ms is left out of pretraining: training diverges with it.
inline const std::vector<int> kPretrainChunkFrames = {25, 50, 100, 200};

struct ChunkSpec {
    enum class Mode { full_context, fixed, dynamic };

    Mode mode = Mode::full_context;
    int chunk_frames = 0;          // fixed mode
    std::vector<int> candidates;   // dynamic mode

    static ChunkSpec full() { return {}; }
    static ChunkSpec fixed(int frames);
    static ChunkSpec dynamic(std::vector<int> candidates = kPretrainChunkFrames);

    bool is_full() const { return mode == Mode::full_context; }
    bool is_resolved() const { return mode != Mode::dynamic; }

    // "full", "dynamic", "200ms", "1s", ... or a bare frame count "25f".
    static ChunkSpec parse(std::string_view text);
    std::string to_string() const;

    friend bool operator==(const ChunkSpec&, const ChunkSpec&) = default;
};

inline int chunk_id(int frame, int chunk_frames) { return frame / chunk_frames; }

// T x T visibility: mask(i, j) is true iff frame i may attend to frame j.
class AttentionMask {
public:
    AttentionMask() = default;
    AttentionMask(int size, bool fill) : size_(size), bits_(static_cast<std::size_t>(size) * size, fill) {}

    int size() const { return size_; }
    bool operator()(int i, int j) const { return bits_[static_cast<std::size_t>(i) * size_ + j] != 0; }
    void set(int i, int j, bool v) { bits_[static_cast<std::size_t>(i) * size_ + j] = v ? 1 : 0; }

    friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

private:
    int size_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Strictly within-chunk attention; the ragged last chunk attends within itself.
AttentionMask attention_mask(int frames, const ChunkSpec& spec);

enum class TrainPhase { pretrain, finetune, full };

// Draws one resolved chunk spec per training batch. Owns a single serial RNG.
class ChunkSampler {
public:
    // pretrain: uniform over `spec.candidates` when dynamic, else `spec` itself.
    // finetune: `spec` must be resolved unless allow_dynamic_finetune is set.
    // full: always full context.
    ChunkSampler(TrainPhase phase, ChunkSpec spec, std::uint64_t seed, bool allow_dynamic_finetune = false);

    ChunkSpec next();

private:
    TrainPhase phase_;
    ChunkSpec spec_;
    std::mt19937_64 rng_;
};

}  // namespace hctc
