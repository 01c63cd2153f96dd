#pragma once

#include "hctc/types.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace hctc {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameLength = 400;  // 25 ms
inline constexpr int kFrameShift = 160;   // 10 ms
inline constexpr int kDefaultMels = 80;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kToneAmplitude = 0.5;

struct Waveform {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    std::size_t size() const { return samples.size(); }
    double duration_ms() const { return 1000.0 * samples.size() / sample_rate; }
};

// Half-open sample range [start, end).
struct SampleSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - start; }
};

// Phone tokens are 1-based; 0 is reserved for the CTC blank.
using TokenSeq = std::vector<int>;

struct Utterance {
    std::string id;
    Waveform waveform;
    TokenSeq transcript;
    std::vector<SampleSpan> silence_spans;
};

enum class FeatureKind { logmel, mfcc };

struct FeatureSequence {
    Matrix frames;  // T x D
    FeatureKind kind = FeatureKind::logmel;
    double frame_hop_ms = 10.0;
    double frame_len_ms = 25.0;

    int num_frames() const { return static_cast<int>(frames.rows()); }
    int dim() const { return static_cast<int>(frames.cols()); }
};

// Toy phone inventory: `size` phones on log-spaced tones between lo_hz and hi_hz.
struct Vocabulary {
    std::vector<std::string> symbols;  // symbols[id - 1]
    std::map<int, double> tones;       // id -> Hz

    static Vocabulary toy(int size = 8, double lo_hz = 300.0, double hi_hz = 3000.0);
    int size() const { return static_cast<int>(symbols.size()); }
    int id_of(const std::string& symbol) const;
    std::string render(std::span<const int> tokens) const;
    TokenSeq parse(const std::string& text) const;
};

Utterance synth_utterance(std::span<const int> phones, const std::map<int, double>& tone_map,
                          double phone_dur_ms, double noise_amp, std::uint64_t seed);

struct CorpusConfig {
    int n_utts = 100;
    int min_len_phones = 6;
    int max_len_phones = 16;
    double silence_mix = 0.0;
    std::uint64_t seed = 0;
    int vocab_size = 8;
    // Per-utterance speaking rate is drawn uniformly from this range.
    double min_phone_ms = 80.0;
    double max_phone_ms = 120.0;
    // Per-utterance noise amplitude is drawn uniformly from [0, max_noise_amp].
    double max_noise_amp = 0.05;
    // Per-utterance "speaker" pitch scale drawn uniformly from [1 - j, 1 + j].
    double pitch_jitter = 0.08;
    // Inserted silence length range for utterances that receive a silence span.
    double min_silence_ms = 300.0;
    double max_silence_ms = 800.0;
    // Probability that a phone is followed by its fixed successor (p * 3 mod V) + 1
    // instead of a uniform draw; gives the toy language learnable context.
    double phonotactic_bias = 0.0;
    std::string id_prefix = "utt";
};

std::vector<Utterance> synth_corpus(const CorpusConfig& cfg);
std::vector<Utterance> synth_corpus(int n_utts, int max_len_phones, double silence_mix,
                                    std::uint64_t seed);

std::uint64_t corpus_digest(std::span<const Utterance> corpus);

// Number of 25 ms / 10 ms frames in a signal of n samples (n >= kFrameLength).
inline int num_frames(std::size_t n) {
    return 1 + static_cast<int>((n - kFrameLength) / kFrameShift);
}

FeatureSequence log_mel(const Waveform& wav, int n_mels = kDefaultMels);
FeatureSequence mfcc(const Waveform& wav, int n_coeffs, int n_mels = kDefaultMels);

// Orthonormal DCT-II, rows = coefficients. dct_matrix(n, n) is orthogonal.
Matrix dct_matrix(int n_coeffs, int n_inputs);
Matrix inverse_dct(const Matrix& coeffs, int n_outputs);

// 16 kHz mono 16-bit PCM little-endian only.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wav);

}  // namespace hctc
