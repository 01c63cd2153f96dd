#pragma once

#include "hctc/signal.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace hctc {

struct SpeechMask {
    std::vector<bool> speech;  // per 10 ms frame, true = speech
    double frame_hop_ms = 10.0;

    std::size_t size() const { return speech.size(); }
};

// Frame is speech iff its RMS in dBFS is >= threshold_db.
SpeechMask speech_mask(const Waveform& wav, double threshold_db = -40.0);

// Fraction of non-speech frames.
double silence_ratio(const SpeechMask& mask);

struct FilterOptions {
    double chunk_seconds = 60.0;
    double threshold_ratio = 0.6;  // a chunk is dropped iff its silence ratio is strictly greater
    double vad_db = -40.0;
};

struct ChunkDecision {
    std::string utterance_id;
    int chunk_index = 0;
    SampleSpan span;
    double silence_ratio = 0.0;
    bool kept = false;
};

struct FilterReport {
    int total_chunks = 0;
    int kept_chunks = 0;
    double kept_fraction = 0.0;
    std::vector<ChunkDecision> chunks;
};

struct KeptChunk {
    std::string id;  // "<utterance>_<chunk>"
    std::string utterance_id;
    int chunk_index = 0;
    Waveform waveform;
    TokenSeq transcript;  // carried over only when the utterance is a single chunk
};

struct FilterResult {
    std::vector<KeptChunk> kept;
    FilterReport report;
};

// Splits every utterance into consecutive chunks of chunk_seconds and drops the
// chunks whose silence ratio exceeds the threshold. A trailing remainder shorter
// than one analysis frame is merged into the preceding chunk.
FilterResult filter_corpus(std::span<const Utterance> utts, const FilterOptions& opts = {});

void write_report_csv(std::ostream& out, const FilterReport& report);

}  // namespace hctc
