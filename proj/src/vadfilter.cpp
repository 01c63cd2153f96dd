#include "hctc/vadfilter.hpp"

#include <cmath>
#include <ostream>

namespace hctc {

SpeechMask speech_mask(const Waveform& wav, double threshold_db) {
    if (wav.size() < static_cast<std::size_t>(kFrameLength))
        throw ValidationError("waveform shorter than one frame");
    SpeechMask mask;
    const int frames = num_frames(wav.size());
    mask.speech.resize(frames);
    for (int f = 0; f < frames; ++f) {
        const float* x = wav.samples.data() + static_cast<std::size_t>(f) * kFrameShift;
        double energy = 0.0;
        for (int n = 0; n < kFrameLength; ++n) energy += static_cast<double>(x[n]) * x[n];
        const double rms = std::sqrt(energy / kFrameLength);
        const double db = rms > 0.0 ? 20.0 * std::log10(rms) : -INFINITY;
        mask.speech[f] = db >= threshold_db;
    }
    return mask;
}

double silence_ratio(const SpeechMask& mask) {
    if (mask.speech.empty()) throw ValidationError("empty speech mask");
    std::size_t silent = 0;
    for (const bool s : mask.speech) silent += s ? 0 : 1;
    return static_cast<double>(silent) / static_cast<double>(mask.speech.size());
}

FilterResult filter_corpus(std::span<const Utterance> utts, const FilterOptions& opts) {
    if (!(opts.chunk_seconds > 0.0)) throw ValidationError("chunk length must be positive");
    const auto chunk_len = static_cast<std::size_t>(std::llround(opts.chunk_seconds * kSampleRate));
    if (chunk_len < static_cast<std::size_t>(kFrameLength))
        throw ValidationError("chunk length shorter than one frame");

    FilterResult result;
    for (const auto& utt : utts) {
        const std::size_t n = utt.waveform.size();
        std::vector<SampleSpan> spans;
        for (std::size_t start = 0; start < n; start += chunk_len)
            spans.push_back({start, std::min(n, start + chunk_len)});
        if (spans.size() > 1 && spans.back().size() < static_cast<std::size_t>(kFrameLength)) {
            spans[spans.size() - 2].end = spans.back().end;
            spans.pop_back();
        }

        for (std::size_t c = 0; c < spans.size(); ++c) {
            ChunkDecision d;
            d.utterance_id = utt.id;
            d.chunk_index = static_cast<int>(c);
            d.span = spans[c];
            Waveform piece;
            piece.samples.assign(utt.waveform.samples.begin() + static_cast<std::ptrdiff_t>(spans[c].start),
                                 utt.waveform.samples.begin() + static_cast<std::ptrdiff_t>(spans[c].end));
            if (piece.size() < static_cast<std::size_t>(kFrameLength)) {
                // Too short to analyze at all: counts as silence.
                d.silence_ratio = 1.0;
            } else {
                d.silence_ratio = silence_ratio(speech_mask(piece, opts.vad_db));
            }
            d.kept = !(d.silence_ratio > opts.threshold_ratio);
            if (d.kept) {
                KeptChunk k;
                k.id = utt.id + "_" + std::to_string(c);
                k.utterance_id = utt.id;
                k.chunk_index = d.chunk_index;
                k.waveform = std::move(piece);
                if (spans.size() == 1) k.transcript = utt.transcript;
                result.kept.push_back(std::move(k));
                ++result.report.kept_chunks;
            }
            ++result.report.total_chunks;
            result.report.chunks.push_back(std::move(d));
        }
    }
    result.report.kept_fraction = result.report.total_chunks == 0
        ? 0.0
        : static_cast<double>(result.report.kept_chunks) / result.report.total_chunks;
    return result;
}

void write_report_csv(std::ostream& out, const FilterReport& report) {
    out << "utterance_id,chunk_index,start_sample,end_sample,silence_ratio,kept\n";
    for (const auto& c : report.chunks) {
        out << c.utterance_id << ',' << c.chunk_index << ',' << c.span.start << ',' << c.span.end << ','
            << c.silence_ratio << ',' << (c.kept ? 1 : 0) << '\n';
    }
}

}  // namespace hctc
