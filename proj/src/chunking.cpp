#include "hctc/chunking.hpp"
#include "hctc/types.hpp"

#include <algorithm>
#include <charconv>

namespace hctc {

ChunkSpec ChunkSpec::fixed(int frames) {
    if (frames < 1) throw ValidationError("chunk size must be >= 1 frame");
    ChunkSpec s;
    s.mode = Mode::fixed;
    s.chunk_frames = frames;
    return s;
}

ChunkSpec ChunkSpec::dynamic(std::vector<int> candidates) {
    if (candidates.empty()) throw ValidationError("dynamic chunk candidate set is empty");
    for (const int c : candidates)
        if (c < 1) throw ValidationError("chunk size must be >= 1 frame");
    ChunkSpec s;
    s.mode = Mode::dynamic;
    s.candidates = std::move(candidates);
    return s;
}

ChunkSpec ChunkSpec::parse(std::string_view text) {
    if (text == "full") return full();
    if (text == "dynamic") return dynamic();
    auto number = [&](std::string_view digits) {
        int v = 0;
        const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
        if (ec != std::errc() || p != digits.data() + digits.size())
            throw ValidationError("bad chunk size '" + std::string(text) + "'");
        return v;
    };
    int ms = 0;
    if (text.ends_with("ms")) {
        ms = number(text.substr(0, text.size() - 2));
    } else if (text.ends_with("s")) {
        ms = 1000 * number(text.substr(0, text.size() - 1));
    } else if (text.ends_with("f")) {
        return fixed(number(text.substr(0, text.size() - 1)));
    } else {
        throw ValidationError("bad chunk size '" + std::string(text) + "'");
    }
    if (ms <= 0 || ms % kEncoderFrameMs != 0)
        throw ValidationError("chunk size must be a positive multiple of 40 ms");
    return fixed(ms / kEncoderFrameMs);
}

std::string ChunkSpec::to_string() const {
    switch (mode) {
    case Mode::full_context:
        return "full";
    case Mode::dynamic:
        return "dynamic";
    case Mode::fixed: {
        const int ms = chunk_frames * kEncoderFrameMs;
        if (ms % 1000 == 0) return std::to_string(ms / 1000) + "s";
        return std::to_string(ms) + "ms";
    }
    }
    return "?";
}

AttentionMask attention_mask(int frames, const ChunkSpec& spec) {
    if (frames < 1) throw ValidationError("attention mask needs at least one frame");
    if (!spec.is_resolved()) throw ValidationError("dynamic chunk spec must be resolved before building a mask");
    if (spec.is_full()) return AttentionMask(frames, true);
    AttentionMask mask(frames, false);
    const int c = spec.chunk_frames;
    for (int start = 0; start < frames; start += c) {
        const int end = std::min(frames, start + c);
        for (int i = start; i < end; ++i)
            for (int j = start; j < end; ++j) mask.set(i, j, true);
    }
    return mask;
}

ChunkSampler::ChunkSampler(TrainPhase phase, ChunkSpec spec, std::uint64_t seed, bool allow_dynamic_finetune)
    : phase_(phase), spec_(std::move(spec)), rng_(seed) {
    if (phase_ == TrainPhase::finetune && !spec_.is_resolved() && !allow_dynamic_finetune)
        throw ValidationError("dynamic fine-tuning disabled");
    if (phase_ == TrainPhase::pretrain && !spec_.is_resolved()) {
        for (const int c : spec_.candidates)
            if (c * kEncoderFrameMs <= 200)
                throw ValidationError("200 ms chunks are not allowed in dynamic pretraining");
    }
}

ChunkSpec ChunkSampler::next() {
    if (phase_ == TrainPhase::full) return ChunkSpec::full();
    if (spec_.is_resolved()) return spec_;
    std::uniform_int_distribution<std::size_t> pick(0, spec_.candidates.size() - 1);
    return ChunkSpec::fixed(spec_.candidates[pick(rng_)]);
}

}  // namespace hctc
