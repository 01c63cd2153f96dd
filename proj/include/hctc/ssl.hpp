#pragma once

#include "hctc/autodiff.hpp"
#include "hctc/chunking.hpp"
#include "hctc/dataset.hpp"
#include "hctc/encoder.hpp"
#include "hctc/optim.hpp"
#include "hctc/records.hpp"
#include "hctc/targets.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hctc {

struct MaskPlan {
    int frames = 0;
    int span_len = 10;
    double start_prob = 0.065;
    std::vector<int> starts;
    std::vector<std::uint8_t> mask;  // one flag per encoder frame

    // Sorted masked frame indices.
    std::vector<int> positions() const;
    int count() const;
};

// Every frame is a span start with probability start_prob; the union of
// [start, start + span_len) clipped at `frames` is masked. Fewer frames than
// span_len masks everything.
MaskPlan plan_masks(int frames, double start_prob, int span_len, std::mt19937_64& rng);

// Masked rows replaced by the mask embedding (1 x d); other rows untouched.
Matrix apply_mask(const Matrix& states, const MaskPlan& plan, const RowVector& mask_embedding);
ad::Var apply_mask(ad::Var states, const MaskPlan& plan, ad::Var mask_embedding);

// Mean cross-entropy of softmax(logits) against targets over the masked frames.
double masked_ce_loss(const Matrix& logits, std::span<const int> targets, const MaskPlan& plan);
ad::Var masked_ce_loss(ad::Var logits, std::span<const int> targets, std::span<const int> positions);

struct PretrainConfig {
    int steps = 2000;
    int batch_utts = 8;
    OptimizerConfig opt{};
    int span_len = 10;
    double start_prob = 0.065;
    double unmasked_weight = 0.0;  // CE weight on unmasked frames
    ChunkSpec chunk = ChunkSpec::full();  // full, fixed, or dynamic over 1s..8s
    int eval_interval = 100;
    std::uint64_t seed = 0;
    std::string config_hash;

    void validate() const;
};

// Linear prediction head "pred.weight" (d x K) and "pred.bias", small init so
// the untrained loss sits at ln K.
ParameterSet init_prediction_head(int d_model, int k, std::uint64_t seed);

struct MaskedEval {
    double loss = 0.0;
    double accuracy = 0.0;  // over masked frames
    int masked_frames = 0;
};

// Held-out masked prediction with masks drawn from `seed`.
MaskedEval evaluate_masked(const EncoderModel& encoder, const ParameterSet& head, const Dataset& data,
                           std::span<const TargetSequence> targets, const PretrainConfig& cfg, const ChunkSpec& spec,
                           std::uint64_t seed);

struct PretrainLogRow {
    int step = 0;
    double loss = 0.0;
    double masked_acc = 0.0;
    int chunk_frames = 0;  // last sampled chunk size, 0 for full context
};

struct PretrainResult {
    EncoderModel encoder;
    ParameterSet head;
    std::vector<PretrainLogRow> log;
    std::vector<RunRecord> records;
};

// Masked-prediction pretraining. `eval` (optional) measures held-out masked accuracy.
PretrainResult pretrain(const EncoderModel& init, const Dataset& corpus, std::span<const TargetSequence> targets,
                        int k, const PretrainConfig& cfg, const Dataset& eval = {},
                        std::span<const TargetSequence> eval_targets = {});

// step,loss,masked_acc,chunk_size
void write_pretrain_metrics(const std::filesystem::path& path, const std::vector<PretrainLogRow>& log);

}  // namespace hctc
