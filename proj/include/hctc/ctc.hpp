#pragma once

#include "hctc/autodiff.hpp"
#include "hctc/chunking.hpp"
#include "hctc/dataset.hpp"
#include "hctc/encoder.hpp"
#include "hctc/optim.hpp"
#include "hctc/records.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hctc {

inline constexpr int kBlank = 0;

// Smallest number of frames that can emit `label`: one per token plus a blank
// between every pair of equal neighbours.
int min_ctc_frames(std::span<const int> label);

// -log P(label | log_probs) by the log-space forward recursion over the
// blank-augmented label. Rows of log_probs are frames; column 0 is the blank.
double ctc_loss(const Matrix& log_probs, std::span<const int> label);

struct CtcLossGrad {
    double loss = 0.0;
    Matrix grad;  // d loss / d log_probs
};

// Forward-backward. The gradient treats every log-probability entry as free.
CtcLossGrad ctc_loss_grad(const Matrix& log_probs, std::span<const int> label);

// Tape op: 1x1 loss with the forward-backward gradient as its backward.
ad::Var ctc_loss(ad::Var log_probs, std::span<const int> label);

// Per-frame argmax (lowest index on ties), collapse repeats, drop blanks.
TokenSeq greedy_decode(const Matrix& log_probs);

struct WerReport {
    int substitutions = 0;
    int insertions = 0;
    int deletions = 0;
    int ref_words = 0;
    double wer = 0.0;

    int edits() const { return substitutions + insertions + deletions; }
    WerReport& operator+=(const WerReport& other);
};

// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one with
// the most substitutions is reported. Toy phones count as words.
WerReport wer(std::span<const int> ref, std::span<const int> hyp);

// ---- fine-tuning ----

struct CtcModel {
    EncoderModel encoder;
    ParameterSet head;  // "ctc.weight" (d x V+1), "ctc.bias"
    int vocab_size = 0;
};

CtcModel attach_ctc_head(EncoderModel encoder, int vocab_size, std::uint64_t seed);

Matrix ctc_log_probs(const CtcModel& model, const Matrix& features, const ChunkSpec& spec);

// Corpus-level WER over a dataset (greedy decoding).
WerReport evaluate(const CtcModel& model, const Dataset& data, const ChunkSpec& spec);

struct FinetuneConfig {
    int steps = 600;
    int batch_utts = 8;
    OptimizerConfig opt{};
    double fraction = 1.0;
    ChunkSpec chunk = ChunkSpec::full();
    std::optional<ConvMode> conv_mode;  // overrides the init encoder's mode
    bool allow_dynamic_chunks = false;
    int eval_interval = 50;
    int average_last = 10;
    // Early stopping on dev WER; by default enabled when fraction < 1.
    std::optional<bool> early_stopping;
    int patience = 4;
    // Only the CTC head is updated for the first freeze_steps steps.
    int freeze_steps = 0;
    int vocab_size = 8;
    std::uint64_t seed = 0;
    std::string config_hash;
};

struct FinetuneResult {
    CtcModel model;
    double wer = 0.0;                  // mean test WER over the last `average_last` evaluations
    std::vector<double> test_wers;     // per evaluation checkpoint
    std::vector<RunRecord> records;
    int steps_run = 0;
    bool stopped_early = false;
};

// Attaches a fresh CTC head to `init` and trains end to end on the `fraction`
// subset of `labeled`. Evaluates on dev and test every eval_interval steps.
FinetuneResult finetune(const EncoderModel& init, const Dataset& labeled, const Dataset& dev, const Dataset& test,
                        const FinetuneConfig& cfg);

}  // namespace hctc
