#pragma once

#include "hctc/config.hpp"
#include "hctc/ctc.hpp"
#include "hctc/dataset.hpp"
#include "hctc/encoder.hpp"
#include "hctc/records.hpp"
#include "hctc/ssl.hpp"
#include "hctc/targets.hpp"
#include "hctc/vadfilter.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace hctc {

// Toy corpus after VAD filtering, split into train / dev / test. `pretrain` is
// the unlabeled pool: the training split itself, or a separately synthesized
// corpus of data.pretrain_utts utterances.
struct ToyData {
    Dataset train;
    Dataset dev;
    Dataset test;
    Dataset pretrain;
    FilterReport filter;
};

ToyData prepare_data(const ExperimentConfig& cfg);

// Fresh encoder with feature statistics taken from the pretraining pool.
EncoderModel init_encoder(const ExperimentConfig& cfg, const ToyData& data, std::uint64_t seed);

FinetuneConfig finetune_config(const ExperimentConfig& cfg);

// Computes each pipeline stage once per distinct stage configuration.
class Pipeline {
public:
    const ToyData& data(const ExperimentConfig& cfg);
    // CTC model trained from scratch on all labeled training utterances.
    const CtcModel& teacher(const ExperimentConfig& cfg);
    // Targets for data(cfg).pretrain according to cfg.method (not for scratch).
    const TargetSet& targets(const ExperimentConfig& cfg);
    // Pretrained encoder (or the fresh encoder for the scratch method).
    const PretrainResult& pretrained(const ExperimentConfig& cfg);
    FinetuneResult finetune(const ExperimentConfig& cfg);

private:
    std::map<std::string, std::unique_ptr<ToyData>> data_;
    std::map<std::string, std::unique_ptr<CtcModel>> teachers_;
    std::map<std::string, std::unique_ptr<TargetSet>> targets_;
    std::map<std::string, std::unique_ptr<PretrainResult>> pretrained_;
};

// Stage hashes: a stage is recomputed only when one of its inputs changes.
std::string data_hash(const ExperimentConfig& cfg);
std::string teacher_hash(const ExperimentConfig& cfg);
std::string targets_hash(const ExperimentConfig& cfg);
std::string pretrain_hash(const ExperimentConfig& cfg);

struct ProbeResult {
    std::vector<double> layer_wer;  // index 0 = layer-stack input, i = output of layer i

    int best_layer() const;
};

// Linear CTC probe per layer on frozen full-context states.
ProbeResult probe_layers(const EncoderModel& encoder, const Dataset& train, const Dataset& test, int vocab_size,
                         const ProbeConfig& cfg);

struct GridCell {
    PretrainMethod method = PretrainMethod::scratch;
    double fraction = 1.0;
    std::string pretrain_chunk = "full";
    std::string finetune_chunk = "full";
    std::string conv_mode = "standard";
    int d_model = 0;
    int pretrain_steps = 0;
    int pretrain_utts = 0;
    std::uint64_t seed = 0;

    std::string hash;
    std::string status;  // "ok", "cached" or "failed: <reason>"
    double wer = 0.0;
};

// Expands the grid axes of `base` into cells (seed varies fastest).
std::vector<GridCell> expand_grid(const ExperimentConfig& base);
ExperimentConfig cell_config(const ExperimentConfig& base, const GridCell& cell);

struct GridResult {
    std::vector<GridCell> cells;
    std::vector<RunRecord> records;  // records of the cells computed in this run
};

// Runs every cell under <out>/grid/<hash>/; cells with a stored result are
// skipped with status "cached". A failing cell is recorded and the grid goes on.
GridResult run_grid(const ExperimentConfig& base, Pipeline& pipeline, std::ostream* log = nullptr);

// Mean WER over seeds, one row per non-pivot axis combination, one column per
// value of base.grid.pivot.
void write_summary(std::ostream& out, const std::vector<GridCell>& cells, const std::string& pivot);
void write_cells(std::ostream& out, const std::vector<GridCell>& cells);
std::vector<GridCell> read_cells(const std::filesystem::path& path);

inline constexpr std::string_view kWerVsDataHeader = "method,d_model,pretrain_utts,n,wer_mean,wer_std";
inline constexpr std::string_view kWerVsModelHeader = "method,d_model,n,wer_mean,wer_std";

// wer_vs_data.csv (averaged over seeds) and wer_vs_model.csv (averaged over
// seeds and pretraining data sizes). Failed cells are left out.
void emit_plots_data(const std::vector<GridCell>& cells, const std::filesystem::path& dir);

}  // namespace hctc
