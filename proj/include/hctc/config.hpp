#pragma once

#include "hctc/chunking.hpp"
#include "hctc/ctc.hpp"
#include "hctc/encoder.hpp"
#include "hctc/signal.hpp"
#include "hctc/ssl.hpp"
#include "hctc/vadfilter.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hctc {

// How the encoder is initialized before fine-tuning.
enum class PretrainMethod { scratch, hubert_ctc, mfcc_kmeans, bestrq };

std::string to_string(PretrainMethod m);
PretrainMethod parse_method(const std::string& text);

struct DataConfig {
    int n_test = 40;
    int n_dev = 20;
    int n_mels = 40;
    int pretrain_utts = 0;  // 0 = the whole training pool
    bool filter_enabled = true;
};

struct TeacherConfig {
    int steps = 300;
    int batch_utts = 8;
    double lr = 3e-3;
};

struct TargetConfig {
    int k = 32;
    int layer = -1;  // teacher layer, -1 = last
    int projection_dim = 16;
    int max_iters = 30;
};

struct ProbeConfig {
    int steps = 200;
    int batch_utts = 8;
    double lr = 1e-2;
    std::uint64_t seed = 0;
};

// Axes of a grid run; every combination is one cell.
struct GridSpec {
    std::vector<PretrainMethod> methods{PretrainMethod::scratch, PretrainMethod::hubert_ctc};
    std::vector<double> fractions{1.0, 0.1};
    std::vector<std::string> pretrain_chunks{"full"};
    std::vector<std::string> finetune_chunks{"full"};
    std::vector<std::string> conv_modes{"standard"};
    std::vector<int> d_models{};      // empty = model.d_model
    std::vector<int> pretrain_steps{};  // empty = pretrain.steps
    std::vector<int> pretrain_utts{};   // empty = data.pretrain_utts
    std::vector<std::uint64_t> seeds{0};
    std::string pivot = "fraction";  // column axis of the summary: fraction | finetune_chunk
};

// Every tunable of the pipeline. Serialized as "key = value" lines; '#' starts a comment.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out = "runs";
    PretrainMethod method = PretrainMethod::hubert_ctc;
    CorpusConfig synth{};
    DataConfig data{};
    FilterOptions filter{};
    EncoderConfig model{};
    TeacherConfig teacher{};
    TargetConfig targets{};
    PretrainConfig pretrain{};
    FinetuneConfig finetune{};
    ProbeConfig probe{};
    GridSpec grid{};

    // Desk-scale defaults used by the CLI and the trend experiments.
    static ExperimentConfig defaults();
};

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = ExperimentConfig::defaults());
ExperimentConfig load_config(const std::filesystem::path& path);
// Applies one "key=value" override; unknown keys are rejected.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
std::vector<std::string> config_keys();

// Canonical text: every key in sorted order.
std::string to_text(const ExperimentConfig& cfg);

// Hash over all keys except "out" (or only keys starting with one of `prefixes`).
std::string config_hash(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg, const std::vector<std::string>& prefixes);

}  // namespace hctc
