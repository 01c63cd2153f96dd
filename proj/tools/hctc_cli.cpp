// Command-line front end: corpus synthesis, VAD filtering, target generation,
// pretraining, fine-tuning, probing and grid runs.

#include "hctc/checkpoint.hpp"
#include "hctc/config.hpp"
#include "hctc/corpus_io.hpp"
#include "hctc/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace hctc;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string config;
    std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const Globals& g) {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig::defaults() : load_config(g.config);
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed_set) cfg.seed = g.seed;
    if (!g.out.empty()) cfg.out = g.out;
    return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out);
    return cfg.out;
}

Dataset load_dataset(const fs::path& manifest, const ExperimentConfig& cfg) {
    const Vocabulary vocab = Vocabulary::toy(cfg.synth.vocab_size);
    return make_dataset(load_corpus(manifest, vocab), cfg.data.n_mels);
}

EncoderModel fresh_encoder(const ExperimentConfig& cfg, const Dataset& data) {
    EncoderConfig ec = cfg.model;
    ec.input_dim = cfg.data.n_mels;
    EncoderModel m = EncoderModel::init(ec, mix_seed(cfg.seed, 14));
    std::vector<Matrix> feats;
    for (const auto& ex : data) feats.push_back(ex.features);
    const auto [mean, inv] = feature_stats(feats);
    m.set_feature_stats(mean, inv);
    return m;
}

fs::path checkpoint_file(const fs::path& p) { return fs::is_directory(p) ? p / "model.bin" : p; }

// Labeled entries only; the last 10% (at least one) are held out for evaluation.
std::pair<Dataset, Dataset> holdout_split(const Dataset& all) {
    Dataset labeled;
    for (const auto& ex : all)
        if (!ex.transcript.empty()) labeled.push_back(ex);
    if (labeled.size() < 2) throw ValidationError("need at least two labeled utterances");
    const std::size_t n_eval = std::max<std::size_t>(1, labeled.size() / 10);
    Dataset eval(labeled.end() - static_cast<std::ptrdiff_t>(n_eval), labeled.end());
    labeled.resize(labeled.size() - n_eval);
    return {labeled, eval};
}

int cmd_synth(const Globals& g, int n, double mix) {
    ExperimentConfig cfg = resolve_config(g);
    if (n > 0) cfg.synth.n_utts = n;
    if (mix >= 0) cfg.synth.silence_mix = mix;
    if (g.seed_set) cfg.synth.seed = g.seed;
    const auto utts = synth_corpus(cfg.synth);
    write_corpus(out_dir(cfg), utts, Vocabulary::toy(cfg.synth.vocab_size));
    std::cout << "wrote " << utts.size() << " utterances to " << (fs::path(cfg.out) / "manifest.tsv").string() << '\n';
    return 0;
}

int cmd_filter(const Globals& g, const std::string& manifest, const FilterOptions& opts) {
    ExperimentConfig cfg = resolve_config(g);
    const Vocabulary vocab = Vocabulary::toy(cfg.synth.vocab_size);
    const auto utts = load_corpus(manifest, vocab);
    const FilterResult r = filter_corpus(utts, opts);
    std::vector<Utterance> kept;
    for (const auto& k : r.kept) kept.push_back({k.id, k.waveform, k.transcript, {}});
    const fs::path dir = out_dir(cfg);
    write_corpus(dir, kept, vocab);
    std::ofstream report(dir / "report.csv");
    write_report_csv(report, r.report);
    std::cout << "kept " << r.report.kept_chunks << "/" << r.report.total_chunks
              << " chunks (kept_fraction=" << r.report.kept_fraction << ")\n";
    return 0;
}

int cmd_targets(const Globals& g, const std::string& manifest, const std::string& method, const std::string& teacher) {
    ExperimentConfig cfg = resolve_config(g);
    const Dataset data = load_dataset(manifest, cfg);
    const std::uint64_t seed = mix_seed(cfg.seed, 13);
    TargetSet t;
    switch (parse_method(method)) {
    case PretrainMethod::hubert_ctc: {
        if (teacher.empty() || !fs::exists(checkpoint_file(teacher)))
            throw ValidationError("teacher checkpoint not found; train one with `hctc finetune` first");
        const EncoderModel enc = load_encoder(load_checkpoint(checkpoint_file(teacher)));
        TeacherTargetOptions o;
        o.k = cfg.targets.k;
        o.layer = cfg.targets.layer;
        o.max_iters = cfg.targets.max_iters;
        o.seed = seed;
        t = teacher_targets(enc, data, o);
        break;
    }
    case PretrainMethod::mfcc_kmeans:
        t = mfcc_targets(data, cfg.targets.k, seed, 13, cfg.targets.max_iters);
        break;
    case PretrainMethod::bestrq:
        t = bestrq_targets(data, cfg.targets.k, cfg.targets.projection_dim, seed);
        break;
    case PretrainMethod::scratch:
        throw ValidationError("scratch has no targets");
    }
    write_targets(out_dir(cfg), data, t);
    std::cout << "wrote " << t.targets.size() << " target sequences (K=" << t.codebook.size() << ")\n";
    return 0;
}

int cmd_pretrain(const Globals& g, const std::string& manifest, const std::string& targets) {
    ExperimentConfig cfg = resolve_config(g);
    const Dataset data = load_dataset(manifest, cfg);
    const auto seqs = read_targets(targets, data);
    const Codebook cb = load_codebook(load_checkpoint(fs::path(targets).parent_path() / "codebook.bin"));
    PretrainConfig pc = cfg.pretrain;
    pc.seed = mix_seed(cfg.seed, 15);
    pc.config_hash = config_hash(cfg);
    const PretrainResult r = pretrain(fresh_encoder(cfg, data), data, seqs, cb.size(), pc);
    const fs::path dir = out_dir(cfg);
    Checkpoint ckpt;
    store_encoder(ckpt, r.encoder);
    store_params(ckpt, "head.", r.head);
    ckpt.meta["stage"] = "pretrain";
    ckpt.meta["config_hash"] = pc.config_hash;
    save_checkpoint(dir / "model.bin", ckpt);
    write_pretrain_metrics(dir / "metrics.csv", r.log);
    fs::remove(dir / "records.csv");
    append_records(dir / "records.csv", r.records);
    std::ofstream(dir / "config.txt") << to_text(cfg);
    if (!r.log.empty())
        std::cout << "final loss " << r.log.back().loss << ", masked accuracy " << r.log.back().masked_acc << '\n';
    return 0;
}

int cmd_finetune(const Globals& g, const std::string& init, const std::string& manifest, const std::string& test_manifest,
                 double fraction, const std::string& chunk, const std::string& conv) {
    ExperimentConfig cfg = resolve_config(g);
    const Dataset all = load_dataset(manifest, cfg);
    auto [train, test] = holdout_split(all);
    if (!test_manifest.empty()) {
        train.insert(train.end(), test.begin(), test.end());
        test = load_dataset(test_manifest, cfg);
    }
    EncoderModel enc = init == "scratch" ? fresh_encoder(cfg, all) : load_encoder(load_checkpoint(checkpoint_file(init)));
    FinetuneConfig fc = finetune_config(cfg);
    fc.fraction = fraction;
    fc.chunk = ChunkSpec::parse(chunk);
    fc.conv_mode = parse_conv_mode(conv);
    const FinetuneResult r = hctc::finetune(enc, train, Dataset{}, test, fc);
    const fs::path dir = out_dir(cfg);
    Checkpoint ckpt;
    store_encoder(ckpt, r.model.encoder);
    store_params(ckpt, "", r.model.head);
    ckpt.meta["stage"] = "finetune";
    ckpt.meta["vocab_size"] = std::to_string(r.model.vocab_size);
    ckpt.meta["config_hash"] = fc.config_hash;
    save_checkpoint(dir / "model.bin", ckpt);
    append_records(dir / "metrics.csv", r.records);
    std::cout << "WER " << r.wer << " after " << r.steps_run << " steps" << (r.stopped_early ? " (early stop)" : "")
              << '\n';
    return 0;
}

int cmd_probe(const Globals& g, const std::string& model, const std::string& manifest) {
    ExperimentConfig cfg = resolve_config(g);
    const auto [train, test] = holdout_split(load_dataset(manifest, cfg));
    ProbeConfig pc = cfg.probe;
    pc.seed = mix_seed(cfg.seed, 17);
    const ProbeResult r =
        probe_layers(load_encoder(load_checkpoint(checkpoint_file(model))), train, test, cfg.synth.vocab_size, pc);
    std::ofstream out(out_dir(cfg) / "probe.csv");
    out << "layer,wer\n";
    for (std::size_t l = 0; l < r.layer_wer.size(); ++l) {
        out << l << ',' << format_double(r.layer_wer[l]) << '\n';
        std::cout << "layer " << l << ": WER " << r.layer_wer[l] << '\n';
    }
    return 0;
}

int cmd_grid(const Globals& g) {
    const ExperimentConfig cfg = resolve_config(g);
    Pipeline pipeline;
    const GridResult r = run_grid(cfg, pipeline, &std::cerr);
    write_summary(std::cout, r.cells, cfg.grid.pivot);
    return 0;
}

int cmd_report(const Globals& g, const std::string& grid_dir) {
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path dir = grid_dir.empty() ? fs::path(cfg.out) / "grid" : fs::path(grid_dir);
    const auto cells = read_cells(dir / "cells.csv");
    {
        std::ofstream out(dir / "summary.csv");
        write_summary(out, cells, cfg.grid.pivot);
    }
    emit_plots_data(cells, dir);
    write_summary(std::cout, cells, cfg.grid.pivot);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HuBERT-CTC toy pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option_function<std::uint64_t>(
           "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Global seed")
        ->configurable();
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--config", g.config, "Experiment config (key = value lines)");
    app.add_option("--set", g.overrides, "Config override key=value (repeatable)");

    int n = 0;
    double mix = -1.0;
    auto* synth = app.add_subcommand("synth", "Synthesize a toy corpus");
    synth->add_option("--n", n, "Number of utterances");
    synth->add_option("--silence-mix", mix, "Fraction of utterances with an inserted silence span");

    std::string manifest, targets_path, method = "hubert-ctc", teacher, init = "scratch", chunk = "full",
                                        conv = "standard", test_manifest, model, grid_dir;
    FilterOptions fopts;
    double fraction = 1.0;
    auto* filter = app.add_subcommand("filter", "Drop chunks whose silence ratio exceeds the threshold");
    filter->add_option("--manifest", manifest)->required();
    filter->add_option("--threshold", fopts.threshold_ratio);
    filter->add_option("--chunk-seconds", fopts.chunk_seconds);
    filter->add_option("--vad-db", fopts.vad_db);

    auto* targets = app.add_subcommand("targets", "Generate quantized pretraining targets");
    targets->add_option("--manifest", manifest)->required();
    targets->add_option("--method", method)->check(CLI::IsMember({"hubert-ctc", "mfcc-kmeans", "bestrq"}));
    targets->add_option("--teacher", teacher, "Fine-tuned CTC checkpoint (hubert-ctc)");

    auto* pre = app.add_subcommand("pretrain", "Masked-prediction pretraining");
    pre->add_option("--manifest", manifest)->required();
    pre->add_option("--targets", targets_path, "targets.tsv written by `targets`")->required();

    auto* ft = app.add_subcommand("finetune", "CTC fine-tuning");
    ft->add_option("--init", init, "Pretrained checkpoint or 'scratch'");
    ft->add_option("--manifest", manifest)->required();
    ft->add_option("--test-manifest", test_manifest);
    ft->add_option("--fraction", fraction)->check(CLI::IsMember({1.0, 0.1, 0.01, 0.001}));
    ft->add_option("--chunk", chunk)->check(CLI::IsMember({"full", "8s", "4s", "2s", "1s", "200ms"}));
    ft->add_option("--conv", conv)->check(CLI::IsMember({"standard", "chunkwise-causal"}));

    auto* probe = app.add_subcommand("probe", "Linear CTC probes on every layer");
    probe->add_option("--model", model)->required();
    probe->add_option("--manifest", manifest)->required();

    auto* grid = app.add_subcommand("grid", "Run the experiment grid from --config");
    auto* report = app.add_subcommand("report", "Rebuild summary and plot CSVs of a grid run");
    report->add_option("--grid", grid_dir);

    app.fallthrough();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return cmd_synth(g, n, mix);
        if (*filter) return cmd_filter(g, manifest, fopts);
        if (*targets) return cmd_targets(g, manifest, method, teacher);
        if (*pre) return cmd_pretrain(g, manifest, targets_path);
        if (*ft) return cmd_finetune(g, init, manifest, test_manifest, fraction, chunk, conv);
        if (*probe) return cmd_probe(g, model, manifest);
        if (*grid) return cmd_grid(g);
        if (*report) return cmd_report(g, grid_dir);
    } catch (const DivergenceError& e) {
        std::cerr << "error: numerical divergence: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
