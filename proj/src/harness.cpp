#include "hctc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace hctc {

namespace {

std::vector<Utterance> apply_filter(std::vector<Utterance> utts, const ExperimentConfig& cfg, FilterReport* report) {
    if (!cfg.data.filter_enabled) return utts;
    FilterResult fr = filter_corpus(utts, cfg.filter);
    if (report) *report = fr.report;
    std::vector<Utterance> out;
    out.reserve(fr.kept.size());
    for (auto& k : fr.kept) {
        Utterance u;
        u.id = k.id;
        u.waveform = std::move(k.waveform);
        u.transcript = std::move(k.transcript);
        out.push_back(std::move(u));
    }
    return out;
}

}  // namespace

ToyData prepare_data(const ExperimentConfig& cfg) {
    ToyData d;
    std::vector<Utterance> kept = apply_filter(synth_corpus(cfg.synth), cfg, &d.filter);
    std::vector<Utterance> labeled;
    std::vector<Utterance> unlabeled;
    for (auto& u : kept) (u.transcript.empty() ? unlabeled : labeled).push_back(std::move(u));
    const auto n_test = static_cast<std::size_t>(cfg.data.n_test);
    const auto n_dev = static_cast<std::size_t>(cfg.data.n_dev);
    if (labeled.size() <= n_test + n_dev)
        throw ValidationError("corpus too small: " + std::to_string(labeled.size()) +
                              " labeled utterances survive filtering, need more than " +
                              std::to_string(n_test + n_dev));
    const auto split = [&](std::size_t from, std::size_t to) {
        return make_dataset(std::vector<Utterance>(labeled.begin() + static_cast<std::ptrdiff_t>(from),
                                                   labeled.begin() + static_cast<std::ptrdiff_t>(to)),
                            cfg.data.n_mels);
    };
    d.test = split(0, n_test);
    d.dev = split(n_test, n_test + n_dev);
    d.train = split(n_test + n_dev, labeled.size());

    if (cfg.data.pretrain_utts > 0) {
        CorpusConfig pool = cfg.synth;
        pool.n_utts = cfg.data.pretrain_utts;
        pool.seed = mix_seed(cfg.synth.seed, 0x9e7);
        pool.id_prefix = "unl";
        std::vector<Utterance> extra = apply_filter(synth_corpus(pool), cfg, nullptr);
        for (auto& u : extra) u.transcript.clear();
        d.pretrain = make_dataset(extra, cfg.data.n_mels);
    } else {
        d.pretrain = d.train;
        if (!unlabeled.empty()) {
            Dataset rest = make_dataset(unlabeled, cfg.data.n_mels);
            d.pretrain.insert(d.pretrain.end(), rest.begin(), rest.end());
        }
    }
    if (d.pretrain.empty()) throw ValidationError("empty pretraining pool");
    return d;
}

EncoderModel init_encoder(const ExperimentConfig& cfg, const ToyData& data, std::uint64_t seed) {
    EncoderConfig ec = cfg.model;
    ec.input_dim = cfg.data.n_mels;
    EncoderModel m = EncoderModel::init(ec, seed);
    std::vector<Matrix> feats;
    feats.reserve(data.pretrain.size());
    for (const auto& ex : data.pretrain) feats.push_back(ex.features);
    const auto [mean, inv] = feature_stats(feats);
    m.set_feature_stats(mean, inv);
    return m;
}

FinetuneConfig finetune_config(const ExperimentConfig& cfg) {
    FinetuneConfig fc = cfg.finetune;
    fc.vocab_size = cfg.synth.vocab_size;
    fc.seed = mix_seed(cfg.seed, 16);
    fc.config_hash = config_hash(cfg);
    return fc;
}

namespace {

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

const std::vector<std::string> kDataKeys = {"synth.", "data.", "filter."};

std::vector<std::string> teacher_keys() { return concat(kDataKeys, {"model.", "teacher.", "seed"}); }

std::vector<std::string> targets_keys(const ExperimentConfig& cfg) {
    auto keys = concat(kDataKeys, {"method", "targets.", "seed"});
    if (cfg.method == PretrainMethod::hubert_ctc) keys = concat(keys, teacher_keys());
    return keys;
}

}  // namespace

std::string data_hash(const ExperimentConfig& cfg) { return config_hash(cfg, kDataKeys); }
std::string teacher_hash(const ExperimentConfig& cfg) { return config_hash(cfg, teacher_keys()); }
std::string targets_hash(const ExperimentConfig& cfg) { return config_hash(cfg, targets_keys(cfg)); }

std::string pretrain_hash(const ExperimentConfig& cfg) {
    if (cfg.method == PretrainMethod::scratch) return config_hash(cfg, concat(kDataKeys, {"model.", "method", "seed"}));
    return config_hash(cfg, concat(targets_keys(cfg), {"model.", "pretrain."}));
}

const ToyData& Pipeline::data(const ExperimentConfig& cfg) {
    auto& slot = data_[data_hash(cfg)];
    if (!slot) slot = std::make_unique<ToyData>(prepare_data(cfg));
    return *slot;
}

const CtcModel& Pipeline::teacher(const ExperimentConfig& cfg) {
    auto& slot = teachers_[teacher_hash(cfg)];
    if (!slot) {
        const ToyData& d = data(cfg);
        FinetuneConfig fc = finetune_config(cfg);
        fc.steps = cfg.teacher.steps;
        fc.batch_utts = cfg.teacher.batch_utts;
        fc.opt.lr = cfg.teacher.lr;
        fc.fraction = 1.0;
        fc.chunk = ChunkSpec::full();
        fc.conv_mode.reset();
        fc.early_stopping = false;
        fc.eval_interval = std::max(1, cfg.teacher.steps);
        fc.average_last = 1;
        fc.seed = mix_seed(cfg.seed, 12);
        fc.config_hash = teacher_hash(cfg);
        FinetuneResult r = hctc::finetune(init_encoder(cfg, d, mix_seed(cfg.seed, 11)), d.train, Dataset{}, d.test, fc);
        slot = std::make_unique<CtcModel>(std::move(r.model));
    }
    return *slot;
}

const TargetSet& Pipeline::targets(const ExperimentConfig& cfg) {
    if (cfg.method == PretrainMethod::scratch) throw ValidationError("the scratch method has no targets");
    auto& slot = targets_[targets_hash(cfg)];
    if (!slot) {
        const ToyData& d = data(cfg);
        const std::uint64_t seed = mix_seed(cfg.seed, 13);
        TargetSet t;
        switch (cfg.method) {
        case PretrainMethod::hubert_ctc: {
            TeacherTargetOptions o;
            o.k = cfg.targets.k;
            o.layer = cfg.targets.layer;
            o.max_iters = cfg.targets.max_iters;
            o.seed = seed;
            t = teacher_targets(teacher(cfg).encoder, d.pretrain, o);
            break;
        }
        case PretrainMethod::mfcc_kmeans:
            t = mfcc_targets(d.pretrain, cfg.targets.k, seed, 13, cfg.targets.max_iters);
            break;
        case PretrainMethod::bestrq:
            t = bestrq_targets(d.pretrain, cfg.targets.k, cfg.targets.projection_dim, seed);
            break;
        case PretrainMethod::scratch:
            break;
        }
        slot = std::make_unique<TargetSet>(std::move(t));
    }
    return *slot;
}

const PretrainResult& Pipeline::pretrained(const ExperimentConfig& cfg) {
    auto& slot = pretrained_[pretrain_hash(cfg)];
    if (!slot) {
        const ToyData& d = data(cfg);
        const EncoderModel init = init_encoder(cfg, d, mix_seed(cfg.seed, 14));
        if (cfg.method == PretrainMethod::scratch) {
            slot = std::make_unique<PretrainResult>();
            slot->encoder = init;
        } else {
            const TargetSet& t = targets(cfg);
            PretrainConfig pc = cfg.pretrain;
            pc.seed = mix_seed(cfg.seed, 15);
            pc.config_hash = pretrain_hash(cfg);
            slot = std::make_unique<PretrainResult>(pretrain(init, d.pretrain, t.targets, t.codebook.size(), pc));
        }
    }
    return *slot;
}

FinetuneResult Pipeline::finetune(const ExperimentConfig& cfg) {
    const ToyData& d = data(cfg);
    const PretrainResult& p = pretrained(cfg);
    return hctc::finetune(p.encoder, d.train, d.dev, d.test, finetune_config(cfg));
}

int ProbeResult::best_layer() const {
    if (layer_wer.empty()) throw ValidationError("empty probe result");
    return static_cast<int>(std::min_element(layer_wer.begin(), layer_wer.end()) - layer_wer.begin());
}

ProbeResult probe_layers(const EncoderModel& encoder, const Dataset& train, const Dataset& test, int vocab_size,
                         const ProbeConfig& cfg) {
    if (train.empty() || test.empty()) throw ValidationError("probing needs labeled train and test utterances");
    const int n_states = encoder.config.n_layers + 1;
    auto states_of = [&](const Dataset& data) {
        std::vector<std::vector<Matrix>> out(static_cast<std::size_t>(n_states));
        for (const auto& ex : data) {
            EncoderOutput o = forward(encoder, ex.features, ChunkSpec::full());
            for (int l = 0; l < n_states; ++l) out[l].push_back(std::move(o.states.layers[l]));
        }
        return out;
    };
    const auto train_states = states_of(train);
    const auto test_states = states_of(test);
    const int d = encoder.config.d_model;

    ProbeResult result;
    for (int l = 0; l < n_states; ++l) {
        ParameterSet head;
        {
            std::mt19937_64 rng(cfg.seed);
            std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
            Matrix w(d, vocab_size + 1);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
            head["probe.weight"] = std::move(w);
            head["probe.bias"] = Matrix::Zero(1, vocab_size + 1);
        }
        OptimizerConfig oc;
        oc.lr = cfg.lr;
        oc.total_steps = cfg.steps;
        oc.warmup_steps = std::max(1, cfg.steps / 10);
        oc.weight_decay = 0.0;
        AdamW opt(oc);
        std::mt19937_64 rng(mix_seed(cfg.seed, 1));
        std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
        for (int step = 0; step < cfg.steps; ++step) {
            Gradients grads;
            for (int b = 0; b < cfg.batch_utts; ++b) {
                const std::size_t i = pick(rng);
                ad::Tape tape;
                BoundParams p;
                bind_params(tape, head, p, true);
                ad::Var x = tape.constant(train_states[l][i]);
                ad::Var logits = ad::linear(x, p.at("probe.weight"), p.at("probe.bias"));
                ad::Var loss = ctc_loss(ad::log_softmax(logits), train[i].transcript);
                tape.backward(loss);
                Gradients g;
                for (const auto& [name, var] : p) g.emplace(name, tape.grad(var));
                accumulate(grads, g, 1.0 / cfg.batch_utts);
            }
            opt.step({&head}, grads);
        }
        WerReport total;
        for (std::size_t i = 0; i < test.size(); ++i) {
            Matrix logits = test_states[l][i] * head.at("probe.weight");
            logits.rowwise() += head.at("probe.bias").row(0);
            total += wer(test[i].transcript, greedy_decode(logits));
        }
        result.layer_wer.push_back(total.wer);
    }
    return result;
}

// ---- grid ----

std::vector<GridCell> expand_grid(const ExperimentConfig& base) {
    const GridSpec& g = base.grid;
    auto or_default = [](const std::vector<int>& v, int d) { return v.empty() ? std::vector<int>{d} : v; };
    const auto d_models = or_default(g.d_models, base.model.d_model);
    const auto steps = or_default(g.pretrain_steps, base.pretrain.steps);
    const auto utts = or_default(g.pretrain_utts, base.data.pretrain_utts);
    std::vector<GridCell> cells;
    for (const auto m : g.methods)
        for (const double f : g.fractions)
            for (const auto& pc : g.pretrain_chunks)
                for (const auto& fc : g.finetune_chunks)
                    for (const auto& cm : g.conv_modes)
                        for (const int dm : d_models)
                            for (const int st : steps)
                                for (const int ut : utts)
                                    for (const auto s : g.seeds) {
                                        GridCell c;
                                        c.method = m;
                                        c.fraction = f;
                                        c.pretrain_chunk = pc;
                                        c.finetune_chunk = fc;
                                        c.conv_mode = cm;
                                        c.d_model = dm;
                                        c.pretrain_steps = st;
                                        c.pretrain_utts = ut;
                                        c.seed = s;
                                        c.hash = config_hash(cell_config(base, c));
                                        cells.push_back(std::move(c));
                                    }
    if (cells.empty()) throw ValidationError("empty grid");
    return cells;
}

ExperimentConfig cell_config(const ExperimentConfig& base, const GridCell& c) {
    ExperimentConfig cfg = base;
    cfg.method = c.method;
    set_config_value(cfg, "finetune.fraction", format_double(c.fraction));
    set_config_value(cfg, "pretrain.chunk", c.pretrain_chunk);
    set_config_value(cfg, "finetune.chunk", c.finetune_chunk);
    set_config_value(cfg, "finetune.conv_mode", c.conv_mode);
    set_config_value(cfg, "model.d_model", std::to_string(c.d_model));
    set_config_value(cfg, "pretrain.steps", std::to_string(c.pretrain_steps));
    set_config_value(cfg, "data.pretrain_utts", std::to_string(c.pretrain_utts));
    cfg.seed = c.seed;
    return cfg;
}

namespace {

constexpr std::string_view kCellHeader =
    "hash,method,fraction,pretrain_chunk,finetune_chunk,conv_mode,d_model,pretrain_steps,pretrain_utts,seed,status,wer";

bool usable(const GridCell& c) { return c.status == "ok" || c.status == "cached"; }

std::optional<double> read_result(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string header, value;
    if (!std::getline(in, header) || header != "wer" || !std::getline(in, value)) return std::nullopt;
    return std::stod(value);
}

}  // namespace

GridResult run_grid(const ExperimentConfig& base, Pipeline& pipeline, std::ostream* log) {
    GridResult result;
    result.cells = expand_grid(base);
    const std::filesystem::path root = std::filesystem::path(base.out) / "grid";
    std::filesystem::create_directories(root);
    for (auto& cell : result.cells) {
        const std::filesystem::path dir = root / cell.hash;
        if (const auto cached = read_result(dir / "result.csv")) {
            cell.wer = *cached;
            cell.status = "cached";
        } else {
            try {
                const ExperimentConfig cfg = cell_config(base, cell);
                FinetuneResult r = pipeline.finetune(cfg);
                std::filesystem::create_directories(dir);
                {
                    std::ofstream c(dir / "config.txt");
                    c << to_text(cfg);
                }
                std::vector<RunRecord> records = pipeline.pretrained(cfg).records;
                records.insert(records.end(), r.records.begin(), r.records.end());
                for (auto& rec : records) rec.config_hash = cell.hash;
                std::filesystem::remove(dir / "records.csv");
                append_records(dir / "records.csv", records);
                result.records.insert(result.records.end(), records.begin(), records.end());
                std::ofstream out(dir / "result.csv");
                out << "wer\n" << format_double(r.wer) << '\n';
                cell.wer = r.wer;
                cell.status = "ok";
            } catch (const std::exception& e) {
                cell.status = std::string("failed: ") + e.what();
            }
        }
        if (log) *log << cell.hash << ' ' << to_string(cell.method) << " fraction=" << cell.fraction
                      << " pretrain_chunk=" << cell.pretrain_chunk << " finetune_chunk=" << cell.finetune_chunk
                      << " seed=" << cell.seed << " -> " << cell.status << " wer=" << cell.wer << '\n';
    }
    {
        std::ofstream out(root / "cells.csv");
        write_cells(out, result.cells);
    }
    {
        std::ofstream out(root / "summary.csv");
        write_summary(out, result.cells, base.grid.pivot);
    }
    emit_plots_data(result.cells, root);
    return result;
}

void write_summary(std::ostream& out, const std::vector<GridCell>& cells, const std::string& pivot) {
    const bool by_fraction = pivot == "fraction";
    auto pivot_value = [&](const GridCell& c) { return by_fraction ? format_double(c.fraction) : c.finetune_chunk; };
    auto row_key = [&](const GridCell& c) {
        std::vector<std::string> k = {to_string(c.method), c.pretrain_chunk,
                                      by_fraction ? c.finetune_chunk : format_double(c.fraction),
                                      c.conv_mode,      std::to_string(c.d_model),
                                      std::to_string(c.pretrain_steps), std::to_string(c.pretrain_utts)};
        return k;
    };
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    std::map<std::pair<std::vector<std::string>, std::string>, std::pair<double, int>> sums;
    for (const auto& c : cells) {
        const auto key = row_key(c);
        const auto col = pivot_value(c);
        if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
        if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
        if (!usable(c)) continue;
        auto& s = sums[{key, col}];
        s.first += c.wer;
        s.second += 1;
    }
    out << "method,pretrain_chunk," << (by_fraction ? "finetune_chunk" : "fraction")
        << ",conv_mode,d_model,pretrain_steps,pretrain_utts";
    for (const auto& col : columns) out << ',' << csv_field("wer@" + col);
    out << '\n';
    for (const auto& key : rows) {
        for (std::size_t i = 0; i < key.size(); ++i) out << (i ? "," : "") << csv_field(key[i]);
        for (const auto& col : columns) {
            out << ',';
            const auto it = sums.find({key, col});
            if (it != sums.end()) out << format_double(it->second.first / it->second.second);
        }
        out << '\n';
    }
}

void write_cells(std::ostream& out, const std::vector<GridCell>& cells) {
    out << kCellHeader << '\n';
    for (const auto& c : cells) {
        out << c.hash << ',' << to_string(c.method) << ',' << format_double(c.fraction) << ','
            << csv_field(c.pretrain_chunk) << ',' << csv_field(c.finetune_chunk) << ',' << csv_field(c.conv_mode) << ','
            << c.d_model << ',' << c.pretrain_steps << ',' << c.pretrain_utts << ',' << c.seed << ','
            << csv_field(c.status) << ',' << format_double(c.wer) << '\n';
    }
}

std::vector<GridCell> read_cells(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCellHeader) throw ValidationError("unexpected header in " + path.string());
    std::vector<GridCell> cells;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = parse_csv_line(line);
        if (f.size() != 12) throw ValidationError("malformed cell row in " + path.string());
        GridCell c;
        c.hash = f[0];
        c.method = parse_method(f[1]);
        c.fraction = std::stod(f[2]);
        c.pretrain_chunk = f[3];
        c.finetune_chunk = f[4];
        c.conv_mode = f[5];
        c.d_model = std::stoi(f[6]);
        c.pretrain_steps = std::stoi(f[7]);
        c.pretrain_utts = std::stoi(f[8]);
        c.seed = std::stoull(f[9]);
        c.status = f[10];
        c.wer = std::stod(f[11]);
        cells.push_back(std::move(c));
    }
    return cells;
}

namespace {

template <typename Key>
void write_grouped(const std::filesystem::path& path, std::string_view header, const std::vector<GridCell>& cells,
                   Key key_of) {
    std::vector<std::vector<std::string>> order;
    std::map<std::vector<std::string>, std::vector<double>> groups;
    for (const auto& c : cells) {
        if (!usable(c)) continue;
        const std::vector<std::string> k = key_of(c);
        if (!groups.contains(k)) order.push_back(k);
        groups[k].push_back(c.wer);
    }
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << header << '\n';
    for (const auto& k : order) {
        const auto& v = groups[k];
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (const double x : v) ss += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        for (const auto& f : k) out << csv_field(f) << ',';
        out << v.size() << ',' << format_double(mean) << ',' << format_double(sd) << '\n';
    }
}

}  // namespace

void emit_plots_data(const std::vector<GridCell>& cells, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_grouped(dir / "wer_vs_data.csv", kWerVsDataHeader, cells, [](const GridCell& c) {
        return std::vector<std::string>{to_string(c.method), std::to_string(c.d_model), std::to_string(c.pretrain_utts)};
    });
    write_grouped(dir / "wer_vs_model.csv", kWerVsModelHeader, cells, [](const GridCell& c) {
        return std::vector<std::string>{to_string(c.method), std::to_string(c.d_model)};
    });
}

}  // namespace hctc
