// Acceptance suite: one PASS/FAIL line per criterion. Exit status is non-zero
// when any selected criterion fails.
//
//   acceptance [--only 1,2,...] [--trend-config path]

#include "../ctc_oracle.hpp"
#include "../fd_check.hpp"
#include "hctc/checkpoint.hpp"
#include "hctc/harness.hpp"
#include "hctc/receptive_field.hpp"
#include "hctc/ssl.hpp"
#include "hctc/vadfilter.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace hctc;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Matrix random(int r, int c, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

// ---- 1: CTC forward recursion against path enumeration ----

Verdict ctc_vs_enumeration() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> tlen(1, 6), vsize(1, 3), llen(1, 3);
    std::normal_distribution<double> n(0.0, 1.5);
    int instances = 0;
    double worst = 0.0;
    while (instances < 250) {
        const int v = vsize(rng), t = tlen(rng);
        std::uniform_int_distribution<int> tok(1, v);
        std::vector<int> label(llen(rng));
        for (int& x : label) x = tok(rng);
        if (min_ctc_frames(label) > t) continue;
        Matrix lp(t, v + 1);
        for (Eigen::Index i = 0; i < lp.size(); ++i) lp.data()[i] = n(rng);
        for (int r = 0; r < t; ++r) lp.row(r).array() -= std::log(lp.row(r).array().exp().sum());
        worst = std::max(worst, std::abs(ctc_loss(lp, label) - testing::brute_force_ctc_loss(lp, label)));
        ++instances;
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << instances << " instances, max |DP - enumeration| = " << worst << ", " << secs << " s";
    return {worst < 1e-9 && instances >= 200 && secs < 5.0, d.str()};
}

// ---- 2: finite-difference gradient checks ----

using GraphLoss = std::function<ad::Var(ad::Tape&, const BoundParams&)>;

double value_of(const ParameterSet& enc, const ParameterSet& head, const GraphLoss& f) {
    ad::Tape t;
    BoundParams p;
    bind_params(t, enc, p, false);
    bind_params(t, head, p, false);
    return f(t, p).value()(0, 0);
}

double max_rel_error(ParameterSet enc, ParameterSet head, const GraphLoss& f) {
    ad::Tape t;
    BoundParams p;
    bind_params(t, enc, p, true);
    bind_params(t, head, p, true);
    t.backward(f(t, p));
    double worst = 0.0;
    for (ParameterSet* set : {&enc, &head}) {
        for (auto& [name, w] : *set) {
            const Matrix g = t.grad(p.at(name));
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                const double saved = w.data()[i];
                w.data()[i] = saved + 1e-5;
                const double up = value_of(enc, head, f);
                w.data()[i] = saved - 1e-5;
                const double down = value_of(enc, head, f);
                w.data()[i] = saved;
                worst = std::max(worst, testing::relative_error(g.data()[i], (up - down) / 2e-5));
            }
        }
    }
    return worst;
}

Verdict gradient_checks() {
    const auto t0 = Clock::now();
    const Matrix feats = random(24, 4, 2);  // 6 encoder frames
    const std::vector<int> label = {1, 2, 2};
    const std::vector<int> targets = {0, 3, 1, 2, 2, 4};
    const std::vector<int> positions = {1, 2, 4};
    MaskPlan plan;
    plan.frames = 6;
    plan.mask = {0, 1, 1, 0, 1, 0};

    double worst = 0.0;
    std::ostringstream d;
    for (ConvMode mode : {ConvMode::standard, ConvMode::chunkwise_causal}) {
        for (const ChunkSpec& spec : {ChunkSpec::full(), ChunkSpec::fixed(2)}) {
            EncoderConfig ec;
            ec.input_dim = 4;
            ec.n_layers = 2;
            ec.d_model = 8;
            ec.n_heads = 2;
            ec.conv_mode = mode;
            EncoderModel m = EncoderModel::init(ec, 3);
            // Random biases keep ReLU inputs off their kinks.
            std::uint64_t salt = 10;
            for (auto& [name, w] : m.params) w += random(static_cast<int>(w.rows()), static_cast<int>(w.cols()), salt++, 0.1);
            m.set_feature_stats(RowVector::Constant(4, 0.1), RowVector::Constant(4, 0.9));

            const CtcModel ctc = attach_ctc_head(m, 3, 4);
            const GraphLoss ctc_path = [&](ad::Tape& t, const BoundParams& p) {
                const GraphOutput g = encode_graph(t, p, m.config, subsample_graph(t, p, m, feats), spec);
                return ctc_loss(ad::log_softmax(ad::linear(g.final, p.at("ctc.weight"), p.at("ctc.bias"))), label);
            };
            const double e_ctc = max_rel_error(m.params, ctc.head, ctc_path);

            ParameterSet pred = init_prediction_head(8, 5, 5);
            for (auto& [name, w] : pred) w += random(static_cast<int>(w.rows()), static_cast<int>(w.cols()), salt++, 0.3);
            const GraphLoss ce_path = [&](ad::Tape& t, const BoundParams& p) {
                ad::Var x = apply_mask(subsample_graph(t, p, m, feats), plan, p.at("mask_embedding"));
                const GraphOutput g = encode_graph(t, p, m.config, x, spec);
                return masked_ce_loss(ad::linear(g.final, p.at("pred.weight"), p.at("pred.bias")), targets, positions);
            };
            const double e_ce = max_rel_error(m.params, pred, ce_path);
            d << to_string(mode) << "/" << spec.to_string() << ": ctc " << e_ctc << ", masked-ce " << e_ce << "; ";
            worst = std::max({worst, e_ctc, e_ce});
        }
    }
    const double secs = seconds_since(t0);
    d << "max " << worst << ", " << secs << " s";
    return {worst < 1e-4 && secs < 60.0, d.str()};
}

// ---- 3: streaming equals batch ----

Verdict streaming_equals_batch() {
    const auto t0 = Clock::now();
    EncoderConfig ec;
    ec.input_dim = 40;
    ec.conv_mode = ConvMode::chunkwise_causal;  // 4 layers, d_model 64, kernel 5
    const EncoderModel m = EncoderModel::init(ec, 7);
    const Matrix feats = random(1600, 40, 8);  // 400 encoder frames
    double worst = 0.0;
    std::ostringstream d;
    for (int c : kCanonicalChunkFrames) {
        const Matrix batch = forward(m, feats, ChunkSpec::fixed(c)).final_states;
        StreamingEncoder s(m, c);
        Matrix streamed(batch.rows(), batch.cols());
        int row = 0;
        for (int i = 0; row < batch.rows(); ++i) {
            const int start = 4 * c * i;
            const int rows = std::min(4 * c, static_cast<int>(feats.rows()) - start);
            const Matrix out = s.push({i, feats.middleRows(start, rows)});
            streamed.middleRows(row, out.rows()) = out;
            row += static_cast<int>(out.rows());
        }
        const double diff = (streamed - batch).cwiseAbs().maxCoeff();
        d << "c=" << c << ": " << diff << "; ";
        worst = std::max(worst, diff);
    }
    const double secs = seconds_since(t0);
    d << secs << " s";
    return {worst < 1e-6 && secs < 30.0, d.str()};
}

// ---- 4: chunk locality under chunkwise-causal convolutions ----

Verdict chunk_locality() {
    std::ostringstream d;
    bool ok = true;
    long checks = 0;
    for (int depth = 1; depth <= 4; ++depth) {
        EncoderConfig ec;
        ec.input_dim = 8;
        ec.n_layers = depth;
        ec.d_model = 16;
        ec.conv_mode = ConvMode::chunkwise_causal;
        const EncoderModel m = EncoderModel::init(ec, 20 + depth);
        const Matrix feats = random(80, 8, 30 + depth);  // 20 encoder frames
        for (int c : {1, 3, 5, 8}) {
            const ChunkSpec spec = ChunkSpec::fixed(c);
            const Matrix base = forward(m, feats, spec).final_states;
            // A feature row feeds encoder frame f / 4; every probe whose chunk ends
            // before that frame must be exactly unchanged.
            for (int f = 0; f < feats.rows(); ++f) {
                Matrix moved = feats;
                moved.row(f) += random(1, 8, 1000 + f);
                const Matrix out = forward(m, moved, spec).final_states;
                const int first_affected_chunk_start = chunk_id(f / 4, c) * c;
                for (int i = 0; i < first_affected_chunk_start; ++i) {
                    ++checks;
                    if ((out.row(i) - base.row(i)).cwiseAbs().maxCoeff() != 0.0) ok = false;
                }
            }
        }
    }
    d << checks << " probe/perturbation pairs past the chunk end, depths 1-4, chunks {1,3,5,8}: "
      << (ok ? "all exactly 0" : "nonzero change found");
    return {ok, d.str()};
}

// ---- 5: receptive-field growth under standard convolutions ----

Verdict receptive_field_growth() {
    const int c = 4;
    std::ostringstream d;
    bool ok = true;
    int previous = -1;
    for (int layers = 1; layers <= 4; ++layers) {
        EncoderConfig ec;
        ec.input_dim = 8;
        ec.n_layers = layers;
        ec.d_model = 16;
        const EncoderModel m = EncoderModel::init(ec, 40);
        const auto rf = measure_receptive_field(m, 64, 5, ChunkSpec::fixed(c), ConvMode::standard);
        d << "L=" << layers << ": future " << rf.future_extent << " (bound " << layers * (c + 2) << "); ";
        ok = ok && rf.future_extent > previous && rf.future_extent <= layers * (c + 2);
        previous = rf.future_extent;
    }
    return {ok, d.str()};
}

// ---- 6: VAD decisions ----

Utterance prefix_silence(const std::string& id, int silent_frames, int total_frames, double hz) {
    // A zero prefix of 160 (m - 1) + 400 samples silences exactly frames 0..m-1;
    // frame m then holds 160 tone samples and is well above -40 dBFS.
    const std::size_t n = 400 + 160 * static_cast<std::size_t>(total_frames - 1);
    const std::size_t zeros = silent_frames == 0 ? 0 : 400 + 160 * static_cast<std::size_t>(silent_frames - 1);
    Utterance u = synth_utterance(TokenSeq{1}, {{1, hz}}, 1000.0 * static_cast<double>(n) / kSampleRate + 1.0, 0.0, 0);
    u.id = id;
    u.waveform.samples.resize(n);
    std::fill(u.waveform.samples.begin(), u.waveform.samples.begin() + static_cast<std::ptrdiff_t>(zeros), 0.0f);
    return u;
}

Verdict vad_decisions() {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> frames(20, 200);
    std::uniform_real_distribution<double> hz(200.0, 4000.0);
    std::vector<Utterance> corpus;
    std::vector<bool> truth;
    for (int i = 0; i < 300; ++i) {
        const int total = frames(rng);
        std::uniform_int_distribution<int> silent(0, total - 1);
        // Half the cases sit exactly on or next to the threshold.
        int s = silent(rng);
        if (i % 2 == 0) s = std::clamp(static_cast<int>(std::ceil(0.6 * total)) + (i % 6 == 0 ? 0 : (i % 4 == 0 ? 1 : -1)), 0, total - 1);
        corpus.push_back(prefix_silence("u" + std::to_string(i), s, total, hz(rng)));
        truth.push_back(10 * s <= 6 * total);
    }
    const FilterResult r = filter_corpus(corpus, {});
    int mismatches = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) mismatches += r.report.chunks[i].kept != truth[i];

    // 50 single-chunk utterances, 10 of them over the threshold.
    std::vector<Utterance> mix;
    for (int i = 0; i < 50; ++i) mix.push_back(prefix_silence("m" + std::to_string(i), i < 10 ? 70 : 30, 100, 440.0));
    const double kept_fraction = filter_corpus(mix, {}).report.kept_fraction;

    std::ostringstream d;
    d << mismatches << " mismatches over " << truth.size() << " chunks; 20% over-threshold corpus kept_fraction = "
      << kept_fraction;
    return {mismatches == 0 && kept_fraction == 0.8, d.str()};
}

// ---- 7-10: pretraining trends ----

struct TrendRun {
    ExperimentConfig base;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    Pipeline pipeline;

    double finetune_wer(std::uint64_t seed, const std::string& method, double fraction,
                        const std::string& pretrain_chunk = "full") {
        ExperimentConfig c = base;
        c.seed = seed;
        set_config_value(c, "method", method);
        c.finetune.fraction = fraction;
        c.pretrain.chunk = ChunkSpec::parse(pretrain_chunk);
        return pipeline.finetune(c).wer;
    }

    ProbeResult probe(std::uint64_t seed, const std::string& method) {
        ExperimentConfig c = base;
        c.seed = seed;
        set_config_value(c, "method", method);
        const auto& d = pipeline.data(c);
        ProbeConfig pc = c.probe;
        pc.seed = mix_seed(seed, 17);
        return probe_layers(pipeline.pretrained(c).encoder, d.train, d.test, c.synth.vocab_size, pc);
    }
};

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

Verdict ten_percent_labels(TrendRun& run) {
    const auto t0 = Clock::now();
    std::ostringstream d;
    bool each = true;
    for (auto s : run.seeds) {
        const double hub = run.finetune_wer(s, "hubert-ctc", 0.1);
        const double scr = run.finetune_wer(s, "scratch", 0.1);
        const double gap = 1.0 - hub / scr;
        d << "seed " << s << ": hubert-ctc " << hub << " vs scratch " << scr << " (gap " << gap << "); ";
        each = each && hub < scr && gap >= 0.2;
    }
    const double secs = seconds_since(t0);
    d << secs << " s";
    return {each && secs < 1800.0, d.str()};
}

Verdict one_percent_labels(TrendRun& run) {
    const auto t0 = Clock::now();
    std::vector<double> hub, mf, scr;
    for (auto s : run.seeds) {
        hub.push_back(run.finetune_wer(s, "hubert-ctc", 0.01));
        mf.push_back(run.finetune_wer(s, "mfcc-kmeans", 0.01));
        scr.push_back(run.finetune_wer(s, "scratch", 0.01));
    }
    const double h = mean(hub), m = mean(mf), s = mean(scr);
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "seed means: hubert-ctc " << h << ", mfcc-kmeans " << m << ", scratch " << s << "; " << secs << " s";
    return {h <= m * 1.05 && m <= s && secs < 2700.0, d.str()};
}

Verdict probing_shape(TrendRun& run) {
    std::ostringstream d;
    int passes = 0;
    for (auto s : run.seeds) {
        const ProbeResult h = run.probe(s, "hubert-ctc");
        const ProbeResult b = run.probe(s, "bestrq");
        const double best_h = h.layer_wer[h.best_layer()];
        const bool ok = h.layer_wer.back() <= 1.05 * best_h && b.best_layer() < static_cast<int>(b.layer_wer.size()) - 1;
        passes += ok;
        d << "seed " << s << " hubert-ctc [";
        for (double w : h.layer_wer) d << ' ' << w;
        d << " ] bestrq [";
        for (double w : b.layer_wer) d << ' ' << w;
        d << " ] " << (ok ? "ok" : "miss") << "; ";
    }
    d << passes << "/" << run.seeds.size() << " seeds";
    return {passes + 1 >= static_cast<int>(run.seeds.size()), d.str()};
}

Verdict dynamic_chunk_pretraining(TrendRun& run) {
    const auto t0 = Clock::now();
    std::vector<double> dyn, full;
    std::ostringstream d;
    for (auto s : run.seeds) {
        dyn.push_back(run.finetune_wer(s, "hubert-ctc", 1.0, "dynamic"));
        full.push_back(run.finetune_wer(s, "hubert-ctc", 1.0, "full"));
        d << "seed " << s << ": dynamic " << dyn.back() << " vs full " << full.back() << "; ";
    }
    const double secs = seconds_since(t0);
    d << "seed means: dynamic " << mean(dyn) << " vs full " << mean(full) << "; " << secs << " s";
    return {mean(dyn) <= 1.05 * mean(full) && secs < 1800.0, d.str()};
}

// ---- 11: determinism ----

std::string run_fingerprint(const ExperimentConfig& cfg) {
    Pipeline p;
    std::ostringstream out;
    Checkpoint teacher, pre, ft;
    store_encoder(teacher, p.teacher(cfg).encoder);
    const PretrainResult& pr = p.pretrained(cfg);
    store_encoder(pre, pr.encoder);
    store_params(pre, "head.", pr.head);
    const FinetuneResult r = p.finetune(cfg);
    store_encoder(ft, r.model.encoder);
    store_params(ft, "ctc.", r.model.head);
    Checkpoint cb;
    store_codebook(cb, p.targets(cfg).codebook);
    out << serialize(teacher) << serialize(cb) << serialize(pre) << serialize(ft);
    for (const auto* recs : {&pr.records, &r.records})
        for (const auto& rec : *recs)
            out << rec.config_hash << rec.stage << rec.step << rec.metric << format_double(rec.value) << '\n';
    return out.str();
}

Verdict determinism() {
    ExperimentConfig c = ExperimentConfig::defaults();
    for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
             {"synth.n_utts", "60"}, {"data.n_test", "8"}, {"data.n_dev", "4"}, {"model.n_layers", "2"},
             {"model.d_model", "16"}, {"teacher.steps", "30"}, {"targets.k", "8"}, {"pretrain.steps", "20"},
             {"pretrain.eval_interval", "10"}, {"pretrain.chunk", "dynamic"}, {"finetune.steps", "30"},
             {"finetune.eval_interval", "10"}, {"finetune.fraction", "0.1"}, {"method", "hubert-ctc"}, {"seed", "5"}})
        set_config_value(c, k, v);
    const std::string a = run_fingerprint(c);
    const std::string b = run_fingerprint(c);
    std::ostringstream d;
    d << "two fresh runs, " << a.size() << " bytes of checkpoints and metrics: " << (a == b ? "identical" : "differ");
    return {a == b, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    std::string trend_config = HCTC_TREND_CONFIG;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
        } else if (a == "--trend-config" && i + 1 < argc) {
            trend_config = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--only 1,2,...] [--trend-config path]\n";
            return 1;
        }
    }
    auto selected = [&](int n) { return only.empty() || only.count(n) > 0; };

    TrendRun trend;
    trend.base = load_config(trend_config);

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"CTC DP equals path enumeration", ctc_vs_enumeration},
        {"finite-difference gradient checks", gradient_checks},
        {"streaming equals batch", streaming_equals_batch},
        {"chunkwise-causal locality", chunk_locality},
        {"receptive field growth under standard conv", receptive_field_growth},
        {"VAD keep/discard decisions", vad_decisions},
        {"10% labels: HuBERT-CTC beats scratch by >= 20%", [&] { return ten_percent_labels(trend); }},
        {"1% labels: HuBERT-CTC <= MFCC-kmeans <= scratch", [&] { return one_percent_labels(trend); }},
        {"layer probing shape", [&] { return probing_shape(trend); }},
        {"dynamic-chunk pretraining vs full context", [&] { return dynamic_chunk_pretraining(trend); }},
        {"bit-exact reproducibility", determinism},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!selected(n)) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << n << ": " << criteria[i].first << " -- "
                  << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
