#include "hctc/ctc.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace hctc {

CtcModel attach_ctc_head(EncoderModel encoder, int vocab_size, std::uint64_t seed) {
    if (vocab_size < 1) throw ValidationError("vocabulary must have at least one token");
    CtcModel m;
    const int d = encoder.config.d_model;
    m.encoder = std::move(encoder);
    m.vocab_size = vocab_size;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    Matrix w(d, vocab_size + 1);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    m.head["ctc.weight"] = std::move(w);
    m.head["ctc.bias"] = Matrix::Zero(1, vocab_size + 1);
    return m;
}

Matrix ctc_log_probs(const CtcModel& model, const Matrix& features, const ChunkSpec& spec) {
    const Matrix h = forward(model.encoder, features, spec).final_states;
    Matrix logits = h * model.head.at("ctc.weight");
    logits.rowwise() += model.head.at("ctc.bias").row(0);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        logits.row(r).array() -= lse;
    }
    return logits;
}

WerReport evaluate(const CtcModel& model, const Dataset& data, const ChunkSpec& spec) {
    WerReport total;
    for (const auto& ex : data) {
        if (ex.transcript.empty()) continue;
        total += wer(ex.transcript, greedy_decode(ctc_log_probs(model, ex.features, spec)));
    }
    return total;
}

namespace {

void check_vocab(const Dataset& data, int vocab) {
    for (const auto& ex : data)
        for (const int t : ex.transcript)
            if (t < 1 || t > vocab) throw ValidationError("label/vocab mismatch in utterance " + ex.id);
}

double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

FinetuneResult finetune(const EncoderModel& init, const Dataset& labeled, const Dataset& dev, const Dataset& test,
                        const FinetuneConfig& cfg) {
    if (labeled.empty()) throw ValidationError("no labeled utterances");
    if (cfg.batch_utts < 1 || cfg.eval_interval < 1) throw ValidationError("batch and eval interval must be >= 1");
    check_vocab(labeled, cfg.vocab_size);
    check_vocab(dev, cfg.vocab_size);
    check_vocab(test, cfg.vocab_size);

    const auto start = std::chrono::steady_clock::now();
    const Dataset train = select_fraction(labeled, cfg.fraction, mix_seed(cfg.seed, 1));
    for (const auto& ex : train)
        if (ex.transcript.empty()) throw ValidationError("training utterance " + ex.id + " has no transcript");

    EncoderModel encoder = init;
    if (cfg.conv_mode) encoder.config.conv_mode = *cfg.conv_mode;

    FinetuneResult result;
    result.model = attach_ctc_head(std::move(encoder), cfg.vocab_size, mix_seed(cfg.seed, 2));
    CtcModel& model = result.model;

    ChunkSampler sampler(TrainPhase::finetune, cfg.chunk, mix_seed(cfg.seed, 3), cfg.allow_dynamic_chunks);
    const ChunkSpec eval_spec = cfg.chunk.is_resolved() ? cfg.chunk : ChunkSpec::full();
    OptimizerConfig opt_cfg = cfg.opt;
    opt_cfg.total_steps = cfg.steps;
    AdamW opt(opt_cfg);

    std::mt19937_64 rng(mix_seed(cfg.seed, 4));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    auto next_index = [&] {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        return order[cursor++];
    };

    const bool early = cfg.early_stopping.value_or(cfg.fraction < 1.0);
    double best_dev = std::numeric_limits<double>::infinity();
    int since_best = 0;

    auto record = [&](int step, const std::string& metric, double v) {
        result.records.push_back({cfg.config_hash, "finetune", step, metric, v, ms_since(start)});
    };
    auto run_eval = [&](int step) {
        const double test_wer = evaluate(model, test, eval_spec).wer;
        result.test_wers.push_back(test_wer);
        record(step, "test_wer", test_wer);
        if (!dev.empty()) {
            const double dev_wer = evaluate(model, dev, eval_spec).wer;
            record(step, "dev_wer", dev_wer);
            if (dev_wer < best_dev) {
                best_dev = dev_wer;
                since_best = 0;
            } else {
                ++since_best;
            }
        }
    };

    for (int step = 0; step < cfg.steps; ++step) {
        const ChunkSpec spec = sampler.next();
        Gradients grads;
        double loss = 0.0;
        const double w = 1.0 / cfg.batch_utts;
        for (int b = 0; b < cfg.batch_utts; ++b) {
            const Example& ex = train[next_index()];
            const auto& label = ex.transcript;
            GradientResult g;
            try {
                g = gradients(
                    model.encoder, ex.features, spec,
                    [&](ad::Tape&, const GraphOutput& out, const BoundParams& p) {
                        ad::Var logits = ad::linear(out.final, p.at("ctc.weight"), p.at("ctc.bias"));
                        return ctc_loss(ad::log_softmax(logits), label);
                    },
                    model.head);
            } catch (const DivergenceError& e) {
                throw DivergenceError(std::string("fine-tuning diverged: ") + e.what(), step);
            }
            loss += w * g.loss;
            accumulate(grads, g.grads, w);
        }
        if (step < cfg.freeze_steps)
            opt.step({&model.head}, grads);
        else
            opt.step({&model.encoder.params, &model.head}, grads);
        result.steps_run = step + 1;
        if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps) {
            record(step + 1, "train_loss", loss);
            run_eval(step + 1);
            if (early && since_best >= cfg.patience) {
                result.stopped_early = true;
                break;
            }
        }
    }
    if (cfg.steps == 0) run_eval(0);

    const std::size_t n = std::min<std::size_t>(std::max(cfg.average_last, 1), result.test_wers.size());
    result.wer = std::accumulate(result.test_wers.end() - static_cast<std::ptrdiff_t>(n), result.test_wers.end(), 0.0) /
                 static_cast<double>(n);
    record(result.steps_run, "wer", result.wer);
    return result;
}

}  // namespace hctc
