#include "hctc/ssl.hpp"

#include <chrono>
#include <cmath>
#include <algorithm>
#include <fstream>
#include <numeric>

namespace hctc {

std::vector<int> MaskPlan::positions() const {
    std::vector<int> out;
    for (int t = 0; t < frames; ++t)
        if (mask[t]) out.push_back(t);
    return out;
}

int MaskPlan::count() const { return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1})); }

MaskPlan plan_masks(int frames, double start_prob, int span_len, std::mt19937_64& rng) {
    if (frames < 0) throw ValidationError("negative frame count");
    if (span_len < 1) throw ValidationError("span_len must be >= 1");
    if (start_prob < 0.0 || start_prob > 1.0) throw ValidationError("start_prob must lie in [0, 1]");
    MaskPlan plan;
    plan.frames = frames;
    plan.span_len = span_len;
    plan.start_prob = start_prob;
    plan.mask.assign(static_cast<std::size_t>(frames), 0);
    if (frames < span_len) {
        if (frames > 0) plan.starts.push_back(0);
        std::fill(plan.mask.begin(), plan.mask.end(), std::uint8_t{1});
        return plan;
    }
    std::bernoulli_distribution start(start_prob);
    for (int t = 0; t < frames; ++t) {
        if (!start(rng)) continue;
        plan.starts.push_back(t);
        for (int u = t; u < std::min(frames, t + span_len); ++u) plan.mask[u] = 1;
    }
    return plan;
}

Matrix apply_mask(const Matrix& states, const MaskPlan& plan, const RowVector& mask_embedding) {
    if (mask_embedding.size() != states.cols()) throw ValidationError("mask embedding dimension != d_model");
    if (plan.frames != states.rows()) throw ValidationError("mask plan length != number of frames");
    Matrix out = states;
    for (int t = 0; t < plan.frames; ++t)
        if (plan.mask[t]) out.row(t) = mask_embedding;
    return out;
}

ad::Var apply_mask(ad::Var states, const MaskPlan& plan, ad::Var mask_embedding) {
    if (plan.frames != states.value().rows()) throw ValidationError("mask plan length != number of frames");
    if (mask_embedding.value().cols() != states.value().cols())
        throw ValidationError("mask embedding dimension != d_model");
    const std::vector<int> rows = plan.positions();
    if (rows.empty()) return states;
    return ad::replace_rows(states, rows, mask_embedding);
}

namespace {

void check_targets(std::span<const int> targets, Eigen::Index frames, Eigen::Index k) {
    if (static_cast<Eigen::Index>(targets.size()) != frames)
        throw ValidationError("targets are not frame-synchronous with the encoder output");
    for (const int t : targets)
        if (t < 0 || t >= k) throw ValidationError("target id out of range for the prediction head");
}

double row_log_softmax_at(const Matrix& logits, Eigen::Index r, int target) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    return logits(r, target) - lse;
}

}  // namespace

double masked_ce_loss(const Matrix& logits, std::span<const int> targets, const MaskPlan& plan) {
    check_targets(targets, logits.rows(), logits.cols());
    if (plan.frames != logits.rows()) throw ValidationError("mask plan length != number of frames");
    double total = 0.0;
    int n = 0;
    for (int t = 0; t < plan.frames; ++t) {
        if (!plan.mask[t]) continue;
        total -= row_log_softmax_at(logits, t, targets[t]);
        ++n;
    }
    if (n == 0) throw ValidationError("no masked positions");
    return total / n;
}

ad::Var masked_ce_loss(ad::Var logits, std::span<const int> targets, std::span<const int> positions) {
    check_targets(targets, logits.value().rows(), logits.value().cols());
    if (positions.empty()) throw ValidationError("no masked positions");
    ad::Var logp = ad::log_softmax(logits);
    const Matrix& lp = logp.value();
    std::vector<std::pair<int, int>> picks;
    double total = 0.0;
    for (const int t : positions) {
        picks.emplace_back(t, targets[t]);
        total -= lp(t, targets[t]);
    }
    const double inv = 1.0 / static_cast<double>(picks.size());
    Matrix value(1, 1);
    value(0, 0) = total * inv;
    return logp.tape()->record(std::move(value), {logp}, [logp, picks, inv](ad::Tape& tape, const Matrix& g, const Matrix&) {
        Matrix& d = tape.grad_ref(logp);
        for (const auto& [t, c] : picks) d(t, c) -= g(0, 0) * inv;
    });
}

void PretrainConfig::validate() const {
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (batch_utts < 1) throw ValidationError("batch_utts must be >= 1");
    if (span_len < 1) throw ValidationError("span_len must be >= 1");
    if (!(start_prob > 0.0 && start_prob < 1.0)) throw ValidationError("start_prob must lie in (0, 1)");
    if (unmasked_weight < 0.0) throw ValidationError("unmasked_weight must be >= 0");
    if (eval_interval < 1) throw ValidationError("eval_interval must be >= 1");
}

ParameterSet init_prediction_head(int d_model, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("codebook size must be >= 2");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1 / std::sqrt(static_cast<double>(d_model)));
    Matrix w(d_model, k);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    ParameterSet head;
    head["pred.weight"] = std::move(w);
    head["pred.bias"] = Matrix::Zero(1, k);
    return head;
}

namespace {

// A span is forced when the random plan came out empty so every utterance
// contributes to the loss.
MaskPlan training_plan(int frames, const PretrainConfig& cfg, std::mt19937_64& rng) {
    MaskPlan plan = plan_masks(frames, cfg.start_prob, cfg.span_len, rng);
    if (plan.count() == 0 && frames > 0) {
        std::uniform_int_distribution<int> pick(0, frames - cfg.span_len);
        const int s = pick(rng);
        plan.starts.push_back(s);
        for (int t = s; t < s + cfg.span_len; ++t) plan.mask[t] = 1;
    }
    return plan;
}

struct MaskedStep {
    double loss = 0.0;
    int correct = 0;
    int masked = 0;
    Gradients grads;
};

MaskedStep masked_step(const EncoderModel& encoder, const ParameterSet& head, const Matrix& features,
                       std::span<const int> targets, const MaskPlan& plan, const ChunkSpec& spec, double unmasked_weight,
                       bool want_grads) {
    ad::Tape tape;
    BoundParams p;
    bind_params(tape, encoder.params, p, want_grads);
    bind_params(tape, head, p, want_grads);
    ad::Var x = subsample_graph(tape, p, encoder, features);
    x = apply_mask(x, plan, p.at("mask_embedding"));
    const GraphOutput g = encode_graph(tape, p, encoder.config, x, spec);
    ad::Var logits = ad::linear(g.final, p.at("pred.weight"), p.at("pred.bias"));
    const std::vector<int> masked = plan.positions();
    ad::Var loss = masked_ce_loss(logits, targets, masked);
    if (unmasked_weight > 0.0) {
        std::vector<int> rest;
        for (int t = 0; t < plan.frames; ++t)
            if (!plan.mask[t]) rest.push_back(t);
        if (!rest.empty()) loss = ad::add(loss, ad::scale(masked_ce_loss(logits, targets, rest), unmasked_weight));
    }
    MaskedStep out;
    out.loss = loss.value()(0, 0);
    out.masked = static_cast<int>(masked.size());
    const Matrix& lv = logits.value();
    for (const int t : masked) {
        Eigen::Index arg;
        lv.row(t).maxCoeff(&arg);
        if (arg == targets[t]) ++out.correct;
    }
    if (!std::isfinite(out.loss)) throw DivergenceError("non-finite masked-prediction loss", -1);
    if (want_grads) {
        tape.backward(loss);
        for (const auto& [name, var] : p) out.grads.emplace(name, tape.grad(var));
    }
    return out;
}

double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

MaskedEval evaluate_masked(const EncoderModel& encoder, const ParameterSet& head, const Dataset& data,
                           std::span<const TargetSequence> targets, const PretrainConfig& cfg, const ChunkSpec& spec,
                           std::uint64_t seed) {
    if (data.size() != targets.size()) throw ValidationError("targets not aligned with corpus");
    MaskedEval out;
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::mt19937_64 rng(mix_seed(seed, i));
        const int frames = subsampled_length(static_cast<int>(data[i].features.rows()), encoder.config.subsample);
        const MaskPlan plan = training_plan(frames, cfg, rng);
        const MaskedStep s = masked_step(encoder, head, data[i].features, targets[i], plan, spec, 0.0, false);
        loss_sum += s.loss * s.masked;
        correct += s.correct;
        out.masked_frames += s.masked;
    }
    if (out.masked_frames > 0) {
        out.loss = loss_sum / out.masked_frames;
        out.accuracy = static_cast<double>(correct) / out.masked_frames;
    }
    return out;
}

PretrainResult pretrain(const EncoderModel& init, const Dataset& corpus, std::span<const TargetSequence> targets,
                        int k, const PretrainConfig& cfg, const Dataset& eval,
                        std::span<const TargetSequence> eval_targets) {
    cfg.validate();
    if (corpus.empty()) throw ValidationError("empty pretraining corpus");
    if (corpus.size() != targets.size()) throw ValidationError("targets not aligned with corpus");
    if (eval.size() != eval_targets.size()) throw ValidationError("eval targets not aligned with eval corpus");
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const int frames = subsampled_length(static_cast<int>(corpus[i].features.rows()), init.config.subsample);
        check_targets(targets[i], frames, k);
    }

    const auto start = std::chrono::steady_clock::now();
    PretrainResult result;
    result.encoder = init;
    result.head = init_prediction_head(init.config.d_model, k, mix_seed(cfg.seed, 1));
    if (cfg.steps == 0) return result;

    ChunkSampler sampler(TrainPhase::pretrain, cfg.chunk, mix_seed(cfg.seed, 2));
    OptimizerConfig opt_cfg = cfg.opt;
    opt_cfg.total_steps = cfg.steps;
    AdamW opt(opt_cfg);
    std::mt19937_64 order_rng(mix_seed(cfg.seed, 3));
    std::mt19937_64 mask_rng(mix_seed(cfg.seed, 4));
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    double interval_loss = 0.0;
    int interval_correct = 0;
    int interval_masked = 0;
    int interval_steps = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        const ChunkSpec spec = sampler.next();
        Gradients grads;
        const double w = 1.0 / cfg.batch_utts;
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_utts; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            const std::size_t i = order[cursor++];
            const int frames = static_cast<int>(targets[i].size());
            const MaskPlan plan = training_plan(frames, cfg, mask_rng);
            MaskedStep s;
            try {
                s = masked_step(result.encoder, result.head, corpus[i].features, targets[i], plan, spec,
                                cfg.unmasked_weight, true);
            } catch (const DivergenceError& e) {
                throw DivergenceError(std::string("pretraining diverged at step ") + std::to_string(step) + ": " +
                                          e.what(),
                                      step);
            }
            loss += w * s.loss;
            interval_correct += s.correct;
            interval_masked += s.masked;
            accumulate(grads, s.grads, w);
        }
        try {
            opt.step({&result.encoder.params, &result.head}, grads);
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string("pretraining diverged at step ") + std::to_string(step) + ": " + e.what(),
                                  step);
        }
        interval_loss += loss;
        ++interval_steps;

        if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps) {
            PretrainLogRow row;
            row.step = step + 1;
            row.loss = interval_loss / interval_steps;
            row.chunk_frames = spec.is_full() ? 0 : spec.chunk_frames;
            if (!eval.empty()) {
                row.masked_acc = evaluate_masked(result.encoder, result.head, eval, eval_targets, cfg,
                                                 ChunkSpec::full(), mix_seed(cfg.seed, 5))
                                     .accuracy;
            } else {
                row.masked_acc = interval_masked ? static_cast<double>(interval_correct) / interval_masked : 0.0;
            }
            result.log.push_back(row);
            const double ms = ms_since(start);
            result.records.push_back({cfg.config_hash, "pretrain", row.step, "loss", row.loss, ms});
            result.records.push_back({cfg.config_hash, "pretrain", row.step, "masked_acc", row.masked_acc, ms});
            result.records.push_back(
                {cfg.config_hash, "pretrain", row.step, "chunk_frames", static_cast<double>(row.chunk_frames), ms});
            interval_loss = 0.0;
            interval_correct = 0;
            interval_masked = 0;
            interval_steps = 0;
        }
    }
    return result;
}

void write_pretrain_metrics(const std::filesystem::path& path, const std::vector<PretrainLogRow>& log) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "step,loss,masked_acc,chunk_size\n";
    for (const auto& r : log)
        out << r.step << ',' << format_double(r.loss) << ',' << format_double(r.masked_acc) << ',' << r.chunk_frames
            << '\n';
}

}  // namespace hctc
