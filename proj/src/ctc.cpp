#include "hctc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_label(const Matrix& log_probs, std::span<const int> label) {
    const auto classes = log_probs.cols();
    for (const int l : label)
        if (l < 1 || l >= classes) throw ValidationError("label id outside [1, V]");
    if (log_probs.rows() < min_ctc_frames(label)) throw ValidationError("label too long for input length");
}

std::vector<int> extended_label(std::span<const int> label) {
    std::vector<int> ext(2 * label.size() + 1, kBlank);
    for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
    return ext;
}

// alpha(t, s): log prob of all prefixes ending in state s at frame t (emission included).
Matrix forward_table(const Matrix& lp, const std::vector<int>& ext) {
    const auto frames = lp.rows();
    const auto states = static_cast<Eigen::Index>(ext.size());
    Matrix alpha = Matrix::Constant(frames, states, kNegInf);
    alpha(0, 0) = lp(0, ext[0]);
    if (states > 1) alpha(0, 1) = lp(0, ext[1]);
    for (Eigen::Index t = 1; t < frames; ++t) {
        for (Eigen::Index s = 0; s < states; ++s) {
            double a = alpha(t - 1, s);
            if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
            if (s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]) a = log_add(a, alpha(t - 1, s - 2));
            alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, ext[s]);
        }
    }
    return alpha;
}

double total_log_prob(const Matrix& alpha) {
    const auto last = alpha.rows() - 1;
    const auto states = alpha.cols();
    double p = alpha(last, states - 1);
    if (states > 1) p = log_add(p, alpha(last, states - 2));
    return p;
}

}  // namespace

int min_ctc_frames(std::span<const int> label) {
    int n = static_cast<int>(label.size());
    for (std::size_t i = 1; i < label.size(); ++i)
        if (label[i] == label[i - 1]) ++n;
    return n;
}

double ctc_loss(const Matrix& log_probs, std::span<const int> label) {
    if (log_probs.rows() < 1) throw ValidationError("empty log-probability matrix");
    check_label(log_probs, label);
    return -total_log_prob(forward_table(log_probs, extended_label(label)));
}

CtcLossGrad ctc_loss_grad(const Matrix& lp, std::span<const int> label) {
    if (lp.rows() < 1) throw ValidationError("empty log-probability matrix");
    check_label(lp, label);
    const auto ext = extended_label(label);
    const Matrix alpha = forward_table(lp, ext);
    const double log_p = total_log_prob(alpha);

    // beta(t, s): log prob of all completions from state s at frame t, emission at t excluded.
    const auto frames = lp.rows();
    const auto states = static_cast<Eigen::Index>(ext.size());
    Matrix beta = Matrix::Constant(frames, states, kNegInf);
    beta(frames - 1, states - 1) = 0.0;
    if (states > 1) beta(frames - 1, states - 2) = 0.0;
    for (Eigen::Index t = frames - 2; t >= 0; --t) {
        for (Eigen::Index s = 0; s < states; ++s) {
            double b = beta(t + 1, s) + lp(t + 1, ext[s]);
            if (s + 1 < states) b = log_add(b, beta(t + 1, s + 1) + lp(t + 1, ext[s + 1]));
            if (s + 2 < states && ext[s + 2] != kBlank && ext[s + 2] != ext[s])
                b = log_add(b, beta(t + 1, s + 2) + lp(t + 1, ext[s + 2]));
            beta(t, s) = b;
        }
    }

    CtcLossGrad out;
    out.loss = -log_p;
    out.grad = Matrix::Zero(lp.rows(), lp.cols());
    if (!std::isfinite(log_p)) return out;
    for (Eigen::Index t = 0; t < frames; ++t) {
        std::vector<double> acc(static_cast<std::size_t>(lp.cols()), kNegInf);
        for (Eigen::Index s = 0; s < states; ++s) acc[ext[s]] = log_add(acc[ext[s]], alpha(t, s) + beta(t, s));
        for (Eigen::Index k = 0; k < lp.cols(); ++k)
            if (acc[k] != kNegInf) out.grad(t, k) = -std::exp(acc[k] - log_p);
    }
    return out;
}

ad::Var ctc_loss(ad::Var log_probs, std::span<const int> label) {
    CtcLossGrad r = ctc_loss_grad(log_probs.value(), label);
    Matrix value(1, 1);
    value(0, 0) = r.loss;
    return log_probs.tape()->record(std::move(value), {log_probs},
                                    [log_probs, grad = std::move(r.grad)](ad::Tape& t, const Matrix& g, const Matrix&) {
                                        t.grad_ref(log_probs) += g(0, 0) * grad;
                                    });
}

TokenSeq greedy_decode(const Matrix& log_probs) {
    TokenSeq out;
    int prev = -1;
    for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
        Eigen::Index best = 0;
        log_probs.row(t).maxCoeff(&best);
        const int k = static_cast<int>(best);
        if (k != prev && k != kBlank) out.push_back(k);
        prev = k;
    }
    return out;
}

WerReport& WerReport::operator+=(const WerReport& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    ref_words += o.ref_words;
    wer = ref_words > 0 ? static_cast<double>(edits()) / ref_words : 0.0;
    return *this;
}

WerReport wer(std::span<const int> ref, std::span<const int> hyp) {
    if (ref.empty()) throw ValidationError("empty reference");
    const std::size_t r = ref.size();
    const std::size_t h = hyp.size();
    // (cost, substitutions) ordered by cost ascending, then substitutions descending.
    struct Cell {
        int cost;
        int subs;
    };
    auto better = [](Cell a, Cell b) { return a.cost < b.cost || (a.cost == b.cost && a.subs > b.subs); };
    std::vector<Cell> prev(h + 1), cur(h + 1);
    for (std::size_t j = 0; j <= h; ++j) prev[j] = {static_cast<int>(j), 0};
    for (std::size_t i = 1; i <= r; ++i) {
        cur[0] = {static_cast<int>(i), 0};
        for (std::size_t j = 1; j <= h; ++j) {
            const bool same = ref[i - 1] == hyp[j - 1];
            Cell best{prev[j - 1].cost + (same ? 0 : 1), prev[j - 1].subs + (same ? 0 : 1)};
            const Cell del{prev[j].cost + 1, prev[j].subs};
            const Cell ins{cur[j - 1].cost + 1, cur[j - 1].subs};
            if (better(del, best)) best = del;
            if (better(ins, best)) best = ins;
            cur[j] = best;
        }
        std::swap(prev, cur);
    }
    const Cell end = prev[h];
    WerReport out;
    out.substitutions = end.subs;
    const int indel = end.cost - end.subs;
    const int diff = static_cast<int>(h) - static_cast<int>(r);  // insertions - deletions
    out.insertions = (indel + diff) / 2;
    out.deletions = (indel - diff) / 2;
    out.ref_words = static_cast<int>(r);
    out.wer = static_cast<double>(end.cost) / static_cast<double>(r);
    return out;
}

}  // namespace hctc
