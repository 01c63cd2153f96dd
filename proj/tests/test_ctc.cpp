#include "ctc_oracle.hpp"
#include "fd_check.hpp"
#include "hctc/ctc.hpp"
#include "hctc/dataset.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace hctc;
using hctc::testing::brute_force_ctc_loss;

namespace {

Matrix random_log_probs(int t, int classes, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.5);
    Matrix m(t, classes);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    for (int r = 0; r < t; ++r) {
        const double mx = m.row(r).maxCoeff();
        const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
        m.row(r).array() -= lse;
    }
    return m;
}

std::vector<int> random_label(int max_len, int vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> len(1, max_len), tok(1, vocab);
    std::vector<int> l(len(rng));
    for (int& x : l) x = tok(rng);
    return l;
}

Matrix argmax_rows(const std::vector<int>& ids, int classes) {
    Matrix m = Matrix::Constant(static_cast<int>(ids.size()), classes, std::log(0.1));
    for (std::size_t t = 0; t < ids.size(); ++t) m(static_cast<int>(t), ids[t]) = std::log(0.9);
    return m;
}

}  // namespace

TEST_CASE("closed-form losses") {
    const Matrix half = Matrix::Constant(1, 2, std::log(0.5));
    CHECK(ctc_loss(half, std::vector<int>{1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const Matrix half2 = Matrix::Constant(2, 2, std::log(0.5));
    CHECK(ctc_loss(half2, std::vector<int>{1}) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("label too long for the input") {
    const Matrix lp = Matrix::Constant(2, 3, std::log(1.0 / 3));
    CHECK_THROWS_WITH(ctc_loss(lp, std::vector<int>{1, 2, 1}), "label too long for input length");
    CHECK_THROWS_WITH(ctc_loss(lp, std::vector<int>{1, 1}), "label too long for input length");
    CHECK_NOTHROW(ctc_loss(lp, std::vector<int>{1, 2}));
    CHECK_THROWS(ctc_loss(lp, std::vector<int>{3}));
    CHECK(min_ctc_frames(std::vector<int>{1, 1, 2, 2}) == 6);
}

TEST_CASE("forward recursion equals path enumeration") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> tlen(1, 6), vsize(1, 3);
    int checked = 0;
    while (checked < 300) {
        const int v = vsize(rng);
        const int t = tlen(rng);
        const auto label = random_label(3, v, rng);
        if (min_ctc_frames(label) > t) continue;
        const Matrix lp = random_log_probs(t, v + 1, rng);
        const double dp = ctc_loss(lp, label);
        REQUIRE(std::abs(dp - brute_force_ctc_loss(lp, label)) < 1e-9);
        REQUIRE(std::exp(-dp) > 0.0);
        REQUIRE(std::exp(-dp) <= 1.0 + 1e-12);
        ++checked;
    }
}

TEST_CASE("forward-backward gradient matches finite differences") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const auto label = random_label(3, 3, rng);
        const int t = min_ctc_frames(label) + trial % 4;
        const Matrix lp = random_log_probs(t, 4, rng);
        const auto g = ctc_loss_grad(lp, label);
        CHECK(g.loss == doctest::Approx(ctc_loss(lp, label)).epsilon(1e-12));
        double worst = 0.0;
        Matrix x = lp;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double saved = x.data()[i];
            x.data()[i] = saved + 1e-6;
            const double up = ctc_loss(x, label);
            x.data()[i] = saved - 1e-6;
            const double down = ctc_loss(x, label);
            x.data()[i] = saved;
            worst = std::max(worst, hctc::testing::relative_error(g.grad.data()[i], (up - down) / 2e-6, 1e-3));
        }
        CHECK(worst < 1e-5);
        // -grad is the state occupancy per frame, so every row sums to -1.
        for (int r = 0; r < t; ++r) CHECK(g.grad.row(r).sum() == doctest::Approx(-1.0).epsilon(1e-9));
    }
}

TEST_CASE("chained through log-softmax, gradient rows sum to zero") {
    std::mt19937_64 rng(8);
    const Matrix logits = random_log_probs(5, 4, rng) * 3.0;
    const std::vector<int> label = {2, 3};
    ad::Tape t;
    const auto x = t.variable(logits);
    t.backward(ctc_loss(ad::log_softmax(x), label));
    const Matrix g = t.grad(x);
    for (int r = 0; r < 5; ++r) CHECK(std::abs(g.row(r).sum()) < 1e-12);
    CHECK(hctc::testing::max_fd_error({logits}, [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
              return ctc_loss(ad::log_softmax(v[0]), label);
          }) < 1e-6);
}

TEST_CASE("single frame: only the label entry has gradient") {
    const Matrix lp = Matrix::Constant(1, 3, std::log(1.0 / 3));
    const auto g = ctc_loss_grad(lp, std::vector<int>{2});
    CHECK(g.grad(0, 2) != 0.0);
    CHECK(g.grad(0, 0) == 0.0);
    CHECK(g.grad(0, 1) == 0.0);
}

TEST_CASE("greedy decoding") {
    CHECK(greedy_decode(argmax_rows({1, 1, 0, 2}, 3)) == TokenSeq{1, 2});
    CHECK(greedy_decode(argmax_rows({0, 1, 0, 1}, 3)) == TokenSeq{1, 1});
    CHECK(greedy_decode(argmax_rows({0, 0, 0}, 3)).empty());
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) CHECK(greedy_decode(random_log_probs(7, 4, rng)).size() <= 7);
}

TEST_CASE("WER examples") {
    CHECK(wer(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}).wer == 0.0);
    const auto ins = wer(std::vector<int>{1, 2}, std::vector<int>{1, 5, 2});
    CHECK(ins.insertions == 1);
    CHECK(ins.edits() == 1);
    CHECK(ins.wer == 0.5);
    const auto del = wer(std::vector<int>{1, 2, 3}, std::vector<int>{});
    CHECK(del.deletions == 3);
    CHECK(del.wer == 1.0);
    CHECK_THROWS(wer(std::vector<int>{}, std::vector<int>{1}));
}

TEST_CASE("WER edit count equals the exhaustive minimum and swaps consistently") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> len(0, 6), tok(1, 3);
    for (int trial = 0; trial < 400; ++trial) {
        std::vector<int> a(1 + len(rng)), b(len(rng));
        for (int& x : a) x = tok(rng);
        for (int& x : b) x = tok(rng);
        const auto r = wer(a, b);
        REQUIRE(r.edits() == hctc::testing::brute_force_edits(a, 0, b, 0));
        REQUIRE(r.insertions - r.deletions == static_cast<int>(b.size()) - static_cast<int>(a.size()));
        REQUIRE(r.ref_words == static_cast<int>(a.size()));
        if (!b.empty()) {
            const auto s = wer(b, a);
            CHECK(s.substitutions == r.substitutions);
            CHECK(s.insertions == r.deletions);
            CHECK(s.deletions == r.insertions);
        }
    }
}

TEST_CASE("fine-tuning on the full toy set learns the task") {
    CorpusConfig cc;
    cc.n_utts = 140;
    cc.seed = 5;
    const Dataset all = make_dataset(synth_corpus(cc), 40);
    const Dataset test(all.begin(), all.begin() + 20);
    const Dataset train(all.begin() + 20, all.end());

    EncoderConfig ec;
    ec.input_dim = 40;
    ec.n_layers = 2;
    ec.d_model = 32;
    EncoderModel init = EncoderModel::init(ec, 1);
    std::vector<Matrix> feats;
    for (const auto& e : train) feats.push_back(e.features);
    const auto [mean, inv_std] = feature_stats(feats);
    init.set_feature_stats(mean, inv_std);

    FinetuneConfig fc;
    fc.steps = 0;
    const auto untrained = finetune(init, train, {}, test, fc);
    CHECK(untrained.model.head.count("ctc.weight") == 1);
    CHECK(untrained.wer > 0.5);

    fc.steps = 400;
    fc.opt.lr = 3e-3;
    fc.eval_interval = 40;
    const auto trained = finetune(init, train, {}, test, fc);
    CHECK(trained.wer < 0.15);
    CHECK(trained.test_wers.size() == 10);

    fc.vocab_size = 3;
    CHECK_THROWS(finetune(init, train, {}, test, fc));
}
