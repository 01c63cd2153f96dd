#include "hctc/targets.hpp"
#include "toy.hpp"

#include <doctest.h>

#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>

using namespace hctc;

namespace {

Matrix random(int r, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Lowest total squared distance to group means over every labeling into k non-empty groups.
double best_partition_inertia(const Matrix& x, int k) {
    const int n = static_cast<int>(x.rows());
    std::vector<int> label(n, 0);
    double best = std::numeric_limits<double>::infinity();
    std::function<void(int)> rec = [&](int i) {
        if (i == n) {
            double total = 0.0;
            for (int g = 0; g < k; ++g) {
                std::vector<int> members;
                for (int j = 0; j < n; ++j)
                    if (label[j] == g) members.push_back(j);
                if (members.empty()) return;
                RowVector mean = RowVector::Zero(x.cols());
                for (int j : members) mean += x.row(j);
                mean /= static_cast<double>(members.size());
                for (int j : members) total += (x.row(j) - mean).squaredNorm();
            }
            best = std::min(best, total);
            return;
        }
        for (int g = 0; g < k; ++g) {
            label[i] = g;
            rec(i + 1);
        }
    };
    rec(0);
    return best;
}

std::vector<int> brute_force_assign(const Matrix& centroids, const Matrix& x) {
    std::vector<int> out;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
            double d = 0.0;
            for (Eigen::Index j = 0; j < x.cols(); ++j) d += (x(r, j) - centroids(c, j)) * (x(r, j) - centroids(c, j));
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        out.push_back(best);
    }
    return out;
}

}  // namespace

TEST_CASE("k-means on {0, 1, 10, 11} with K = 2") {
    Matrix x(4, 1);
    x << 0, 1, 10, 11;
    const auto r = kmeans_fit(x, 2, 50, 3);
    std::vector<double> c = {r.codebook.centroids(0, 0), r.codebook.centroids(1, 0)};
    std::sort(c.begin(), c.end());
    CHECK(c[0] == 0.5);
    CHECK(c[1] == 10.5);
    CHECK(r.inertia.back() == doctest::Approx(best_partition_inertia(x, 2)));
}

TEST_CASE("N = K distinct points: inertia 0, one point per centroid") {
    const Matrix x = random(6, 3, 1);
    const auto r = kmeans_fit(x, 6, 10, 2);
    CHECK(r.inertia.back() == 0.0);
    std::vector<int> a = r.assignment;
    std::sort(a.begin(), a.end());
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
    CHECK_THROWS_WITH(kmeans_fit(x, 7, 10, 2), "k-means needs at least K vectors");
}

TEST_CASE("Lloyd iterations: inertia non-increasing and final assignment a fixpoint") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix x = random(300, 4, 100 + seed);
        const auto r = kmeans_fit(x, 12, 200, seed);
        for (std::size_t i = 1; i < r.inertia.size(); ++i) CHECK(r.inertia[i] <= r.inertia[i - 1] + 1e-9);
        CHECK(brute_force_assign(r.codebook.centroids, x) == r.assignment);
        // Centroids are the means of their members.
        for (int c = 0; c < 12; ++c) {
            RowVector sum = RowVector::Zero(4);
            int n = 0;
            for (int i = 0; i < 300; ++i)
                if (r.assignment[i] == c) sum += x.row(i), ++n;
            REQUIRE(n > 0);
            CHECK((sum / n - r.codebook.centroids.row(c)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("well-separated clusters reach the exhaustive optimum") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Matrix x = random(9, 2, 200 + seed);
        for (int i = 0; i < 9; ++i) x.row(i) += RowVector::Constant(2, 50.0 * (i % 3));
        const auto r = kmeans_fit(x, 3, 50, seed);
        CHECK(r.inertia.back() == doctest::Approx(best_partition_inertia(x, 3)).epsilon(1e-12));
    }
}

TEST_CASE("k-means is deterministic given the seed") {
    const Matrix x = random(100, 3, 5);
    CHECK(kmeans_fit(x, 5, 30, 9).codebook.centroids == kmeans_fit(x, 5, 30, 9).codebook.centroids);
}

TEST_CASE("nearest-centroid assignment") {
    Codebook cb;
    cb.centroids = Matrix(4, 2);
    cb.centroids << 0, 0, 1, 0, -1, 0, 5, 5;
    CHECK(assign(cb, cb.centroids.row(3)) == 3);
    RowVector mid(2);
    mid << 0, 0;
    cb.centroids.row(0) << 9, 9;
    CHECK(assign(cb, mid) == 1);  // centroids 1 and 2 tie
    CHECK_THROWS_WITH(assign(cb, RowVector::Zero(3)), "vector dimension does not match codebook");

    Codebook r;
    r.centroids = random(16, 5, 6);
    const Matrix x = random(200, 5, 7);
    CHECK(tokenize(r, x) == brute_force_assign(r.centroids, x));
}

TEST_CASE("frame pooling") {
    const Matrix f = random(98, 3, 8);
    const Matrix p = pool_frames(f, 4);
    CHECK(p.rows() == 25);
    CHECK((p.row(0) - f.topRows(4).colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((p.row(24) - f.bottomRows(2).colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("BEST-RQ quantizer is frozen, deterministic and nearest-neighbour") {
    const Dataset d = hctc::testing::toy_dataset(10, 1);
    const TargetSet a = bestrq_targets(d, 32, 8, 4);
    const TargetSet b = bestrq_targets(d, 32, 8, 4);
    CHECK(a.codebook.frozen);
    CHECK(a.codebook.provenance == TargetProvenance::bestrq);
    CHECK(codebook_digest(a.codebook) == codebook_digest(b.codebook));
    CHECK(codebook_digest(a.codebook) != codebook_digest(bestrq_targets(d, 32, 8, 5).codebook));
    CHECK(a.targets == b.targets);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(a.targets[i].size() == static_cast<std::size_t>(subsampled_length(d[i].features.rows())));
        const Matrix stacked = stack_frames(d[i].features, 4);
        CHECK(a.targets[i] == brute_force_assign(a.codebook.centroids, to_codebook_space(a.codebook, stacked)));
    }
    // Identical frames map to identical tokens.
    Matrix same(8, d[0].features.cols() * 4);
    for (int r = 0; r < 8; ++r) same.row(r) = stack_frames(d[0].features, 4).row(2);
    const auto toks = tokenize(a.codebook, same);
    CHECK(std::all_of(toks.begin(), toks.end(), [&](int t) { return t == toks[0]; }));
}

TEST_CASE("MFCC targets: pooling to the encoder rate and two-tone purity") {
    const Vocabulary v = Vocabulary::toy();
    std::vector<Utterance> utts;
    for (int i = 0; i < 20; ++i) {
        const int phone = i % 2 == 0 ? 1 : 8;
        utts.push_back(synth_utterance(TokenSeq{phone}, v.tones, 500.0, 0.05, 10 + i));
    }
    const Dataset d = make_dataset(utts, 40);
    const TargetSet t = mfcc_targets(d, 2, 3);
    CHECK(t.codebook.provenance == TargetProvenance::mfcc_kmeans);
    std::map<int, std::map<int, int>> counts;  // phone -> token -> frames
    int total = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        REQUIRE(t.targets[i].size() == static_cast<std::size_t>(subsampled_length(d[i].features.rows())));
        for (int tok : t.targets[i]) ++counts[utts[i].transcript[0]][tok], ++total;
    }
    int pure = 0;
    for (auto& [phone, hist] : counts) {
        int best = 0;
        for (auto& [tok, n] : hist) best = std::max(best, n);
        pure += best;
    }
    CHECK(static_cast<double>(pure) / total >= 0.95);
    CHECK(mfcc_targets(d, 2, 3).targets == t.targets);

    Waveform one_second;
    one_second.samples.assign(16000, 0.01f);
    CHECK(pool_frames(mfcc(one_second, 13, 40).frames, 4).rows() == 25);
}

TEST_CASE("teacher targets: frame-synchronous, no collapse, stable across renditions") {
    const Dataset train = hctc::testing::toy_dataset(120, 5);
    const CtcModel teacher = hctc::testing::toy_teacher(train, 1);

    TeacherTargetOptions o;
    o.k = 16;
    o.seed = 2;
    const TargetSet t = teacher_targets(teacher.encoder, train, o);
    std::set<int> used;
    for (std::size_t i = 0; i < train.size(); ++i) {
        REQUIRE(t.targets[i].size() == static_cast<std::size_t>(subsampled_length(train[i].features.rows())));
        used.insert(t.targets[i].begin(), t.targets[i].end());
    }
    CHECK(used.size() >= 8);

    // Same phones, two noise seeds; 160 ms phones span four encoder frames each.
    const Vocabulary v = Vocabulary::toy();
    const TokenSeq phones = v.parse("a c f b h d g e");
    int agree = 0, spans = 0;
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<Utterance> pair = {synth_utterance(phones, v.tones, 160.0, 0.05, 100 + rep),
                                       synth_utterance(phones, v.tones, 160.0, 0.05, 200 + rep)};
        const Dataset pd = make_dataset(pair, 40);
        std::vector<std::vector<int>> votes;
        for (const auto& e : pd) {
            const auto toks = tokenize(t.codebook, forward(teacher.encoder, e.features, ChunkSpec::full()).final_states);
            std::vector<int> per_phone;
            for (std::size_t p = 0; p < phones.size(); ++p) {
                std::map<int, int> hist;
                for (std::size_t f = 4 * p; f < std::min(toks.size(), 4 * p + 4); ++f) ++hist[toks[f]];
                per_phone.push_back(std::max_element(hist.begin(), hist.end(), [](auto& a, auto& b) {
                                        return a.second < b.second;
                                    })->first);
            }
            votes.push_back(per_phone);
        }
        for (std::size_t p = 0; p < phones.size(); ++p) agree += votes[0][p] == votes[1][p], ++spans;
    }
    CHECK(static_cast<double>(agree) / spans > 0.8);
}

TEST_CASE("codebook and target files round trip") {
    const Dataset d = hctc::testing::toy_dataset(6, 2);
    const TargetSet t = bestrq_targets(d, 16, 4, 1);
    Checkpoint ck;
    store_codebook(ck, t.codebook);
    const Codebook back = load_codebook(deserialize(serialize(ck)));
    CHECK(codebook_digest(back) == codebook_digest(t.codebook));
    CHECK(back.frozen);

    const auto dir = std::filesystem::temp_directory_path() / "hctc_targets_test";
    write_targets(dir, d, t);
    CHECK(read_targets(dir / "targets.tsv", d) == t.targets);
    Dataset shorter = d;
    shorter[0].features.conservativeResize(shorter[0].features.rows() - 8, Eigen::NoChange);
    CHECK_THROWS(read_targets(dir / "targets.tsv", shorter));
    std::filesystem::remove_all(dir);
}
