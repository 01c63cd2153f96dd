#include "hctc/targets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace hctc {

std::string to_string(TargetProvenance p) {
    switch (p) {
    case TargetProvenance::teacher_kmeans:
        return "teacher-kmeans";
    case TargetProvenance::bestrq:
        return "bestrq";
    case TargetProvenance::mfcc_kmeans:
        return "mfcc-kmeans";
    }
    return "?";
}

TargetProvenance parse_provenance(const std::string& text) {
    if (text == "teacher-kmeans" || text == "teacher") return TargetProvenance::teacher_kmeans;
    if (text == "bestrq") return TargetProvenance::bestrq;
    if (text == "mfcc-kmeans" || text == "mfcc") return TargetProvenance::mfcc_kmeans;
    throw ValidationError("unknown target provenance '" + text + "'");
}

int assign(const Codebook& codebook, const RowVector& vector) {
    if (vector.size() != codebook.dim()) throw ValidationError("vector dimension does not match codebook");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < codebook.size(); ++k) {
        const double d = (codebook.centroids.row(k) - vector).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

Matrix to_codebook_space(const Codebook& cb, const Matrix& frames) {
    Matrix x = frames;
    if (cb.input_mean.size() > 0) {
        if (x.cols() != cb.input_mean.size()) throw ValidationError("frame dimension does not match codebook input");
        x = (x.rowwise() - cb.input_mean).array().rowwise() * cb.input_inv_std.array();
    }
    if (cb.projection.size() > 0) {
        if (x.cols() != cb.projection.rows()) throw ValidationError("frame dimension does not match projection");
        x = x * cb.projection;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double n = x.row(r).norm();
            if (n > 0.0) x.row(r) /= n;
        }
    }
    return x;
}

std::vector<int> tokenize(const Codebook& codebook, const Matrix& frames) {
    const Matrix x = to_codebook_space(codebook, frames);
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) out[r] = assign(codebook, x.row(r));
    return out;
}

namespace {

double assign_all(const Matrix& x, const Matrix& centroids, std::vector<int>& assignment, std::vector<double>& dist) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
            const double d = (centroids.row(k) - x.row(i)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        assignment[i] = best;
        dist[i] = best_d;
        inertia += best_d;
    }
    return inertia;
}

}  // namespace

KMeansResult kmeans_fit(const Matrix& x, int k, int max_iters, std::uint64_t seed, TargetProvenance provenance) {
    if (k < 1) throw ValidationError("k must be >= 1");
    if (x.rows() < k) throw ValidationError("k-means needs at least K vectors");
    if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
    const auto n = x.rows();
    std::mt19937_64 rng(seed);

    // k-means++ seeding.
    Matrix centroids(k, x.cols());
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centroids.row(0) = x.row(first(rng));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (x.row(i) - centroids.row(c - 1)).squaredNorm());
            total += d2[i];
        }
        Eigen::Index pick = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng);
            for (pick = 0; pick < n - 1; ++pick) {
                r -= d2[pick];
                if (r < 0.0 && d2[pick] > 0.0) break;
            }
            while (d2[pick] == 0.0 && pick > 0) --pick;
        } else {
            pick = first(rng);
        }
        centroids.row(c) = x.row(pick);
    }

    KMeansResult res;
    std::vector<int> assignment(static_cast<std::size_t>(n));
    std::vector<double> dist(static_cast<std::size_t>(n));
    res.inertia.push_back(assign_all(x, centroids, assignment, dist));
    for (int it = 1; it <= max_iters; ++it) {
        Matrix sums = Matrix::Zero(k, x.cols());
        std::vector<int> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assignment[i]) += x.row(i);
            ++counts[assignment[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centroids.row(c) = sums.row(c) / counts[c];
            } else {
                // Empty cluster: move it onto the point that is currently worst served.
                const auto far = static_cast<Eigen::Index>(std::max_element(dist.begin(), dist.end()) - dist.begin());
                centroids.row(c) = x.row(far);
                dist[far] = 0.0;
            }
        }
        std::vector<int> next(static_cast<std::size_t>(n));
        res.inertia.push_back(assign_all(x, centroids, next, dist));
        res.iterations = it;
        const bool fixpoint = next == assignment;
        assignment = std::move(next);
        if (fixpoint) break;
    }
    res.codebook.centroids = std::move(centroids);
    res.codebook.provenance = provenance;
    res.assignment = std::move(assignment);
    return res;
}

namespace {

Matrix gather_rows(const std::vector<Matrix>& parts, int max_rows, std::uint64_t seed) {
    Eigen::Index total = 0;
    for (const auto& p : parts) total += p.rows();
    if (total == 0) throw ValidationError("no frames to cluster");
    Matrix all(total, parts[0].cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        all.middleRows(at, p.rows()) = p;
        at += p.rows();
    }
    if (total <= max_rows) return all;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_rows));
    std::sort(idx.begin(), idx.end());
    Matrix sub(max_rows, all.cols());
    for (int i = 0; i < max_rows; ++i) sub.row(i) = all.row(idx[i]);
    return sub;
}

std::pair<RowVector, RowVector> column_stats(const Matrix& x) {
    RowVector mean = x.colwise().mean();
    RowVector var = (x.rowwise() - mean).array().square().colwise().mean();
    RowVector inv = (var.array() + 1e-8).rsqrt();
    return {mean, inv};
}

}  // namespace

TargetSet teacher_targets(const EncoderModel& teacher, const Dataset& corpus, const TeacherTargetOptions& opts) {
    if (corpus.empty()) throw ValidationError("empty corpus");
    const int layer = opts.layer < 0 ? teacher.config.n_layers : opts.layer;
    if (layer > teacher.config.n_layers) throw ValidationError("teacher layer index out of range");

    std::vector<Matrix> states;
    states.reserve(corpus.size());
    for (const auto& ex : corpus) {
        Matrix h = forward(teacher, ex.features, ChunkSpec::full()).states.layers[layer];
        if (opts.layer_norm) {
            for (Eigen::Index r = 0; r < h.rows(); ++r) {
                const double mu = h.row(r).mean();
                const double sd = std::sqrt((h.row(r).array() - mu).square().mean() + 1e-5);
                h.row(r) = (h.row(r).array() - mu) / sd;
            }
        }
        states.push_back(std::move(h));
    }
    const Matrix train = gather_rows(states, opts.max_frames, mix_seed(opts.seed, 1));
    KMeansResult km = kmeans_fit(train, opts.k, opts.max_iters, mix_seed(opts.seed, 2), TargetProvenance::teacher_kmeans);

    TargetSet out;
    out.codebook = std::move(km.codebook);
    for (const auto& h : states) {
        TargetSequence seq(static_cast<std::size_t>(h.rows()));
        for (Eigen::Index r = 0; r < h.rows(); ++r) seq[r] = assign(out.codebook, h.row(r));
        out.targets.push_back(std::move(seq));
    }
    return out;
}

TargetSet bestrq_targets(const Dataset& corpus, int k, int projection_dim, std::uint64_t seed) {
    if (corpus.empty()) throw ValidationError("empty corpus");
    if (k < 2 || projection_dim < 1) throw ValidationError("bestrq needs k >= 2 and projection_dim >= 1");
    std::vector<Matrix> stacked;
    for (const auto& ex : corpus) stacked.push_back(stack_frames(ex.features, 4));
    const Matrix all = gather_rows(stacked, std::numeric_limits<int>::max(), 0);
    const auto [mean, inv] = column_stats(all);

    TargetSet out;
    Codebook& cb = out.codebook;
    cb.provenance = TargetProvenance::bestrq;
    cb.frozen = true;
    cb.input_mean = mean;
    cb.input_inv_std = inv;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto din = all.cols();
    cb.projection.resize(din, projection_dim);
    const double sd = 1.0 / std::sqrt(static_cast<double>(din));
    for (Eigen::Index i = 0; i < cb.projection.size(); ++i) cb.projection.data()[i] = sd * normal(rng);
    cb.centroids.resize(k, projection_dim);
    for (Eigen::Index i = 0; i < cb.centroids.size(); ++i) cb.centroids.data()[i] = normal(rng);
    for (int r = 0; r < k; ++r) cb.centroids.row(r).normalize();

    for (const auto& s : stacked) out.targets.push_back(tokenize(cb, s));
    return out;
}

Matrix pool_frames(const Matrix& frames, int factor) {
    const int n = static_cast<int>(frames.rows());
    const int out_n = subsampled_length(n, factor);
    Matrix out = Matrix::Zero(out_n, frames.cols());
    for (int o = 0; o < out_n; ++o) {
        const int begin = o * factor;
        const int end = std::min(n, begin + factor);
        out.row(o) = frames.middleRows(begin, end - begin).colwise().mean();
    }
    return out;
}

TargetSet mfcc_targets(const Dataset& corpus, int k, std::uint64_t seed, int n_coeffs, int max_iters) {
    if (corpus.empty()) throw ValidationError("empty corpus");
    std::vector<Matrix> pooled;
    const int n_mels = static_cast<int>(corpus[0].features.cols());
    const Matrix dct = dct_matrix(n_coeffs, n_mels).transpose();
    for (const auto& ex : corpus) pooled.push_back(pool_frames(ex.features * dct, 4));
    const Matrix all = gather_rows(pooled, std::numeric_limits<int>::max(), 0);
    const auto [mean, inv] = column_stats(all);
    const Matrix normed = (all.rowwise() - mean).array().rowwise() * inv.array();
    const Matrix train = gather_rows({normed}, 100000, mix_seed(seed, 1));
    KMeansResult km = kmeans_fit(train, k, max_iters, mix_seed(seed, 2), TargetProvenance::mfcc_kmeans);

    TargetSet out;
    out.codebook = std::move(km.codebook);
    out.codebook.input_mean = mean;
    out.codebook.input_inv_std = inv;
    for (const auto& p : pooled) out.targets.push_back(tokenize(out.codebook, p));
    return out;
}

std::uint64_t codebook_digest(const Codebook& cb) {
    Checkpoint c;
    store_codebook(c, cb);
    return checkpoint_digest(c);
}

void store_codebook(Checkpoint& ckpt, const Codebook& cb) {
    ckpt.meta["codebook.provenance"] = to_string(cb.provenance);
    ckpt.meta["codebook.frozen"] = cb.frozen ? "1" : "0";
    ckpt.arrays["codebook.centroids"] = cb.centroids;
    if (cb.input_mean.size() > 0) {
        ckpt.arrays["codebook.input_mean"] = cb.input_mean;
        ckpt.arrays["codebook.input_inv_std"] = cb.input_inv_std;
    }
    if (cb.projection.size() > 0) ckpt.arrays["codebook.projection"] = cb.projection;
}

Codebook load_codebook(const Checkpoint& ckpt) {
    Codebook cb;
    const auto prov = ckpt.meta.find("codebook.provenance");
    const auto cent = ckpt.arrays.find("codebook.centroids");
    if (prov == ckpt.meta.end() || cent == ckpt.arrays.end()) throw ValidationError("checkpoint has no codebook");
    cb.provenance = parse_provenance(prov->second);
    const auto frozen = ckpt.meta.find("codebook.frozen");
    cb.frozen = frozen != ckpt.meta.end() && frozen->second == "1";
    cb.centroids = cent->second;
    if (const auto it = ckpt.arrays.find("codebook.input_mean"); it != ckpt.arrays.end()) {
        cb.input_mean = it->second;
        cb.input_inv_std = ckpt.arrays.at("codebook.input_inv_std");
    }
    if (const auto it = ckpt.arrays.find("codebook.projection"); it != ckpt.arrays.end()) cb.projection = it->second;
    return cb;
}

void write_targets(const std::filesystem::path& dir, const Dataset& corpus, const TargetSet& targets) {
    if (corpus.size() != targets.targets.size()) throw ValidationError("targets not aligned with corpus");
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "targets.tsv");
    if (!manifest) throw ValidationError("cannot write " + (dir / "targets.tsv").string());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::string file = corpus[i].id + ".tok";
        std::ofstream tok(dir / file);
        for (std::size_t j = 0; j < targets.targets[i].size(); ++j) tok << (j ? " " : "") << targets.targets[i][j];
        tok << '\n';
        manifest << corpus[i].id << '\t' << file << '\n';
    }
    Checkpoint cb;
    store_codebook(cb, targets.codebook);
    save_checkpoint(dir / "codebook.bin", cb);
}

std::vector<TargetSequence> read_targets(const std::filesystem::path& manifest, const Dataset& corpus) {
    std::ifstream in(manifest);
    if (!in) throw ValidationError("cannot open targets manifest " + manifest.string());
    std::map<std::string, std::filesystem::path> paths;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ValidationError("bad targets manifest line: " + line);
        paths[line.substr(0, tab)] = manifest.parent_path() / line.substr(tab + 1);
    }
    std::vector<TargetSequence> out;
    for (const auto& ex : corpus) {
        const auto it = paths.find(ex.id);
        if (it == paths.end()) throw ValidationError("no targets for utterance " + ex.id);
        std::ifstream tok(it->second);
        TargetSequence seq;
        int v;
        while (tok >> v) seq.push_back(v);
        if (static_cast<int>(seq.size()) != subsampled_length(static_cast<int>(ex.features.rows())))
            throw ValidationError("targets for " + ex.id + " are not frame-synchronous with the encoder");
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace hctc
