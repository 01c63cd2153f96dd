#pragma once

#include "hctc/checkpoint.hpp"
#include "hctc/ctc.hpp"
#include "hctc/dataset.hpp"
#include "hctc/encoder.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hctc {

enum class TargetProvenance { teacher_kmeans, bestrq, mfcc_kmeans };

std::string to_string(TargetProvenance p);
TargetProvenance parse_provenance(const std::string& text);

// K centroids plus the input transform that maps raw frames into centroid space.
struct Codebook {
    Matrix centroids;  // K x D
    TargetProvenance provenance = TargetProvenance::teacher_kmeans;
    // Optional per-dimension normalization applied first (empty = none).
    RowVector input_mean;
    RowVector input_inv_std;
    // Optional random projection D_in x D, followed by L2 normalization (bestrq).
    Matrix projection;
    bool frozen = false;

    int size() const { return static_cast<int>(centroids.rows()); }
    int dim() const { return static_cast<int>(centroids.cols()); }
};

// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
// `vector` must already live in centroid space.
int assign(const Codebook& codebook, const RowVector& vector);

// Applies the codebook's input transform to raw rows, then assigns each row.
std::vector<int> tokenize(const Codebook& codebook, const Matrix& frames);
Matrix to_codebook_space(const Codebook& codebook, const Matrix& frames);

struct KMeansResult {
    Codebook codebook;
    std::vector<double> inertia;  // after every assignment step
    std::vector<int> assignment;
    int iterations = 0;
};

// k-means++ seeding then Lloyd iterations until the assignment is a fixpoint or
// max_iters. An empty cluster is re-seeded at the point farthest from its centroid.
KMeansResult kmeans_fit(const Matrix& vectors, int k, int max_iters, std::uint64_t seed,
                        TargetProvenance provenance = TargetProvenance::teacher_kmeans);

using TargetSequence = std::vector<int>;

struct TargetSet {
    Codebook codebook;
    std::vector<TargetSequence> targets;  // aligned with the dataset, one token per encoder frame
};

struct TeacherTargetOptions {
    int k = 64;
    int layer = -1;             // -1 = last layer
    bool layer_norm = false;    // normalize each state vector before clustering
    int max_frames = 100000;    // k-means training subsample
    int max_iters = 30;
    std::uint64_t seed = 0;
};

// K-means on the hidden states of a CTC-fine-tuned teacher (full context).
TargetSet teacher_targets(const EncoderModel& teacher, const Dataset& corpus, const TeacherTargetOptions& opts);

// Frozen random projection of 4-stacked features plus a frozen random codebook.
TargetSet bestrq_targets(const Dataset& corpus, int k, int projection_dim, std::uint64_t seed);

// MFCCs (DCT of the log-mel features) averaged over 4 frames, clustered with k-means.
TargetSet mfcc_targets(const Dataset& corpus, int k, std::uint64_t seed, int n_coeffs = 13, int max_iters = 30);

// Averages consecutive groups of `factor` rows; the ragged tail averages what it has.
Matrix pool_frames(const Matrix& frames, int factor);

std::uint64_t codebook_digest(const Codebook& codebook);

void store_codebook(Checkpoint& ckpt, const Codebook& codebook);
Codebook load_codebook(const Checkpoint& ckpt);

// <dir>/<id>.tok with space-separated ids, plus <dir>/targets.tsv (id <TAB> path).
void write_targets(const std::filesystem::path& dir, const Dataset& corpus, const TargetSet& targets);
// Targets in dataset order, looked up by utterance id.
std::vector<TargetSequence> read_targets(const std::filesystem::path& manifest, const Dataset& corpus);

}  // namespace hctc
