#include "hctc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hctc {

Dataset select_fraction(const Dataset& data, double fraction, std::uint64_t seed) {
    if (data.empty()) throw ValidationError("cannot take a fraction of an empty dataset");
    if (!(fraction > 0.0) || fraction > 1.0) throw ValidationError("fraction must be in (0, 1]");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * data.size())));
    Dataset out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(data[order[i]]);
    return out;
}

Dataset make_dataset(const std::vector<Utterance>& utts, int n_mels) {
    Dataset out;
    out.reserve(utts.size());
    for (const auto& u : utts) out.push_back({u.id, log_mel(u.waveform, n_mels).frames, u.transcript});
    return out;
}

}  // namespace hctc
