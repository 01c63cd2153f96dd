#pragma once

#include "hctc/signal.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hctc {

// One utterance ready for the encoder: features plus (possibly empty) transcript.
struct Example {
    std::string id;
    Matrix features;
    TokenSeq transcript;
};

using Dataset = std::vector<Example>;

// A seeded, nested subset: the first max(1, round(fraction * n)) items of a fixed
// permutation, so smaller fractions are always contained in larger ones.
Dataset select_fraction(const Dataset& data, double fraction, std::uint64_t seed);

// Log-mel features for every utterance.
Dataset make_dataset(const std::vector<Utterance>& utts, int n_mels = kDefaultMels);

}  // namespace hctc
