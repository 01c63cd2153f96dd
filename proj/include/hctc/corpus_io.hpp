#pragma once

#include "hctc/signal.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hctc {

// One manifest line: id <TAB> path <TAB> transcript <TAB> duration_ms.
// Paths are relative to the manifest's directory; an unlabeled entry has transcript "-".
struct ManifestEntry {
    std::string id;
    std::string path;
    std::string transcript;
    double duration_ms = 0.0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

// Raw little-endian float32 samples, 16 kHz mono.
Waveform read_raw_float(const std::filesystem::path& path);
void write_raw_float(const std::filesystem::path& path, const Waveform& wav);

// Writes <dir>/<id>.f32 per utterance plus <dir>/manifest.tsv.
void write_corpus(const std::filesystem::path& dir, const std::vector<Utterance>& corpus,
                  const Vocabulary& vocab);
// Resolves entry paths against the manifest directory.
std::vector<Utterance> load_corpus(const std::filesystem::path& manifest, const Vocabulary& vocab);

}  // namespace hctc
