#include "hctc/corpus_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hctc {

static_assert(std::endian::native == std::endian::little, "raw float files assume a little-endian host");

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw ValidationError("cannot open manifest " + manifest.string());
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 4)
            throw ValidationError(manifest.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated columns");
        ManifestEntry e{cols[0], cols[1], cols[2], 0.0};
        try {
            e.duration_ms = std::stod(cols[3]);
        } catch (const std::exception&) {
            throw ValidationError(manifest.string() + ":" + std::to_string(lineno) + ": bad duration");
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(manifest);
    if (!out) throw ValidationError("cannot write manifest " + manifest.string());
    for (const auto& e : entries)
        out << e.id << '\t' << e.path << '\t' << (e.transcript.empty() ? "-" : e.transcript) << '\t'
            << e.duration_ms << '\n';
}

Waveform read_raw_float(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(float) != 0) throw ValidationError(path.string() + ": size not a multiple of 4");
    Waveform wav;
    wav.samples.resize(bytes.size() / sizeof(float));
    std::memcpy(wav.samples.data(), bytes.data(), bytes.size());
    return wav;
}

void write_raw_float(const std::filesystem::path& path, const Waveform& wav) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(wav.samples.data()),
              static_cast<std::streamsize>(wav.samples.size() * sizeof(float)));
}

void write_corpus(const std::filesystem::path& dir, const std::vector<Utterance>& corpus,
                  const Vocabulary& vocab) {
    std::filesystem::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (const auto& u : corpus) {
        const std::string file = u.id + ".f32";
        write_raw_float(dir / file, u.waveform);
        entries.push_back({u.id, file, u.transcript.empty() ? "-" : vocab.render(u.transcript),
                           u.waveform.duration_ms()});
    }
    write_manifest(dir / "manifest.tsv", entries);
}

std::vector<Utterance> load_corpus(const std::filesystem::path& manifest, const Vocabulary& vocab) {
    const auto base = manifest.parent_path();
    std::vector<Utterance> out;
    for (const auto& e : read_manifest(manifest)) {
        Utterance u;
        u.id = e.id;
        const std::filesystem::path p = std::filesystem::path(e.path).is_absolute() ? std::filesystem::path(e.path) : base / e.path;
        u.waveform = p.extension() == ".wav" ? read_wav(p.string()) : read_raw_float(p);
        if (e.transcript != "-") u.transcript = vocab.parse(e.transcript);
        out.push_back(std::move(u));
    }
    return out;
}

}  // namespace hctc
