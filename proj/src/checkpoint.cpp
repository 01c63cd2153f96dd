#include "hctc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hctc {

namespace {

constexpr char kMagic[8] = {'H', 'C', 'T', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out.append(p, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void read(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw ValidationError("truncated checkpoint");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Checkpoint& ckpt) {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        put_string(out, k);
        put_string(out, v);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, m] : ckpt.arrays) {
        put_string(out, name);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
        out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
    return out;
}

Checkpoint deserialize(const std::string& bytes) {
    Reader r(bytes);
    char magic[8];
    r.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ValidationError("not a checkpoint file");
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    const auto n_meta = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.get_string();
        ckpt.meta[k] = r.get_string();
    }
    const auto n_arrays = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        std::string name = r.get_string();
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        if (rows > (1u << 30) || cols > (1u << 30)) throw ValidationError("corrupt array shape in checkpoint");
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        r.read(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
        ckpt.arrays.emplace(std::move(name), std::move(m));
    }
    if (!r.done()) throw ValidationError("trailing bytes in checkpoint");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    const std::string bytes = serialize(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

void store_params(Checkpoint& ckpt, const std::string& prefix, const ParameterSet& params) {
    for (const auto& [name, m] : params) ckpt.arrays[prefix + name] = m;
}

ParameterSet load_params(const Checkpoint& ckpt, const std::string& prefix) {
    ParameterSet out;
    for (const auto& [name, m] : ckpt.arrays)
        if (name.starts_with(prefix)) out.emplace(name.substr(prefix.size()), m);
    return out;
}

void store_encoder(Checkpoint& ckpt, const EncoderModel& model) {
    const auto& c = model.config;
    ckpt.meta["encoder.input_dim"] = std::to_string(c.input_dim);
    ckpt.meta["encoder.n_layers"] = std::to_string(c.n_layers);
    ckpt.meta["encoder.d_model"] = std::to_string(c.d_model);
    ckpt.meta["encoder.n_heads"] = std::to_string(c.n_heads);
    ckpt.meta["encoder.conv_kernel"] = std::to_string(c.conv_kernel);
    ckpt.meta["encoder.ff_mult"] = std::to_string(c.ff_mult);
    ckpt.meta["encoder.subsample"] = std::to_string(c.subsample);
    ckpt.meta["encoder.conv_mode"] = to_string(c.conv_mode);
    store_params(ckpt, "encoder.", model.params);
    ckpt.arrays["buffer.feature_mean"] = model.feature_mean;
    ckpt.arrays["buffer.feature_inv_std"] = model.feature_inv_std;
}

EncoderModel load_encoder(const Checkpoint& ckpt) {
    auto get = [&](const std::string& key) {
        const auto it = ckpt.meta.find(key);
        if (it == ckpt.meta.end()) throw ValidationError("checkpoint is missing '" + key + "'");
        return it->second;
    };
    EncoderModel m;
    m.config.input_dim = std::stoi(get("encoder.input_dim"));
    m.config.n_layers = std::stoi(get("encoder.n_layers"));
    m.config.d_model = std::stoi(get("encoder.d_model"));
    m.config.n_heads = std::stoi(get("encoder.n_heads"));
    m.config.conv_kernel = std::stoi(get("encoder.conv_kernel"));
    m.config.ff_mult = std::stoi(get("encoder.ff_mult"));
    m.config.subsample = std::stoi(get("encoder.subsample"));
    m.config.conv_mode = parse_conv_mode(get("encoder.conv_mode"));
    m.config.validate();
    m.params = load_params(ckpt, "encoder.");
    const EncoderModel shape = EncoderModel::init(m.config, 0);
    for (const auto& [name, w] : shape.params) {
        const auto it = m.params.find(name);
        if (it == m.params.end() || it->second.rows() != w.rows() || it->second.cols() != w.cols())
            throw ValidationError("checkpoint parameter '" + name + "' missing or misshaped");
    }
    if (m.params.size() != shape.params.size()) throw ValidationError("checkpoint has unexpected encoder parameters");
    const auto mean = ckpt.arrays.find("buffer.feature_mean");
    const auto inv = ckpt.arrays.find("buffer.feature_inv_std");
    if (mean == ckpt.arrays.end() || inv == ckpt.arrays.end())
        throw ValidationError("checkpoint is missing feature statistics");
    m.set_feature_stats(mean->second, inv->second);
    return m;
}

std::uint64_t checkpoint_digest(const Checkpoint& ckpt) {
    const std::string bytes = serialize(ckpt);
    Fnv1a h;
    h.update(bytes.data(), bytes.size());
    return h.digest();
}

}  // namespace hctc
