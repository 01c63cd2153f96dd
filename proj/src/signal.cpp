#include "hctc/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

namespace hctc {

std::string hex_digest(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Vocabulary Vocabulary::toy(int size, double lo_hz, double hi_hz) {
    if (size < 1 || size > 26) throw ValidationError("toy vocabulary size must be in [1, 26]");
    Vocabulary v;
    for (int i = 0; i < size; ++i) {
        v.symbols.emplace_back(1, static_cast<char>('a' + i));
        const double t = size == 1 ? 0.0 : static_cast<double>(i) / (size - 1);
        v.tones[i + 1] = lo_hz * std::pow(hi_hz / lo_hz, t);
    }
    return v;
}

int Vocabulary::id_of(const std::string& symbol) const {
    const auto it = std::find(symbols.begin(), symbols.end(), symbol);
    if (it == symbols.end()) throw ValidationError("unknown phone symbol '" + symbol + "'");
    return static_cast<int>(it - symbols.begin()) + 1;
}

std::string Vocabulary::render(std::span<const int> tokens) const {
    std::string out;
    for (const int t : tokens) {
        if (t < 1 || t > size()) throw ValidationError("token id out of vocabulary range");
        if (!out.empty()) out += ' ';
        out += symbols[t - 1];
    }
    return out;
}

TokenSeq Vocabulary::parse(const std::string& text) const {
    TokenSeq out;
    std::istringstream in(text);
    std::string sym;
    while (in >> sym) out.push_back(id_of(sym));
    return out;
}

Utterance synth_utterance(std::span<const int> phones, const std::map<int, double>& tone_map,
                          double phone_dur_ms, double noise_amp, std::uint64_t seed) {
    if (phones.empty()) throw ValidationError("empty transcript");
    if (phone_dur_ms <= 0.0) throw ValidationError("phone duration must be positive");
    if (noise_amp < 0.0 || noise_amp > 0.5) throw ValidationError("noise_amp must be in [0, 0.5]");

    const auto per_phone = static_cast<std::size_t>(std::lround(phone_dur_ms * kSampleRate / 1000.0));
    if (per_phone == 0) throw ValidationError("phone duration shorter than one sample");

    Utterance utt;
    utt.transcript.assign(phones.begin(), phones.end());
    utt.waveform.samples.resize(per_phone * phones.size());

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    for (std::size_t p = 0; p < phones.size(); ++p) {
        const auto it = tone_map.find(phones[p]);
        if (it == tone_map.end()) throw ValidationError("phone has no tone mapping");
        const double hz = it->second;
        if (!(hz > 0.0) || hz >= kSampleRate / 2.0)
            throw ValidationError("tone frequency must be in (0, Nyquist)");
        const double w = 2.0 * std::numbers::pi * hz / kSampleRate;
        for (std::size_t n = 0; n < per_phone; ++n) {
            double s = kToneAmplitude * std::sin(w * static_cast<double>(n));
            if (noise_amp > 0.0) s += noise_amp * noise(rng);
            utt.waveform.samples[p * per_phone + n] = static_cast<float>(s);
        }
    }
    return utt;
}

std::vector<Utterance> synth_corpus(const CorpusConfig& cfg) {
    if (cfg.n_utts < 1) throw ValidationError("n_utts must be >= 1");
    if (cfg.min_len_phones < 1 || cfg.max_len_phones < cfg.min_len_phones)
        throw ValidationError("invalid phone length range");
    if (cfg.silence_mix < 0.0 || cfg.silence_mix > 1.0)
        throw ValidationError("silence_mix must be in [0, 1]");
    if (cfg.vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
    if (cfg.phonotactic_bias < 0.0 || cfg.phonotactic_bias > 1.0)
        throw ValidationError("phonotactic_bias must be in [0, 1]");

    const Vocabulary vocab = Vocabulary::toy(cfg.vocab_size);

    // Exactly round(mix * n) utterances carry a silence span.
    const auto n_silent = static_cast<int>(std::lround(cfg.silence_mix * cfg.n_utts));
    std::vector<int> order(cfg.n_utts);
    for (int i = 0; i < cfg.n_utts; ++i) order[i] = i;
    std::mt19937_64 pick(mix_seed(cfg.seed, 0xfeed));
    std::shuffle(order.begin(), order.end(), pick);
    std::vector<bool> silent(cfg.n_utts, false);
    for (int i = 0; i < n_silent; ++i) silent[order[i]] = true;

    std::vector<Utterance> corpus;
    corpus.reserve(cfg.n_utts);
    for (int i = 0; i < cfg.n_utts; ++i) {
        std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        std::uniform_int_distribution<int> len_dist(cfg.min_len_phones, cfg.max_len_phones);
        const int len = len_dist(rng);
        std::uniform_int_distribution<int> phone_dist(1, cfg.vocab_size);
        TokenSeq phones;
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        while (static_cast<int>(phones.size()) < len) {
            int p = 0;
            if (cfg.phonotactic_bias > 0.0 && !phones.empty() && u01(rng) < cfg.phonotactic_bias)
                p = (phones.back() * 3) % cfg.vocab_size + 1;
            else
                p = phone_dist(rng);
            if (!phones.empty() && phones.back() == p) continue;
            phones.push_back(p);
        }
        const double dur = cfg.min_phone_ms + (cfg.max_phone_ms - cfg.min_phone_ms) * u01(rng);
        const double noise = cfg.max_noise_amp * u01(rng);
        const double pitch = 1.0 + cfg.pitch_jitter * (2.0 * u01(rng) - 1.0);
        std::map<int, double> tones;
        for (const auto& [id, hz] : vocab.tones) tones[id] = hz * pitch;

        Utterance utt = synth_utterance(phones, tones, dur, noise, rng());
        utt.id = cfg.id_prefix + std::to_string(i);

        if (silent[i]) {
            const double sil_ms = cfg.min_silence_ms + (cfg.max_silence_ms - cfg.min_silence_ms) * u01(rng);
            const auto sil = static_cast<std::size_t>(std::lround(sil_ms * kSampleRate / 1000.0));
            const std::size_t per_phone = utt.waveform.size() / phones.size();
            std::uniform_int_distribution<int> at_dist(0, static_cast<int>(phones.size()));
            const std::size_t at = per_phone * static_cast<std::size_t>(at_dist(rng));
            auto& s = utt.waveform.samples;
            s.insert(s.begin() + static_cast<std::ptrdiff_t>(at), sil, 0.0f);
            utt.silence_spans.push_back({at, at + sil});
        }
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

std::vector<Utterance> synth_corpus(int n_utts, int max_len_phones, double silence_mix,
                                    std::uint64_t seed) {
    CorpusConfig cfg;
    cfg.n_utts = n_utts;
    cfg.max_len_phones = max_len_phones;
    cfg.min_len_phones = std::min(cfg.min_len_phones, max_len_phones);
    cfg.silence_mix = silence_mix;
    cfg.seed = seed;
    return synth_corpus(cfg);
}

std::uint64_t corpus_digest(std::span<const Utterance> corpus) {
    Fnv1a h;
    for (const auto& u : corpus) {
        h.update_string(u.id);
        h.update_value(u.waveform.samples.size());
        h.update(u.waveform.samples.data(), u.waveform.samples.size() * sizeof(float));
        h.update_value(u.transcript.size());
        h.update(u.transcript.data(), u.transcript.size() * sizeof(int));
        for (const auto& s : u.silence_spans) {
            h.update_value(s.start);
            h.update_value(s.end);
        }
    }
    return h.digest();
}

namespace {

constexpr int kFftSize = 512;
constexpr int kFftBins = kFftSize / 2 + 1;

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }

// Power spectra of all frames; FFTW planning is serialized.
class PowerSpectrum {
public:
    PowerSpectrum() {
        std::lock_guard<std::mutex> lock(plan_mutex());
        in_ = fftw_alloc_real(kFftSize);
        out_ = fftw_alloc_complex(kFftBins);
        plan_ = fftw_plan_dft_r2c_1d(kFftSize, in_, out_, FFTW_ESTIMATE);
        window_.resize(kFrameLength);
        for (int n = 0; n < kFrameLength; ++n)
            window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (kFrameLength - 1));
    }
    ~PowerSpectrum() {
        std::lock_guard<std::mutex> lock(plan_mutex());
        fftw_destroy_plan(plan_);
        fftw_free(in_);
        fftw_free(out_);
    }
    PowerSpectrum(const PowerSpectrum&) = delete;
    PowerSpectrum& operator=(const PowerSpectrum&) = delete;

    Matrix compute(const Waveform& wav) {
        const int frames = num_frames(wav.size());
        Matrix power(frames, kFftBins);
        for (int f = 0; f < frames; ++f) {
            const float* x = wav.samples.data() + static_cast<std::size_t>(f) * kFrameShift;
            for (int n = 0; n < kFrameLength; ++n) in_[n] = window_[n] * x[n];
            for (int n = kFrameLength; n < kFftSize; ++n) in_[n] = 0.0;
            fftw_execute(plan_);
            for (int k = 0; k < kFftBins; ++k)
                power(f, k) = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
        }
        return power;
    }

private:
    static std::mutex& plan_mutex() {
        static std::mutex m;
        return m;
    }
    double* in_;
    fftw_complex* out_;
    fftw_plan plan_;
    std::vector<double> window_;
};

// kFftBins x n_mels triangular filters on the HTK mel scale, 20 Hz..Nyquist.
Matrix mel_filterbank(int n_mels) {
    const double lo = hz_to_mel(20.0);
    const double hi = hz_to_mel(kSampleRate / 2.0);
    const double step = (hi - lo) / (n_mels + 1);
    Matrix fb = Matrix::Zero(kFftBins, n_mels);
    for (int m = 0; m < n_mels; ++m) {
        const double left = lo + m * step;
        const double center = left + step;
        const double right = center + step;
        for (int k = 0; k < kFftBins; ++k) {
            const double mel = hz_to_mel(static_cast<double>(k) * kSampleRate / kFftSize);
            if (mel > left && mel < right)
                fb(k, m) = mel <= center ? (mel - left) / step : (right - mel) / step;
        }
    }
    return fb;
}

void check_waveform(const Waveform& wav) {
    if (wav.sample_rate != kSampleRate) throw ValidationError("sample rate must be 16000 Hz");
    if (wav.size() < static_cast<std::size_t>(kFrameLength))
        throw ValidationError("waveform shorter than one frame");
}

}  // namespace

FeatureSequence log_mel(const Waveform& wav, int n_mels) {
    check_waveform(wav);
    if (n_mels < 1) throw ValidationError("n_mels must be >= 1");
    thread_local PowerSpectrum spectrum;
    thread_local std::map<int, Matrix> banks;
    auto it = banks.find(n_mels);
    if (it == banks.end()) it = banks.emplace(n_mels, mel_filterbank(n_mels)).first;

    FeatureSequence out;
    out.kind = FeatureKind::logmel;
    out.frames = spectrum.compute(wav) * it->second;
    out.frames = (out.frames.array() + kLogFloor).log().matrix();
    return out;
}

Matrix dct_matrix(int n_coeffs, int n_inputs) {
    Matrix d(n_coeffs, n_inputs);
    for (int k = 0; k < n_coeffs; ++k) {
        const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / n_inputs);
        for (int n = 0; n < n_inputs; ++n)
            d(k, n) = scale * std::cos(std::numbers::pi * k * (n + 0.5) / n_inputs);
    }
    return d;
}

Matrix inverse_dct(const Matrix& coeffs, int n_outputs) {
    const Matrix d = dct_matrix(static_cast<int>(coeffs.cols()), n_outputs);
    return coeffs * d;
}

FeatureSequence mfcc(const Waveform& wav, int n_coeffs, int n_mels) {
    if (n_coeffs < 1 || n_coeffs > n_mels) throw ValidationError("n_coeffs must be in [1, n_mels]");
    FeatureSequence mel = log_mel(wav, n_mels);
    FeatureSequence out;
    out.kind = FeatureKind::mfcc;
    out.frames = mel.frames * dct_matrix(n_coeffs, n_mels).transpose();
    return out;
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0)
        throw ValidationError(path + ": not a RIFF/WAVE file");

    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t size = read_u32(b + pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) throw ValidationError(path + ": truncated chunk");
        if (std::memcmp(b + pos, "fmt ", 4) == 0) {
            if (size < 16) throw ValidationError(path + ": short fmt chunk");
            const auto format = read_u16(b + body);
            const auto channels = read_u16(b + body + 2);
            const auto rate = read_u32(b + body + 4);
            const auto bits = read_u16(b + body + 14);
            if (format != 1) throw ValidationError(path + ": only PCM WAV is supported");
            if (channels != 1) throw ValidationError(path + ": only mono WAV is supported");
            if (rate != kSampleRate) throw ValidationError(path + ": sample rate must be 16000 Hz");
            if (bits != 16) throw ValidationError(path + ": only 16-bit samples are supported");
            have_fmt = true;
        } else if (std::memcmp(b + pos, "data", 4) == 0) {
            if (!have_fmt) throw ValidationError(path + ": data chunk before fmt chunk");
            Waveform wav;
            wav.samples.resize(size / 2);
            for (std::size_t i = 0; i < wav.samples.size(); ++i) {
                const auto v = static_cast<std::int16_t>(read_u16(b + body + 2 * i));
                wav.samples[i] = static_cast<float>(v) / 32768.0f;
            }
            return wav;
        }
        pos = body + size + (size & 1);
    }
    throw ValidationError(path + ": no data chunk");
}

void write_wav(const std::string& path, const Waveform& wav) {
    std::string s;
    const auto data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
    s += "RIFF";
    put_u32(s, 36 + data_bytes);
    s += "WAVEfmt ";
    put_u32(s, 16);
    put_u16(s, 1);
    put_u16(s, 1);
    put_u32(s, static_cast<std::uint32_t>(wav.sample_rate));
    put_u32(s, static_cast<std::uint32_t>(wav.sample_rate * 2));
    put_u16(s, 2);
    put_u16(s, 16);
    s += "data";
    put_u32(s, data_bytes);
    for (const float x : wav.samples) {
        const double c = std::clamp(static_cast<double>(x), -1.0, 32767.0 / 32768.0);
        put_u16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace hctc
