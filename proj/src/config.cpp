#include "hctc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace hctc {

std::string to_string(PretrainMethod m) {
    switch (m) {
    case PretrainMethod::scratch:
        return "scratch";
    case PretrainMethod::hubert_ctc:
        return "hubert-ctc";
    case PretrainMethod::mfcc_kmeans:
        return "mfcc-kmeans";
    case PretrainMethod::bestrq:
        return "bestrq";
    }
    return "?";
}

PretrainMethod parse_method(const std::string& text) {
    if (text == "scratch" || text == "none") return PretrainMethod::scratch;
    if (text == "hubert-ctc") return PretrainMethod::hubert_ctc;
    if (text == "mfcc-kmeans") return PretrainMethod::mfcc_kmeans;
    if (text == "bestrq") return PretrainMethod::bestrq;
    throw ValidationError("unknown pretraining method '" + text + "'");
}

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;
    c.synth.n_utts = 400;
    c.synth.silence_mix = 0.2;
    c.model.input_dim = c.data.n_mels;
    c.model.n_layers = 3;
    c.model.d_model = 32;
    c.model.n_heads = 4;
    c.pretrain.steps = 400;
    c.pretrain.batch_utts = 8;
    c.pretrain.eval_interval = 50;
    c.pretrain.opt.lr = 3e-3;
    c.finetune.steps = 300;
    c.finetune.eval_interval = 25;
    c.finetune.opt.lr = 3e-3;
    return c;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ValidationError("config key '" + key + "': cannot parse '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ValidationError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + fmt(xs[i]);
    return out;
}

struct Field {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

using Registry = std::map<std::string, Field>;

template <typename M>
void add_int(Registry& r, const std::string& key, M member) {
    r[key] = {[member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
              [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_number<int>(key, v); }};
}

template <typename M>
void add_u64(Registry& r, const std::string& key, M member) {
    r[key] = {[member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
              [member, key](ExperimentConfig& c, const std::string& v) {
                  member(c) = parse_number<std::uint64_t>(key, v);
              }};
}

template <typename M>
void add_double(Registry& r, const std::string& key, M member) {
    r[key] = {[member](const ExperimentConfig& c) { return format_double(member(const_cast<ExperimentConfig&>(c))); },
              [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_number<double>(key, v); }};
}

template <typename M>
void add_bool(Registry& r, const std::string& key, M member) {
    r[key] = {[member](const ExperimentConfig& c) {
                  return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
              },
              [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

template <typename M>
void add_string(Registry& r, const std::string& key, M member) {
    r[key] = {[member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); },
              [member](ExperimentConfig& c, const std::string& v) { member(c) = v; }};
}

void add_chunk(Registry& r, const std::string& key, ChunkSpec& (*member)(ExperimentConfig&)) {
    r[key] = {[member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)).to_string(); },
              [member](ExperimentConfig& c, const std::string& v) { member(c) = ChunkSpec::parse(v); }};
}

#define MEMBER(expr) [](ExperimentConfig & c) -> auto& { return expr; }

const Registry& registry() {
    static const Registry reg = [] {
        Registry r;
        add_u64(r, "seed", MEMBER(c.seed));
        add_string(r, "out", MEMBER(c.out));
        r["method"] = {[](const ExperimentConfig& c) { return to_string(c.method); },
                       [](ExperimentConfig& c, const std::string& v) { c.method = parse_method(v); }};

        add_int(r, "synth.n_utts", MEMBER(c.synth.n_utts));
        add_int(r, "synth.min_len_phones", MEMBER(c.synth.min_len_phones));
        add_int(r, "synth.max_len_phones", MEMBER(c.synth.max_len_phones));
        add_double(r, "synth.silence_mix", MEMBER(c.synth.silence_mix));
        add_u64(r, "synth.seed", MEMBER(c.synth.seed));
        add_int(r, "synth.vocab_size", MEMBER(c.synth.vocab_size));
        add_double(r, "synth.min_phone_ms", MEMBER(c.synth.min_phone_ms));
        add_double(r, "synth.max_phone_ms", MEMBER(c.synth.max_phone_ms));
        add_double(r, "synth.max_noise_amp", MEMBER(c.synth.max_noise_amp));
        add_double(r, "synth.pitch_jitter", MEMBER(c.synth.pitch_jitter));
        add_double(r, "synth.min_silence_ms", MEMBER(c.synth.min_silence_ms));
        add_double(r, "synth.max_silence_ms", MEMBER(c.synth.max_silence_ms));
        add_double(r, "synth.phonotactic_bias", MEMBER(c.synth.phonotactic_bias));

        add_int(r, "data.n_test", MEMBER(c.data.n_test));
        add_int(r, "data.n_dev", MEMBER(c.data.n_dev));
        add_int(r, "data.n_mels", MEMBER(c.data.n_mels));
        add_int(r, "data.pretrain_utts", MEMBER(c.data.pretrain_utts));

        add_bool(r, "filter.enabled", MEMBER(c.data.filter_enabled));
        add_double(r, "filter.chunk_seconds", MEMBER(c.filter.chunk_seconds));
        add_double(r, "filter.threshold", MEMBER(c.filter.threshold_ratio));
        add_double(r, "filter.vad_db", MEMBER(c.filter.vad_db));

        add_int(r, "model.n_layers", MEMBER(c.model.n_layers));
        add_int(r, "model.d_model", MEMBER(c.model.d_model));
        add_int(r, "model.n_heads", MEMBER(c.model.n_heads));
        add_int(r, "model.conv_kernel", MEMBER(c.model.conv_kernel));
        add_int(r, "model.ff_mult", MEMBER(c.model.ff_mult));
        r["model.conv_mode"] = {[](const ExperimentConfig& c) { return to_string(c.model.conv_mode); },
                                [](ExperimentConfig& c, const std::string& v) { c.model.conv_mode = parse_conv_mode(v); }};

        add_int(r, "teacher.steps", MEMBER(c.teacher.steps));
        add_int(r, "teacher.batch_utts", MEMBER(c.teacher.batch_utts));
        add_double(r, "teacher.lr", MEMBER(c.teacher.lr));

        add_int(r, "targets.k", MEMBER(c.targets.k));
        add_int(r, "targets.layer", MEMBER(c.targets.layer));
        add_int(r, "targets.projection_dim", MEMBER(c.targets.projection_dim));
        add_int(r, "targets.max_iters", MEMBER(c.targets.max_iters));

        add_int(r, "pretrain.steps", MEMBER(c.pretrain.steps));
        add_int(r, "pretrain.batch_utts", MEMBER(c.pretrain.batch_utts));
        add_double(r, "pretrain.lr", MEMBER(c.pretrain.opt.lr));
        add_int(r, "pretrain.warmup", MEMBER(c.pretrain.opt.warmup_steps));
        add_double(r, "pretrain.weight_decay", MEMBER(c.pretrain.opt.weight_decay));
        add_int(r, "pretrain.span_len", MEMBER(c.pretrain.span_len));
        add_double(r, "pretrain.start_prob", MEMBER(c.pretrain.start_prob));
        add_double(r, "pretrain.unmasked_weight", MEMBER(c.pretrain.unmasked_weight));
        add_chunk(r, "pretrain.chunk", MEMBER(c.pretrain.chunk));
        add_int(r, "pretrain.eval_interval", MEMBER(c.pretrain.eval_interval));

        add_int(r, "finetune.steps", MEMBER(c.finetune.steps));
        add_int(r, "finetune.batch_utts", MEMBER(c.finetune.batch_utts));
        add_double(r, "finetune.lr", MEMBER(c.finetune.opt.lr));
        add_int(r, "finetune.warmup", MEMBER(c.finetune.opt.warmup_steps));
        add_double(r, "finetune.weight_decay", MEMBER(c.finetune.opt.weight_decay));
        add_double(r, "finetune.fraction", MEMBER(c.finetune.fraction));
        add_chunk(r, "finetune.chunk", MEMBER(c.finetune.chunk));
        r["finetune.conv_mode"] = {
            [](const ExperimentConfig& c) {
                return c.finetune.conv_mode ? to_string(*c.finetune.conv_mode) : std::string("inherit");
            },
            [](ExperimentConfig& c, const std::string& v) {
                if (v == "inherit")
                    c.finetune.conv_mode.reset();
                else
                    c.finetune.conv_mode = parse_conv_mode(v);
            }};
        add_int(r, "finetune.eval_interval", MEMBER(c.finetune.eval_interval));
        add_int(r, "finetune.average_last", MEMBER(c.finetune.average_last));
        add_int(r, "finetune.patience", MEMBER(c.finetune.patience));
        add_int(r, "finetune.freeze_steps", MEMBER(c.finetune.freeze_steps));
        r["finetune.early_stopping"] = {
            [](const ExperimentConfig& c) {
                if (!c.finetune.early_stopping) return std::string("auto");
                return std::string(*c.finetune.early_stopping ? "true" : "false");
            },
            [](ExperimentConfig& c, const std::string& v) {
                if (v == "auto")
                    c.finetune.early_stopping.reset();
                else
                    c.finetune.early_stopping = parse_bool("finetune.early_stopping", v);
            }};

        add_int(r, "probe.steps", MEMBER(c.probe.steps));
        add_int(r, "probe.batch_utts", MEMBER(c.probe.batch_utts));
        add_double(r, "probe.lr", MEMBER(c.probe.lr));

        r["grid.methods"] = {
            [](const ExperimentConfig& c) {
                return join(c.grid.methods, [](PretrainMethod m) { return to_string(m); });
            },
            [](ExperimentConfig& c, const std::string& v) {
                c.grid.methods.clear();
                for (const auto& s : split_list(v)) c.grid.methods.push_back(parse_method(s));
            }};
        r["grid.fractions"] = {[](const ExperimentConfig& c) { return join(c.grid.fractions, format_double); },
                               [](ExperimentConfig& c, const std::string& v) {
                                   c.grid.fractions.clear();
                                   for (const auto& s : split_list(v))
                                       c.grid.fractions.push_back(parse_number<double>("grid.fractions", s));
                               }};
        auto string_list = [&r](const std::string& key, std::vector<std::string>& (*member)(ExperimentConfig&),
                                void (*check)(const std::string&)) {
            r[key] = {[member](const ExperimentConfig& c) {
                          return join(member(const_cast<ExperimentConfig&>(c)), [](const std::string& s) { return s; });
                      },
                      [member, check](ExperimentConfig& c, const std::string& v) {
                          auto items = split_list(v);
                          for (const auto& s : items) check(s);
                          member(c) = std::move(items);
                      }};
        };
        string_list("grid.pretrain_chunks", MEMBER(c.grid.pretrain_chunks),
                    [](const std::string& s) { ChunkSpec::parse(s); });
        string_list("grid.finetune_chunks", MEMBER(c.grid.finetune_chunks),
                    [](const std::string& s) { ChunkSpec::parse(s); });
        string_list("grid.conv_modes", MEMBER(c.grid.conv_modes), [](const std::string& s) { parse_conv_mode(s); });
        auto int_list = [&r](const std::string& key, std::vector<int>& (*member)(ExperimentConfig&)) {
            r[key] = {[member](const ExperimentConfig& c) {
                          return join(member(const_cast<ExperimentConfig&>(c)), [](int i) { return std::to_string(i); });
                      },
                      [member, key](ExperimentConfig& c, const std::string& v) {
                          member(c).clear();
                          for (const auto& s : split_list(v)) member(c).push_back(parse_number<int>(key, s));
                      }};
        };
        int_list("grid.d_models", MEMBER(c.grid.d_models));
        int_list("grid.pretrain_steps", MEMBER(c.grid.pretrain_steps));
        int_list("grid.pretrain_utts", MEMBER(c.grid.pretrain_utts));
        r["grid.seeds"] = {[](const ExperimentConfig& c) {
                               return join(c.grid.seeds, [](std::uint64_t s) { return std::to_string(s); });
                           },
                           [](ExperimentConfig& c, const std::string& v) {
                               c.grid.seeds.clear();
                               for (const auto& s : split_list(v))
                                   c.grid.seeds.push_back(parse_number<std::uint64_t>("grid.seeds", s));
                           }};
        r["grid.pivot"] = {[](const ExperimentConfig& c) { return c.grid.pivot; },
                           [](ExperimentConfig& c, const std::string& v) {
                               if (v != "fraction" && v != "finetune_chunk")
                                   throw ValidationError("grid.pivot must be 'fraction' or 'finetune_chunk'");
                               c.grid.pivot = v;
                           }};
        return r;
    }();
    return reg;
}

#undef MEMBER

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const auto& reg = registry();
    const auto it = reg.find(key);
    if (it == reg.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second.set(cfg, value);
    // Derived settings that must stay consistent.
    cfg.model.input_dim = cfg.data.n_mels;
    cfg.finetune.vocab_size = cfg.synth.vocab_size;
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
    const auto& reg = registry();
    const auto it = reg.find(key);
    if (it == reg.end()) throw ValidationError("unknown config key '" + key + "'");
    return it->second.get(cfg);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : registry()) keys.push_back(k);
    return keys;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        try {
            set_config_value(base, key, value);
        } catch (const ValidationError& e) {
            throw ValidationError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    base.model.validate();
    base.pretrain.validate();
    return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : registry()) out += key + " = " + field.get(cfg) + "\n";
    return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
    Fnv1a h;
    for (const auto& [key, field] : registry()) {
        if (key == "out") continue;
        h.update_string(key);
        h.update_string(field.get(cfg));
    }
    return hex_digest(h.digest());
}

std::string config_hash(const ExperimentConfig& cfg, const std::vector<std::string>& prefixes) {
    Fnv1a h;
    for (const auto& [key, field] : registry()) {
        const bool hit = std::any_of(prefixes.begin(), prefixes.end(),
                                     [&](const std::string& p) { return key.starts_with(p); });
        if (!hit) continue;
        h.update_string(key);
        h.update_string(field.get(cfg));
    }
    return hex_digest(h.digest());
}

}  // namespace hctc
