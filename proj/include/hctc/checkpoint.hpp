#pragma once

#include "hctc/encoder.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace hctc {

// Versioned binary container: string metadata plus named float64 arrays.
//
//   magic   "HCTCCKPT"
//   u32     version (1)
//   u32     metadata count, then (string key, string value) pairs
//   u32     array count, then (string name, u64 rows, u64 cols, rows*cols f64) entries
//
// Strings are u32 length + bytes, integers and doubles little-endian, arrays row-major.
// Round trips are bit-exact.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::map<std::string, Matrix> arrays;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Encoder arrays under "encoder.", feature statistics under "buffer.", config in meta.
void store_encoder(Checkpoint& ckpt, const EncoderModel& model);
EncoderModel load_encoder(const Checkpoint& ckpt);

// Arrays stored under "<prefix>" + name.
void store_params(Checkpoint& ckpt, const std::string& prefix, const ParameterSet& params);
ParameterSet load_params(const Checkpoint& ckpt, const std::string& prefix);

std::uint64_t checkpoint_digest(const Checkpoint& ckpt);

}  // namespace hctc
