#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hctc {

// One measurement. Append-only; one CSV row each.
struct RunRecord {
    std::string config_hash;
    std::string stage;
    int step = 0;
    std::string metric;
    double value = 0.0;
    double wall_ms = 0.0;
};

inline constexpr std::string_view kRecordHeader = "config_hash,stage,step,metric,value,wall_ms";

// RFC 4180 field quoting.
std::string csv_field(std::string_view s);
std::vector<std::string> parse_csv_line(std::string_view line);

// Full precision so values survive a text round trip.
std::string format_double(double v);

void write_records(std::ostream& out, std::span<const RunRecord> records);
// Appends rows, writing the header first when the file is new or empty.
void append_records(const std::filesystem::path& path, std::span<const RunRecord> records);
std::vector<RunRecord> read_records(const std::filesystem::path& path);

}  // namespace hctc
