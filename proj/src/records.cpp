#include "hctc/records.hpp"
#include "hctc/types.hpp"

#include <charconv>
#include <fstream>
#include <ostream>

namespace hctc {

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> parse_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

void write_records(std::ostream& out, std::span<const RunRecord> records) {
    for (const auto& r : records) {
        out << csv_field(r.config_hash) << ',' << csv_field(r.stage) << ',' << r.step << ',' << csv_field(r.metric)
            << ',' << format_double(r.value) << ',' << format_double(r.wall_ms) << '\n';
    }
}

void append_records(const std::filesystem::path& path, std::span<const RunRecord> records) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw ValidationError("cannot append to " + path.string());
    if (fresh) out << kRecordHeader << '\n';
    write_records(out, records);
}

std::vector<RunRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::vector<RunRecord> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            if (line != kRecordHeader) throw ValidationError(path.string() + ": unexpected header");
            header = false;
            continue;
        }
        if (line.empty()) continue;
        const auto f = parse_csv_line(line);
        if (f.size() != 6) throw ValidationError(path.string() + ": expected 6 fields");
        out.push_back({f[0], f[1], std::stoi(f[2]), f[3], std::stod(f[4]), std::stod(f[5])});
    }
    return out;
}

}  // namespace hctc
