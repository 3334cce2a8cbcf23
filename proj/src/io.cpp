#include "bdlab/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bdlab/errors.hpp"

namespace bdlab {

void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) os << (i ? "," : "") << kMetricsColumns[i];
    os << '\n';
    for (const auto& r : rows) {
        os << r.iteration << ',' << format_double(r.fidelity) << ',' << format_double(r.diversity) << ','
           << format_double(r.quality) << ',' << format_double(r.sigma1) << ',' << format_double(r.l_dm) << ','
           << format_double(r.l_r) << '\n';
    }
    return os.str();
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

double parse_value(const std::string& s) {
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        throw ConfigError("metrics CSV: cannot parse value '" + s + "'");
    }
}

}  // namespace

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw ConfigError("metrics CSV: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (split(line) != kMetricsColumns) throw ConfigError("metrics CSV: unexpected header '" + line + "'");
    std::vector<MetricsRow> rows;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != kMetricsColumns.size()) throw ConfigError("metrics CSV: wrong column count");
        MetricsRow r;
        r.iteration = static_cast<std::int64_t>(parse_value(cells[0]));
        r.fidelity = parse_value(cells[1]);
        r.diversity = parse_value(cells[2]);
        r.quality = parse_value(cells[3]);
        r.sigma1 = parse_value(cells[4]);
        r.l_dm = parse_value(cells[5]);
        r.l_r = parse_value(cells[6]);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace bdlab
