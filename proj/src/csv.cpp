// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "tokenlens/errors.hpp"

namespace tlens {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string format_int(long long v) {
    char buf[24];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

CsvBuilder::CsvBuilder(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvBuilder::comment(const std::string& text) { comments_.push_back("# " + text); }

void CsvBuilder::row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }

std::string CsvBuilder::str() const {
    std::ostringstream out;
    for (const auto& c : comments_) out << c << '\n';
    for (size_t i = 0; i < header_.size(); ++i) out << (i ? "," : "") << header_[i];
    out << '\n';
    for (const auto& r : rows_) {
        for (size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
        out << '\n';
    }
    return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

}  // namespace tlens
