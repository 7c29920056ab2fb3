// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tlens {

// Shortest round-trip decimal form (std::to_chars). Every CSV, SVG and
// manifest number goes through here so repeated runs emit identical bytes.
std::string format_double(double v);
std::string format_int(long long v);

// Minimal CSV assembly: rows of already formatted cells, '\n' line ends.
class CsvBuilder {
public:
    explicit CsvBuilder(std::vector<std::string> header);
    void comment(const std::string& text);  // "# text" line before the header
    void row(std::vector<std::string> cells);
    std::string str() const;

private:
    std::vector<std::string> comments_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace tlens
