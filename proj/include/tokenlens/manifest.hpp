// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace tlens {

// Written to the output directory before any experiment output; every CSV and
// SVG emitted afterwards carries a comment line naming it. Re-running a
// command with the same manifest reproduces the outputs byte for byte.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> fields;  // config, seeds, hashes...

    void add(const std::string& key, const std::string& value);
    std::string to_text() const;
    // Writes <outdir>/manifest.txt and returns its id (content hash).
    std::string write(const std::string& outdir) const;
    std::string id() const;
};

constexpr const char* kToolVersion = "0.1.0";

}  // namespace tlens
