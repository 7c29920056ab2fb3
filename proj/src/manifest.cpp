// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/manifest.hpp"

#include <filesystem>
#include <sstream>

#include "tokenlens/csv.hpp"
#include "tokenlens/hash.hpp"

namespace tlens {

void RunManifest::add(const std::string& key, const std::string& value) {
    fields.emplace_back(key, value);
}

std::string RunManifest::to_text() const {
    std::ostringstream out;
    out << "command=" << command << "\n";
    out << "tool_version=" << kToolVersion << "\n";
    for (const auto& [k, v] : fields) out << k << "=" << v << "\n";
    return out.str();
}

std::string RunManifest::id() const {
    const std::string text = to_text();
    std::ostringstream out;
    out << std::hex << fnv1a64(text.data(), text.size());
    return out.str();
}

std::string RunManifest::write(const std::string& outdir) const {
    std::filesystem::create_directories(outdir);
    write_text_file(outdir + "/manifest.txt", to_text());
    return id();
}

}  // namespace tlens
