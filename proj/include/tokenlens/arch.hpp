// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "tokenlens/errors.hpp"

namespace tlens {

enum class Precision { Single, Double };

inline const char* precision_name(Precision p) {
    return p == Precision::Single ? "single" : "double";
}

inline Precision precision_from_name(const std::string& s) {
    if (s == "single") return Precision::Single;
    if (s == "double") return Precision::Double;
    throw ConfigError("unknown precision mode: " + s);
}

// Shape of the decoder. All experiment presets and checkpoint headers carry
// exactly these fields.
struct ArchConfig {
    int n_layers = 6;
    int width = 64;
    int n_heads = 4;
    int mlp_width = 128;
    int vocab_size = 16;
    int max_seq_len = 64;
    Precision precision_mode = Precision::Single;
    double norm_epsilon = 1e-5;

    void validate() const {
        if (n_layers < 1 || width < 1 || n_heads < 1 || mlp_width < 1 || vocab_size < 1 ||
            max_seq_len < 1) {
            throw ConfigError("all architecture dimensions must be >= 1");
        }
        if (width % n_heads != 0) {
            throw ConfigError("width must be divisible by n_heads");
        }
        if (!(norm_epsilon > 0)) {
            throw ConfigError("norm_epsilon must be positive");
        }
    }

    int head_dim() const { return width / n_heads; }

    bool operator==(const ArchConfig&) const = default;
};

}  // namespace tlens
