// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "tokenlens/arch.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/mat.hpp"

namespace tlens {

// One prompt: text prefix, a contiguous block of visual embedding columns,
// then the question tokens, with the ground-truth first answer token.
// Visual embeddings are stored as doubles; the engine casts them to its
// working precision at ingest (task generators only emit exactly
// representable values, so the cast is lossless).
struct MultimodalSequence {
    std::vector<int> prefix_ids;
    Mat<double> visual;  // n_visual x width, one row per visual token
    std::vector<int> question_ids;
    int label = 0;
    std::vector<int> position_ids;  // one per token, strictly increasing

    int n_visual() const { return visual.rows; }
    int n_text() const { return static_cast<int>(prefix_ids.size() + question_ids.size()); }
    int length() const { return n_text() + n_visual(); }

    // Default positions 0..n-1.
    void assign_default_positions() {
        position_ids.resize(length());
        for (int i = 0; i < length(); ++i) position_ids[i] = i;
    }

    void validate(const ArchConfig& arch) const {
        if (visual.rows < 1) throw ConfigError("sequence needs at least one visual token");
        if (visual.cols != arch.width) throw ConfigError("visual embedding width mismatch");
        if (question_ids.empty()) throw ConfigError("sequence needs at least one question token");
        if (length() > arch.max_seq_len) throw ConfigError("sequence exceeds max_seq_len");
        for (int id : prefix_ids)
            if (id < 0 || id >= arch.vocab_size) throw ConfigError("prefix token id out of range");
        for (int id : question_ids)
            if (id < 0 || id >= arch.vocab_size) throw ConfigError("question token id out of range");
        if (label < 0 || label >= arch.vocab_size) throw ConfigError("label out of range");
        if (static_cast<int>(position_ids.size()) != length())
            throw ConfigError("position_ids size mismatch");
        for (size_t i = 1; i < position_ids.size(); ++i)
            if (position_ids[i] <= position_ids[i - 1])
                throw ConfigError("position_ids must be strictly increasing");
        if (!position_ids.empty() &&
            (position_ids.front() < 0 || position_ids.back() >= arch.max_seq_len))
            throw ConfigError("position id out of range");
    }

    uint64_t fingerprint() const;
};

}  // namespace tlens
