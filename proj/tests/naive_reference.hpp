// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokenlens/model.hpp"

namespace tlens::testing {

// Straight-line reference forward, written independently of the engine: plain
// double vectors, no checkpointing, no shared kernels. Used as the oracle for
// forward_prefill, zero-masking and drop-vs-attention-mask equivalence.
struct NaiveOptions {
    // Zero the listed visual rows' hidden state at this boundary (after that
    // many layers). Mirrors the metric's masking.
    std::optional<int> mask_boundary;
    std::vector<uint8_t> visual_mask;  // 1 = keep, 0 = zero

    // From boundary `mask_out_boundary` onward, no position may attend to the
    // listed visual rows (score forced to -inf). The rows stay in the
    // sequence. Mirrors dropping via an attention mask.
    std::optional<int> mask_out_boundary;
    std::vector<int> masked_out_visual;  // original visual indices
};

std::vector<double> naive_forward(const Model& model, const MultimodalSequence& seq,
                                  const NaiveOptions& opt = {});

// Reference loss for finite-difference gradient checks.
double naive_loss(const Model& model, const MultimodalSequence& seq);

}  // namespace tlens::testing
