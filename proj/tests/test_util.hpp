// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "tokenlens/arch.hpp"
#include "tokenlens/model.hpp"
#include "tokenlens/rng.hpp"

namespace tlens::testing {

// Small arch for fast unit tests; heads divide width, mlp 2x width.
ArchConfig tiny_arch(int n_layers, int width, Precision prec, int vocab = 12,
                     int max_seq = 32);

// Random sequence with gaussian visual embeddings and random token ids.
MultimodalSequence random_sequence(const ArchConfig& arch, int n_visual, int n_prefix,
                                   int n_question, uint64_t seed);

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tlens::testing
