// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tokenlens/mat.hpp"
#include "tokenlens/model.hpp"

namespace tlens {

// values[i][k]: probability the model assigns the ground-truth first answer
// token when visual token k is the only one kept at boundary i, minus the
// text-only probability at the same boundary. Row L is identically zero.
struct InformationProfile {
    Mat<double> values;                 // (L+1) x N_v
    std::vector<double> text_baseline;  // length L+1
    int label = 0;
    uint64_t sequence_fingerprint = 0;

    int n_layers() const { return values.rows - 1; }
    int n_visual() const { return values.cols; }
};

// Probability of the label when every visual hidden column is zeroed at
// boundary `layer` and the remaining layers run on text alone.
double text_only_prob(const Model& model, const MultimodalSequence& seq, int layer);

// Single-token information: zero-mask everything except token k (0-based) at
// boundary `layer`, read the label probability, subtract the text baseline.
double token_information(const Model& model, const MultimodalSequence& seq, int layer,
                         int token);

// Full (L+1) x N_v profile from one checkpointed forward; each layer's text
// baseline is computed once and shared across that row.
InformationProfile information_profile(const Model& model, const MultimodalSequence& seq);

struct LayerStats {
    double mean = 0.0;
    double variance = 0.0;  // population variance across the N_v tokens
};

std::vector<LayerStats> profile_stats(const InformationProfile& profile);

// Smallest boundary i such that |mean| <= tau and variance <= tau^2 hold at
// every boundary from i through L (so the condition persists to the end);
// nullopt when no boundary qualifies. persistence (>= 1) is the minimum
// window re-checked explicitly and is subsumed by the through-L sweep.
std::optional<int> detect_horizon(const std::vector<LayerStats>& stats, double tau,
                                  int persistence);

constexpr double kDefaultHorizonTau = 1e-3;
constexpr int kDefaultHorizonPersistence = 2;

// Sum of profile values over `kept` at the given boundary. Signed by
// default; clamp_negative treats negative information as zero.
double retained_information(const InformationProfile& profile, int layer,
                            const std::vector<int>& kept, bool clamp_negative = false);

}  // namespace tlens
