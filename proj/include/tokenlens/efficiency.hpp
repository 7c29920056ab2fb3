// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "tokenlens/arch.hpp"
#include "tokenlens/pruning.hpp"

namespace tlens {

// Analytic prefill cost. One decoder layer over n tokens performs
//   4 n d^2 + 2 n^2 d + 3 n d m   multiply-accumulates
// (q/k/v/out projections, attention scores and mixing, gated 3-matrix MLP),
// counted at 2 FLOPs per MAC. The engine's MAC counter tallies exactly the
// same matmuls, so estimator totals equal 2x the instrumented count.
uint64_t layer_macs(uint64_t n_tokens, uint64_t width, uint64_t mlp_width);
uint64_t layer_flops(uint64_t n_tokens, uint64_t width, uint64_t mlp_width);

struct CostReport {
    uint64_t total_flops = 0;
    std::vector<uint64_t> per_layer_flops;   // length L
    uint64_t kv_cache_bytes = 0;
    std::vector<int> token_count_per_layer;  // text + alive visual, length L
    std::vector<int> visual_count_per_layer; // alive visual only, length L

    double total_tflops() const { return static_cast<double>(total_flops) / 1e12; }
    double storage_mib() const { return static_cast<double>(kv_cache_bytes) / (1024.0 * 1024.0); }
    double avg_visual_tokens() const;
};

// Token counts follow the schedule's alive sets: an action at boundary b
// takes effect from decoder layer b+1 onward, with round-half-up retention.
// kv_cache_bytes counts keys+values only: sum over layers of
// 2 * n_tokens * width * bytes_per_element.
CostReport flops_estimate(const ArchConfig& arch, const PruneSchedule& schedule, int n_visual,
                          int n_text, int bytes_per_element = 2);

// Smallest text budget whose unpruned estimate is closest to target_flops.
int calibrate_text_budget(const ArchConfig& arch, int n_visual, double target_flops);

// Reference unpruned prefill cost for the llava-7b preset at 576 visual
// tokens; kLlavaTextBudget is frozen from calibrate_text_budget against it.
constexpr double kLlavaBaselineFlops = 9.22e12;
constexpr int kLlavaTextBudget = 116;
constexpr int kLlavaVisualTokens = 576;

}  // namespace tlens
