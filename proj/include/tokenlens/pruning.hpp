// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tokenlens/mat.hpp"
#include "tokenlens/model.hpp"

namespace tlens {

enum class Strategy { Random, AttentionTopK, MaxMinDiversity, LowDuplication, Withdraw };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

// One pruning step: at layer boundary `layer` (0 = before decoder layer 1),
// keep round(retain_ratio * |alive|) of the currently alive visual tokens.
struct PruneAction {
    int layer = 0;
    Strategy strategy = Strategy::Random;
    double retain_ratio = 1.0;
    uint64_t seed = 0;
};

struct PruneSchedule {
    std::string name;
    std::vector<PruneAction> actions;

    // Layers strictly increasing, ratios in [0,1], Withdraw implies ratio 0.
    // When n_layers >= 0, also checks layer <= n_layers.
    void validate(int n_layers = -1) const;

    std::string to_text() const;
    static PruneSchedule from_text(const std::string& text);
    static PruneSchedule load(const std::string& path);
};

// round(ratio * alive) with halves rounded up.
int retain_count(double retain_ratio, int alive_count);

// All selectors take the alive set as sorted original indices and return a
// sorted kept subset of exactly retain_count(ratio, |alive|) indices.
// Ties everywhere break toward the smaller original index.

std::vector<int> select_random(const std::vector<int>& alive, double retain_ratio,
                               uint64_t seed);

// attn_to_alive[j] is the head-averaged attention of the final text position
// to alive[j]; highest attention survives.
std::vector<int> select_attention_topk(const std::vector<double>& attn_to_alive,
                                       const std::vector<int>& alive, double retain_ratio);

// Greedy farthest-first under cosine distance, seeded with the most distant
// pair. features row j is alive[j]'s column at the action layer. Zero-norm
// rows get distance 0 to everything; their count is reported via
// zero_norm_warnings if given.
std::vector<int> select_maxmin_diversity(const Mat<double>& features,
                                         const std::vector<int>& alive, double retain_ratio,
                                         int* zero_norm_warnings = nullptr);

// Pivot-based redundancy scoring: min(8, |alive|) seeded pivot tokens are
// always kept, the rest ranked by their max cosine similarity to any pivot
// (lowest duplication first).
std::vector<int> select_low_duplication(const Mat<double>& features,
                                        const std::vector<int>& alive, double retain_ratio,
                                        uint64_t seed);

struct ScheduleRunResult {
    PrefillResult result;
    // Post-action alive set at each boundary 0..L; the set entering decoder
    // layer j is alive_after_boundary[j-1].
    std::vector<std::vector<int>> alive_after_boundary;
    // One entry per schedule action, in order.
    std::vector<int> retained_counts;
    int zero_norm_warnings = 0;
};

// Runs the forward, applying each action at its boundary with drop
// semantics. Strategies that need attention read the head-averaged scores of
// the action's decoder layer from this same (already pruned) forward.
ScheduleRunResult apply_schedule(const Model& model, const MultimodalSequence& seq,
                                 const PruneSchedule& schedule);

}  // namespace tlens
