// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/efficiency.hpp"

#include <cmath>
#include <cstdlib>

#include "tokenlens/errors.hpp"

namespace tlens {

uint64_t layer_macs(uint64_t n, uint64_t d, uint64_t m) {
    return 4 * n * d * d + 2 * n * n * d + 3 * n * d * m;
}

uint64_t layer_flops(uint64_t n, uint64_t d, uint64_t m) { return 2 * layer_macs(n, d, m); }

double CostReport::avg_visual_tokens() const {
    if (visual_count_per_layer.empty()) return 0.0;
    double sum = 0;
    for (int v : visual_count_per_layer) sum += v;
    return sum / static_cast<double>(visual_count_per_layer.size());
}

CostReport flops_estimate(const ArchConfig& arch, const PruneSchedule& schedule, int n_visual,
                          int n_text, int bytes_per_element) {
    arch.validate();
    schedule.validate(arch.n_layers);
    if (n_text < 1) throw ConfigError("n_text must be >= 1");
    if (n_visual < 0) throw ConfigError("n_visual must be >= 0");
    if (bytes_per_element < 1) throw ConfigError("bytes_per_element must be >= 1");

    CostReport report;
    report.per_layer_flops.resize(arch.n_layers);
    report.token_count_per_layer.resize(arch.n_layers);
    report.visual_count_per_layer.resize(arch.n_layers);

    int alive = n_visual;
    size_t next = 0;
    for (int layer = 1; layer <= arch.n_layers; ++layer) {
        while (next < schedule.actions.size() && schedule.actions[next].layer == layer - 1) {
            const auto& act = schedule.actions[next];
            alive = act.strategy == Strategy::Withdraw ? 0 : retain_count(act.retain_ratio, alive);
            ++next;
        }
        const int tokens = n_text + alive;
        report.visual_count_per_layer[layer - 1] = alive;
        report.token_count_per_layer[layer - 1] = tokens;
        report.per_layer_flops[layer - 1] =
            layer_flops(static_cast<uint64_t>(tokens), arch.width, arch.mlp_width);
        report.total_flops += report.per_layer_flops[layer - 1];
        report.kv_cache_bytes += 2ull * tokens * arch.width * bytes_per_element;
    }
    return report;
}

int calibrate_text_budget(const ArchConfig& arch, int n_visual, double target_flops) {
    const PruneSchedule empty{"none", {}};
    int best = 1;
    double best_err = std::abs(
        static_cast<double>(flops_estimate(arch, empty, n_visual, 1).total_flops) - target_flops);
    for (int t = 2; t <= 4096; ++t) {
        const double err = std::abs(
            static_cast<double>(flops_estimate(arch, empty, n_visual, t).total_flops) -
            target_flops);
        if (err < best_err) {
            best_err = err;
            best = t;
        }
    }
    return best;
}

}  // namespace tlens
