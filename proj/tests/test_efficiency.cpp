// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "test_util.hpp"
#include "tokenlens/efficiency.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/presets.hpp"
#include "tokenlens/pruning.hpp"
#include "tokenlens/rng.hpp"

using namespace tlens;
using namespace tlens::testing;

TEST_CASE("hand-computed single layer cost") {
    // n=1, d=2, m=4: 8*1*4 + 4*1*2 + 6*1*2*4 = 88 FLOPs (44 MACs).
    CHECK(layer_macs(1, 2, 4) == 44);
    CHECK(layer_flops(1, 2, 4) == 88);
    ArchConfig a;
    a.n_layers = 1;
    a.width = 2;
    a.n_heads = 1;
    a.mlp_width = 4;
    a.vocab_size = 4;
    a.max_seq_len = 8;
    const CostReport r = flops_estimate(a, PruneSchedule{"none", {}}, 0, 1);
    CHECK(r.total_flops == 88);
    CHECK(r.token_count_per_layer == std::vector<int>{1});
    CHECK(r.kv_cache_bytes == 2ull * 1 * 2 * 2);
}

TEST_CASE("totals decompose exactly into layers") {
    const ArchConfig arch = arch_preset("base");
    const PruneSchedule sched{"s", {{1, Strategy::Random, 0.5, 0}, {3, Strategy::Withdraw, 0.0, 0}}};
    const CostReport r = flops_estimate(arch, sched, 16, 3);
    uint64_t sum = 0;
    for (uint64_t f : r.per_layer_flops) sum += f;
    CHECK(sum == r.total_flops);
    CHECK(r.visual_count_per_layer == std::vector<int>({16, 8, 8, 0, 0, 0}));
}

TEST_CASE("estimator equals twice the engine MAC counter under schedules") {
    Rng rng = make_rng(31337);
    for (int trial = 0; trial < 20; ++trial) {
        const int n_layers = 1 + static_cast<int>(uniform_below(rng, 5));
        const int width = 8 * (1 + static_cast<int>(uniform_below(rng, 3)));
        ArchConfig arch = tiny_arch(n_layers, width, Precision::Single, 12, 64);
        const int nv = 2 + static_cast<int>(uniform_below(rng, 10));
        const int nq = 1 + static_cast<int>(uniform_below(rng, 3));
        const Model model = Model::init_random(arch, 1000 + trial);
        const MultimodalSequence seq = random_sequence(arch, nv, 1, nq, 2000 + trial);

        PruneSchedule sched{"rand", {}};
        int layer = static_cast<int>(uniform_below(rng, 2));
        while (layer <= n_layers && sched.actions.size() < 3) {
            PruneAction a;
            a.layer = layer;
            const int kind = static_cast<int>(uniform_below(rng, 3));
            a.strategy = kind == 0 ? Strategy::Random
                         : kind == 1 ? Strategy::MaxMinDiversity
                                     : Strategy::LowDuplication;
            a.retain_ratio = 0.25 + 0.5 * uniform_double(rng);
            a.seed = rng();
            if (uniform_below(rng, 5) == 0) {
                a.strategy = Strategy::Withdraw;
                a.retain_ratio = 0.0;
            }
            sched.actions.push_back(a);
            layer += 1 + static_cast<int>(uniform_below(rng, 3));
        }
        const ScheduleRunResult run = apply_schedule(model, seq, sched);
        const CostReport cost = flops_estimate(arch, sched, nv, seq.n_text());
        CHECK(cost.total_flops == 2 * run.result.mac_count);
    }
}

TEST_CASE("smaller alive sets cost strictly less") {
    const ArchConfig arch = arch_preset("base");
    const CostReport full = flops_estimate(arch, PruneSchedule{"none", {}}, 16, 4);
    const CostReport half =
        flops_estimate(arch, PruneSchedule{"h", {{2, Strategy::Random, 0.5, 0}}}, 16, 4);
    const CostReport gone =
        flops_estimate(arch, PruneSchedule{"w", {{2, Strategy::Withdraw, 0.0, 0}}}, 16, 4);
    CHECK(half.total_flops < full.total_flops);
    CHECK(gone.total_flops < half.total_flops);
    CHECK(half.kv_cache_bytes < full.kv_cache_bytes);
    CHECK(gone.kv_cache_bytes < half.kv_cache_bytes);
}

TEST_CASE("llava text budget calibration is frozen correctly") {
    const ArchConfig arch = arch_preset("llava-7b");
    CHECK(calibrate_text_budget(arch, kLlavaVisualTokens, kLlavaBaselineFlops) ==
          kLlavaTextBudget);
    const CostReport base = flops_estimate(arch, PruneSchedule{"none", {}}, kLlavaVisualTokens,
                                           kLlavaTextBudget);
    // Report-only comparison: the calibrated unpruned run sits near the
    // 9.22e12 reference.
    CHECK(base.total_tflops() > 9.0);
    CHECK(base.total_tflops() < 9.5);
}

TEST_CASE("dart-random-64 reduction lands in the published band") {
    const ArchConfig arch = arch_preset("llava-7b");
    const CostReport base = flops_estimate(arch, PruneSchedule{"none", {}}, kLlavaVisualTokens,
                                           kLlavaTextBudget);
    const CostReport pruned = flops_estimate(arch, schedule_preset("dart-random-64"),
                                             kLlavaVisualTokens, kLlavaTextBudget);
    const double reduction =
        100.0 * (1.0 - static_cast<double>(pruned.total_flops) / base.total_flops);
    CHECK(reduction > 74.4 - 10.0);
    CHECK(reduction < 74.4 + 10.0);
}

TEST_CASE("estimator input validation") {
    const ArchConfig arch = arch_preset("base");
    CHECK_THROWS_AS(flops_estimate(arch, PruneSchedule{"none", {}}, 16, 0), ConfigError);
    PruneSchedule deep{"d", {{99, Strategy::Random, 0.5, 0}}};
    CHECK_THROWS_AS(flops_estimate(arch, deep, 16, 4), ConfigError);
}
