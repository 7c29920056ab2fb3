// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/tasks.hpp"

using namespace tlens;
using namespace tlens::testing;

TEST_CASE("generation is deterministic per seed") {
    TaskSpec spec;
    spec.kind = TaskKind::Lookup;
    spec.n_samples = 50;
    spec.seed = 123;
    const Dataset a = gen_task(spec);
    const Dataset b = gen_task(spec);
    REQUIRE(a.samples.size() == 50);
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].grid == b.samples[i].grid);
        CHECK(a.samples[i].q_row == b.samples[i].q_row);
        CHECK(a.samples[i].label == b.samples[i].label);
    }
    spec.seed = 124;
    const Dataset c = gen_task(spec);
    bool any_diff = false;
    for (size_t i = 0; i < a.samples.size(); ++i)
        if (a.samples[i].grid != c.samples[i].grid) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("lookup labels read the queried cell") {
    TaskSpec spec;
    spec.kind = TaskKind::Lookup;
    spec.n_samples = 200;
    spec.seed = 5;
    const Dataset ds = gen_task(spec);
    for (const auto& s : ds.samples)
        CHECK(s.label == s.grid[s.q_row * spec.grid_side + s.q_col]);
}

TEST_CASE("majority labels match an independent counting oracle") {
    TaskSpec spec;
    spec.kind = TaskKind::Majority;
    spec.n_samples = 1000;
    spec.seed = 6;
    const Dataset ds = gen_task(spec);
    for (const auto& s : ds.samples) {
        std::vector<int> counts(spec.n_colors, 0);
        for (uint8_t c : s.grid) ++counts[c];
        int best = 0;
        for (int c = 1; c < spec.n_colors; ++c)
            if (counts[c] > counts[best]) best = c;
        CHECK(s.label == best);
        // Ties are avoided by construction.
        for (int c = 0; c < spec.n_colors; ++c)
            if (c != best) CHECK(counts[c] < counts[best]);
        CHECK(s.q_row == -1);
    }
}

TEST_CASE("grid side one collapses lookup and majority") {
    TaskSpec spec;
    spec.grid_side = 1;
    spec.n_samples = 20;
    spec.seed = 9;
    spec.kind = TaskKind::Lookup;
    const Dataset lu = gen_task(spec);
    for (const auto& s : lu.samples) CHECK(s.label == s.grid[0]);
    spec.kind = TaskKind::Majority;
    const Dataset mj = gen_task(spec);
    for (const auto& s : mj.samples) CHECK(s.label == s.grid[0]);
}

TEST_CASE("lookup answers are approximately uniform over colors") {
    TaskSpec spec;
    spec.kind = TaskKind::Lookup;
    spec.n_samples = 10000;
    spec.seed = 7;
    const Dataset ds = gen_task(spec);
    std::vector<int> counts(spec.n_colors, 0);
    for (const auto& s : ds.samples) ++counts[s.label];
    // Chi-squared against uniform; 3 dof, alpha=0.01 threshold 11.34.
    const double expected = static_cast<double>(spec.n_samples) / spec.n_colors;
    double chi2 = 0;
    for (int c = 0; c < spec.n_colors; ++c) {
        const double d = counts[c] - expected;
        chi2 += d * d / expected;
    }
    CHECK(chi2 < 11.34);
}

TEST_CASE("train/eval split shares no sample") {
    TaskSpec spec;
    spec.kind = TaskKind::Lookup;
    spec.grid_side = 2;  // small space to force collisions
    spec.n_colors = 2;
    spec.n_samples = 30;
    spec.seed = 17;
    const auto [train, eval] = gen_task_split(spec, 10);
    auto key = [&](const GridSample& s) {
        std::string k(s.grid.begin(), s.grid.end());
        k += static_cast<char>(s.q_row + 1);
        k += static_cast<char>(s.q_col + 1);
        return k;
    };
    std::set<std::string> train_keys;
    for (const auto& s : train.samples) train_keys.insert(key(s));
    for (const auto& s : eval.samples) CHECK(train_keys.count(key(s)) == 0);
}

TEST_CASE("sequence encoding is the documented one-hot layout") {
    TaskSpec spec;
    spec.kind = TaskKind::Lookup;
    spec.n_samples = 3;
    spec.seed = 20;
    const Dataset ds = gen_task(spec);
    const int width = 64;
    const MultimodalSequence seq = to_sequence(ds.samples[0], spec, width);
    seq.validate(tiny_arch(2, width, Precision::Single, 16, 64));
    CHECK(seq.n_visual() == 16);
    CHECK(seq.prefix_ids.size() == 1);
    CHECK(seq.question_ids.size() == 2);
    const TaskVocab vocab{spec.grid_side, spec.n_colors};
    CHECK(seq.prefix_ids[0] == vocab.bos_token());
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const int cell = r * 4 + c;
            const double* row = seq.visual.row(cell);
            CHECK(row[r] == 1.0);
            CHECK(row[4 + c] == 1.0);
            CHECK(row[8 + ds.samples[0].grid[cell]] == 1.0);
            double sum = 0;
            for (int i = 0; i < width; ++i) sum += row[i];
            CHECK(sum == 3.0);
        }
    CHECK_THROWS_AS(to_sequence(ds.samples[0], spec, 8), ConfigError);
}

TEST_CASE("dataset files round-trip") {
    TaskSpec spec;
    spec.kind = TaskKind::Majority;
    spec.n_samples = 25;
    spec.seed = 33;
    const Dataset ds = gen_task(spec);
    const std::string path =
        (std::filesystem::temp_directory_path() / "tokenlens_ds_test.bin").string();
    save_dataset(ds, path);
    const Dataset back = load_dataset(path);
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.spec.kind == ds.spec.kind);
    CHECK(back.spec.seed == ds.spec.seed);
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].grid == ds.samples[i].grid);
        CHECK(back.samples[i].q_row == ds.samples[i].q_row);
        CHECK(back.samples[i].label == ds.samples[i].label);
    }
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_dataset(path), IoError);
}
