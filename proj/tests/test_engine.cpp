// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "doctest.h"
#include "naive_reference.hpp"
#include "test_util.hpp"
#include "tokenlens/efficiency.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/model.hpp"

using namespace tlens;
using namespace tlens::testing;

TEST_CASE("zero model yields the uniform distribution") {
    const ArchConfig arch = tiny_arch(1, 16, Precision::Double);
    const Model model = Model::init_zero(arch);
    const MultimodalSequence seq = random_sequence(arch, 1, 0, 1, 7);
    const PrefillResult res = model.forward_prefill(seq);
    for (double p : res.probs) CHECK(p == doctest::Approx(1.0 / arch.vocab_size).epsilon(1e-12));
}

TEST_CASE("probabilities sum to one") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 11);
    const MultimodalSequence seq = random_sequence(arch, 5, 2, 3, 3);
    const PrefillResult res = model.forward_prefill(seq);
    double sum = 0;
    for (double p : res.probs) {
        CHECK(p >= 0.0);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("forward matches the straight-line reference") {
    const ArchConfig arch = tiny_arch(4, 16, Precision::Double);
    const Model model = Model::init_random(arch, 5);
    for (uint64_t seed = 0; seed < 4; ++seed) {
        const MultimodalSequence seq = random_sequence(arch, 6, 1, 2, 100 + seed);
        const PrefillResult res = model.forward_prefill(seq);
        const auto oracle = naive_forward(model, seq);
        CHECK(max_abs_diff(res.probs, oracle) < 1e-6);
    }
}

TEST_CASE("forward matches the reference in single precision") {
    const ArchConfig arch = tiny_arch(4, 16, Precision::Single);
    const Model model = Model::init_random(arch, 5);
    const MultimodalSequence seq = random_sequence(arch, 6, 1, 2, 42);
    const PrefillResult res = model.forward_prefill(seq);
    const auto oracle = naive_forward(model, seq);
    CHECK(max_abs_diff(res.probs, oracle) < 1e-4);
}

TEST_CASE("checkpoint-resume identity is bit-exact") {
    for (Precision prec : {Precision::Double, Precision::Single}) {
        const ArchConfig arch = tiny_arch(4, 16, prec);
        const Model model = Model::init_random(arch, 9);
        const MultimodalSequence seq = random_sequence(arch, 5, 1, 2, 17);
        CaptureFlags flags;
        flags.all_checkpoints = true;
        const PrefillResult full = model.forward_prefill(seq, flags);
        for (int i = 0; i <= arch.n_layers; ++i) {
            const PrefillResult resumed =
                model.resume_forward(full.checkpoint_at(i), VisualTreatment::keep_all());
            REQUIRE(resumed.probs.size() == full.probs.size());
            for (size_t j = 0; j < full.probs.size(); ++j)
                CHECK(resumed.probs[j] == full.probs[j]);
        }
    }
}

TEST_CASE("resume at the last boundary ignores visual masking") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 2);
    const MultimodalSequence seq = random_sequence(arch, 4, 1, 2, 23);
    CaptureFlags flags;
    flags.checkpoint_layers = {arch.n_layers};
    const PrefillResult full = model.forward_prefill(seq, flags);
    const auto& last = full.checkpoint_at(arch.n_layers);
    const PrefillResult masked = model.resume_forward(
        last, VisualTreatment::zero_mask(std::vector<uint8_t>(4, 0)));
    for (size_t j = 0; j < full.probs.size(); ++j) CHECK(masked.probs[j] == full.probs[j]);
}

TEST_CASE("all-ones zero mask reproduces keep_all bit-exactly") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 21);
    const MultimodalSequence seq = random_sequence(arch, 5, 1, 2, 4);
    CaptureFlags flags;
    flags.checkpoint_layers = {1};
    const PrefillResult full = model.forward_prefill(seq, flags);
    const auto& cp = full.checkpoint_at(1);
    const PrefillResult kept = model.resume_forward(cp, VisualTreatment::keep_all());
    const PrefillResult ones =
        model.resume_forward(cp, VisualTreatment::zero_mask(std::vector<uint8_t>(5, 1)));
    for (size_t j = 0; j < kept.probs.size(); ++j) CHECK(ones.probs[j] == kept.probs[j]);
}

TEST_CASE("zero-masking matches the reference masking") {
    const ArchConfig arch = tiny_arch(4, 16, Precision::Double);
    const Model model = Model::init_random(arch, 31);
    const MultimodalSequence seq = random_sequence(arch, 6, 1, 2, 8);
    for (int boundary : {0, 2, 4}) {
        CaptureFlags flags;
        flags.checkpoint_layers = {boundary};
        const PrefillResult full = model.forward_prefill(seq, flags);
        std::vector<uint8_t> mask(6, 0);
        mask[3] = 1;
        const PrefillResult res =
            model.resume_forward(full.checkpoint_at(boundary), VisualTreatment::zero_mask(mask));
        NaiveOptions opt;
        opt.mask_boundary = boundary;
        opt.visual_mask = mask;
        CHECK(max_abs_diff(res.probs, naive_forward(model, seq, opt)) < 1e-6);
    }
}

TEST_CASE("drop equals the attention-mask reference") {
    const ArchConfig arch = tiny_arch(4, 16, Precision::Double);
    const Model model = Model::init_random(arch, 77);
    Rng rng = make_rng(99);
    for (int trial = 0; trial < 8; ++trial) {
        const MultimodalSequence seq = random_sequence(arch, 6, 1, 2, 300 + trial);
        const int boundary = static_cast<int>(uniform_below(rng, arch.n_layers));
        std::vector<int> kept, dropped;
        for (int k = 0; k < 6; ++k)
            (uniform_below(rng, 2) ? kept : dropped).push_back(k);
        CaptureFlags flags;
        flags.checkpoint_layers = {boundary};
        const PrefillResult full = model.forward_prefill(seq, flags);
        const PrefillResult res =
            model.resume_forward(full.checkpoint_at(boundary), VisualTreatment::drop(kept));
        NaiveOptions opt;
        opt.mask_out_boundary = boundary;
        opt.masked_out_visual = dropped;
        CHECK(max_abs_diff(res.probs, naive_forward(model, seq, opt)) < 1e-5);
    }
}

TEST_CASE("zero-mask of one token and drop to that token may differ") {
    const ArchConfig arch = tiny_arch(4, 16, Precision::Double);
    const Model model = Model::init_random(arch, 13);
    const MultimodalSequence seq = random_sequence(arch, 6, 1, 2, 60);
    CaptureFlags flags;
    flags.checkpoint_layers = {1};
    const PrefillResult full = model.forward_prefill(seq, flags);
    std::vector<uint8_t> mask(6, 0);
    mask[2] = 1;
    const PrefillResult masked =
        model.resume_forward(full.checkpoint_at(1), VisualTreatment::zero_mask(mask));
    const PrefillResult dropped =
        model.resume_forward(full.checkpoint_at(1), VisualTreatment::drop({2}));
    const double gap = max_abs_diff(masked.probs, dropped.probs);
    MESSAGE("zero-mask vs drop probability gap: ", gap);
    CHECK(gap >= 0.0);  // the two semantics are allowed to disagree
}

TEST_CASE("attention rows are causal and normalized") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 3);
    const MultimodalSequence seq = random_sequence(arch, 4, 1, 2, 15);
    const Mat<double> attn = model.attention_scores(seq, 2);
    REQUIRE(attn.rows == seq.length());
    CHECK(attn.at(0, 0) == 1.0);  // first row: softmax of a single element
    for (int t = 0; t < attn.rows; ++t) {
        double sum = 0;
        for (int u = 0; u < attn.cols; ++u) {
            if (u > t) CHECK(attn.at(t, u) == 0.0);
            sum += attn.at(t, u);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(model.attention_scores(seq, 0), ConfigError);
    CHECK_THROWS_AS(model.attention_scores(seq, arch.n_layers + 1), ConfigError);
}

TEST_CASE("perturbing a later token leaves earlier attention rows unchanged") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 3);
    MultimodalSequence seq = random_sequence(arch, 4, 1, 2, 16);
    const Mat<double> before = model.attention_scores(seq, 2);
    seq.visual.at(3, 0) += 10.0;  // row index 4 in the sequence
    const Mat<double> after = model.attention_scores(seq, 2);
    for (int t = 0; t <= 3; ++t)
        for (int u = 0; u < before.cols; ++u) CHECK(before.at(t, u) == after.at(t, u));
}

TEST_CASE("zero key projection gives uniform last-row attention") {
    const ArchConfig arch = tiny_arch(2, 16, Precision::Double);
    Model model = Model::init_random(arch, 19);
    const auto names = model.tensor_names();
    for (size_t i = 0; i < names.size(); ++i) {
        if (names[i] == "layer0.wk")
            model.set_tensor_data(i, std::vector<double>(model.tensor_data(i).size(), 0.0));
    }
    const MultimodalSequence seq = random_sequence(arch, 4, 1, 2, 33);
    const Mat<double> attn = model.attention_scores(seq, 1);
    const int last = attn.rows - 1;
    for (int u = 0; u < attn.cols; ++u)
        CHECK(attn.at(last, u) == doctest::Approx(1.0 / attn.rows).epsilon(1e-12));
}

TEST_CASE("forward is deterministic") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Single);
    const Model model = Model::init_random(arch, 8);
    const MultimodalSequence seq = random_sequence(arch, 5, 1, 2, 5);
    const PrefillResult a = model.forward_prefill(seq);
    const PrefillResult b = model.forward_prefill(seq);
    for (size_t j = 0; j < a.probs.size(); ++j) CHECK(a.probs[j] == b.probs[j]);
}

TEST_CASE("mac counter equals half the analytic flops") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Single);
    const Model model = Model::init_random(arch, 8);
    const MultimodalSequence seq = random_sequence(arch, 5, 1, 2, 5);
    const PrefillResult res = model.forward_prefill(seq);
    const PruneSchedule empty{"none", {}};
    const CostReport cost = flops_estimate(arch, empty, seq.n_visual(), seq.n_text());
    CHECK(cost.total_flops == 2 * res.mac_count);
}

TEST_CASE("engine error paths") {
    const ArchConfig arch = tiny_arch(2, 16, Precision::Double, 12, 8);
    const Model model = Model::init_random(arch, 8);
    SUBCASE("sequence too long") {
        const MultimodalSequence seq = random_sequence(arch, 8, 1, 2, 5);
        CHECK_THROWS_AS(model.forward_prefill(seq), ConfigError);
    }
    SUBCASE("non-finite activation names the layer") {
        Model bad = model;
        const auto names = bad.tensor_names();
        for (size_t i = 0; i < names.size(); ++i) {
            if (names[i] == "layer1.w_down") {
                auto t = bad.tensor_data(i);
                t[0] = std::numeric_limits<double>::infinity();
                bad.set_tensor_data(i, t);
            }
        }
        const MultimodalSequence seq = random_sequence(arch, 2, 1, 2, 5);
        try {
            bad.forward_prefill(seq);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
        }
    }
    SUBCASE("mask size mismatch") {
        CaptureFlags flags;
        flags.checkpoint_layers = {1};
        const MultimodalSequence seq = random_sequence(arch, 3, 1, 2, 5);
        const PrefillResult full = model.forward_prefill(seq, flags);
        CHECK_THROWS_AS(model.resume_forward(full.checkpoint_at(1),
                                             VisualTreatment::zero_mask({1, 0})),
                        ConfigError);
        CHECK_THROWS_AS(
            model.resume_forward(full.checkpoint_at(1), VisualTreatment::drop({7})),
            ConfigError);
    }
}
