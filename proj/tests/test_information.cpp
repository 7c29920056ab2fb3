// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "naive_reference.hpp"
#include "test_util.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/information.hpp"

using namespace tlens;
using namespace tlens::testing;

TEST_CASE("text-only probability at the last boundary equals the full forward") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 6);
    const MultimodalSequence seq = random_sequence(arch, 4, 1, 2, 10);
    const PrefillResult full = model.forward_prefill(seq);
    CHECK(text_only_prob(model, seq, arch.n_layers) ==
          doctest::Approx(full.probs[seq.label]).epsilon(1e-12));
}

TEST_CASE("zero unembedding makes every layer's text baseline uniform") {
    const ArchConfig arch = tiny_arch(2, 16, Precision::Double);
    Model model = Model::init_random(arch, 6);
    const auto names = model.tensor_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == "unembed")
            model.set_tensor_data(i, std::vector<double>(model.tensor_data(i).size(), 0.0));
    const MultimodalSequence seq = random_sequence(arch, 3, 1, 2, 11);
    for (int i = 0; i <= arch.n_layers; ++i)
        CHECK(text_only_prob(model, seq, i) ==
              doctest::Approx(1.0 / arch.vocab_size).epsilon(1e-12));
}

TEST_CASE("text-only probability matches a from-scratch masked forward") {
    const ArchConfig arch = tiny_arch(4, 16, Precision::Double);
    const Model model = Model::init_random(arch, 16);
    const MultimodalSequence seq = random_sequence(arch, 5, 1, 2, 12);
    for (int i = 0; i <= arch.n_layers; ++i) {
        NaiveOptions opt;
        opt.mask_boundary = i;
        opt.visual_mask.assign(5, 0);
        const auto oracle = naive_forward(model, seq, opt);
        CHECK(text_only_prob(model, seq, i) == doctest::Approx(oracle[seq.label]).epsilon(1e-9));
    }
}

TEST_CASE("token information equals the naive two-forward computation") {
    const ArchConfig arch = tiny_arch(4, 16, Precision::Double);
    const Model model = Model::init_random(arch, 21);
    const MultimodalSequence seq = random_sequence(arch, 5, 1, 2, 13);
    for (int i = 0; i <= arch.n_layers; ++i) {
        for (int k : {0, 2, 4}) {
            NaiveOptions keep_k;
            keep_k.mask_boundary = i;
            keep_k.visual_mask.assign(5, 0);
            keep_k.visual_mask[k] = 1;
            NaiveOptions none;
            none.mask_boundary = i;
            none.visual_mask.assign(5, 0);
            const double oracle = naive_forward(model, seq, keep_k)[seq.label] -
                                  naive_forward(model, seq, none)[seq.label];
            CHECK(token_information(model, seq, i, k) == doctest::Approx(oracle).epsilon(1e-9));
        }
    }
}

TEST_CASE("information at the last boundary is exactly zero") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 31);
    const MultimodalSequence seq = random_sequence(arch, 4, 1, 2, 14);
    for (int k = 0; k < 4; ++k) CHECK(token_information(model, seq, arch.n_layers, k) == 0.0);
}

TEST_CASE("profile cells match direct token_information calls") {
    const ArchConfig arch = tiny_arch(3, 16, Precision::Double);
    const Model model = Model::init_random(arch, 41);
    const MultimodalSequence seq = random_sequence(arch, 4, 1, 2, 15);
    const InformationProfile profile = information_profile(model, seq);
    REQUIRE(profile.values.rows == arch.n_layers + 1);
    REQUIRE(profile.values.cols == 4);
    Rng rng = make_rng(5);
    for (int spot = 0; spot < 20; ++spot) {
        const int i = static_cast<int>(uniform_below(rng, arch.n_layers + 1));
        const int k = static_cast<int>(uniform_below(rng, 4));
        CHECK(profile.values.at(i, k) == token_information(model, seq, i, k));
    }
    for (int k = 0; k < 4; ++k) CHECK(profile.values.at(arch.n_layers, k) == 0.0);
    for (int i = 0; i <= arch.n_layers; ++i)
        for (int k = 0; k < 4; ++k) {
            CHECK(profile.values.at(i, k) >= -1.0);
            CHECK(profile.values.at(i, k) <= 1.0);
        }
}

TEST_CASE("profile_stats hand cases and streaming oracle") {
    InformationProfile p;
    p.values = Mat<double>(2, 2);
    p.values.at(0, 0) = 0.2;
    p.values.at(0, 1) = 0.4;
    p.values.at(1, 0) = 0.7;
    p.values.at(1, 1) = 0.7;
    p.text_baseline = {0.0, 0.0};
    const auto stats = profile_stats(p);
    CHECK(stats[0].mean == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(stats[0].variance == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(stats[1].variance == 0.0);

    // Two-pass vs textbook single-pass accumulation.
    const ArchConfig arch = tiny_arch(2, 16, Precision::Double);
    const Model model = Model::init_random(arch, 3);
    const MultimodalSequence seq = random_sequence(arch, 6, 1, 2, 16);
    const InformationProfile profile = information_profile(model, seq);
    const auto st = profile_stats(profile);
    for (int i = 0; i < profile.values.rows; ++i) {
        double s = 0, s2 = 0;
        for (int k = 0; k < profile.values.cols; ++k) {
            s += profile.values.at(i, k);
            s2 += profile.values.at(i, k) * profile.values.at(i, k);
        }
        const double mean = s / profile.values.cols;
        const double var = s2 / profile.values.cols - mean * mean;
        CHECK(std::abs(st[i].mean - mean) < 1e-12);
        CHECK(std::abs(st[i].variance - var) < 1e-12);
    }
}

TEST_CASE("detect_horizon edge cases and monotonicity") {
    std::vector<LayerStats> zeros(5, {0.0, 0.0});
    CHECK(detect_horizon(zeros, 1e-3, 2) == 0);

    std::vector<LayerStats> loud(5, {0.5, 0.3});
    CHECK(!detect_horizon(loud, 1e-3, 2).has_value());

    CHECK_THROWS_AS(detect_horizon(zeros, 0.0, 2), ConfigError);
    CHECK_THROWS_AS(detect_horizon(zeros, 1e-3, 0), ConfigError);

    Rng rng = make_rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<LayerStats> stats(7);
        for (auto& s : stats) {
            s.mean = (uniform_double(rng) - 0.5) * 0.02;
            s.variance = uniform_double(rng) * 1e-4;
        }
        const double tau = 1e-3 + uniform_double(rng) * 0.02;
        const double tau2 = tau + uniform_double(rng) * 0.02;
        const auto h1 = detect_horizon(stats, tau, 2);
        const auto h2 = detect_horizon(stats, tau2, 2);
        if (h1) {
            REQUIRE(h2.has_value());
            CHECK(*h2 <= *h1);
        }
    }
}

TEST_CASE("retained information sums, additivity, clamping") {
    const ArchConfig arch = tiny_arch(2, 16, Precision::Double);
    const Model model = Model::init_random(arch, 9);
    const MultimodalSequence seq = random_sequence(arch, 6, 1, 2, 17);
    const InformationProfile profile = information_profile(model, seq);

    CHECK(retained_information(profile, 1, {}) == 0.0);
    std::vector<int> all = {0, 1, 2, 3, 4, 5};
    double row_sum = 0;
    for (int k : all) row_sum += profile.values.at(1, k);
    CHECK(retained_information(profile, 1, all) == doctest::Approx(row_sum).epsilon(1e-12));

    // Additivity over disjoint sets.
    const std::vector<int> a = {0, 2}, b = {3, 5};
    CHECK(retained_information(profile, 1, a) + retained_information(profile, 1, b) ==
          doctest::Approx(retained_information(profile, 1, {0, 2, 3, 5})).epsilon(1e-12));

    const double clamped = retained_information(profile, 1, all, true);
    CHECK(clamped >= retained_information(profile, 1, all));
    CHECK_THROWS_AS(retained_information(profile, 99, all), ConfigError);
    CHECK_THROWS_AS(retained_information(profile, 1, {42}), ConfigError);
}

TEST_CASE("single visual token profile") {
    const ArchConfig arch = tiny_arch(2, 16, Precision::Double);
    const Model model = Model::init_random(arch, 10);
    const MultimodalSequence seq = random_sequence(arch, 1, 1, 2, 18);
    const InformationProfile profile = information_profile(model, seq);
    REQUIRE(profile.values.cols == 1);
    for (int i = 0; i <= arch.n_layers; ++i)
        CHECK(profile.values.at(i, 0) == token_information(model, seq, i, 0));
}

TEST_CASE("bad inputs are rejected") {
    const ArchConfig arch = tiny_arch(2, 16, Precision::Double);
    const Model model = Model::init_random(arch, 10);
    const MultimodalSequence seq = random_sequence(arch, 3, 1, 2, 19);
    CHECK_THROWS_AS(token_information(model, seq, 0, 5), ConfigError);
    CHECK_THROWS_AS(token_information(model, seq, 99, 0), ConfigError);
    MultimodalSequence bad = seq;
    bad.label = arch.vocab_size + 3;
    CHECK_THROWS_AS(text_only_prob(model, bad, 0), ConfigError);
}
