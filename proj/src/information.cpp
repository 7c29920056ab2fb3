// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/information.hpp"

#include <cmath>

#include "tokenlens/errors.hpp"

namespace tlens {

namespace {

LayerCheckpoint capture_boundary(const Model& model, const MultimodalSequence& seq, int layer) {
    if (layer < 0 || layer > model.arch().n_layers)
        throw ConfigError("boundary out of range: " + std::to_string(layer));
    CaptureFlags flags;
    flags.checkpoint_layers = {layer};
    return model.forward_prefill(seq, flags).checkpoint_at(layer);
}

double label_prob_masked(const Model& model, const LayerCheckpoint& state,
                         const std::vector<uint8_t>& mask, int label) {
    PrefillResult res = model.resume_forward(state, VisualTreatment::zero_mask(mask));
    return res.probs[label];
}

}  // namespace

double text_only_prob(const Model& model, const MultimodalSequence& seq, int layer) {
    if (seq.label >= model.arch().vocab_size) throw ConfigError("label exceeds vocabulary");
    const LayerCheckpoint state = capture_boundary(model, seq, layer);
    const std::vector<uint8_t> mask(state.alive_visual.size(), 0);
    return label_prob_masked(model, state, mask, seq.label);
}

double token_information(const Model& model, const MultimodalSequence& seq, int layer,
                         int token) {
    if (token < 0 || token >= seq.n_visual()) throw ConfigError("visual token index out of range");
    if (seq.label >= model.arch().vocab_size) throw ConfigError("label exceeds vocabulary");
    const LayerCheckpoint state = capture_boundary(model, seq, layer);
    std::vector<uint8_t> mask(state.alive_visual.size(), 0);
    mask[token] = 1;
    const double p_k = label_prob_masked(model, state, mask, seq.label);
    const std::vector<uint8_t> zeros(state.alive_visual.size(), 0);
    const double p_text = label_prob_masked(model, state, zeros, seq.label);
    return p_k - p_text;
}

InformationProfile information_profile(const Model& model, const MultimodalSequence& seq) {
    const int n_layers = model.arch().n_layers;
    const int n_visual = seq.n_visual();
    if (seq.label >= model.arch().vocab_size) throw ConfigError("label exceeds vocabulary");

    CaptureFlags flags;
    flags.all_checkpoints = true;
    const PrefillResult full = model.forward_prefill(seq, flags);

    InformationProfile profile;
    profile.values = Mat<double>(n_layers + 1, n_visual);
    profile.text_baseline.resize(n_layers + 1);
    profile.label = seq.label;
    profile.sequence_fingerprint = seq.fingerprint();

    std::vector<uint8_t> mask(n_visual, 0);
    for (int i = 0; i <= n_layers; ++i) {
        const LayerCheckpoint& state = full.checkpoint_at(i);
        const std::vector<uint8_t> zeros(n_visual, 0);
        const double p_text = label_prob_masked(model, state, zeros, seq.label);
        profile.text_baseline[i] = p_text;
        for (int k = 0; k < n_visual; ++k) {
            mask.assign(n_visual, 0);
            mask[k] = 1;
            const double p_k = label_prob_masked(model, state, mask, seq.label);
            profile.values.at(i, k) = p_k - p_text;
        }
    }
    return profile;
}

std::vector<LayerStats> profile_stats(const InformationProfile& profile) {
    std::vector<LayerStats> stats(profile.values.rows);
    const int n = profile.values.cols;
    for (int i = 0; i < profile.values.rows; ++i) {
        double sum = 0.0;
        for (int k = 0; k < n; ++k) sum += profile.values.at(i, k);
        const double mean = sum / n;
        double sq = 0.0;
        for (int k = 0; k < n; ++k) {
            const double d = profile.values.at(i, k) - mean;
            sq += d * d;
        }
        stats[i] = {mean, sq / n};
    }
    return stats;
}

std::optional<int> detect_horizon(const std::vector<LayerStats>& stats, double tau,
                                  int persistence) {
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (persistence < 1) throw ConfigError("persistence must be >= 1");
    const int last = static_cast<int>(stats.size()) - 1;
    auto quiet = [&](int j) {
        return std::abs(stats[j].mean) <= tau && stats[j].variance <= tau * tau;
    };
    for (int i = 0; i <= last; ++i) {
        bool ok = true;
        const int window_end = std::min(i + persistence - 1, last);
        for (int j = i; j <= window_end && ok; ++j) ok = quiet(j);
        for (int j = i; j <= last && ok; ++j) ok = quiet(j);
        if (ok) return i;
    }
    return std::nullopt;
}

double retained_information(const InformationProfile& profile, int layer,
                            const std::vector<int>& kept, bool clamp_negative) {
    if (layer < 0 || layer >= profile.values.rows)
        throw ConfigError("layer out of range for profile");
    double sum = 0.0;
    for (int k : kept) {
        if (k < 0 || k >= profile.values.cols)
            throw ConfigError("kept index out of range for profile");
        const double v = profile.values.at(layer, k);
        sum += clamp_negative ? std::max(v, 0.0) : v;
    }
    return sum;
}

}  // namespace tlens
