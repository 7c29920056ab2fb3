// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tokenlens/csv.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/rng.hpp"

namespace tlens {

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Random: return "random";
        case Strategy::AttentionTopK: return "attention_topk";
        case Strategy::MaxMinDiversity: return "maxmin_diversity";
        case Strategy::LowDuplication: return "low_duplication";
        case Strategy::Withdraw: return "withdraw";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "random") return Strategy::Random;
    if (name == "attention_topk") return Strategy::AttentionTopK;
    if (name == "maxmin_diversity") return Strategy::MaxMinDiversity;
    if (name == "low_duplication") return Strategy::LowDuplication;
    if (name == "withdraw") return Strategy::Withdraw;
    throw ConfigError("unknown strategy: " + name);
}

void PruneSchedule::validate(int n_layers) const {
    int prev_layer = -1;
    for (const auto& a : actions) {
        if (a.layer < 0) throw ConfigError("action layer must be >= 0");
        if (n_layers >= 0 && a.layer > n_layers)
            throw ConfigError("action layer " + std::to_string(a.layer) +
                              " exceeds model depth " + std::to_string(n_layers));
        if (a.layer <= prev_layer)
            throw ConfigError("action layers must be strictly increasing");
        prev_layer = a.layer;
        if (!(a.retain_ratio >= 0.0 && a.retain_ratio <= 1.0))
            throw ConfigError("retain_ratio must be in [0, 1]");
        if (a.strategy == Strategy::Withdraw && a.retain_ratio != 0.0)
            throw ConfigError("withdraw actions must have retain_ratio 0");
    }
}

std::string PruneSchedule::to_text() const {
    std::ostringstream out;
    out << "name " << (name.empty() ? "unnamed" : name) << "\n";
    for (const auto& a : actions) {
        out << a.layer << " " << strategy_name(a.strategy) << " " << format_double(a.retain_ratio)
            << " " << a.seed << "\n";
    }
    return out.str();
}

PruneSchedule PruneSchedule::from_text(const std::string& text) {
    PruneSchedule s;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first)) continue;
        if (first == "name") {
            ls >> s.name;
            continue;
        }
        PruneAction a;
        try {
            a.layer = std::stoi(first);
        } catch (...) {
            throw ConfigError("bad schedule line: " + line);
        }
        std::string strat, ratio, seed;
        if (!(ls >> strat >> ratio)) throw ConfigError("bad schedule line: " + line);
        a.strategy = strategy_from_name(strat);
        a.retain_ratio = std::stod(ratio);
        if (ls >> seed) a.seed = std::stoull(seed);
        s.actions.push_back(a);
    }
    s.validate();
    return s;
}

PruneSchedule PruneSchedule::load(const std::string& path) {
    return from_text(read_text_file(path));
}

int retain_count(double retain_ratio, int alive_count) {
    if (!(retain_ratio >= 0.0 && retain_ratio <= 1.0))
        throw ConfigError("retain_ratio must be in [0, 1]");
    return static_cast<int>(std::floor(retain_ratio * alive_count + 0.5));
}

std::vector<int> select_random(const std::vector<int>& alive, double retain_ratio,
                               uint64_t seed) {
    const int m = retain_count(retain_ratio, static_cast<int>(alive.size()));
    if (m >= static_cast<int>(alive.size())) return alive;
    std::vector<int> pool = alive;
    Rng rng = make_rng(seed);
    for (int i = 0; i < m; ++i) {
        const size_t j = i + uniform_below(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::vector<int> select_attention_topk(const std::vector<double>& attn_to_alive,
                                       const std::vector<int>& alive, double retain_ratio) {
    if (attn_to_alive.size() != alive.size())
        throw ConfigError("attention row does not cover the alive visual columns");
    const int m = retain_count(retain_ratio, static_cast<int>(alive.size()));
    if (m >= static_cast<int>(alive.size())) return alive;
    std::vector<int> order(alive.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (attn_to_alive[a] != attn_to_alive[b]) return attn_to_alive[a] > attn_to_alive[b];
        return alive[a] < alive[b];
    });
    std::vector<int> kept;
    kept.reserve(m);
    for (int i = 0; i < m; ++i) kept.push_back(alive[order[i]]);
    std::sort(kept.begin(), kept.end());
    return kept;
}

namespace {

// Cosine distance matrix; rows with zero norm are at distance 0 from
// everything (and similarity 0), per the module contract.
struct CosineGeometry {
    std::vector<double> norms;
    const Mat<double>* f;
    int zero_norms = 0;

    explicit CosineGeometry(const Mat<double>& features) : f(&features) {
        norms.resize(features.rows);
        for (int i = 0; i < features.rows; ++i) {
            double ss = 0;
            const double* r = features.row(i);
            for (int j = 0; j < features.cols; ++j) ss += r[j] * r[j];
            norms[i] = std::sqrt(ss);
            if (norms[i] == 0.0) ++zero_norms;
        }
    }

    double similarity(int a, int b) const {
        if (norms[a] == 0.0 || norms[b] == 0.0) return 0.0;
        const double* ra = f->row(a);
        const double* rb = f->row(b);
        double dot = 0;
        for (int j = 0; j < f->cols; ++j) dot += ra[j] * rb[j];
        return dot / (norms[a] * norms[b]);
    }

    double distance(int a, int b) const {
        if (norms[a] == 0.0 || norms[b] == 0.0) return 0.0;
        return 1.0 - similarity(a, b);
    }
};

}  // namespace

std::vector<int> select_maxmin_diversity(const Mat<double>& features,
                                         const std::vector<int>& alive, double retain_ratio,
                                         int* zero_norm_warnings) {
    if (features.rows != static_cast<int>(alive.size()))
        throw ConfigError("feature rows do not cover the alive visual columns");
    const int n = static_cast<int>(alive.size());
    const int m = retain_count(retain_ratio, n);
    if (m >= n) return alive;
    if (m == 0) return {};
    CosineGeometry geo(features);
    if (zero_norm_warnings) *zero_norm_warnings += geo.zero_norms;

    std::vector<int> sel;
    if (m == 1) {
        // Any singleton ties on the objective; the smallest index wins.
        sel.push_back(0);
    } else {
        int bi = 0, bj = 1;
        double best = -1.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double dist = geo.distance(i, j);
                if (dist > best) {
                    best = dist;
                    bi = i;
                    bj = j;
                }
            }
        sel = {bi, bj};
    }
    std::vector<char> taken(n, 0);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    for (int s : sel) taken[s] = 1;
    for (int t = 0; t < n; ++t)
        for (int s : sel) min_dist[t] = std::min(min_dist[t], geo.distance(t, s));
    while (static_cast<int>(sel.size()) < m) {
        int pick = -1;
        double best = -1.0;
        for (int t = 0; t < n; ++t) {
            if (taken[t]) continue;
            if (min_dist[t] > best) {
                best = min_dist[t];
                pick = t;
            }
        }
        sel.push_back(pick);
        taken[pick] = 1;
        for (int t = 0; t < n; ++t)
            min_dist[t] = std::min(min_dist[t], geo.distance(t, pick));
    }
    std::vector<int> kept;
    kept.reserve(sel.size());
    for (int s : sel) kept.push_back(alive[s]);
    std::sort(kept.begin(), kept.end());
    return kept;
}

std::vector<int> select_low_duplication(const Mat<double>& features,
                                        const std::vector<int>& alive, double retain_ratio,
                                        uint64_t seed) {
    if (features.rows != static_cast<int>(alive.size()))
        throw ConfigError("feature rows do not cover the alive visual columns");
    const int n = static_cast<int>(alive.size());
    const int m = retain_count(retain_ratio, n);
    if (m >= n) return alive;
    if (m == 0) return {};

    int n_pivots = std::min(8, n);
    if (n_pivots > m) n_pivots = m;  // quota smaller than the pivot budget
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(seed);
    for (int i = 0; i < n_pivots; ++i) {
        const size_t j = i + uniform_below(rng, order.size() - i);
        std::swap(order[i], order[j]);
    }
    std::vector<int> pivots(order.begin(), order.begin() + n_pivots);

    CosineGeometry geo(features);
    std::vector<char> is_pivot(n, 0);
    for (int p : pivots) is_pivot[p] = 1;
    std::vector<std::pair<double, int>> scored;  // (duplication, local index)
    for (int t = 0; t < n; ++t) {
        if (is_pivot[t]) continue;
        double dup = -std::numeric_limits<double>::infinity();
        for (int p : pivots) dup = std::max(dup, geo.similarity(t, p));
        scored.emplace_back(dup, t);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    std::vector<int> kept;
    kept.reserve(m);
    for (int p : pivots) kept.push_back(alive[p]);
    for (int i = 0; i < m - n_pivots; ++i) kept.push_back(alive[scored[i].second]);
    std::sort(kept.begin(), kept.end());
    return kept;
}

ScheduleRunResult apply_schedule(const Model& model, const MultimodalSequence& seq,
                                 const PruneSchedule& schedule) {
    const int n_layers = model.arch().n_layers;
    schedule.validate(n_layers);
    std::vector<int> attn_boundaries;
    for (const auto& a : schedule.actions) {
        if (a.strategy == Strategy::AttentionTopK) {
            if (a.layer == 0)
                throw ConfigError("attention unavailable before the first decoder layer");
            attn_boundaries.push_back(a.layer);
        }
    }

    ScheduleRunResult out;
    out.alive_after_boundary.resize(n_layers + 1);
    size_t next_action = 0;
    BoundaryHook hook = [&](const BoundaryContext& ctx) -> std::optional<std::vector<int>> {
        std::optional<std::vector<int>> kept;
        if (next_action < schedule.actions.size() &&
            schedule.actions[next_action].layer == ctx.layer) {
            const PruneAction& act = schedule.actions[next_action];
            ++next_action;
            switch (act.strategy) {
                case Strategy::Random:
                    kept = select_random(*ctx.alive, act.retain_ratio, act.seed);
                    break;
                case Strategy::AttentionTopK:
                    if (!ctx.attention_available)
                        throw ConfigError("attention unavailable at layer " +
                                          std::to_string(ctx.layer));
                    kept = select_attention_topk(ctx.attention_to_alive, *ctx.alive,
                                                 act.retain_ratio);
                    break;
                case Strategy::MaxMinDiversity:
                case Strategy::LowDuplication: {
                    // Boundary 0 selects on the raw visual embeddings; deeper
                    // boundaries on the hidden columns of this forward.
                    Mat<double> feats;
                    if (ctx.layer == 0) {
                        feats = Mat<double>(static_cast<int>(ctx.alive->size()), seq.visual.cols);
                        for (size_t j = 0; j < ctx.alive->size(); ++j)
                            for (int c = 0; c < seq.visual.cols; ++c)
                                feats.at(static_cast<int>(j), c) =
                                    seq.visual.at((*ctx.alive)[j], c);
                    } else {
                        feats = ctx.visual_hidden;
                    }
                    if (act.strategy == Strategy::MaxMinDiversity)
                        kept = select_maxmin_diversity(feats, *ctx.alive, act.retain_ratio,
                                                       &out.zero_norm_warnings);
                    else
                        kept = select_low_duplication(feats, *ctx.alive, act.retain_ratio,
                                                      act.seed);
                    break;
                }
                case Strategy::Withdraw:
                    kept = std::vector<int>{};
                    break;
            }
            out.retained_counts.push_back(static_cast<int>(kept->size()));
        }
        out.alive_after_boundary[ctx.layer] = kept ? *kept : *ctx.alive;
        return kept;
    };
    out.result = model.forward_with_hook(seq, attn_boundaries, hook);
    return out;
}

}  // namespace tlens
