// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/experiments.hpp"

#include <algorithm>
#include <cmath>

#include "tokenlens/csv.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/parallel.hpp"
#include "tokenlens/rng.hpp"
#include "tokenlens/svg.hpp"

namespace tlens {

double ExperimentResult::summary_value(const std::string& key) const {
    for (const auto& [k, v] : summary)
        if (k == key) return v;
    throw ConfigError("experiment summary has no key: " + key);
}

namespace {

int argmax(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

// Per-sample capture shared by the heavyweight runners.
struct SampleWork {
    InformationProfile profile;
    std::vector<LayerCheckpoint> checkpoints;     // boundaries 0..L
    std::vector<std::vector<double>> attn_to_vis; // per layer 1..L (index l-1)
    int predicted = -1;
};

SampleWork compute_sample_work(const Model& model, const MultimodalSequence& seq,
                               bool want_attention) {
    const int n_layers = model.arch().n_layers;
    CaptureFlags flags;
    flags.all_checkpoints = true;
    if (want_attention)
        for (int l = 1; l <= n_layers; ++l) flags.attention_layers.push_back(l);
    PrefillResult full = model.forward_prefill(seq, flags);

    SampleWork work;
    work.predicted = argmax(full.probs);
    work.checkpoints.reserve(n_layers + 1);
    for (int i = 0; i <= n_layers; ++i) work.checkpoints.push_back(full.checkpoint_at(i));
    if (want_attention) {
        const int n_prefix = static_cast<int>(seq.prefix_ids.size());
        const int nv = seq.n_visual();
        work.attn_to_vis.resize(n_layers);
        for (int l = 1; l <= n_layers; ++l) {
            const Mat<double>& attn = full.attention_at(l);
            const int last = attn.rows - 1;
            auto& row = work.attn_to_vis[l - 1];
            row.resize(nv);
            for (int k = 0; k < nv; ++k) row[k] = attn.at(last, n_prefix + k);
        }
    }

    const int nv = seq.n_visual();
    work.profile.values = Mat<double>(n_layers + 1, nv);
    work.profile.text_baseline.resize(n_layers + 1);
    work.profile.label = seq.label;
    work.profile.sequence_fingerprint = seq.fingerprint();
    std::vector<uint8_t> mask(nv, 0);
    for (int i = 0; i <= n_layers; ++i) {
        const LayerCheckpoint& state = work.checkpoints[i];
        const double p_text =
            model.resume_forward(state, VisualTreatment::zero_mask(std::vector<uint8_t>(nv, 0)))
                .probs[seq.label];
        work.profile.text_baseline[i] = p_text;
        for (int k = 0; k < nv; ++k) {
            mask.assign(nv, 0);
            mask[k] = 1;
            const double p_k =
                model.resume_forward(state, VisualTreatment::zero_mask(mask)).probs[seq.label];
            work.profile.values.at(i, k) = p_k - p_text;
        }
    }
    return work;
}

}  // namespace

DatasetProfile aggregate_profile_stats(const std::vector<InformationProfile>& profiles,
                                       double tau, int persistence) {
    DatasetProfile agg;
    if (profiles.empty()) return agg;
    const int rows = profiles[0].values.rows;
    const int cols = profiles[0].values.cols;
    agg.stats.assign(rows, {});
    agg.mean_abs.assign(rows, 0.0);
    agg.text_baseline.assign(rows, 0.0);
    for (const auto& p : profiles) {
        const auto stats = profile_stats(p);
        for (int i = 0; i < rows; ++i) {
            agg.stats[i].mean += stats[i].mean;
            agg.stats[i].variance += stats[i].variance;
            agg.text_baseline[i] += p.text_baseline[i];
            double abs_sum = 0;
            for (int k = 0; k < cols; ++k) abs_sum += std::abs(p.values.at(i, k));
            agg.mean_abs[i] += abs_sum / cols;
        }
    }
    const double inv = 1.0 / static_cast<double>(profiles.size());
    for (int i = 0; i < rows; ++i) {
        agg.stats[i].mean *= inv;
        agg.stats[i].variance *= inv;
        agg.mean_abs[i] *= inv;
        agg.text_baseline[i] *= inv;
    }
    agg.horizon = detect_horizon(agg.stats, tau, persistence);
    return agg;
}

namespace {

std::vector<int> all_visual_indices(int nv) {
    std::vector<int> v(nv);
    for (int i = 0; i < nv; ++i) v[i] = i;
    return v;
}

// Lowest-information tokens pruned: keep the top (nv - prune_count) by
// information, ties to the smaller index.
std::vector<int> keep_top_information(const InformationProfile& profile, int layer,
                                      int keep_count) {
    const int nv = profile.values.cols;
    std::vector<int> order(nv);
    for (int i = 0; i < nv; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double ia = profile.values.at(layer, a);
        const double ib = profile.values.at(layer, b);
        if (ia != ib) return ia > ib;
        return a < b;
    });
    order.resize(keep_count);
    std::sort(order.begin(), order.end());
    return order;
}

std::vector<int> random_keep(int nv, int keep_count, uint64_t seed) {
    std::vector<int> pool = all_visual_indices(nv);
    Rng rng = make_rng(seed);
    for (int i = 0; i < keep_count; ++i) {
        const size_t j = i + uniform_below(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(keep_count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace

double accuracy(const Model& model, const std::vector<MultimodalSequence>& data, int threads) {
    if (data.empty()) throw ConfigError("accuracy over an empty dataset");
    std::vector<char> correct(data.size(), 0);
    parallel_for(data.size(), threads, [&](size_t i) {
        const PrefillResult res = model.forward_prefill(data[i]);
        correct[i] = argmax(res.probs) == data[i].label;
    });
    double sum = 0;
    for (char c : correct) sum += c;
    return sum / static_cast<double>(data.size());
}

DatasetProfile dataset_profile(const Model& model, const std::vector<MultimodalSequence>& data,
                               double tau, int persistence, int threads) {
    if (data.empty()) throw ConfigError("profile over an empty dataset");
    std::vector<InformationProfile> profiles(data.size());
    parallel_for(data.size(), threads,
                 [&](size_t i) { profiles[i] = information_profile(model, data[i]); });
    return aggregate_profile_stats(profiles, tau, persistence);
}

InfoPruneCurve info_prune_curve(const Model& model, const std::vector<MultimodalSequence>& data,
                                const std::vector<int>& layers,
                                const std::vector<double>& prune_ratios, uint64_t seed,
                                double tau, int threads) {
    if (data.empty()) throw ConfigError("empty dataset");
    const int nv = data[0].n_visual();
    const int nl = static_cast<int>(layers.size());
    const int nr = static_cast<int>(prune_ratios.size());

    struct PerSample {
        InformationProfile profile;
        std::vector<char> informed, random;  // nl * nr
        char baseline = 0;
    };
    std::vector<PerSample> results(data.size());
    parallel_for(data.size(), threads, [&](size_t si) {
        const auto& seq = data[si];
        SampleWork work = compute_sample_work(model, seq, false);
        PerSample& out = results[si];
        out.baseline = work.predicted == seq.label;
        out.informed.assign(static_cast<size_t>(nl) * nr, 0);
        out.random.assign(static_cast<size_t>(nl) * nr, 0);
        for (int li = 0; li < nl; ++li) {
            const int layer = layers[li];
            for (int ri = 0; ri < nr; ++ri) {
                const int prune = retain_count(prune_ratios[ri], nv);
                const int keep = nv - prune;
                const auto kept = keep_top_information(work.profile, layer, keep);
                const PrefillResult pr = model.resume_forward(work.checkpoints[layer],
                                                              VisualTreatment::drop(kept));
                out.informed[li * nr + ri] = argmax(pr.probs) == seq.label;
                const auto rand_kept =
                    random_keep(nv, keep, mix_seed(seed, si * 1000003ull + layer * 131ull + ri));
                const PrefillResult rr = model.resume_forward(work.checkpoints[layer],
                                                              VisualTreatment::drop(rand_kept));
                out.random[li * nr + ri] = argmax(rr.probs) == seq.label;
            }
        }
        out.profile = std::move(work.profile);
    });

    InfoPruneCurve curve;
    curve.layers = layers;
    curve.prune_ratios = prune_ratios;
    curve.informed_acc = Mat<double>(nl, nr);
    curve.random_acc = Mat<double>(nl, nr);
    std::vector<InformationProfile> profiles;
    profiles.reserve(data.size());
    double base = 0;
    for (auto& r : results) {
        base += r.baseline;
        for (int li = 0; li < nl; ++li)
            for (int ri = 0; ri < nr; ++ri) {
                curve.informed_acc.at(li, ri) += r.informed[li * nr + ri];
                curve.random_acc.at(li, ri) += r.random[li * nr + ri];
            }
        profiles.push_back(std::move(r.profile));
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    curve.baseline_acc = base * inv;
    for (auto& v : curve.informed_acc.a) v *= inv;
    for (auto& v : curve.random_acc.a) v *= inv;
    curve.profile = aggregate_profile_stats(profiles, tau, kDefaultHorizonPersistence);
    return curve;
}

StrategyEval strategy_eval(const Model& model, const std::vector<MultimodalSequence>& data,
                           const std::vector<Strategy>& strategies,
                           const std::vector<double>& retain_ratios,
                           const std::vector<int>& layers, uint64_t seed, double tau,
                           int threads) {
    if (data.empty()) throw ConfigError("empty dataset");
    const int nv = data[0].n_visual();
    const int nl = static_cast<int>(layers.size());
    const int nr = static_cast<int>(retain_ratios.size());
    const int ns = static_cast<int>(strategies.size());
    const auto alive = all_visual_indices(nv);

    bool want_attention = false;
    for (Strategy s : strategies)
        if (s == Strategy::AttentionTopK) want_attention = true;

    struct PerSample {
        InformationProfile profile;
        std::vector<double> retained;  // ns * nl * nr
    };
    std::vector<PerSample> results(data.size());
    parallel_for(data.size(), threads, [&](size_t si) {
        const auto& seq = data[si];
        SampleWork work = compute_sample_work(model, seq, want_attention);
        PerSample& out = results[si];
        out.retained.assign(static_cast<size_t>(ns) * nl * nr, 0.0);
        for (int sj = 0; sj < ns; ++sj) {
            const Strategy strat = strategies[sj];
            for (int li = 0; li < nl; ++li) {
                const int layer = layers[li];
                // Selection features: raw embeddings at boundary 0, hidden
                // columns otherwise, matching apply_schedule.
                const Mat<double>& feats =
                    layer == 0 ? seq.visual : work.checkpoints[layer].hidden_visual;
                for (int ri = 0; ri < nr; ++ri) {
                    const double ratio = retain_ratios[ri];
                    std::vector<int> kept;
                    switch (strat) {
                        case Strategy::Random:
                            kept = select_random(alive, ratio,
                                                 mix_seed(seed, si * 7919ull + layer));
                            break;
                        case Strategy::AttentionTopK:
                            if (layer == 0) continue;  // no attention before layer 1
                            kept = select_attention_topk(work.attn_to_vis[layer - 1], alive,
                                                         ratio);
                            break;
                        case Strategy::MaxMinDiversity:
                            kept = select_maxmin_diversity(feats, alive, ratio);
                            break;
                        case Strategy::LowDuplication:
                            kept = select_low_duplication(feats, alive, ratio,
                                                          mix_seed(seed, si * 104729ull + layer));
                            break;
                        case Strategy::Withdraw:
                            kept = {};
                            break;
                    }
                    out.retained[(sj * nl + li) * nr + ri] =
                        retained_information(work.profile, layer, kept);
                }
            }
        }
        out.profile = std::move(work.profile);
    });

    StrategyEval eval;
    eval.strategies = strategies;
    eval.retain_ratios = retain_ratios;
    eval.layers = layers;
    eval.retained.assign(ns, Mat<double>(nl, nr));
    std::vector<InformationProfile> profiles;
    profiles.reserve(data.size());
    for (auto& r : results) {
        for (int sj = 0; sj < ns; ++sj)
            for (int li = 0; li < nl; ++li)
                for (int ri = 0; ri < nr; ++ri)
                    eval.retained[sj].at(li, ri) += r.retained[(sj * nl + li) * nr + ri];
        profiles.push_back(std::move(r.profile));
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    for (auto& m : eval.retained)
        for (auto& v : m.a) v *= inv;
    eval.profile = aggregate_profile_stats(profiles, tau, kDefaultHorizonPersistence);
    return eval;
}

WithdrawCurve withdraw_sweep(const Model& model, const std::vector<MultimodalSequence>& data,
                             const std::string& label, double tau, bool with_profile,
                             int threads) {
    if (data.empty()) throw ConfigError("empty dataset");
    const int n_layers = model.arch().n_layers;
    struct PerSample {
        std::vector<char> correct;  // boundary 0..L
        char baseline = 0;
        InformationProfile profile;
    };
    std::vector<PerSample> results(data.size());
    parallel_for(data.size(), threads, [&](size_t si) {
        const auto& seq = data[si];
        PerSample& out = results[si];
        if (with_profile) {
            SampleWork work = compute_sample_work(model, seq, false);
            out.baseline = work.predicted == seq.label;
            out.correct.resize(n_layers + 1);
            for (int i = 0; i <= n_layers; ++i) {
                const PrefillResult res = model.resume_forward(
                    work.checkpoints[i], VisualTreatment::drop(std::vector<int>{}));
                out.correct[i] = argmax(res.probs) == seq.label;
            }
            out.profile = std::move(work.profile);
        } else {
            CaptureFlags flags;
            flags.all_checkpoints = true;
            PrefillResult full = model.forward_prefill(seq, flags);
            out.baseline = argmax(full.probs) == seq.label;
            out.correct.resize(n_layers + 1);
            for (int i = 0; i <= n_layers; ++i) {
                const PrefillResult res = model.resume_forward(
                    full.checkpoint_at(i), VisualTreatment::drop(std::vector<int>{}));
                out.correct[i] = argmax(res.probs) == seq.label;
            }
        }
    });

    WithdrawCurve curve;
    curve.label = label;
    curve.withdraw_acc.assign(n_layers + 1, 0.0);
    std::vector<InformationProfile> profiles;
    double base = 0;
    for (auto& r : results) {
        base += r.baseline;
        for (int i = 0; i <= n_layers; ++i) curve.withdraw_acc[i] += r.correct[i];
        if (with_profile) profiles.push_back(std::move(r.profile));
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    curve.baseline_acc = base * inv;
    for (auto& v : curve.withdraw_acc) v *= inv;
    if (with_profile)
        curve.profile = aggregate_profile_stats(profiles, tau, kDefaultHorizonPersistence);
    for (int i = 0; i <= n_layers; ++i) {
        if (curve.withdraw_acc[i] >= curve.baseline_acc - 0.01) {
            curve.empirical_horizon = i;
            break;
        }
    }
    return curve;
}

std::vector<ScheduleBenchRow> schedule_bench(const Model& model,
                                             const std::vector<MultimodalSequence>& data,
                                             const std::vector<PruneSchedule>& schedules,
                                             int threads) {
    if (data.empty()) throw ConfigError("empty dataset");
    const double base = accuracy(model, data, threads);
    const int nv = data[0].n_visual();
    const int nt = data[0].n_text();
    std::vector<ScheduleBenchRow> rows;
    for (const auto& schedule : schedules) {
        std::vector<char> correct(data.size(), 0);
        parallel_for(data.size(), threads, [&](size_t si) {
            PruneSchedule per_sample = schedule;
            for (auto& a : per_sample.actions) a.seed = mix_seed(a.seed, si);
            const ScheduleRunResult run = apply_schedule(model, data[si], per_sample);
            correct[si] = argmax(run.result.probs) == data[si].label;
        });
        double acc = 0;
        for (char c : correct) acc += c;
        acc /= static_cast<double>(data.size());
        ScheduleBenchRow row;
        row.name = schedule.name;
        row.acc = acc;
        row.rel_acc = base > 0 ? 100.0 * acc / base : 0.0;
        row.cost = flops_estimate(model.arch(), schedule, nv, nt);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- CSV / runner wrappers --------------------------------------------------

std::string profile_values_csv(const std::vector<InformationProfile>& profiles) {
    CsvBuilder csv({"sample_id", "layer", "token_index", "information"});
    for (size_t s = 0; s < profiles.size(); ++s) {
        const auto& p = profiles[s];
        for (int i = 0; i < p.values.rows; ++i)
            for (int k = 0; k < p.values.cols; ++k)
                csv.row({format_int(static_cast<long long>(s)), format_int(i), format_int(k),
                         format_double(p.values.at(i, k))});
    }
    return csv.str();
}

std::string profile_stats_csv(const DatasetProfile& agg) {
    CsvBuilder csv({"layer", "mean", "variance", "mean_abs", "p_text"});
    for (size_t i = 0; i < agg.stats.size(); ++i)
        csv.row({format_int(static_cast<long long>(i)), format_double(agg.stats[i].mean),
                 format_double(agg.stats[i].variance), format_double(agg.mean_abs[i]),
                 format_double(agg.text_baseline[i])});
    return csv.str();
}

ExperimentResult run_info_prune_curve(const Model& model,
                                      const std::vector<MultimodalSequence>& data,
                                      const std::vector<int>& layers,
                                      const std::vector<double>& prune_ratios, uint64_t seed,
                                      double tau, int threads) {
    const InfoPruneCurve curve =
        info_prune_curve(model, data, layers, prune_ratios, seed, tau, threads);
    ExperimentResult res;
    res.id = "info-prune";
    CsvBuilder csv({"layer", "prune_ratio", "informed_accuracy", "random_accuracy",
                    "baseline_accuracy"});
    for (size_t li = 0; li < curve.layers.size(); ++li)
        for (size_t ri = 0; ri < curve.prune_ratios.size(); ++ri)
            csv.row({format_int(curve.layers[li]), format_double(curve.prune_ratios[ri]),
                     format_double(curve.informed_acc.at(li, ri)),
                     format_double(curve.random_acc.at(li, ri)),
                     format_double(curve.baseline_acc)});
    res.csv_files.emplace_back("info_prune_accuracy.csv", csv.str());
    res.csv_files.emplace_back("info_prune_stats.csv", profile_stats_csv(curve.profile));

    for (size_t ri = 0; ri < curve.prune_ratios.size(); ++ri) {
        std::vector<SvgSeries> series(2);
        series[0].label = "informed";
        series[1].label = "random";
        for (size_t li = 0; li < curve.layers.size(); ++li) {
            series[0].x.push_back(curve.layers[li]);
            series[0].y.push_back(curve.informed_acc.at(li, ri));
            series[1].x.push_back(curve.layers[li]);
            series[1].y.push_back(curve.random_acc.at(li, ri));
        }
        res.svg_files.emplace_back(
            "info_prune_ratio" + format_int(static_cast<long long>(ri)) + ".svg",
            line_plot_svg("accuracy after pruning " + format_double(curve.prune_ratios[ri]) +
                              " lowest-information",
                          "layer", "accuracy", series));
    }
    res.summary.emplace_back("baseline_accuracy", curve.baseline_acc);
    res.summary.emplace_back("detected_horizon",
                             curve.profile.horizon ? *curve.profile.horizon : -1);
    return res;
}

ExperimentResult run_strategy_eval(const Model& model,
                                   const std::vector<MultimodalSequence>& data,
                                   const std::vector<double>& retain_ratios,
                                   const std::vector<int>& layers, uint64_t seed, double tau,
                                   int threads) {
    const std::vector<Strategy> strategies = {Strategy::Random, Strategy::AttentionTopK,
                                              Strategy::MaxMinDiversity,
                                              Strategy::LowDuplication};
    const StrategyEval eval =
        strategy_eval(model, data, strategies, retain_ratios, layers, seed, tau, threads);
    ExperimentResult res;
    res.id = "strategy-eval";
    CsvBuilder csv({"strategy", "retain_ratio", "layer", "mean_retained_information"});
    for (size_t sj = 0; sj < strategies.size(); ++sj)
        for (size_t ri = 0; ri < retain_ratios.size(); ++ri)
            for (size_t li = 0; li < layers.size(); ++li) {
                if (strategies[sj] == Strategy::AttentionTopK && layers[li] == 0) continue;
                csv.row({strategy_name(strategies[sj]), format_double(retain_ratios[ri]),
                         format_int(layers[li]), format_double(eval.retained[sj].at(li, ri))});
            }
    res.csv_files.emplace_back("strategy_retained_information.csv", csv.str());
    res.csv_files.emplace_back("strategy_profile_stats.csv", profile_stats_csv(eval.profile));

    for (size_t ri = 0; ri < retain_ratios.size(); ++ri) {
        std::vector<SvgSeries> series;
        for (size_t sj = 0; sj < strategies.size(); ++sj) {
            SvgSeries s;
            s.label = strategy_name(strategies[sj]);
            for (size_t li = 0; li < layers.size(); ++li) {
                if (strategies[sj] == Strategy::AttentionTopK && layers[li] == 0) continue;
                s.x.push_back(layers[li]);
                s.y.push_back(eval.retained[sj].at(li, ri));
            }
            series.push_back(std::move(s));
        }
        res.svg_files.emplace_back(
            "strategy_retained_ratio" + format_int(static_cast<long long>(ri)) + ".svg",
            line_plot_svg("retained information, keep " + format_double(retain_ratios[ri]),
                          "layer", "retained information", series));
    }
    res.summary.emplace_back("detected_horizon",
                             eval.profile.horizon ? *eval.profile.horizon : -1);
    return res;
}

ExperimentResult run_withdraw_sweep(
    const Model& model,
    const std::vector<std::pair<std::string, std::vector<MultimodalSequence>>>& datasets,
    double tau, int threads) {
    ExperimentResult res;
    res.id = "withdraw";
    CsvBuilder csv({"dataset", "layer", "withdraw_accuracy", "baseline_accuracy",
                    "mean_information", "mean_abs_information"});
    std::vector<SvgSeries> acc_series;
    for (const auto& [label, data] : datasets) {
        const WithdrawCurve curve = withdraw_sweep(model, data, label, tau, true, threads);
        SvgSeries s;
        s.label = label;
        for (size_t i = 0; i < curve.withdraw_acc.size(); ++i) {
            csv.row({label, format_int(static_cast<long long>(i)),
                     format_double(curve.withdraw_acc[i]), format_double(curve.baseline_acc),
                     format_double(curve.profile.stats[i].mean),
                     format_double(curve.profile.mean_abs[i])});
            s.x.push_back(static_cast<double>(i));
            s.y.push_back(curve.withdraw_acc[i]);
        }
        acc_series.push_back(std::move(s));
        res.summary.emplace_back(label + "_baseline_accuracy", curve.baseline_acc);
        res.summary.emplace_back(label + "_empirical_horizon",
                                 curve.empirical_horizon ? *curve.empirical_horizon : -1);
        res.summary.emplace_back(label + "_detected_horizon",
                                 curve.profile.horizon ? *curve.profile.horizon : -1);
    }
    res.csv_files.emplace_back("withdraw_accuracy.csv", csv.str());
    res.svg_files.emplace_back(
        "withdraw_accuracy.svg",
        line_plot_svg("accuracy when withdrawing all visual tokens", "layer", "accuracy",
                      acc_series));
    return res;
}

ExperimentResult run_schedule_bench(const Model& model,
                                    const std::vector<MultimodalSequence>& data,
                                    const std::vector<PruneSchedule>& schedules, int threads) {
    const auto rows = schedule_bench(model, data, schedules, threads);
    ExperimentResult res;
    res.id = "schedule-bench";
    CsvBuilder csv({"method", "accuracy", "relative_accuracy_pct", "flops_T", "storage_MiB",
                    "avg_visual_tokens"});
    for (const auto& r : rows) {
        csv.row({r.name, format_double(r.acc), format_double(r.rel_acc),
                 format_double(r.cost.total_tflops()), format_double(r.cost.storage_mib()),
                 format_double(r.cost.avg_visual_tokens())});
        res.summary.emplace_back(r.name + "_accuracy", r.acc);
        res.summary.emplace_back(r.name + "_flops_T", r.cost.total_tflops());
    }
    res.csv_files.emplace_back("schedule_bench.csv", csv.str());
    return res;
}

ExperimentResult run_capacity_compare(const std::vector<CapacityEntry>& entries, double tau,
                                      int threads) {
    ExperimentResult res;
    res.id = "capacity";
    CsvBuilder csv({"model", "dataset", "empirical_horizon", "detected_horizon",
                    "baseline_accuracy"});
    for (const auto& entry : entries) {
        for (const auto& [dlabel, data] : entry.datasets) {
            const WithdrawCurve curve =
                withdraw_sweep(entry.model, data, dlabel, tau, true, threads);
            csv.row({entry.label, dlabel,
                     format_int(curve.empirical_horizon ? *curve.empirical_horizon : -1),
                     format_int(curve.profile.horizon ? *curve.profile.horizon : -1),
                     format_double(curve.baseline_acc)});
            res.summary.emplace_back(entry.label + "_" + dlabel + "_empirical_horizon",
                                     curve.empirical_horizon ? *curve.empirical_horizon : -1);
        }
    }
    res.csv_files.emplace_back("capacity_horizons.csv", csv.str());
    return res;
}

}  // namespace tlens
