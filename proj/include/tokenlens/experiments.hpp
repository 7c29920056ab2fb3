// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tokenlens/efficiency.hpp"
#include "tokenlens/information.hpp"
#include "tokenlens/model.hpp"
#include "tokenlens/pruning.hpp"
#include "tokenlens/tasks.hpp"

namespace tlens {

struct ExperimentResult {
    std::string id;
    std::vector<std::pair<std::string, std::string>> csv_files;  // filename -> content
    std::vector<std::pair<std::string, std::string>> svg_files;
    std::vector<std::pair<std::string, double>> summary;

    double summary_value(const std::string& key) const;
};

// Mean argmax-accuracy of the first answer token.
double accuracy(const Model& model, const std::vector<MultimodalSequence>& data,
                int threads = 1);

// Per-sample profiles aggregated per the dataset convention: each sample's
// profile is computed independently, then per-layer statistics are averaged.
struct DatasetProfile {
    std::vector<LayerStats> stats;            // length L+1
    std::vector<double> mean_abs;             // mean over samples of mean_k |I_i(k)|
    std::vector<double> text_baseline;        // averaged
    std::optional<int> horizon;               // detect_horizon at the given tau
};
DatasetProfile dataset_profile(const Model& model, const std::vector<MultimodalSequence>& data,
                               double tau = kDefaultHorizonTau,
                               int persistence = kDefaultHorizonPersistence, int threads = 1);
DatasetProfile aggregate_profile_stats(const std::vector<InformationProfile>& profiles,
                                       double tau = kDefaultHorizonTau,
                                       int persistence = kDefaultHorizonPersistence);

// --- E1: accuracy after dropping low-information tokens ---------------------
struct InfoPruneCurve {
    std::vector<int> layers;
    std::vector<double> prune_ratios;
    Mat<double> informed_acc;  // layers x ratios
    Mat<double> random_acc;    // same shape, equal kept counts
    double baseline_acc = 0.0;
    DatasetProfile profile;
};
InfoPruneCurve info_prune_curve(const Model& model, const std::vector<MultimodalSequence>& data,
                                const std::vector<int>& layers,
                                const std::vector<double>& prune_ratios, uint64_t seed,
                                double tau = kDefaultHorizonTau, int threads = 1);

// --- E2: retained information per strategy ----------------------------------
struct StrategyEval {
    std::vector<Strategy> strategies;
    std::vector<double> retain_ratios;
    std::vector<int> layers;
    // retained[s] is layers x ratios of mean retained information.
    std::vector<Mat<double>> retained;
    DatasetProfile profile;
};
StrategyEval strategy_eval(const Model& model, const std::vector<MultimodalSequence>& data,
                           const std::vector<Strategy>& strategies,
                           const std::vector<double>& retain_ratios,
                           const std::vector<int>& layers, uint64_t seed,
                           double tau = kDefaultHorizonTau, int threads = 1);

// --- E3: withdraw-all accuracy per layer ------------------------------------
struct WithdrawCurve {
    std::string label;
    double baseline_acc = 0.0;
    std::vector<double> withdraw_acc;  // per boundary 0..L
    DatasetProfile profile;            // stats empty when profiles are skipped
    // First boundary whose withdraw accuracy is within one point of baseline.
    std::optional<int> empirical_horizon;
};
WithdrawCurve withdraw_sweep(const Model& model, const std::vector<MultimodalSequence>& data,
                             const std::string& label, double tau = kDefaultHorizonTau,
                             bool with_profile = true, int threads = 1);

// --- E4: schedule benchmark ---------------------------------------------------
struct ScheduleBenchRow {
    std::string name;
    double acc = 0.0;
    double rel_acc = 0.0;  // percent of baseline
    CostReport cost;
};
// Random/LowDuplication action seeds are re-derived per sample from the
// action seed and the sample index.
std::vector<ScheduleBenchRow> schedule_bench(const Model& model,
                                             const std::vector<MultimodalSequence>& data,
                                             const std::vector<PruneSchedule>& schedules,
                                             int threads = 1);

// --- experiment runners (CSV/SVG wrappers, ids E1..E5) ----------------------
ExperimentResult run_info_prune_curve(const Model& model,
                                      const std::vector<MultimodalSequence>& data,
                                      const std::vector<int>& layers,
                                      const std::vector<double>& prune_ratios, uint64_t seed,
                                      double tau, int threads);
ExperimentResult run_strategy_eval(const Model& model,
                                   const std::vector<MultimodalSequence>& data,
                                   const std::vector<double>& retain_ratios,
                                   const std::vector<int>& layers, uint64_t seed, double tau,
                                   int threads);
ExperimentResult run_withdraw_sweep(
    const Model& model,
    const std::vector<std::pair<std::string, std::vector<MultimodalSequence>>>& datasets,
    double tau, int threads);
ExperimentResult run_schedule_bench(const Model& model,
                                    const std::vector<MultimodalSequence>& data,
                                    const std::vector<PruneSchedule>& schedules, int threads);
// Each model evaluates its own width-matched datasets.
struct CapacityEntry {
    std::string label;
    Model model;
    std::vector<std::pair<std::string, std::vector<MultimodalSequence>>> datasets;
};
ExperimentResult run_capacity_compare(const std::vector<CapacityEntry>& entries, double tau,
                                      int threads);

// Profile CSV export used by the profile command and E runners:
// (sample_id, layer, token_index, information) and per-layer stats.
std::string profile_values_csv(const std::vector<InformationProfile>& profiles);
std::string profile_stats_csv(const DatasetProfile& agg);

}  // namespace tlens
