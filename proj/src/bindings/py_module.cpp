// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tokenlens/checkpoint_io.hpp"
#include "tokenlens/efficiency.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/experiments.hpp"
#include "tokenlens/information.hpp"
#include "tokenlens/model.hpp"
#include "tokenlens/presets.hpp"
#include "tokenlens/pruning.hpp"
#include "tokenlens/tasks.hpp"

namespace py = pybind11;
using namespace tlens;

namespace {

py::array_t<double> mat_to_numpy(const Mat<double>& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::memcpy(out.mutable_data(), m.a.data(), m.a.size() * sizeof(double));
    return out;
}

Mat<double> numpy_to_mat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ConfigError("expected a 2-d array");
    Mat<double> m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(m.a.data(), a.data(), m.a.size() * sizeof(double));
    return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "visual-token information and pruning lab (C++ core)";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<IoError>(m, "IoError");

    py::enum_<Precision>(m, "Precision")
        .value("single", Precision::Single)
        .value("double", Precision::Double);

    py::class_<ArchConfig>(m, "ArchConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ArchConfig::n_layers)
        .def_readwrite("width", &ArchConfig::width)
        .def_readwrite("n_heads", &ArchConfig::n_heads)
        .def_readwrite("mlp_width", &ArchConfig::mlp_width)
        .def_readwrite("vocab_size", &ArchConfig::vocab_size)
        .def_readwrite("max_seq_len", &ArchConfig::max_seq_len)
        .def_readwrite("precision_mode", &ArchConfig::precision_mode)
        .def_readwrite("norm_epsilon", &ArchConfig::norm_epsilon)
        .def("validate", &ArchConfig::validate);

    py::class_<MultimodalSequence>(m, "MultimodalSequence")
        .def(py::init<>())
        .def_readwrite("prefix_ids", &MultimodalSequence::prefix_ids)
        .def_readwrite("question_ids", &MultimodalSequence::question_ids)
        .def_readwrite("label", &MultimodalSequence::label)
        .def_readwrite("position_ids", &MultimodalSequence::position_ids)
        .def_property(
            "visual", [](const MultimodalSequence& s) { return mat_to_numpy(s.visual); },
            [](MultimodalSequence& s, const py::array_t<double>& a) { s.visual = numpy_to_mat(a); })
        .def("assign_default_positions", &MultimodalSequence::assign_default_positions)
        .def("n_visual", &MultimodalSequence::n_visual)
        .def("n_text", &MultimodalSequence::n_text);

    py::class_<PrefillResult>(m, "PrefillResult")
        .def_readonly("probs", &PrefillResult::probs)
        .def_readonly("mac_count", &PrefillResult::mac_count);

    py::class_<Model>(m, "Model")
        .def_static("init_random", &Model::init_random, py::arg("arch"), py::arg("seed"))
        .def_static("init_zero", &Model::init_zero, py::arg("arch"))
        .def_property_readonly("arch", &Model::arch)
        .def("weight_checksum", &Model::weight_checksum)
        .def("forward_prefill",
             [](const Model& model, const MultimodalSequence& seq) {
                 return model.forward_prefill(seq);
             })
        .def("attention_scores",
             [](const Model& model, const MultimodalSequence& seq, int layer) {
                 return mat_to_numpy(model.attention_scores(seq, layer));
             })
        .def("save", [](const Model& model, const std::string& path) {
            save_checkpoint(model, path);
        });

    m.def("load_checkpoint",
          [](const std::string& path) { return load_checkpoint(path); });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("batch", &TrainConfig::batch)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("momentum", &TrainConfig::momentum);

    m.def("train",
          [](const Model& model, const std::vector<MultimodalSequence>& data,
             const TrainConfig& cfg) {
              auto [trained, report] = train(model, data, cfg);
              return py::make_tuple(trained, report.loss_trace);
          });

    m.def("loss_value", &loss_value);

    // information
    py::class_<InformationProfile>(m, "InformationProfile")
        .def_property_readonly(
            "values", [](const InformationProfile& p) { return mat_to_numpy(p.values); })
        .def_readonly("text_baseline", &InformationProfile::text_baseline)
        .def_readonly("label", &InformationProfile::label);

    m.def("text_only_prob", &text_only_prob);
    m.def("token_information", &token_information);
    m.def("information_profile", &information_profile);
    m.def("detect_horizon",
          [](const std::vector<std::pair<double, double>>& stats, double tau, int persistence) {
              std::vector<LayerStats> s;
              for (auto [mean, var] : stats) s.push_back({mean, var});
              const auto h = detect_horizon(s, tau, persistence);
              return h ? py::object(py::int_(*h)) : py::object(py::none());
          });
    m.def("profile_stats", [](const InformationProfile& p) {
        std::vector<std::pair<double, double>> out;
        for (const auto& s : profile_stats(p)) out.emplace_back(s.mean, s.variance);
        return out;
    });
    m.def("retained_information", &retained_information, py::arg("profile"), py::arg("layer"),
          py::arg("kept"), py::arg("clamp_negative") = false);

    // pruning
    py::enum_<Strategy>(m, "Strategy")
        .value("random", Strategy::Random)
        .value("attention_topk", Strategy::AttentionTopK)
        .value("maxmin_diversity", Strategy::MaxMinDiversity)
        .value("low_duplication", Strategy::LowDuplication)
        .value("withdraw", Strategy::Withdraw);

    py::class_<PruneAction>(m, "PruneAction")
        .def(py::init([](int layer, Strategy strategy, double ratio, uint64_t seed) {
                 return PruneAction{layer, strategy, ratio, seed};
             }),
             py::arg("layer"), py::arg("strategy"), py::arg("retain_ratio"),
             py::arg("seed") = 0)
        .def_readwrite("layer", &PruneAction::layer)
        .def_readwrite("strategy", &PruneAction::strategy)
        .def_readwrite("retain_ratio", &PruneAction::retain_ratio)
        .def_readwrite("seed", &PruneAction::seed);

    py::class_<PruneSchedule>(m, "PruneSchedule")
        .def(py::init<>())
        .def_readwrite("name", &PruneSchedule::name)
        .def_readwrite("actions", &PruneSchedule::actions)
        .def("validate", &PruneSchedule::validate, py::arg("n_layers") = -1)
        .def("to_text", &PruneSchedule::to_text)
        .def_static("from_text", &PruneSchedule::from_text);

    m.def("schedule_preset", &schedule_preset);
    m.def("schedule_preset_names", &schedule_preset_names);
    m.def("arch_preset", &arch_preset);

    m.def("retain_count", &retain_count);
    m.def("select_random", &select_random);
    m.def("select_attention_topk", &select_attention_topk);
    m.def("select_maxmin_diversity",
          [](const py::array_t<double>& features, const std::vector<int>& alive, double ratio) {
              return select_maxmin_diversity(numpy_to_mat(features), alive, ratio);
          });
    m.def("select_low_duplication",
          [](const py::array_t<double>& features, const std::vector<int>& alive, double ratio,
             uint64_t seed) {
              return select_low_duplication(numpy_to_mat(features), alive, ratio, seed);
          });

    py::class_<ScheduleRunResult>(m, "ScheduleRunResult")
        .def_readonly("result", &ScheduleRunResult::result)
        .def_readonly("alive_after_boundary", &ScheduleRunResult::alive_after_boundary)
        .def_readonly("retained_counts", &ScheduleRunResult::retained_counts);
    m.def("apply_schedule", &apply_schedule);

    // efficiency
    py::class_<CostReport>(m, "CostReport")
        .def_readonly("total_flops", &CostReport::total_flops)
        .def_readonly("per_layer_flops", &CostReport::per_layer_flops)
        .def_readonly("kv_cache_bytes", &CostReport::kv_cache_bytes)
        .def_readonly("token_count_per_layer", &CostReport::token_count_per_layer)
        .def("total_tflops", &CostReport::total_tflops)
        .def("storage_mib", &CostReport::storage_mib);
    m.def("flops_estimate", &flops_estimate, py::arg("arch"), py::arg("schedule"),
          py::arg("n_visual"), py::arg("n_text"), py::arg("bytes_per_element") = 2);
    m.def("calibrate_text_budget", &calibrate_text_budget);

    // tasks
    py::enum_<TaskKind>(m, "TaskKind")
        .value("lookup", TaskKind::Lookup)
        .value("majority", TaskKind::Majority);

    py::class_<TaskSpec>(m, "TaskSpec")
        .def(py::init<>())
        .def_readwrite("kind", &TaskSpec::kind)
        .def_readwrite("grid_side", &TaskSpec::grid_side)
        .def_readwrite("n_colors", &TaskSpec::n_colors)
        .def_readwrite("n_samples", &TaskSpec::n_samples)
        .def_readwrite("seed", &TaskSpec::seed);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("spec", &Dataset::spec)
        .def("__len__", [](const Dataset& d) { return d.samples.size(); });

    m.def("gen_task", &gen_task);
    m.def("gen_task_split", &gen_task_split);
    m.def("to_sequences", &to_sequences);

    m.def("accuracy", &accuracy, py::arg("model"), py::arg("data"), py::arg("threads") = 1);

    m.attr("__version__") = "0.1.0";
}
