// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/presets.hpp"

#include <map>

#include "tokenlens/errors.hpp"

namespace tlens {

ArchConfig arch_preset(const std::string& name) {
    ArchConfig a;
    if (name == "llava-7b") {
        a.n_layers = 32;
        a.width = 4096;
        a.n_heads = 32;
        a.mlp_width = 11008;
        a.vocab_size = 32000;
        a.max_seq_len = 4096;
    } else if (name == "qwen25vl-7b") {
        a.n_layers = 28;
        a.width = 3584;
        a.n_heads = 28;
        a.mlp_width = 18944;
        a.vocab_size = 152064;
        a.max_seq_len = 8192;
    } else if (name == "small") {
        a.n_layers = 4;
        a.width = 32;
        a.n_heads = 4;
        a.mlp_width = 64;
        a.vocab_size = 16;
        a.max_seq_len = 64;
    } else if (name == "base") {
        a.n_layers = 6;
        a.width = 64;
        a.n_heads = 4;
        a.mlp_width = 128;
        a.vocab_size = 16;
        a.max_seq_len = 64;
    } else if (name == "large") {
        a.n_layers = 8;
        a.width = 96;
        a.n_heads = 6;
        a.mlp_width = 192;
        a.vocab_size = 16;
        a.max_seq_len = 64;
    } else {
        throw ConfigError("unknown arch preset: " + name);
    }
    return a;
}

std::vector<std::string> arch_preset_names() {
    return {"llava-7b", "qwen25vl-7b", "small", "base", "large"};
}

int default_visual_tokens(const std::string& arch_name) {
    if (arch_name == "llava-7b") return 576;
    if (arch_name == "qwen25vl-7b") return 576;
    return 16;
}

namespace {

PruneSchedule make(const std::string& name, std::vector<PruneAction> actions) {
    PruneSchedule s;
    s.name = name;
    s.actions = std::move(actions);
    return s;
}

const std::map<std::string, PruneSchedule>& schedule_table() {
    using S = Strategy;
    static const std::map<std::string, PruneSchedule> table = {
        {"none", make("none", {})},
        // llava-7b, average retention 192 of 576
        {"dart-192", make("dart-192", {{2, S::LowDuplication, 0.29, 0}})},
        {"dart-vtw-192",
         make("dart-vtw-192", {{2, S::LowDuplication, 0.44, 0}, {21, S::Withdraw, 0.0, 0}})},
        {"dart-random-192",
         make("dart-random-192", {{2, S::LowDuplication, 0.44, 0}, {20, S::Random, 0.07, 0}})},
        {"divprune-192", make("divprune-192", {{0, S::MaxMinDiversity, 0.33, 0}})},
        {"divprune-vtw-192",
         make("divprune-vtw-192", {{0, S::MaxMinDiversity, 0.49, 0}, {21, S::Withdraw, 0.0, 0}})},
        {"divprune-random-192",
         make("divprune-random-192", {{0, S::MaxMinDiversity, 0.49, 0}, {20, S::Random, 0.07, 0}})},
        {"fastv-192", make("fastv-192", {{3, S::AttentionTopK, 0.26, 0}})},
        {"fastv-vtw-192",
         make("fastv-vtw-192", {{3, S::AttentionTopK, 0.41, 0}, {21, S::Withdraw, 0.0, 0}})},
        {"fastv-random-192",
         make("fastv-random-192", {{3, S::AttentionTopK, 0.41, 0}, {20, S::Random, 0.06, 0}})},
        // llava-7b, average retention 64 of 576
        {"dart-64", make("dart-64", {{2, S::LowDuplication, 0.05, 0}})},
        {"dart-vtw-64",
         make("dart-vtw-64", {{1, S::LowDuplication, 0.10, 0}, {26, S::Withdraw, 0.0, 0}})},
        {"dart-random-64",
         make("dart-random-64", {{1, S::LowDuplication, 0.10, 0}, {20, S::Random, 0.05, 0}})},
        {"divprune-64", make("divprune-64", {{0, S::MaxMinDiversity, 0.11, 0}})},
        {"divprune-vtw-64",
         make("divprune-vtw-64", {{0, S::MaxMinDiversity, 0.17, 0}, {21, S::Withdraw, 0.0, 0}})},
        {"divprune-random-64",
         make("divprune-random-64", {{0, S::MaxMinDiversity, 0.17, 0}, {20, S::Random, 0.02, 0}})},
        {"fastv-64", make("fastv-64", {{3, S::AttentionTopK, 0.02, 0}})},
        {"fastv-vtw-64",
         make("fastv-vtw-64", {{2, S::AttentionTopK, 0.06, 0}, {26, S::Withdraw, 0.0, 0}})},
        {"fastv-random-64",
         make("fastv-random-64", {{2, S::AttentionTopK, 0.06, 0}, {20, S::Random, 0.03, 0}})},
        // qwen25vl-7b, average retention 50%
        {"qwen-dart-50", make("qwen-dart-50", {{2, S::LowDuplication, 0.46, 0}})},
        {"qwen-dart-vtw-50",
         make("qwen-dart-vtw-50", {{2, S::LowDuplication, 0.49, 0}, {26, S::Withdraw, 0.0, 0}})},
        {"qwen-dart-random-50",
         make("qwen-dart-random-50", {{2, S::LowDuplication, 0.49, 0}, {25, S::Random, 0.25, 0}})},
        {"qwen-divprune-50", make("qwen-divprune-50", {{0, S::MaxMinDiversity, 0.50, 0}})},
        {"qwen-divprune-vtw-50",
         make("qwen-divprune-vtw-50",
              {{0, S::MaxMinDiversity, 0.53, 0}, {26, S::Withdraw, 0.0, 0}})},
        {"qwen-divprune-random-50",
         make("qwen-divprune-random-50",
              {{0, S::MaxMinDiversity, 0.53, 0}, {25, S::Random, 0.25, 0}})},
    };
    return table;
}

}  // namespace

PruneSchedule schedule_preset(const std::string& name) {
    const auto& table = schedule_table();
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown schedule preset: " + name);
    return it->second;
}

std::vector<std::string> schedule_preset_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : schedule_table()) names.push_back(k);
    return names;
}

bool is_schedule_preset(const std::string& name) {
    return schedule_table().count(name) != 0;
}

TrainRecipe train_recipe(const std::string& arch_name) {
    TrainRecipe r;
    r.arch = arch_preset(arch_name);
    if (arch_name != "small" && arch_name != "base" && arch_name != "large")
        throw ConfigError("no training recipe for arch preset: " + arch_name);
    r.train.steps = 5000;
    r.train.lr = 0.02;
    r.train.batch = 64;
    r.train.momentum = 0.9;
    r.train.seed = 1;
    return r;
}

}  // namespace tlens
