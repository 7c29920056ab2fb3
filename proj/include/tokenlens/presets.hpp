// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "tokenlens/arch.hpp"
#include "tokenlens/model.hpp"
#include "tokenlens/pruning.hpp"

namespace tlens {

// Architecture presets: the two 7B reference shapes used for cost reports
// plus the trainable toy sizes.
ArchConfig arch_preset(const std::string& name);
std::vector<std::string> arch_preset_names();
// Default visual token count paired with an arch preset for cost reports.
int default_visual_tokens(const std::string& arch_name);

// Named pruning schedules: the published per-model settings (llava-7b
// budgets 192/64 and qwen 50%) plus "none".
PruneSchedule schedule_preset(const std::string& name);
std::vector<std::string> schedule_preset_names();
bool is_schedule_preset(const std::string& name);

// Training recipe bundled with a toy arch preset.
struct TrainRecipe {
    ArchConfig arch;
    TrainConfig train;
};
TrainRecipe train_recipe(const std::string& arch_name);

}  // namespace tlens
