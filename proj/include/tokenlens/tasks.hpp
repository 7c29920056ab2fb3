// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokenlens/arch.hpp"
#include "tokenlens/sequence.hpp"

namespace tlens {

enum class TaskKind { Lookup, Majority };

const char* task_name(TaskKind k);
TaskKind task_from_name(const std::string& name);

// Lookup: question names a cell (r, c), answer is that cell's color —
// cell-level detail. Majority: answer is the most frequent color in the
// grid — a global property. One axis of visual complexity.
struct TaskSpec {
    TaskKind kind = TaskKind::Lookup;
    int grid_side = 4;
    int n_colors = 4;
    int n_samples = 1000;
    uint64_t seed = 0;

    void validate() const;
    int n_visual() const { return grid_side * grid_side; }
};

// Token id layout shared by both tasks: colors (answers) first, then row and
// column query tokens, the majority query token, and a BOS prefix token.
struct TaskVocab {
    int grid_side;
    int n_colors;

    int color(int c) const { return c; }
    int row_token(int r) const { return n_colors + r; }
    int col_token(int c) const { return n_colors + grid_side + c; }
    int majority_token() const { return n_colors + 2 * grid_side; }
    int bos_token() const { return n_colors + 2 * grid_side + 1; }
    int required_vocab() const { return n_colors + 2 * grid_side + 2; }
    // One-hot channels: row, column, color.
    int required_width() const { return 2 * grid_side + n_colors; }
};

struct GridSample {
    std::vector<uint8_t> grid;  // grid_side^2 colors, row-major
    int q_row = -1;             // -1/-1 marks a majority question
    int q_col = -1;
    uint8_t label = 0;
};

struct Dataset {
    TaskSpec spec;
    std::vector<GridSample> samples;
};

// Deterministic per seed. Majority grids are resampled until the most
// frequent color is unique, so labels never depend on the tie rule.
Dataset gen_task(const TaskSpec& spec);

// Train and held-out sets with no shared (grid, question) pair.
std::pair<Dataset, Dataset> gen_task_split(const TaskSpec& spec, int n_eval);

// Cell (r, c) with color v maps to channels {r, G+c, 2G+v} set to 1.
MultimodalSequence to_sequence(const GridSample& sample, const TaskSpec& spec, int width);
std::vector<MultimodalSequence> to_sequences(const Dataset& ds, int width);

// Self-describing binary dataset file (header + grids + questions + labels).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace tlens
