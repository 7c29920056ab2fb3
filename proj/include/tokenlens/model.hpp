// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tokenlens/arch.hpp"
#include "tokenlens/mat.hpp"
#include "tokenlens/sequence.hpp"

namespace tlens {

// Residual-stream snapshot at a layer boundary. Boundary 0 is the embedded
// input before decoder layer 1; boundary i is the state after the first i
// layers. Text rows keep their original split around the visual block, and
// position ids are always the original ones (pruned sequences are never
// renumbered).
struct LayerCheckpoint {
    int layer_index = 0;
    int n_prefix = 0;  // leading rows of hidden_text that precede the visual block
    Mat<double> hidden_visual;  // |alive| x width
    Mat<double> hidden_text;    // n_text x width
    std::vector<int> alive_visual;        // original 0-based visual indices, sorted
    std::vector<int> text_position_ids;   // original ids, prefix rows then question rows
    std::vector<int> visual_position_ids; // original ids of alive visual rows

    int n_question() const { return hidden_text.rows - n_prefix; }
};

struct CaptureFlags {
    bool all_checkpoints = false;
    std::vector<int> checkpoint_layers;  // boundaries 0..L
    std::vector<int> attention_layers;   // decoder layers 1..L, head-averaged
};

struct PrefillResult {
    std::vector<double> probs;  // p(g1) over the vocabulary, final text position
    std::vector<LayerCheckpoint> checkpoints;
    std::vector<std::pair<int, Mat<double>>> attention;  // (layer, post-softmax, head-avg)
    uint64_t mac_count = 0;  // decoder-layer multiply-accumulates

    const LayerCheckpoint& checkpoint_at(int layer) const;
    const Mat<double>& attention_at(int layer) const;
};

// What to do with the visual hidden columns when resuming from a checkpoint.
struct VisualTreatment {
    enum class Kind { KeepAll, ZeroMask, Drop };
    Kind kind = Kind::KeepAll;
    std::vector<uint8_t> mask;  // ZeroMask: one 0/1 entry per alive column
    std::vector<int> kept;      // Drop: original indices to keep, subset of alive

    static VisualTreatment keep_all() { return {}; }
    static VisualTreatment zero_mask(std::vector<uint8_t> m) {
        VisualTreatment t;
        t.kind = Kind::ZeroMask;
        t.mask = std::move(m);
        return t;
    }
    static VisualTreatment drop(std::vector<int> k) {
        VisualTreatment t;
        t.kind = Kind::Drop;
        t.kept = std::move(k);
        return t;
    }
};

struct TrainConfig {
    long steps = 0;
    double lr = 0.05;
    int batch = 16;
    uint64_t seed = 0;
    double momentum = 0.0;  // 0 disables the velocity buffer
};

struct TrainReport {
    std::vector<double> loss_trace;  // mean batch cross-entropy per step
};

// Fires at every layer boundary during a hooked forward. Returning a kept set
// drops all other visual columns before the next layer; returning nullopt
// leaves the sequence unchanged.
struct BoundaryContext {
    int layer = 0;                       // boundary index 0..L
    const std::vector<int>* alive = nullptr;
    Mat<double> visual_hidden;           // |alive| x width at this boundary
    std::vector<double> attention_to_alive;  // last text row -> alive columns, head-avg
    bool attention_available = false;
};
using BoundaryHook = std::function<std::optional<std::vector<int>>(const BoundaryContext&)>;

struct ModelImpl;

// Immutable decoder checkpoint: weights plus architecture. Copies share
// state; training returns a fresh model.
class Model {
public:
    Model() = default;

    static Model init_random(const ArchConfig& arch, uint64_t seed);
    // All projections and the unembedding zeroed, gains 1; the output
    // distribution is uniform regardless of input.
    static Model init_zero(const ArchConfig& arch);

    bool valid() const { return impl_ != nullptr; }
    const ArchConfig& arch() const;
    uint64_t weight_checksum() const;

    PrefillResult forward_prefill(const MultimodalSequence& seq,
                                  const CaptureFlags& capture = {}) const;
    PrefillResult resume_forward(const LayerCheckpoint& state,
                                 const VisualTreatment& treatment) const;
    // Head-averaged post-softmax attention of decoder layer `layer` (1..L)
    // over the unpruned sequence.
    Mat<double> attention_scores(const MultimodalSequence& seq, int layer) const;
    // Forward that consults `hook` at each boundary; attention is made
    // available to the hook at the listed layers.
    PrefillResult forward_with_hook(const MultimodalSequence& seq,
                                    const std::vector<int>& attention_boundaries,
                                    const BoundaryHook& hook) const;

    // Serialization / test access. Tensor order is fixed and documented in
    // checkpoint_io.hpp.
    std::vector<std::string> tensor_names() const;
    std::vector<double> tensor_data(size_t index) const;
    void set_tensor_data(size_t index, const std::vector<double>& values);
    std::vector<float> tensor_data_f32(size_t index) const;

    // Only meaningful mutation: nudging weights for finite-difference tests.
    // Requires double precision mode.
    void perturb_weight(size_t tensor_index, size_t element, double delta);

private:
    friend std::pair<Model, TrainReport> train(const Model&,
                                               const std::vector<MultimodalSequence>&,
                                               const TrainConfig&);
    friend double loss_value(const Model&, const MultimodalSequence&);
    friend std::vector<std::pair<std::string, std::vector<double>>> loss_gradients(
        const Model&, const MultimodalSequence&);
    std::shared_ptr<ModelImpl> impl_;
};

// Mini-batch gradient descent on the first-answer-token cross-entropy.
// Deterministic for a given seed; bit-identical across runs in double mode.
std::pair<Model, TrainReport> train(const Model& model,
                                    const std::vector<MultimodalSequence>& dataset,
                                    const TrainConfig& cfg);

// Cross-entropy of the label at the last position (used by gradient tests).
double loss_value(const Model& model, const MultimodalSequence& seq);
// Analytic gradients of loss_value w.r.t. every weight tensor, in the
// serialization tensor order. Double precision only.
std::vector<std::pair<std::string, std::vector<double>>> loss_gradients(
    const Model& model, const MultimodalSequence& seq);

}  // namespace tlens
