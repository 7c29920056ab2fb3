// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "tokenlens/model.hpp"

namespace tlens {

// Checkpoint file layout (little-endian):
//   8 bytes  magic "TLNSCKPT"
//   u32      format version (1)
//   u32      header length
//   bytes    header: "key=value\n" lines, keys sorted
//            (max_seq_len, mlp_width, n_heads, n_layers, norm_epsilon,
//             precision_mode, vocab_size, width)
//   u64      blob length in bytes
//   bytes    raw float32 tensors in the fixed order of Model::tensor_names():
//            tok_embed, pos_embed,
//            layer{i}.{attn_norm_g,wq,wk,wv,wo,mlp_norm_g,w_gate,w_up,w_down},
//            final_norm_g, unembed
//   u64      FNV-1a 64 checksum of the blob
void save_checkpoint(const Model& model, const std::string& path);

// Loads and verifies. When `expected` is given, its shape fields must match
// the header exactly (the stored precision_mode may be overridden by the
// caller's, since the blob is float32 either way).
Model load_checkpoint(const std::string& path,
                      const std::optional<ArchConfig>& expected = std::nullopt);

std::string arch_header_text(const ArchConfig& arch);
ArchConfig parse_arch_header(const std::string& text);

}  // namespace tlens
