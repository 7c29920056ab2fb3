// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/checkpoint_io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "tokenlens/csv.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/hash.hpp"

namespace tlens {

namespace {

constexpr char kMagic[8] = {'T', 'L', 'N', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

uint64_t get_u64(const std::string& s, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

}  // namespace

std::string arch_header_text(const ArchConfig& a) {
    // Keys emitted in sorted order.
    std::string h;
    h += "max_seq_len=" + format_int(a.max_seq_len) + "\n";
    h += "mlp_width=" + format_int(a.mlp_width) + "\n";
    h += "n_heads=" + format_int(a.n_heads) + "\n";
    h += "n_layers=" + format_int(a.n_layers) + "\n";
    h += "norm_epsilon=" + format_double(a.norm_epsilon) + "\n";
    h += std::string("precision_mode=") + precision_name(a.precision_mode) + "\n";
    h += "vocab_size=" + format_int(a.vocab_size) + "\n";
    h += "width=" + format_int(a.width) + "\n";
    return h;
}

ArchConfig parse_arch_header(const std::string& text) {
    std::map<std::string, std::string> kv;
    size_t start = 0;
    while (start < text.size()) {
        size_t nl = text.find('\n', start);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(start, nl - start);
        start = nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw IoError("corrupt checkpoint header line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError(std::string("checkpoint header missing key: ") + key);
        return it->second;
    };
    auto to_int = [&](const std::string& s) {
        int v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw IoError("bad integer in checkpoint header: " + s);
        return v;
    };
    ArchConfig a;
    a.max_seq_len = to_int(need("max_seq_len"));
    a.mlp_width = to_int(need("mlp_width"));
    a.n_heads = to_int(need("n_heads"));
    a.n_layers = to_int(need("n_layers"));
    a.norm_epsilon = std::stod(need("norm_epsilon"));
    a.precision_mode = precision_from_name(need("precision_mode"));
    a.vocab_size = to_int(need("vocab_size"));
    a.width = to_int(need("width"));
    a.validate();
    return a;
}

void save_checkpoint(const Model& model, const std::string& path) {
    const std::string header = arch_header_text(model.arch());
    std::string blob;
    const size_t n_tensors = model.tensor_names().size();
    for (size_t i = 0; i < n_tensors; ++i) {
        const std::vector<float> t = model.tensor_data_f32(i);
        const size_t off = blob.size();
        blob.resize(off + t.size() * sizeof(float));
        std::memcpy(blob.data() + off, t.data(), t.size() * sizeof(float));
    }
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(header.size()));
    out += header;
    put_u64(out, blob.size());
    out += blob;
    put_u64(out, fnv1a64(blob.data(), blob.size()));
    write_text_file(path, out);
}

Model load_checkpoint(const std::string& path, const std::optional<ArchConfig>& expected) {
    std::string data;
    try {
        data = read_text_file(path);
    } catch (const IoError&) {
        throw IoError("checkpoint not found: " + path);
    }
    if (data.size() < sizeof(kMagic) + 8 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("corrupt checkpoint header (bad magic): " + path);
    size_t off = sizeof(kMagic);
    const uint32_t version = get_u32(data, off);
    off += 4;
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t header_len = get_u32(data, off);
    off += 4;
    if (off + header_len + 8 > data.size()) throw IoError("truncated checkpoint: " + path);
    ArchConfig arch = parse_arch_header(data.substr(off, header_len));
    off += header_len;
    const uint64_t blob_len = get_u64(data, off);
    off += 8;
    if (off + blob_len + 8 > data.size()) throw IoError("truncated checkpoint blob: " + path);
    const char* blob = data.data() + off;
    off += blob_len;
    const uint64_t stored_sum = get_u64(data, off);
    if (fnv1a64(blob, blob_len) != stored_sum)
        throw IoError("checkpoint checksum mismatch: " + path);

    if (expected) {
        ArchConfig want = *expected;
        // Precision is a runtime choice; everything else must match.
        want.precision_mode = arch.precision_mode;
        if (!(want == arch))
            throw IoError("checkpoint architecture does not match the requested one: " + path);
        arch.precision_mode = expected->precision_mode;
    }

    Model model = Model::init_zero(arch);
    const auto names = model.tensor_names();
    size_t cursor = 0;
    for (size_t i = 0; i < names.size(); ++i) {
        const size_t count = model.tensor_data_f32(i).size();
        if (cursor + count * sizeof(float) > blob_len)
            throw IoError("truncated checkpoint blob: " + path);
        std::vector<double> vals(count);
        for (size_t j = 0; j < count; ++j) {
            float f;
            std::memcpy(&f, blob + cursor + j * sizeof(float), sizeof(float));
            vals[j] = static_cast<double>(f);
        }
        model.set_tensor_data(i, vals);
        cursor += count * sizeof(float);
    }
    if (cursor != blob_len) throw IoError("checkpoint blob has trailing bytes: " + path);
    return model;
}

}  // namespace tlens
