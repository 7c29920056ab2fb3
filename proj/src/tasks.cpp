// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/tasks.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <unordered_set>

#include "tokenlens/csv.hpp"
#include "tokenlens/errors.hpp"
#include "tokenlens/hash.hpp"
#include "tokenlens/rng.hpp"

namespace tlens {

const char* task_name(TaskKind k) { return k == TaskKind::Lookup ? "lookup" : "majority"; }

TaskKind task_from_name(const std::string& name) {
    if (name == "lookup") return TaskKind::Lookup;
    if (name == "majority") return TaskKind::Majority;
    throw ConfigError("unknown task: " + name);
}

void TaskSpec::validate() const {
    if (grid_side < 1) throw ConfigError("grid_side must be >= 1");
    if (n_colors < 2) throw ConfigError("n_colors must be >= 2");
    if (n_samples < 0) throw ConfigError("n_samples must be >= 0");
    if (n_colors > 250) throw ConfigError("n_colors too large for byte-coded grids");
}

namespace {

uint64_t sample_key(const GridSample& s) {
    uint64_t h = fnv1a64(s.grid.data(), s.grid.size());
    const int q[2] = {s.q_row, s.q_col};
    return fnv1a64(q, sizeof(q), h);
}

GridSample draw_sample(const TaskSpec& spec, Rng& rng) {
    const int cells = spec.n_visual();
    GridSample s;
    s.grid.resize(cells);
    if (spec.kind == TaskKind::Lookup) {
        for (int i = 0; i < cells; ++i)
            s.grid[i] = static_cast<uint8_t>(uniform_below(rng, spec.n_colors));
        s.q_row = static_cast<int>(uniform_below(rng, spec.grid_side));
        s.q_col = static_cast<int>(uniform_below(rng, spec.grid_side));
        s.label = s.grid[s.q_row * spec.grid_side + s.q_col];
        return s;
    }
    // Majority: resample until the most frequent color is unique.
    for (int attempt = 0; attempt < 10000; ++attempt) {
        for (int i = 0; i < cells; ++i)
            s.grid[i] = static_cast<uint8_t>(uniform_below(rng, spec.n_colors));
        std::vector<int> counts(spec.n_colors, 0);
        for (uint8_t c : s.grid) ++counts[c];
        int best = 0;
        for (int c = 1; c < spec.n_colors; ++c)
            if (counts[c] > counts[best]) best = c;
        bool unique = true;
        for (int c = 0; c < spec.n_colors; ++c)
            if (c != best && counts[c] == counts[best]) unique = false;
        if (unique) {
            s.label = static_cast<uint8_t>(best);
            return s;
        }
    }
    throw ConfigError("could not draw a tie-free majority grid (grid too small?)");
}

}  // namespace

Dataset gen_task(const TaskSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    Rng rng = make_rng(spec.seed);
    ds.samples.reserve(spec.n_samples);
    for (int i = 0; i < spec.n_samples; ++i) ds.samples.push_back(draw_sample(spec, rng));
    return ds;
}

std::pair<Dataset, Dataset> gen_task_split(const TaskSpec& spec, int n_eval) {
    spec.validate();
    Dataset train;
    train.spec = spec;
    Rng rng = make_rng(spec.seed);
    std::unordered_set<uint64_t> train_keys;
    train.samples.reserve(spec.n_samples);
    for (int i = 0; i < spec.n_samples; ++i) {
        GridSample s = draw_sample(spec, rng);
        train_keys.insert(sample_key(s));
        train.samples.push_back(std::move(s));
    }
    Dataset eval;
    eval.spec = spec;
    eval.spec.n_samples = n_eval;
    int guard = 0;
    while (static_cast<int>(eval.samples.size()) < n_eval) {
        GridSample s = draw_sample(spec, rng);
        if (train_keys.count(sample_key(s))) {
            if (++guard > 100 * n_eval + 10000)
                throw ConfigError("cannot build a disjoint held-out split; task space too small");
            continue;
        }
        eval.samples.push_back(std::move(s));
    }
    return {std::move(train), std::move(eval)};
}

MultimodalSequence to_sequence(const GridSample& sample, const TaskSpec& spec, int width) {
    const TaskVocab vocab{spec.grid_side, spec.n_colors};
    if (width < vocab.required_width())
        throw ConfigError("model width too small for the task encoding");
    MultimodalSequence seq;
    seq.prefix_ids = {vocab.bos_token()};
    const int cells = spec.n_visual();
    seq.visual = Mat<double>(cells, width);
    for (int r = 0; r < spec.grid_side; ++r) {
        for (int c = 0; c < spec.grid_side; ++c) {
            const int cell = r * spec.grid_side + c;
            double* row = seq.visual.row(cell);
            row[r] = 1.0;
            row[spec.grid_side + c] = 1.0;
            row[2 * spec.grid_side + sample.grid[cell]] = 1.0;
        }
    }
    if (sample.q_row >= 0) {
        seq.question_ids = {vocab.row_token(sample.q_row), vocab.col_token(sample.q_col)};
    } else {
        seq.question_ids = {vocab.majority_token(), vocab.majority_token()};
    }
    seq.label = sample.label;
    seq.assign_default_positions();
    return seq;
}

std::vector<MultimodalSequence> to_sequences(const Dataset& ds, int width) {
    std::vector<MultimodalSequence> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) out.push_back(to_sequence(s, ds.spec, width));
    return out;
}

namespace {
constexpr char kDataMagic[8] = {'T', 'L', 'N', 'S', 'D', 'A', 'T', 'A'};
constexpr uint32_t kDataVersion = 1;
}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::string header;
    header += std::string("kind=") + task_name(ds.spec.kind) + "\n";
    header += "grid_side=" + format_int(ds.spec.grid_side) + "\n";
    header += "n_colors=" + format_int(ds.spec.n_colors) + "\n";
    header += "n_samples=" + format_int(static_cast<long long>(ds.samples.size())) + "\n";
    header += "seed=" + format_int(static_cast<long long>(ds.spec.seed)) + "\n";

    std::string out;
    out.append(kDataMagic, sizeof(kDataMagic));
    auto put_u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put_u32(kDataVersion);
    put_u32(static_cast<uint32_t>(header.size()));
    out += header;
    for (const auto& s : ds.samples) {
        out.append(reinterpret_cast<const char*>(s.grid.data()), s.grid.size());
        out.push_back(static_cast<char>(s.q_row < 0 ? 0xff : s.q_row));
        out.push_back(static_cast<char>(s.q_col < 0 ? 0xff : s.q_col));
        out.push_back(static_cast<char>(s.label));
    }
    write_text_file(path, out);
}

Dataset load_dataset(const std::string& path) {
    const std::string data = read_text_file(path);
    if (data.size() < 16 || std::memcmp(data.data(), kDataMagic, sizeof(kDataMagic)) != 0)
        throw IoError("not a dataset file: " + path);
    auto get_u32 = [&](size_t off) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(data[off + i])) << (8 * i);
        return v;
    };
    const uint32_t version = get_u32(8);
    if (version != kDataVersion) throw IoError("unsupported dataset version");
    const uint32_t header_len = get_u32(12);
    size_t off = 16;
    if (off + header_len > data.size()) throw IoError("truncated dataset: " + path);
    std::map<std::string, std::string> kv;
    {
        const std::string header = data.substr(off, header_len);
        size_t s = 0;
        while (s < header.size()) {
            size_t nl = header.find('\n', s);
            if (nl == std::string::npos) nl = header.size();
            const std::string line = header.substr(s, nl - s);
            s = nl + 1;
            const size_t eq = line.find('=');
            if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    off += header_len;
    Dataset ds;
    ds.spec.kind = task_from_name(kv.at("kind"));
    ds.spec.grid_side = std::stoi(kv.at("grid_side"));
    ds.spec.n_colors = std::stoi(kv.at("n_colors"));
    ds.spec.n_samples = std::stoi(kv.at("n_samples"));
    ds.spec.seed = std::stoull(kv.at("seed"));
    ds.spec.validate();
    const size_t cells = static_cast<size_t>(ds.spec.n_visual());
    const size_t rec = cells + 3;
    if (off + rec * ds.spec.n_samples > data.size()) throw IoError("truncated dataset: " + path);
    for (int i = 0; i < ds.spec.n_samples; ++i) {
        GridSample s;
        s.grid.resize(cells);
        std::memcpy(s.grid.data(), data.data() + off, cells);
        off += cells;
        const auto qr = static_cast<unsigned char>(data[off++]);
        const auto qc = static_cast<unsigned char>(data[off++]);
        s.q_row = qr == 0xff ? -1 : qr;
        s.q_col = qc == 0xff ? -1 : qc;
        s.label = static_cast<uint8_t>(data[off++]);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace tlens
