// SPDX-License-Identifier: Apache-2.0

#include "naive_reference.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tlens::testing {

namespace {

using Vec = std::vector<double>;

struct NaiveWeights {
    std::map<std::string, Vec> tensors;
    const Vec& get(const std::string& name) const { return tensors.at(name); }
};

NaiveWeights load_weights(const Model& model) {
    NaiveWeights w;
    const auto names = model.tensor_names();
    for (size_t i = 0; i < names.size(); ++i) w.tensors[names[i]] = model.tensor_data(i);
    return w;
}

Vec rmsnorm(const Vec& x, const Vec& g, double eps) {
    double ss = 0;
    for (double v : x) ss += v * v;
    const double r = std::sqrt(ss / static_cast<double>(x.size()) + eps);
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * g[i] / r;
    return out;
}

// y = W x with W stored row-major [rows x cols].
Vec matvec(const Vec& w, int rows, int cols, const Vec& x) {
    Vec y(rows, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) y[r] += w[static_cast<size_t>(r) * cols + c] * x[c];
    return y;
}

}  // namespace

std::vector<double> naive_forward(const Model& model, const MultimodalSequence& seq,
                                  const NaiveOptions& opt) {
    const ArchConfig& arch = model.arch();
    const NaiveWeights w = load_weights(model);
    const int d = arch.width;
    const int n_heads = arch.n_heads;
    const int dh = d / n_heads;
    const int m = arch.mlp_width;

    // Build rows: prefix tokens, visual rows, question tokens.
    std::vector<Vec> h;
    std::vector<int> visual_row_of;  // visual index -> row
    const Vec& tok = w.get("tok_embed");
    const Vec& pos = w.get("pos_embed");
    int row = 0;
    auto push_token = [&](int id) {
        Vec v(d);
        const int p = seq.position_ids[row];
        for (int i = 0; i < d; ++i)
            v[i] = tok[static_cast<size_t>(id) * d + i] + pos[static_cast<size_t>(p) * d + i];
        h.push_back(std::move(v));
        ++row;
    };
    for (int id : seq.prefix_ids) push_token(id);
    for (int k = 0; k < seq.n_visual(); ++k) {
        Vec v(d);
        const int p = seq.position_ids[row];
        for (int i = 0; i < d; ++i)
            v[i] = seq.visual.at(k, i) + pos[static_cast<size_t>(p) * d + i];
        visual_row_of.push_back(row);
        h.push_back(std::move(v));
        ++row;
    }
    for (int id : seq.question_ids) push_token(id);
    const int n = static_cast<int>(h.size());

    std::vector<char> attn_blocked(n, 0);
    auto apply_boundary = [&](int boundary) {
        if (opt.mask_boundary && *opt.mask_boundary == boundary) {
            if (opt.visual_mask.size() != visual_row_of.size())
                throw std::runtime_error("naive: mask size mismatch");
            for (size_t k = 0; k < visual_row_of.size(); ++k)
                if (!opt.visual_mask[k])
                    for (int i = 0; i < d; ++i) h[visual_row_of[k]][i] = 0.0;
        }
        if (opt.mask_out_boundary && *opt.mask_out_boundary == boundary) {
            for (int k : opt.masked_out_visual) attn_blocked[visual_row_of[k]] = 1;
        }
    };

    for (int layer = 0; layer < arch.n_layers; ++layer) {
        apply_boundary(layer);
        const std::string p = "layer" + std::to_string(layer) + ".";
        const Vec& g1 = w.get(p + "attn_norm_g");
        const Vec& g2 = w.get(p + "mlp_norm_g");
        const Vec& wq = w.get(p + "wq");
        const Vec& wk = w.get(p + "wk");
        const Vec& wv = w.get(p + "wv");
        const Vec& wo = w.get(p + "wo");
        const Vec& wg = w.get(p + "w_gate");
        const Vec& wu = w.get(p + "w_up");
        const Vec& wd = w.get(p + "w_down");

        std::vector<Vec> q(n), k(n), v(n);
        for (int t = 0; t < n; ++t) {
            const Vec a = rmsnorm(h[t], g1, arch.norm_epsilon);
            q[t] = matvec(wq, d, d, a);
            k[t] = matvec(wk, d, d, a);
            v[t] = matvec(wv, d, d, a);
        }
        std::vector<Vec> ctx(n, Vec(d, 0.0));
        for (int t = 0; t < n; ++t) {
            for (int head = 0; head < n_heads; ++head) {
                const int off = head * dh;
                Vec scores(t + 1, -std::numeric_limits<double>::infinity());
                double mx = -std::numeric_limits<double>::infinity();
                for (int u = 0; u <= t; ++u) {
                    if (attn_blocked[u]) continue;
                    double s = 0;
                    for (int i = 0; i < dh; ++i) s += q[t][off + i] * k[u][off + i];
                    scores[u] = s / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, scores[u]);
                }
                double denom = 0;
                for (int u = 0; u <= t; ++u) {
                    if (std::isinf(scores[u])) continue;
                    scores[u] = std::exp(scores[u] - mx);
                    denom += scores[u];
                }
                for (int u = 0; u <= t; ++u) {
                    if (std::isinf(scores[u]) || scores[u] == 0.0) continue;
                    const double pw = scores[u] / denom;
                    for (int i = 0; i < dh; ++i) ctx[t][off + i] += pw * v[u][off + i];
                }
            }
        }
        for (int t = 0; t < n; ++t) {
            const Vec o = matvec(wo, d, d, ctx[t]);
            for (int i = 0; i < d; ++i) h[t][i] += o[i];
            const Vec b = rmsnorm(h[t], g2, arch.norm_epsilon);
            const Vec gate = matvec(wg, m, d, b);
            const Vec up = matvec(wu, m, d, b);
            Vec f(m);
            for (int i = 0; i < m; ++i) {
                const double sig = 1.0 / (1.0 + std::exp(-gate[i]));
                f[i] = gate[i] * sig * up[i];
            }
            const Vec down = matvec(wd, d, m, f);
            for (int i = 0; i < d; ++i) h[t][i] += down[i];
        }
    }
    apply_boundary(arch.n_layers);

    const Vec z = rmsnorm(h[n - 1], w.get("final_norm_g"), arch.norm_epsilon);
    const Vec logits = matvec(w.get("unembed"), arch.vocab_size, d, z);
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    Vec probs(arch.vocab_size);
    double denom = 0;
    for (int i = 0; i < arch.vocab_size; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        denom += probs[i];
    }
    for (auto& pv : probs) pv /= denom;
    return probs;
}

double naive_loss(const Model& model, const MultimodalSequence& seq) {
    const auto probs = naive_forward(model, seq);
    return -std::log(std::max(probs[seq.label], 1e-300));
}

}  // namespace tlens::testing
