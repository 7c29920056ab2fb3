// SPDX-License-Identifier: Apache-2.0

#include "tokenlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <variant>

#include "tokenlens/errors.hpp"
#include "tokenlens/hash.hpp"
#include "tokenlens/rng.hpp"

namespace tlens {

uint64_t MultimodalSequence::fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](const void* p, size_t n) { h = fnv1a64(p, n, h); };
    if (!prefix_ids.empty()) mix(prefix_ids.data(), prefix_ids.size() * sizeof(int));
    if (!visual.a.empty()) mix(visual.a.data(), visual.a.size() * sizeof(double));
    if (!question_ids.empty()) mix(question_ids.data(), question_ids.size() * sizeof(int));
    mix(&label, sizeof(label));
    if (!position_ids.empty()) mix(position_ids.data(), position_ids.size() * sizeof(int));
    return h;
}

const LayerCheckpoint& PrefillResult::checkpoint_at(int layer) const {
    for (const auto& c : checkpoints)
        if (c.layer_index == layer) return c;
    throw ConfigError("no checkpoint captured at layer " + std::to_string(layer));
}

const Mat<double>& PrefillResult::attention_at(int layer) const {
    for (const auto& [l, m] : attention)
        if (l == layer) return m;
    throw ConfigError("no attention captured at layer " + std::to_string(layer));
}

namespace {

template <typename T>
struct LayerWeights {
    std::vector<T> attn_norm_g, mlp_norm_g;  // width
    Mat<T> wq, wk, wv, wo;                   // width x width
    Mat<T> w_gate, w_up;                     // mlp_width x width
    Mat<T> w_down;                           // width x mlp_width
};

template <typename T>
struct Weights {
    Mat<T> tok_embed;  // vocab x width
    Mat<T> pos_embed;  // max_seq_len x width
    std::vector<LayerWeights<T>> layers;
    std::vector<T> final_norm_g;  // width
    Mat<T> unembed;               // vocab x width
};

template <typename T>
struct TensorView {
    std::string name;
    T* data;
    size_t count;
};

// Fixed serialization order; checkpoint files and gradient reports follow it.
template <typename T>
std::vector<TensorView<T>> tensor_views(Weights<T>& w) {
    std::vector<TensorView<T>> out;
    auto add = [&](std::string name, std::vector<T>& v) {
        out.push_back({std::move(name), v.data(), v.size()});
    };
    auto add_mat = [&](std::string name, Mat<T>& m) {
        out.push_back({std::move(name), m.a.data(), m.a.size()});
    };
    add_mat("tok_embed", w.tok_embed);
    add_mat("pos_embed", w.pos_embed);
    for (size_t i = 0; i < w.layers.size(); ++i) {
        auto& l = w.layers[i];
        std::string p = "layer" + std::to_string(i) + ".";
        add(p + "attn_norm_g", l.attn_norm_g);
        add_mat(p + "wq", l.wq);
        add_mat(p + "wk", l.wk);
        add_mat(p + "wv", l.wv);
        add_mat(p + "wo", l.wo);
        add(p + "mlp_norm_g", l.mlp_norm_g);
        add_mat(p + "w_gate", l.w_gate);
        add_mat(p + "w_up", l.w_up);
        add_mat(p + "w_down", l.w_down);
    }
    add("final_norm_g", w.final_norm_g);
    add_mat("unembed", w.unembed);
    return out;
}

template <typename T>
Weights<T> make_weights(const ArchConfig& a) {
    Weights<T> w;
    w.tok_embed = Mat<T>(a.vocab_size, a.width);
    w.pos_embed = Mat<T>(a.max_seq_len, a.width);
    w.layers.resize(a.n_layers);
    for (auto& l : w.layers) {
        l.attn_norm_g.assign(a.width, T(1));
        l.mlp_norm_g.assign(a.width, T(1));
        l.wq = Mat<T>(a.width, a.width);
        l.wk = Mat<T>(a.width, a.width);
        l.wv = Mat<T>(a.width, a.width);
        l.wo = Mat<T>(a.width, a.width);
        l.w_gate = Mat<T>(a.mlp_width, a.width);
        l.w_up = Mat<T>(a.mlp_width, a.width);
        l.w_down = Mat<T>(a.width, a.mlp_width);
    }
    w.final_norm_g.assign(a.width, T(1));
    w.unembed = Mat<T>(a.vocab_size, a.width);
    return w;
}

template <typename T>
void random_init(Weights<T>& w, const ArchConfig& a, uint64_t seed) {
    Rng rng = make_rng(seed);
    auto fill = [&](Mat<T>& m, double sigma) {
        for (auto& v : m.a) v = static_cast<T>(gaussian(rng) * sigma);
    };
    const double proj = 1.0 / std::sqrt(static_cast<double>(a.width));
    const double resid = proj / std::sqrt(2.0 * a.n_layers);
    const double down = 1.0 / std::sqrt(static_cast<double>(a.mlp_width)) /
                        std::sqrt(2.0 * a.n_layers);
    fill(w.tok_embed, 0.1);
    fill(w.pos_embed, 0.1);
    for (auto& l : w.layers) {
        fill(l.wq, proj);
        fill(l.wk, proj);
        fill(l.wv, proj);
        fill(l.wo, resid);
        fill(l.w_gate, proj);
        fill(l.w_up, proj);
        fill(l.w_down, down);
    }
    fill(w.unembed, 0.02);
}

// ---- forward machinery -----------------------------------------------------

template <typename T>
struct SeqState {
    Mat<T> h;  // rows: [prefix][alive visual][question]
    int n_prefix = 0;
    int n_question = 0;
    std::vector<int> alive;           // original 0-based visual indices
    std::vector<int> text_pos;        // original positions, prefix then question
    std::vector<int> visual_pos;      // original positions of alive rows
    int boundary = 0;                 // h == H^boundary

    int rows() const { return h.rows; }
    int visual_begin() const { return n_prefix; }
    int visual_count() const { return static_cast<int>(alive.size()); }
    int last_row() const { return h.rows - 1; }
};

template <typename T>
void rmsnorm_rows(const Mat<T>& x, const std::vector<T>& g, double eps, Mat<T>& out,
                  std::vector<T>* rms_cache) {
    const int d = x.cols;
    for (int r = 0; r < x.rows; ++r) {
        const T* xr = x.row(r);
        T ss = T(0);
        for (int i = 0; i < d; ++i) ss += xr[i] * xr[i];
        T rms = std::sqrt(ss / static_cast<T>(d) + static_cast<T>(eps));
        if (rms_cache) (*rms_cache)[r] = rms;
        T* o = out.row(r);
        for (int i = 0; i < d; ++i) o[i] = xr[i] * g[i] / rms;
    }
}

template <typename T>
struct LayerCache {
    Mat<T> x_in;
    std::vector<T> rms1;
    Mat<T> a_norm;
    Mat<T> q, k, v;
    std::vector<Mat<T>> attn;  // per head, n x n post-softmax
    Mat<T> ctx;
    Mat<T> x_mid;
    std::vector<T> rms2;
    Mat<T> b_norm;
    Mat<T> gate, up, f;
};

template <typename T>
class Engine {
public:
    ArchConfig arch;
    Weights<T> w;

    SeqState<T> embed(const MultimodalSequence& seq) const {
        seq.validate(arch);
        SeqState<T> s;
        s.n_prefix = static_cast<int>(seq.prefix_ids.size());
        s.n_question = static_cast<int>(seq.question_ids.size());
        const int nv = seq.n_visual();
        s.h = Mat<T>(seq.length(), arch.width);
        s.alive.resize(nv);
        for (int i = 0; i < nv; ++i) s.alive[i] = i;
        int row = 0;
        auto add_text = [&](int id) {
            const int pos = seq.position_ids[row];
            T* hr = s.h.row(row);
            const T* e = w.tok_embed.row(id);
            const T* p = w.pos_embed.row(pos);
            for (int i = 0; i < arch.width; ++i) hr[i] = e[i] + p[i];
            s.text_pos.push_back(pos);
            ++row;
        };
        for (int id : seq.prefix_ids) add_text(id);
        for (int k = 0; k < nv; ++k) {
            const int pos = seq.position_ids[row];
            T* hr = s.h.row(row);
            const double* vr = seq.visual.row(k);
            const T* p = w.pos_embed.row(pos);
            for (int i = 0; i < arch.width; ++i) hr[i] = static_cast<T>(vr[i]) + p[i];
            s.visual_pos.push_back(pos);
            ++row;
        }
        for (int id : seq.question_ids) add_text(id);
        return s;
    }

    // Runs decoder layer `layer` (1-based). Full-score attention with a
    // causal -inf mask; masked positions contribute exact zeros, so the MAC
    // tally below is what the dense kernel actually performs:
    //   qkv 3nd^2, scores n^2 d, mix n^2 d, out proj nd^2, gated mlp 3ndm.
    void layer_forward(SeqState<T>& s, int layer, Mat<double>* attn_avg, uint64_t* macs,
                       LayerCache<T>* cache) const {
        const int n = s.rows();
        const int d = arch.width;
        const int m = arch.mlp_width;
        const int heads = arch.n_heads;
        const int dh = arch.head_dim();
        const auto& lw = w.layers[layer - 1];

        Mat<T> a_norm(n, d);
        std::vector<T> rms1(n);
        rmsnorm_rows(s.h, lw.attn_norm_g, arch.norm_epsilon, a_norm, &rms1);

        Mat<T> q(n, d), k(n, d), v(n, d);
        matmul_wt(a_norm, lw.wq, q);
        matmul_wt(a_norm, lw.wk, k);
        matmul_wt(a_norm, lw.wv, v);

        if (attn_avg) *attn_avg = Mat<double>(n, n);
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        Mat<T> ctx(n, d);
        std::vector<T> srow(n);
        std::vector<Mat<T>> attn_cache;
        if (cache) attn_cache.assign(heads, Mat<T>(n, n));
        for (int hh = 0; hh < heads; ++hh) {
            const int off = hh * dh;
            for (int t = 0; t < n; ++t) {
                const T* qt = q.row(t) + off;
                T mx = -std::numeric_limits<T>::infinity();
                for (int u = 0; u < n; ++u) {
                    if (u > t) {
                        srow[u] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* ku = k.row(u) + off;
                    T acc = T(0);
                    for (int i = 0; i < dh; ++i) acc += qt[i] * ku[i];
                    srow[u] = acc * scale;
                    if (srow[u] > mx) mx = srow[u];
                }
                T denom = T(0);
                for (int u = 0; u <= t; ++u) {
                    srow[u] = std::exp(srow[u] - mx);
                    denom += srow[u];
                }
                T* ct = ctx.row(t) + off;
                for (int i = 0; i < dh; ++i) ct[i] = T(0);
                for (int u = 0; u <= t; ++u) {
                    const T p = srow[u] / denom;
                    if (attn_avg) attn_avg->at(t, u) += static_cast<double>(p);
                    if (cache) attn_cache[hh].at(t, u) = p;
                    const T* vu = v.row(u) + off;
                    for (int i = 0; i < dh; ++i) ct[i] += p * vu[i];
                }
            }
        }
        if (attn_avg)
            for (auto& e : attn_avg->a) e /= heads;

        Mat<T> attn_out(n, d);
        matmul_wt(ctx, lw.wo, attn_out);
        Mat<T> x_mid(n, d);
        for (size_t i = 0; i < x_mid.a.size(); ++i) x_mid.a[i] = s.h.a[i] + attn_out.a[i];

        Mat<T> b_norm(n, d);
        std::vector<T> rms2(n);
        rmsnorm_rows(x_mid, lw.mlp_norm_g, arch.norm_epsilon, b_norm, &rms2);
        Mat<T> gate(n, m), up(n, m);
        matmul_wt(b_norm, lw.w_gate, gate);
        matmul_wt(b_norm, lw.w_up, up);
        Mat<T> f(n, m);
        for (size_t i = 0; i < f.a.size(); ++i) {
            const T g = gate.a[i];
            const T sig = T(1) / (T(1) + std::exp(-g));
            f.a[i] = g * sig * up.a[i];
        }
        Mat<T> mlp_out(n, d);
        matmul_wt(f, lw.w_down, mlp_out);

        if (cache) {
            cache->x_in = s.h;
            cache->rms1 = std::move(rms1);
            cache->a_norm = std::move(a_norm);
            cache->q = std::move(q);
            cache->k = std::move(k);
            cache->v = std::move(v);
            cache->attn = std::move(attn_cache);
            cache->ctx = std::move(ctx);
            cache->x_mid = x_mid;
            cache->rms2 = std::move(rms2);
            cache->b_norm = std::move(b_norm);
            cache->gate = std::move(gate);
            cache->up = std::move(up);
            cache->f = std::move(f);
        }

        for (size_t i = 0; i < s.h.a.size(); ++i) s.h.a[i] = x_mid.a[i] + mlp_out.a[i];
        s.boundary = layer;

        if (macs) {
            const uint64_t un = n, ud = d, um = m;
            *macs += 3 * un * ud * ud + 2 * un * un * ud + un * ud * ud + 3 * un * ud * um;
        }
        for (const T x : s.h.a) {
            if (!std::isfinite(static_cast<double>(x)))
                throw NumericError("non-finite activation at layer " + std::to_string(layer));
        }
    }

    std::vector<double> readout(const SeqState<T>& s, std::vector<T>* z_out = nullptr,
                                std::vector<T>* rms_out = nullptr) const {
        const int d = arch.width;
        const T* xr = s.h.row(s.last_row());
        T ss = T(0);
        for (int i = 0; i < d; ++i) ss += xr[i] * xr[i];
        const T rms = std::sqrt(ss / static_cast<T>(d) + static_cast<T>(arch.norm_epsilon));
        std::vector<T> z(d);
        for (int i = 0; i < d; ++i) z[i] = xr[i] * w.final_norm_g[i] / rms;
        std::vector<T> logits(arch.vocab_size);
        for (int vtok = 0; vtok < arch.vocab_size; ++vtok) {
            const T* wr = w.unembed.row(vtok);
            T acc = T(0);
            for (int i = 0; i < d; ++i) acc += wr[i] * z[i];
            logits[vtok] = acc;
        }
        T mx = logits[0];
        for (const T l : logits) mx = std::max(mx, l);
        T denom = T(0);
        for (auto& l : logits) {
            l = std::exp(l - mx);
            denom += l;
        }
        std::vector<double> probs(arch.vocab_size);
        for (int i = 0; i < arch.vocab_size; ++i)
            probs[i] = static_cast<double>(logits[i] / denom);
        if (z_out) *z_out = std::move(z);
        if (rms_out) rms_out->assign(1, rms);
        return probs;
    }

    LayerCheckpoint snapshot(const SeqState<T>& s) const {
        LayerCheckpoint c;
        c.layer_index = s.boundary;
        c.n_prefix = s.n_prefix;
        c.alive_visual = s.alive;
        c.text_position_ids = s.text_pos;
        c.visual_position_ids = s.visual_pos;
        const int d = arch.width;
        c.hidden_visual = Mat<double>(s.visual_count(), d);
        c.hidden_text = Mat<double>(s.n_prefix + s.n_question, d);
        for (int r = 0; r < s.n_prefix; ++r)
            for (int i = 0; i < d; ++i)
                c.hidden_text.at(r, i) = static_cast<double>(s.h.at(r, i));
        for (int r = 0; r < s.visual_count(); ++r)
            for (int i = 0; i < d; ++i)
                c.hidden_visual.at(r, i) = static_cast<double>(s.h.at(s.n_prefix + r, i));
        for (int r = 0; r < s.n_question; ++r)
            for (int i = 0; i < d; ++i)
                c.hidden_text.at(s.n_prefix + r, i) =
                    static_cast<double>(s.h.at(s.n_prefix + s.visual_count() + r, i));
        return c;
    }

    SeqState<T> restore(const LayerCheckpoint& c) const {
        if (c.layer_index < 0 || c.layer_index > arch.n_layers)
            throw ConfigError("checkpoint layer_index out of range");
        if (c.hidden_visual.rows != static_cast<int>(c.alive_visual.size()))
            throw ConfigError("checkpoint alive set / hidden column count mismatch");
        SeqState<T> s;
        s.boundary = c.layer_index;
        s.n_prefix = c.n_prefix;
        s.n_question = c.hidden_text.rows - c.n_prefix;
        s.alive = c.alive_visual;
        s.text_pos = c.text_position_ids;
        s.visual_pos = c.visual_position_ids;
        const int d = arch.width;
        const int n = c.hidden_text.rows + c.hidden_visual.rows;
        s.h = Mat<T>(n, d);
        for (int r = 0; r < c.n_prefix; ++r)
            for (int i = 0; i < d; ++i) s.h.at(r, i) = static_cast<T>(c.hidden_text.at(r, i));
        for (int r = 0; r < c.hidden_visual.rows; ++r)
            for (int i = 0; i < d; ++i)
                s.h.at(c.n_prefix + r, i) = static_cast<T>(c.hidden_visual.at(r, i));
        for (int r = 0; r < s.n_question; ++r)
            for (int i = 0; i < d; ++i)
                s.h.at(c.n_prefix + c.hidden_visual.rows + r, i) =
                    static_cast<T>(c.hidden_text.at(c.n_prefix + r, i));
        return s;
    }

    void apply_treatment(SeqState<T>& s, const VisualTreatment& t) const {
        switch (t.kind) {
            case VisualTreatment::Kind::KeepAll:
                return;
            case VisualTreatment::Kind::ZeroMask: {
                if (t.mask.size() != s.alive.size())
                    throw ConfigError("zero mask length does not match alive set");
                for (size_t j = 0; j < t.mask.size(); ++j) {
                    if (t.mask[j] > 1) throw ConfigError("mask entries must be 0 or 1");
                    if (t.mask[j] == 0) {
                        T* row = s.h.row(s.n_prefix + static_cast<int>(j));
                        std::fill(row, row + arch.width, T(0));
                    }
                }
                return;
            }
            case VisualTreatment::Kind::Drop:
                drop_visual(s, t.kept);
                return;
        }
    }

    void drop_visual(SeqState<T>& s, const std::vector<int>& kept) const {
        std::vector<int> sorted = kept;
        std::sort(sorted.begin(), sorted.end());
        size_t pos = 0;
        for (int idx : sorted) {
            while (pos < s.alive.size() && s.alive[pos] < idx) ++pos;
            if (pos >= s.alive.size() || s.alive[pos] != idx)
                throw ConfigError("kept set is not a subset of the alive set");
        }
        const int d = arch.width;
        Mat<T> nh(s.n_prefix + static_cast<int>(sorted.size()) + s.n_question, d);
        std::vector<int> nvpos;
        int out = 0;
        for (int r = 0; r < s.n_prefix; ++r, ++out)
            std::memcpy(nh.row(out), s.h.row(r), sizeof(T) * d);
        size_t ki = 0;
        for (size_t j = 0; j < s.alive.size(); ++j) {
            if (ki < sorted.size() && s.alive[j] == sorted[ki]) {
                std::memcpy(nh.row(out), s.h.row(s.n_prefix + static_cast<int>(j)),
                            sizeof(T) * d);
                nvpos.push_back(s.visual_pos[j]);
                ++out;
                ++ki;
            }
        }
        for (int r = 0; r < s.n_question; ++r, ++out)
            std::memcpy(nh.row(out), s.h.row(s.n_prefix + static_cast<int>(s.alive.size()) + r),
                        sizeof(T) * d);
        s.h = std::move(nh);
        s.alive = std::move(sorted);
        s.visual_pos = std::move(nvpos);
    }

    struct RunOptions {
        const CaptureFlags* capture = nullptr;
        const BoundaryHook* hook = nullptr;
        const std::vector<int>* hook_attention = nullptr;  // boundaries needing attention
    };

    PrefillResult run(SeqState<T> s, const RunOptions& opt) const {
        PrefillResult res;
        auto wants_checkpoint = [&](int b) {
            if (!opt.capture) return false;
            if (opt.capture->all_checkpoints) return true;
            const auto& v = opt.capture->checkpoint_layers;
            return std::find(v.begin(), v.end(), b) != v.end();
        };
        auto wants_attention = [&](int layer, bool& for_capture, bool& for_hook) {
            for_capture = false;
            for_hook = false;
            if (opt.capture) {
                const auto& v = opt.capture->attention_layers;
                for_capture = std::find(v.begin(), v.end(), layer) != v.end();
            }
            if (opt.hook && opt.hook_attention) {
                const auto& v = *opt.hook_attention;
                for_hook = std::find(v.begin(), v.end(), layer) != v.end();
            }
            return for_capture || for_hook;
        };

        Mat<double> attn_avg;
        bool attn_valid = false;
        for (int boundary = s.boundary;; ++boundary) {
            if (wants_checkpoint(boundary)) res.checkpoints.push_back(snapshot(s));
            if (opt.hook) {
                BoundaryContext ctx;
                ctx.layer = boundary;
                ctx.alive = &s.alive;
                const int d = arch.width;
                ctx.visual_hidden = Mat<double>(s.visual_count(), d);
                for (int r = 0; r < s.visual_count(); ++r)
                    for (int i = 0; i < d; ++i)
                        ctx.visual_hidden.at(r, i) =
                            static_cast<double>(s.h.at(s.n_prefix + r, i));
                if (attn_valid) {
                    ctx.attention_available = true;
                    ctx.attention_to_alive.resize(s.visual_count());
                    const int last = s.last_row();
                    for (int r = 0; r < s.visual_count(); ++r)
                        ctx.attention_to_alive[r] = attn_avg.at(last, s.n_prefix + r);
                }
                if (auto kept = (*opt.hook)(ctx)) drop_visual(s, *kept);
            }
            if (boundary == arch.n_layers) break;
            const int layer = boundary + 1;
            bool for_capture = false, for_hook = false;
            const bool need_attn = wants_attention(layer, for_capture, for_hook);
            layer_forward(s, layer, need_attn ? &attn_avg : nullptr, &res.mac_count, nullptr);
            attn_valid = for_hook;
            if (for_capture) res.attention.emplace_back(layer, attn_avg);
        }
        res.probs = readout(s);
        return res;
    }

    // ---- training ----------------------------------------------------------

    struct ForwardTrainOut {
        std::vector<LayerCache<T>> caches;
        Mat<T> x_final;
        std::vector<T> z;  // final norm output at last row
        T rms_f = T(0);
        std::vector<double> probs;
        int last_row = 0;
    };

    ForwardTrainOut forward_train(const MultimodalSequence& seq) const {
        ForwardTrainOut out;
        SeqState<T> s = embed(seq);
        out.caches.resize(arch.n_layers);
        for (int l = 1; l <= arch.n_layers; ++l)
            layer_forward(s, l, nullptr, nullptr, &out.caches[l - 1]);
        out.x_final = s.h;
        out.last_row = s.last_row();
        std::vector<T> rms1;
        out.probs = readout(s, &out.z, &rms1);
        out.rms_f = rms1[0];
        return out;
    }

    static void rmsnorm_backward_row(const T* x, const std::vector<T>& g, T rms, const T* dy,
                                     int d, T* dx_add, std::vector<T>& dg) {
        T s = T(0);
        for (int i = 0; i < d; ++i) s += dy[i] * g[i] * x[i];
        const T r3 = rms * rms * rms;
        for (int i = 0; i < d; ++i) {
            dx_add[i] += dy[i] * g[i] / rms - x[i] * s / (static_cast<T>(d) * r3);
            dg[i] += dy[i] * x[i] / rms;
        }
    }

    // Accumulates gradients for one sequence; returns its loss.
    double backward(const MultimodalSequence& seq, Weights<T>& grad) const {
        ForwardTrainOut fw = forward_train(seq);
        const int d = arch.width;
        const int m = arch.mlp_width;
        const int heads = arch.n_heads;
        const int dh = arch.head_dim();
        const int n = fw.x_final.rows;
        const int y = seq.label;

        const double py = std::max(fw.probs[y], 1e-300);
        const double loss = -std::log(py);

        std::vector<T> dlogits(arch.vocab_size);
        for (int vtok = 0; vtok < arch.vocab_size; ++vtok)
            dlogits[vtok] = static_cast<T>(fw.probs[vtok]);
        dlogits[y] -= T(1);

        std::vector<T> dz(d, T(0));
        for (int vtok = 0; vtok < arch.vocab_size; ++vtok) {
            const T coef = dlogits[vtok];
            if (coef == T(0)) continue;
            T* gu = grad.unembed.row(vtok);
            const T* wu = w.unembed.row(vtok);
            for (int i = 0; i < d; ++i) {
                gu[i] += coef * fw.z[i];
                dz[i] += coef * wu[i];
            }
        }

        Mat<T> dx(n, d);
        rmsnorm_backward_row(fw.x_final.row(fw.last_row), w.final_norm_g, fw.rms_f, dz.data(),
                             d, dx.row(fw.last_row), grad.final_norm_g);

        Mat<T> df(n, m), dgate(n, m), dup(n, m), db(n, d), dctx(n, d), dq(n, d), dk(n, d),
            dv(n, d), da(n, d);
        std::vector<T> dp(n), ds(n);
        for (int l = arch.n_layers - 1; l >= 0; --l) {
            const auto& c = fw.caches[l];
            const auto& lw = w.layers[l];
            auto& gl = grad.layers[l];

            // MLP backward; dx currently holds dL/dx_out.
            df.fill(T(0));
            for (int r = 0; r < n; ++r) {
                const T* dxr = dx.row(r);
                T* dfr = df.row(r);
                for (int j = 0; j < d; ++j) {
                    const T coef = dxr[j];
                    if (coef == T(0)) continue;
                    T* gw = gl.w_down.row(j);
                    const T* fr = c.f.row(r);
                    const T* wd = lw.w_down.row(j);
                    for (int t = 0; t < m; ++t) {
                        gw[t] += coef * fr[t];
                        dfr[t] += coef * wd[t];
                    }
                }
            }
            for (int r = 0; r < n; ++r) {
                const T* dfr = df.row(r);
                const T* gr = c.gate.row(r);
                const T* ur = c.up.row(r);
                T* dgr = dgate.row(r);
                T* dur = dup.row(r);
                for (int t = 0; t < m; ++t) {
                    const T sig = T(1) / (T(1) + std::exp(-gr[t]));
                    const T silu = gr[t] * sig;
                    dur[t] = dfr[t] * silu;
                    dgr[t] = dfr[t] * ur[t] * sig * (T(1) + gr[t] * (T(1) - sig));
                }
            }
            db.fill(T(0));
            for (int r = 0; r < n; ++r) {
                const T* dgr = dgate.row(r);
                const T* dur = dup.row(r);
                const T* br = c.b_norm.row(r);
                T* dbr = db.row(r);
                for (int t = 0; t < m; ++t) {
                    const T cg = dgr[t];
                    const T cu = dur[t];
                    if (cg != T(0)) {
                        T* gw = gl.w_gate.row(t);
                        const T* wg = lw.w_gate.row(t);
                        for (int i = 0; i < d; ++i) {
                            gw[i] += cg * br[i];
                            dbr[i] += cg * wg[i];
                        }
                    }
                    if (cu != T(0)) {
                        T* gw = gl.w_up.row(t);
                        const T* wu = lw.w_up.row(t);
                        for (int i = 0; i < d; ++i) {
                            gw[i] += cu * br[i];
                            dbr[i] += cu * wu[i];
                        }
                    }
                }
            }
            // dx becomes dL/dx_mid: residual path plus the norm path.
            for (int r = 0; r < n; ++r)
                rmsnorm_backward_row(c.x_mid.row(r), lw.mlp_norm_g, c.rms2[r], db.row(r), d,
                                     dx.row(r), gl.mlp_norm_g);

            // Attention backward.
            dctx.fill(T(0));
            for (int r = 0; r < n; ++r) {
                const T* dxr = dx.row(r);
                T* dcr = dctx.row(r);
                for (int j = 0; j < d; ++j) {
                    const T coef = dxr[j];
                    if (coef == T(0)) continue;
                    T* gw = gl.wo.row(j);
                    const T* cr = c.ctx.row(r);
                    const T* wo = lw.wo.row(j);
                    for (int i = 0; i < d; ++i) {
                        gw[i] += coef * cr[i];
                        dcr[i] += coef * wo[i];
                    }
                }
            }
            dq.fill(T(0));
            dk.fill(T(0));
            dv.fill(T(0));
            const T scale = T(1) / std::sqrt(static_cast<T>(dh));
            for (int hh = 0; hh < heads; ++hh) {
                const int off = hh * dh;
                const Mat<T>& p = c.attn[hh];
                for (int t = 0; t < n; ++t) {
                    const T* dct = dctx.row(t) + off;
                    T dot = T(0);
                    for (int u = 0; u <= t; ++u) {
                        const T* vu = c.v.row(u) + off;
                        T acc = T(0);
                        for (int i = 0; i < dh; ++i) acc += dct[i] * vu[i];
                        dp[u] = acc;
                        dot += p.at(t, u) * acc;
                    }
                    const T* qt = c.q.row(t) + off;
                    T* dqt = dq.row(t) + off;
                    for (int u = 0; u <= t; ++u) {
                        const T pu = p.at(t, u);
                        ds[u] = pu * (dp[u] - dot);
                        T* dvu = dv.row(u) + off;
                        for (int i = 0; i < dh; ++i) dvu[i] += pu * dct[i];
                        const T dsu = ds[u] * scale;
                        if (dsu != T(0)) {
                            const T* ku = c.k.row(u) + off;
                            T* dku = dk.row(u) + off;
                            for (int i = 0; i < dh; ++i) {
                                dqt[i] += dsu * ku[i];
                                dku[i] += dsu * qt[i];
                            }
                        }
                    }
                }
            }
            da.fill(T(0));
            auto proj_backward = [&](const Mat<T>& dout, const Mat<T>& wproj, Mat<T>& gw) {
                for (int r = 0; r < n; ++r) {
                    const T* dor = dout.row(r);
                    const T* ar = c.a_norm.row(r);
                    T* dar = da.row(r);
                    for (int j = 0; j < d; ++j) {
                        const T coef = dor[j];
                        if (coef == T(0)) continue;
                        T* gj = gw.row(j);
                        const T* wj = wproj.row(j);
                        for (int i = 0; i < d; ++i) {
                            gj[i] += coef * ar[i];
                            dar[i] += coef * wj[i];
                        }
                    }
                }
            };
            proj_backward(dq, lw.wq, gl.wq);
            proj_backward(dk, lw.wk, gl.wk);
            proj_backward(dv, lw.wv, gl.wv);
            for (int r = 0; r < n; ++r)
                rmsnorm_backward_row(c.x_in.row(r), lw.attn_norm_g, c.rms1[r], da.row(r), d,
                                     dx.row(r), gl.attn_norm_g);
        }

        // Embedding gradients. Visual rows are inputs, but their position
        // embeddings are learned.
        const int n_prefix = static_cast<int>(seq.prefix_ids.size());
        const int nv = seq.n_visual();
        int row = 0;
        auto add_text_grad = [&](int id) {
            T* ge = grad.tok_embed.row(id);
            T* gp = grad.pos_embed.row(seq.position_ids[row]);
            const T* dxr = dx.row(row);
            for (int i = 0; i < d; ++i) {
                ge[i] += dxr[i];
                gp[i] += dxr[i];
            }
            ++row;
        };
        for (int i = 0; i < n_prefix; ++i) add_text_grad(seq.prefix_ids[i]);
        for (int kk = 0; kk < nv; ++kk) {
            T* gp = grad.pos_embed.row(seq.position_ids[row]);
            const T* dxr = dx.row(row);
            for (int i = 0; i < d; ++i) gp[i] += dxr[i];
            ++row;
        }
        for (size_t i = 0; i < seq.question_ids.size(); ++i) add_text_grad(seq.question_ids[i]);
        return loss;
    }
};

using EngineVariant = std::variant<Engine<float>, Engine<double>>;

}  // namespace

struct ModelImpl {
    EngineVariant engine;

    template <typename F>
    decltype(auto) visit(F&& f) const {
        return std::visit(std::forward<F>(f), engine);
    }
};

static std::shared_ptr<ModelImpl> make_impl(const ArchConfig& arch) {
    arch.validate();
    auto impl = std::make_shared<ModelImpl>();
    if (arch.precision_mode == Precision::Single) {
        Engine<float> e;
        e.arch = arch;
        e.w = make_weights<float>(arch);
        impl->engine = std::move(e);
    } else {
        Engine<double> e;
        e.arch = arch;
        e.w = make_weights<double>(arch);
        impl->engine = std::move(e);
    }
    return impl;
}

Model Model::init_random(const ArchConfig& arch, uint64_t seed) {
    Model m;
    m.impl_ = make_impl(arch);
    std::visit([&](auto& e) { random_init(e.w, arch, seed); },
               m.impl_->engine);
    return m;
}

Model Model::init_zero(const ArchConfig& arch) {
    Model m;
    m.impl_ = make_impl(arch);
    return m;
}

const ArchConfig& Model::arch() const {
    if (!impl_) throw ConfigError("model is empty");
    return impl_->visit([](const auto& e) -> const ArchConfig& { return e.arch; });
}

uint64_t Model::weight_checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    const size_t count = tensor_names().size();
    for (size_t i = 0; i < count; ++i) {
        const std::vector<float> blob = tensor_data_f32(i);
        h = fnv1a64(blob.data(), blob.size() * sizeof(float), h);
    }
    return h;
}

PrefillResult Model::forward_prefill(const MultimodalSequence& seq,
                                     const CaptureFlags& capture) const {
    if (!impl_) throw ConfigError("model is empty");
    return impl_->visit([&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        typename E::RunOptions opt;
        opt.capture = &capture;
        return e.run(e.embed(seq), opt);
    });
}

PrefillResult Model::resume_forward(const LayerCheckpoint& state,
                                    const VisualTreatment& treatment) const {
    if (!impl_) throw ConfigError("model is empty");
    return impl_->visit([&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        auto s = e.restore(state);
        e.apply_treatment(s, treatment);
        typename E::RunOptions opt;
        return e.run(std::move(s), opt);
    });
}

Mat<double> Model::attention_scores(const MultimodalSequence& seq, int layer) const {
    if (!impl_) throw ConfigError("model is empty");
    if (layer < 1 || layer > arch().n_layers)
        throw ConfigError("attention layer out of range: " + std::to_string(layer));
    CaptureFlags flags;
    flags.attention_layers = {layer};
    PrefillResult res = forward_prefill(seq, flags);
    return res.attention_at(layer);
}

PrefillResult Model::forward_with_hook(const MultimodalSequence& seq,
                                       const std::vector<int>& attention_boundaries,
                                       const BoundaryHook& hook) const {
    if (!impl_) throw ConfigError("model is empty");
    return impl_->visit([&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        typename E::RunOptions opt;
        opt.hook = &hook;
        opt.hook_attention = &attention_boundaries;
        return e.run(e.embed(seq), opt);
    });
}

std::vector<std::string> Model::tensor_names() const {
    if (!impl_) throw ConfigError("model is empty");
    return impl_->visit([](const auto& e) {
        auto& w = const_cast<std::decay_t<decltype(e.w)>&>(e.w);
        std::vector<std::string> names;
        for (const auto& t : tensor_views(w)) names.push_back(t.name);
        return names;
    });
}

std::vector<double> Model::tensor_data(size_t index) const {
    if (!impl_) throw ConfigError("model is empty");
    return impl_->visit([&](const auto& e) {
        auto& w = const_cast<std::decay_t<decltype(e.w)>&>(e.w);
        auto views = tensor_views(w);
        if (index >= views.size()) throw ConfigError("tensor index out of range");
        std::vector<double> out(views[index].count);
        for (size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<double>(views[index].data[i]);
        return out;
    });
}

std::vector<float> Model::tensor_data_f32(size_t index) const {
    if (!impl_) throw ConfigError("model is empty");
    return impl_->visit([&](const auto& e) {
        auto& w = const_cast<std::decay_t<decltype(e.w)>&>(e.w);
        auto views = tensor_views(w);
        if (index >= views.size()) throw ConfigError("tensor index out of range");
        std::vector<float> out(views[index].count);
        for (size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<float>(views[index].data[i]);
        return out;
    });
}

void Model::set_tensor_data(size_t index, const std::vector<double>& values) {
    if (!impl_) throw ConfigError("model is empty");
    // Mutation: clone the impl so existing copies stay untouched.
    auto fresh = std::make_shared<ModelImpl>(*impl_);
    std::visit(
        [&](auto& e) {
            auto views = tensor_views(e.w);
            if (index >= views.size()) throw ConfigError("tensor index out of range");
            if (values.size() != views[index].count)
                throw ConfigError("tensor size mismatch for " + views[index].name);
            using Scalar = std::remove_pointer_t<decltype(views[index].data)>;
            for (size_t i = 0; i < values.size(); ++i)
                views[index].data[i] = static_cast<Scalar>(values[i]);
        },
        fresh->engine);
    impl_ = std::move(fresh);
}

void Model::perturb_weight(size_t tensor_index, size_t element, double delta) {
    if (!impl_) throw ConfigError("model is empty");
    if (arch().precision_mode != Precision::Double)
        throw ConfigError("perturb_weight requires double precision mode");
    auto fresh = std::make_shared<ModelImpl>(*impl_);
    std::visit(
        [&](auto& e) {
            auto views = tensor_views(e.w);
            if (tensor_index >= views.size()) throw ConfigError("tensor index out of range");
            if (element >= views[tensor_index].count)
                throw ConfigError("element index out of range");
            using Scalar = std::remove_pointer_t<decltype(views[tensor_index].data)>;
            views[tensor_index].data[element] += static_cast<Scalar>(delta);
        },
        fresh->engine);
    impl_ = std::move(fresh);
}

double loss_value(const Model& model, const MultimodalSequence& seq) {
    if (!model.impl_) throw ConfigError("model is empty");
    return model.impl_->visit([&](const auto& e) {
        auto s = e.embed(seq);
        using E = std::decay_t<decltype(e)>;
        typename E::RunOptions opt;
        PrefillResult res = e.run(std::move(s), opt);
        return -std::log(std::max(res.probs[seq.label], 1e-300));
    });
}

std::vector<std::pair<std::string, std::vector<double>>> loss_gradients(
    const Model& model, const MultimodalSequence& seq) {
    if (!model.impl_) throw ConfigError("model is empty");
    return model.impl_->visit([&](const auto& e) {
        auto grad = make_weights<typename std::decay_t<decltype(e.w.tok_embed.a)>::value_type>(
            e.arch);
        // Gradient buffers start at zero, including the norm gains.
        for (auto& l : grad.layers) {
            std::fill(l.attn_norm_g.begin(), l.attn_norm_g.end(), 0.0);
            std::fill(l.mlp_norm_g.begin(), l.mlp_norm_g.end(), 0.0);
        }
        std::fill(grad.final_norm_g.begin(), grad.final_norm_g.end(), 0.0);
        e.backward(seq, grad);
        std::vector<std::pair<std::string, std::vector<double>>> out;
        for (const auto& t : tensor_views(grad)) {
            std::vector<double> v(t.count);
            for (size_t i = 0; i < t.count; ++i) v[i] = static_cast<double>(t.data[i]);
            out.emplace_back(t.name, std::move(v));
        }
        return out;
    });
}

std::pair<Model, TrainReport> train(const Model& model,
                                    const std::vector<MultimodalSequence>& dataset,
                                    const TrainConfig& cfg) {
    if (!model.impl_) throw ConfigError("model is empty");
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    if (cfg.steps < 0) throw ConfigError("steps must be nonnegative");
    if (!(cfg.lr > 0)) throw ConfigError("learning rate must be positive");
    if (cfg.batch < 1) throw ConfigError("batch size must be >= 1");

    Model out = model;
    TrainReport report;
    if (cfg.steps == 0) return {out, report};

    auto fresh = std::make_shared<ModelImpl>(*model.impl_);
    std::visit(
        [&](auto& e) {
            using Scalar = typename std::decay_t<decltype(e.w.tok_embed.a)>::value_type;
            auto grad = make_weights<Scalar>(e.arch);
            auto vel = make_weights<Scalar>(e.arch);
            auto gviews = tensor_views(grad);
            auto vviews = tensor_views(vel);
            auto wviews = tensor_views(e.w);
            auto zero_all = [&](auto& views) {
                for (auto& t : views) std::fill(t.data, t.data + t.count, Scalar(0));
            };
            zero_all(vviews);
            Rng rng = make_rng(cfg.seed);
            report.loss_trace.reserve(cfg.steps);
            for (long step = 0; step < cfg.steps; ++step) {
                zero_all(gviews);
                double loss_sum = 0.0;
                try {
                    for (int b = 0; b < cfg.batch; ++b) {
                        const size_t idx = uniform_below(rng, dataset.size());
                        loss_sum += e.backward(dataset[idx], grad);
                    }
                } catch (const NumericError& err) {
                    throw TrainError(std::string("training diverged at step ") +
                                         std::to_string(step) + ": " + err.what(),
                                     step);
                }
                const double mean_loss = loss_sum / cfg.batch;
                if (!std::isfinite(mean_loss) || mean_loss > 1e3)
                    throw TrainError("training diverged at step " + std::to_string(step),
                                     step);
                report.loss_trace.push_back(mean_loss);
                const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(cfg.batch);
                const Scalar lr = static_cast<Scalar>(cfg.lr);
                const Scalar mu = static_cast<Scalar>(cfg.momentum);
                for (size_t t = 0; t < wviews.size(); ++t) {
                    Scalar* wd = wviews[t].data;
                    Scalar* gd = gviews[t].data;
                    Scalar* vd = vviews[t].data;
                    const size_t nelem = wviews[t].count;
                    if (cfg.momentum != 0.0) {
                        for (size_t i = 0; i < nelem; ++i) {
                            vd[i] = mu * vd[i] + gd[i] * inv_batch;
                            wd[i] -= lr * vd[i];
                        }
                    } else {
                        for (size_t i = 0; i < nelem; ++i) wd[i] -= lr * gd[i] * inv_batch;
                    }
                }
            }
        },
        fresh->engine);
    out.impl_ = std::move(fresh);
    return {out, report};
}

}  // namespace tlens
