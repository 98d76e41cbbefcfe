#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tempolm/masking.hpp"
#include "tempolm/rng.hpp"
#include "tempolm/tensor.hpp"
#include "tempolm/vocab.hpp"

namespace tempolm {

/// Architecture of the bidirectional encoder. The defaults are the
/// desk-scale "tiny" shape; base_like() mirrors a mid-size variant for the
/// model-size comparison.
struct ModelConfig {
    int n_layers = 2;
    int hidden_dim = 128;
    int n_heads = 2;
    int ffn_dim = 256;
    int max_len = 128;
    int vocab_size = 0;
    double dropout = 0.1;

    void validate() const {
        if (n_layers < 1) throw std::invalid_argument("model.n_layers must be >= 1");
        if (hidden_dim < 1 || n_heads < 1 || hidden_dim % n_heads != 0)
            throw std::invalid_argument("model.hidden_dim must be a positive multiple of n_heads");
        if (ffn_dim < 1) throw std::invalid_argument("model.ffn_dim must be >= 1");
        if (max_len < 2) throw std::invalid_argument("model.max_len must be >= 2");
        if (vocab_size < 4) throw std::invalid_argument("model.vocab_size must cover the special tokens");
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model.dropout must be in [0,1)");
    }

    static ModelConfig tiny(int vocab) {
        ModelConfig c;
        c.vocab_size = vocab;
        return c;
    }

    static ModelConfig base_like(int vocab) {
        ModelConfig c;
        c.n_layers = 4;
        c.hidden_dim = 256;
        c.n_heads = 4;
        c.ffn_dim = 512;
        c.vocab_size = vocab;
        return c;
    }
};

/// All trainable tensors. The MLM head reuses tok_emb (tied embeddings) and
/// adds only out_bias.
struct Parameters {
    // wk carries no bias: a shared key offset shifts a softmax row uniformly
    // and cancels, so such a parameter would never receive gradient.
    struct Layer {
        Mat wq, bq, wk, wv, bv, wo, bo;
        Mat ln1_g, ln1_b;
        Mat w1, b1, w2, b2;
        Mat ln2_g, ln2_b;
    };

    Mat tok_emb;  // vocab_size x hidden
    Mat pos_emb;  // max_len x hidden
    Mat emb_ln_g, emb_ln_b;
    std::vector<Layer> layers;
    Mat out_bias; // 1 x vocab_size

    static Parameters zeros(const ModelConfig& cfg) {
        cfg.validate();
        Parameters p;
        const int d = cfg.hidden_dim, f = cfg.ffn_dim;
        p.tok_emb = Mat(cfg.vocab_size, d);
        p.pos_emb = Mat(cfg.max_len, d);
        p.emb_ln_g = Mat(1, d);
        p.emb_ln_b = Mat(1, d);
        p.layers.resize(std::size_t(cfg.n_layers));
        for (auto& l : p.layers) {
            l.wq = Mat(d, d); l.bq = Mat(1, d);
            l.wk = Mat(d, d);
            l.wv = Mat(d, d); l.bv = Mat(1, d);
            l.wo = Mat(d, d); l.bo = Mat(1, d);
            l.ln1_g = Mat(1, d); l.ln1_b = Mat(1, d);
            l.w1 = Mat(d, f); l.b1 = Mat(1, f);
            l.w2 = Mat(f, d); l.b2 = Mat(1, d);
            l.ln2_g = Mat(1, d); l.ln2_b = Mat(1, d);
        }
        p.out_bias = Mat(1, cfg.vocab_size);
        return p;
    }

    /// BERT-style init: N(0, 0.02) weights and embeddings, zero biases,
    /// unit layer-norm scales.
    static Parameters init(const ModelConfig& cfg, std::uint64_t seed) {
        Parameters p = zeros(cfg);
        Rng rng(derive_seed(seed, "init"));
        p.for_each([&](const char* name, Mat& m, bool decay) {
            std::string n(name);
            // the only tensors named *_g are the layer-norm scales
            bool is_ln_scale = n.size() >= 2 && n.compare(n.size() - 2, 2, "_g") == 0;
            if (is_ln_scale) {
                for (auto& x : m.v) x = 1.0;
            } else if (decay) { // weight matrices and embeddings
                for (auto& x : m.v) x = rng.normal(0.0, 0.02);
            } // biases stay zero
        });
        return p;
    }

    template <class F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    void check_shapes(const ModelConfig& cfg) const {
        const Parameters ref = zeros(cfg);
        std::vector<std::pair<std::string, std::pair<int, int>>> want, got;
        ref.for_each([&](const char* n, const Mat& m, bool) { want.push_back({n, {m.rows, m.cols}}); });
        for_each([&](const char* n, const Mat& m, bool) { got.push_back({n, {m.rows, m.cols}}); });
        if (want.size() != got.size()) throw std::runtime_error("parameters: tensor count mismatch");
        for (std::size_t i = 0; i < want.size(); ++i)
            if (want[i] != got[i])
                throw std::runtime_error("parameters: shape mismatch for tensor '" + got[i].first + "'");
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const char*, const Mat& m, bool) { ok = ok && m.all_finite(); });
        return ok;
    }

private:
    // Single visitation order for init, optimization, and serialization.
    // decay=true marks tensors subject to weight decay (not biases/layer norms).
    template <class Self, class F>
    static void visit(Self& self, F& f) {
        f("tok_emb", self.tok_emb, true);
        f("pos_emb", self.pos_emb, true);
        f("emb_ln_g", self.emb_ln_g, false);
        f("emb_ln_b", self.emb_ln_b, false);
        for (std::size_t i = 0; i < self.layers.size(); ++i) {
            auto& l = self.layers[i];
            const std::string base = "L" + std::to_string(i) + ".";
            // string lifetimes: names are consumed synchronously by f
            auto emit = [&](const char* suffix, auto& m, bool decay) {
                std::string n = base + suffix;
                f(n.c_str(), m, decay);
            };
            emit("wq", l.wq, true);   emit("bq", l.bq, false);
            emit("wk", l.wk, true);
            emit("wv", l.wv, true);   emit("bv", l.bv, false);
            emit("wo", l.wo, true);   emit("bo", l.bo, false);
            emit("ln1_g", l.ln1_g, false); emit("ln1_b", l.ln1_b, false);
            emit("w1", l.w1, true);   emit("b1", l.b1, false);
            emit("w2", l.w2, true);   emit("b2", l.b2, false);
            emit("ln2_g", l.ln2_g, false); emit("ln2_b", l.ln2_b, false);
        }
        f("out_bias", self.out_bias, false);
    }
};

using Gradients = Parameters;

/// Read-only view of a (batch x length) id grid. attn == nullptr means all
/// positions are valid.
struct BatchView {
    const std::int32_t* ids = nullptr;
    const std::uint8_t* attn = nullptr;
    int n_seqs = 0;
    int max_len = 0;

    static BatchView of(const MaskedBatch& b) {
        return {b.input_ids.data(), b.attention_mask.data(), b.n_seqs, b.max_len};
    }
    static BatchView of(const EncodedSequence& e) {
        return {e.ids.data(), nullptr, 1, int(e.ids.size())};
    }

    bool valid(int s, int p) const {
        return attn == nullptr || attn[std::size_t(s) * max_len + p] != 0;
    }
    std::int32_t id(int s, int p) const { return ids[std::size_t(s) * max_len + p]; }
};

inline constexpr double layer_norm_eps = 1e-12;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

inline double gelu_grad(double x) {
    // d/dx [0.5 x (1 + erf(x/sqrt(2)))] = 0.5(1+erf(x/sqrt(2))) + x * phi(x)
    const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)) + x * phi;
}

namespace detail {

inline void layer_norm_forward(const Mat& x, const Mat& g, const Mat& b, Mat& out,
                               std::vector<double>& mean, std::vector<double>& rstd) {
    const int d = x.cols;
    mean.resize(std::size_t(x.rows));
    rstd.resize(std::size_t(x.rows));
    if (out.rows != x.rows || out.cols != d) out = Mat(x.rows, d);
    const double* gv = g.row(0);
    const double* bv = b.row(0);
    parallel_for(std::size_t(x.rows), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const double* xr = x.row(int(r));
            double mu = 0.0;
            for (int j = 0; j < d; ++j) mu += xr[j];
            mu /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                double c = xr[j] - mu;
                var += c * c;
            }
            var /= d;
            const double rs = 1.0 / std::sqrt(var + layer_norm_eps);
            mean[r] = mu;
            rstd[r] = rs;
            double* o = out.row(int(r));
            for (int j = 0; j < d; ++j) o[j] = gv[j] * ((xr[j] - mu) * rs) + bv[j];
        }
    });
}

inline void dropout_forward(Mat& m, double p, std::uint64_t seed, std::uint64_t site) {
    if (p <= 0.0) return;
    const double keep = 1.0 - p;
    const double scale = 1.0 / keep;
    for (std::size_t i = 0; i < m.v.size(); ++i)
        m.v[i] = hash_uniform(seed, site, i) < keep ? m.v[i] * scale : 0.0;
}

// Dropout sites, one per application point so masks are independent.
inline std::uint64_t drop_site_emb() { return 0; }
inline std::uint64_t drop_site_attn(int layer) { return 1 + 2 * std::uint64_t(layer); }
inline std::uint64_t drop_site_ffn(int layer) { return 2 + 2 * std::uint64_t(layer); }

struct LayerCache {
    Mat x; // layer input
    Mat q, k, v;
    Mat attn;   // (n_seqs*heads*len) x len softmax rows; exact zeros on padding
    Mat ctx;    // attention mix, pre-output-projection
    Mat res1;   // x + dropout(attn_out)
    std::vector<double> ln1_mean, ln1_rstd;
    Mat y;      // ln1 output
    Mat ffn_pre, ffn_act;
    Mat ffn_gate; // 0.5*(1+erf(pre/sqrt(2))), reused by the backward pass
    Mat res2;   // y + dropout(ffn_out)
    std::vector<double> ln2_mean, ln2_rstd;
};

struct ForwardCache {
    Mat emb; // tok + pos, pre layer norm
    std::vector<double> emb_mean, emb_rstd;
    Mat x0; // embedding block output (post-LN, post-dropout)
    std::vector<LayerCache> layers;
    Mat h_final; // output of the last layer
};

/// Runs the encoder stack. When hidden_states is non-null it receives the
/// embedding-block state plus each layer output (n_layers + 1 entries).
inline void encoder_forward(const Parameters& p, const ModelConfig& cfg, BatchView batch,
                            bool train, std::uint64_t dropout_seed, ForwardCache& fc,
                            std::vector<Mat>* hidden_states) {
    cfg.validate();
    const int B = batch.n_seqs, L = batch.max_len, D = cfg.hidden_dim, H = cfg.n_heads;
    const int dh = D / H;
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    if (L > cfg.max_len) throw std::invalid_argument("forward: sequence length exceeds max_len");
    if (B < 1 || L < 1) throw std::invalid_argument("forward: empty batch");
    const int R = B * L;

    // embeddings
    fc.emb = Mat(R, D);
    for (int s = 0; s < B; ++s) {
        for (int pos = 0; pos < L; ++pos) {
            const std::int32_t id = batch.id(s, pos);
            if (id < 0 || id >= cfg.vocab_size)
                throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                            " outside vocabulary");
            double* row = fc.emb.row(s * L + pos);
            const double* te = p.tok_emb.row(id);
            const double* pe = p.pos_emb.row(pos);
            for (int j = 0; j < D; ++j) row[j] = te[j] + pe[j];
        }
    }
    layer_norm_forward(fc.emb, p.emb_ln_g, p.emb_ln_b, fc.x0, fc.emb_mean, fc.emb_rstd);
    if (train) dropout_forward(fc.x0, cfg.dropout, dropout_seed, drop_site_emb());
    if (!fc.x0.all_finite()) throw std::runtime_error("forward: non-finite activations in embedding block");
    if (hidden_states) hidden_states->push_back(fc.x0);

    fc.layers.assign(std::size_t(cfg.n_layers), LayerCache{});
    Mat cur = fc.x0;
    for (int li = 0; li < cfg.n_layers; ++li) {
        LayerCache& c = fc.layers[std::size_t(li)];
        const auto& lp = p.layers[std::size_t(li)];
        c.x = std::move(cur);

        c.q = Mat(R, D); gemm_nn(c.x, lp.wq, c.q); add_row_vector(c.q, lp.bq);
        c.k = Mat(R, D); gemm_nn(c.x, lp.wk, c.k);
        c.v = Mat(R, D); gemm_nn(c.x, lp.wv, c.v); add_row_vector(c.v, lp.bv);

        c.attn = Mat(B * H * L, L);
        c.ctx = Mat(R, D);
        parallel_for(std::size_t(B) * H, [&](std::size_t lo, std::size_t hi) {
            std::vector<double> scores(std::size_t(L), 0.0);
            for (std::size_t sh = lo; sh < hi; ++sh) {
                const int s = int(sh) / H;
                const int h = int(sh) % H;
                const int col0 = h * dh;
                for (int i = 0; i < L; ++i) {
                    const double* qi = c.q.row(s * L + i) + col0;
                    double mx = -1e300;
                    for (int j = 0; j < L; ++j) {
                        if (!batch.valid(s, j)) continue;
                        double sc = dot(qi, c.k.row(s * L + j) + col0, dh) * inv_sqrt_dh;
                        scores[std::size_t(j)] = sc;
                        if (sc > mx) mx = sc;
                    }
                    double* arow = c.attn.row((s * H + h) * L + i);
                    double sum = 0.0;
                    for (int j = 0; j < L; ++j) {
                        if (!batch.valid(s, j)) {
                            arow[j] = 0.0;
                            continue;
                        }
                        double e = std::exp(scores[std::size_t(j)] - mx);
                        arow[j] = e;
                        sum += e;
                    }
                    const double inv = 1.0 / sum;
                    for (int j = 0; j < L; ++j) arow[j] *= inv;
                    double* ctxi = c.ctx.row(s * L + i) + col0;
                    for (int j = 0; j < dh; ++j) ctxi[j] = 0.0;
                    for (int j = 0; j < L; ++j) {
                        const double a = arow[j];
                        if (a == 0.0) continue;
                        axpy(a, c.v.row(s * L + j) + col0, ctxi, dh);
                    }
                }
            }
        });

        Mat attn_out(R, D);
        gemm_nn(c.ctx, lp.wo, attn_out);
        add_row_vector(attn_out, lp.bo);
        if (train) dropout_forward(attn_out, cfg.dropout, dropout_seed, drop_site_attn(li));

        c.res1 = c.x;
        for (std::size_t i = 0; i < c.res1.v.size(); ++i) c.res1.v[i] += attn_out.v[i];
        layer_norm_forward(c.res1, lp.ln1_g, lp.ln1_b, c.y, c.ln1_mean, c.ln1_rstd);

        c.ffn_pre = Mat(R, cfg.ffn_dim);
        gemm_nn(c.y, lp.w1, c.ffn_pre);
        add_row_vector(c.ffn_pre, lp.b1);
        c.ffn_act = Mat(R, cfg.ffn_dim);
        c.ffn_gate = Mat(R, cfg.ffn_dim);
        for (std::size_t i = 0; i < c.ffn_pre.v.size(); ++i) {
            const double x = c.ffn_pre.v[i];
            const double gate = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
            c.ffn_gate.v[i] = gate;
            c.ffn_act.v[i] = x * gate;
        }

        Mat ffn_out(R, D);
        gemm_nn(c.ffn_act, lp.w2, ffn_out);
        add_row_vector(ffn_out, lp.b2);
        if (train) dropout_forward(ffn_out, cfg.dropout, dropout_seed, drop_site_ffn(li));

        c.res2 = c.y;
        for (std::size_t i = 0; i < c.res2.v.size(); ++i) c.res2.v[i] += ffn_out.v[i];

        Mat z;
        layer_norm_forward(c.res2, lp.ln2_g, lp.ln2_b, z, c.ln2_mean, c.ln2_rstd);
        if (!z.all_finite())
            throw std::runtime_error("forward: non-finite activations in layer " + std::to_string(li));
        if (hidden_states) hidden_states->push_back(z);
        if (li + 1 == cfg.n_layers)
            fc.h_final = std::move(z);
        else
            cur = std::move(z);
    }
}

} // namespace detail

/// Per-layer hidden states (embedding block first) and the full logit grid.
struct ForwardResult {
    std::vector<Mat> hidden_states; // n_layers + 1 entries of (B*L x D)
    Mat logits;                     // (B*L) x vocab
    int n_seqs = 0;
    int max_len = 0;
};

/// Full forward pass with logits at every position. Inference and test
/// entry point; training uses the fused path in backprop.hpp which computes
/// logits only at predicted positions.
inline ForwardResult forward(const Parameters& params, BatchView batch, const ModelConfig& cfg,
                             bool train_mode = false, std::uint64_t dropout_seed = 0) {
    ForwardResult out;
    out.n_seqs = batch.n_seqs;
    out.max_len = batch.max_len;
    detail::ForwardCache fc;
    detail::encoder_forward(params, cfg, batch, train_mode, dropout_seed, fc, &out.hidden_states);

    Mat emb_t;
    transpose(params.tok_emb, emb_t); // D x V
    out.logits = Mat(batch.n_seqs * batch.max_len, cfg.vocab_size);
    gemm_nn(fc.h_final, emb_t, out.logits);
    add_row_vector(out.logits, params.out_bias);
    if (!out.logits.all_finite()) throw std::runtime_error("forward: non-finite logits");
    return out;
}

inline ForwardResult forward(const Parameters& params, const MaskedBatch& batch,
                             const ModelConfig& cfg, bool train_mode = false,
                             std::uint64_t dropout_seed = 0) {
    return forward(params, BatchView::of(batch), cfg, train_mode, dropout_seed);
}

/// Mean cross-entropy over the non-sentinel label positions, plus the
/// gradient of the loss with respect to the logits (zero rows elsewhere).
struct MlmLoss {
    double loss = 0.0;
    Mat dlogits;
};

inline MlmLoss mlm_loss(const Mat& logits, const std::vector<std::int32_t>& labels) {
    if (int(labels.size()) != logits.rows)
        throw std::invalid_argument("mlm_loss: labels length must equal logit rows");
    std::vector<int> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != no_label) rows.push_back(int(i));
    if (rows.empty()) throw std::invalid_argument("mlm_loss: no prediction targets");

    MlmLoss out;
    out.dlogits = Mat(logits.rows, logits.cols);
    const double inv_n = 1.0 / double(rows.size());
    const int V = logits.cols;
    double total = 0.0;
    for (int r : rows) {
        const std::int32_t label = labels[std::size_t(r)];
        if (label < 0 || label >= V) throw std::invalid_argument("mlm_loss: label out of range");
        const double* lr = logits.row(r);
        double mx = lr[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, lr[j]);
        double sum = 0.0;
        for (int j = 0; j < V; ++j) sum += std::exp(lr[j] - mx);
        const double lse = mx + std::log(sum);
        total += lse - lr[label];
        double* dr = out.dlogits.row(r);
        const double inv_sum = 1.0 / sum;
        for (int j = 0; j < V; ++j) dr[j] = std::exp(lr[j] - mx) * inv_sum * inv_n;
        dr[label] -= inv_n;
    }
    out.loss = total * inv_n;
    if (!std::isfinite(out.loss)) throw std::runtime_error("mlm_loss: non-finite loss");
    return out;
}

/// Softmax distributions over the vocabulary at each [MASK] position of a
/// single encoded sequence.
struct FillMaskResult {
    std::vector<int> positions;
    std::vector<std::vector<double>> distributions; // one per mask, sums to 1
};

inline FillMaskResult fill_mask(const Parameters& params, const EncodedSequence& encoded,
                                const ModelConfig& cfg) {
    FillMaskResult out;
    for (std::size_t i = 0; i < encoded.ids.size(); ++i)
        if (encoded.ids[i] == Vocab::mask_id) out.positions.push_back(int(i));
    if (out.positions.empty()) throw std::invalid_argument("fill_mask: sequence has no [MASK]");

    detail::ForwardCache fc;
    detail::encoder_forward(params, cfg, BatchView::of(encoded), false, 0, fc, nullptr);
    const int V = cfg.vocab_size;
    for (int pos : out.positions) {
        const double* h = fc.h_final.row(pos);
        std::vector<double> logits(std::size_t(V), 0.0);
        for (int vtok = 0; vtok < V; ++vtok)
            logits[std::size_t(vtok)] = dot(h, params.tok_emb.row(vtok), cfg.hidden_dim) +
                                        params.out_bias.at(0, vtok);
        double mx = logits[0];
        for (double x : logits) mx = std::max(mx, x);
        double sum = 0.0;
        for (double& x : logits) {
            x = std::exp(x - mx);
            sum += x;
        }
        for (double& x : logits) x /= sum;
        out.distributions.push_back(std::move(logits));
    }
    return out;
}

/// Contextual embedding of a word occurrence set: the last h layer states are
/// averaged elementwise, then averaged across the given positions.
inline std::vector<double> token_embedding(const Parameters& params, const EncodedSequence& encoded,
                                           const std::vector<int>& target_positions, int h,
                                           const ModelConfig& cfg) {
    if (target_positions.empty()) throw std::invalid_argument("token_embedding: no target positions");
    if (h < 1 || h > cfg.n_layers)
        throw std::invalid_argument("token_embedding: h must be in [1, n_layers]");
    for (int pos : target_positions)
        if (pos < 0 || pos >= int(encoded.ids.size()))
            throw std::invalid_argument("token_embedding: position out of range");

    std::vector<Mat> states;
    detail::ForwardCache fc;
    detail::encoder_forward(params, cfg, BatchView::of(encoded), false, 0, fc, &states);
    // states = [embedding block, layer 1, ..., layer n]; take the last h layer outputs
    std::vector<double> out(std::size_t(cfg.hidden_dim), 0.0);
    for (int pos : target_positions) {
        for (int li = cfg.n_layers - h + 1; li <= cfg.n_layers; ++li) {
            const double* row = states[std::size_t(li)].row(pos);
            for (int j = 0; j < cfg.hidden_dim; ++j) out[std::size_t(j)] += row[j];
        }
    }
    const double scale = 1.0 / (double(h) * double(target_positions.size()));
    for (double& x : out) x *= scale;
    return out;
}

/// Fraction of predicted positions whose argmax logit equals the label.
inline double masked_accuracy(const Parameters& params, const MaskedBatch& batch,
                              const ModelConfig& cfg) {
    detail::ForwardCache fc;
    detail::encoder_forward(params, cfg, BatchView::of(batch), false, 0, fc, nullptr);
    long correct = 0, total = 0;
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        if (batch.labels[i] == no_label) continue;
        const double* hrow = fc.h_final.row(int(i));
        int best = 0;
        double best_logit = -1e300;
        for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
            double logit = dot(hrow, params.tok_emb.row(vtok), cfg.hidden_dim) +
                           params.out_bias.at(0, vtok);
            if (logit > best_logit) {
                best_logit = logit;
                best = vtok;
            }
        }
        ++total;
        if (best == batch.labels[i]) ++correct;
    }
    if (total == 0) throw std::invalid_argument("masked_accuracy: no prediction targets");
    return double(correct) / double(total);
}

} // namespace tempolm
