#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tempolm/model.hpp"

namespace tempolm {

namespace detail {

inline void layer_norm_backward(const Mat& dy, const Mat& x, const std::vector<double>& mean,
                                const std::vector<double>& rstd, const Mat& g, Mat& dx,
                                Mat& dg, Mat& db) {
    const int d = x.cols;
    const double* gv = g.row(0);
    double* dgv = dg.row(0);
    double* dbv = db.row(0);
    for (int r = 0; r < x.rows; ++r) { // scale/bias grads share rows; keep serial
        const double* dyr = dy.row(r);
        const double* xr = x.row(r);
        const double mu = mean[std::size_t(r)], rs = rstd[std::size_t(r)];
        for (int j = 0; j < d; ++j) {
            dgv[j] += dyr[j] * ((xr[j] - mu) * rs);
            dbv[j] += dyr[j];
        }
    }
    if (dx.rows != x.rows || dx.cols != d) dx = Mat(x.rows, d);
    parallel_for(std::size_t(x.rows), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const double* dyr = dy.row(int(r));
            const double* xr = x.row(int(r));
            const double mu = mean[r], rs = rstd[r];
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < d; ++j) {
                const double gd = dyr[j] * gv[j];
                m1 += gd;
                m2 += gd * ((xr[j] - mu) * rs);
            }
            m1 /= d;
            m2 /= d;
            double* dxr = dx.row(int(r));
            for (int j = 0; j < d; ++j) {
                const double gd = dyr[j] * gv[j];
                const double xh = (xr[j] - mu) * rs;
                dxr[j] = rs * (gd - m1 - xh * m2);
            }
        }
    });
}

inline void dropout_backward(Mat& grad, double p, std::uint64_t seed, std::uint64_t site) {
    if (p <= 0.0) return;
    const double keep = 1.0 - p;
    const double scale = 1.0 / keep;
    for (std::size_t i = 0; i < grad.v.size(); ++i)
        grad.v[i] = hash_uniform(seed, site, i) < keep ? grad.v[i] * scale : 0.0;
}

// Cross-entropy over gathered rows: fills dlogits in place (softmax - onehot)/n.
inline double softmax_xent_backward(Mat& logits, const std::vector<std::int32_t>& labels) {
    const int V = logits.cols;
    const double inv_n = 1.0 / double(logits.rows);
    double total = 0.0;
    for (int r = 0; r < logits.rows; ++r) {
        double* lr = logits.row(r);
        const std::int32_t label = labels[std::size_t(r)];
        double mx = lr[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, lr[j]);
        double sum = 0.0;
        for (int j = 0; j < V; ++j) sum += std::exp(lr[j] - mx);
        total += mx + std::log(sum) - lr[label];
        const double inv_sum = 1.0 / sum;
        for (int j = 0; j < V; ++j) lr[j] = std::exp(lr[j] - mx) * inv_sum * inv_n;
        lr[label] -= inv_n;
    }
    return total * inv_n;
}

} // namespace detail

/// One fused forward+backward pass over a masked batch. Fills g with the
/// gradient of the mean masked cross-entropy with respect to every parameter
/// (g is zeroed first) and returns the loss. Logits are evaluated only at
/// predicted positions; the result is identical to forward() + mlm_loss()
/// followed by full backpropagation.
inline double train_step_backward(const Parameters& p, const ModelConfig& cfg,
                                  const MaskedBatch& batch, bool use_dropout,
                                  std::uint64_t dropout_seed, Gradients& g) {
    const int B = batch.n_seqs, L = batch.max_len, D = cfg.hidden_dim, H = cfg.n_heads;
    const int dh = D / H;
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    const int R = B * L;
    const bool train = use_dropout && cfg.dropout > 0.0;

    detail::ForwardCache fc;
    detail::encoder_forward(p, cfg, BatchView::of(batch), train, dropout_seed, fc, nullptr);

    std::vector<int> rows;
    std::vector<std::int32_t> labels_sel;
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        if (batch.labels[i] == no_label) continue;
        rows.push_back(int(i));
        labels_sel.push_back(batch.labels[i]);
    }
    if (rows.empty()) throw std::invalid_argument("train_step: no prediction targets");
    const int P = int(rows.size());

    g.for_each([](const char*, Mat& m, bool) { m.zero(); });

    Mat hs(P, D);
    for (int i = 0; i < P; ++i)
        std::copy_n(fc.h_final.row(rows[std::size_t(i)]), D, hs.row(i));

    Mat emb_t;
    transpose(p.tok_emb, emb_t);
    Mat logits(P, cfg.vocab_size);
    gemm_nn(hs, emb_t, logits);
    add_row_vector(logits, p.out_bias);
    if (!logits.all_finite()) throw std::runtime_error("train_step: non-finite logits");

    const double loss = detail::softmax_xent_backward(logits, labels_sel); // logits becomes dlogits

    add_col_sums(logits, g.out_bias);
    gemm_tn(logits, hs, g.tok_emb, /*accumulate=*/true); // head side of the tied embedding
    Mat dhs(P, D);
    gemm_nn(logits, p.tok_emb, dhs);

    Mat dz(R, D);
    for (int i = 0; i < P; ++i)
        std::copy_n(dhs.row(i), D, dz.row(rows[std::size_t(i)]));

    Mat dres2, dy, dffn_out, dpre, dact, dres1, dattn_out, dctx, dxattn, wt;
    for (int li = cfg.n_layers - 1; li >= 0; --li) {
        const detail::LayerCache& c = fc.layers[std::size_t(li)];
        const auto& lp = p.layers[std::size_t(li)];
        auto& lg = g.layers[std::size_t(li)];

        detail::layer_norm_backward(dz, c.res2, c.ln2_mean, c.ln2_rstd, lp.ln2_g, dres2,
                                    lg.ln2_g, lg.ln2_b);

        dffn_out = dres2;
        if (train) detail::dropout_backward(dffn_out, cfg.dropout, dropout_seed, detail::drop_site_ffn(li));
        dy = dres2; // residual branch

        add_col_sums(dffn_out, lg.b2);
        gemm_tn(c.ffn_act, dffn_out, lg.w2, true);
        transpose(lp.w2, wt); // D x F
        dact = Mat(R, cfg.ffn_dim);
        gemm_nn(dffn_out, wt, dact);

        dpre = std::move(dact);
        for (std::size_t i = 0; i < dpre.v.size(); ++i) {
            const double x = c.ffn_pre.v[i];
            // gelu'(x) = gate(x) + x * phi(x), with gate cached by the forward
            dpre.v[i] *= c.ffn_gate.v[i] + x * std::exp(-0.5 * x * x) * 0.3989422804014326779;
        }

        add_col_sums(dpre, lg.b1);
        gemm_tn(c.y, dpre, lg.w1, true);
        transpose(lp.w1, wt); // F x D
        gemm_nn(dpre, wt, dy, /*accumulate=*/true);

        detail::layer_norm_backward(dy, c.res1, c.ln1_mean, c.ln1_rstd, lp.ln1_g, dres1,
                                    lg.ln1_g, lg.ln1_b);

        dattn_out = dres1;
        if (train) detail::dropout_backward(dattn_out, cfg.dropout, dropout_seed, detail::drop_site_attn(li));
        dz = dres1; // becomes dx for this layer; attention adds into it below

        add_col_sums(dattn_out, lg.bo);
        gemm_tn(c.ctx, dattn_out, lg.wo, true);
        transpose(lp.wo, wt);
        dctx = Mat(R, D);
        gemm_nn(dattn_out, wt, dctx);

        Mat dq(R, D), dk(R, D), dv(R, D);
        const BatchView view = BatchView::of(batch);
        parallel_for(std::size_t(B) * H, [&](std::size_t lo, std::size_t hi) {
            std::vector<double> da(std::size_t(L), 0.0);
            for (std::size_t sh = lo; sh < hi; ++sh) {
                const int s = int(sh) / H;
                const int h = int(sh) % H;
                const int col0 = h * dh;
                for (int i = 0; i < L; ++i) {
                    const double* arow = c.attn.row((s * H + h) * L + i);
                    const double* dctxi = dctx.row(s * L + i) + col0;
                    // dV[j] += A[i][j] * dctx[i];  dA[i][j] = dctx[i] . V[j]
                    double t = 0.0;
                    for (int j = 0; j < L; ++j) {
                        const double a = arow[j];
                        if (a == 0.0) {
                            da[std::size_t(j)] = 0.0;
                            continue;
                        }
                        axpy(a, dctxi, dv.row(s * L + j) + col0, dh);
                        const double daij = dot(dctxi, c.v.row(s * L + j) + col0, dh);
                        da[std::size_t(j)] = daij;
                        t += daij * a;
                    }
                    // softmax backward folded with the 1/sqrt(dh) scale
                    double* dqi = dq.row(s * L + i) + col0;
                    const double* qi = c.q.row(s * L + i) + col0;
                    for (int j = 0; j < L; ++j) {
                        const double a = arow[j];
                        if (a == 0.0) continue;
                        const double ds = a * (da[std::size_t(j)] - t) * inv_sqrt_dh;
                        if (ds == 0.0) continue;
                        axpy(ds, c.k.row(s * L + j) + col0, dqi, dh);
                        axpy(ds, qi, dk.row(s * L + j) + col0, dh);
                    }
                }
            }
        });
        (void)view;

        add_col_sums(dq, lg.bq);
        gemm_tn(c.x, dq, lg.wq, true);
        transpose(lp.wq, wt);
        gemm_nn(dq, wt, dz, true);

        gemm_tn(c.x, dk, lg.wk, true);
        transpose(lp.wk, wt);
        gemm_nn(dk, wt, dz, true);

        add_col_sums(dv, lg.bv);
        gemm_tn(c.x, dv, lg.wv, true);
        transpose(lp.wv, wt);
        gemm_nn(dv, wt, dz, true);
    }

    // embedding block
    if (train) detail::dropout_backward(dz, cfg.dropout, dropout_seed, detail::drop_site_emb());
    Mat demb;
    detail::layer_norm_backward(dz, fc.emb, fc.emb_mean, fc.emb_rstd, p.emb_ln_g, demb,
                                g.emb_ln_g, g.emb_ln_b);
    for (int s = 0; s < B; ++s) {
        for (int pos = 0; pos < L; ++pos) {
            const double* row = demb.row(s * L + pos);
            axpy(1.0, row, g.tok_emb.row(batch.id_at(s, pos)), D);
            axpy(1.0, row, g.pos_emb.row(pos), D);
        }
    }
    return loss;
}

/// Gradient of the mean masked loss in eval mode (dropout off); deterministic.
inline Gradients backward(const Parameters& params, const MaskedBatch& batch,
                          const ModelConfig& cfg) {
    Gradients g = Parameters::zeros(cfg);
    train_step_backward(params, cfg, batch, false, 0, g);
    return g;
}

} // namespace tempolm
