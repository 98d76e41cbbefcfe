#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tempolm/model.hpp"

namespace tempolm {

struct AdamHyper {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; ///< decoupled; applied to weights/embeddings, not biases or norms
};

struct OptimizerState {
    Parameters m, v;
    std::int64_t step = 0;

    static OptimizerState zeros(const ModelConfig& cfg) {
        OptimizerState s;
        s.m = Parameters::zeros(cfg);
        s.v = Parameters::zeros(cfg);
        return s;
    }
};

namespace detail {

struct TensorRef {
    Mat* mat;
    bool decay;
};

inline std::vector<TensorRef> tensor_refs(Parameters& p) {
    std::vector<TensorRef> out;
    p.for_each([&](const char*, Mat& m, bool decay) { out.push_back({&m, decay}); });
    return out;
}

} // namespace detail

/// One AdamW step with bias-corrected moments and decoupled weight decay.
/// Throws on non-finite gradients before touching any parameter, so a failed
/// step leaves params and state unchanged (apart from no step increment).
inline void adam_step(Parameters& params, const Gradients& grads, OptimizerState& state,
                      const AdamHyper& hyper) {
    auto ps = detail::tensor_refs(params);
    auto gs = detail::tensor_refs(const_cast<Gradients&>(grads));
    auto ms = detail::tensor_refs(state.m);
    auto vs = detail::tensor_refs(state.v);
    if (ps.size() != gs.size() || ps.size() != ms.size() || ps.size() != vs.size())
        throw std::invalid_argument("adam_step: tensor count mismatch");
    for (std::size_t t = 0; t < ps.size(); ++t) {
        if (!ps[t].mat->same_shape(*gs[t].mat) || !ps[t].mat->same_shape(*ms[t].mat) ||
            !ps[t].mat->same_shape(*vs[t].mat))
            throw std::invalid_argument("adam_step: tensor shape mismatch");
        if (!gs[t].mat->all_finite())
            throw std::runtime_error("adam_step: non-finite gradient, no update applied");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, double(state.step));
    for (std::size_t t = 0; t < ps.size(); ++t) {
        Mat& p = *ps[t].mat;
        const Mat& g = *gs[t].mat;
        Mat& m = *ms[t].mat;
        Mat& v = *vs[t].mat;
        const bool decay = ps[t].decay && hyper.weight_decay > 0.0;
        const double wd = 1.0 - hyper.lr * hyper.weight_decay;
        parallel_for(p.v.size(), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                if (decay) p.v[i] *= wd;
                const double gi = g.v[i];
                m.v[i] = hyper.beta1 * m.v[i] + (1.0 - hyper.beta1) * gi;
                v.v[i] = hyper.beta2 * v.v[i] + (1.0 - hyper.beta2) * gi * gi;
                const double mhat = m.v[i] / bc1;
                const double vhat = v.v[i] / bc2;
                p.v[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
            }
        });
    }
}

} // namespace tempolm
