#include <doctest.h>

#include "helpers.hpp"
#include "tempolm/optimizer.hpp"

using namespace tempolm;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden_dim = 8;
    cfg.n_heads = 2;
    cfg.ffn_dim = 8;
    cfg.max_len = 8;
    cfg.vocab_size = 12;
    return cfg;
}

} // namespace

TEST_CASE("zero gradients and zero decay leave parameters unchanged") {
    const ModelConfig cfg = tiny_config();
    Parameters p = testutil::random_params(cfg, 1);
    const Parameters before = p;
    Gradients g = Parameters::zeros(cfg);
    OptimizerState st = OptimizerState::zeros(cfg);
    AdamHyper hyper;
    hyper.weight_decay = 0.0;
    adam_step(p, g, st, hyper);
    CHECK(st.step == 1);
    std::vector<Mat*> pa, pb;
    p.for_each([&](const char*, Mat& m, bool) { pa.push_back(&m); });
    const_cast<Parameters&>(before).for_each([&](const char*, Mat& m, bool) { pb.push_back(&m); });
    for (std::size_t t = 0; t < pa.size(); ++t) CHECK(pa[t]->v == pb[t]->v);
}

TEST_CASE("first step with unit gradient matches the hand-derived update") {
    const ModelConfig cfg = tiny_config();
    Parameters p = Parameters::zeros(cfg);
    Gradients g = Parameters::zeros(cfg);
    const double start = 0.7;
    p.tok_emb.at(5, 3) = start;
    g.tok_emb.at(5, 3) = 1.0;
    OptimizerState st = OptimizerState::zeros(cfg);
    AdamHyper hyper;
    hyper.lr = 0.01;
    hyper.weight_decay = 0.0;
    adam_step(p, g, st, hyper);
    // bias-corrected m_hat = v_hat = 1 at step 1, so the update is -lr/(1+eps)
    const double expected = start - hyper.lr * 1.0 / (1.0 + hyper.eps);
    CHECK(p.tok_emb.at(5, 3) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("repeated runs with identical inputs are bit identical") {
    const ModelConfig cfg = tiny_config();
    auto run = [&](int steps) {
        Parameters p = testutil::random_params(cfg, 3);
        OptimizerState st = OptimizerState::zeros(cfg);
        Rng rng(9);
        for (int s = 0; s < steps; ++s) {
            Gradients g = Parameters::zeros(cfg);
            Rng grng(derive_seed(100, "g", std::uint64_t(s)));
            g.for_each([&](const char*, Mat& m, bool) {
                for (auto& x : m.v) x = grng.normal(0.0, 0.1);
            });
            AdamHyper hyper;
            hyper.weight_decay = 0.01;
            adam_step(p, g, st, hyper);
        }
        (void)rng;
        return p;
    };
    Parameters a = run(7), b = run(7);
    std::vector<Mat*> ta, tb;
    a.for_each([&](const char*, Mat& m, bool) { ta.push_back(&m); });
    b.for_each([&](const char*, Mat& m, bool) { tb.push_back(&m); });
    for (std::size_t t = 0; t < ta.size(); ++t) CHECK(ta[t]->v == tb[t]->v);
}

TEST_CASE("non-finite gradients abort without a partial update") {
    const ModelConfig cfg = tiny_config();
    Parameters p = testutil::random_params(cfg, 5);
    const Parameters before = p;
    Gradients g = Parameters::zeros(cfg);
    g.layers[0].w1.at(2, 2) = std::numeric_limits<double>::quiet_NaN();
    OptimizerState st = OptimizerState::zeros(cfg);
    CHECK_THROWS_AS(adam_step(p, g, st, AdamHyper{}), std::runtime_error);
    CHECK(st.step == 0);
    std::vector<Mat*> pa, pb;
    p.for_each([&](const char*, Mat& m, bool) { pa.push_back(&m); });
    const_cast<Parameters&>(before).for_each([&](const char*, Mat& m, bool) { pb.push_back(&m); });
    for (std::size_t t = 0; t < pa.size(); ++t) CHECK(pa[t]->v == pb[t]->v);
}

TEST_CASE("weight decay skips biases and layer norms") {
    const ModelConfig cfg = tiny_config();
    Parameters p = Parameters::zeros(cfg);
    p.tok_emb.at(1, 1) = 1.0;       // decayed tensor
    p.layers[0].ln1_g.at(0, 1) = 1.0; // norm scale, no decay
    p.layers[0].bq.at(0, 1) = 1.0;    // bias, no decay
    Gradients g = Parameters::zeros(cfg);
    OptimizerState st = OptimizerState::zeros(cfg);
    AdamHyper hyper;
    hyper.lr = 0.1;
    hyper.weight_decay = 0.5;
    adam_step(p, g, st, hyper);
    CHECK(p.tok_emb.at(1, 1) == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
    CHECK(p.layers[0].ln1_g.at(0, 1) == 1.0);
    CHECK(p.layers[0].bq.at(0, 1) == 1.0);
}

TEST_CASE("shape mismatch between grads and params is rejected") {
    const ModelConfig cfg = tiny_config();
    ModelConfig other = cfg;
    other.hidden_dim = 16;
    other.ffn_dim = 16;
    Parameters p = Parameters::zeros(cfg);
    Gradients g = Parameters::zeros(other);
    OptimizerState st = OptimizerState::zeros(cfg);
    CHECK_THROWS_AS(adam_step(p, g, st, AdamHyper{}), std::invalid_argument);
}
