#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "helpers.hpp"
#include "tempolm/tempolm.hpp"

using namespace tempolm;

namespace {

struct CkptFixture {
    AnnotatedCorpus corpus;
    Vocab vocab;
    ModelConfig cfg;
    Checkpoint ckpt;

    CkptFixture() {
        SyntheticSpec spec;
        spec.vocab_size = 200;
        spec.sentences_per_bucket = 60;
        spec.topic_count = 4;
        spec.seed = 8;
        corpus = generate_synthetic(spec).corpus;
        vocab = Vocab::build(corpus);
        cfg = ModelConfig::tiny(vocab.size());
        cfg.n_layers = 2;
        cfg.hidden_dim = 16;
        cfg.n_heads = 2;
        cfg.ffn_dim = 24;
        ckpt = Checkpoint::make(cfg, {"1", "2"}, vocab, testutil::random_params(cfg, 77, 0.1));
    }
};

} // namespace

TEST_CASE("checkpoint round trip reproduces eval-mode logits bit-identically") {
    CkptFixture fx;
    auto dir = testutil::fresh_dir("ckpt_roundtrip");
    fx.ckpt.save(dir / "m.tlm");
    const Checkpoint loaded = Checkpoint::load(dir / "m.tlm");

    CHECK(loaded.bucket_labels == fx.ckpt.bucket_labels);
    CHECK(loaded.config.hidden_dim == fx.cfg.hidden_dim);
    CHECK(loaded.vocab.size() == fx.vocab.size());
    for (std::int32_t i = 0; i < fx.vocab.size(); ++i)
        CHECK(loaded.vocab.token(i) == fx.vocab.token(i));

    const auto enc = encode(fx.corpus.sequences[0], fx.vocab, Prepend::time, fx.cfg.max_len);
    MaskedBatch b;
    b.n_seqs = 1;
    b.max_len = int(enc.ids.size());
    b.input_ids = enc.ids;
    b.labels.assign(enc.ids.size(), no_label);
    b.attention_mask.assign(enc.ids.size(), 1);
    const ForwardResult before = forward(fx.ckpt.params, b, fx.cfg);
    const ForwardResult after = forward(loaded.params, b, loaded.config);
    CHECK(before.logits.v == after.logits.v); // bitwise
}

TEST_CASE("checkpoint persists and restores train state") {
    CkptFixture fx;
    Checkpoint::TrainState st;
    st.m = testutil::random_params(fx.cfg, 1, 0.01);
    st.v = testutil::random_params(fx.cfg, 2, 0.01);
    st.step = 1234;
    fx.ckpt.train_state = st;
    auto dir = testutil::fresh_dir("ckpt_state");
    fx.ckpt.save(dir / "m.tlm");
    const Checkpoint loaded = Checkpoint::load(dir / "m.tlm");
    REQUIRE(loaded.train_state.has_value());
    CHECK(loaded.train_state->step == 1234);
    CHECK(loaded.train_state->m.tok_emb.v == st.m.tok_emb.v);

    // and the state can be stripped on save
    fx.ckpt.save(dir / "bare.tlm", false);
    CHECK_FALSE(Checkpoint::load(dir / "bare.tlm").train_state.has_value());
    CHECK(std::filesystem::file_size(dir / "bare.tlm") <
          std::filesystem::file_size(dir / "m.tlm"));
}

TEST_CASE("checkpoint refuses version, magic, and shape mismatches") {
    CkptFixture fx;
    auto dir = testutil::fresh_dir("ckpt_refuse");
    const auto path = dir / "m.tlm";
    fx.ckpt.save(path);

    SUBCASE("bad magic") {
        std::ofstream out(dir / "junk.tlm", std::ios::binary);
        out << "definitely not a checkpoint";
        out.close();
        CHECK_THROWS_WITH_AS(Checkpoint::load(dir / "junk.tlm"),
                             doctest::Contains("not a checkpoint"), std::runtime_error);
    }
    SUBCASE("bad version") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const std::uint32_t bad = 99;
        f.write(reinterpret_cast<const char*>(&bad), 4);
        f.close();
        CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("version"),
                             std::runtime_error);
    }
    SUBCASE("shape mismatch between header and declared model") {
        // rewrite the header with a doctored hidden_dim, keeping tensor bytes
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        std::uint64_t len;
        std::memcpy(&len, bytes.data() + 12, 8);
        nlohmann::json header = nlohmann::json::parse(bytes.substr(20, len));
        header["model"]["hidden_dim"] = 32;
        const std::string doctored = header.dump();
        std::ofstream out(dir / "doctored.tlm", std::ios::binary);
        out.write(bytes.data(), 12);
        const std::uint64_t newlen = doctored.size();
        out.write(reinterpret_cast<const char*>(&newlen), 8);
        out.write(doctored.data(), std::streamsize(doctored.size()));
        out.write(bytes.data() + 20 + std::streamsize(len),
                  std::streamsize(bytes.size() - 20 - len));
        out.close();
        CHECK_THROWS_WITH_AS(Checkpoint::load(dir / "doctored.tlm"),
                             doctest::Contains("manifest"), std::runtime_error);
    }
}

TEST_CASE("checkpoint validation catches inconsistent construction") {
    CkptFixture fx;
    CHECK_THROWS_WITH_AS(Checkpoint::make(fx.cfg, {"1"}, fx.vocab, Parameters::zeros(fx.cfg)),
                         doctest::Contains("bucket"), std::runtime_error);
    ModelConfig other = fx.cfg;
    other.vocab_size = fx.cfg.vocab_size + 1;
    CHECK_THROWS_AS(Checkpoint::make(other, {"1", "2"}, fx.vocab, Parameters::zeros(other)),
                    std::runtime_error);
}
