#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "tempolm/tempolm.hpp"

using namespace tempolm;

namespace {

struct TrainFixture {
    AnnotatedCorpus corpus;
    Vocab vocab;
    ModelConfig model;

    explicit TrainFixture(int sentences_per_bucket = 25, std::uint64_t seed = 5) {
        SyntheticSpec spec;
        spec.vocab_size = 120;
        spec.sentences_per_bucket = sentences_per_bucket;
        spec.len_min = 4;
        spec.len_max = 6;
        spec.topic_count = 4;
        spec.changed_words = {{"gravy", 1.0}};
        spec.stable_words = {"river"};
        spec.seed = seed;
        corpus = generate_synthetic(spec).corpus;
        vocab = Vocab::build(corpus);
        model = ModelConfig::tiny(vocab.size());
        model.max_len = 16;
    }
};

std::vector<const Mat*> tensors_of(const Parameters& p) {
    std::vector<const Mat*> out;
    p.for_each([&](const char*, const Mat& m, bool) { out.push_back(&m); });
    return out;
}

bool bit_identical(const Parameters& a, const Parameters& b) {
    auto ta = tensors_of(a), tb = tensors_of(b);
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (ta[i]->v != tb[i]->v) return false;
    return true;
}

} // namespace

TEST_CASE("one epoch over B batches runs exactly B optimizer steps") {
    TrainFixture fx(25); // 50 sequences
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 16; // ceil(50/16) = 4 batches
    tc.seed = 7;
    const auto result = train(fx.corpus, fx.vocab, fx.model, MaskingConfig{}, tc);
    CHECK(result.steps == 4);
    CHECK(result.log.size() == 4);
    CHECK_FALSE(result.diverged);
    CHECK(result.checkpoint.params.all_finite());
}

TEST_CASE("learning-rate schedule warms up then decays") {
    TrainConfig tc;
    tc.learning_rate = 1.0;
    tc.warmup_fraction = 0.1;
    const std::int64_t total = 100;
    CHECK(lr_at(tc, 1, total) == doctest::Approx(0.1));
    CHECK(lr_at(tc, 10, total) == doctest::Approx(1.0));
    CHECK(lr_at(tc, 11, total) == doctest::Approx(1.0));
    CHECK(lr_at(tc, 55, total) == doctest::Approx(46.0 / 90.0));
    CHECK(lr_at(tc, 100, total) == doctest::Approx(1.0 / 90.0));
    for (std::int64_t s = 1; s <= total; ++s) CHECK(lr_at(tc, s, total) > 0.0);
}

TEST_CASE("training is deterministic and masking regimes are distinguishable") {
    TrainFixture fx;
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 16;
    tc.seed = 11;

    MaskingConfig custom;
    custom.regime = MaskRegime::custom;
    custom.p_tm = 0.5;
    const auto a = train(fx.corpus, fx.vocab, fx.model, custom, tc);
    const auto b = train(fx.corpus, fx.vocab, fx.model, custom, tc);
    CHECK(bit_identical(a.checkpoint.params, b.checkpoint.params));

    MaskingConfig none;
    none.regime = MaskRegime::none;
    const auto c = train(fx.corpus, fx.vocab, fx.model, none, tc);
    CHECK_FALSE(bit_identical(a.checkpoint.params, c.checkpoint.params));
}

TEST_CASE("a 50-sentence corpus is memorized to high masked accuracy") {
    SyntheticSpec spec;
    spec.vocab_size = 300;
    spec.sentences_per_bucket = 25; // 50 sequences
    spec.len_min = 6;
    spec.len_max = 8;
    spec.topic_count = 4;
    spec.changed_words = {{"gravy", 1.0}};
    spec.stable_words = {"river"};
    spec.seed = 3;
    const auto corpus = generate_synthetic(spec).corpus;
    const Vocab vocab = Vocab::build(corpus);
    ModelConfig model = ModelConfig::tiny(vocab.size());
    model.max_len = 16;

    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 2; // 25 steps per epoch: memorization needs the steps
    tc.learning_rate = 1e-3;
    tc.seed = 1;
    const auto result = train(corpus, vocab, model, MaskingConfig{}, tc);
    REQUIRE_FALSE(result.diverged);

    std::vector<EncodedSequence> enc;
    for (const auto& s : corpus.sequences)
        enc.push_back(encode(s, vocab, Prepend::time, model.max_len));
    MaskingConfig eval_mask;
    eval_mask.seed = 999;
    eval_mask.action_mask = 1.0; // pure [MASK]: measure masked-token accuracy
    eval_mask.action_random = 0.0;
    eval_mask.action_keep = 0.0;
    const MaskedBatch mb = mask_batch(enc, eval_mask, vocab);
    const double acc = masked_accuracy(result.checkpoint.params, mb, model);
    INFO("masked accuracy ", acc);
    CHECK(acc >= 0.95);
}

TEST_CASE("held-out loss is non-increasing over the first evaluations of a memorization run") {
    TrainFixture fx(40, 9);
    auto [train_part, hold] = split_corpus(fx.corpus, 0.2, 4);
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 32;
    tc.learning_rate = 1e-3;
    tc.eval_every = 20;
    tc.seed = 2;
    TrainOptions opts;
    opts.eval_split = &hold;
    std::ostringstream report;
    opts.report = &report;
    const auto result = train(train_part, fx.vocab, fx.model, MaskingConfig{}, tc, opts);
    REQUIRE(result.evals.size() >= 3);
    CHECK(result.evals[0].loss >= result.evals[1].loss);
    CHECK(result.evals[1].loss >= result.evals[2].loss);
    CHECK(report.str().find("eval_loss") != std::string::npos);
    CHECK(report.str().find("\"lr\":") != std::string::npos);
}

TEST_CASE("resuming from a mid-run checkpoint is bit-identical to the unbroken run") {
    TrainFixture fx(20, 13);
    fx.model.dropout = 0.1; // dropout state must survive the resume
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 16; // 40 seqs -> 3 steps/epoch, 12 total
    tc.seed = 21;

    const auto full = train(fx.corpus, fx.vocab, fx.model, MaskingConfig{}, tc);

    auto dir = testutil::fresh_dir("train_resume");
    TrainConfig tc_ck = tc;
    tc_ck.eval_every = 5; // checkpoints at steps 5 and 10
    TrainOptions opts;
    opts.checkpoint_dir = dir;
    (void)train(fx.corpus, fx.vocab, fx.model, MaskingConfig{}, tc_ck, opts);

    const Checkpoint mid = Checkpoint::load(dir / "checkpoint_step5.tlm");
    REQUIRE(mid.train_state.has_value());
    CHECK(mid.train_state->step == 5);
    TrainOptions resume_opts;
    resume_opts.resume = &mid;
    const auto resumed = train(fx.corpus, fx.vocab, fx.model, MaskingConfig{}, tc, resume_opts);
    CHECK(resumed.steps == full.steps);
    CHECK(bit_identical(resumed.checkpoint.params, full.checkpoint.params));
}

TEST_CASE("divergence aborts with the last good parameters") {
    TrainFixture fx(20, 17);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 8;
    tc.learning_rate = 1e200; // layer norm absorbs anything smaller
    tc.warmup_fraction = 0.0;
    tc.seed = 3;
    const auto result = train(fx.corpus, fx.vocab, fx.model, MaskingConfig{}, tc);
    CHECK(result.diverged);
    CHECK(result.steps < 25);
    CHECK(result.checkpoint.params.all_finite());
    REQUIRE(result.checkpoint.train_state.has_value());
    CHECK(result.checkpoint.train_state->step == result.steps);
}

TEST_CASE("train validates its inputs") {
    TrainFixture fx;
    TrainConfig tc;
    tc.epochs = 0;
    CHECK_THROWS_AS(train(fx.corpus, fx.vocab, fx.model, MaskingConfig{}, tc), std::invalid_argument);

    // vocabulary that does not cover the corpus buckets
    AnnotatedCorpus other = fx.corpus;
    other.buckets[1].label = "9";
    for (auto& s : other.sequences) (void)s;
    CHECK_THROWS_WITH_AS(train(other, fx.vocab, fx.model, MaskingConfig{}, TrainConfig{}),
                         doctest::Contains("bucket"), std::invalid_argument);
}
