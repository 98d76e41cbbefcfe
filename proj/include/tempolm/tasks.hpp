#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tempolm/checkpoint.hpp"
#include "tempolm/corpus.hpp"
#include "tempolm/metrics.hpp"
#include "tempolm/model.hpp"

namespace tempolm {

/// Normalized probabilities over the checkpoint's time buckets for one
/// masked time position.
struct TimeDistribution {
    std::vector<double> probs; // index-aligned with Checkpoint::bucket_labels

    int argmax() const {
        int best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i)
            if (probs[i] > probs[std::size_t(best)]) best = int(i);
        return best;
    }
};

enum class ChangeMethod { time_diff, temporal_cosine };

inline const char* to_string(ChangeMethod m) {
    return m == ChangeMethod::time_diff ? "time-diff" : "temporal-cosine";
}

struct ChangeScore {
    std::string word;
    double score = 0.0;
    std::vector<int> n_used; // sentences used per bucket
    ChangeMethod method = ChangeMethod::time_diff;
};

namespace detail {

inline std::string lowercased(const std::string& w) {
    std::string out;
    for (char c : w) out.push_back(c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : c);
    return out;
}

/// Distribution over time buckets from a mask prepended to the given tokens.
/// The sequence's own time label is never part of the input.
inline TimeDistribution time_distribution(const Checkpoint& ckpt,
                                          const std::vector<std::string>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("predict_time: empty sentence");
    AnnotatedSequence seq;
    seq.tokens = tokens;
    const EncodedSequence enc = encode(seq, ckpt.vocab, Prepend::mask, ckpt.config.max_len);
    const FillMaskResult fill = fill_mask(ckpt.params, enc, ckpt.config);

    const std::vector<double>* dist = nullptr;
    for (std::size_t i = 0; i < fill.positions.size(); ++i)
        if (fill.positions[i] == 0) dist = &fill.distributions[i];
    if (!dist) throw std::runtime_error("predict_time: prepended mask position missing");

    TimeDistribution out;
    out.probs.resize(std::size_t(ckpt.vocab.n_time()));
    double mass = 0.0;
    for (int b = 0; b < ckpt.vocab.n_time(); ++b) {
        const double p = (*dist)[std::size_t(ckpt.vocab.time_id(b))];
        out.probs[std::size_t(b)] = p;
        mass += p;
    }
    if (mass < 1e-12)
        throw std::runtime_error("predict_time: model assigns no time mass (raw mass " +
                                 fmt_g17(mass) + "); was it trained with time masking?");
    for (double& p : out.probs) p /= mass;
    return out;
}

inline void require_matching_buckets(const Checkpoint& ckpt, const AnnotatedCorpus& corpus,
                                     const char* what) {
    if (corpus.buckets.size() != ckpt.bucket_labels.size())
        throw std::invalid_argument(std::string(what) + ": corpus bucket count " +
                                    std::to_string(corpus.buckets.size()) +
                                    " != checkpoint bucket count " +
                                    std::to_string(ckpt.bucket_labels.size()));
    for (const auto& b : corpus.buckets)
        if (ckpt.bucket_labels[std::size_t(b.index)] != b.label)
            throw std::invalid_argument(std::string(what) + ": corpus bucket '" + b.label +
                                        "' does not match checkpoint buckets");
}

inline std::int32_t require_in_vocab(const Checkpoint& ckpt, const std::string& word,
                                     const char* what) {
    const auto id = ckpt.vocab.lookup(lowercased(word));
    if (!id || *id == Vocab::unk_id)
        throw std::invalid_argument(std::string(what) + ": word '" + word +
                                    "' is not in the vocabulary");
    return *id;
}

/// Aggregation core of time-diff: mean absolute difference of the two
/// per-sentence time probabilities.
inline double time_diff_from_probs(const std::vector<std::array<double, 2>>& probs) {
    if (probs.empty()) throw std::invalid_argument("time_diff: no sentences");
    double sum = 0.0;
    for (const auto& p : probs) sum += std::fabs(p[0] - p[1]);
    return sum / double(probs.size());
}

} // namespace detail

/// Distribution over writing times for a sentence: prepend a mask, fill it,
/// keep the time-token mass, and renormalize. Errors when the model puts
/// essentially no mass on time tokens (untrained or regime=none models).
inline TimeDistribution predict_time(const Checkpoint& ckpt, const std::string& sentence) {
    return detail::time_distribution(ckpt, tokenize(sentence));
}

/// Semantic change via time prediction: sample n sentences per period that
/// contain the word, replace their time context with a mask, and average
/// |p_t1 - p_t2| over the pooled sentence set. Score is in [0,1].
inline ChangeScore time_diff_score(const Checkpoint& ckpt, const AnnotatedCorpus& corpus,
                                   const std::string& word, int n, std::uint64_t seed) {
    if (corpus.buckets.size() != 2)
        throw std::invalid_argument("time_diff: corpus must have exactly 2 buckets");
    detail::require_matching_buckets(ckpt, corpus, "time_diff");
    detail::require_in_vocab(ckpt, word, "time_diff");

    std::vector<std::array<double, 2>> probs;
    ChangeScore out;
    out.word = word;
    out.method = ChangeMethod::time_diff;
    for (int b = 0; b < 2; ++b) {
        const auto sentences = sample_sentences(corpus, word, b, n, seed);
        out.n_used.push_back(int(sentences.size()));
        for (const auto& s : sentences) {
            const TimeDistribution d = detail::time_distribution(ckpt, s.tokens);
            probs.push_back({d.probs[0], d.probs[1]});
        }
    }
    if (probs.empty())
        throw std::runtime_error("time_diff: word '" + word + "' unattested in the corpus");
    out.score = detail::time_diff_from_probs(probs);
    return out;
}

/// Semantic change via representation drift: per period, average the word's
/// contextual embeddings (last h hidden layers, averaged) over n sampled
/// sentences, and report the cosine distance between the two period
/// embeddings. Score is in [0,2]. Sentences are fed without a time prefix by
/// default; prefix_time=true exposes the prefixed variant.
inline ChangeScore temporal_cosine_score(const Checkpoint& ckpt, const AnnotatedCorpus& corpus,
                                         const std::string& word, int n, int h,
                                         std::uint64_t seed, bool prefix_time = false) {
    if (corpus.buckets.size() != 2)
        throw std::invalid_argument("temporal_cosine: corpus must have exactly 2 buckets");
    detail::require_matching_buckets(ckpt, corpus, "temporal_cosine");
    const std::int32_t word_id = detail::require_in_vocab(ckpt, word, "temporal_cosine");

    ChangeScore out;
    out.word = word;
    out.method = ChangeMethod::temporal_cosine;
    std::vector<std::vector<double>> period_emb;
    for (int b = 0; b < 2; ++b) {
        const auto sentences = sample_sentences(corpus, word, b, n, seed);
        if (sentences.empty())
            throw std::runtime_error("temporal_cosine: word '" + word + "' unattested in bucket " +
                                     corpus.buckets[std::size_t(b)].label);
        out.n_used.push_back(int(sentences.size()));
        std::vector<double> acc(std::size_t(ckpt.config.hidden_dim), 0.0);
        for (const auto& s : sentences) {
            const EncodedSequence enc =
                encode(s, ckpt.vocab, prefix_time ? Prepend::time : Prepend::none,
                       ckpt.config.max_len);
            std::vector<int> positions;
            for (std::size_t i = 0; i < enc.ids.size(); ++i)
                if (enc.ids[i] == word_id) positions.push_back(int(i));
            if (positions.empty()) continue; // occurrence truncated away
            const auto emb = token_embedding(ckpt.params, enc, positions, h, ckpt.config);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += emb[i];
        }
        for (double& x : acc) x /= double(sentences.size());
        period_emb.push_back(std::move(acc));
    }
    out.score = cosine_distance(period_emb[0], period_emb[1]);
    return out;
}

struct RankParams {
    ChangeMethod method = ChangeMethod::time_diff;
    int n = 200; ///< sentences sampled per bucket
    int h = 1;   ///< hidden layers averaged (temporal-cosine)
    std::uint64_t seed = 0;
    bool prefix_time = false;
};

struct RankOutcome {
    std::vector<ChangeScore> scores; ///< descending score, ties alphabetical
    std::vector<std::string> warnings;
};

/// Score a word list and rank by degree of change. Duplicate input words are
/// dropped with a warning; per-word failures are reported as warnings and
/// excluded instead of aborting the batch.
inline RankOutcome rank_words(const Checkpoint& ckpt, const AnnotatedCorpus& corpus,
                              const std::vector<std::string>& words, const RankParams& params) {
    if (words.empty()) throw std::invalid_argument("rank_words: empty word list");
    RankOutcome out;
    std::vector<std::string> seen;
    for (const auto& w : words) {
        const std::string lw = detail::lowercased(w);
        if (std::find(seen.begin(), seen.end(), lw) != seen.end()) {
            out.warnings.push_back("duplicate word '" + w + "' ignored");
            continue;
        }
        seen.push_back(lw);
        try {
            ChangeScore score =
                params.method == ChangeMethod::time_diff
                    ? time_diff_score(ckpt, corpus, lw, params.n, params.seed)
                    : temporal_cosine_score(ckpt, corpus, lw, params.n, params.h, params.seed,
                                            params.prefix_time);
            out.scores.push_back(std::move(score));
        } catch (const std::exception& e) {
            out.warnings.push_back("word '" + w + "' skipped: " + e.what());
        }
    }
    std::sort(out.scores.begin(), out.scores.end(), [](const ChangeScore& a, const ChangeScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.word < b.word;
    });
    return out;
}

struct TimeEvalReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::vector<long>> confusion;
    int n = 0;
};

/// Sentence time prediction over a labelled test set: argmax of predict_time
/// against the gold bucket. The gold label is only used for scoring, never
/// as model input.
inline TimeEvalReport eval_time_prediction(const Checkpoint& ckpt,
                                           const std::vector<AnnotatedSequence>& test_set,
                                           const std::vector<TimeBucket>& buckets) {
    if (test_set.empty()) throw std::invalid_argument("eval_time_prediction: empty test set");
    if (buckets.size() != ckpt.bucket_labels.size())
        throw std::invalid_argument("eval_time_prediction: bucket set does not match checkpoint");
    for (const auto& b : buckets)
        if (ckpt.bucket_labels[std::size_t(b.index)] != b.label)
            throw std::invalid_argument("eval_time_prediction: bucket '" + b.label +
                                        "' does not match checkpoint");
    std::vector<int> preds, golds;
    for (const auto& s : test_set) {
        if (s.bucket < 0 || s.bucket >= int(buckets.size()))
            throw std::invalid_argument("eval_time_prediction: test sequence without a gold bucket");
        preds.push_back(detail::time_distribution(ckpt, s.tokens).argmax());
        golds.push_back(s.bucket);
    }
    const ClassificationReport rep = classification_metrics(preds, golds, int(buckets.size()));
    return {rep.accuracy, rep.macro_f1, rep.confusion, rep.n};
}

} // namespace tempolm
