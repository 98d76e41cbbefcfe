#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tempolm/rng.hpp"

namespace tempolm {

/// A discrete time period. Labels are unique within a corpus and indices are
/// contiguous from 0 in chronological order.
struct TimeBucket {
    std::string label;
    int index = 0;
};

/// One tokenized sentence with its time bucket (an index into the owning
/// corpus's bucket list).
struct AnnotatedSequence {
    std::string text;
    std::vector<std::string> tokens;
    int bucket = -1;
};

struct AnnotatedCorpus {
    std::vector<TimeBucket> buckets;
    std::vector<AnnotatedSequence> sequences;
    std::string provenance;

    int bucket_index(std::string_view label) const {
        for (const auto& b : buckets)
            if (b.label == label) return b.index;
        return -1;
    }

    std::vector<std::size_t> bucket_counts() const {
        std::vector<std::size_t> counts(buckets.size(), 0);
        for (const auto& s : sequences) counts.at(std::size_t(s.bucket))++;
        return counts;
    }

    /// Checks the bucket partition: indices contiguous, labels unique, and
    /// every sequence pointing at a valid bucket.
    void validate() const {
        for (std::size_t i = 0; i < buckets.size(); ++i) {
            if (buckets[i].index != int(i))
                throw std::runtime_error("corpus: bucket indices not contiguous");
            for (std::size_t j = i + 1; j < buckets.size(); ++j)
                if (buckets[i].label == buckets[j].label)
                    throw std::runtime_error("corpus: duplicate bucket label '" + buckets[i].label + "'");
        }
        for (const auto& s : sequences) {
            if (s.bucket < 0 || s.bucket >= int(buckets.size()))
                throw std::runtime_error("corpus: sequence with out-of-range bucket");
            if (s.tokens.empty()) throw std::runtime_error("corpus: sequence with no tokens");
        }
    }
};

/// Lowercase (ASCII) + whitespace tokenization. Deliberately simple: the
/// vocabulary is word-level and synthetic corpora are plain ASCII.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

enum class Bucketing { labels, years, decades };

inline Bucketing bucketing_from_string(std::string_view s) {
    if (s == "labels") return Bucketing::labels;
    if (s == "years") return Bucketing::years;
    if (s == "decades") return Bucketing::decades;
    throw std::invalid_argument("unknown bucketing rule '" + std::string(s) + "' (labels|years|decades)");
}

namespace detail {

inline std::optional<long> parse_int(std::string_view s) {
    if (s.empty()) return std::nullopt;
    std::size_t i = s[0] == '-' ? 1 : 0;
    if (i == s.size()) return std::nullopt;
    long v = 0;
    for (; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
        v = v * 10 + (s[i] - '0');
    }
    return s[0] == '-' ? -v : v;
}

inline long floor_div(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

} // namespace detail

/// Load a corpus from the line format "<time-label>\t<sentence text>".
/// The bucketing rule turns the time field into buckets: explicit labels,
/// one bucket per year, or decades (year y -> floor(y/10)*10, label "1990s").
/// Sentences longer than max_tokens are truncated to leave room for a
/// prepended time or mask token.
inline AnnotatedCorpus load_corpus(const std::filesystem::path& path, Bucketing rule,
                                   int max_tokens = 126) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());

    struct Raw {
        std::string key; // bucket label after applying the rule
        long sort_key = 0;
        std::string text;
    };
    std::vector<Raw> raws;
    bool numeric_labels = true;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": missing tab separator");
        std::string label = line.substr(0, tab);
        std::string text = line.substr(tab + 1);
        if (label.empty())
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": empty time label");
        if (tokenize(text).empty())
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": empty sentence");

        Raw r;
        r.text = std::move(text);
        if (rule == Bucketing::labels) {
            auto n = detail::parse_int(label);
            if (n) r.sort_key = *n; else numeric_labels = false;
            r.key = std::move(label);
        } else {
            auto year = detail::parse_int(label);
            if (!year)
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                         ": time label '" + label + "' is not a year");
            if (rule == Bucketing::years) {
                r.sort_key = *year;
                r.key = std::to_string(*year);
            } else {
                long decade = detail::floor_div(*year, 10) * 10;
                r.sort_key = decade;
                r.key = std::to_string(decade) + "s";
            }
        }
        raws.push_back(std::move(r));
    }
    if (raws.empty()) throw std::runtime_error(path.string() + ": empty corpus");

    // bucket set in chronological order (numeric when possible, else lexicographic)
    std::vector<std::pair<long, std::string>> keys;
    for (const auto& r : raws) {
        std::pair<long, std::string> k{r.sort_key, r.key};
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    if (rule == Bucketing::labels && !numeric_labels)
        std::sort(keys.begin(), keys.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
    else
        std::sort(keys.begin(), keys.end());

    AnnotatedCorpus corpus;
    corpus.provenance = "file:" + path.string();
    std::map<std::string, int> index_of;
    for (const auto& [sk, label] : keys) {
        index_of[label] = int(corpus.buckets.size());
        corpus.buckets.push_back({label, int(corpus.buckets.size())});
    }
    for (auto& r : raws) {
        AnnotatedSequence seq;
        seq.tokens = tokenize(r.text);
        if (int(seq.tokens.size()) > max_tokens) seq.tokens.resize(std::size_t(max_tokens));
        seq.text = std::move(r.text);
        seq.bucket = index_of.at(r.key);
        corpus.sequences.push_back(std::move(seq));
    }
    corpus.validate();
    return corpus;
}

inline void save_corpus(const AnnotatedCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path.string());
    for (const auto& s : corpus.sequences)
        out << corpus.buckets.at(std::size_t(s.bucket)).label << '\t' << s.text << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic corpora with planted semantic change
// ---------------------------------------------------------------------------

/// Recipe for a synthetic corpus. Each changed word co-occurs with its home
/// topic everywhere except the last bucket, where each occurrence switches to
/// the word's target topic with probability change_degree. Stable words keep
/// their home topic throughout, so the gold change score is 0 for them and
/// change_degree for changed words.
struct SyntheticSpec {
    int vocab_size = 2000;
    int n_buckets = 2;
    int sentences_per_bucket = 20000;
    int len_min = 4; ///< sentence length range, excluding the time token
    int len_max = 8;
    std::vector<std::pair<std::string, double>> changed_words; ///< (word, degree in [0,1])
    std::vector<std::string> stable_words;
    int topic_count = 8;
    std::uint64_t seed = 0;

    // corpus-shaping knobs beyond the core recipe
    double style_drift = 0.0;   ///< probability a function word comes from a bucket-private pool
    double context_noise = 0.0; ///< probability a target sentence uses an unrelated common topic
    double target_share = 0.5;  ///< fraction of sentences that carry a target word

    void validate() const {
        if (vocab_size < 1) throw std::invalid_argument("synthetic: vocab_size must be >= 1");
        if (n_buckets < 1) throw std::invalid_argument("synthetic: n_buckets must be >= 1");
        if (sentences_per_bucket < 1)
            throw std::invalid_argument("synthetic: sentences_per_bucket must be >= 1");
        if (len_min < 1 || len_max < len_min)
            throw std::invalid_argument("synthetic: bad sentence length range");
        if (topic_count < 1) throw std::invalid_argument("synthetic: topic_count must be >= 1");
        for (const auto& [w, d] : changed_words) {
            if (d < 0.0 || d > 1.0)
                throw std::invalid_argument("synthetic: change_degree for '" + w + "' not in [0,1]");
            if (std::find(stable_words.begin(), stable_words.end(), w) != stable_words.end())
                throw std::invalid_argument("synthetic: word '" + w + "' is both changed and stable");
        }
        if (!changed_words.empty() && n_buckets < 2)
            throw std::invalid_argument("synthetic: changed words need at least 2 buckets");
        if (!changed_words.empty() && topic_count < 2)
            throw std::invalid_argument("synthetic: changed words need topic_count >= 2");
        for (double p : {style_drift, context_noise, target_share})
            if (p < 0.0 || p > 1.0) throw std::invalid_argument("synthetic: probabilities must be in [0,1]");
    }
};

/// Word pools behind a generated corpus; lets tests measure neighbor
/// distributions against the planted construction.
struct SyntheticLayout {
    std::vector<std::string> function_words;
    std::vector<std::vector<std::string>> bucket_function_words; // per bucket, empty if no drift
    std::vector<std::vector<std::string>> topics;
    std::map<std::string, int> home_topic;   // every target word
    std::map<std::string, int> target_topic; // changed words only
    int common_topics = 0; // topics [0, common_topics) are shared; the rest host shifts
};

struct SyntheticResult {
    AnnotatedCorpus corpus;
    std::map<std::string, double> gold; // change_degree per target word (0.0 for stable)
    SyntheticLayout layout;
};

inline SyntheticResult generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();

    const int n_targets = int(spec.changed_words.size() + spec.stable_words.size());
    std::vector<std::string> targets;
    for (const auto& [w, d] : spec.changed_words) targets.push_back(w);
    for (const auto& w : spec.stable_words) targets.push_back(w);
    for (const auto& w : targets)
        if (w.rfind("fw", 0) == 0 || w.rfind("bf", 0) == 0 || w.rfind("tp", 0) == 0)
            throw std::invalid_argument("synthetic: target word '" + w +
                                        "' collides with reserved pool prefixes fw/bf/tp");

    SyntheticLayout layout;
    const int n_function = std::max(6, spec.vocab_size / 10);
    const int n_bucket_function = spec.style_drift > 0.0 ? n_function : 0;
    const long budget = long(spec.vocab_size) - n_function -
                        long(n_bucket_function) * spec.n_buckets - n_targets;
    const long per_topic = budget / spec.topic_count;
    if (per_topic < 3)
        throw std::invalid_argument("synthetic: vocab_size too small to host " +
                                    std::to_string(spec.topic_count) + " topics");

    for (int i = 0; i < n_function; ++i) layout.function_words.push_back("fw" + std::to_string(i));
    layout.bucket_function_words.resize(std::size_t(spec.n_buckets));
    for (int b = 0; b < spec.n_buckets; ++b)
        for (int i = 0; i < n_bucket_function; ++i)
            layout.bucket_function_words[std::size_t(b)].push_back(
                "bf" + std::to_string(b) + "x" + std::to_string(i));
    for (int t = 0; t < spec.topic_count; ++t) {
        std::vector<std::string> topic;
        for (long i = 0; i < per_topic; ++i)
            topic.push_back("tp" + std::to_string(t) + "w" + std::to_string(i));
        layout.topics.push_back(std::move(topic));
    }

    layout.common_topics =
        spec.changed_words.empty() ? spec.topic_count : std::max(1, spec.topic_count / 2);
    const int n_shift = spec.topic_count - layout.common_topics;
    for (int i = 0; i < n_targets; ++i)
        layout.home_topic[targets[std::size_t(i)]] = i % layout.common_topics;
    for (int j = 0; j < int(spec.changed_words.size()); ++j)
        layout.target_topic[spec.changed_words[std::size_t(j)].first] =
            layout.common_topics + (j % std::max(1, n_shift));

    SyntheticResult result;
    result.layout = layout;
    for (const auto& [w, d] : spec.changed_words) result.gold[w] = d;
    for (const auto& w : spec.stable_words) result.gold[w] = 0.0;

    AnnotatedCorpus& corpus = result.corpus;
    for (int b = 0; b < spec.n_buckets; ++b)
        corpus.buckets.push_back({std::to_string(b + 1), b});
    {
        std::ostringstream prov;
        prov << "synthetic(seed=" << spec.seed << ",vocab=" << spec.vocab_size
             << ",buckets=" << spec.n_buckets << ",sentences=" << spec.sentences_per_bucket << ")";
        corpus.provenance = prov.str();
    }

    std::map<std::string, double> degree_of;
    for (const auto& [w, d] : spec.changed_words) degree_of[w] = d;

    Rng rng(derive_seed(spec.seed, "synthetic"));
    const int per_word = n_targets > 0
        ? int(double(spec.sentences_per_bucket) * spec.target_share) / n_targets
        : 0;

    auto draw_from = [&rng](const std::vector<std::string>& pool) -> const std::string& {
        return pool[rng.below(pool.size())];
    };

    for (int b = 0; b < spec.n_buckets; ++b) {
        const bool last = b == spec.n_buckets - 1;
        const int n_target_sent = per_word * n_targets;
        for (int s = 0; s < spec.sentences_per_bucket; ++s) {
            const std::string* word = nullptr;
            if (s < n_target_sent) word = &targets[std::size_t(s % n_targets)];

            const int len = spec.len_min + int(rng.below(std::size_t(spec.len_max - spec.len_min + 1)));
            int topic;
            int n_slots = len;
            std::vector<std::string> tokens;
            if (word) {
                n_slots = len - 1;
                const int home = layout.home_topic.at(*word);
                topic = home;
                if (layout.common_topics > 1 && rng.uniform() < spec.context_noise) {
                    // unrelated common topic, same draw in every bucket
                    int t = int(rng.below(std::size_t(layout.common_topics - 1)));
                    topic = t >= home ? t + 1 : t;
                } else if (auto it = degree_of.find(*word);
                           it != degree_of.end() && last && rng.uniform() < it->second) {
                    topic = layout.target_topic.at(*word);
                }
                tokens.push_back(*word);
            } else {
                topic = int(rng.below(std::size_t(layout.common_topics)));
            }

            const int n_topic = std::max(1, (n_slots + 1) / 2);
            const int n_func = n_slots - n_topic;
            for (int i = 0; i < n_topic; ++i)
                tokens.push_back(draw_from(layout.topics[std::size_t(topic)]));
            for (int i = 0; i < n_func; ++i) {
                if (n_bucket_function > 0 && rng.uniform() < spec.style_drift)
                    tokens.push_back(draw_from(layout.bucket_function_words[std::size_t(b)]));
                else
                    tokens.push_back(draw_from(layout.function_words));
            }
            rng.shuffle(tokens);

            AnnotatedSequence seq;
            seq.bucket = b;
            std::string text;
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                if (i) text.push_back(' ');
                text += tokens[i];
            }
            seq.text = std::move(text);
            seq.tokens = std::move(tokens);
            corpus.sequences.push_back(std::move(seq));
        }
    }
    corpus.validate();
    return result;
}

/// Sample up to n distinct sentences from the given bucket that contain the
/// word as a whole (lowercased) token. Uniform without replacement,
/// deterministic given the seed; returns fewer than n when fewer exist and an
/// empty list when the word is unattested in the bucket.
inline std::vector<AnnotatedSequence> sample_sentences(const AnnotatedCorpus& corpus,
                                                       const std::string& word, int bucket,
                                                       int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_sentences: n must be >= 1");
    if (bucket < 0 || bucket >= int(corpus.buckets.size()))
        throw std::invalid_argument("sample_sentences: bucket out of range");
    std::string w;
    for (char c : word) w.push_back(c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : c);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
        const auto& s = corpus.sequences[i];
        if (s.bucket != bucket) continue;
        if (std::find(s.tokens.begin(), s.tokens.end(), w) != s.tokens.end()) candidates.push_back(i);
    }
    if (int(candidates.size()) > n) {
        Rng rng(derive_seed(seed, "sample", std::uint64_t(bucket)));
        // partial Fisher-Yates: the first n entries become the sample
        for (int i = 0; i < n; ++i) {
            std::size_t j = i + rng.below(candidates.size() - std::size_t(i));
            std::swap(candidates[std::size_t(i)], candidates[j]);
        }
        candidates.resize(std::size_t(n));
        std::sort(candidates.begin(), candidates.end());
    }
    std::vector<AnnotatedSequence> out;
    out.reserve(candidates.size());
    for (std::size_t i : candidates) out.push_back(corpus.sequences[i]);
    return out;
}

/// Stratified train/holdout split: per bucket, a deterministic shuffle sends
/// floor(count * holdout_fraction) sequences to the holdout part.
inline std::pair<AnnotatedCorpus, AnnotatedCorpus> split_corpus(const AnnotatedCorpus& corpus,
                                                                double holdout_fraction,
                                                                std::uint64_t seed) {
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw std::invalid_argument("split_corpus: holdout_fraction must be in [0,1)");
    std::vector<char> is_holdout(corpus.sequences.size(), 0);
    for (int b = 0; b < int(corpus.buckets.size()); ++b) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < corpus.sequences.size(); ++i)
            if (corpus.sequences[i].bucket == b) idx.push_back(i);
        Rng rng(derive_seed(seed, "split", std::uint64_t(b)));
        rng.shuffle(idx);
        std::size_t n_hold = std::size_t(double(idx.size()) * holdout_fraction);
        for (std::size_t i = 0; i < n_hold; ++i) is_holdout[idx[i]] = 1;
    }
    AnnotatedCorpus train, holdout;
    train.buckets = holdout.buckets = corpus.buckets;
    train.provenance = corpus.provenance + "(train)";
    holdout.provenance = corpus.provenance + "(holdout)";
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i)
        (is_holdout[i] ? holdout : train).sequences.push_back(corpus.sequences[i]);
    return {std::move(train), std::move(holdout)};
}

// ---------------------------------------------------------------------------
// Word-list / gold CSV
// ---------------------------------------------------------------------------

/// Rows of "word[,score]" files. A leading "word,..." header is skipped.
struct WordListEntry {
    std::string word;
    std::optional<double> gold;
};

inline std::vector<WordListEntry> read_word_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open word list: " + path.string());
    std::vector<WordListEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.find(',');
        std::string word = comma == std::string::npos ? line : line.substr(0, comma);
        if (line_no == 1 && word == "word") continue;
        WordListEntry e;
        e.word = word;
        if (comma != std::string::npos && comma + 1 < line.size()) {
            try {
                e.gold = std::stod(line.substr(comma + 1));
            } catch (const std::exception&) {
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                         ": bad score value");
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_gold_csv(const std::map<std::string, double>& gold,
                           const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write gold csv: " + path.string());
    out << "word,change_degree\n";
    char buf[64];
    for (const auto& [w, d] : gold) {
        std::snprintf(buf, sizeof buf, "%.17g", d);
        out << w << ',' << buf << '\n';
    }
}

} // namespace tempolm
