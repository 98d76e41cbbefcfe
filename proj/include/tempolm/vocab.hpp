#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tempolm/corpus.hpp"

namespace tempolm {

/// Word-level vocabulary with fixed special tokens and one time token per
/// corpus bucket. Id layout: [PAD]=0, [UNK]=1, [MASK]=2, then time tokens in
/// bucket order, then ordinary tokens by descending corpus frequency (ties
/// alphabetical). Immutable once built.
class Vocab {
public:
    static constexpr std::int32_t pad_id = 0;
    static constexpr std::int32_t unk_id = 1;
    static constexpr std::int32_t mask_id = 2;

    static std::string time_token(std::string_view bucket_label) {
        return "<" + std::string(bucket_label) + ">";
    }

    /// Build from a corpus: every token with frequency >= min_freq plus all
    /// extra_words regardless of frequency. Pure function of its inputs.
    static Vocab build(const AnnotatedCorpus& corpus, int min_freq = 1,
                       const std::vector<std::string>& extra_words = {}) {
        if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
        Vocab v;
        v.add_token("[PAD]");
        v.add_token("[UNK]");
        v.add_token("[MASK]");
        for (const auto& b : corpus.buckets) v.add_token(time_token(b.label));
        v.n_time_ = int(corpus.buckets.size());

        std::unordered_map<std::string, long> freq;
        for (const auto& s : corpus.sequences)
            for (const auto& t : s.tokens) ++freq[t];
        for (const auto& w : extra_words) {
            std::string lw;
            for (char c : w) lw.push_back(c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : c);
            freq.try_emplace(lw, 0); // forced in at whatever frequency it has
        }

        std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
        std::vector<char> forced(items.size(), 0);
        {
            std::vector<std::string> lowered;
            for (const auto& w : extra_words) {
                std::string lw;
                for (char c : w) lw.push_back(c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : c);
                lowered.push_back(std::move(lw));
            }
            for (std::size_t i = 0; i < items.size(); ++i)
                if (std::find(lowered.begin(), lowered.end(), items[i].first) != lowered.end())
                    forced[i] = 1;
        }
        std::vector<std::size_t> order(items.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (items[a].second != items[b].second) return items[a].second > items[b].second;
            return items[a].first < items[b].first;
        });
        for (std::size_t i : order) {
            if (items[i].second < min_freq && !forced[i]) continue;
            v.add_token(items[i].first); // skips strings already present (specials/time)
        }
        return v;
    }

    /// Reconstruct from serialized token lines plus the number of time tokens.
    static Vocab from_tokens(std::vector<std::string> tokens, int n_time) {
        if (int(tokens.size()) < 3 + n_time)
            throw std::runtime_error("vocab: too few tokens for declared time-token count");
        if (tokens[0] != "[PAD]" || tokens[1] != "[UNK]" || tokens[2] != "[MASK]")
            throw std::runtime_error("vocab: special tokens missing or out of order");
        Vocab v;
        for (auto& t : tokens) {
            if (t.empty()) throw std::runtime_error("vocab: empty token line");
            if (v.lookup(t)) throw std::runtime_error("vocab: duplicate token '" + t + "'");
            v.add_token(t);
        }
        v.n_time_ = n_time;
        return v;
    }

    std::int32_t size() const { return std::int32_t(id_to_token_.size()); }
    int n_time() const { return n_time_; }
    std::int32_t first_ordinary_id() const { return 3 + n_time_; }
    std::int32_t n_ordinary() const { return size() - first_ordinary_id(); }

    bool is_special(std::int32_t id) const { return id >= 0 && id < 3; }
    bool is_time(std::int32_t id) const { return id >= 3 && id < 3 + n_time_; }

    std::int32_t time_id(int bucket_index) const {
        if (bucket_index < 0 || bucket_index >= n_time_)
            throw std::invalid_argument("vocab: bucket index " + std::to_string(bucket_index) +
                                        " has no time token");
        return 3 + bucket_index;
    }

    /// Bucket index of a time-token id, -1 for non-time ids.
    int bucket_of_time_id(std::int32_t id) const { return is_time(id) ? id - 3 : -1; }

    std::optional<std::int32_t> lookup(std::string_view token) const {
        auto it = token_to_id_.find(std::string(token));
        if (it == token_to_id_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& token(std::int32_t id) const {
        if (id < 0 || id >= size())
            throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
        return id_to_token_[std::size_t(id)];
    }

    const std::vector<std::string>& tokens() const { return id_to_token_; }

    /// One token per line, line number = id.
    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write vocab file: " + path.string());
        for (const auto& t : id_to_token_) out << t << '\n';
    }

    /// Load a token-per-line file. The time-token count is taken as the
    /// contiguous run of "<...>"-shaped tokens starting at id 3 (checkpoints
    /// store the exact count and use from_tokens instead).
    static Vocab load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open vocab file: " + path.string());
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) break;
            tokens.push_back(line);
        }
        int n_time = 0;
        for (std::size_t i = 3; i < tokens.size(); ++i) {
            const auto& t = tokens[i];
            if (t.size() >= 3 && t.front() == '<' && t.back() == '>') ++n_time; else break;
        }
        return from_tokens(std::move(tokens), n_time);
    }

private:
    void add_token(const std::string& t) {
        if (token_to_id_.count(t)) return;
        token_to_id_.emplace(t, std::int32_t(id_to_token_.size()));
        id_to_token_.push_back(t);
    }

    std::unordered_map<std::string, std::int32_t> token_to_id_;
    std::vector<std::string> id_to_token_;
    int n_time_ = 0;
};

enum class Prepend { time, mask, none };

/// Token ids for one sequence, optionally with a prepended time or mask token
/// at position 0.
struct EncodedSequence {
    std::vector<std::int32_t> ids;
    std::optional<int> time_position; ///< 0 when a time or mask token is prepended
    int attention_length = 0;
    bool truncated = false;
};

/// Encode a sequence. Out-of-vocabulary tokens map to [UNK]; the literal
/// token "[mask]" maps to the MASK id so probe sentences can carry masks.
/// Over-length inputs are tail-truncated and flagged; the prepended token is
/// never dropped.
inline EncodedSequence encode(const AnnotatedSequence& seq, const Vocab& vocab, Prepend mode,
                              int max_len = 128) {
    if (seq.tokens.empty()) throw std::invalid_argument("encode: sequence has no tokens");
    if (max_len < 2) throw std::invalid_argument("encode: max_len must be >= 2");
    EncodedSequence out;
    if (mode == Prepend::time) {
        if (seq.bucket < 0 || seq.bucket >= vocab.n_time())
            throw std::invalid_argument("encode: sequence bucket has no time token");
        out.ids.push_back(vocab.time_id(seq.bucket));
        out.time_position = 0;
    } else if (mode == Prepend::mask) {
        out.ids.push_back(Vocab::mask_id);
        out.time_position = 0;
    }
    for (const auto& t : seq.tokens) {
        if (int(out.ids.size()) >= max_len) {
            out.truncated = true;
            break;
        }
        if (t == "[mask]" || t == "[MASK]") {
            out.ids.push_back(Vocab::mask_id);
            continue;
        }
        auto id = vocab.lookup(t);
        out.ids.push_back(id ? *id : Vocab::unk_id);
    }
    out.attention_length = int(out.ids.size());
    return out;
}

/// Inverse of the id map; throws on out-of-range ids.
inline std::vector<std::string> decode(const std::vector<std::int32_t>& ids, const Vocab& vocab) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(vocab.token(id));
    return out;
}

} // namespace tempolm
