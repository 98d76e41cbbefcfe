#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tempolm/rng.hpp"
#include "tempolm/vocab.hpp"

namespace tempolm {

/// How time tokens take part in masking.
///   none:   time tokens pass through untouched; only ordinary tokens are masked.
///   joint:  time tokens are treated exactly like ordinary tokens under p_mlm.
///   custom: time tokens run a separate process selected with probability p_tm,
///           whose "random" action draws a time token instead of an ordinary one.
enum class MaskRegime { none, joint, custom };

inline MaskRegime regime_from_string(std::string_view s) {
    if (s == "none") return MaskRegime::none;
    if (s == "joint") return MaskRegime::joint;
    if (s == "custom") return MaskRegime::custom;
    throw std::invalid_argument("unknown masking regime '" + std::string(s) + "' (none|joint|custom)");
}

inline const char* to_string(MaskRegime r) {
    switch (r) {
        case MaskRegime::none: return "none";
        case MaskRegime::joint: return "joint";
        default: return "custom";
    }
}

struct MaskingConfig {
    double p_mlm = 0.15;
    MaskRegime regime = MaskRegime::custom;
    double p_tm = 0.3;
    double action_mask = 0.8; ///< selected tokens: replaced by [MASK]
    double action_random = 0.1; ///< ... replaced by a random token
    double action_keep = 0.1; ///< ... kept unchanged (still predicted)
    std::uint64_t seed = 0;

    void validate() const {
        for (double p : {p_mlm, p_tm, action_mask, action_random, action_keep})
            if (!(p >= 0.0 && p <= 1.0))
                throw std::invalid_argument("masking: probabilities must be in [0,1]");
        double s = action_mask + action_random + action_keep;
        if (s < 1.0 - 1e-9 || s > 1.0 + 1e-9)
            throw std::invalid_argument("masking: action split must sum to 1");
    }
};

/// Sentinel label for positions that are not prediction targets.
inline constexpr std::int32_t no_label = -1;

/// A padded batch ready for the model. labels carries the original token id
/// exactly at the positions selected for prediction (including keep-action
/// positions) and no_label everywhere else.
struct MaskedBatch {
    int n_seqs = 0;
    int max_len = 0;
    std::vector<std::int32_t> input_ids;      // n_seqs * max_len
    std::vector<std::int32_t> labels;         // same shape
    std::vector<std::uint8_t> attention_mask; // 1 on real tokens, 0 on padding

    std::int32_t& id_at(int s, int p) { return input_ids[std::size_t(s) * max_len + p]; }
    std::int32_t id_at(int s, int p) const { return input_ids[std::size_t(s) * max_len + p]; }
    std::int32_t& label_at(int s, int p) { return labels[std::size_t(s) * max_len + p]; }
    std::int32_t label_at(int s, int p) const { return labels[std::size_t(s) * max_len + p]; }
    bool valid_at(int s, int p) const { return attention_mask[std::size_t(s) * max_len + p] != 0; }
};

/// Apply MLM masking to a batch of encoded sequences.
///
/// Ordinary positions are selected independently with probability p_mlm and
/// receive one of the three actions; the "random" action draws a uniform
/// ordinary token (never a special or time token). Time-token positions
/// follow the regime: untouched (none), pooled with ordinary positions
/// (joint, random draws an ordinary token), or a separate Bernoulli(p_tm)
/// process whose random action draws a uniform time token (custom).
/// Padding is never selected. Pure function of (batch, config, vocab).
inline MaskedBatch mask_batch(const std::vector<EncodedSequence>& batch,
                              const MaskingConfig& config, const Vocab& vocab) {
    config.validate();
    if (batch.empty()) throw std::invalid_argument("mask_batch: empty batch");
    if (config.regime == MaskRegime::custom) {
        for (const auto& seq : batch)
            if (!seq.time_position || !vocab.is_time(seq.ids.at(0)))
                throw std::invalid_argument(
                    "mask_batch: custom regime requires sequences encoded with a time token");
    }

    MaskedBatch out;
    out.n_seqs = int(batch.size());
    out.max_len = 0;
    for (const auto& seq : batch) out.max_len = std::max(out.max_len, int(seq.ids.size()));
    out.input_ids.assign(std::size_t(out.n_seqs) * out.max_len, Vocab::pad_id);
    out.labels.assign(std::size_t(out.n_seqs) * out.max_len, no_label);
    out.attention_mask.assign(std::size_t(out.n_seqs) * out.max_len, 0);

    const std::int32_t first_ordinary = vocab.first_ordinary_id();
    const std::int32_t n_ordinary = vocab.n_ordinary();
    const int n_time = vocab.n_time();

    Rng rng(derive_seed(config.seed, "mask_batch"));
    auto choose_action = [&] {
        double u = rng.uniform();
        return u < config.action_mask ? 0 : (u < config.action_mask + config.action_random ? 1 : 2);
    };

    for (int s = 0; s < out.n_seqs; ++s) {
        const auto& seq = batch[std::size_t(s)];
        for (int p = 0; p < int(seq.ids.size()); ++p) {
            const std::int32_t id = seq.ids[std::size_t(p)];
            out.id_at(s, p) = id;
            out.attention_mask[std::size_t(s) * out.max_len + p] = 1;

            const bool is_time_pos = vocab.is_time(id);
            bool selected = false;
            bool time_process = false;
            if (is_time_pos) {
                switch (config.regime) {
                    case MaskRegime::none: break;
                    case MaskRegime::joint: selected = rng.uniform() < config.p_mlm; break;
                    case MaskRegime::custom:
                        selected = rng.uniform() < config.p_tm;
                        time_process = true;
                        break;
                }
            } else if (id != Vocab::pad_id && id != Vocab::mask_id) {
                selected = rng.uniform() < config.p_mlm;
            }
            if (!selected) continue;

            out.label_at(s, p) = id;
            switch (choose_action()) {
                case 0:
                    out.id_at(s, p) = Vocab::mask_id;
                    break;
                case 1:
                    if (time_process) {
                        out.id_at(s, p) = vocab.time_id(int(rng.below(std::size_t(n_time))));
                    } else {
                        if (n_ordinary <= 0)
                            throw std::runtime_error(
                                "mask_batch: vocabulary has no ordinary tokens for random replacement");
                        out.id_at(s, p) = first_ordinary + std::int32_t(rng.below(std::size_t(n_ordinary)));
                    }
                    break;
                default:
                    break; // keep: input unchanged, label still set
            }
        }
    }
    return out;
}

/// Expected number of predicted positions: n_ordinary*p_mlm + n_time*r where
/// r is 0 (none), p_mlm (joint), or p_tm (custom). Test oracle for the
/// masking statistics.
inline double expected_mask_rate(const MaskingConfig& config, long n_ordinary, long n_time) {
    if (n_ordinary < 0 || n_time < 0)
        throw std::invalid_argument("expected_mask_rate: counts must be >= 0");
    double r = 0.0;
    switch (config.regime) {
        case MaskRegime::none: r = 0.0; break;
        case MaskRegime::joint: r = config.p_mlm; break;
        case MaskRegime::custom: r = config.p_tm; break;
    }
    return double(n_ordinary) * config.p_mlm + double(n_time) * r;
}

} // namespace tempolm
