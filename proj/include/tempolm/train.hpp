#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "tempolm/backprop.hpp"
#include "tempolm/checkpoint.hpp"
#include "tempolm/corpus.hpp"
#include "tempolm/masking.hpp"
#include "tempolm/optimizer.hpp"

namespace tempolm {

struct TrainConfig {
    double learning_rate = 3e-4;
    int epochs = 20;
    int batch_size = 32;
    double warmup_fraction = 0.1; ///< linear warmup, then linear decay
    double weight_decay = 0.01;
    std::uint64_t seed = 42;
    std::int64_t eval_every = 0; ///< 0 = final checkpoint only

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("train.learning_rate must be > 0");
        if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
        if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
            throw std::invalid_argument("train.warmup_fraction must be in [0,1]");
        if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
        if (eval_every < 0) throw std::invalid_argument("train.eval_every must be >= 0");
    }
};

/// Linear warmup to learning_rate, then linear decay toward 0 (the final
/// step keeps a small nonzero rate). step is 1-based.
inline double lr_at(const TrainConfig& tc, std::int64_t step, std::int64_t total_steps) {
    std::int64_t warm = std::llround(tc.warmup_fraction * double(total_steps));
    if (warm >= total_steps) warm = total_steps - 1;
    if (warm < 0) warm = 0;
    if (step <= warm) return tc.learning_rate * double(step) / double(warm);
    return tc.learning_rate * double(total_steps - step + 1) / double(total_steps - warm);
}

struct StepRecord {
    std::int64_t step;
    double loss;
    double lr;
};

struct EvalRecord {
    std::int64_t step;
    double loss;
};

struct TrainResult {
    Checkpoint checkpoint; ///< final parameters, or the last good ones on divergence
    bool diverged = false;
    std::int64_t steps = 0;
    std::vector<StepRecord> log;
    std::vector<EvalRecord> evals;
};

struct TrainOptions {
    std::ostream* report = nullptr; ///< JSONL sink: {"step":..,"loss":..,"lr":..}
    const AnnotatedCorpus* eval_split = nullptr; ///< held-out loss at eval_every steps
    std::filesystem::path checkpoint_dir; ///< non-empty: periodic resumable checkpoints
    const Checkpoint* resume = nullptr; ///< continue from a checkpoint with train state
    bool final_with_train_state = false;
};

namespace detail {

inline MaskedBatch assemble_batch(const std::vector<EncodedSequence>& encoded,
                                  const std::vector<std::size_t>& perm, std::size_t lo,
                                  std::size_t hi, const MaskingConfig& mask_cfg,
                                  const Vocab& vocab, std::uint64_t step_seed) {
    std::vector<EncodedSequence> batch;
    batch.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(encoded[perm[i]]);
    MaskingConfig cfg = mask_cfg;
    // Small batches can come out of the Bernoulli selection with zero
    // prediction targets; re-mask with a derived seed so every step trains.
    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
        cfg.seed = attempt == 0 ? step_seed : mix64(step_seed, attempt);
        MaskedBatch mb = mask_batch(batch, cfg, vocab);
        for (auto l : mb.labels)
            if (l != no_label) return mb;
    }
    throw std::invalid_argument(
        "train: masking never selects a prediction target (p_mlm and p_tm too small?)");
}

/// Loss on a fixed masked version of the held-out split, chunked to bound
/// memory; masking seeds depend only on (seed, chunk) so every evaluation
/// sees the same batch.
inline double holdout_loss(const Parameters& params, const ModelConfig& mcfg,
                           const std::vector<EncodedSequence>& eval_encoded,
                           const MaskingConfig& mask_cfg, const Vocab& vocab,
                           std::uint64_t seed, int batch_size) {
    double total = 0.0;
    long n_positions = 0;
    std::vector<std::size_t> ident(eval_encoded.size());
    for (std::size_t i = 0; i < ident.size(); ++i) ident[i] = i;
    std::size_t chunk_index = 0;
    for (std::size_t lo = 0; lo < eval_encoded.size(); lo += std::size_t(batch_size), ++chunk_index) {
        const std::size_t hi = std::min(eval_encoded.size(), lo + std::size_t(batch_size));
        MaskedBatch mb = assemble_batch(eval_encoded, ident, lo, hi, mask_cfg, vocab,
                                        derive_seed(seed, "evalmask", chunk_index));
        long n = 0;
        for (auto l : mb.labels)
            if (l != no_label) ++n;
        if (n == 0) continue;
        detail::ForwardCache fc;
        detail::encoder_forward(params, mcfg, BatchView::of(mb), false, 0, fc, nullptr);
        Mat emb_t;
        transpose(params.tok_emb, emb_t);
        std::vector<int> rows;
        std::vector<std::int32_t> labels_sel;
        for (std::size_t i = 0; i < mb.labels.size(); ++i)
            if (mb.labels[i] != no_label) {
                rows.push_back(int(i));
                labels_sel.push_back(mb.labels[i]);
            }
        Mat hs(int(rows.size()), mcfg.hidden_dim);
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy_n(fc.h_final.row(rows[i]), mcfg.hidden_dim, hs.row(int(i)));
        Mat logits(int(rows.size()), mcfg.vocab_size);
        gemm_nn(hs, emb_t, logits);
        add_row_vector(logits, params.out_bias);
        total += softmax_xent_backward(logits, labels_sel) * double(n);
        n_positions += n;
    }
    if (n_positions == 0) throw std::runtime_error("holdout_loss: no prediction targets");
    return total / double(n_positions);
}

} // namespace detail

/// Full optimization loop: epochs of shuffled batches encoded with a
/// prepended time token, masked per the regime, AdamW updates under a linear
/// warmup/decay schedule. Deterministic given (seed, data, config); all
/// randomness is derived from the step counter, which is what makes resumed
/// runs bit-identical to unbroken ones. On divergence (non-finite loss or
/// gradients) returns the last good parameters with diverged=true.
inline TrainResult train(const AnnotatedCorpus& corpus, const Vocab& vocab,
                         const ModelConfig& model_cfg, const MaskingConfig& mask_cfg,
                         const TrainConfig& train_cfg, const TrainOptions& opts = {}) {
    model_cfg.validate();
    mask_cfg.validate();
    train_cfg.validate();
    if (corpus.sequences.empty()) throw std::invalid_argument("train: empty corpus");
    if (int(vocab.size()) != model_cfg.vocab_size)
        throw std::invalid_argument("train: vocab size disagrees with model config");
    for (const auto& b : corpus.buckets) {
        auto id = vocab.lookup(Vocab::time_token(b.label));
        if (!id || *id != vocab.time_id(b.index))
            throw std::invalid_argument("train: vocabulary does not cover corpus bucket '" +
                                        b.label + "'");
    }

    std::vector<EncodedSequence> encoded;
    encoded.reserve(corpus.sequences.size());
    for (const auto& s : corpus.sequences)
        encoded.push_back(encode(s, vocab, Prepend::time, model_cfg.max_len));

    std::vector<EncodedSequence> eval_encoded;
    if (opts.eval_split) {
        for (const auto& s : opts.eval_split->sequences)
            eval_encoded.push_back(encode(s, vocab, Prepend::time, model_cfg.max_len));
    }

    const std::int64_t n_seqs = std::int64_t(encoded.size());
    const std::int64_t steps_per_epoch = (n_seqs + train_cfg.batch_size - 1) / train_cfg.batch_size;
    const std::int64_t total_steps = steps_per_epoch * train_cfg.epochs;

    Parameters params;
    OptimizerState state = OptimizerState::zeros(model_cfg);
    std::int64_t start_step = 0;
    if (opts.resume) {
        if (!opts.resume->train_state)
            throw std::invalid_argument("train: resume checkpoint lacks train state");
        params = opts.resume->params;
        state.m = opts.resume->train_state->m;
        state.v = opts.resume->train_state->v;
        state.step = opts.resume->train_state->step;
        start_step = state.step;
        if (start_step >= total_steps)
            throw std::invalid_argument("train: resume step is past the end of the schedule");
    } else {
        params = Parameters::init(model_cfg, derive_seed(train_cfg.seed, "init"));
    }

    std::vector<std::string> bucket_labels;
    for (const auto& b : corpus.buckets) bucket_labels.push_back(b.label);
    auto snapshot = [&](bool with_state) {
        Checkpoint c = Checkpoint::make(model_cfg, bucket_labels, vocab, params);
        if (with_state) c.train_state = Checkpoint::TrainState{state.m, state.v, state.step};
        return c;
    };

    TrainResult result;
    AdamHyper hyper;
    hyper.lr = train_cfg.learning_rate;
    hyper.weight_decay = train_cfg.weight_decay;

    Gradients grads = Parameters::zeros(model_cfg);
    std::int64_t step = start_step;

    auto emit_eval = [&](std::int64_t at_step) {
        if (eval_encoded.empty()) return;
        double el = detail::holdout_loss(params, model_cfg, eval_encoded, mask_cfg, vocab,
                                         train_cfg.seed, train_cfg.batch_size);
        result.evals.push_back({at_step, el});
        if (opts.report)
            (*opts.report) << "{\"step\":" << at_step << ",\"eval_loss\":" << fmt_g17(el) << "}\n";
    };

    for (std::int64_t epoch = start_step / steps_per_epoch; epoch < train_cfg.epochs; ++epoch) {
        std::vector<std::size_t> perm(std::size_t(n_seqs), 0);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng shuffle_rng(derive_seed(train_cfg.seed, "shuffle", std::uint64_t(epoch)));
        shuffle_rng.shuffle(perm);

        for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
            if (epoch * steps_per_epoch + b < start_step) continue; // resumed past this batch
            const std::size_t lo = std::size_t(b) * std::size_t(train_cfg.batch_size);
            const std::size_t hi = std::min(std::size_t(n_seqs), lo + std::size_t(train_cfg.batch_size));
            const std::int64_t this_step = step + 1;

            double loss = 0.0;
            try {
                MaskedBatch mb = detail::assemble_batch(
                    encoded, perm, lo, hi, mask_cfg, vocab,
                    derive_seed(train_cfg.seed, "maskstep", std::uint64_t(this_step)));
                loss = train_step_backward(params, model_cfg, mb, true,
                                           derive_seed(train_cfg.seed, "dropout", std::uint64_t(this_step)),
                                           grads);
                if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
                AdamHyper h = hyper;
                h.lr = lr_at(train_cfg, this_step, total_steps);
                adam_step(params, grads, state, h);
                step = this_step;
            } catch (const std::runtime_error&) {
                // divergence: abort with the parameters from before this step
                result.diverged = true;
                result.steps = step;
                result.checkpoint = snapshot(true);
                return result;
            }

            const double lr_used = lr_at(train_cfg, this_step, total_steps);
            result.log.push_back({this_step, loss, lr_used});
            if (opts.report)
                (*opts.report) << "{\"step\":" << this_step << ",\"loss\":" << fmt_g17(loss)
                               << ",\"lr\":" << fmt_g17(lr_used) << "}\n";

            if (train_cfg.eval_every > 0 && this_step % train_cfg.eval_every == 0) {
                emit_eval(this_step);
                if (!opts.checkpoint_dir.empty()) {
                    Checkpoint c = snapshot(true);
                    c.save(opts.checkpoint_dir /
                           ("checkpoint_step" + std::to_string(this_step) + ".tlm"));
                }
            }
        }
    }

    result.steps = step;
    result.checkpoint = snapshot(opts.final_with_train_state);
    return result;
}

} // namespace tempolm
