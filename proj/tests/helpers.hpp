#pragma once

// Shared test utilities: throwaway directories, oracle statistics, and
// small model/batch factories.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tempolm/tempolm.hpp"

namespace testutil {

inline std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("tempolm_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Upper regularized incomplete gamma Q(a,x) via series/continued fraction;
/// used for chi-squared p-values in corpus tests.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        // lower series
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - gln);
    }
    // continued fraction for Q
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::fabs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

/// Chi-squared independence test p-value for an r x c contingency table.
inline double chi_squared_p(const std::vector<std::vector<long>>& table) {
    const std::size_t r = table.size(), c = table.at(0).size();
    std::vector<double> row_sum(r, 0.0), col_sum(c, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            row_sum[i] += double(table[i][j]);
            col_sum[j] += double(table[i][j]);
            total += double(table[i][j]);
        }
    double stat = 0.0;
    std::size_t used_cols = 0;
    for (std::size_t j = 0; j < c; ++j)
        if (col_sum[j] > 0.0) ++used_cols;
    std::size_t used_rows = 0;
    for (std::size_t i = 0; i < r; ++i)
        if (row_sum[i] > 0.0) ++used_rows;
    for (std::size_t i = 0; i < r; ++i) {
        if (row_sum[i] == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) {
            if (col_sum[j] == 0.0) continue;
            const double expected = row_sum[i] * col_sum[j] / total;
            const double diff = double(table[i][j]) - expected;
            stat += diff * diff / expected;
        }
    }
    const double df = double((used_rows - 1) * (used_cols - 1));
    if (df <= 0.0) return 1.0;
    return gamma_q(0.5 * df, 0.5 * stat);
}

/// Random parameters with a larger spread than real init so finite
/// differences see healthy gradients.
inline tempolm::Parameters random_params(const tempolm::ModelConfig& cfg, std::uint64_t seed,
                                         double stddev = 0.3) {
    tempolm::Parameters p = tempolm::Parameters::zeros(cfg);
    tempolm::Rng rng(seed);
    p.for_each([&](const char* name, tempolm::Mat& m, bool) {
        std::string n(name);
        const bool ln_scale = n.size() >= 2 && n.compare(n.size() - 2, 2, "_g") == 0;
        for (auto& x : m.v) x = ln_scale ? 1.0 + 0.1 * rng.normal() : rng.normal(0.0, stddev);
    });
    return p;
}

/// A small masked batch with a mix of masked/random/kept positions and
/// genuine padding, suitable for gradient checks.
inline tempolm::MaskedBatch random_batch(const tempolm::ModelConfig& cfg, int n_seqs, int max_len,
                                         std::uint64_t seed) {
    tempolm::Rng rng(seed);
    tempolm::MaskedBatch b;
    b.n_seqs = n_seqs;
    b.max_len = max_len;
    b.input_ids.assign(std::size_t(n_seqs) * max_len, tempolm::Vocab::pad_id);
    b.labels.assign(std::size_t(n_seqs) * max_len, tempolm::no_label);
    b.attention_mask.assign(std::size_t(n_seqs) * max_len, 0);
    for (int s = 0; s < n_seqs; ++s) {
        const int len = 2 + int(rng.below(std::size_t(max_len - 1)));
        for (int p = 0; p < len; ++p) {
            const auto id = std::int32_t(3 + rng.below(std::size_t(cfg.vocab_size - 3)));
            b.id_at(s, p) = id;
            b.attention_mask[std::size_t(s) * max_len + p] = 1;
            if (rng.uniform() < 0.35) {
                b.label_at(s, p) = id;
                const double u = rng.uniform();
                if (u < 0.8) b.id_at(s, p) = tempolm::Vocab::mask_id;
                else if (u < 0.9) b.id_at(s, p) = std::int32_t(3 + rng.below(std::size_t(cfg.vocab_size - 3)));
            }
        }
    }
    return b;
}

} // namespace testutil
