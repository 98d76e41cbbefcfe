#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tempolm {

struct CorrelationResult {
    double coefficient = 0.0;
    double p_value = 1.0;
    int n = 0;
};

namespace detail {

/// Regularized incomplete beta I_x(a,b) by continued fraction (Lentz).
inline double betacf(double a, double b, double x) {
    const int max_iter = 300;
    const double eps = 3e-16, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_beta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    const double front = std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - std::exp(ln_beta + b * std::log(1.0 - x) + a * std::log(x)) * betacf(b, a, 1.0 - x) / b;
}

} // namespace detail

/// Two-sided p-value of a Student-t statistic with df degrees of freedom.
inline double student_t_two_sided_p(double t, int df) {
    if (df < 1) throw std::invalid_argument("student_t_two_sided_p: df must be >= 1");
    if (!std::isfinite(t)) return 0.0;
    const double x = double(df) / (double(df) + t * t);
    return detail::incomplete_beta(0.5 * df, 0.5, x);
}

namespace detail {

inline double pearson_coefficient(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::size_t n = xs.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::invalid_argument("pearson: degenerate series (zero variance)");
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

} // namespace detail

/// Sample Pearson correlation with a two-sided p-value from the
/// t-distribution with n-2 degrees of freedom.
inline CorrelationResult pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
    if (xs.size() < 3) throw std::invalid_argument("pearson: need at least 3 points");
    CorrelationResult out;
    out.n = int(xs.size());
    out.coefficient = detail::pearson_coefficient(xs, ys);
    const double r = out.coefficient;
    if (std::fabs(r) >= 1.0) {
        out.p_value = 0.0;
    } else {
        const double t = r * std::sqrt(double(out.n - 2) / (1.0 - r * r));
        out.p_value = student_t_two_sided_p(t, out.n - 2);
    }
    return out;
}

/// Fractional (average) ranks, 1-based; ties share the mean of their ranks.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = 0.5 * (double(i + 1) + double(j + 1));
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Spearman's rho: Pearson over average ranks (exact under ties).
inline CorrelationResult spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
    if (xs.size() < 3) throw std::invalid_argument("spearman: need at least 3 points");
    return pearson(average_ranks(xs), average_ranks(ys));
}

/// Exact two-sided permutation p-value for the Pearson coefficient:
/// the fraction of permutations of ys whose |r| >= |r_observed| (up to a
/// 1e-12 slack for float ties). Enumerates all n! permutations; n <= 10.
inline double pearson_permutation_pvalue(const std::vector<double>& xs,
                                         const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("permutation p: length mismatch");
    const std::size_t n = xs.size();
    if (n < 3 || n > 10) throw std::invalid_argument("permutation p: n must be in [3,10]");
    const double r_obs = std::fabs(detail::pearson_coefficient(xs, ys));
    std::vector<double> perm(ys);
    std::sort(perm.begin(), perm.end());
    long long hits = 0, total = 0;
    do {
        ++total;
        if (std::fabs(detail::pearson_coefficient(xs, perm)) >= r_obs - 1e-12) ++hits;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return double(hits) / double(total);
}

/// Spearman analogue of the exact permutation p-value (ranks, then Pearson).
inline double spearman_permutation_pvalue(const std::vector<double>& xs,
                                          const std::vector<double>& ys) {
    return pearson_permutation_pvalue(average_ranks(xs), average_ranks(ys));
}

struct ClassificationReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::vector<long>> confusion; // confusion[gold][pred]
    int n = 0;
};

/// Accuracy, macro-F1 and the confusion matrix. Macro-F1 averages per-class
/// F1 over classes that appear in gold or predictions; classes absent from
/// both are excluded from the mean. A class with gold instances but no true
/// positives contributes F1 = 0.
inline ClassificationReport classification_metrics(const std::vector<int>& preds,
                                                   const std::vector<int>& golds, int n_classes) {
    if (preds.size() != golds.size())
        throw std::invalid_argument("classification_metrics: length mismatch");
    if (preds.empty()) throw std::invalid_argument("classification_metrics: empty input");
    if (n_classes < 1) throw std::invalid_argument("classification_metrics: n_classes must be >= 1");

    ClassificationReport rep;
    rep.n = int(preds.size());
    rep.confusion.assign(std::size_t(n_classes), std::vector<long>(std::size_t(n_classes), 0));
    long correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (golds[i] < 0 || golds[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes)
            throw std::invalid_argument("classification_metrics: label out of range");
        rep.confusion[std::size_t(golds[i])][std::size_t(preds[i])]++;
        if (golds[i] == preds[i]) ++correct;
    }
    rep.accuracy = double(correct) / double(rep.n);

    double f1_sum = 0.0;
    int f1_classes = 0;
    for (int c = 0; c < n_classes; ++c) {
        long tp = rep.confusion[std::size_t(c)][std::size_t(c)];
        long gold_c = 0, pred_c = 0;
        for (int j = 0; j < n_classes; ++j) {
            gold_c += rep.confusion[std::size_t(c)][std::size_t(j)];
            pred_c += rep.confusion[std::size_t(j)][std::size_t(c)];
        }
        if (gold_c == 0 && pred_c == 0) continue; // class unused by the data
        ++f1_classes;
        const double prec = pred_c > 0 ? double(tp) / double(pred_c) : 0.0;
        const double rec = gold_c > 0 ? double(tp) / double(gold_c) : 0.0;
        if (prec + rec > 0.0) f1_sum += 2.0 * prec * rec / (prec + rec);
    }
    rep.macro_f1 = f1_classes > 0 ? f1_sum / double(f1_classes) : 0.0;
    return rep;
}

} // namespace tempolm
