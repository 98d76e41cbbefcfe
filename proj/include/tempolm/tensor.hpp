#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <stdexcept>
#if defined(__AVX512F__)
#include <immintrin.h>
#endif
#include <string>
#include <vector>

#include "tempolm/thread_pool.hpp"

namespace tempolm {

/// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 as convenient.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(std::size_t(r) * std::size_t(c), 0.0) {}

    double* row(int i) { return v.data() + std::size_t(i) * cols; }
    const double* row(int i) const { return v.data() + std::size_t(i) * cols; }
    double& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return v[std::size_t(r) * cols + c]; }
    std::size_t size() const { return v.size(); }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline void require_shape(const Mat& m, int r, int c, const char* what) {
    if (m.rows != r || m.cols != c)
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(r) + "x" +
                                    std::to_string(c) + ", got " + std::to_string(m.rows) + "x" +
                                    std::to_string(m.cols));
}

/// Accumulating dot product with a fixed 8-way split so the loop vectorizes
/// without changing the summation order between runs.
inline double dot(const double* x, const double* y, int n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    int k = 0;
    for (; k + 8 <= n; k += 8) {
        s0 += x[k] * y[k];
        s1 += x[k + 1] * y[k + 1];
        s2 += x[k + 2] * y[k + 2];
        s3 += x[k + 3] * y[k + 3];
        s4 += x[k + 4] * y[k + 4];
        s5 += x[k + 5] * y[k + 5];
        s6 += x[k + 6] * y[k + 6];
        s7 += x[k + 7] * y[k + 7];
    }
    double s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
    for (; k < n; ++k) s += x[k] * y[k];
    return s;
}

inline void axpy(double a, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

namespace detail {

// Register-tiled accumulation kernels: a 4-row by 16-column tile of C lives
// in registers across the whole k loop and is spilled once. Per-element
// summation order over k is fixed, so any tiling or thread split yields
// bit-identical results.
#if defined(__AVX512F__)

inline void tile_4row(const double* __restrict a0, const double* __restrict a1,
                      const double* __restrict a2, const double* __restrict a3,
                      const double* bbase, int bstride, int K, double* c0, double* c1, double* c2,
                      double* c3, int N) {
    int j = 0;
    for (; j + 16 <= N; j += 16) {
        __m512d q00 = _mm512_setzero_pd(), q01 = _mm512_setzero_pd();
        __m512d q10 = _mm512_setzero_pd(), q11 = _mm512_setzero_pd();
        __m512d q20 = _mm512_setzero_pd(), q21 = _mm512_setzero_pd();
        __m512d q30 = _mm512_setzero_pd(), q31 = _mm512_setzero_pd();
        const double* bk = bbase + j;
        for (int k = 0; k < K; ++k, bk += bstride) {
            const __m512d b0 = _mm512_loadu_pd(bk);
            const __m512d b1 = _mm512_loadu_pd(bk + 8);
            __m512d x;
            x = _mm512_set1_pd(a0[k]);
            q00 = _mm512_fmadd_pd(x, b0, q00);
            q01 = _mm512_fmadd_pd(x, b1, q01);
            x = _mm512_set1_pd(a1[k]);
            q10 = _mm512_fmadd_pd(x, b0, q10);
            q11 = _mm512_fmadd_pd(x, b1, q11);
            x = _mm512_set1_pd(a2[k]);
            q20 = _mm512_fmadd_pd(x, b0, q20);
            q21 = _mm512_fmadd_pd(x, b1, q21);
            x = _mm512_set1_pd(a3[k]);
            q30 = _mm512_fmadd_pd(x, b0, q30);
            q31 = _mm512_fmadd_pd(x, b1, q31);
        }
        _mm512_storeu_pd(c0 + j, _mm512_add_pd(_mm512_loadu_pd(c0 + j), q00));
        _mm512_storeu_pd(c0 + j + 8, _mm512_add_pd(_mm512_loadu_pd(c0 + j + 8), q01));
        _mm512_storeu_pd(c1 + j, _mm512_add_pd(_mm512_loadu_pd(c1 + j), q10));
        _mm512_storeu_pd(c1 + j + 8, _mm512_add_pd(_mm512_loadu_pd(c1 + j + 8), q11));
        _mm512_storeu_pd(c2 + j, _mm512_add_pd(_mm512_loadu_pd(c2 + j), q20));
        _mm512_storeu_pd(c2 + j + 8, _mm512_add_pd(_mm512_loadu_pd(c2 + j + 8), q21));
        _mm512_storeu_pd(c3 + j, _mm512_add_pd(_mm512_loadu_pd(c3 + j), q30));
        _mm512_storeu_pd(c3 + j + 8, _mm512_add_pd(_mm512_loadu_pd(c3 + j + 8), q31));
    }
    if (j < N) {
        const unsigned w = unsigned(N - j);
        const __mmask8 m0 = __mmask8((w >= 8 ? 0xffu : (1u << w) - 1u));
        const __mmask8 m1 = __mmask8(w > 8 ? (1u << (w - 8)) - 1u : 0u);
        __m512d q00 = _mm512_setzero_pd(), q01 = _mm512_setzero_pd();
        __m512d q10 = _mm512_setzero_pd(), q11 = _mm512_setzero_pd();
        __m512d q20 = _mm512_setzero_pd(), q21 = _mm512_setzero_pd();
        __m512d q30 = _mm512_setzero_pd(), q31 = _mm512_setzero_pd();
        const double* bk = bbase + j;
        for (int k = 0; k < K; ++k, bk += bstride) {
            const __m512d b0 = _mm512_maskz_loadu_pd(m0, bk);
            const __m512d b1 = _mm512_maskz_loadu_pd(m1, bk + 8);
            __m512d x;
            x = _mm512_set1_pd(a0[k]);
            q00 = _mm512_fmadd_pd(x, b0, q00);
            q01 = _mm512_fmadd_pd(x, b1, q01);
            x = _mm512_set1_pd(a1[k]);
            q10 = _mm512_fmadd_pd(x, b0, q10);
            q11 = _mm512_fmadd_pd(x, b1, q11);
            x = _mm512_set1_pd(a2[k]);
            q20 = _mm512_fmadd_pd(x, b0, q20);
            q21 = _mm512_fmadd_pd(x, b1, q21);
            x = _mm512_set1_pd(a3[k]);
            q30 = _mm512_fmadd_pd(x, b0, q30);
            q31 = _mm512_fmadd_pd(x, b1, q31);
        }
        auto spill = [&](double* c, __m512d lo, __m512d hi) {
            _mm512_mask_storeu_pd(c + j, m0, _mm512_add_pd(_mm512_maskz_loadu_pd(m0, c + j), lo));
            if (m1)
                _mm512_mask_storeu_pd(c + j + 8, m1,
                                      _mm512_add_pd(_mm512_maskz_loadu_pd(m1, c + j + 8), hi));
        };
        spill(c0, q00, q01);
        spill(c1, q10, q11);
        spill(c2, q20, q21);
        spill(c3, q30, q31);
    }
}

inline void tile_1row(const double* __restrict a0, const double* bbase, int bstride, int K,
                      double* __restrict c0, int N) {
    int j = 0;
    for (; j + 16 <= N; j += 16) {
        __m512d q0 = _mm512_setzero_pd(), q1 = _mm512_setzero_pd();
        const double* bk = bbase + j;
        for (int k = 0; k < K; ++k, bk += bstride) {
            const __m512d x = _mm512_set1_pd(a0[k]);
            q0 = _mm512_fmadd_pd(x, _mm512_loadu_pd(bk), q0);
            q1 = _mm512_fmadd_pd(x, _mm512_loadu_pd(bk + 8), q1);
        }
        _mm512_storeu_pd(c0 + j, _mm512_add_pd(_mm512_loadu_pd(c0 + j), q0));
        _mm512_storeu_pd(c0 + j + 8, _mm512_add_pd(_mm512_loadu_pd(c0 + j + 8), q1));
    }
    if (j < N) {
        const unsigned w = unsigned(N - j);
        const __mmask8 m0 = __mmask8((w >= 8 ? 0xffu : (1u << w) - 1u));
        const __mmask8 m1 = __mmask8(w > 8 ? (1u << (w - 8)) - 1u : 0u);
        __m512d q0 = _mm512_setzero_pd(), q1 = _mm512_setzero_pd();
        const double* bk = bbase + j;
        for (int k = 0; k < K; ++k, bk += bstride) {
            const __m512d x = _mm512_set1_pd(a0[k]);
            q0 = _mm512_fmadd_pd(x, _mm512_maskz_loadu_pd(m0, bk), q0);
            q1 = _mm512_fmadd_pd(x, _mm512_maskz_loadu_pd(m1, bk + 8), q1);
        }
        _mm512_mask_storeu_pd(c0 + j, m0, _mm512_add_pd(_mm512_maskz_loadu_pd(m0, c0 + j), q0));
        if (m1)
            _mm512_mask_storeu_pd(c0 + j + 8, m1,
                                  _mm512_add_pd(_mm512_maskz_loadu_pd(m1, c0 + j + 8), q1));
    }
}

#else // portable fallback: streamed B rows, C updated in place

inline void tile_4row(const double* __restrict a0, const double* __restrict a1,
                      const double* __restrict a2, const double* __restrict a3,
                      const double* bbase, int bstride, int K, double* __restrict c0,
                      double* __restrict c1, double* __restrict c2, double* __restrict c3, int N) {
    for (int k = 0; k < K; ++k) {
        const double* __restrict bk = bbase + std::size_t(k) * bstride;
        const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
        for (int j = 0; j < N; ++j) {
            const double bj = bk[j];
            c0[j] += x0 * bj;
            c1[j] += x1 * bj;
            c2[j] += x2 * bj;
            c3[j] += x3 * bj;
        }
    }
}

inline void tile_1row(const double* __restrict a0, const double* bbase, int bstride, int K,
                      double* __restrict c0, int N) {
    for (int k = 0; k < K; ++k) {
        const double* __restrict bk = bbase + std::size_t(k) * bstride;
        const double x0 = a0[k];
        for (int j = 0; j < N; ++j) c0[j] += x0 * bk[j];
    }
}

#endif

// C rows [r0,r1) of C = A*B, accumulating into C.
inline void gemm_nn_rows(const Mat& a, const Mat& b, Mat& c, int r0, int r1) {
    const int K = a.cols, N = b.cols;
    int i = r0;
    for (; i + 4 <= r1; i += 4) {
        tile_4row(a.row(i), a.row(i + 1), a.row(i + 2), a.row(i + 3), b.v.data(), b.cols, K,
                  c.row(i), c.row(i + 1), c.row(i + 2), c.row(i + 3), N);
    }
    for (; i < r1; ++i) tile_1row(a.row(i), b.v.data(), b.cols, K, c.row(i), N);
}

// C rows [r0,r1) of C = A*B^T (dot-product form; A rows and B rows contiguous).
inline void gemm_nt_rows(const Mat& a, const Mat& b, Mat& c, int r0, int r1) {
    const int K = a.cols, N = b.rows;
    for (int i = r0; i < r1; ++i) {
        const double* ai = a.row(i);
        double* __restrict ci = c.row(i);
        for (int j = 0; j < N; ++j) ci[j] += dot(ai, b.row(j), K);
    }
}

// C rows [r0,r1) of C = A^T*B where A is MxR, B is MxN, C is RxN.
// Columns of A are packed contiguously per row block, then the same tile
// kernel runs with the m dimension as the inner loop.
inline void gemm_tn_rows(const Mat& a, const Mat& b, Mat& c, int r0, int r1) {
    const int M = a.rows, N = b.cols;
    std::vector<double> pack(std::size_t(4) * std::size_t(std::max(M, 1)));
    int i = r0;
    for (; i + 4 <= r1; i += 4) {
        for (int m = 0; m < M; ++m) {
            const double* am = a.row(m);
            pack[std::size_t(m)] = am[i];
            pack[std::size_t(M + m)] = am[i + 1];
            pack[std::size_t(2 * M + m)] = am[i + 2];
            pack[std::size_t(3 * M + m)] = am[i + 3];
        }
        tile_4row(pack.data(), pack.data() + M, pack.data() + 2 * M, pack.data() + 3 * M,
                  b.v.data(), b.cols, M, c.row(i), c.row(i + 1), c.row(i + 2), c.row(i + 3), N);
    }
    for (; i < r1; ++i) {
        for (int m = 0; m < M; ++m) pack[std::size_t(m)] = a.row(m)[i];
        tile_1row(pack.data(), b.v.data(), b.cols, M, c.row(i), N);
    }
}

inline void run_rows(int rows, int grain, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (rows <= grain || global_pool().size() <= 1) {
        fn(0, std::size_t(rows));
    } else {
        global_pool().parallel_for(std::size_t(rows), fn);
    }
}

} // namespace detail

/// c = a*b (accumulate=false zeroes c first). Shapes: (MxK)*(KxN) -> MxN.
inline void gemm_nn(const Mat& a, const Mat& b, Mat& c, bool accumulate = false) {
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
        throw std::invalid_argument("gemm_nn: shape mismatch");
    if (!accumulate) c.zero();
    detail::run_rows(c.rows, 64, [&](std::size_t lo, std::size_t hi) {
        detail::gemm_nn_rows(a, b, c, int(lo), int(hi));
    });
}

/// c = a*b^T. Shapes: (MxK)*(NxK)^T -> MxN.
inline void gemm_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate = false) {
    if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
        throw std::invalid_argument("gemm_nt: shape mismatch");
    if (!accumulate) c.zero();
    detail::run_rows(c.rows, 64, [&](std::size_t lo, std::size_t hi) {
        detail::gemm_nt_rows(a, b, c, int(lo), int(hi));
    });
}

/// c = a^T*b. Shapes: (MxR)^T*(MxN) -> RxN.
inline void gemm_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate = false) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw std::invalid_argument("gemm_tn: shape mismatch");
    if (!accumulate) c.zero();
    detail::run_rows(c.rows, 64, [&](std::size_t lo, std::size_t hi) {
        detail::gemm_tn_rows(a, b, c, int(lo), int(hi));
    });
}

/// out = m^T. Hot paths transpose weights once per step and multiply with
/// gemm_nn, which is markedly faster than the dot-product gemm_nt form.
inline void transpose(const Mat& m, Mat& out) {
    if (out.rows != m.cols || out.cols != m.rows) out = Mat(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (int j = 0; j < m.cols; ++j) out.at(j, i) = r[j];
    }
}

/// Add a row vector (1xN) to every row of m.
inline void add_row_vector(Mat& m, const Mat& bias) {
    if (bias.cols != m.cols) throw std::invalid_argument("add_row_vector: width mismatch");
    for (int i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        const double* b = bias.row(0);
        for (int j = 0; j < m.cols; ++j) r[j] += b[j];
    }
}

/// bias (1xN) += column sums of m.
inline void add_col_sums(const Mat& m, Mat& bias) {
    if (bias.cols != m.cols) throw std::invalid_argument("add_col_sums: width mismatch");
    double* b = bias.row(0);
    for (int i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (int j = 0; j < m.cols; ++j) b[j] += r[j];
    }
}

/// Shortest exact decimal form is not needed; %.17g round-trips doubles and
/// keeps report files deterministic.
inline std::string fmt_g17(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline double cosine_distance(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("cosine_distance: length mismatch");
    double xx = dot(x.data(), x.data(), int(x.size()));
    double yy = dot(y.data(), y.data(), int(y.size()));
    if (xx == 0.0 || yy == 0.0) throw std::runtime_error("cosine_distance: zero-norm vector");
    double xy = dot(x.data(), y.data(), int(x.size()));
    // rounding can push the ratio past Cauchy-Schwarz by an ulp; project back
    double cos = std::clamp(xy / (std::sqrt(xx) * std::sqrt(yy)), -1.0, 1.0);
    return 1.0 - cos;
}

} // namespace tempolm
