// Micro-benchmark for the matmul kernels; not part of the test suite.
#include <chrono>
#include <cstdio>

#include "tempolm/rng.hpp"
#include "tempolm/tensor.hpp"

using namespace tempolm;

static Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (auto& x : m.v) x = rng.normal(0.0, 1.0);
    return m;
}

static void bench(const char* name, int m, int k, int n, int reps,
                  void (*op)(const Mat&, const Mat&, Mat&, bool), int ar, int ac, int br, int bc) {
    Rng rng(7);
    Mat a = random_mat(ar, ac, rng);
    Mat b = random_mat(br, bc, rng);
    Mat c(m, n);
    op(a, b, c, false); // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) op(a, b, c, false);
    auto t1 = std::chrono::steady_clock::now();
    double sec = std::chrono::duration<double>(t1 - t0).count();
    double flop = 2.0 * m * k * n * reps;
    std::printf("%-8s %4dx%4dx%4d  %7.2f GFLOP/s  (%.3f s, checksum %.6f)\n", name, m, k, n,
                flop / sec / 1e9, sec, c.at(0, 0));
}

int main() {
    set_global_threads(1);
    // shapes that dominate training: (B*L x D)*(D x D), (B*L x D)*(D x F), logits (P x D)*(V x D)^T
    bench("nn", 256, 128, 128, 400, gemm_nn, 256, 128, 128, 128);
    bench("nn", 256, 128, 256, 200, gemm_nn, 256, 128, 128, 256);
    bench("nn", 512, 256, 512, 50, gemm_nn, 512, 256, 256, 512);
    bench("nt", 64, 128, 2000, 200, gemm_nt, 64, 128, 2000, 128);
    bench("tn", 256, 256, 256, 200, gemm_tn, 256, 256, 256, 256);
    bench("tn", 2000, 64, 128, 200, gemm_tn, 64, 2000, 64, 128);
    return 0;
}
