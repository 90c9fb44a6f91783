#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <type_traits>
#include <vector>

#ifdef LYV5_USE_CBLAS
#include <cblas.h>
#endif

namespace lyv5 {

namespace detail {
inline std::atomic<unsigned>& thread_setting()
{
    static std::atomic<unsigned> n{1};
    return n;
}
} // namespace detail

// Worker count for data-parallel loops. 1 (the default) keeps every
// reduction in a fixed order, which is what makes runs bit-reproducible.
inline void set_num_threads(unsigned n)
{
    detail::thread_setting() = std::max(1u, n);
#ifdef LYV5_USE_CBLAS
    openblas_set_num_threads(static_cast<int>(std::max(1u, n)));
#endif
}
inline unsigned num_threads() { return detail::thread_setting(); }

#ifdef LYV5_USE_CBLAS
namespace detail {
// OpenBLAS otherwise starts one worker per core.
inline const bool blas_single_threaded = (openblas_set_num_threads(1), true);
} // namespace detail
#endif

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is owned
// by exactly one worker.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const std::size_t workers = std::min<std::size_t>(num_threads(), n);
    if (workers <= 1) {
        if (n) fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(std::size_t{0}, std::min(n, chunk));
}

// C[M,N] += A[M,K] * B[K,N]. A is addressed through (row, col) strides so a
// transposed operand costs nothing; B and C are row-major with leading dims.
template <class T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K,
              const T* A, std::size_t a_rs, std::size_t a_cs,
              const T* B, std::size_t ldb,
              T* C, std::size_t ldc)
{
#ifdef LYV5_USE_CBLAS
    if (M > 0 && N > 0 && K > 0 && (a_cs == 1 || a_rs == 1)) {
        const auto trans = a_cs == 1 ? CblasNoTrans : CblasTrans;
        const auto lda = static_cast<int>(a_cs == 1 ? a_rs : a_cs);
        const auto m = static_cast<int>(M), n = static_cast<int>(N), k = static_cast<int>(K);
        if constexpr (std::is_same_v<T, float>) {
            cblas_sgemm(CblasRowMajor, trans, CblasNoTrans, m, n, k, 1.0f, A, std::max(lda, 1), B,
                        static_cast<int>(ldb), 1.0f, C, static_cast<int>(ldc));
            return;
        } else if constexpr (std::is_same_v<T, double>) {
            cblas_dgemm(CblasRowMajor, trans, CblasNoTrans, m, n, k, 1.0, A, std::max(lda, 1), B,
                        static_cast<int>(ldb), 1.0, C, static_cast<int>(ldc));
            return;
        }
    }
#endif
    constexpr std::size_t kColBlock = 256;
    for (std::size_t j0 = 0; j0 < N; j0 += kColBlock) {
        const std::size_t jn = std::min(kColBlock, N - j0);
        std::size_t i = 0;
        for (; i + 4 <= M; i += 4) {
            T* c0 = C + (i + 0) * ldc + j0;
            T* c1 = C + (i + 1) * ldc + j0;
            T* c2 = C + (i + 2) * ldc + j0;
            T* c3 = C + (i + 3) * ldc + j0;
            for (std::size_t k = 0; k < K; ++k) {
                const T a0 = A[(i + 0) * a_rs + k * a_cs];
                const T a1 = A[(i + 1) * a_rs + k * a_cs];
                const T a2 = A[(i + 2) * a_rs + k * a_cs];
                const T a3 = A[(i + 3) * a_rs + k * a_cs];
                const T* b = B + k * ldb + j0;
                for (std::size_t j = 0; j < jn; ++j) {
                    const T bv = b[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
        }
        for (; i < M; ++i) {
            T* c = C + i * ldc + j0;
            for (std::size_t k = 0; k < K; ++k) {
                const T a = A[i * a_rs + k * a_cs];
                const T* b = B + k * ldb + j0;
                for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
            }
        }
    }
}

// out[cols, rows] = in[rows, cols]^T
template <class T>
void transpose_into(const T* in, std::size_t rows, std::size_t cols, T* out)
{
    constexpr std::size_t B = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += B)
        for (std::size_t c0 = 0; c0 < cols; c0 += B)
            for (std::size_t r = r0; r < std::min(rows, r0 + B); ++r)
                for (std::size_t c = c0; c < std::min(cols, c0 + B); ++c)
                    out[c * rows + r] = in[r * cols + c];
}

} // namespace lyv5
