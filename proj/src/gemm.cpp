#include "tensor.hpp"

#ifdef UMURL_USE_BLAS
#include <cblas.h>

extern "C" void openblas_set_num_threads(int);
#endif

namespace umurl {

#ifdef UMURL_USE_BLAS

namespace {

// One thread keeps results bit-identical across runs regardless of how the
// host library was configured.
struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init;

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, const float* b, float* c, bool accumulate) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), 1.0f, a, static_cast<int>(trans_a ? m : k), b,
                static_cast<int>(trans_b ? k : n), accumulate ? 1.0f : 0.0f, c,
                static_cast<int>(n));
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), 1.0, a, static_cast<int>(trans_a ? m : k), b,
                static_cast<int>(trans_b ? k : n), accumulate ? 1.0 : 0.0, c,
                static_cast<int>(n));
}

#else

namespace {

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) {
            c[i] = T{0};
        }
    }
    // a(i, l): trans_a ? a[l * m + i] : a[i * k + l]
    // b(l, j): trans_b ? b[j * k + l] : b[l * n + j]
    if (!trans_a && !trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
                const T ail = a[i * k + l];
                const T* brow = b + l * n;
                T* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    crow[j] += ail * brow[j];
                }
            }
        }
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const T ail = trans_a ? a[l * m + i] : a[i * k + l];
            T* crow = c + i * n;
            if (trans_b) {
                for (std::size_t j = 0; j < n; ++j) {
                    crow[j] += ail * b[j * k + l];
                }
            } else {
                const T* brow = b + l * n;
                for (std::size_t j = 0; j < n; ++j) {
                    crow[j] += ail * brow[j];
                }
            }
        }
    }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, const float* b, float* c, bool accumulate) {
    gemm_impl(trans_a, trans_b, m, n, k, a, b, c, accumulate);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    gemm_impl(trans_a, trans_b, m, n, k, a, b, c, accumulate);
}

#endif

}  // namespace umurl
