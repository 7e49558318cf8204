#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace sparsemask {

// Small row-major matrix kernels backing conv2d. Loop orders are fixed, so
// summation order (and therefore the bit pattern of results) never depends
// on runtime configuration.

// C(MxN) += A(MxK) * B(KxN)
template <typename T>
void gemm_ab(int m, int k, int n, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(MxK) += A(MxN) * B(KxN)^T. Row-by-row dot products do not vectorize
// (float reductions cannot be reassociated), so this goes through A^T and
// accumulates along the short M axis instead.
template <typename T>
void gemm_abt(int m, int n, int k, const T* a, const T* b, T* c) {
    thread_local std::vector<T> at_buf, ct_buf;
    if (at_buf.size() < static_cast<std::size_t>(n) * m) at_buf.resize(static_cast<std::size_t>(n) * m);
    if (ct_buf.size() < static_cast<std::size_t>(k) * m) ct_buf.resize(static_cast<std::size_t>(k) * m);
    T* at = at_buf.data();
    T* ct = ct_buf.data();
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) at[static_cast<std::size_t>(j) * m + i] = arow[j];
    }
    std::fill(ct, ct + static_cast<std::size_t>(k) * m, T(0));
    for (int p = 0; p < k; ++p) {
        const T* brow = b + static_cast<std::size_t>(p) * n;
        T* crow = ct + static_cast<std::size_t>(p) * m;
        for (int j = 0; j < n; ++j) {
            const T bv = brow[j];
            if (bv == T(0)) continue;
            const T* arow = at + static_cast<std::size_t>(j) * m;
            for (int i = 0; i < m; ++i) crow[i] += bv * arow[i];
        }
    }
    for (int p = 0; p < k; ++p) {
        for (int i = 0; i < m; ++i) {
            c[static_cast<std::size_t>(i) * k + p] += ct[static_cast<std::size_t>(p) * m + i];
        }
    }
}

// C(KxN) += A(MxK)^T * B(MxN)
template <typename T>
void gemm_atb(int m, int k, int n, const T* a, const T* b, T* c) {
    for (int p = 0; p < k; ++p) {
        T* crow = c + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = a[static_cast<std::size_t>(i) * k + p];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace sparsemask
