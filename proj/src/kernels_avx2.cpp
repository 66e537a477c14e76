// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; it is only ever entered through the dispatch table after a
// CPUID check, so the rest of the library can be built for generic x86-64.

#if defined(__x86_64__) || defined(_M_X64)

#include "kernels_impl.hpp"

#include <cstring>
#include <immintrin.h>

namespace paramgate::kernels::detail {

namespace {

// One __m256d holds two complex<double> as [re0, im0, re1, im1].
// (ar + i*ai) * b for both packed complex values:
//   even lanes: ar*re - ai*im, odd lanes: ar*im + ai*re
inline __m256d cmul_acc(__m256d ar, __m256d ai, __m256d b, __m256d acc) {
    __m256d bswap = _mm256_permute_pd(b, 0x5);
    __m256d t = _mm256_mul_pd(ai, bswap);
    return _mm256_add_pd(acc, _mm256_fmaddsub_pd(ar, b, t));
}

void zgemm_avx2(int m, int k, int n, const cd* A, const cd* B, cd* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(cd) * size_t(m) * size_t(n));
    const int n2 = n & ~1;
    for (int i = 0; i < m; ++i) {
        cd* crow = C + size_t(i) * n;
        const cd* arow = A + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const cd a = arow[p];
            if (a == cd(0.0, 0.0)) continue;
            const cd* brow = B + size_t(p) * n;
            const __m256d ar = _mm256_set1_pd(a.real());
            const __m256d ai = _mm256_set1_pd(a.imag());
            int j = 0;
            for (; j < n2; j += 2) {
                __m256d b = _mm256_loadu_pd(reinterpret_cast<const double*>(brow + j));
                __m256d c = _mm256_loadu_pd(reinterpret_cast<double*>(crow + j));
                _mm256_storeu_pd(reinterpret_cast<double*>(crow + j), cmul_acc(ar, ai, b, c));
            }
            for (; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void dgemm_avx2(int m, int k, int n, const double* A, const double* B, double* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * size_t(m) * size_t(n));
    const int n4 = n & ~3;
    for (int i = 0; i < m; ++i) {
        double* crow = C + size_t(i) * n;
        const double* arow = A + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            const double* brow = B + size_t(p) * n;
            const __m256d av = _mm256_set1_pd(a);
            int j = 0;
            for (; j < n4; j += 4) {
                __m256d c = _mm256_loadu_pd(crow + j);
                c = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), c);
                _mm256_storeu_pd(crow + j, c);
            }
            for (; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void zgemv_avx2(int m, int n, const cd* A, const cd* x, cd* y, bool accumulate) {
    const int n2 = n & ~1;
    for (int i = 0; i < m; ++i) {
        const cd* arow = A + size_t(i) * n;
        __m256d acc = _mm256_setzero_pd();
        int j = 0;
        for (; j < n2; j += 2) {
            __m256d a = _mm256_loadu_pd(reinterpret_cast<const double*>(arow + j));
            __m256d xv = _mm256_loadu_pd(reinterpret_cast<const double*>(x + j));
            // complex product a*x accumulated lane-wise; split a into re/im broadcast pairs
            __m256d are = _mm256_shuffle_pd(a, a, 0x0); // [re0,re0,re1,re1]
            __m256d aim = _mm256_shuffle_pd(a, a, 0xF); // [im0,im0,im1,im1]
            acc = cmul_acc(are, aim, xv, acc);
        }
        double buf[4];
        _mm256_storeu_pd(buf, acc);
        cd sum(buf[0] + buf[2], buf[1] + buf[3]);
        for (; j < n; ++j) sum += arow[j] * x[j];
        y[i] = accumulate ? y[i] + sum : sum;
    }
}

void dgemv_avx2(int m, int n, const double* A, const double* x, double* y, bool accumulate) {
    const int n4 = n & ~3;
    for (int i = 0; i < m; ++i) {
        const double* arow = A + size_t(i) * n;
        __m256d acc = _mm256_setzero_pd();
        int j = 0;
        for (; j < n4; j += 4)
            acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + j), _mm256_loadu_pd(x + j), acc);
        double buf[4];
        _mm256_storeu_pd(buf, acc);
        double sum = buf[0] + buf[1] + buf[2] + buf[3];
        for (; j < n; ++j) sum += arow[j] * x[j];
        y[i] = accumulate ? y[i] + sum : sum;
    }
}

void zaxpy_avx2(int n, cd a, const cd* x, cd* y) {
    const __m256d ar = _mm256_set1_pd(a.real());
    const __m256d ai = _mm256_set1_pd(a.imag());
    const int n2 = n & ~1;
    int i = 0;
    for (; i < n2; i += 2) {
        __m256d xv = _mm256_loadu_pd(reinterpret_cast<const double*>(x + i));
        __m256d yv = _mm256_loadu_pd(reinterpret_cast<double*>(y + i));
        _mm256_storeu_pd(reinterpret_cast<double*>(y + i), cmul_acc(ar, ai, xv, yv));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void daxpy_avx2(int n, double a, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(a);
    const int n4 = n & ~3;
    int i = 0;
    for (; i < n4; i += 4) {
        __m256d yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void dger_avx2(int m, int n, double alpha, const double* x, const double* y, double* A) {
    const int n4 = n & ~3;
    for (int i = 0; i < m; ++i) {
        const double ax = alpha * x[i];
        if (ax == 0.0) continue;
        double* arow = A + size_t(i) * n;
        const __m256d av = _mm256_set1_pd(ax);
        int j = 0;
        for (; j < n4; j += 4) {
            __m256d r = _mm256_fmadd_pd(av, _mm256_loadu_pd(y + j), _mm256_loadu_pd(arow + j));
            _mm256_storeu_pd(arow + j, r);
        }
        for (; j < n; ++j) arow[j] += ax * y[j];
    }
}

double ddot_avx2(int n, const double* x, const double* y) {
    __m256d acc = _mm256_setzero_pd();
    const int n4 = n & ~3;
    int i = 0;
    for (; i < n4; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    double buf[4];
    _mm256_storeu_pd(buf, acc);
    double sum = buf[0] + buf[1] + buf[2] + buf[3];
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

} // namespace

const KernelTable& avx2_table() {
    static const KernelTable t = {zgemm_avx2, dgemm_avx2, zgemv_avx2, dgemv_avx2,
                                  zaxpy_avx2, daxpy_avx2, dger_avx2,  ddot_avx2};
    return t;
}

} // namespace paramgate::kernels::detail

#endif // x86-64
