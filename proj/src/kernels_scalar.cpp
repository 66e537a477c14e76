#include "kernels_impl.hpp"

#include <cstring>

namespace paramgate::kernels::detail {

namespace {

void zgemm_scalar(int m, int k, int n, const cd* A, const cd* B, cd* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(cd) * size_t(m) * size_t(n));
    for (int i = 0; i < m; ++i) {
        cd* crow = C + size_t(i) * n;
        const cd* arow = A + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const cd a = arow[p];
            if (a == cd(0.0, 0.0)) continue;
            const cd* brow = B + size_t(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void dgemm_scalar(int m, int k, int n, const double* A, const double* B, double* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * size_t(m) * size_t(n));
    for (int i = 0; i < m; ++i) {
        double* crow = C + size_t(i) * n;
        const double* arow = A + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            const double* brow = B + size_t(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void zgemv_scalar(int m, int n, const cd* A, const cd* x, cd* y, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const cd* arow = A + size_t(i) * n;
        cd acc(0.0, 0.0);
        for (int j = 0; j < n; ++j) acc += arow[j] * x[j];
        y[i] = accumulate ? y[i] + acc : acc;
    }
}

void dgemv_scalar(int m, int n, const double* A, const double* x, double* y, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + size_t(i) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += arow[j] * x[j];
        y[i] = accumulate ? y[i] + acc : acc;
    }
}

void zaxpy_scalar(int n, cd a, const cd* x, cd* y) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

void daxpy_scalar(int n, double a, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

void dger_scalar(int m, int n, double alpha, const double* x, const double* y, double* A) {
    for (int i = 0; i < m; ++i) {
        const double ax = alpha * x[i];
        if (ax == 0.0) continue;
        double* arow = A + size_t(i) * n;
        for (int j = 0; j < n; ++j) arow[j] += ax * y[j];
    }
}

double ddot_scalar(int n, const double* x, const double* y) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

} // namespace

const KernelTable& scalar_table() {
    static const KernelTable t = {zgemm_scalar, dgemm_scalar, zgemv_scalar, dgemv_scalar,
                                  zaxpy_scalar, daxpy_scalar, dger_scalar,  ddot_scalar};
    return t;
}

} // namespace paramgate::kernels::detail
