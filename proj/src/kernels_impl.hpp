#pragma once
// Internal: per-ISA kernel entry points. Not installed.

#include "paramgate/kernels.hpp"

namespace paramgate::kernels::detail {

struct KernelTable {
    void (*zgemm)(int, int, int, const cd*, const cd*, cd*, bool);
    void (*dgemm)(int, int, int, const double*, const double*, double*, bool);
    void (*zgemv)(int, int, const cd*, const cd*, cd*, bool);
    void (*dgemv)(int, int, const double*, const double*, double*, bool);
    void (*zaxpy)(int, cd, const cd*, cd*);
    void (*daxpy)(int, double, const double*, double*);
    void (*dger)(int, int, double, const double*, const double*, double*);
    double (*ddot)(int, const double*, const double*);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif

} // namespace paramgate::kernels::detail
