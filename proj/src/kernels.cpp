#include "kernels_impl.hpp"

#include <cstdlib>
#include <stdexcept>

namespace paramgate::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

struct Dispatch {
    Isa isa;
    const detail::KernelTable* table;

    Dispatch() {
        isa = cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
        if (const char* env = std::getenv("PARAMGATE_ISA")) {
            std::string s(env);
            if (s == "scalar") isa = Isa::scalar;
            else if (s == "avx2" && cpu_has_avx2()) isa = Isa::avx2;
        }
        set(isa);
    }

    void set(Isa i) {
        isa = i;
#if defined(__x86_64__) || defined(_M_X64)
        table = (i == Isa::avx2) ? &detail::avx2_table() : &detail::scalar_table();
#else
        table = &detail::scalar_table();
#endif
    }
};

Dispatch& dispatch() {
    static Dispatch d;
    return d;
}

} // namespace

Isa active_isa() { return dispatch().isa; }

std::string isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

void force_isa(Isa isa) {
    if (!isa_supported(isa))
        throw std::invalid_argument("kernels: ISA " + isa_name(isa) + " not supported on this CPU");
    dispatch().set(isa);
}

void zgemm(int m, int k, int n, const cd* A, const cd* B, cd* C, bool accumulate) {
    dispatch().table->zgemm(m, k, n, A, B, C, accumulate);
}
void dgemm(int m, int k, int n, const double* A, const double* B, double* C, bool accumulate) {
    dispatch().table->dgemm(m, k, n, A, B, C, accumulate);
}
void zgemv(int m, int n, const cd* A, const cd* x, cd* y, bool accumulate) {
    dispatch().table->zgemv(m, n, A, x, y, accumulate);
}
void dgemv(int m, int n, const double* A, const double* x, double* y, bool accumulate) {
    dispatch().table->dgemv(m, n, A, x, y, accumulate);
}
void zaxpy(int n, cd a, const cd* x, cd* y) { dispatch().table->zaxpy(n, a, x, y); }
void daxpy(int n, double a, const double* x, double* y) { dispatch().table->daxpy(n, a, x, y); }
void dger(int m, int n, double alpha, const double* x, const double* y, double* A) {
    dispatch().table->dger(m, n, alpha, x, y, A);
}
double ddot(int n, const double* x, const double* y) { return dispatch().table->ddot(n, x, y); }

} // namespace paramgate::kernels
