#pragma once
// Dense arithmetic kernels with runtime ISA dispatch.
//
// Every kernel has a scalar reference implementation and, on x86, an AVX2+FMA
// variant. The active variant is chosen once at startup from CPUID and can be
// overridden with the PARAMGATE_ISA environment variable ("scalar" or "avx2")
// or force_isa(). All matrices are dense row-major, contiguous.

#include <complex>
#include <string>

namespace paramgate::kernels {

using cd = std::complex<double>;

enum class Isa { scalar, avx2 };

// Active instruction set (resolved on first use).
Isa active_isa();
std::string isa_name(Isa isa);
bool isa_supported(Isa isa);
// Force a specific ISA; throws std::invalid_argument if unsupported on this CPU.
void force_isa(Isa isa);

// C(m,n) = A(m,k) * B(k,n), or C += A*B when accumulate is set.
void zgemm(int m, int k, int n, const cd* A, const cd* B, cd* C, bool accumulate = false);
void dgemm(int m, int k, int n, const double* A, const double* B, double* C, bool accumulate = false);

// y(m) = A(m,n) * x(n), or y += A*x when accumulate is set.
void zgemv(int m, int n, const cd* A, const cd* x, cd* y, bool accumulate = false);
void dgemv(int m, int n, const double* A, const double* x, double* y, bool accumulate = false);

// y += a*x
void zaxpy(int n, cd a, const cd* x, cd* y);
void daxpy(int n, double a, const double* x, double* y);

// A(m,n) += alpha * x(m) * y(n)^T
void dger(int m, int n, double alpha, const double* x, const double* y, double* A);

double ddot(int n, const double* x, const double* y);

} // namespace paramgate::kernels
