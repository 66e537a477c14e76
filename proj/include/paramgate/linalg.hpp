#pragma once
// Small dense matrix layer used throughout the simulator. Element-wise loops
// and multiplies route through the dispatched kernels; factorizations
// (Hermitian eigensolve, LU inside the matrix exponential, SVD) are delegated
// to Eigen.

#include <complex>
#include <vector>

#include "paramgate/kernels.hpp"

namespace paramgate {

using cd = std::complex<double>;

struct RMat;

struct CMat {
    int rows = 0, cols = 0;
    std::vector<cd> a; // row-major

    CMat() = default;
    CMat(int r, int c) : rows(r), cols(c), a(size_t(r) * c, cd(0.0, 0.0)) {}

    cd& operator()(int i, int j) { return a[size_t(i) * cols + j]; }
    const cd& operator()(int i, int j) const { return a[size_t(i) * cols + j]; }
    cd* data() { return a.data(); }
    const cd* data() const { return a.data(); }

    static CMat identity(int n);
    static CMat diag(const std::vector<cd>& d);

    CMat& operator+=(const CMat& o);
    CMat& operator-=(const CMat& o);
    CMat& operator*=(cd s);
};

struct RMat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    RMat() = default;
    RMat(int r, int c) : rows(r), cols(c), a(size_t(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[size_t(i) * cols + j]; }
    const double& operator()(int i, int j) const { return a[size_t(i) * cols + j]; }
    double* data() { return a.data(); }
    const double* data() const { return a.data(); }

    static RMat identity(int n);

    RMat& operator+=(const RMat& o);
    RMat& operator-=(const RMat& o);
    RMat& operator*=(double s);
};

using CVec = std::vector<cd>;
using RVec = std::vector<double>;

// Products (kernel-backed).
CMat matmul(const CMat& A, const CMat& B);
RMat matmul(const RMat& A, const RMat& B);
CVec matvec(const CMat& A, const CVec& x);
RVec matvec(const RMat& A, const RVec& x);

CMat operator*(const CMat& A, const CMat& B);
RMat operator*(const RMat& A, const RMat& B);
CMat operator+(CMat A, const CMat& B);
CMat operator-(CMat A, const CMat& B);
RMat operator+(RMat A, const RMat& B);
RMat operator-(RMat A, const RMat& B);
CMat operator*(cd s, CMat A);
RMat operator*(double s, RMat A);

CMat dagger(const CMat& A);
RMat transpose(const RMat& A);
cd trace(const CMat& A);
double trace(const RMat& A);
CMat kron(const CMat& A, const CMat& B);
RMat kron(const RMat& A, const RMat& B);

double norm_fro(const CMat& A);
double norm_fro(const RMat& A);
double norm_inf(const CMat& A); // max row sum of |a_ij|
double max_abs_diff(const CMat& A, const CMat& B);
double max_abs_diff(const RMat& A, const RMat& B);

// Hermitian eigensolve: ascending eigenvalues, unitary V with A = V diag(w) V^dag.
struct HermEig {
    RVec w;
    CMat V;
};
HermEig herm_eig(const CMat& A);

// General matrix exponential, scaling-and-squaring with Pade(13).
CMat expm(const CMat& A);
// Hermitian propagator exp(-i*H*t) through the eigensolve.
CMat expm_i_herm(const CMat& H, double t);

// Unitary polar factor of A (A = U*P, P >= 0), via SVD.
CMat polar_unitary(const CMat& A);

// Euclidean projection of a Hermitian matrix onto {X >= 0, tr X = target}:
// eigenvalues are projected onto the simplex of size `target`.
CMat project_psd_trace(const CMat& A, double target = 1.0);
// Hermitian part (A + A^dag)/2.
CMat herm_part(const CMat& A);
// Smallest eigenvalue of a Hermitian matrix.
double min_eigenvalue(const CMat& A);

// Solve A X = B for X (square A), partial-pivot LU.
CMat lu_solve(const CMat& A, const CMat& B);

} // namespace paramgate
