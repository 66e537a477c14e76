#include "paramgate/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace paramgate {

namespace {

using EigenCMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<EigenCMat>;
using MapCConst = Eigen::Map<const EigenCMat>;

void check_same(int ar, int ac, int br, int bc, const char* what) {
    if (ar != br || ac != bc) throw std::invalid_argument(std::string("linalg: shape mismatch in ") + what);
}

} // namespace

CMat CMat::identity(int n) {
    CMat I(n, n);
    for (int i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

CMat CMat::diag(const std::vector<cd>& d) {
    CMat D(int(d.size()), int(d.size()));
    for (size_t i = 0; i < d.size(); ++i) D(int(i), int(i)) = d[i];
    return D;
}

RMat RMat::identity(int n) {
    RMat I(n, n);
    for (int i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

CMat& CMat::operator+=(const CMat& o) {
    check_same(rows, cols, o.rows, o.cols, "+=");
    kernels::zaxpy(int(a.size()), cd(1.0, 0.0), o.data(), data());
    return *this;
}
CMat& CMat::operator-=(const CMat& o) {
    check_same(rows, cols, o.rows, o.cols, "-=");
    kernels::zaxpy(int(a.size()), cd(-1.0, 0.0), o.data(), data());
    return *this;
}
CMat& CMat::operator*=(cd s) {
    for (auto& v : a) v *= s;
    return *this;
}
RMat& RMat::operator+=(const RMat& o) {
    check_same(rows, cols, o.rows, o.cols, "+=");
    kernels::daxpy(int(a.size()), 1.0, o.data(), data());
    return *this;
}
RMat& RMat::operator-=(const RMat& o) {
    check_same(rows, cols, o.rows, o.cols, "-=");
    kernels::daxpy(int(a.size()), -1.0, o.data(), data());
    return *this;
}
RMat& RMat::operator*=(double s) {
    for (auto& v : a) v *= s;
    return *this;
}

CMat matmul(const CMat& A, const CMat& B) {
    if (A.cols != B.rows) throw std::invalid_argument("linalg: inner dimension mismatch in matmul");
    CMat C(A.rows, B.cols);
    kernels::zgemm(A.rows, A.cols, B.cols, A.data(), B.data(), C.data());
    return C;
}

RMat matmul(const RMat& A, const RMat& B) {
    if (A.cols != B.rows) throw std::invalid_argument("linalg: inner dimension mismatch in matmul");
    RMat C(A.rows, B.cols);
    kernels::dgemm(A.rows, A.cols, B.cols, A.data(), B.data(), C.data());
    return C;
}

CVec matvec(const CMat& A, const CVec& x) {
    if (A.cols != int(x.size())) throw std::invalid_argument("linalg: dimension mismatch in matvec");
    CVec y(A.rows);
    kernels::zgemv(A.rows, A.cols, A.data(), x.data(), y.data());
    return y;
}

RVec matvec(const RMat& A, const RVec& x) {
    if (A.cols != int(x.size())) throw std::invalid_argument("linalg: dimension mismatch in matvec");
    RVec y(A.rows);
    kernels::dgemv(A.rows, A.cols, A.data(), x.data(), y.data());
    return y;
}

CMat operator*(const CMat& A, const CMat& B) { return matmul(A, B); }
RMat operator*(const RMat& A, const RMat& B) { return matmul(A, B); }
CMat operator+(CMat A, const CMat& B) { A += B; return A; }
CMat operator-(CMat A, const CMat& B) { A -= B; return A; }
RMat operator+(RMat A, const RMat& B) { A += B; return A; }
RMat operator-(RMat A, const RMat& B) { A -= B; return A; }
CMat operator*(cd s, CMat A) { A *= s; return A; }
RMat operator*(double s, RMat A) { A *= s; return A; }

CMat dagger(const CMat& A) {
    CMat B(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) B(j, i) = std::conj(A(i, j));
    return B;
}

RMat transpose(const RMat& A) {
    RMat B(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) B(j, i) = A(i, j);
    return B;
}

cd trace(const CMat& A) {
    cd t(0.0, 0.0);
    for (int i = 0; i < std::min(A.rows, A.cols); ++i) t += A(i, i);
    return t;
}

double trace(const RMat& A) {
    double t = 0.0;
    for (int i = 0; i < std::min(A.rows, A.cols); ++i) t += A(i, i);
    return t;
}

CMat kron(const CMat& A, const CMat& B) {
    CMat C(A.rows * B.rows, A.cols * B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) {
            const cd a = A(i, j);
            if (a == cd(0.0, 0.0)) continue;
            for (int p = 0; p < B.rows; ++p)
                for (int q = 0; q < B.cols; ++q)
                    C(i * B.rows + p, j * B.cols + q) = a * B(p, q);
        }
    return C;
}

RMat kron(const RMat& A, const RMat& B) {
    RMat C(A.rows * B.rows, A.cols * B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) {
            const double a = A(i, j);
            if (a == 0.0) continue;
            for (int p = 0; p < B.rows; ++p)
                for (int q = 0; q < B.cols; ++q)
                    C(i * B.rows + p, j * B.cols + q) = a * B(p, q);
        }
    return C;
}

double norm_fro(const CMat& A) {
    double s = 0.0;
    for (const auto& v : A.a) s += std::norm(v);
    return std::sqrt(s);
}

double norm_fro(const RMat& A) {
    double s = 0.0;
    for (double v : A.a) s += v * v;
    return std::sqrt(s);
}

double norm_inf(const CMat& A) {
    double best = 0.0;
    for (int i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) s += std::abs(A(i, j));
        best = std::max(best, s);
    }
    return best;
}

double max_abs_diff(const CMat& A, const CMat& B) {
    check_same(A.rows, A.cols, B.rows, B.cols, "max_abs_diff");
    double best = 0.0;
    for (size_t i = 0; i < A.a.size(); ++i) best = std::max(best, std::abs(A.a[i] - B.a[i]));
    return best;
}

double max_abs_diff(const RMat& A, const RMat& B) {
    check_same(A.rows, A.cols, B.rows, B.cols, "max_abs_diff");
    double best = 0.0;
    for (size_t i = 0; i < A.a.size(); ++i) best = std::max(best, std::abs(A.a[i] - B.a[i]));
    return best;
}

HermEig herm_eig(const CMat& A) {
    if (A.rows != A.cols) throw std::invalid_argument("linalg: herm_eig needs a square matrix");
    MapCConst M(A.data(), A.rows, A.cols);
    Eigen::SelfAdjointEigenSolver<EigenCMat> es(M);
    if (es.info() != Eigen::Success) throw std::runtime_error("linalg: Hermitian eigensolve failed");
    HermEig out;
    out.w.assign(es.eigenvalues().data(), es.eigenvalues().data() + A.rows);
    out.V = CMat(A.rows, A.cols);
    MapC(out.V.data(), A.rows, A.cols) = es.eigenvectors();
    return out;
}

CMat lu_solve(const CMat& A, const CMat& B) {
    if (A.rows != A.cols || A.rows != B.rows)
        throw std::invalid_argument("linalg: bad shapes in lu_solve");
    MapCConst MA(A.data(), A.rows, A.cols);
    MapCConst MB(B.data(), B.rows, B.cols);
    CMat X(B.rows, B.cols);
    MapC(X.data(), B.rows, B.cols) = MA.partialPivLu().solve(MB);
    return X;
}

CMat expm(const CMat& A) {
    if (A.rows != A.cols) throw std::invalid_argument("linalg: expm needs a square matrix");
    const int n = A.rows;
    // Pade(13) scaling and squaring (Higham 2005).
    static const double b[14] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};
    const double theta13 = 5.371920351148152;

    double nrm = norm_inf(A);
    int s = 0;
    CMat As = A;
    if (nrm > theta13) {
        s = int(std::ceil(std::log2(nrm / theta13)));
        As *= cd(std::ldexp(1.0, -s), 0.0);
    }

    CMat I = CMat::identity(n);
    CMat A2 = As * As;
    CMat A4 = A2 * A2;
    CMat A6 = A2 * A4;

    CMat W1 = b[13] * A6 + b[11] * A4 + b[9] * A2;
    CMat W2 = b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I;
    CMat U = As * (A6 * W1 + W2);
    CMat Z1 = b[12] * A6 + b[10] * A4 + b[8] * A2;
    CMat V = A6 * Z1 + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;

    CMat R = lu_solve(V - U, V + U);
    for (int i = 0; i < s; ++i) R = R * R;
    return R;
}

CMat expm_i_herm(const CMat& H, double t) {
    HermEig eig = herm_eig(H);
    const int n = H.rows;
    // V * diag(exp(-i w t)) * V^dag
    CMat scaled = eig.V;
    for (int j = 0; j < n; ++j) {
        const cd ph = std::exp(cd(0.0, -eig.w[j] * t));
        for (int i = 0; i < n; ++i) scaled(i, j) *= ph;
    }
    return scaled * dagger(eig.V);
}

CMat polar_unitary(const CMat& A) {
    MapCConst M(A.data(), A.rows, A.cols);
    Eigen::JacobiSVD<EigenCMat> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    CMat U(A.rows, A.cols);
    MapC(U.data(), A.rows, A.cols) = svd.matrixU() * svd.matrixV().adjoint();
    return U;
}

CMat herm_part(const CMat& A) {
    CMat H(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) H(i, j) = 0.5 * (A(i, j) + std::conj(A(j, i)));
    return H;
}

double min_eigenvalue(const CMat& A) {
    return herm_eig(A).w.front();
}

CMat project_psd_trace(const CMat& A, double target) {
    HermEig eig = herm_eig(herm_part(A));
    const int n = A.rows;
    // Project eigenvalues onto the simplex {x_i >= 0, sum x_i = target}.
    RVec u = eig.w;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, tau = 0.0;
    int rho = 0;
    for (int j = 0; j < n; ++j) {
        css += u[j];
        const double cand = (css - target) / double(j + 1);
        if (u[j] - cand > 0.0) {
            rho = j + 1;
            tau = cand;
        }
    }
    (void)rho;
    CMat out(n, n);
    for (int k = 0; k < n; ++k) {
        const double lam = std::max(eig.w[k] - tau, 0.0);
        if (lam == 0.0) continue;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out(i, j) += lam * eig.V(i, k) * std::conj(eig.V(j, k));
    }
    return out;
}

} // namespace paramgate
