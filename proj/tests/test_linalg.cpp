#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "paramgate/linalg.hpp"
#include "paramgate/rng.hpp"

using namespace paramgate;

namespace {

CMat random_cmat(Rng& rng, int n) {
    CMat A(n, n);
    for (auto& v : A.a) v = cd(rng.normal(), rng.normal());
    return A;
}

CMat random_herm(Rng& rng, int n) {
    return herm_part(random_cmat(rng, n));
}

} // namespace

TEST_CASE("expm of a diagonal matrix is elementwise exp") {
    CMat D = CMat::diag({cd(0.3, -1.1), cd(-2.0, 0.7), cd(0.0, 3.0)});
    CMat E = expm(D);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const cd want = (i == j) ? std::exp(D(i, i)) : cd(0, 0);
            CHECK(std::abs(E(i, j) - want) < 1e-13);
        }
}

TEST_CASE("expm of a nilpotent matrix truncates exactly") {
    CMat N(2, 2);
    N(0, 1) = 3.5;
    CMat E = expm(N);
    CHECK(std::abs(E(0, 0) - cd(1, 0)) < 1e-14);
    CHECK(std::abs(E(0, 1) - cd(3.5, 0)) < 1e-13);
    CHECK(std::abs(E(1, 0)) < 1e-14);
    CHECK(std::abs(E(1, 1) - cd(1, 0)) < 1e-14);
}

TEST_CASE("expm matches the closed form for a Pauli-x rotation") {
    // exp(-i theta X) = cos(theta) I - i sin(theta) X
    const double theta = 1.3;
    CMat A(2, 2);
    A(0, 1) = cd(0, -theta);
    A(1, 0) = cd(0, -theta);
    CMat E = expm(A);
    CHECK(std::abs(E(0, 0) - std::cos(theta)) < 1e-13);
    CHECK(std::abs(E(0, 1) - cd(0, -std::sin(theta))) < 1e-13);
    // large argument exercises the scaling branch
    const double big = 37.0;
    CMat B(2, 2);
    B(0, 1) = cd(0, -big);
    B(1, 0) = cd(0, -big);
    CMat EB = expm(B);
    CHECK(std::abs(EB(0, 0) - std::cos(big)) < 1e-11);
    CHECK(std::abs(EB(1, 0) - cd(0, -std::sin(big))) < 1e-11);
}

TEST_CASE("expm inverse property and Hermitian fast path") {
    Rng rng(42);
    CMat A = random_cmat(rng, 9);
    CMat Am = cd(-1.0, 0.0) * A;
    CMat P = expm(A) * expm(Am);
    CHECK(max_abs_diff(P, CMat::identity(9)) < 1e-10);

    CMat H = random_herm(rng, 9);
    const double t = 0.37;
    // expm_i_herm(H, t) = exp(-i H t) via eigensolve must match the Pade route
    CMat viaEig = expm_i_herm(H, t);
    CMat mIHt(9, 9);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) mIHt(i, j) = cd(0, -t) * H(i, j);
    CMat viaPade = expm(mIHt);
    CHECK(max_abs_diff(viaEig, viaPade) < 1e-11);
    // and be unitary
    CHECK(max_abs_diff(viaEig * dagger(viaEig), CMat::identity(9)) < 1e-12);
}

TEST_CASE("herm_eig reconstructs and orthonormalizes") {
    Rng rng(7);
    CMat H = random_herm(rng, 12);
    HermEig e = herm_eig(H);
    CMat R(12, 12);
    for (int k = 0; k < 12; ++k)
        for (int i = 0; i < 12; ++i)
            for (int j = 0; j < 12; ++j) R(i, j) += e.w[size_t(k)] * e.V(i, k) * std::conj(e.V(j, k));
    CHECK(max_abs_diff(R, H) < 1e-12);
    CHECK(max_abs_diff(dagger(e.V) * e.V, CMat::identity(12)) < 1e-12);
    for (int k = 1; k < 12; ++k) CHECK(e.w[size_t(k)] >= e.w[size_t(k - 1)]);
}

TEST_CASE("lu_solve recovers a known solution") {
    Rng rng(11);
    CMat A = random_cmat(rng, 10);
    for (int i = 0; i < 10; ++i) A(i, i) += 5.0; // keep it well-conditioned
    CMat X = random_cmat(rng, 10);
    CMat B = A * X;
    CHECK(max_abs_diff(lu_solve(A, B), X) < 1e-10);
}

TEST_CASE("polar_unitary strips a positive factor") {
    Rng rng(3);
    // build A = U * P with known unitary U and a positive-definite P
    CMat H = random_herm(rng, 6);
    CMat U = expm_i_herm(H, 1.0);
    CMat P(6, 6);
    CMat G = random_cmat(rng, 6);
    P = dagger(G) * G;
    for (int i = 0; i < 6; ++i) P(i, i) += 2.0;
    CMat A = U * P;
    CHECK(max_abs_diff(polar_unitary(A), U) < 1e-10);
}

TEST_CASE("project_psd_trace does eigenvalue simplex projection") {
    CMat D = CMat::diag({cd(0.9, 0), cd(0.4, 0), cd(-0.3, 0)});
    CMat P = project_psd_trace(D, 1.0);
    // simplex projection of (0.9, 0.4, -0.3) onto sum = 1 is (0.75, 0.25, 0)
    CHECK(std::abs(P(0, 0) - cd(0.75, 0)) < 1e-12);
    CHECK(std::abs(P(1, 1) - cd(0.25, 0)) < 1e-12);
    CHECK(std::abs(P(2, 2)) < 1e-12);
    CHECK(std::abs(trace(P) - cd(1, 0)) < 1e-12);

    // idempotence and feasibility on random input
    Rng rng(19);
    CMat H = random_herm(rng, 8);
    CMat Q = project_psd_trace(H, 1.0);
    CHECK(std::abs(trace(Q) - cd(1, 0)) < 1e-10);
    CHECK(min_eigenvalue(Q) > -1e-12);
    CHECK(max_abs_diff(project_psd_trace(Q, 1.0), Q) < 1e-10);
    // a matrix already in the set is untouched
    CMat S = project_psd_trace(random_herm(rng, 5), 1.0);
    CHECK(max_abs_diff(project_psd_trace(S, 1.0), S) < 1e-10);
}

TEST_CASE("kron layout") {
    CMat X(2, 2);
    X(0, 1) = 1.0;
    X(1, 0) = 1.0;
    CMat I = CMat::identity(2);
    CMat K = kron(X, I);
    // (X (x) I) |00> = |10>: column 0 has a 1 in row 2
    CHECK(std::abs(K(2, 0) - cd(1, 0)) < 1e-15);
    CHECK(std::abs(K(0, 0)) < 1e-15);
    CHECK(std::abs(K(3, 1) - cd(1, 0)) < 1e-15);
    RMat a(1, 2);
    a(0, 0) = 2.0;
    a(0, 1) = 3.0;
    RMat b = RMat::identity(2);
    RMat kr = kron(a, b);
    CHECK(kr.rows == 2);
    CHECK(kr.cols == 4);
    CHECK(kr(0, 0) == 2.0);
    CHECK(kr(1, 3) == 3.0);
}
