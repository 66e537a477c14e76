#pragma once

#include <cmath>

#include "paramgate/linalg.hpp"

namespace paramgate::gates {

inline CMat rx(double theta) {
    CMat u(2, 2);
    const double c = std::cos(theta / 2), s = std::sin(theta / 2);
    u(0, 0) = c;
    u(0, 1) = cd(0, -s);
    u(1, 0) = cd(0, -s);
    u(1, 1) = c;
    return u;
}

inline CMat ry(double theta) {
    CMat u(2, 2);
    const double c = std::cos(theta / 2), s = std::sin(theta / 2);
    u(0, 0) = c;
    u(0, 1) = -s;
    u(1, 0) = s;
    u(1, 1) = c;
    return u;
}

inline CMat rz(double theta) {
    CMat u(2, 2);
    u(0, 0) = std::exp(cd(0, -theta / 2));
    u(1, 1) = std::exp(cd(0, theta / 2));
    return u;
}

// Axis in the equatorial plane: exp(-i theta/2 (cos(phi) X + sin(phi) Y)).
inline CMat r_axis(double theta, double phi) {
    CMat u(2, 2);
    const double c = std::cos(theta / 2), s = std::sin(theta / 2);
    u(0, 0) = c;
    u(0, 1) = cd(0, -s) * std::exp(cd(0, -phi));
    u(1, 0) = cd(0, -s) * std::exp(cd(0, phi));
    u(1, 1) = c;
    return u;
}

inline CMat hadamard() {
    CMat u(2, 2);
    const double s = 1.0 / std::sqrt(2.0);
    u(0, 0) = s;
    u(0, 1) = s;
    u(1, 0) = s;
    u(1, 1) = -s;
    return u;
}

inline CMat pauli(int k) {  // 0..3 -> I, X, Y, Z
    CMat p(2, 2);
    switch (k) {
        case 0: p(0, 0) = 1; p(1, 1) = 1; break;
        case 1: p(0, 1) = 1; p(1, 0) = 1; break;
        case 2: p(0, 1) = cd(0, -1); p(1, 0) = cd(0, 1); break;
        default: p(0, 0) = 1; p(1, 1) = -1; break;
    }
    return p;
}

inline CMat cz4() {
    CMat u = CMat::identity(4);
    u(3, 3) = -1;
    return u;
}

// Lift a single-qubit unitary to the qutrit simulation space, acting as the
// identity on the leakage level.
inline CMat qutrit_embed(const CMat& u2) {
    CMat u(3, 3);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) u(i, j) = u2(i, j);
    u(2, 2) = 1;
    return u;
}

// Relative phase per excitation level: diag(1, e^{i phi}, e^{2 i phi}).
inline CMat qutrit_level_phase(double phi) {
    CMat u(3, 3);
    u(0, 0) = 1;
    u(1, 1) = std::exp(cd(0, phi));
    u(2, 2) = std::exp(cd(0, 2 * phi));
    return u;
}

}  // namespace paramgate::gates
