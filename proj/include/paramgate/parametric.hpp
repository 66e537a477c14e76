#pragma once
// Closed-form theory of parametric sideband gates: Bessel-weighted effective
// couplings, transition gaps, resonance solving and gate-time prediction.
//
// A tunable transmon biased at half flux and flux-driven at f_flux has its
// transition frequency modulated at f_mod = 2*f_flux (the tuning curve is
// symmetric about the bias). Writing the modulated frequency as
// omega_bar + eps*cos(2*pi*f_mod*t + theta_m), the exchange coupling to a
// fixed neighbor splits into sidebands g_n = g * J_n(eps/f_mod) at harmonics
// n*f_mod; a sideband activates a transition when n*f_mod matches its gap.

#include <string>
#include <vector>

#include "paramgate/device.hpp"

namespace paramgate {

enum class GateKind { iswap, cz02, cz20 };

std::string to_string(GateKind k);
GateKind gate_kind_from_string(const std::string& s);

// Bessel function of the first kind, integer order, any sign of n and x.
double bessel_j(int n, double x);

struct SidebandCoupling {
    int harmonic = 0;
    double g_eff_mhz = 0.0; // full transition matrix element (sqrt(2) included for cz kinds)
    double beta_rad = 0.0;  // sideband phase
};

// |11> <-> target transition gap (MHz, absolute value) given the average
// tunable frequency under modulation. Anharmonicities are magnitudes.
double transition_gap_mhz(GateKind kind, double omega_bar_t_mhz, double omega_f_mhz,
                          double eta_t_mhz, double eta_f_mhz);

SidebandCoupling sideband_coupling(GateKind kind, double g_bare_mhz, double eps_mhz,
                                   double f_mod_mhz, int harmonic, double theta_m_rad,
                                   double omega_bar_mhz);

struct GatePrediction {
    GateKind kind = GateKind::cz02;
    int harmonic = 1;
    int fixed_qubit = -1, tunable_qubit = -1;
    double phi_p = 0.0;
    double f_flux_mhz = 0.0;   // flux drive frequency solving the resonance
    double f_mod_mhz = 0.0;    // qubit-frequency modulation = 2*f_flux
    double eps_mhz = 0.0;      // modulation amplitude (fundamental)
    double omega_bar_mhz = 0.0;
    double delta_mhz = 0.0;    // omega_bar - omega_fixed (signed)
    double gap_mhz = 0.0;
    double g_eff_mhz = 0.0;    // full transition matrix element
    double beta_rad = 0.0;
    double tau_flat_ns = 0.0;  // full population-exchange period 1/(2 g_eff)
    double tau_total_ns = 0.0; // tau_flat + 2*risetime
    double risetime_ns = 0.0;
};

// Solve the self-consistent resonance condition 2*n*f_flux = gap(phi_p) by
// bisection (bracket +-500 MHz around the closed-form estimate, 1 kHz
// tolerance) and assemble the prediction. Exactly one endpoint of the edge
// must be flux-tunable.
GatePrediction predict_gate(const DeviceModel& dev, int qa, int qb, GateKind kind, double phi_p,
                            int harmonic, double theta_m_rad = 0.0, double risetime_ns = 40.0);

struct CurvePoint {
    double phi_p = 0.0;
    GateKind kind = GateKind::cz02;
    int harmonic = 1;
    double f_flux_mhz = 0.0;
    double g_eff_mhz = 0.0;
    double tau_total_ns = 0.0;
};

// Resonance frequency / coupling / duration across a modulation-amplitude
// grid for each requested (kind, harmonic) combination.
std::vector<CurvePoint> resonance_curves(const DeviceModel& dev, int qa, int qb,
                                         const std::vector<double>& phi_grid,
                                         const std::vector<GateKind>& kinds,
                                         const std::vector<int>& harmonics,
                                         double risetime_ns = 40.0);

} // namespace paramgate
