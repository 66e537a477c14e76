#include "paramgate/parametric.hpp"

#include <cmath>
#include <stdexcept>

namespace paramgate {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("parametric: " + msg); }

double wrap_pi(double a) {
    a = std::fmod(a + M_PI, 2.0 * M_PI);
    if (a < 0.0) a += 2.0 * M_PI;
    return a - M_PI;
}

} // namespace

std::string to_string(GateKind k) {
    switch (k) {
        case GateKind::iswap: return "iswap";
        case GateKind::cz02: return "cz02";
        case GateKind::cz20: return "cz20";
    }
    return "?";
}

GateKind gate_kind_from_string(const std::string& s) {
    if (s == "iswap") return GateKind::iswap;
    if (s == "cz02") return GateKind::cz02;
    if (s == "cz20") return GateKind::cz20;
    fail("unknown gate kind '" + s + "' (expected iswap, cz02 or cz20)");
}

double bessel_j(int n, double x) {
    const int an = n < 0 ? -n : n;
    const double ax = x < 0.0 ? -x : x;
    double j = std::cyl_bessel_j(double(an), ax);
    if ((an & 1) && n < 0) j = -j;
    if ((an & 1) && x < 0.0) j = -j;
    return j;
}

double transition_gap_mhz(GateKind kind, double omega_bar_t, double omega_f, double eta_t,
                          double eta_f) {
    const double delta = omega_bar_t - omega_f;
    switch (kind) {
        case GateKind::iswap: return std::abs(delta);          // |10> <-> |01>
        case GateKind::cz02: return std::abs(delta - eta_t);   // |11> <-> |02>
        case GateKind::cz20: return std::abs(delta + eta_f);   // |11> <-> |20>
    }
    return 0.0;
}

SidebandCoupling sideband_coupling(GateKind kind, double g_bare, double eps, double f_mod,
                                   int harmonic, double theta_m, double omega_bar) {
    if (!(f_mod > 0.0)) fail("sideband_coupling: modulation frequency must be positive");
    SidebandCoupling out;
    out.harmonic = harmonic;
    const double matrix_factor = (kind == GateKind::iswap) ? 1.0 : std::sqrt(2.0);
    out.g_eff_mhz = matrix_factor * g_bare * std::abs(bessel_j(harmonic, eps / f_mod));
    out.beta_rad = wrap_pi(double(harmonic) * (theta_m + M_PI) + (omega_bar / f_mod) * std::sin(theta_m));
    return out;
}

GatePrediction predict_gate(const DeviceModel& dev, int qa, int qb, GateKind kind, double phi_p,
                            int harmonic, double theta_m, double risetime_ns) {
    const QubitParams& a = dev.qubit(qa);
    const QubitParams& b = dev.qubit(qb);
    if (a.tunable == b.tunable)
        fail("pair " + std::to_string(qa) + "-" + std::to_string(qb) +
             ": exactly one qubit must be flux-tunable");
    const QubitParams& qf = a.tunable ? b : a;
    const QubitParams& qt = a.tunable ? a : b;
    const CouplingEdge* edge = dev.edge_between(qa, qb);
    if (!edge)
        fail("no coupling edge between qubits " + std::to_string(qa) + " and " + std::to_string(qb));
    if (harmonic < 1 || harmonic > 4) fail("harmonic must lie in 1..4");
    if (!(phi_p > 0.0 && phi_p <= 0.5)) fail("phi_p must lie in (0, 0.5]");

    GatePrediction p;
    p.kind = kind;
    p.harmonic = harmonic;
    p.fixed_qubit = qf.index;
    p.tunable_qubit = qt.index;
    p.phi_p = phi_p;
    p.risetime_ns = risetime_ns;

    const ModulationAverages mod = dev.modulation_averages(qt.index, phi_p);
    p.omega_bar_mhz = mod.mean_mhz;
    p.eps_mhz = mod.eps_mhz;
    p.delta_mhz = p.omega_bar_mhz - qf.f01_max_mhz;
    p.gap_mhz = transition_gap_mhz(kind, p.omega_bar_mhz, qf.f01_max_mhz, qt.eta_mhz, qf.eta_mhz);

    // Resonance: 2*n*f_flux = gap(phi_p, f_flux). The average frequency is
    // computed under the same modulation settings each probe, so the solve
    // stays valid if the waveform model gains frequency dependence.
    auto residual = [&](double f_flux) {
        const double wbar = dev.avg_freq_mhz(qt.index, phi_p, f_flux);
        const double gap = transition_gap_mhz(kind, wbar, qf.f01_max_mhz, qt.eta_mhz, qf.eta_mhz);
        return 2.0 * double(harmonic) * f_flux - gap;
    };
    const double guess = p.gap_mhz / (2.0 * double(harmonic));
    double lo = std::max(guess - 500.0, 1e-3), hi = guess + 500.0;
    double rlo = residual(lo), rhi = residual(hi);
    if (!(rlo <= 0.0 && rhi >= 0.0))
        fail("no sideband resonance for " + to_string(kind) + " n=" + std::to_string(harmonic) +
             " within +-500 MHz of " + std::to_string(guess) + " MHz");
    while (hi - lo > 1e-3) { // 1 kHz
        const double mid = 0.5 * (lo + hi);
        if (residual(mid) <= 0.0) lo = mid;
        else hi = mid;
    }
    p.f_flux_mhz = 0.5 * (lo + hi);
    p.f_mod_mhz = 2.0 * p.f_flux_mhz;

    const SidebandCoupling sc = sideband_coupling(kind, edge->g_mhz, p.eps_mhz, p.f_mod_mhz,
                                                  harmonic, theta_m, p.omega_bar_mhz);
    p.g_eff_mhz = sc.g_eff_mhz;
    p.beta_rad = sc.beta_rad;
    if (!(p.g_eff_mhz > 1e-6))
        fail("effective coupling vanishes for " + to_string(kind) + " n=" +
             std::to_string(harmonic) + " at phi_p=" + std::to_string(phi_p));
    p.tau_flat_ns = 1000.0 / (2.0 * p.g_eff_mhz); // 1/(2 g_eff), g in MHz -> us
    p.tau_total_ns = p.tau_flat_ns + 2.0 * risetime_ns;
    return p;
}

std::vector<CurvePoint> resonance_curves(const DeviceModel& dev, int qa, int qb,
                                         const std::vector<double>& phi_grid,
                                         const std::vector<GateKind>& kinds,
                                         const std::vector<int>& harmonics, double risetime_ns) {
    std::vector<CurvePoint> out;
    for (double phi : phi_grid)
        for (GateKind kind : kinds)
            for (int n : harmonics) {
                GatePrediction p = predict_gate(dev, qa, qb, kind, phi, n, 0.0, risetime_ns);
                out.push_back({phi, kind, n, p.f_flux_mhz, p.g_eff_mhz, p.tau_total_ns});
            }
    return out;
}

} // namespace paramgate
