#pragma once
// Time-domain simulation of flux-modulated transmon pairs and small registers.
//
// Levels: 3 per transmon. Pair states are ordered fixed (x) tunable, index
// 3*i_F + j_T. Everything here works in angular frequency (rad/us) internally
// and converts from the MHz/ns device layer at the boundary.
//
// The integrator is deterministic: piecewise-constant Hamiltonians at step
// midpoints, step = 1/(64*f_flux), exact sub-propagators (eigensolve for the
// Hamiltonian, one precomputed exponential for the static dissipator, Strang
// composition). During the flat-top the Hamiltonian is periodic in the flux
// period, so per-step propagators are cached by phase and full periods are
// applied by binary powering.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "paramgate/device.hpp"
#include "paramgate/linalg.hpp"
#include "paramgate/parametric.hpp"

namespace paramgate {

// ---------------------------------------------------------------------------
// Drive and noise descriptions

struct ModulationDrive {
    double phi_p = 0.0;        // flux-modulation amplitude (flux quanta)
    double f_flux_mhz = 0.0;   // flux drive frequency; qubit frequency modulates at 2x
    double theta_m = 0.0;      // drive phase (rad)
    double duration_ns = 0.0;  // total pulse length including ramps
    double risetime_ns = 40.0; // cosine-squared amplitude ramps at both ends
    double phi_dc = 0.5;       // static bias

    void validate() const;           // duration >= 2*risetime, phi_p in [0, 0.5), risetime >= 0
    double envelope(double t_us) const;  // 0..1 amplitude envelope
    double flux(double t_us) const;      // instantaneous flux through the SQUID loop
};

// Per-qubit decoherence times, defaulting to the device table, with an
// optional tunable-qubit dephasing override that applies while a drive is on
// (modulation-induced dephasing folded into an effective T2).
struct NoiseChannel {
    std::vector<double> t1_us;       // indexed by device qubit
    std::vector<double> t2_star_us;
    std::optional<double> t2_eff_mod_us;

    static NoiseChannel from_device(const DeviceModel& dev);
};

// ---------------------------------------------------------------------------
// Pair system

struct PairSystem {
    int qf = -1, qt = -1;        // device indices (fixed, tunable)
    double omega_f = 0.0;        // rad/us
    double eta_f = 0.0, eta_t = 0.0;
    double g = 0.0;              // bare exchange coupling, rad/us
    FluxResponse curve;          // tunable-qubit tuning curve (MHz)

    static PairSystem from_device(const DeviceModel& dev, int qa, int qb);
    double omega_t(double phi) const;  // rad/us
};

// Lab-frame pair Hamiltonian at a given flux (rad/us, 9x9, Hermitian).
CMat pair_hamiltonian(const PairSystem& sys, double phi);
// Same, evaluated on a drive at time t (ns). Throws if t is outside
// [0, duration].
CMat hamiltonian_at(const DeviceModel& dev, int qa, int qb, const ModulationDrive& drive,
                    double t_ns);

// Exact level splitting E11 - E10 - E01 + E00 of the static Hamiltonian at the
// bias point (rad/us); the always-on ZZ rate entering idle frames.
double static_zz_rad_per_us(const PairSystem& sys);

// ---------------------------------------------------------------------------
// Closed-system evolution

// Lab-frame propagator over the full pulse. oversample > 1 shrinks the
// integrator step by that factor (refinement checks).
CMat closed_propagator(const PairSystem& sys, const ModulationDrive& drive, int oversample = 1);
// Single-qubit frame removal: diag(exp(+i E_a D)) with bare energies at the
// static bias. Multiplies the lab propagator from the left.
CMat frame_phases(const PairSystem& sys, double duration_us);
// frame_phases(duration) * closed_propagator.
CMat rotating_propagator(const PairSystem& sys, const ModulationDrive& drive);

// Populations after every integrator step, from a pure initial state.
struct PopTrace {
    std::vector<double> t_ns;
    std::vector<double> p11, p02, p20;
    CVec psi_final;  // lab frame
};
PopTrace evolve_populations(const PairSystem& sys, const ModulationDrive& drive, const CVec& psi0);

// ---------------------------------------------------------------------------
// Open-system evolution

// Superoperator of the whole pulse as a quantum channel on the pair
// (81x81, row-major vec convention: vec(rho)[9i+j] = rho_ij), in the rotating
// frame. Without noise this is U (x) conj(U).
CMat pair_channel(const PairSystem& sys, const ModulationDrive& drive,
                  const std::optional<NoiseChannel>& noise);

// Static dissipator superoperator (81x81) for a pair: relaxation through the
// three-level lowering operator (rate 1/T1, doubled on |2>->|1>) plus pure
// dephasing 2*gamma_phi D[diag(0,1,2)] with gamma_phi = 1/T2 - 1/(2 T1).
// Nonpositive times switch the corresponding process off.
CMat pair_dissipator(double t1_f_us, double t2_f_us, double t1_t_us, double t2_t_us);

// ---------------------------------------------------------------------------
// Density states and registers

struct DensityState {
    std::vector<int> dims;  // level count per site (3 per transmon)
    CMat rho;

    int dim() const;
    static DensityState ground(int n_sites, int levels = 3);
    static DensityState from_pure(const std::vector<int>& dims, const CVec& psi);
    double trace_real() const;
    // Throws if trace, Hermiticity, or positivity are violated beyond tol.
    void validate(double tol = 1e-8) const;
};

// Spec'd entry point: evolve a 9x9 pair state through one drive, in the
// rotating frame. Closed-system when noise is absent.
DensityState evolve(const DeviceModel& dev, int qa, int qb, const ModulationDrive& drive,
                    const std::optional<NoiseChannel>& noise, const DensityState& rho0);

// Apply vec-convention channel S to rho on sites (site_a, site_b) of a
// register; S acts on the pair space ordered site_a (x) site_b.
void apply_pair_channel(DensityState& st, int site_a, int site_b, const CMat& S);
void apply_site_unitary(DensityState& st, int site, const CMat& u3);
void apply_site_depolarizing(DensityState& st, int site, double p);  // qubit-subspace Paulis
// Conditional phase exp(i*phi*n_a*n_b) with n = diag(0,1,2).
void apply_level_conditional_phase(DensityState& st, int site_a, int site_b, double phi);

// Statevector counterparts for the pure-state path.
void apply_pair_unitary_pure(CVec& psi, const std::vector<int>& dims, int site_a, int site_b,
                             const CMat& u9);
void apply_site_unitary_pure(CVec& psi, const std::vector<int>& dims, int site, const CMat& u3);
void apply_level_conditional_phase_pure(CVec& psi, const std::vector<int>& dims, int site_a,
                                        int site_b, double phi);

// ---------------------------------------------------------------------------
// Scans and calibration

struct ChevronPoint {
    double f_flux_mhz = 0.0;
    double duration_ns = 0.0;
    double p11 = 0.0, p02 = 0.0;
};
// |11> survival map over (flux frequency, duration). Defaults to square pulses
// so the map shows the bare exchange ridge; with a nonzero risetime the ramps
// sweep the average tunable frequency across part of the scan window and the
// columns pick up turn-on transfer (risetime is capped at duration/2).
std::vector<ChevronPoint> chevron_scan(const DeviceModel& dev, int qa, int qb,
                                       const std::vector<double>& f_flux_mhz,
                                       const std::vector<double>& duration_ns, double phi_p,
                                       double risetime_ns = 0.0, double theta_m = 0.0);

struct RamseyFit {
    double phase = 0.0;      // fringe phase: P1(phi) = offset + amplitude*cos(phi - phase)
    double amplitude = 0.0;
    double offset = 0.0;
    double r2 = 0.0;
};
// Tunable-qubit Ramsey through a drive with the fixed qubit prepared in
// control_state; closed-system. If swap_roles, the fixed qubit is interrogated
// with the tunable prepared in control_state. Throws on fit failure (R^2<0.9).
RamseyFit ramsey_phase(const PairSystem& sys, const ModulationDrive& drive, int control_state,
                       bool swap_roles = false, int n_phases = 24);

struct CalibratedGate {
    int qf = -1, qt = -1;
    std::string kind;  // "cz02" or "cz20"
    int harmonic = 1;
    ModulationDrive drive;
    double rz_correction = 0.0;        // tunable qubit, rad
    double rz_correction_fixed = 0.0;  // fixed qubit, rad
    double achieved_unitary_fidelity = 0.0;  // closed-system, vs diag(1,1,1,-1)
    double residual_leakage = 0.0;           // max computational-subspace loss
    double g_eff_mhz = 0.0;                  // measured from the exchange period
    uint64_t device_hash = 0;

    std::string to_json() const;
    static CalibratedGate from_json(const std::string& text);
};

struct CalibrateOptions {
    double risetime_ns = 40.0;
    double theta_m = 0.0;
    int coarse_points = 21;
    int fine_points = 11;
    // When set, the flat-top length is pinned to half an exchange period of
    // this effective coupling (MHz) instead of being measured, mirroring the
    // lab practice of programming the gate length from a known coupling. The
    // turn-on phase and drive frequency are still polished at that length.
    std::optional<double> forced_g_eff_mhz;
};
CalibratedGate calibrate_cz(const DeviceModel& dev, int qa, int qb, double phi_p,
                            GateKind kind = GateKind::cz02, int harmonic = 1,
                            const CalibrateOptions& opts = {});

// Corrected computational-subspace unitary (4x4, rows/cols {00,01,10,11}) of a
// calibrated gate; 9x9 corrected propagator; and the gate as a channel with
// corrections folded in (optionally open-system).
CMat calibrated_unitary4(const DeviceModel& dev, const CalibratedGate& gate);
CMat calibrated_propagator9(const DeviceModel& dev, const CalibratedGate& gate);
CMat calibrated_channel(const DeviceModel& dev, const CalibratedGate& gate,
                        const std::optional<NoiseChannel>& noise);

// ---------------------------------------------------------------------------
// Term-selective interaction-frame model (error-budget probes)

// H(t) = sum_k g_k [ exp(i(delta_k t + phase_k)) |bra_k><ket_k| + h.c. ] on
// the 9-dim pair space; g, delta in rad/us.
struct SidebandTerm {
    int bra = 0, ket = 0;
    double g = 0.0;
    double delta = 0.0;
    double phase = 0.0;
};
CMat sideband_frame_propagator(const std::vector<SidebandTerm>& terms, double duration_us,
                               double dt_us);

}  // namespace paramgate
