#pragma once
// Device description: per-qubit parameters, flux tuning curves, exchange
// couplings and dispersive shifts, plus the config-file loader.
//
// Unit conventions: config files and this API carry linear frequencies in MHz
// (readout/transition frequencies, couplings) or kHz (dispersive shifts) and
// times in us/ns as named. Angular frequencies (rad/us) appear only inside the
// time-domain simulator, which converts at its boundary.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace paramgate {

// Transition frequency vs flux (flux in units of the flux quantum) for an
// asymmetric-junction tunable transmon:
//   f01(phi) = (f01_max + eta) * [d^2 + (1-d^2) cos^2(pi phi)]^(1/4) - eta
// with the junction asymmetry d fixed by the observed f01_min at half flux.
struct FluxResponse {
    double f01_max_mhz = 0.0;
    double f01_min_mhz = 0.0;
    double eta_mhz = 0.0; // anharmonicity magnitude
    double d = 0.0;       // junction asymmetry, derived

    static FluxResponse from_extremes(double f01_max_mhz, double f01_min_mhz, double eta_mhz);
    double freq_mhz(double phi) const;
};

struct QubitParams {
    int index = -1;
    bool tunable = false;
    double readout_freq_mhz = 0.0;
    double f01_max_mhz = 0.0;
    double f01_min_mhz = 0.0; // tunable qubits only
    double eta_mhz = 0.0;     // anharmonicity magnitude; f12 = f01 - eta
    double t1_us = 0.0;
    double t2_star_us = 0.0;
    double readout_fidelity = 1.0;    // mean of p(0|0) and p(1|1)
    double single_qubit_error = 0.0;  // depolarizing strength per gate

    double f01_mhz(double phi) const; // fixed qubits ignore phi
    FluxResponse flux_response() const; // throws for fixed qubits
};

struct CouplingEdge {
    int a = -1, b = -1;   // a < b after normalization
    double g_mhz = 0.0;   // bare exchange coupling / 2pi
};

struct ModulationAverages {
    double mean_mhz = 0.0;      // time-averaged transition frequency
    double eps_mhz = 0.0;       // amplitude of the fundamental frequency harmonic
    double second_harm_mhz = 0.0;
};

struct DeviceModel {
    int schema_version = 1;
    std::string name;
    std::vector<QubitParams> qubits;
    std::vector<CouplingEdge> edges;
    // Dispersive shift chi between a gate qubit (first) and a spectator
    // (second), in kHz. Missing pairs read as zero.
    std::map<std::pair<int, int>, double> chi_khz;

    const QubitParams& qubit(int i) const;
    const CouplingEdge* edge_between(int a, int b) const; // nullptr if absent
    double chi_between_khz(int gate_qubit, int spectator) const;

    // Flux-modulated frequency f01(0.5 + phi_p cos theta) averaged over one
    // modulation period (4096-point periodic trapezoid). The flux drive
    // frequency does not enter the average analytically; it is accepted so the
    // call site reads like the physical experiment and for future waveform
    // shapes. Throws for fixed qubits.
    double avg_freq_mhz(int qubit, double phi_p, double f_flux_mhz = 0.0, int samples = 4096) const;
    // Fourier decomposition of the same waveform: mean, fundamental (at twice
    // the flux drive frequency) and second harmonic amplitudes.
    ModulationAverages modulation_averages(int qubit, double phi_p, int samples = 4096) const;

    uint64_t hash() const;
    std::string to_config_string() const;
};

DeviceModel load_device(const std::string& path);
DeviceModel parse_device(const std::string& text, const std::string& origin = "<string>");
void save_device(const DeviceModel& dev, const std::string& path);

} // namespace paramgate
