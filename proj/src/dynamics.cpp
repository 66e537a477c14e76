#include "paramgate/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "paramgate/gates.hpp"
#include "paramgate/kernels.hpp"

namespace paramgate {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

int pair_idx(int i_fixed, int j_tunable) { return 3 * i_fixed + j_tunable; }

CMat ctranspose(const CMat& A) {
    CMat T(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
    return T;
}

CMat cconj(const CMat& A) {
    CMat C(A.rows, A.cols);
    for (size_t i = 0; i < A.a.size(); ++i) C.a[i] = std::conj(A.a[i]);
    return C;
}

CMat lowering3() {
    CMat a(3, 3);
    a(0, 1) = 1.0;
    a(1, 2) = std::sqrt(2.0);
    return a;
}

CMat number3() {
    CMat n(3, 3);
    n(1, 1) = 1.0;
    n(2, 2) = 2.0;
    return n;
}

// vec(rho)[d*i+j] = rho_ij, so vec(A rho B) = kron(A, B^T) vec(rho).
CMat dissipator_superop(const CMat& L) {
    const int d = L.rows;
    CMat LdL = dagger(L) * L;
    CMat S = kron(L, cconj(L));
    CMat I = CMat::identity(d);
    CMat left = kron(LdL, I);
    CMat right = kron(I, ctranspose(LdL));
    for (size_t i = 0; i < S.a.size(); ++i) S.a[i] -= 0.5 * (left.a[i] + right.a[i]);
    return S;
}

// Integrator step grid. Step = 1/(64*f_flux) divided by the oversampling
// factor; the last step absorbs the remainder. Undriven pulses fall back to a
// 0.5 ns cap so that the open-system operator splitting stays accurate.
struct StepGrid {
    double dt = 0.0;       // us, nominal
    double dt_last = 0.0;  // us, final (possibly short) step
    int n = 0;
    int period_steps = 64; // steps per flux period during the flat top
    double d_us = 0.0;
};

StepGrid make_grid(const ModulationDrive& drive, int oversample) {
    StepGrid g;
    g.d_us = drive.duration_ns / 1000.0;
    g.period_steps = 64 * oversample;
    if (g.d_us <= 0.0) return g;
    double dt = (drive.f_flux_mhz > 0.0)
                    ? 1.0 / (64.0 * oversample * drive.f_flux_mhz)
                    : std::min(g.d_us, 5e-4 / oversample);
    g.n = std::max(1, static_cast<int>(std::ceil(g.d_us / dt - 1e-9)));
    g.dt = dt;
    g.dt_last = g.d_us - (g.n - 1) * dt;
    return g;
}

// Per-step unitaries with flat-top caching: during the flat top the
// Hamiltonian is periodic in the flux period, so steps sharing
// k mod period_steps share a propagator.
struct StepUnitaries {
    const PairSystem* sys = nullptr;
    const ModulationDrive* drive = nullptr;
    StepGrid grid;
    std::vector<std::optional<CMat>> flat_cache;

    StepUnitaries(const PairSystem& s, const ModulationDrive& d, int oversample = 1)
        : sys(&s), drive(&d) {
        if (oversample < 1) throw std::invalid_argument("oversample must be >= 1");
        grid = make_grid(d, oversample);
        flat_cache.resize(static_cast<size_t>(grid.period_steps));
    }

    bool full_step(int k) const { return k + 1 < grid.n || grid.dt_last >= grid.dt * (1 - 1e-12); }

    bool flat(int k) const {
        const double tmid = (k + 0.5) * grid.dt;
        return full_step(k) && drive->envelope(tmid) == 1.0 && drive->f_flux_mhz > 0.0;
    }

    double step_len(int k) const { return (k + 1 == grid.n) ? grid.dt_last : grid.dt; }

    CMat compute(int k) const {
        const double len = step_len(k);
        const double tmid = k * grid.dt + 0.5 * len;
        CMat H = pair_hamiltonian(*sys, drive->flux(tmid));
        return expm_i_herm(H, len);
    }

    const CMat& at(int k) {
        if (flat(k)) {
            auto& slot = flat_cache[static_cast<size_t>(k % grid.period_steps)];
            if (!slot) slot = compute(k);
            return *slot;
        }
        scratch = compute(k);
        return scratch;
    }

  private:
    CMat scratch;
};

void gemm9(const CMat& A, const CMat& B, CMat& C) {
    kernels::zgemm(9, 9, 9, A.data(), B.data(), C.data());
}

// rho row-major 81x81 accumulator in transposed (row = image) convention:
// applying a step unitary maps each row X -> U X U^dag.
void apply_unitary_rows(CMat& T, const CMat& U, const CMat& Udag) {
    CMat tmp(9, 9), out(9, 9);
    for (int r = 0; r < 81; ++r) {
        cd* row = T.data() + static_cast<size_t>(r) * 81;
        kernels::zgemm(9, 9, 9, U.data(), row, tmp.data());
        kernels::zgemm(9, 9, 9, tmp.data(), Udag.data(), out.data());
        std::copy(out.data(), out.data() + 81, row);
    }
}

CMat matpow(const CMat& P, int m) {
    CMat result = CMat::identity(P.rows);
    CMat base = P;
    while (m > 0) {
        if (m & 1) result = result * base;
        base = base * base;
        m >>= 1;
    }
    return result;
}

CMat embed_tunable(const CMat& u2) { return kron(CMat::identity(3), gates::qutrit_embed(u2)); }
CMat embed_fixed(const CMat& u2) { return kron(gates::qutrit_embed(u2), CMat::identity(3)); }

CVec basis3(int level) {
    CVec v(3, cd(0, 0));
    v[static_cast<size_t>(level)] = 1.0;
    return v;
}

CVec kron_vec(const CVec& a, const CVec& b) {
    CVec v(a.size() * b.size());
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b.size(); ++j) v[i * b.size() + j] = a[i] * b[j];
    return v;
}

// Vertex of the parabola through three uniformly spaced samples.
double parabola_vertex(double x0, double x1, double x2, double y0, double y1, double y2) {
    const double denom = (y0 - 2 * y1 + y2);
    if (std::abs(denom) < 1e-30) return x1;
    const double h = 0.5 * (x2 - x0);
    return x1 + h * 0.5 * (y0 - y2) / denom;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModulationDrive / NoiseChannel

void ModulationDrive::validate() const {
    if (!(phi_p >= 0.0 && phi_p < 0.5))
        throw std::invalid_argument("drive: phi_p must lie in [0, 0.5)");
    if (risetime_ns < 0.0) throw std::invalid_argument("drive: risetime must be nonnegative");
    if (duration_ns < 2.0 * risetime_ns - 1e-9)
        throw std::invalid_argument("drive: duration must cover both ramps (>= 2*risetime)");
    if (duration_ns < 0.0) throw std::invalid_argument("drive: duration must be nonnegative");
    if (f_flux_mhz < 0.0) throw std::invalid_argument("drive: f_flux must be nonnegative");
}

double ModulationDrive::envelope(double t_us) const {
    const double d = duration_ns / 1000.0;
    const double r = risetime_ns / 1000.0;
    if (t_us <= 0.0 || t_us >= d) return 0.0;
    if (r <= 0.0) return 1.0;
    if (t_us < r) {
        const double s = std::sin(kPi * t_us / (2.0 * r));
        return s * s;
    }
    if (t_us > d - r) {
        const double s = std::sin(kPi * (d - t_us) / (2.0 * r));
        return s * s;
    }
    return 1.0;
}

double ModulationDrive::flux(double t_us) const {
    return phi_dc + phi_p * envelope(t_us) * std::cos(kTwoPi * f_flux_mhz * t_us + theta_m);
}

NoiseChannel NoiseChannel::from_device(const DeviceModel& dev) {
    NoiseChannel n;
    n.t1_us.resize(dev.qubits.size(), 0.0);
    n.t2_star_us.resize(dev.qubits.size(), 0.0);
    for (size_t i = 0; i < dev.qubits.size(); ++i) {
        n.t1_us[i] = dev.qubits[i].t1_us;
        n.t2_star_us[i] = dev.qubits[i].t2_star_us;
    }
    return n;
}

// ---------------------------------------------------------------------------
// PairSystem / Hamiltonians

PairSystem PairSystem::from_device(const DeviceModel& dev, int qa, int qb) {
    const QubitParams& a = dev.qubit(qa);
    const QubitParams& b = dev.qubit(qb);
    if (a.tunable == b.tunable)
        throw std::invalid_argument("pair: exactly one qubit must be flux-tunable");
    const CouplingEdge* e = dev.edge_between(qa, qb);
    if (!e) throw std::invalid_argument("pair: no coupling edge between the requested qubits");
    PairSystem s;
    const QubitParams& fx = a.tunable ? b : a;
    const QubitParams& tn = a.tunable ? a : b;
    s.qf = fx.index;
    s.qt = tn.index;
    s.omega_f = kTwoPi * fx.f01_max_mhz;
    s.eta_f = kTwoPi * fx.eta_mhz;
    s.eta_t = kTwoPi * tn.eta_mhz;
    s.g = kTwoPi * e->g_mhz;
    s.curve = tn.flux_response();
    return s;
}

double PairSystem::omega_t(double phi) const { return kTwoPi * curve.freq_mhz(phi); }

CMat pair_hamiltonian(const PairSystem& sys, double phi) {
    CMat h(9, 9);
    const double wt = sys.omega_t(phi);
    const double ef[3] = {0.0, sys.omega_f, 2.0 * sys.omega_f - sys.eta_f};
    const double et[3] = {0.0, wt, 2.0 * wt - sys.eta_t};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) h(pair_idx(i, j), pair_idx(i, j)) = ef[i] + et[j];
    // g (sigma_F^dag sigma_T + h.c.) with sigma = |0><1| + sqrt(2) |1><2|.
    const double s[3] = {0.0, 1.0, std::sqrt(2.0)};
    for (int i = 0; i < 2; ++i) {
        for (int j = 1; j < 3; ++j) {
            const double amp = sys.g * s[i + 1] * s[j];
            const int a = pair_idx(i + 1, j - 1);
            const int b = pair_idx(i, j);
            h(a, b) += amp;
            h(b, a) += amp;
        }
    }
    return h;
}

CMat hamiltonian_at(const DeviceModel& dev, int qa, int qb, const ModulationDrive& drive,
                    double t_ns) {
    drive.validate();
    if (t_ns < 0.0 || t_ns > drive.duration_ns)
        throw std::out_of_range("hamiltonian_at: t outside [0, duration]");
    PairSystem sys = PairSystem::from_device(dev, qa, qb);
    return pair_hamiltonian(sys, drive.flux(t_ns / 1000.0));
}

double static_zz_rad_per_us(const PairSystem& sys) {
    CMat H = pair_hamiltonian(sys, 0.5);
    HermEig eig = herm_eig(H);
    // Match dressed levels to bare labels by maximum overlap.
    auto dressed = [&](int bare) {
        int best = 0;
        double best_w = -1.0;
        for (int k = 0; k < 9; ++k) {
            const double w = std::norm(eig.V(bare, k));
            if (w > best_w) {
                best_w = w;
                best = k;
            }
        }
        return eig.w[static_cast<size_t>(best)];
    };
    return dressed(pair_idx(1, 1)) - dressed(pair_idx(1, 0)) - dressed(pair_idx(0, 1)) +
           dressed(pair_idx(0, 0));
}

// ---------------------------------------------------------------------------
// Closed-system evolution

CMat closed_propagator(const PairSystem& sys, const ModulationDrive& drive, int oversample) {
    drive.validate();
    StepUnitaries steps(sys, drive, oversample);
    CMat U = CMat::identity(9);
    if (steps.grid.n == 0) return U;
    CMat tmp(9, 9);
    for (int k = 0; k < steps.grid.n; ++k) {
        gemm9(steps.at(k), U, tmp);
        U = tmp;
    }
    return U;
}

CMat frame_phases(const PairSystem& sys, double duration_us) {
    const double wt0 = sys.omega_t(0.5);
    const double ef[3] = {0.0, sys.omega_f, 2.0 * sys.omega_f - sys.eta_f};
    const double et[3] = {0.0, wt0, 2.0 * wt0 - sys.eta_t};
    CMat F(9, 9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const int a = pair_idx(i, j);
            F(a, a) = std::exp(cd(0, (ef[i] + et[j]) * duration_us));
        }
    return F;
}

CMat rotating_propagator(const PairSystem& sys, const ModulationDrive& drive) {
    return frame_phases(sys, drive.duration_ns / 1000.0) * closed_propagator(sys, drive);
}

PopTrace evolve_populations(const PairSystem& sys, const ModulationDrive& drive, const CVec& psi0) {
    drive.validate();
    if (psi0.size() != 9) throw std::invalid_argument("evolve_populations: state must be 9-dim");
    StepUnitaries steps(sys, drive);
    PopTrace tr;
    CVec psi = psi0, next(9);
    tr.t_ns.reserve(static_cast<size_t>(steps.grid.n));
    for (int k = 0; k < steps.grid.n; ++k) {
        kernels::zgemv(9, 9, steps.at(k).data(), psi.data(), next.data());
        psi = next;
        const double t_end = (k + 1 == steps.grid.n) ? steps.grid.d_us
                                                     : (k + 1) * steps.grid.dt;
        tr.t_ns.push_back(t_end * 1000.0);
        tr.p11.push_back(std::norm(psi[pair_idx(1, 1)]));
        tr.p02.push_back(std::norm(psi[pair_idx(0, 2)]));
        tr.p20.push_back(std::norm(psi[pair_idx(2, 0)]));
    }
    tr.psi_final = psi;
    return tr;
}

// ---------------------------------------------------------------------------
// Open-system evolution

CMat pair_dissipator(double t1_f_us, double t2_f_us, double t1_t_us, double t2_t_us) {
    auto rates = [](double t1, double t2) {
        const double g1 = (t1 > 0.0) ? 1.0 / t1 : 0.0;
        double gphi = (t2 > 0.0) ? 1.0 / t2 - 0.5 * g1 : 0.0;
        if (gphi < -1e-9)
            throw std::invalid_argument("noise: T2 exceeds 2*T1 (negative dephasing rate)");
        return std::pair<double, double>{g1, std::max(gphi, 0.0)};
    };
    const auto [g1f, gpf] = rates(t1_f_us, t2_f_us);
    const auto [g1t, gpt] = rates(t1_t_us, t2_t_us);
    const CMat a = lowering3(), n = number3(), i3 = CMat::identity(3);
    CMat L(81, 81);
    auto add = [&L](double rate, const CMat& op) {
        if (rate <= 0.0) return;
        CMat d = dissipator_superop(op);
        for (size_t i = 0; i < L.a.size(); ++i) L.a[i] += rate * d.a[i];
    };
    add(g1f, kron(a, i3));
    add(g1t, kron(i3, a));
    add(2.0 * gpf, kron(n, i3));
    add(2.0 * gpt, kron(i3, n));
    return L;
}

CMat pair_channel(const PairSystem& sys, const ModulationDrive& drive,
                  const std::optional<NoiseChannel>& noise) {
    drive.validate();
    if (!noise) {
        CMat U = rotating_propagator(sys, drive);
        return kron(U, cconj(U));
    }
    const NoiseChannel& nc = *noise;
    const size_t need = static_cast<size_t>(std::max(sys.qf, sys.qt)) + 1;
    if (nc.t1_us.size() < need || nc.t2_star_us.size() < need)
        throw std::invalid_argument("noise: missing T1/T2 entries for the pair qubits");
    const double t2t = (nc.t2_eff_mod_us && drive.phi_p > 0.0) ? *nc.t2_eff_mod_us
                                                               : nc.t2_star_us[static_cast<size_t>(sys.qt)];
    CMat LD = pair_dissipator(nc.t1_us[static_cast<size_t>(sys.qf)],
                              nc.t2_star_us[static_cast<size_t>(sys.qf)],
                              nc.t1_us[static_cast<size_t>(sys.qt)], t2t);
    const double d_us = drive.duration_ns / 1000.0;
    if (d_us <= 0.0) return CMat::identity(81);

    if (drive.phi_p == 0.0) {
        // Undriven: the full generator is time-independent, one exponential.
        CMat H = pair_hamiltonian(sys, drive.phi_dc);
        CMat I9 = CMat::identity(9);
        CMat L = kron(H, I9) - kron(I9, ctranspose(H));
        for (auto& z : L.a) z *= cd(0, -1);
        L += LD;
        L *= cd(d_us, 0.0);
        CMat S = expm(L);
        CMat F = frame_phases(sys, d_us);
        for (int a2 = 0; a2 < 9; ++a2)
            for (int b2 = 0; b2 < 9; ++b2) {
                const cd ph = F(a2, a2) * std::conj(F(b2, b2));
                cd* row = S.data() + static_cast<size_t>(9 * a2 + b2) * 81;
                for (int c = 0; c < 81; ++c) row[c] *= ph;
            }
        return S;
    }

    StepUnitaries steps(sys, drive);
    const int N = steps.grid.n;
    if (N == 0) return CMat::identity(81);
    const double dt = steps.grid.dt, dtl = steps.grid.dt_last;

    auto exp_diss_t = [&LD](double len) {
        CMat M = LD;
        M *= cd(len, 0.0);
        return ctranspose(expm(M));
    };
    // Strang composition with merged interior halves: the dissipator acts for
    // dt/2 before the first step, dt between steps, and dt_last/2 after the
    // last; all applied as right-multiplications in the transposed convention.
    CMat E_first = exp_diss_t(0.5 * dt);
    CMat E_mid = exp_diss_t(dt);
    CMat E_join = (N >= 2) ? exp_diss_t(0.5 * (dt + dtl)) : CMat();
    CMat E_last = exp_diss_t(0.5 * dtl);

    // Contiguous run of uniform flat-top steps eligible for period powering.
    // The last two steps stay out so the stepwise path always applies the
    // (dt + dt_last)/2 joining exponential.
    const int ps = steps.grid.period_steps;
    int run_lo = N, run_hi = N;
    for (int k = 0; k < N; ++k) {
        if (steps.flat(k)) {
            run_lo = k;
            break;
        }
    }
    if (run_lo < N) {
        run_hi = run_lo;
        while (run_hi < N - 2 && steps.flat(run_hi)) ++run_hi;
    }

    CMat T = E_first;
    int k = 0;
    CMat period;  // one flux period in the transposed convention
    while (k < N) {
        if (period.a.empty() && k >= run_lo && k < run_hi && run_hi - k >= 2 * ps) {
            period = CMat::identity(81);
            for (int j = 0; j < ps; ++j) {
                const CMat& Uj = steps.at(k + j);
                CMat Ujd = dagger(Uj);
                apply_unitary_rows(period, Uj, Ujd);
                period = period * E_mid;
            }
            const int m = (run_hi - k) / ps;
            T = T * matpow(period, m);
            k += ps * m;
            continue;
        }
        const CMat& U = steps.at(k);
        CMat Ud = dagger(U);
        apply_unitary_rows(T, U, Ud);
        if (k + 1 < N) T = T * ((k + 2 == N) ? E_join : E_mid);
        ++k;
    }
    T = T * E_last;

    // Back to the standard convention, then remove the rotating frame.
    CMat S = ctranspose(T);
    CMat F = frame_phases(sys, steps.grid.d_us);
    CVec fr(9);
    for (int i = 0; i < 9; ++i) fr[static_cast<size_t>(i)] = F(i, i);
    for (int a2 = 0; a2 < 9; ++a2)
        for (int b2 = 0; b2 < 9; ++b2) {
            const cd ph = fr[static_cast<size_t>(a2)] * std::conj(fr[static_cast<size_t>(b2)]);
            cd* row = S.data() + static_cast<size_t>(9 * a2 + b2) * 81;
            for (int c = 0; c < 81; ++c) row[c] *= ph;
        }
    return S;
}

// ---------------------------------------------------------------------------
// Density states and register operations

int DensityState::dim() const {
    int d = 1;
    for (int x : dims) d *= x;
    return d;
}

DensityState DensityState::ground(int n_sites, int levels) {
    DensityState st;
    st.dims.assign(static_cast<size_t>(n_sites), levels);
    st.rho = CMat(st.dim(), st.dim());
    st.rho(0, 0) = 1.0;
    return st;
}

DensityState DensityState::from_pure(const std::vector<int>& dims, const CVec& psi) {
    DensityState st;
    st.dims = dims;
    const int d = st.dim();
    if (static_cast<int>(psi.size()) != d)
        throw std::invalid_argument("density: state vector does not match dims");
    st.rho = CMat(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            st.rho(i, j) = psi[static_cast<size_t>(i)] * std::conj(psi[static_cast<size_t>(j)]);
    return st;
}

double DensityState::trace_real() const { return trace(rho).real(); }

void DensityState::validate(double tol) const {
    const int d = dim();
    if (rho.rows != d || rho.cols != d) throw std::runtime_error("density: shape mismatch");
    if (std::abs(trace(rho) - cd(1.0, 0.0)) > tol)
        throw std::runtime_error("density: trace deviates from 1");
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j)
            if (std::abs(rho(i, j) - std::conj(rho(j, i))) > tol)
                throw std::runtime_error("density: not Hermitian");
    if (min_eigenvalue(herm_part(rho)) < -tol)
        throw std::runtime_error("density: negative eigenvalue");
}

namespace {

// Site strides for row-major composite indices (site 0 most significant).
std::vector<int> site_strides(const std::vector<int>& dims) {
    std::vector<int> s(dims.size(), 1);
    for (int i = static_cast<int>(dims.size()) - 2; i >= 0; --i)
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * dims[static_cast<size_t>(i) + 1];
    return s;
}

// Base indices enumerating all assignments of the sites not in `skip`.
std::vector<int> rest_bases(const std::vector<int>& dims, const std::vector<int>& skip) {
    const auto strides = site_strides(dims);
    std::vector<int> bases{0};
    for (size_t s = 0; s < dims.size(); ++s) {
        if (std::find(skip.begin(), skip.end(), static_cast<int>(s)) != skip.end()) continue;
        std::vector<int> next;
        next.reserve(bases.size() * static_cast<size_t>(dims[s]));
        for (int b : bases)
            for (int v = 0; v < dims[s]; ++v) next.push_back(b + v * strides[s]);
        bases = next;
    }
    return bases;
}

int digit_of(int index, int stride, int dim) { return (index / stride) % dim; }

}  // namespace

void apply_pair_channel(DensityState& st, int site_a, int site_b, const CMat& S) {
    const auto strides = site_strides(st.dims);
    const int da = st.dims[static_cast<size_t>(site_a)], db = st.dims[static_cast<size_t>(site_b)];
    const int dd = da * db;
    if (S.rows != dd * dd || S.cols != dd * dd)
        throw std::invalid_argument("apply_pair_channel: superoperator shape mismatch");
    const auto bases = rest_bases(st.dims, {site_a, site_b});
    const int sa = strides[static_cast<size_t>(site_a)], sb = strides[static_cast<size_t>(site_b)];
    CVec v(static_cast<size_t>(dd * dd)), w(static_cast<size_t>(dd * dd));
    for (int br : bases) {
        for (int bc : bases) {
            for (int ra = 0; ra < da; ++ra)
                for (int rb = 0; rb < db; ++rb)
                    for (int ca = 0; ca < da; ++ca)
                        for (int cb = 0; cb < db; ++cb)
                            v[static_cast<size_t>((ra * db + rb) * dd + (ca * db + cb))] =
                                st.rho(br + ra * sa + rb * sb, bc + ca * sa + cb * sb);
            kernels::zgemv(dd * dd, dd * dd, S.data(), v.data(), w.data());
            for (int ra = 0; ra < da; ++ra)
                for (int rb = 0; rb < db; ++rb)
                    for (int ca = 0; ca < da; ++ca)
                        for (int cb = 0; cb < db; ++cb)
                            st.rho(br + ra * sa + rb * sb, bc + ca * sa + cb * sb) =
                                w[static_cast<size_t>((ra * db + rb) * dd + (ca * db + cb))];
        }
    }
}

void apply_site_unitary(DensityState& st, int site, const CMat& u3) {
    const auto strides = site_strides(st.dims);
    const int ds = st.dims[static_cast<size_t>(site)];
    if (u3.rows != ds || u3.cols != ds)
        throw std::invalid_argument("apply_site_unitary: dimension mismatch");
    const int N = st.dim();
    const int stride = strides[static_cast<size_t>(site)];
    const auto bases = rest_bases(st.dims, {site});
    // Left multiply by U on rows, then right multiply by U^dag on columns.
    CVec tmp(static_cast<size_t>(ds));
    for (int b : bases) {
        for (int col = 0; col < N; ++col) {
            for (int a = 0; a < ds; ++a) {
                cd acc(0, 0);
                for (int x = 0; x < ds; ++x) acc += u3(a, x) * st.rho(b + x * stride, col);
                tmp[static_cast<size_t>(a)] = acc;
            }
            for (int a = 0; a < ds; ++a) st.rho(b + a * stride, col) = tmp[static_cast<size_t>(a)];
        }
        for (int row = 0; row < N; ++row) {
            for (int a = 0; a < ds; ++a) {
                cd acc(0, 0);
                for (int x = 0; x < ds; ++x)
                    acc += st.rho(row, b + x * stride) * std::conj(u3(a, x));
                tmp[static_cast<size_t>(a)] = acc;
            }
            for (int a = 0; a < ds; ++a) st.rho(row, b + a * stride) = tmp[static_cast<size_t>(a)];
        }
    }
}

void apply_site_depolarizing(DensityState& st, int site, double p) {
    if (p <= 0.0) return;
    CMat acc(st.rho.rows, st.rho.cols);
    for (int k = 1; k <= 3; ++k) {
        DensityState term = st;
        apply_site_unitary(term, site, gates::qutrit_embed(gates::pauli(k)));
        acc += term.rho;
    }
    st.rho *= cd(1.0 - p, 0.0);
    acc *= cd(p / 3.0, 0.0);
    st.rho += acc;
}

void apply_level_conditional_phase(DensityState& st, int site_a, int site_b, double phi) {
    const auto strides = site_strides(st.dims);
    const int sa = strides[static_cast<size_t>(site_a)], sb = strides[static_cast<size_t>(site_b)];
    const int da = st.dims[static_cast<size_t>(site_a)], db = st.dims[static_cast<size_t>(site_b)];
    const int N = st.dim();
    for (int r = 0; r < N; ++r) {
        const int nr = digit_of(r, sa, da) * digit_of(r, sb, db);
        for (int c = 0; c < N; ++c) {
            const int nc = digit_of(c, sa, da) * digit_of(c, sb, db);
            if (nr != nc) st.rho(r, c) *= std::exp(cd(0, phi * (nr - nc)));
        }
    }
}

void apply_site_unitary_pure(CVec& psi, const std::vector<int>& dims, int site, const CMat& u3) {
    const auto strides = site_strides(dims);
    const int ds = dims[static_cast<size_t>(site)];
    const int stride = strides[static_cast<size_t>(site)];
    const auto bases = rest_bases(dims, {site});
    CVec tmp(static_cast<size_t>(ds));
    for (int b : bases) {
        for (int a = 0; a < ds; ++a) {
            cd acc(0, 0);
            for (int x = 0; x < ds; ++x) acc += u3(a, x) * psi[static_cast<size_t>(b + x * stride)];
            tmp[static_cast<size_t>(a)] = acc;
        }
        for (int a = 0; a < ds; ++a) psi[static_cast<size_t>(b + a * stride)] = tmp[static_cast<size_t>(a)];
    }
}

void apply_pair_unitary_pure(CVec& psi, const std::vector<int>& dims, int site_a, int site_b,
                             const CMat& u9) {
    const auto strides = site_strides(dims);
    const int da = dims[static_cast<size_t>(site_a)], db = dims[static_cast<size_t>(site_b)];
    const int dd = da * db;
    const int sa = strides[static_cast<size_t>(site_a)], sb = strides[static_cast<size_t>(site_b)];
    const auto bases = rest_bases(dims, {site_a, site_b});
    CVec v(static_cast<size_t>(dd)), w(static_cast<size_t>(dd));
    for (int b : bases) {
        for (int ra = 0; ra < da; ++ra)
            for (int rb = 0; rb < db; ++rb)
                v[static_cast<size_t>(ra * db + rb)] = psi[static_cast<size_t>(b + ra * sa + rb * sb)];
        kernels::zgemv(dd, dd, u9.data(), v.data(), w.data());
        for (int ra = 0; ra < da; ++ra)
            for (int rb = 0; rb < db; ++rb)
                psi[static_cast<size_t>(b + ra * sa + rb * sb)] = w[static_cast<size_t>(ra * db + rb)];
    }
}

void apply_level_conditional_phase_pure(CVec& psi, const std::vector<int>& dims, int site_a,
                                        int site_b, double phi) {
    const auto strides = site_strides(dims);
    const int sa = strides[static_cast<size_t>(site_a)], sb = strides[static_cast<size_t>(site_b)];
    const int da = dims[static_cast<size_t>(site_a)], db = dims[static_cast<size_t>(site_b)];
    for (size_t r = 0; r < psi.size(); ++r) {
        const int n = digit_of(static_cast<int>(r), sa, da) * digit_of(static_cast<int>(r), sb, db);
        if (n != 0) psi[r] *= std::exp(cd(0, phi * n));
    }
}

namespace {

// Exchange the two site labels of a 9x9 pair state: index 3i+j -> 3j+i.
CMat swap_pair_sites(const CMat& rho) {
    CMat out(9, 9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l)
                    out(pair_idx(j, i), pair_idx(l, k)) = rho(pair_idx(i, j), pair_idx(k, l));
    return out;
}

}  // namespace

DensityState evolve(const DeviceModel& dev, int qa, int qb, const ModulationDrive& drive,
                    const std::optional<NoiseChannel>& noise, const DensityState& rho0) {
    if (rho0.dims != std::vector<int>{3, 3})
        throw std::invalid_argument("evolve: expected a two-transmon qutrit state");
    PairSystem sys = PairSystem::from_device(dev, qa, qb);
    const bool reorder = (qa != sys.qf);  // caller's first site is the tunable qubit
    DensityState st = rho0;
    if (reorder) st.rho = swap_pair_sites(st.rho);
    const double tr_in = st.trace_real();
    if (noise) {
        CMat S = pair_channel(sys, drive, noise);
        apply_pair_channel(st, 0, 1, S);
    } else {
        CMat U = rotating_propagator(sys, drive);
        st.rho = U * st.rho * dagger(U);
    }
    if (std::abs(st.trace_real() - tr_in) > 1e-8)
        throw std::runtime_error("evolve: trace not preserved to 1e-8");
    if (reorder) st.rho = swap_pair_sites(st.rho);
    return st;
}

// ---------------------------------------------------------------------------
// Scans

std::vector<ChevronPoint> chevron_scan(const DeviceModel& dev, int qa, int qb,
                                       const std::vector<double>& f_flux_mhz,
                                       const std::vector<double>& duration_ns, double phi_p,
                                       double risetime_ns, double theta_m) {
    if (f_flux_mhz.empty() || duration_ns.empty())
        throw std::invalid_argument("chevron_scan: empty grid");
    PairSystem sys = PairSystem::from_device(dev, qa, qb);
    CVec psi0(9, cd(0, 0));
    psi0[pair_idx(1, 1)] = 1.0;
    std::vector<ChevronPoint> out;
    out.reserve(f_flux_mhz.size() * duration_ns.size());
    for (double f : f_flux_mhz) {
        for (double d : duration_ns) {
            ModulationDrive drive;
            drive.phi_p = phi_p;
            drive.f_flux_mhz = f;
            drive.theta_m = theta_m;
            drive.duration_ns = d;
            // Short pulses ramp straight up and back down.
            drive.risetime_ns = std::min(risetime_ns, d / 2.0);
            PopTrace tr = evolve_populations(sys, drive, psi0);
            ChevronPoint p;
            p.f_flux_mhz = f;
            p.duration_ns = d;
            p.p11 = tr.p11.empty() ? 1.0 : tr.p11.back();
            p.p02 = tr.p02.empty() ? 0.0 : tr.p02.back();
            out.push_back(p);
        }
    }
    return out;
}

RamseyFit ramsey_phase(const PairSystem& sys, const ModulationDrive& drive, int control_state,
                       bool swap_roles, int n_phases) {
    if (control_state != 0 && control_state != 1)
        throw std::invalid_argument("ramsey_phase: control_state must be 0 or 1");
    if (n_phases < 4) throw std::invalid_argument("ramsey_phase: need at least 4 phases");
    CVec half(3, cd(0, 0));  // Rx(pi/2) |0> = (|0> - i|1>)/sqrt(2)
    half[0] = cd(1.0 / std::sqrt(2.0), 0);
    half[1] = cd(0, -1.0 / std::sqrt(2.0));
    CVec ctrl = basis3(control_state);
    CVec psi0 = swap_roles ? kron_vec(half, ctrl) : kron_vec(ctrl, half);
    CMat U = rotating_propagator(sys, drive);
    CVec psi1(9);
    kernels::zgemv(9, 9, U.data(), psi0.data(), psi1.data());

    std::vector<double> ph(static_cast<size_t>(n_phases)), p1(static_cast<size_t>(n_phases));
    CVec psi2(9);
    for (int k = 0; k < n_phases; ++k) {
        const double phi = kTwoPi * k / n_phases;
        CMat A = swap_roles ? embed_fixed(gates::r_axis(kPi / 2.0, phi))
                            : embed_tunable(gates::r_axis(kPi / 2.0, phi));
        kernels::zgemv(9, 9, A.data(), psi1.data(), psi2.data());
        double p = 0.0;
        for (int i = 0; i < 3; ++i)
            p += std::norm(psi2[static_cast<size_t>(swap_roles ? pair_idx(1, i) : pair_idx(i, 1))]);
        ph[static_cast<size_t>(k)] = phi;
        p1[static_cast<size_t>(k)] = p;
    }
    // Uniform grid: the cosine/sine projections are the exact least-squares fit.
    double b = 0, c = 0, s = 0;
    for (int k = 0; k < n_phases; ++k) {
        b += p1[static_cast<size_t>(k)];
        c += p1[static_cast<size_t>(k)] * std::cos(ph[static_cast<size_t>(k)]);
        s += p1[static_cast<size_t>(k)] * std::sin(ph[static_cast<size_t>(k)]);
    }
    b /= n_phases;
    c *= 2.0 / n_phases;
    s *= 2.0 / n_phases;
    double ss_res = 0, ss_tot = 0;
    for (int k = 0; k < n_phases; ++k) {
        const double fit = b + c * std::cos(ph[static_cast<size_t>(k)]) + s * std::sin(ph[static_cast<size_t>(k)]);
        ss_res += (p1[static_cast<size_t>(k)] - fit) * (p1[static_cast<size_t>(k)] - fit);
        ss_tot += (p1[static_cast<size_t>(k)] - b) * (p1[static_cast<size_t>(k)] - b);
    }
    RamseyFit out;
    out.offset = b;
    out.amplitude = std::hypot(c, s);
    out.phase = std::atan2(s, c);
    out.r2 = (ss_tot > 1e-18) ? 1.0 - ss_res / ss_tot : 0.0;
    if (out.r2 < 0.9)
        throw std::runtime_error("ramsey_phase: fringe fit failed (R^2 < 0.9)");
    return out;
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

double flat_p11_after(const PairSystem& sys, double phi_p, double f_flux, double theta_m,
                      double duration_ns) {
    ModulationDrive d;
    d.phi_p = phi_p;
    d.f_flux_mhz = f_flux;
    d.theta_m = theta_m;
    d.duration_ns = duration_ns;
    d.risetime_ns = 0.0;
    CVec psi0(9, cd(0, 0));
    psi0[pair_idx(1, 1)] = 1.0;
    PopTrace tr = evolve_populations(sys, d, psi0);
    return tr.p11.back();
}

double refine_minimum(const std::vector<double>& xs, const std::vector<double>& ys) {
    size_t best = 0;
    for (size_t i = 1; i < ys.size(); ++i)
        if (ys[i] < ys[best]) best = i;
    if (best == 0 || best + 1 == ys.size()) return xs[best];
    return parabola_vertex(xs[best - 1], xs[best], xs[best + 1], ys[best - 1], ys[best],
                           ys[best + 1]);
}

double wrap_pi(double x) {
    while (x > kPi) x -= kTwoPi;
    while (x < -kPi) x += kTwoPi;
    return x;
}

}  // namespace

CalibratedGate calibrate_cz(const DeviceModel& dev, int qa, int qb, double phi_p, GateKind kind,
                            int harmonic, const CalibrateOptions& opts) {
    if (kind == GateKind::iswap)
        throw std::invalid_argument("calibrate_cz: kind must be cz02 or cz20");
    GatePrediction pred = predict_gate(dev, qa, qb, kind, phi_p, harmonic, opts.theta_m,
                                       opts.risetime_ns);
    PairSystem sys = PairSystem::from_device(dev, qa, qb);

    // Stage 1: refine the flux-drive frequency by maximizing the population
    // transfer out of |11> after half a predicted exchange period.
    const double t_half = pred.tau_flat_ns / 2.0;
    const double span = std::max(0.75, 2.5 * pred.g_eff_mhz / (2.0 * harmonic));
    auto scan = [&](double center, double halfspan, int npts) {
        std::vector<double> xs(static_cast<size_t>(npts)), ys(static_cast<size_t>(npts));
        for (int i = 0; i < npts; ++i) {
            xs[static_cast<size_t>(i)] = center - halfspan + 2.0 * halfspan * i / (npts - 1);
            ys[static_cast<size_t>(i)] =
                flat_p11_after(sys, phi_p, xs[static_cast<size_t>(i)], opts.theta_m, t_half);
        }
        return std::pair<std::vector<double>, std::vector<double>>{xs, ys};
    };
    auto [xs1, ys1] = scan(pred.f_flux_mhz, span, opts.coarse_points);
    const double depth = 1.0 - *std::min_element(ys1.begin(), ys1.end());
    if (depth < 0.5)
        throw std::runtime_error("calibrate_cz: exchange contrast below 0.5; "
                                 "modulation amplitude or harmonic is off resonance");
    double f1 = refine_minimum(xs1, ys1);
    const double spacing = 2.0 * span / (opts.coarse_points - 1);
    auto [xs2, ys2] = scan(f1, spacing, opts.fine_points);
    const double f_star = refine_minimum(xs2, ys2);

    // Stage 2: the full exchange period on resonance, either measured from a
    // flat-top trace or pinned by a caller-supplied effective coupling.
    double period_ns;
    if (opts.forced_g_eff_mhz) {
        period_ns = 1000.0 / (2.0 * *opts.forced_g_eff_mhz);
    } else {
        ModulationDrive flat;
        flat.phi_p = phi_p;
        flat.f_flux_mhz = f_star;
        flat.theta_m = opts.theta_m;
        flat.duration_ns = 1.45 * pred.tau_flat_ns;
        flat.risetime_ns = 0.0;
        CVec psi0(9, cd(0, 0));
        psi0[pair_idx(1, 1)] = 1.0;
        PopTrace tr = evolve_populations(sys, flat, psi0);
        size_t imin = 0;
        for (size_t i = 1; i < tr.p11.size(); ++i)
            if (tr.p11[i] < tr.p11[imin]) imin = i;
        double t_min = tr.t_ns[imin];
        if (imin > 0 && imin + 1 < tr.p11.size())
            t_min = parabola_vertex(tr.t_ns[imin - 1], tr.t_ns[imin], tr.t_ns[imin + 1],
                                    tr.p11[imin - 1], tr.p11[imin], tr.p11[imin + 1]);
        period_ns = 2.0 * t_min;
    }

    // Stage 3: joint refinement on the full ramped pulse. The ramps sweep the
    // average tunable frequency, so they contribute exchange and level shifts
    // the flat-top period misses. Three knobs close three conditions: the
    // duration zeroes the exchange rotation residue, the drive phase theta_m
    // sets how the two ramp contributions combine (their azimuth in the
    // exchange plane) so their transverse parts cancel, and the flux frequency
    // steers the conditional phase to exactly pi (a closed cycle returns fully
    // at any small detuning, while the detuning tilts the accumulated phase).
    auto u4_of = [&](double f, double th, double dur_ns) {
        ModulationDrive d;
        d.phi_p = phi_p;
        d.f_flux_mhz = f;
        d.theta_m = th;
        d.duration_ns = dur_ns;
        d.risetime_ns = opts.risetime_ns;
        CMat U9 = frame_phases(sys, d.duration_ns / 1000.0) * closed_propagator(sys, d);
        static const int comp[4] = {0, 1, 3, 4};
        CMat u(4, 4);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) u(r, c) = U9(comp[r], comp[c]);
        return u;
    };
    auto cond_of = [](const CMat& u4) {
        return std::arg(u4(3, 3) * u4(0, 0) * std::conj(u4(1, 1)) * std::conj(u4(2, 2)));
    };
    const double min_dur = 2.0 * opts.risetime_ns + 1.0;
    auto leak_of = [&](double f, double th, double dur_ns) {
        return 1.0 - std::norm(u4_of(f, th, dur_ns)(3, 3));
    };
    // Tune the duration to the nearest |11>-return maximum, unless the caller
    // pinned the length through a forced effective coupling.
    const bool forced = opts.forced_g_eff_mhz.has_value();
    auto close_duration = [&](double f, double th, double dur_in, int reps) {
        if (forced) return dur_in;
        double dd = dur_in;
        double h = std::max(0.75, 0.02 * period_ns);
        for (int rep = 0; rep < reps; ++rep) {
            const double y0 = leak_of(f, th, dd - h);
            const double y1 = leak_of(f, th, dd);
            const double y2 = leak_of(f, th, dd + h);
            double v = parabola_vertex(dd - h, dd, dd + h, y0, y1, y2);
            dd = std::clamp(v, std::max(min_dur, dd - 3.0 * h), dd + 3.0 * h);
            h *= 0.35;
        }
        return dd;
    };

    double f_cal = f_star;
    double dur = period_ns + 2.0 * opts.risetime_ns;
    double th_cal = opts.theta_m;
    {
        // Coarse turn-on-phase scan, then a parabola through the best grid
        // neighborhood (the residue is smooth and 2pi-periodic in theta_m).
        const int nth = 12;
        std::vector<double> ths(nth), leaks(nth), durs(nth);
        int best = 0;
        for (int i = 0; i < nth; ++i) {
            ths[static_cast<size_t>(i)] = opts.theta_m + kTwoPi * i / nth;
            durs[static_cast<size_t>(i)] =
                close_duration(f_cal, ths[static_cast<size_t>(i)], dur, 2);
            leaks[static_cast<size_t>(i)] =
                leak_of(f_cal, ths[static_cast<size_t>(i)], durs[static_cast<size_t>(i)]);
            if (leaks[static_cast<size_t>(i)] < leaks[static_cast<size_t>(best)]) best = i;
        }
        const double hth = kTwoPi / nth;
        const double lm = leaks[static_cast<size_t>((best + nth - 1) % nth)];
        const double lp = leaks[static_cast<size_t>((best + 1) % nth)];
        th_cal = parabola_vertex(-hth, 0.0, hth, lm, leaks[static_cast<size_t>(best)], lp) +
                 ths[static_cast<size_t>(best)];
        dur = close_duration(f_cal, th_cal, durs[static_cast<size_t>(best)], 3);
    }
    for (int iter = 0; iter < 5; ++iter) {
        dur = close_duration(f_cal, th_cal, dur, 2);
        // Polish theta_m in the current basin.
        {
            const double h = kTwoPi / 60.0;
            const double y0 = leak_of(f_cal, th_cal - h, dur);
            const double y1 = leak_of(f_cal, th_cal, dur);
            const double y2 = leak_of(f_cal, th_cal + h, dur);
            const double v = parabola_vertex(th_cal - h, th_cal, th_cal + h, y0, y1, y2);
            th_cal = std::clamp(v, th_cal - 2.0 * h, th_cal + 2.0 * h);
        }
        const double miss = wrap_pi(cond_of(u4_of(f_cal, th_cal, dur)) - kPi);
        if (std::abs(miss) < 2e-4 && iter > 0) break;
        const double df = 0.05;
        const double slope = wrap_pi(cond_of(u4_of(f_cal + df, th_cal, dur)) -
                                     cond_of(u4_of(f_cal, th_cal, dur))) /
                             df;
        if (std::abs(slope) < 1e-6) break;
        f_cal -= std::clamp(miss / slope, -0.4, 0.4);
    }
    dur = close_duration(f_cal, th_cal, dur, 2);

    CalibratedGate cal;
    cal.qf = sys.qf;
    cal.qt = sys.qt;
    cal.kind = to_string(kind);
    cal.harmonic = harmonic;
    cal.drive.phi_p = phi_p;
    cal.drive.f_flux_mhz = f_cal;
    cal.drive.theta_m = th_cal;
    cal.drive.duration_ns = dur;
    cal.drive.risetime_ns = opts.risetime_ns;
    // Effective coupling reported through the Table-2 bookkeeping
    // tau = 1/(2 g_eff) + 2*risetime, so it stays comparable to published
    // values; the raw flat-top rate is 1000/(2*period_ns).
    cal.g_eff_mhz = 1000.0 / (2.0 * (dur - 2.0 * opts.risetime_ns));
    cal.device_hash = dev.hash();

    // Stage 3: single-qubit phases via Ramsey with the partner in |0>.
    cal.rz_correction = -ramsey_phase(sys, cal.drive, 0, false).phase;
    cal.rz_correction_fixed = -ramsey_phase(sys, cal.drive, 0, true).phase;

    // Stage 4: closed-system figure of merit for the corrected unitary.
    CMat U4 = calibrated_unitary4(dev, cal);
    double worst = 0.0;
    for (int c = 0; c < 4; ++c) {
        double keep = 0.0;
        for (int r = 0; r < 4; ++r) keep += std::norm(U4(r, c));
        worst = std::max(worst, 1.0 - keep);
    }
    cal.residual_leakage = worst;
    CMat cz = gates::cz4();
    cd ov(0, 0);
    double tt = 0.0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            ov += std::conj(cz(r, c)) * U4(r, c);
            tt += std::norm(U4(r, c));
        }
    cal.achieved_unitary_fidelity = (std::norm(ov) + tt) / 20.0;
    return cal;
}

CMat calibrated_propagator9(const DeviceModel& dev, const CalibratedGate& gate) {
    PairSystem sys = PairSystem::from_device(dev, gate.qf, gate.qt);
    CMat U = rotating_propagator(sys, gate.drive);
    CMat corr = kron(gates::qutrit_level_phase(gate.rz_correction_fixed),
                     gates::qutrit_level_phase(gate.rz_correction));
    return corr * U;
}

CMat calibrated_unitary4(const DeviceModel& dev, const CalibratedGate& gate) {
    CMat U9 = calibrated_propagator9(dev, gate);
    static const int comp[4] = {0, 1, 3, 4};  // |00>,|01>,|10>,|11> in pair indices
    CMat U4(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) U4(r, c) = U9(comp[r], comp[c]);
    return U4;
}

CMat calibrated_channel(const DeviceModel& dev, const CalibratedGate& gate,
                        const std::optional<NoiseChannel>& noise) {
    PairSystem sys = PairSystem::from_device(dev, gate.qf, gate.qt);
    if (!noise) {
        CMat U = calibrated_propagator9(dev, gate);
        return kron(U, cconj(U));
    }
    CMat S = pair_channel(sys, gate.drive, noise);
    CMat corr = kron(gates::qutrit_level_phase(gate.rz_correction_fixed),
                     gates::qutrit_level_phase(gate.rz_correction));
    // Left-compose the diagonal correction: scale row (9a+b) by c_a conj(c_b).
    for (int a = 0; a < 9; ++a)
        for (int b = 0; b < 9; ++b) {
            const cd ph = corr(a, a) * std::conj(corr(b, b));
            cd* row = S.data() + static_cast<size_t>(9 * a + b) * 81;
            for (int c = 0; c < 81; ++c) row[c] *= ph;
        }
    return S;
}

std::string CalibratedGate::to_json() const {
    nlohmann::json j;
    j["schema"] = 1;
    j["kind"] = kind;
    j["harmonic"] = harmonic;
    j["fixed_qubit"] = qf;
    j["tunable_qubit"] = qt;
    j["drive"] = {{"phi_p", drive.phi_p},
                  {"f_flux_mhz", drive.f_flux_mhz},
                  {"theta_m", drive.theta_m},
                  {"duration_ns", drive.duration_ns},
                  {"risetime_ns", drive.risetime_ns},
                  {"phi_dc", drive.phi_dc}};
    j["rz_correction"] = rz_correction;
    j["rz_correction_fixed"] = rz_correction_fixed;
    j["achieved_unitary_fidelity"] = achieved_unitary_fidelity;
    j["residual_leakage"] = residual_leakage;
    j["g_eff_mhz"] = g_eff_mhz;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(device_hash));
    j["device_hash"] = buf;
    return j.dump(2) + "\n";
}

CalibratedGate CalibratedGate::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    CalibratedGate g;
    g.kind = j.at("kind").get<std::string>();
    g.harmonic = j.at("harmonic").get<int>();
    g.qf = j.at("fixed_qubit").get<int>();
    g.qt = j.at("tunable_qubit").get<int>();
    const auto& d = j.at("drive");
    g.drive.phi_p = d.at("phi_p").get<double>();
    g.drive.f_flux_mhz = d.at("f_flux_mhz").get<double>();
    g.drive.theta_m = d.at("theta_m").get<double>();
    g.drive.duration_ns = d.at("duration_ns").get<double>();
    g.drive.risetime_ns = d.at("risetime_ns").get<double>();
    g.drive.phi_dc = d.at("phi_dc").get<double>();
    g.rz_correction = j.at("rz_correction").get<double>();
    g.rz_correction_fixed = j.at("rz_correction_fixed").get<double>();
    g.achieved_unitary_fidelity = j.at("achieved_unitary_fidelity").get<double>();
    g.residual_leakage = j.at("residual_leakage").get<double>();
    g.g_eff_mhz = j.at("g_eff_mhz").get<double>();
    g.device_hash = std::stoull(j.at("device_hash").get<std::string>(), nullptr, 16);
    return g;
}

// ---------------------------------------------------------------------------
// Term-selective interaction-frame propagator

CMat sideband_frame_propagator(const std::vector<SidebandTerm>& terms, double duration_us,
                               double dt_us) {
    if (dt_us <= 0.0) throw std::invalid_argument("sideband_frame_propagator: dt must be positive");
    const int n = std::max(1, static_cast<int>(std::ceil(duration_us / dt_us - 1e-9)));
    CMat U = CMat::identity(9);
    CMat tmp(9, 9);
    for (int k = 0; k < n; ++k) {
        const double t1 = std::min((k + 1) * dt_us, duration_us);
        const double t0 = k * dt_us;
        const double tmid = 0.5 * (t0 + t1);
        CMat H(9, 9);
        for (const auto& term : terms) {
            const cd amp = term.g * std::exp(cd(0, term.delta * tmid + term.phase));
            H(term.bra, term.ket) += amp;
            H(term.ket, term.bra) += std::conj(amp);
        }
        CMat Uk = expm_i_herm(H, t1 - t0);
        gemm9(Uk, U, tmp);
        U = tmp;
    }
    return U;
}

}  // namespace paramgate
