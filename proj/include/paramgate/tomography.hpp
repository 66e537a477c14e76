#pragma once
// Pauli-basis superoperator algebra plus constrained maximum-likelihood state
// and process tomography: design-tensor prediction, multinomial sampling of
// synthetic records, projected-gradient MLE with positivity / trace /
// complete-positivity constraints, fidelity metrics, and the nearest-unitary
// split of a measured process into coherent and decoherent error.
//
// Conventions: the joint computational index packs qubit k at bit n-1-k (the
// first qubit is most significant), matching the readout layer. Pauli-basis
// index m has base-4 digits over qubits in the same order, digit values
// 0..3 = I, X, Y, Z, and every operator is normalized so Tr(P_l P_m) = d_lm.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "paramgate/linalg.hpp"
#include "paramgate/readout.hpp"

namespace paramgate {

// Orthonormal Hermitian operator basis; ops[0] = I/sqrt(d).
struct PauliBasis {
    int n_qubits = 0;
    std::vector<CMat> ops;

    static PauliBasis make(int n_qubits);
    int dim() const { return 1 << n_qubits; }
    int size() const { return int(ops.size()); }
};

// Real expansion coefficients r_m = Tr(P_m rho) and their inverse.
RVec pauli_coeffs(const CMat& rho, const PauliBasis& basis);
CMat matrix_from_coeffs(const RVec& coeffs, const PauliBasis& basis);

// A density matrix plus the diagnostics the MLE attaches to it.
struct DensityState {
    CMat rho;
    double log_likelihood = 0.0;
    double grad_norm = 0.0;
    bool converged = true;
};

// Pauli transfer matrix R_kl = Tr[P_k Lambda(P_l)] with fit diagnostics.
struct ProcessPTM {
    RMat R;
    bool tp_constrained = false;
    bool cp_projected = false;
    double log_likelihood = 0.0;
    double grad_norm = 0.0;
    bool converged = true;
};

// Measurement prescription: the tensored per-qubit post-rotation set
// {I, Rx(pi/2), Ry(pi/2), Rx(pi)}, the POVM the counts are drawn from, and
// the preparation state the pre-rotations act on.
struct TomographySettings {
    int n_qubits = 2;
    std::vector<CMat> rotations;  // 4^n unitaries, index digits follow qubit order
    long shots_per_setting = 3000;
    ReadoutPOVM povm;
    CMat rho0;

    void validate() const;  // rotations unitary, POVM complete, shots >= 1
    int dim() const { return 1 << n_qubits; }
    static TomographySettings standard(int n_qubits, long shots_per_setting = 3000);
    static const std::array<const char*, 4> kRotationNames;  // "I","X90","Y90","X180"
};

// Counted outcomes: n_{jk} for state tomography (outcome j, post-rotation k)
// or n_{jkl} for process tomography (plus pre-rotation l).
struct ExperimentRecord {
    enum class Kind { qst, qpt };
    Kind kind = Kind::qst;
    int n_qubits = 0;
    int n_outcomes = 0;
    int n_post = 0;
    int n_pre = 1;  // always 1 for state tomography
    long shots_per_setting = 0;
    std::string rotation_set = "per-qubit {I, X90, Y90, X180}, tensored";
    std::string povm_ref = "ideal";
    std::vector<long> counts;  // index ((l * n_post) + k) * n_outcomes + j

    long count(int j, int k, int l = 0) const;
    long& count(int j, int k, int l = 0);
    void validate() const;  // counts >= 0 and each setting sums to shots_per_setting
    std::string to_json() const;
    static ExperimentRecord from_json(const std::string& text);
};

// Probabilities with the same indexing as ExperimentRecord counts.
struct ProbTensor {
    int n_outcomes = 0;
    int n_post = 0;
    int n_pre = 1;
    std::vector<double> p;
    double at(int j, int k, int l = 0) const {
        return p[size_t((size_t(l) * size_t(n_post) + size_t(k)) * size_t(n_outcomes) +
                        size_t(j))];
    }
};

// --- Superoperator algebra -------------------------------------------------

// Throws on non-unitary input (tolerance 1e-10). The result is orthogonal.
ProcessPTM ptm_of_unitary(const CMat& u, const PauliBasis& basis);
// Apply the channel described by R to a density matrix.
CMat apply_ptm(const RMat& r, const PauliBasis& basis, const CMat& rho);
// Choi matrix J = (1/d) sum_kl R_kl P_k (x) P_l^T (trace 1 for TP channels;
// J >= 0 iff the channel is completely positive) and its inverse.
CMat choi_of_ptm(const RMat& r, const PauliBasis& basis);
RMat ptm_of_choi(const CMat& choi, const PauliBasis& basis);
// Euclidean projection onto the CP cone: clip negative Choi eigenvalues.
// Idempotent by construction.
RMat project_cp(const RMat& r, const PauliBasis& basis);
// Dykstra alternation between the CP cone and the trace-preservation row
// constraint; returns a point in (numerically) the intersection. tol bounds
// the residual Choi negativity and TP-row error of the returned point.
RMat project_cptp(const RMat& r, const PauliBasis& basis, int max_sweeps = 200,
                  double tol = 1e-12);

// --- Forward model and synthetic data --------------------------------------

ProbTensor predicted_probabilities(const ProcessPTM& r, const TomographySettings& s,
                                   const PauliBasis& basis);
ProbTensor predicted_state_probabilities(const CMat& rho, const TomographySettings& s);

ExperimentRecord sample_qst_record(const CMat& rho, const TomographySettings& s, uint64_t seed);
ExperimentRecord sample_qpt_record(const ProcessPTM& r, const TomographySettings& s,
                                   const PauliBasis& basis, uint64_t seed);

// --- Likelihoods and estimators ---------------------------------------------

// Multinomial log-likelihood of the Pauli coefficient vector (QST) or the
// transfer matrix (QPT); optional analytic gradient. Returns -inf when a
// nonzero count meets a non-positive predicted probability.
double qst_log_likelihood(const ExperimentRecord& rec, const TomographySettings& s,
                          const RVec& rho_coeffs, RVec* grad = nullptr);
double qpt_log_likelihood(const ExperimentRecord& rec, const TomographySettings& s,
                          const PauliBasis& basis, const RMat& r, RMat* grad = nullptr);

struct MleOptions {
    int max_iter = 5000;
    double rel_tol = 1e-10;  // stop when relative likelihood improvement falls below
};

// Projected gradient ascent from a linear-inversion start. Trace is pinned in
// both modes; constrain_positive additionally projects onto the PSD simplex.
// Without the positivity projection the same boundedness caveat as for
// QptConstraints applies: every counted outcome needs positive probability.
DensityState qst_mle(const ExperimentRecord& rec, const TomographySettings& s,
                     bool constrain_positive, const MleOptions& opts = {});

// `none` and `tp` coincide numerically: the multinomial likelihood only
// normalizes when the identity row is pinned, so that row is fixed in every
// mode (see README); `cptp` adds the Choi-positivity projection. Without that
// projection the likelihood is bounded only when every counted outcome keeps
// a strictly positive probability; data taken with a confusion-based POVM
// satisfies this, while ideal-POVM data with deterministic settings does not
// (the estimate then climbs until max_iter and reports converged = false).
enum class QptConstraints { none, tp, cptp };
ProcessPTM qpt_mle(const ExperimentRecord& rec, const TomographySettings& s,
                   QptConstraints constraints, const MleOptions& opts = {});

// --- Metrics ----------------------------------------------------------------

// F = (Tr(R_target^T R)/d + 1)/(d + 1).
double avg_gate_fidelity(const ProcessPTM& r, const ProcessPTM& target);
double state_fidelity(const CMat& rho, const CVec& psi);   // <psi|rho|psi>
double state_fidelity(const CMat& rho, const CMat& sigma); // Uhlmann fidelity

// Nearest-unitary split: V from the polar decomposition of the dominant Choi
// eigenvector reshaped to an operator; coherent infidelity compares V with
// the supplied ideal unitary, decoherent infidelity compares R with PTM(V).
// Throws on a degenerate leading Choi eigenvalue.
struct UnitaryDecomposition {
    CMat v;
    double coherent_infidelity = 0.0;
    double decoherent_infidelity = 0.0;
    double leading_choi_weight = 0.0;
};
UnitaryDecomposition nearest_unitary(const ProcessPTM& r, const PauliBasis& basis,
                                     const CMat& u_ideal);

}  // namespace paramgate
