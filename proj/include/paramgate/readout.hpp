#pragma once
// Dispersive single-shot readout: Gaussian IQ-cloud generator, the
// standardize -> PCA -> per-qubit logistic classification pipeline with
// stratified cross-validation, assignment metrics, and the confusion-matrix
// to POVM export consumed by tomography.
//
// Joint-state convention: a bitstring label packs qubit k (k-th entry of the
// model's qubit list) at bit position n-1-k, so the first listed qubit is the
// most significant bit, matching the kron ordering used for registers.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "paramgate/device.hpp"
#include "paramgate/linalg.hpp"

namespace paramgate {

// One multiplexed readout record: interleaved per-qubit quadratures
// [I0, Q0, I1, Q1, ...] plus the prepared joint bitstring.
struct IQShot {
    std::vector<double> iq;
    int label = 0;
};

// Synthetic stand-in for the device's readout clouds: isotropic Gaussians per
// qubit and state, optional mean shifts when a neighbor is excited, and a
// relaxation flip probability during the readout window.
struct ReadoutSimModel {
    struct Cloud {
        std::array<double, 2> mean0{0.0, 0.0};
        std::array<double, 2> mean1{1.0, 0.0};
        double sigma = 0.5;
        double t1_flip_prob = 0.0;
    };
    std::vector<Cloud> qubits;
    // (observed qubit, excited neighbor) -> offset added to the observed
    // qubit's cloud mean while that neighbor is in |1>.
    std::map<std::pair<int, int>, std::array<double, 2>> crosstalk_shift;

    int n_qubits() const { return int(qubits.size()); }
    void validate() const;

    // Clouds tuned so a matched-threshold Gaussian discriminator reproduces
    // each qubit's tabulated assignment fidelity: separation/sigma =
    // 2 * Phi^-1(F_RO), cloud axis rotated per qubit for variety. No
    // crosstalk, no flips.
    static ReadoutSimModel from_device(const DeviceModel& dev, const std::vector<int>& qubit_ids);
};

// Deterministic cloud sampling; `prepared` uses the bitstring convention
// above. A |1> that relaxes (probability t1_flip_prob) is sampled from the
// ground-state cloud, and neighbor crosstalk offsets follow the prepared
// (post-flip) neighbor state.
std::vector<IQShot> sample_shots(const ReadoutSimModel& model, int prepared, long n,
                                 uint64_t seed);
// Balanced sampling over all 2^n joint states (n_per_state each), shuffled
// deterministically.
std::vector<IQShot> sample_all_states(const ReadoutSimModel& model, long n_per_state,
                                      uint64_t seed);

struct Classifier {
    int n_qubits = 0;
    int n_features = 0;                  // 2 * n_qubits
    std::vector<double> feature_mean;    // standardizer
    std::vector<double> feature_std;
    RMat pca_rotation;                   // orthogonal, rows = components
    std::vector<double> beta0;           // per-qubit intercept
    std::vector<std::vector<double>> beta1;  // per-qubit weights over all features
    std::vector<double> threshold;       // per-qubit t* in (0,1)
    double lambda = 0.0;                 // chosen L2 penalty
    double final_grad_norm = 0.0;        // sup-norm at the last fit
    bool converged = true;

    // Preprocessed feature vector (standardize then rotate).
    std::vector<double> preprocess(const std::vector<double>& iq) const;
    // Logistic score p in (0,1) for one qubit.
    double score(int qubit, const std::vector<double>& iq) const;
    // Joint bitstring prediction (per-qubit thresholds applied independently).
    int predict(const std::vector<double>& iq) const;

    std::string to_json() const;
    static Classifier from_json(const std::string& text);
};

struct TrainOptions {
    int folds = 3;
    std::vector<double> lambda_grid;  // empty -> 10 log points in [1e-4, 1e2]
    double holdout_frac = 0.2;
    uint64_t seed = 42;
    int max_iter = 5000;
    double grad_tol = 1e-8;
};

// Mean cross-entropy of one binary logistic fit with an L2 penalty on the
// weights (intercept unpenalized): J = mean_i CE_i + 0.5 * lambda * |w|^2 / n.
// If `grad` is given it receives [dJ/db0, dJ/dw_0, ...]. This is the exact
// objective train_classifier minimizes per qubit.
double logistic_loss(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                     double b0, const std::vector<double>& w, double lambda,
                     std::vector<double>* grad = nullptr);

// Column-stochastic p(detected j | prepared k) over joint states.
struct ConfusionMatrix {
    RMat P;
    void validate(double tol = 1e-9) const;
    double joint_assignment_fidelity() const;  // Tr(P) / d
    // Marginal 2x2 confusion for one qubit (columns: prepared 0/1).
    RMat qubit_marginal(int qubit, int n_qubits) const;
};

// Per-qubit binary metrics plus the joint confusion matrix.
struct ReadoutMetrics {
    std::vector<double> accuracy, tpr, fpr, precision, f1, auc, ks;
    std::vector<double> f_ro;  // 0.5 * [p(0|0) + p(1|1)] per qubit
    ConfusionMatrix confusion;
};

Classifier train_classifier(const std::vector<IQShot>& shots, int n_qubits,
                            const TrainOptions& opts = {});
ReadoutMetrics evaluate_classifier(const Classifier& c, const std::vector<IQShot>& shots);

// The deterministic stratified split used inside train_classifier, exposed so
// evaluations can reuse the same holdout set: returns (train, holdout).
std::pair<std::vector<IQShot>, std::vector<IQShot>> stratified_split(
    const std::vector<IQShot>& shots, double holdout_frac, uint64_t seed);

// Diagonal POVM over joint computational states.
struct ReadoutPOVM {
    int dim = 0;                     // Hilbert dimension d = 2^n
    std::vector<RVec> element_diag;  // element_diag[j][k] = <k|N_j|k>
    void validate(double tol = 1e-9) const;
    CMat element(int j) const;       // dense d x d
    static ReadoutPOVM ideal(int dim);
};

ReadoutPOVM confusion_to_povm(const ConfusionMatrix& P);
// Symmetric per-qubit confusion built from tabulated readout fidelities
// (p(0|0) = p(1|1) = F_RO), kron-joined over the listed qubits.
ConfusionMatrix confusion_from_fidelities(const DeviceModel& dev,
                                          const std::vector<int>& qubit_ids);

// Shot-file round trip: CSV columns
// shot_index,prepared_bitstring,q0_I,q0_Q,q1_I,q1_Q,...
void save_shots_csv(const std::vector<IQShot>& shots, int n_qubits, const std::string& path);
std::vector<IQShot> load_shots_csv(const std::string& path, int& n_qubits_out);

}  // namespace paramgate
