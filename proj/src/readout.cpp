#include "paramgate/readout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "paramgate/rng.hpp"

namespace paramgate {
namespace {

constexpr double kPi = 3.14159265358979323846;

// Bit position of qubit `q` inside an n-qubit joint label (first qubit is the
// most significant bit; see the header).
int bit_of(int label, int q, int n) { return (label >> (n - 1 - q)) & 1; }

// Inverse standard-normal CDF by damped Newton on Phi; accurate to ~1e-14
// over the fidelity range we feed it.
double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("norm_quantile: p outside (0,1)");
    double x = 0.0;
    for (int it = 0; it < 80; ++it) {
        const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
        const double step = (cdf - p) / std::max(pdf, 1e-300);
        x -= std::clamp(step, -1.0, 1.0);
        if (std::abs(step) < 1e-14) break;
    }
    return x;
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Deterministic Fisher-Yates using the project generator.
template <typename T>
void shuffle_with(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = size_t(rng.uniform() * double(i));
        if (j >= i) j = i - 1;
        std::swap(v[i - 1], v[j]);
    }
}

// Regularized mean cross-entropy over a flat row-major feature block;
// identical objective to the public logistic_loss.
double flat_logistic_loss(const double* x, const int* y, size_t n, int p, double b0,
                          const double* w, double lambda, double* grad) {
    if (grad) std::fill(grad, grad + p + 1, 0.0);
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double* xi = x + i * size_t(p);
        double t = b0;
        for (int j = 0; j < p; ++j) t += w[j] * xi[j];
        // log(1 + e^t) - y t, computed without overflow
        loss += (t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t))) -
                (y[i] ? t : 0.0);
        if (grad) {
            const double r = sigmoid(t) - double(y[i]);
            grad[0] += r;
            for (int j = 0; j < p; ++j) grad[j + 1] += r * xi[j];
        }
    }
    const double inv = n ? 1.0 / double(n) : 0.0;
    double w2 = 0.0;
    for (int j = 0; j < p; ++j) w2 += w[j] * w[j];
    loss = loss * inv + 0.5 * lambda * inv * w2;
    if (grad) {
        for (int j = 0; j <= p; ++j) grad[j] *= inv;
        for (int j = 0; j < p; ++j) grad[j + 1] += lambda * inv * w[j];
    }
    return loss;
}

struct LogisticFit {
    double b0 = 0.0;
    std::vector<double> w;
    double grad_norm = 0.0;
    bool converged = false;
};

// Full-batch gradient descent with Armijo backtracking; the step size warm
// starts from twice the last accepted step so well-conditioned fits take
// near-constant work per iteration.
LogisticFit fit_logistic(const std::vector<double>& x, const std::vector<int>& y, int p,
                         double lambda, int max_iter, double grad_tol) {
    const size_t n = y.size();
    LogisticFit fit;
    fit.w.assign(size_t(p), 0.0);
    std::vector<double> g(size_t(p) + 1), w_try(static_cast<size_t>(p));
    double loss = flat_logistic_loss(x.data(), y.data(), n, p, fit.b0, fit.w.data(), lambda,
                                     g.data());
    auto gmax = [&] {
        double m = 0.0;
        for (double v : g) m = std::max(m, std::abs(v));
        return m;
    };
    double gnorm = gmax();
    double alpha = 1.0;
    for (int it = 0; it < max_iter && gnorm >= grad_tol; ++it) {
        double g2 = 0.0;
        for (double v : g) g2 += v * v;
        alpha = std::min(2.0 * alpha, 4.0);
        double b0_try = fit.b0, loss_try = loss;
        bool accepted = false;
        for (int bt = 0; bt < 60 && !accepted; ++bt) {
            b0_try = fit.b0 - alpha * g[0];
            for (int j = 0; j < p; ++j) w_try[size_t(j)] = fit.w[size_t(j)] - alpha * g[size_t(j) + 1];
            loss_try = flat_logistic_loss(x.data(), y.data(), n, p, b0_try, w_try.data(), lambda,
                                          nullptr);
            accepted = loss_try <= loss - 1e-4 * alpha * g2;
            if (!accepted) alpha *= 0.5;
        }
        if (!accepted) break;  // step underflow: no further progress possible
        fit.b0 = b0_try;
        fit.w = w_try;
        loss = flat_logistic_loss(x.data(), y.data(), n, p, fit.b0, fit.w.data(), lambda,
                                  g.data());
        gnorm = gmax();
    }
    fit.grad_norm = gnorm;
    fit.converged = gnorm < grad_tol;
    return fit;
}

// Threshold maximizing the Kolmogorov-Smirnov separation between the score
// distributions of the two classes. Returns (t*, KS).
std::pair<double, double> ks_best_threshold(std::vector<std::pair<double, int>> scored) {
    long npos = 0, nneg = 0;
    for (const auto& [s, y] : scored) (y ? npos : nneg)++;
    if (npos == 0 || nneg == 0 || scored.size() < 2) return {0.5, 0.0};
    std::sort(scored.begin(), scored.end());
    double best_t = 0.5, best_ks = 0.0;
    long cpos = 0, cneg = 0;
    for (size_t i = 0; i < scored.size();) {
        size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) {
            (scored[j].second ? cpos : cneg)++;
            ++j;
        }
        if (j == scored.size()) break;  // everything below: KS back to 0
        const double ks =
            std::abs(double(cpos) / double(npos) - double(cneg) / double(nneg));
        if (ks > best_ks) {
            best_ks = ks;
            best_t = 0.5 * (scored[j - 1].first + scored[j].first);
        }
        i = j;
    }
    return {best_t, best_ks};
}

// Mann-Whitney rank statistic with average ranks on ties; equals the area
// under the ROC curve.
double auc_rank(std::vector<std::pair<double, int>> scored) {
    double npos = 0, nneg = 0;
    for (const auto& [s, y] : scored) (y ? npos : nneg) += 1.0;
    if (npos == 0.0 || nneg == 0.0) return 0.5;
    std::sort(scored.begin(), scored.end());
    double rank_sum = 0.0;
    for (size_t i = 0; i < scored.size();) {
        size_t j = i;
        long pos_in_tie = 0;
        while (j < scored.size() && scored[j].first == scored[i].first) {
            pos_in_tie += scored[j].second;
            ++j;
        }
        rank_sum += 0.5 * double(i + 1 + j) * double(pos_in_tie);  // 1-based avg rank
        i = j;
    }
    return (rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Cloud model and sampling
// ---------------------------------------------------------------------------

void ReadoutSimModel::validate() const {
    if (qubits.empty()) throw std::invalid_argument("readout model: no qubits");
    for (const auto& c : qubits) {
        if (!(c.sigma > 0.0)) throw std::invalid_argument("readout model: sigma must be positive");
        if (c.t1_flip_prob < 0.0 || c.t1_flip_prob > 1.0)
            throw std::invalid_argument("readout model: flip probability outside [0,1]");
    }
    for (const auto& [key, shift] : crosstalk_shift) {
        (void)shift;
        const auto [obs, nb] = key;
        if (obs < 0 || obs >= n_qubits() || nb < 0 || nb >= n_qubits() || obs == nb)
            throw std::invalid_argument("readout model: bad crosstalk qubit pair");
    }
}

ReadoutSimModel ReadoutSimModel::from_device(const DeviceModel& dev,
                                             const std::vector<int>& qubit_ids) {
    ReadoutSimModel m;
    int k = 0;
    for (int q : qubit_ids) {
        const double f = std::clamp(dev.qubit(q).readout_fidelity, 0.5 + 1e-9, 1.0 - 1e-9);
        Cloud c;
        c.sigma = 0.5;
        // A matched threshold between two isotropic clouds assigns correctly
        // with probability Phi(separation / (2 sigma)).
        const double sep = 2.0 * c.sigma * norm_quantile(f);
        const double angle = 0.55 * double(k + 1);
        c.mean0 = {0.0, 0.0};
        c.mean1 = {sep * std::cos(angle), sep * std::sin(angle)};
        m.qubits.push_back(c);
        ++k;
    }
    return m;
}

std::vector<IQShot> sample_shots(const ReadoutSimModel& model, int prepared, long n,
                                 uint64_t seed) {
    model.validate();
    const int nq = model.n_qubits();
    if (prepared < 0 || prepared >= (1 << nq))
        throw std::invalid_argument("sample_shots: prepared bitstring out of range");
    Rng rng(Rng::derive_seed(seed, uint64_t(prepared)));
    std::vector<IQShot> out;
    out.reserve(size_t(std::max<long>(n, 0)));
    std::vector<int> state(static_cast<size_t>(nq));
    for (long i = 0; i < n; ++i) {
        for (int q = 0; q < nq; ++q) {
            state[size_t(q)] = bit_of(prepared, q, nq);
            if (state[size_t(q)] == 1 && model.qubits[size_t(q)].t1_flip_prob > 0.0 &&
                rng.uniform() < model.qubits[size_t(q)].t1_flip_prob)
                state[size_t(q)] = 0;
        }
        IQShot s;
        s.label = prepared;
        s.iq.resize(size_t(2 * nq));
        for (int q = 0; q < nq; ++q) {
            const auto& c = model.qubits[size_t(q)];
            std::array<double, 2> mu = state[size_t(q)] ? c.mean1 : c.mean0;
            for (const auto& [key, shift] : model.crosstalk_shift)
                if (key.first == q && state[size_t(key.second)] == 1) {
                    mu[0] += shift[0];
                    mu[1] += shift[1];
                }
            s.iq[size_t(2 * q)] = mu[0] + c.sigma * rng.normal();
            s.iq[size_t(2 * q + 1)] = mu[1] + c.sigma * rng.normal();
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<IQShot> sample_all_states(const ReadoutSimModel& model, long n_per_state,
                                      uint64_t seed) {
    const int d = 1 << model.n_qubits();
    std::vector<IQShot> out;
    out.reserve(size_t(d) * size_t(std::max<long>(n_per_state, 0)));
    for (int s = 0; s < d; ++s) {
        auto v = sample_shots(model, s, n_per_state, Rng::derive_seed(seed, 0xA110u + uint64_t(s)));
        out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
    }
    Rng rng(Rng::derive_seed(seed, 0x51u));
    shuffle_with(out, rng);
    return out;
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

std::vector<double> Classifier::preprocess(const std::vector<double>& iq) const {
    if (int(iq.size()) != n_features)
        throw std::invalid_argument("classifier: feature vector has the wrong length");
    std::vector<double> z(static_cast<size_t>(n_features)), out(size_t(n_features), 0.0);
    for (int j = 0; j < n_features; ++j)
        z[size_t(j)] = (iq[size_t(j)] - feature_mean[size_t(j)]) / feature_std[size_t(j)];
    for (int r = 0; r < n_features; ++r) {
        double acc = 0.0;
        for (int j = 0; j < n_features; ++j) acc += pca_rotation(r, j) * z[size_t(j)];
        out[size_t(r)] = acc;
    }
    return out;
}

double Classifier::score(int qubit, const std::vector<double>& iq) const {
    const std::vector<double> z = preprocess(iq);
    double t = beta0[size_t(qubit)];
    for (int j = 0; j < n_features; ++j) t += beta1[size_t(qubit)][size_t(j)] * z[size_t(j)];
    return sigmoid(t);
}

int Classifier::predict(const std::vector<double>& iq) const {
    const std::vector<double> z = preprocess(iq);
    int label = 0;
    for (int q = 0; q < n_qubits; ++q) {
        double t = beta0[size_t(q)];
        for (int j = 0; j < n_features; ++j) t += beta1[size_t(q)][size_t(j)] * z[size_t(j)];
        if (sigmoid(t) >= threshold[size_t(q)]) label |= 1 << (n_qubits - 1 - q);
    }
    return label;
}

std::string Classifier::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["n_qubits"] = n_qubits;
    j["n_features"] = n_features;
    j["feature_mean"] = feature_mean;
    j["feature_std"] = feature_std;
    std::vector<std::vector<double>> rot(size_t(pca_rotation.rows),
                                         std::vector<double>(size_t(pca_rotation.cols)));
    for (int r = 0; r < pca_rotation.rows; ++r)
        for (int c = 0; c < pca_rotation.cols; ++c) rot[size_t(r)][size_t(c)] = pca_rotation(r, c);
    j["pca_rotation"] = rot;
    j["beta0"] = beta0;
    j["beta1"] = beta1;
    j["threshold"] = threshold;
    j["lambda"] = lambda;
    j["final_grad_norm"] = final_grad_norm;
    j["converged"] = converged;
    return j.dump(2);
}

Classifier Classifier::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    Classifier c;
    c.n_qubits = j.at("n_qubits").get<int>();
    c.n_features = j.at("n_features").get<int>();
    c.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    c.feature_std = j.at("feature_std").get<std::vector<double>>();
    const auto rot = j.at("pca_rotation").get<std::vector<std::vector<double>>>();
    c.pca_rotation = RMat(int(rot.size()), rot.empty() ? 0 : int(rot[0].size()));
    for (int r = 0; r < c.pca_rotation.rows; ++r)
        for (int col = 0; col < c.pca_rotation.cols; ++col)
            c.pca_rotation(r, col) = rot[size_t(r)][size_t(col)];
    c.beta0 = j.at("beta0").get<std::vector<double>>();
    c.beta1 = j.at("beta1").get<std::vector<std::vector<double>>>();
    c.threshold = j.at("threshold").get<std::vector<double>>();
    c.lambda = j.at("lambda").get<double>();
    c.final_grad_norm = j.at("final_grad_norm").get<double>();
    c.converged = j.at("converged").get<bool>();
    if (int(c.feature_mean.size()) != c.n_features || int(c.beta0.size()) != c.n_qubits ||
        c.pca_rotation.rows != c.n_features)
        throw std::runtime_error("classifier json: inconsistent dimensions");
    return c;
}

double logistic_loss(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                     double b0, const std::vector<double>& w, double lambda,
                     std::vector<double>* grad) {
    const size_t n = x.size();
    const int p = int(w.size());
    if (y.size() != n) throw std::invalid_argument("logistic_loss: label/feature size mismatch");
    std::vector<double> flat;
    flat.reserve(n * size_t(p));
    for (const auto& xi : x) {
        if (int(xi.size()) != p)
            throw std::invalid_argument("logistic_loss: feature row has the wrong length");
        flat.insert(flat.end(), xi.begin(), xi.end());
    }
    if (grad) {
        grad->assign(size_t(p) + 1, 0.0);
        return flat_logistic_loss(flat.data(), y.data(), n, p, b0, w.data(), lambda,
                                  grad->data());
    }
    return flat_logistic_loss(flat.data(), y.data(), n, p, b0, w.data(), lambda, nullptr);
}

std::pair<std::vector<IQShot>, std::vector<IQShot>> stratified_split(
    const std::vector<IQShot>& shots, double holdout_frac, uint64_t seed) {
    if (holdout_frac < 0.0 || holdout_frac >= 1.0)
        throw std::invalid_argument("stratified_split: holdout fraction outside [0,1)");
    std::map<int, std::vector<size_t>> by_label;
    for (size_t i = 0; i < shots.size(); ++i) by_label[shots[i].label].push_back(i);
    std::vector<char> in_holdout(shots.size(), 0);
    for (auto& [label, idx] : by_label) {
        Rng rng(Rng::derive_seed(seed, 0x57A7u + uint64_t(label)));
        shuffle_with(idx, rng);
        size_t n_hold = size_t(std::llround(holdout_frac * double(idx.size())));
        n_hold = std::min(n_hold, idx.size() - 1);  // keep at least one training shot per class
        for (size_t i = 0; i < n_hold; ++i) in_holdout[idx[i]] = 1;
    }
    std::pair<std::vector<IQShot>, std::vector<IQShot>> out;
    for (size_t i = 0; i < shots.size(); ++i)
        (in_holdout[i] ? out.second : out.first).push_back(shots[i]);
    return out;
}

Classifier train_classifier(const std::vector<IQShot>& shots, int n_qubits,
                            const TrainOptions& opts) {
    if (n_qubits <= 0) throw std::invalid_argument("train_classifier: need at least one qubit");
    const int p = 2 * n_qubits;
    if (shots.empty()) throw std::invalid_argument("train_classifier: no shots");
    std::vector<long> class_count(size_t(1) << n_qubits, 0);
    for (const auto& s : shots) {
        if (int(s.iq.size()) != p)
            throw std::invalid_argument("train_classifier: feature vector has the wrong length");
        if (s.label < 0 || s.label >= (1 << n_qubits))
            throw std::invalid_argument("train_classifier: label out of range");
        class_count[size_t(s.label)]++;
    }
    for (long cnt : class_count)
        if (cnt == 0)
            throw std::invalid_argument(
                "train_classifier: every joint basis state must appear in the training data");

    auto [train, holdout] = stratified_split(shots, opts.holdout_frac, opts.seed);
    const size_t n = train.size();

    Classifier c;
    c.n_qubits = n_qubits;
    c.n_features = p;

    // Standardizer from the training split only.
    c.feature_mean.assign(size_t(p), 0.0);
    c.feature_std.assign(size_t(p), 0.0);
    for (const auto& s : train)
        for (int j = 0; j < p; ++j) c.feature_mean[size_t(j)] += s.iq[size_t(j)];
    for (int j = 0; j < p; ++j) c.feature_mean[size_t(j)] /= double(n);
    for (const auto& s : train)
        for (int j = 0; j < p; ++j) {
            const double d = s.iq[size_t(j)] - c.feature_mean[size_t(j)];
            c.feature_std[size_t(j)] += d * d;
        }
    for (int j = 0; j < p; ++j) {
        c.feature_std[size_t(j)] = std::sqrt(c.feature_std[size_t(j)] / double(n > 1 ? n - 1 : 1));
        if (c.feature_std[size_t(j)] < 1e-12) c.feature_std[size_t(j)] = 1.0;
    }

    // Full-rank PCA rotation of the standardized features: covariance
    // eigenvectors ordered by descending eigenvalue, each row's
    // largest-magnitude entry made positive so the rotation is unique.
    {
        RMat cov(p, p);
        std::vector<double> z(static_cast<size_t>(p));
        for (const auto& s : train) {
            for (int j = 0; j < p; ++j)
                z[size_t(j)] =
                    (s.iq[size_t(j)] - c.feature_mean[size_t(j)]) / c.feature_std[size_t(j)];
            for (int a = 0; a < p; ++a)
                for (int b = 0; b < p; ++b) cov(a, b) += z[size_t(a)] * z[size_t(b)];
        }
        cov *= 1.0 / double(n > 1 ? n - 1 : 1);
        CMat h(p, p);
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b) h(a, b) = cov(a, b);
        const HermEig eig = herm_eig(h);  // ascending eigenvalues
        c.pca_rotation = RMat(p, p);
        for (int r = 0; r < p; ++r) {
            const int src = p - 1 - r;
            int arg = 0;
            double best = -1.0;
            for (int j = 0; j < p; ++j)
                if (std::abs(eig.V(j, src).real()) > best) {
                    best = std::abs(eig.V(j, src).real());
                    arg = j;
                }
            const double sgn = eig.V(arg, src).real() < 0.0 ? -1.0 : 1.0;
            for (int j = 0; j < p; ++j) c.pca_rotation(r, j) = sgn * eig.V(j, src).real();
        }
    }

    // Preprocess the training split once into a flat row-major block; the
    // same projected features serve every qubit's fit and every fold.
    std::vector<double> zt(n * size_t(p));
    for (size_t i = 0; i < n; ++i) {
        const std::vector<double> z = c.preprocess(train[i].iq);
        std::copy(z.begin(), z.end(), zt.begin() + long(i * size_t(p)));
    }
    auto label_bit = [&](const IQShot& s, int q) { return bit_of(s.label, q, n_qubits); };

    std::vector<double> grid = opts.lambda_grid;
    if (grid.empty())
        for (int i = 0; i < 10; ++i) grid.push_back(std::pow(10.0, -4.0 + 6.0 * double(i) / 9.0));

    // Stratified fold assignment: deterministic shuffle within each joint
    // label, folds dealt round-robin.
    std::vector<int> fold(n, 0);
    {
        std::map<int, std::vector<size_t>> by_label;
        for (size_t i = 0; i < n; ++i) by_label[train[i].label].push_back(i);
        for (auto& [label, idx] : by_label) {
            Rng rng(Rng::derive_seed(opts.seed, 0xF01Du + uint64_t(label)));
            shuffle_with(idx, rng);
            for (size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = int(i % size_t(opts.folds));
        }
    }

    // Cross-validated penalty choice: accuracy of the 0.5-threshold decision
    // on the held-out fold, averaged over folds and qubits. CV refits get a
    // looser stopping rule than the final fit; the ranking is insensitive.
    struct FoldData {
        std::vector<double> x;                // flat training features for this fold
        std::vector<std::vector<int>> y;      // per-qubit labels, aligned with x
        std::vector<size_t> val;              // validation row indices into zt
    };
    std::vector<FoldData> fold_data(size_t(opts.folds));
    for (int f = 0; f < opts.folds; ++f) {
        FoldData& fd = fold_data[size_t(f)];
        fd.y.assign(size_t(n_qubits), {});
        for (size_t i = 0; i < n; ++i) {
            if (fold[i] == f) {
                fd.val.push_back(i);
            } else {
                fd.x.insert(fd.x.end(), zt.begin() + long(i * size_t(p)),
                            zt.begin() + long((i + 1) * size_t(p)));
                for (int q = 0; q < n_qubits; ++q)
                    fd.y[size_t(q)].push_back(label_bit(train[i], q));
            }
        }
    }
    const int cv_iter = std::min(opts.max_iter, 400);
    const double cv_tol = std::max(opts.grad_tol, 1e-5);
    double best_acc = -1.0;
    c.lambda = grid.front();
    for (double lam : grid) {
        double correct = 0.0, total = 0.0;
        for (const FoldData& fd : fold_data) {
            if (fd.x.empty() || fd.val.empty()) continue;
            for (int q = 0; q < n_qubits; ++q) {
                const LogisticFit fit =
                    fit_logistic(fd.x, fd.y[size_t(q)], p, lam, cv_iter, cv_tol);
                for (size_t i : fd.val) {
                    double t = fit.b0;
                    const double* zi = zt.data() + i * size_t(p);
                    for (int j = 0; j < p; ++j) t += fit.w[size_t(j)] * zi[j];
                    correct += (sigmoid(t) >= 0.5) == (label_bit(train[i], q) == 1) ? 1.0 : 0.0;
                    total += 1.0;
                }
            }
        }
        const double acc = total > 0.0 ? correct / total : 0.0;
        if (acc > best_acc + 1e-12) {
            best_acc = acc;
            c.lambda = lam;
        }
    }

    // Final per-qubit fits on the whole training split.
    c.beta0.assign(size_t(n_qubits), 0.0);
    c.beta1.assign(size_t(n_qubits), {});
    c.final_grad_norm = 0.0;
    c.converged = true;
    for (int q = 0; q < n_qubits; ++q) {
        std::vector<int> y(n);
        for (size_t i = 0; i < n; ++i) y[i] = label_bit(train[i], q);
        const LogisticFit fit = fit_logistic(zt, y, p, c.lambda, opts.max_iter, opts.grad_tol);
        c.beta0[size_t(q)] = fit.b0;
        c.beta1[size_t(q)] = fit.w;
        c.final_grad_norm = std::max(c.final_grad_norm, fit.grad_norm);
        c.converged = c.converged && fit.converged;
    }

    // Per-qubit decision thresholds from the holdout scores (training scores
    // if no holdout was requested).
    c.threshold.assign(size_t(n_qubits), 0.5);
    const std::vector<IQShot>& thr_set = holdout.empty() ? train : holdout;
    for (int q = 0; q < n_qubits; ++q) {
        std::vector<std::pair<double, int>> scored;
        scored.reserve(thr_set.size());
        for (const auto& s : thr_set) scored.push_back({c.score(q, s.iq), label_bit(s, q)});
        c.threshold[size_t(q)] = ks_best_threshold(std::move(scored)).first;
    }
    return c;
}

ReadoutMetrics evaluate_classifier(const Classifier& c, const std::vector<IQShot>& shots) {
    const int nq = c.n_qubits;
    const int d = 1 << nq;
    if (shots.empty()) throw std::invalid_argument("evaluate_classifier: no shots");

    RMat counts(d, d);
    std::vector<double> col(size_t(d), 0.0);
    std::vector<std::vector<std::pair<double, int>>> scored(static_cast<size_t>(nq));
    std::vector<double> tp(size_t(nq), 0.0), fp_(size_t(nq), 0.0), tn(size_t(nq), 0.0),
        fn(size_t(nq), 0.0);

    for (const auto& s : shots) {
        const std::vector<double> z = c.preprocess(s.iq);
        int pred = 0;
        for (int q = 0; q < nq; ++q) {
            double t = c.beta0[size_t(q)];
            for (int j = 0; j < c.n_features; ++j)
                t += c.beta1[size_t(q)][size_t(j)] * z[size_t(j)];
            const double sc = sigmoid(t);
            const int bit = sc >= c.threshold[size_t(q)] ? 1 : 0;
            const int y = bit_of(s.label, q, nq);
            if (bit) pred |= 1 << (nq - 1 - q);
            scored[size_t(q)].push_back({sc, y});
            (y ? (bit ? tp : fn) : (bit ? fp_ : tn))[size_t(q)] += 1.0;
        }
        counts(pred, s.label) += 1.0;
        col[size_t(s.label)] += 1.0;
    }

    ReadoutMetrics m;
    m.confusion.P = RMat(d, d);
    for (int k = 0; k < d; ++k) {
        if (col[size_t(k)] > 0.0)
            for (int j = 0; j < d; ++j) m.confusion.P(j, k) = counts(j, k) / col[size_t(k)];
        else
            m.confusion.P(k, k) = 1.0;  // unobserved prepared state: assume ideal
    }

    for (int q = 0; q < nq; ++q) {
        const double pos = tp[size_t(q)] + fn[size_t(q)], neg = fp_[size_t(q)] + tn[size_t(q)];
        m.accuracy.push_back((tp[size_t(q)] + tn[size_t(q)]) / double(shots.size()));
        m.tpr.push_back(pos > 0.0 ? tp[size_t(q)] / pos : 0.0);
        m.fpr.push_back(neg > 0.0 ? fp_[size_t(q)] / neg : 0.0);
        const double denom = tp[size_t(q)] + fp_[size_t(q)];
        const double prec = denom > 0.0 ? tp[size_t(q)] / denom : 1.0;
        m.precision.push_back(prec);
        const double rec = m.tpr.back();
        m.f1.push_back(prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0);
        m.auc.push_back(auc_rank(scored[size_t(q)]));
        m.ks.push_back(ks_best_threshold(scored[size_t(q)]).second);
        const RMat marg = m.confusion.qubit_marginal(q, nq);
        m.f_ro.push_back(0.5 * (marg(0, 0) + marg(1, 1)));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Confusion matrices and POVMs
// ---------------------------------------------------------------------------

void ConfusionMatrix::validate(double tol) const {
    if (P.rows != P.cols || P.rows < 1)
        throw std::invalid_argument("confusion matrix: must be square");
    for (int k = 0; k < P.cols; ++k) {
        double sum = 0.0;
        for (int j = 0; j < P.rows; ++j) {
            if (P(j, k) < -tol || P(j, k) > 1.0 + tol)
                throw std::invalid_argument("confusion matrix: entry outside [0,1]");
            sum += P(j, k);
        }
        if (std::abs(sum - 1.0) > tol)
            throw std::invalid_argument("confusion matrix: column does not sum to 1");
    }
}

double ConfusionMatrix::joint_assignment_fidelity() const { return trace(P) / double(P.rows); }

RMat ConfusionMatrix::qubit_marginal(int qubit, int n_qubits) const {
    const int d = P.rows;
    if (d != (1 << n_qubits)) throw std::invalid_argument("confusion marginal: dimension mismatch");
    RMat m(2, 2);
    for (int k = 0; k < d; ++k)
        for (int j = 0; j < d; ++j)
            m(bit_of(j, qubit, n_qubits), bit_of(k, qubit, n_qubits)) += P(j, k);
    m *= 1.0 / double(d / 2);  // average over the 2^(n-1) prepared states per bit value
    return m;
}

void ReadoutPOVM::validate(double tol) const {
    if (dim < 1 || element_diag.empty()) throw std::invalid_argument("povm: empty");
    for (const auto& e : element_diag)
        if (int(e.size()) != dim) throw std::invalid_argument("povm: element size mismatch");
    for (int k = 0; k < dim; ++k) {
        double sum = 0.0;
        for (const auto& e : element_diag) {
            if (e[size_t(k)] < -tol) throw std::invalid_argument("povm: negative element");
            sum += e[size_t(k)];
        }
        if (std::abs(sum - 1.0) > tol)
            throw std::invalid_argument("povm: elements do not sum to the identity");
    }
}

CMat ReadoutPOVM::element(int j) const {
    CMat e(dim, dim);
    for (int k = 0; k < dim; ++k) e(k, k) = element_diag[size_t(j)][size_t(k)];
    return e;
}

ReadoutPOVM ReadoutPOVM::ideal(int dim) {
    ReadoutPOVM p;
    p.dim = dim;
    p.element_diag.assign(size_t(dim), RVec(size_t(dim), 0.0));
    for (int j = 0; j < dim; ++j) p.element_diag[size_t(j)][size_t(j)] = 1.0;
    return p;
}

ReadoutPOVM confusion_to_povm(const ConfusionMatrix& cm) {
    cm.validate(1e-6);
    ReadoutPOVM p;
    p.dim = cm.P.rows;
    p.element_diag.assign(size_t(p.dim), RVec(size_t(p.dim), 0.0));
    // N_j = sum_k p(j|k) |k><k|
    for (int j = 0; j < p.dim; ++j)
        for (int k = 0; k < p.dim; ++k) p.element_diag[size_t(j)][size_t(k)] = cm.P(j, k);
    return p;
}

ConfusionMatrix confusion_from_fidelities(const DeviceModel& dev,
                                          const std::vector<int>& qubit_ids) {
    if (qubit_ids.empty())
        throw std::invalid_argument("confusion_from_fidelities: no qubits listed");
    RMat P = RMat::identity(1);
    for (int q : qubit_ids) {
        const double f = dev.qubit(q).readout_fidelity;
        RMat m(2, 2);
        m(0, 0) = f;
        m(1, 1) = f;
        m(0, 1) = 1.0 - f;
        m(1, 0) = 1.0 - f;
        P = kron(P, m);
    }
    return ConfusionMatrix{P};
}

// ---------------------------------------------------------------------------
// Shot files
// ---------------------------------------------------------------------------

void save_shots_csv(const std::vector<IQShot>& shots, int n_qubits, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "shot_index,prepared_bitstring";
    for (int q = 0; q < n_qubits; ++q) f << ",q" << q << "_I,q" << q << "_Q";
    f << '\n' << std::setprecision(17);
    for (size_t i = 0; i < shots.size(); ++i) {
        const auto& s = shots[i];
        if (int(s.iq.size()) != 2 * n_qubits)
            throw std::invalid_argument("save_shots_csv: feature vector has the wrong length");
        f << i << ',';
        for (int q = 0; q < n_qubits; ++q) f << bit_of(s.label, q, n_qubits);
        for (double v : s.iq) f << ',' << v;
        f << '\n';
    }
    if (!f) throw std::runtime_error("failed writing " + path);
}

std::vector<IQShot> load_shots_csv(const std::string& path, int& n_qubits_out) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::string field;
        std::istringstream ss(line);
        while (std::getline(ss, field, ',')) out.push_back(field);
        return out;
    };
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(path + ": empty shot file");
    const auto header = split(line);
    if (header.size() < 4 || header[0] != "shot_index" || header[1] != "prepared_bitstring" ||
        (header.size() - 2) % 2 != 0)
        throw std::runtime_error(path + ": unrecognized shot file header");
    const int nq = int(header.size() - 2) / 2;
    n_qubits_out = nq;
    std::vector<IQShot> shots;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split(line);
        if (int(fields.size()) != 2 + 2 * nq)
            throw std::runtime_error(path + ": wrong number of columns in a shot row");
        IQShot s;
        const std::string& bits = fields[1];
        if (int(bits.size()) != nq)
            throw std::runtime_error(path + ": prepared bitstring has the wrong length");
        s.label = 0;
        for (int q = 0; q < nq; ++q) {
            if (bits[size_t(q)] != '0' && bits[size_t(q)] != '1')
                throw std::runtime_error(path + ": prepared bitstring must be binary");
            if (bits[size_t(q)] == '1') s.label |= 1 << (nq - 1 - q);
        }
        s.iq.reserve(size_t(2 * nq));
        for (int j = 0; j < 2 * nq; ++j) s.iq.push_back(std::stod(fields[size_t(2 + j)]));
        shots.push_back(std::move(s));
    }
    return shots;
}

}  // namespace paramgate
