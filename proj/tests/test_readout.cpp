#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "paramgate/device.hpp"
#include "paramgate/readout.hpp"
#include "paramgate/rng.hpp"

using namespace paramgate;

namespace {

const std::string kConfig = std::string(PARAMGATE_REPO_DIR) + "/configs/ring8.cfg";

// Single qubit with clouds separated along I by `sep`, both isotropic sigma.
ReadoutSimModel one_qubit(double sep, double sigma) {
    ReadoutSimModel m;
    ReadoutSimModel::Cloud c;
    c.mean0 = {0.0, 0.0};
    c.mean1 = {sep, 0.0};
    c.sigma = sigma;
    m.qubits.push_back(c);
    return m;
}

ReadoutSimModel two_qubit(double sep, double sigma) {
    ReadoutSimModel m;
    for (int q = 0; q < 2; ++q) {
        ReadoutSimModel::Cloud c;
        c.mean0 = {0.0, 0.0};
        c.mean1 = {sep * (q == 0 ? 1.0 : 0.6), sep * (q == 0 ? 0.0 : 0.8)};
        c.sigma = sigma;
        m.qubits.push_back(c);
    }
    return m;
}

double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Tie-aware trapezoidal ROC integral, written independently of the library's
// rank-statistic implementation.
double auc_trapezoid(std::vector<std::pair<double, int>> scored) {
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    double tp = 0, fp = 0, tp_prev = 0, fp_prev = 0, area = 0;
    size_t i = 0;
    while (i < scored.size()) {
        size_t j = i;
        double gpos = 0, gneg = 0;
        while (j < scored.size() && scored[j].first == scored[i].first) {
            (scored[j].second ? gpos : gneg) += 1.0;
            ++j;
        }
        tp += gpos;
        fp += gneg;
        area += (fp - fp_prev) * 0.5 * (tp + tp_prev);
        tp_prev = tp;
        fp_prev = fp;
        i = j;
    }
    if (tp == 0 || fp == 0) return 0.5;
    return area / (tp * fp);
}

}  // namespace

TEST_CASE("cloud sampling is deterministic and tracks the prepared state") {
    ReadoutSimModel m = two_qubit(5.0, 0.4);

    auto a = sample_shots(m, 2, 500, 7);  // |10>
    auto b = sample_shots(m, 2, 500, 7);
    REQUIRE(a.size() == 500);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == 2);
        CHECK(a[i].iq == b[i].iq);  // bit-identical replay
    }
    auto c = sample_shots(m, 2, 500, 8);
    CHECK(a[0].iq != c[0].iq);

    // Prepared |10>: qubit 0 (most significant bit) sits on its excited
    // cloud, qubit 1 on its ground cloud.
    double i0 = 0, i1 = 0;
    for (const auto& s : a) {
        i0 += s.iq[0];
        i1 += s.iq[2];
    }
    CHECK(i0 / 500.0 == doctest::Approx(5.0).epsilon(0.02));
    CHECK(std::abs(i1 / 500.0) < 0.1);

    SUBCASE("relaxation flips send a prepared |1> to the ground cloud") {
        m.qubits[0].t1_flip_prob = 0.3;
        auto f = sample_shots(m, 2, 20000, 11);
        long low = 0;
        for (const auto& s : f)
            if (s.iq[0] < 2.5) ++low;
        CHECK(double(low) / 20000.0 == doctest::Approx(0.3).epsilon(0.05));
    }

    SUBCASE("crosstalk offsets follow the neighbor's state") {
        m.crosstalk_shift[{1, 0}] = {0.9, -0.4};  // qubit 1 shifts when qubit 0 is excited
        auto hot = sample_shots(m, 2, 20000, 13);   // |10>: neighbor excited
        auto cold = sample_shots(m, 0, 20000, 13);  // |00>: neighbor grounded
        double dh = 0, dc = 0;
        for (long i = 0; i < 20000; ++i) {
            dh += hot[size_t(i)].iq[2];
            dc += cold[size_t(i)].iq[2];
        }
        CHECK((dh - dc) / 20000.0 == doctest::Approx(0.9).epsilon(0.02));
    }
}

TEST_CASE("well-separated clouds classify perfectly") {
    ReadoutSimModel m = two_qubit(1.0, 1e-3);
    auto shots = sample_all_states(m, 800, 21);
    Classifier c = train_classifier(shots, 2);
    for (double t : c.threshold) {
        CHECK(t > 0.0);
        CHECK(t < 1.0);
    }

    auto eval = sample_all_states(m, 500, 22);
    ReadoutMetrics met = evaluate_classifier(c, eval);
    for (int q = 0; q < 2; ++q) {
        CHECK(met.accuracy[size_t(q)] == 1.0);
        CHECK(met.f1[size_t(q)] == 1.0);
        CHECK(met.auc[size_t(q)] == 1.0);
        CHECK(met.fpr[size_t(q)] == 0.0);
    }
    CHECK(met.confusion.joint_assignment_fidelity() == 1.0);
    met.confusion.validate(1e-12);
}

TEST_CASE("overlapping symmetric clouds reproduce the matched-filter limit") {
    // separation/sigma = 2: the optimal linear discriminator assigns
    // correctly with probability Phi(1) ~ 0.8413.
    ReadoutSimModel m = one_qubit(1.0, 0.5);
    auto shots = sample_all_states(m, 50000, 31);
    Classifier c = train_classifier(shots, 1);

    CHECK(c.threshold[0] == doctest::Approx(0.5).epsilon(0.1));
    CHECK(std::abs(c.threshold[0] - 0.5) < 0.05);

    auto [train, hold] = stratified_split(shots, 0.2, 42);
    ReadoutMetrics met = evaluate_classifier(c, hold);
    CHECK(met.confusion.joint_assignment_fidelity() ==
          doctest::Approx(phi_cdf(1.0)).epsilon(0.012));
    CHECK(met.f_ro[0] == doctest::Approx(phi_cdf(1.0)).epsilon(0.012));

    SUBCASE("rank-statistic AUC equals the trapezoidal ROC integral") {
        std::vector<std::pair<double, int>> scored;
        for (const auto& s : hold) scored.push_back({c.score(0, s.iq), s.label & 1});
        CHECK(met.auc[0] == doctest::Approx(auc_trapezoid(scored)).epsilon(1e-6));
        CHECK(met.auc[0] > 0.9);  // strongly informative score
    }
}

TEST_CASE("logistic loss gradient matches central finite differences") {
    Rng rng(99);
    const int p = 3;
    std::vector<std::vector<double>> x(40, std::vector<double>(p));
    std::vector<int> y(40);
    for (size_t i = 0; i < x.size(); ++i) {
        for (auto& v : x[i]) v = 2.0 * rng.uniform() - 1.0;
        y[i] = rng.uniform() < 0.5 ? 0 : 1;
    }
    const double lambda = 0.37;
    for (int trial = 0; trial < 10; ++trial) {
        double b0 = rng.normal();
        std::vector<double> w(p);
        for (auto& v : w) v = rng.normal();
        std::vector<double> grad;
        logistic_loss(x, y, b0, w, lambda, &grad);
        const double h = 1e-5;
        auto fd = [&](int k) {
            double bp = b0, bm = b0;
            std::vector<double> wp = w, wm = w;
            if (k == 0) {
                bp += h;
                bm -= h;
            } else {
                wp[size_t(k - 1)] += h;
                wm[size_t(k - 1)] -= h;
            }
            return (logistic_loss(x, y, bp, wp, lambda) - logistic_loss(x, y, bm, wm, lambda)) /
                   (2.0 * h);
        };
        for (int k = 0; k <= p; ++k) CHECK(std::abs(grad[size_t(k)] - fd(k)) < 1e-6);
    }
}

TEST_CASE("uninformative features score at chance level") {
    ReadoutSimModel m = one_qubit(0.0, 0.5);  // identical clouds for both states
    auto shots = sample_all_states(m, 5000, 41);
    Classifier c = train_classifier(shots, 1);
    ReadoutMetrics met = evaluate_classifier(c, shots);
    CHECK(met.auc[0] == doctest::Approx(0.5).epsilon(0.04));
    CHECK(std::abs(met.auc[0] - 0.5) < 0.02);
}

TEST_CASE("synthetic device clouds reproduce the tabulated assignment fidelities") {
    DeviceModel dev = load_device(kConfig);
    // Best and worst readout performers on the ring.
    ReadoutSimModel m = ReadoutSimModel::from_device(dev, {0, 5});
    auto shots = sample_all_states(m, 2500, 51);
    Classifier c = train_classifier(shots, 2);
    auto eval = sample_all_states(m, 2500, 52);
    ReadoutMetrics met = evaluate_classifier(c, eval);
    CHECK(met.f_ro[0] == doctest::Approx(0.950).epsilon(0.011));
    CHECK(met.f_ro[1] == doctest::Approx(0.873).epsilon(0.012));
    CHECK(std::abs(met.f_ro[0] - 0.950) < 0.01);
    CHECK(std::abs(met.f_ro[1] - 0.873) < 0.01);
}

TEST_CASE("confusion matrices convert to readout POVMs") {
    SUBCASE("identity confusion gives the projective measurement") {
        ConfusionMatrix cm{RMat::identity(4)};
        ReadoutPOVM p = confusion_to_povm(cm);
        p.validate(1e-15);
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k)
                CHECK(p.element_diag[size_t(j)][size_t(k)] == (j == k ? 1.0 : 0.0));
    }
    SUBCASE("asymmetric single-qubit confusion unrolls by definition") {
        ConfusionMatrix cm{RMat(2, 2)};
        cm.P(0, 0) = 0.95;
        cm.P(1, 0) = 0.05;
        cm.P(1, 1) = 0.93;
        cm.P(0, 1) = 0.07;
        ReadoutPOVM p = confusion_to_povm(cm);
        CHECK(p.element_diag[0][0] == doctest::Approx(0.95));
        CHECK(p.element_diag[0][1] == doctest::Approx(0.07));
        CHECK(p.element_diag[1][0] == doctest::Approx(0.05));
        CHECK(p.element_diag[1][1] == doctest::Approx(0.93));
        CHECK(cm.joint_assignment_fidelity() == doctest::Approx(0.94));
    }
    SUBCASE("random stochastic matrices give complete POVMs") {
        Rng rng(77);
        const int d = 8;
        ConfusionMatrix cm{RMat(d, d)};
        for (int k = 0; k < d; ++k) {
            double sum = 0;
            for (int j = 0; j < d; ++j) {
                cm.P(j, k) = rng.uniform();
                sum += cm.P(j, k);
            }
            for (int j = 0; j < d; ++j) cm.P(j, k) /= sum;
        }
        ReadoutPOVM p = confusion_to_povm(cm);
        for (int k = 0; k < d; ++k) {
            double sum = 0;
            for (int j = 0; j < d; ++j) sum += p.element_diag[size_t(j)][size_t(k)];
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
        p.validate(1e-12);
    }
    SUBCASE("tabulated fidelities kron-join into a symmetric confusion") {
        DeviceModel dev = load_device(kConfig);
        ConfusionMatrix cm = confusion_from_fidelities(dev, {0, 1});
        cm.validate(1e-12);
        CHECK(cm.P.rows == 4);
        CHECK(cm.P(0, 0) == doctest::Approx(0.950 * 0.932));
        // Tr(kron(A, B)) = Tr(A) Tr(B), so the joint fidelity factorizes.
        CHECK(cm.joint_assignment_fidelity() == doctest::Approx(0.950 * 0.932));
        // marginals recover the per-qubit fidelities
        RMat m0 = cm.qubit_marginal(0, 2);
        CHECK(0.5 * (m0(0, 0) + m0(1, 1)) == doctest::Approx(0.950));
        RMat m1 = cm.qubit_marginal(1, 2);
        CHECK(0.5 * (m1(0, 0) + m1(1, 1)) == doctest::Approx(0.932));
    }
}

TEST_CASE("training is bit-identical across runs") {
    ReadoutSimModel m = two_qubit(1.2, 0.5);
    auto shots = sample_all_states(m, 600, 61);
    Classifier a = train_classifier(shots, 2);
    Classifier b = train_classifier(shots, 2);
    CHECK(a.to_json() == b.to_json());
    CHECK(a.beta0 == b.beta0);
    CHECK(a.beta1 == b.beta1);
    CHECK(a.threshold == b.threshold);
    CHECK(a.pca_rotation.a == b.pca_rotation.a);
}

TEST_CASE("preprocessing decorrelates and orthogonality holds") {
    ReadoutSimModel m = two_qubit(1.0, 0.5);
    m.crosstalk_shift[{0, 1}] = {0.5, 0.3};  // correlate qubit 0's record with qubit 1's state
    auto shots = sample_all_states(m, 1500, 71);
    Classifier c = train_classifier(shots, 2);

    const int p = c.n_features;
    // Orthogonality of the learned rotation.
    RMat rrt = matmul(c.pca_rotation, transpose(c.pca_rotation));
    CHECK(max_abs_diff(rrt, RMat::identity(p)) < 1e-10);

    // Reconstruct the training split the trainer used and check that the
    // projected features are empirically uncorrelated.
    auto [train, hold] = stratified_split(shots, 0.2, 42);
    std::vector<std::vector<double>> z;
    for (const auto& s : train) z.push_back(c.preprocess(s.iq));
    std::vector<double> mean(size_t(p), 0.0);
    for (const auto& v : z)
        for (int j = 0; j < p; ++j) mean[size_t(j)] += v[size_t(j)];
    for (auto& v : mean) v /= double(z.size());
    RMat cov(p, p);
    for (const auto& v : z)
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b)
                cov(a, b) += (v[size_t(a)] - mean[size_t(a)]) * (v[size_t(b)] - mean[size_t(b)]);
    cov *= 1.0 / double(z.size() - 1);
    for (int a = 0; a < p; ++a)
        for (int b = 0; b < p; ++b)
            if (a != b) CHECK(std::abs(cov(a, b)) < 1e-8);
}

TEST_CASE("assignment fidelity is monotone in cloud separation") {
    double prev = -1.0;
    for (double sep : {0.25, 0.5, 0.75, 1.0, 1.25}) {
        ReadoutSimModel m = one_qubit(sep, 0.5);
        auto shots = sample_all_states(m, 5000, 81);
        Classifier c = train_classifier(shots, 1);
        auto [train, hold] = stratified_split(shots, 0.2, 42);
        ReadoutMetrics met = evaluate_classifier(c, hold);
        const double f = met.confusion.joint_assignment_fidelity();
        CHECK(f >= prev);
        prev = f;
    }
    CHECK(prev > 0.85);  // widest rung is nearly separable
}

TEST_CASE("confusion assembled from per-shot predictions matches the evaluator") {
    ReadoutSimModel m = two_qubit(1.0, 0.45);
    auto shots = sample_all_states(m, 700, 91);
    Classifier c = train_classifier(shots, 2);
    auto eval = sample_all_states(m, 400, 92);
    ReadoutMetrics met = evaluate_classifier(c, eval);

    RMat counts(4, 4);
    std::vector<double> col(4, 0.0);
    for (const auto& s : eval) {
        counts(c.predict(s.iq), s.label) += 1.0;
        col[size_t(s.label)] += 1.0;
    }
    double tr = 0.0;
    for (int k = 0; k < 4; ++k) tr += counts(k, k) / col[size_t(k)];
    CHECK(met.confusion.joint_assignment_fidelity() == tr / 4.0);
    for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k)
            CHECK(met.confusion.P(j, k) == counts(j, k) / col[size_t(k)]);
}

TEST_CASE("shot csv and classifier json round-trip") {
    ReadoutSimModel m = two_qubit(1.1, 0.5);
    auto shots = sample_all_states(m, 40, 101);
    const std::string path = "readout_shots_roundtrip.csv";
    save_shots_csv(shots, 2, path);
    int nq = 0;
    auto back = load_shots_csv(path, nq);
    std::remove(path.c_str());
    CHECK(nq == 2);
    REQUIRE(back.size() == shots.size());
    for (size_t i = 0; i < shots.size(); ++i) {
        CHECK(back[i].label == shots[i].label);
        CHECK(back[i].iq == shots[i].iq);  // 17 significant digits round-trip exactly
    }

    Classifier c = train_classifier(shots, 2);
    Classifier d = Classifier::from_json(c.to_json());
    CHECK(d.beta0 == c.beta0);
    CHECK(d.beta1 == c.beta1);
    CHECK(d.threshold == c.threshold);
    CHECK(d.lambda == c.lambda);
    for (const auto& s : shots) CHECK(d.predict(s.iq) == c.predict(s.iq));
}

TEST_CASE("bad inputs are rejected") {
    ReadoutSimModel m = one_qubit(1.0, 0.5);
    auto only_zero = sample_shots(m, 0, 200, 3);
    CHECK_THROWS_AS((void)train_classifier(only_zero, 1), std::invalid_argument);

    ReadoutSimModel bad = m;
    bad.qubits[0].sigma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS((void)sample_shots(m, 2, 10, 1), std::invalid_argument);

    ConfusionMatrix cm{RMat(2, 2)};
    cm.P(0, 0) = 0.9;
    cm.P(1, 0) = 0.2;  // column sums to 1.1
    cm.P(1, 1) = 1.0;
    CHECK_THROWS_AS(cm.validate(), std::invalid_argument);

    ReadoutPOVM p = ReadoutPOVM::ideal(2);
    p.element_diag[0][0] = -0.2;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    int nq = 0;
    CHECK_THROWS_AS((void)load_shots_csv("no_such_shot_file.csv", nq), std::runtime_error);
}
