#include "paramgate/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "paramgate/gates.hpp"
#include "paramgate/rng.hpp"

namespace paramgate {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Every normalized Pauli string has exactly one nonzero per row:
// P(u, col[u]) = val[u], and the column map is an involution. All basis
// contractions below exploit this.
struct SparsePauli {
    std::vector<int> col;
    std::vector<cd> val;
};

std::vector<SparsePauli> make_sparse(int n_qubits) {
    if (n_qubits < 1 || n_qubits > 4)
        throw std::invalid_argument("pauli basis: supported for 1 to 4 qubits");
    const int d = 1 << n_qubits;
    const int m_count = d * d;
    const double norm = 1.0 / std::sqrt(double(d));
    std::vector<SparsePauli> out(static_cast<size_t>(m_count));
    for (int m = 0; m < m_count; ++m) {
        SparsePauli& sp = out[size_t(m)];
        sp.col.resize(size_t(d));
        sp.val.resize(size_t(d));
        for (int u = 0; u < d; ++u) {
            int v = u;
            cd phase(norm, 0.0);
            for (int q = 0; q < n_qubits; ++q) {
                const int digit = (m >> (2 * (n_qubits - 1 - q))) & 3;
                const int bit = (u >> (n_qubits - 1 - q)) & 1;
                switch (digit) {
                    case 0: break;
                    case 1: v ^= 1 << (n_qubits - 1 - q); break;
                    case 2:
                        v ^= 1 << (n_qubits - 1 - q);
                        phase *= bit == 0 ? cd(0.0, -1.0) : cd(0.0, 1.0);
                        break;
                    default:
                        if (bit == 1) phase = -phase;
                        break;
                }
            }
            sp.col[size_t(u)] = v;
            sp.val[size_t(u)] = phase;
        }
    }
    return out;
}

int dim_of_params(int n_params, const char* what) {
    const int d = int(std::lround(std::sqrt(double(n_params))));
    if (d * d != n_params) throw std::invalid_argument(std::string(what) + ": bad dimension");
    return d;
}

// Precomputed prediction tensors: p_{jk}(rho) = sum_m c[(k,j),m] rho_m and
// p_{jkl}(R) = c_{jk}^T R b_l.
struct Design {
    int d = 0, n_out = 0, n_post = 0, n_pre = 1, n_par = 0;
    std::vector<double> c;     // ((k * n_out) + j) * n_par + m
    std::vector<double> prep;  // l * n_par + n
    const double* c_row(int k, int j) const {
        return c.data() + (size_t(k) * size_t(n_out) + size_t(j)) * size_t(n_par);
    }
    const double* prep_row(int l) const { return prep.data() + size_t(l) * size_t(n_par); }
};

Design build_design(const TomographySettings& s, bool with_prep) {
    s.validate();
    const int d = s.dim();
    const auto sp = make_sparse(s.n_qubits);
    Design dg;
    dg.d = d;
    dg.n_out = int(s.povm.element_diag.size());
    dg.n_post = int(s.rotations.size());
    dg.n_pre = with_prep ? int(s.rotations.size()) : 1;
    dg.n_par = d * d;
    dg.c.assign(size_t(dg.n_post) * size_t(dg.n_out) * size_t(dg.n_par), 0.0);
    std::vector<double> diag(static_cast<size_t>(d));
    for (int k = 0; k < dg.n_post; ++k) {
        const CMat& u = s.rotations[size_t(k)];
        for (int m = 0; m < dg.n_par; ++m) {
            // Diagonal of U P_m U^dag; only the diagonal enters because the
            // POVM elements are diagonal in the computational basis.
            for (int t = 0; t < d; ++t) {
                cd acc(0.0, 0.0);
                for (int w = 0; w < d; ++w)
                    acc += u(t, sp[size_t(m)].col[size_t(w)]) * sp[size_t(m)].val[size_t(sp[size_t(m)].col[size_t(w)])] *
                           std::conj(u(t, w));
                diag[size_t(t)] = acc.real();
            }
            for (int j = 0; j < dg.n_out; ++j) {
                double v = 0.0;
                for (int t = 0; t < d; ++t) v += s.povm.element_diag[size_t(j)][size_t(t)] * diag[size_t(t)];
                dg.c[(size_t(k) * size_t(dg.n_out) + size_t(j)) * size_t(dg.n_par) + size_t(m)] = v;
            }
        }
    }
    if (with_prep) {
        dg.prep.assign(size_t(dg.n_pre) * size_t(dg.n_par), 0.0);
        for (int l = 0; l < dg.n_pre; ++l) {
            const CMat& u = s.rotations[size_t(l)];
            const CMat sigma = matmul(matmul(u, s.rho0), dagger(u));
            for (int m = 0; m < dg.n_par; ++m) {
                cd acc(0.0, 0.0);
                for (int w = 0; w < d; ++w)
                    acc += sp[size_t(m)].val[size_t(w)] * sigma(sp[size_t(m)].col[size_t(w)], w);
                dg.prep[size_t(l) * size_t(dg.n_par) + size_t(m)] = acc.real();
            }
        }
    }
    return dg;
}

double qst_like(const Design& dg, const std::vector<long>& counts, const double* x,
                double* grad) {
    if (grad) std::fill(grad, grad + dg.n_par, 0.0);
    double ll = 0.0;
    for (int k = 0; k < dg.n_post; ++k)
        for (int j = 0; j < dg.n_out; ++j) {
            const long n = counts[size_t(k) * size_t(dg.n_out) + size_t(j)];
            if (n == 0) continue;
            const double* row = dg.c_row(k, j);
            double p = 0.0;
            for (int m = 0; m < dg.n_par; ++m) p += row[m] * x[m];
            if (p <= 0.0) return kNegInf;
            ll += double(n) * std::log(p);
            if (grad) {
                const double w = double(n) / p;
                for (int m = 0; m < dg.n_par; ++m) grad[m] += w * row[m];
            }
        }
    return ll;
}

double qpt_like(const Design& dg, const std::vector<long>& counts, const RMat& r, RMat* grad) {
    if (grad) *grad = RMat(dg.n_par, dg.n_par);
    std::vector<double> v(static_cast<size_t>(dg.n_par)), u(static_cast<size_t>(dg.n_par));
    double ll = 0.0;
    for (int l = 0; l < dg.n_pre; ++l) {
        const double* b = dg.prep_row(l);
        for (int m = 0; m < dg.n_par; ++m) {
            double acc = 0.0;
            for (int n2 = 0; n2 < dg.n_par; ++n2) acc += r(m, n2) * b[n2];
            v[size_t(m)] = acc;
        }
        std::fill(u.begin(), u.end(), 0.0);
        for (int k = 0; k < dg.n_post; ++k)
            for (int j = 0; j < dg.n_out; ++j) {
                const long n =
                    counts[(size_t(l) * size_t(dg.n_post) + size_t(k)) * size_t(dg.n_out) +
                           size_t(j)];
                if (n == 0) continue;
                const double* row = dg.c_row(k, j);
                double p = 0.0;
                for (int m = 0; m < dg.n_par; ++m) p += row[m] * v[size_t(m)];
                if (p <= 0.0) return kNegInf;
                ll += double(n) * std::log(p);
                if (grad) {
                    const double w = double(n) / p;
                    for (int m = 0; m < dg.n_par; ++m) u[size_t(m)] += w * row[m];
                }
            }
        if (grad)
            for (int m = 0; m < dg.n_par; ++m)
                for (int n2 = 0; n2 < dg.n_par; ++n2) (*grad)(m, n2) += u[size_t(m)] * b[n2];
    }
    return ll;
}

RMat solve_normal(const RMat& a, const RMat& rhs) {
    // Ridge-regularized symmetric solve through the complex LU helper.
    const int m = a.rows;
    double scale = 0.0;
    for (int i = 0; i < m; ++i) scale = std::max(scale, a(i, i));
    CMat ac(m, m), bc(m, rhs.cols);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) ac(i, j) = a(i, j);
        ac(i, i) += 1e-9 * (scale > 0.0 ? scale : 1.0);
        for (int j = 0; j < rhs.cols; ++j) bc(i, j) = rhs(i, j);
    }
    const CMat x = lu_solve(ac, bc);
    RMat out(m, rhs.cols);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < rhs.cols; ++j) out(i, j) = x(i, j).real();
    return out;
}

CMat clip_psd(const CMat& h) {
    const HermEig e = herm_eig(h);
    CMat out(h.rows, h.cols);
    for (size_t i = 0; i < e.w.size(); ++i) {
        if (e.w[i] <= 0.0) continue;
        for (int a = 0; a < h.rows; ++a)
            for (int b = 0; b < h.cols; ++b)
                out(a, b) += e.w[i] * e.V(a, int(i)) * std::conj(e.V(b, int(i)));
    }
    return out;
}

void pin_tp_row(RMat& r) {
    for (int l = 0; l < r.cols; ++l) r(0, l) = l == 0 ? 1.0 : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Basis and coefficient algebra
// ---------------------------------------------------------------------------

PauliBasis PauliBasis::make(int n_qubits) {
    const auto sp = make_sparse(n_qubits);
    const int d = 1 << n_qubits;
    PauliBasis basis;
    basis.n_qubits = n_qubits;
    basis.ops.reserve(sp.size());
    for (const auto& s : sp) {
        CMat p(d, d);
        for (int u = 0; u < d; ++u) p(u, s.col[size_t(u)]) = s.val[size_t(u)];
        basis.ops.push_back(std::move(p));
    }
    return basis;
}

RVec pauli_coeffs(const CMat& rho, const PauliBasis& basis) {
    const int d = basis.dim();
    if (rho.rows != d || rho.cols != d)
        throw std::invalid_argument("pauli_coeffs: dimension mismatch");
    const auto sp = make_sparse(basis.n_qubits);
    RVec out(sp.size());
    for (size_t m = 0; m < sp.size(); ++m) {
        cd acc(0.0, 0.0);
        for (int u = 0; u < d; ++u) acc += sp[m].val[size_t(u)] * rho(sp[m].col[size_t(u)], u);
        out[m] = acc.real();
    }
    return out;
}

CMat matrix_from_coeffs(const RVec& coeffs, const PauliBasis& basis) {
    const int d = basis.dim();
    if (int(coeffs.size()) != d * d)
        throw std::invalid_argument("matrix_from_coeffs: dimension mismatch");
    const auto sp = make_sparse(basis.n_qubits);
    CMat rho(d, d);
    for (size_t m = 0; m < sp.size(); ++m)
        for (int u = 0; u < d; ++u)
            rho(u, sp[m].col[size_t(u)]) += coeffs[m] * sp[m].val[size_t(u)];
    return rho;
}

// ---------------------------------------------------------------------------
// Superoperator algebra
// ---------------------------------------------------------------------------

ProcessPTM ptm_of_unitary(const CMat& u, const PauliBasis& basis) {
    const int d = basis.dim();
    if (u.rows != d || u.cols != d)
        throw std::invalid_argument("ptm_of_unitary: dimension mismatch");
    CMat uu = matmul(u, dagger(u));
    if (max_abs_diff(uu, CMat::identity(d)) > 1e-10)
        throw std::invalid_argument("ptm_of_unitary: input is not unitary");
    const auto sp = make_sparse(basis.n_qubits);
    const int m_count = d * d;
    ProcessPTM out;
    out.R = RMat(m_count, m_count);
    CMat up(d, d), a(d, d);
    for (int l = 0; l < m_count; ++l) {
        // up = U P_l exploits the single-nonzero column structure of P_l.
        for (int c = 0; c < d; ++c) {
            const int rnz = sp[size_t(l)].col[size_t(c)];
            const cd vnz = sp[size_t(l)].val[size_t(rnz)];
            for (int t = 0; t < d; ++t) up(t, c) = u(t, rnz) * vnz;
        }
        a = matmul(up, dagger(u));
        for (int k = 0; k < m_count; ++k) {
            cd acc(0.0, 0.0);
            for (int w = 0; w < d; ++w)
                acc += sp[size_t(k)].val[size_t(w)] * a(sp[size_t(k)].col[size_t(w)], w);
            out.R(k, l) = acc.real();
        }
    }
    return out;
}

CMat apply_ptm(const RMat& r, const PauliBasis& basis, const CMat& rho) {
    const RVec x = pauli_coeffs(rho, basis);
    if (r.cols != int(x.size())) throw std::invalid_argument("apply_ptm: dimension mismatch");
    RVec y = matvec(r, x);
    return matrix_from_coeffs(y, basis);
}

CMat choi_of_ptm(const RMat& r, const PauliBasis& basis) {
    const int d = basis.dim();
    const int m_count = d * d;
    if (r.rows != m_count || r.cols != m_count)
        throw std::invalid_argument("choi_of_ptm: dimension mismatch");
    const auto sp = make_sparse(basis.n_qubits);
    CMat j(m_count, m_count);
    for (int k = 0; k < m_count; ++k)
        for (int l = 0; l < m_count; ++l) {
            const double coef = r(k, l) / double(d);
            if (coef == 0.0) continue;
            for (int a = 0; a < d; ++a) {
                const int b = sp[size_t(k)].col[size_t(a)];
                const cd va = sp[size_t(k)].val[size_t(a)];
                for (int c = 0; c < d; ++c) {
                    // (P_l^T)(c, e) = P_l(e, c) is nonzero at e = col_l[c].
                    const int e = sp[size_t(l)].col[size_t(c)];
                    const cd vl = sp[size_t(l)].val[size_t(e)];
                    j(a * d + c, b * d + e) += coef * va * vl;
                }
            }
        }
    return j;
}

RMat ptm_of_choi(const CMat& choi, const PauliBasis& basis) {
    const int d = basis.dim();
    const int m_count = d * d;
    if (choi.rows != m_count || choi.cols != m_count)
        throw std::invalid_argument("ptm_of_choi: dimension mismatch");
    const auto sp = make_sparse(basis.n_qubits);
    RMat r(m_count, m_count);
    for (int k = 0; k < m_count; ++k)
        for (int l = 0; l < m_count; ++l) {
            cd acc(0.0, 0.0);
            for (int a = 0; a < d; ++a) {
                const int b = sp[size_t(k)].col[size_t(a)];
                const cd vk = sp[size_t(k)].val[size_t(b)];
                for (int c = 0; c < d; ++c) {
                    const int e = sp[size_t(l)].col[size_t(c)];
                    acc += choi(a * d + c, b * d + e) * vk * sp[size_t(l)].val[size_t(c)];
                }
            }
            r(k, l) = double(d) * acc.real();
        }
    return r;
}

RMat project_cp(const RMat& r, const PauliBasis& basis) {
    return ptm_of_choi(clip_psd(choi_of_ptm(r, basis)), basis);
}

namespace {

// Core Dykstra loop. Returns true when the result is certified feasible:
// exactly trace-preserving and within tol of a completely positive point.
bool dykstra_cptp(RMat& x, const PauliBasis& basis, int max_sweeps, double tol) {
    RMat p(x.rows, x.cols), q(x.rows, x.cols);
    bool certified = false;
    for (int sweep = 0; sweep < max_sweeps && !certified; ++sweep) {
        // CP half-step with memory p.
        const RMat xp = x + p;
        const CMat j = choi_of_ptm(xp, basis);
        const HermEig e = herm_eig(j);
        CMat jc(j.rows, j.cols);
        for (size_t i = 0; i < e.w.size(); ++i) {
            if (e.w[i] <= 0.0) continue;
            for (int a = 0; a < j.rows; ++a)
                for (int b = 0; b < j.cols; ++b)
                    jc(a, b) += e.w[i] * e.V(a, int(i)) * std::conj(e.V(b, int(i)));
        }
        const RMat y = ptm_of_choi(jc, basis);
        p = xp - y;
        // TP half-step with memory q.
        const RMat z = y + q;
        x = z;
        pin_tp_row(x);
        q = z - x;
        // x satisfies the TP row exactly; it is feasible once it coincides
        // with the CP point y. (The pre-clip negativity of x + p does NOT
        // vanish at convergence -- it encodes the dual variable -- so it is
        // not a valid stopping signal.)
        certified = max_abs_diff(x, y) <= tol;
    }
    pin_tp_row(x);
    return certified;
}

}  // namespace

RMat project_cptp(const RMat& r, const PauliBasis& basis, int max_sweeps, double tol) {
    RMat x = r;
    dykstra_cptp(x, basis, max_sweeps, tol);
    return x;
}

// ---------------------------------------------------------------------------
// Settings and records
// ---------------------------------------------------------------------------

const std::array<const char*, 4> TomographySettings::kRotationNames = {"I", "X90", "Y90",
                                                                      "X180"};

void TomographySettings::validate() const {
    if (n_qubits < 1 || n_qubits > 4)
        throw std::invalid_argument("tomography settings: 1 to 4 qubits supported");
    if (shots_per_setting < 1)
        throw std::invalid_argument("tomography settings: shots_per_setting must be >= 1");
    if (rotations.empty()) throw std::invalid_argument("tomography settings: no rotations");
    const int d = dim();
    for (const auto& u : rotations) {
        if (u.rows != d || u.cols != d)
            throw std::invalid_argument("tomography settings: rotation dimension mismatch");
        if (max_abs_diff(matmul(u, dagger(u)), CMat::identity(d)) > 1e-10)
            throw std::invalid_argument("tomography settings: rotation is not unitary");
    }
    if (povm.dim != d) throw std::invalid_argument("tomography settings: POVM dimension mismatch");
    povm.validate(1e-9);
    if (rho0.rows != d || rho0.cols != d)
        throw std::invalid_argument("tomography settings: rho0 dimension mismatch");
}

TomographySettings TomographySettings::standard(int n_qubits, long shots_per_setting) {
    if (n_qubits < 1 || n_qubits > 4)
        throw std::invalid_argument("tomography settings: 1 to 4 qubits supported");
    TomographySettings s;
    s.n_qubits = n_qubits;
    s.shots_per_setting = shots_per_setting;
    const std::array<CMat, 4> base = {CMat::identity(2), gates::rx(M_PI / 2.0),
                                      gates::ry(M_PI / 2.0), gates::rx(M_PI)};
    const int n_set = 1 << (2 * n_qubits);  // 4^n
    for (int k = 0; k < n_set; ++k) {
        CMat u = CMat::identity(1);
        for (int q = 0; q < n_qubits; ++q) {
            const int digit = (k >> (2 * (n_qubits - 1 - q))) & 3;
            u = kron(u, base[size_t(digit)]);
        }
        s.rotations.push_back(std::move(u));
    }
    const int d = 1 << n_qubits;
    s.povm = ReadoutPOVM::ideal(d);
    s.rho0 = CMat(d, d);
    s.rho0(0, 0) = 1.0;
    return s;
}

long ExperimentRecord::count(int j, int k, int l) const {
    return counts[(size_t(l) * size_t(n_post) + size_t(k)) * size_t(n_outcomes) + size_t(j)];
}

long& ExperimentRecord::count(int j, int k, int l) {
    return counts[(size_t(l) * size_t(n_post) + size_t(k)) * size_t(n_outcomes) + size_t(j)];
}

void ExperimentRecord::validate() const {
    if (n_outcomes < 1 || n_post < 1 || n_pre < 1)
        throw std::invalid_argument("experiment record: empty dimensions");
    if (kind == Kind::qst && n_pre != 1)
        throw std::invalid_argument("experiment record: state tomography has no pre-rotations");
    if (counts.size() != size_t(n_outcomes) * size_t(n_post) * size_t(n_pre))
        throw std::invalid_argument("experiment record: count array size mismatch");
    for (int l = 0; l < n_pre; ++l)
        for (int k = 0; k < n_post; ++k) {
            long sum = 0;
            for (int j = 0; j < n_outcomes; ++j) {
                const long c = count(j, k, l);
                if (c < 0) throw std::invalid_argument("experiment record: negative count");
                sum += c;
            }
            if (sum != shots_per_setting)
                throw std::invalid_argument(
                    "experiment record: setting total does not match shots_per_setting");
        }
}

std::string ExperimentRecord::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = kind == Kind::qst ? "qst" : "qpt";
    j["n_qubits"] = n_qubits;
    j["n_outcomes"] = n_outcomes;
    j["n_post"] = n_post;
    j["n_pre"] = n_pre;
    j["shots_per_setting"] = shots_per_setting;
    j["rotation_set"] = rotation_set;
    j["povm_ref"] = povm_ref;
    j["counts"] = counts;
    return j.dump(2);
}

ExperimentRecord ExperimentRecord::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ExperimentRecord rec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "qst")
        rec.kind = Kind::qst;
    else if (kind == "qpt")
        rec.kind = Kind::qpt;
    else
        throw std::runtime_error("experiment record: unknown kind '" + kind + "'");
    rec.n_qubits = j.at("n_qubits").get<int>();
    rec.n_outcomes = j.at("n_outcomes").get<int>();
    rec.n_post = j.at("n_post").get<int>();
    rec.n_pre = j.at("n_pre").get<int>();
    rec.shots_per_setting = j.at("shots_per_setting").get<long>();
    rec.rotation_set = j.value("rotation_set", rec.rotation_set);
    rec.povm_ref = j.value("povm_ref", rec.povm_ref);
    rec.counts = j.at("counts").get<std::vector<long>>();
    rec.validate();
    return rec;
}

// ---------------------------------------------------------------------------
// Forward model and sampling
// ---------------------------------------------------------------------------

ProbTensor predicted_state_probabilities(const CMat& rho, const TomographySettings& s) {
    const Design dg = build_design(s, false);
    const PauliBasis basis = PauliBasis::make(s.n_qubits);
    const RVec x = pauli_coeffs(rho, basis);
    ProbTensor t;
    t.n_outcomes = dg.n_out;
    t.n_post = dg.n_post;
    t.n_pre = 1;
    t.p.assign(size_t(dg.n_out) * size_t(dg.n_post), 0.0);
    for (int k = 0; k < dg.n_post; ++k)
        for (int j = 0; j < dg.n_out; ++j) {
            const double* row = dg.c_row(k, j);
            double p = 0.0;
            for (int m = 0; m < dg.n_par; ++m) p += row[m] * x[size_t(m)];
            t.p[size_t(k) * size_t(dg.n_out) + size_t(j)] = p;
        }
    return t;
}

ProbTensor predicted_probabilities(const ProcessPTM& r, const TomographySettings& s,
                                   const PauliBasis& basis) {
    if (r.R.rows != basis.size())
        throw std::invalid_argument("predicted_probabilities: dimension mismatch");
    const Design dg = build_design(s, true);
    ProbTensor t;
    t.n_outcomes = dg.n_out;
    t.n_post = dg.n_post;
    t.n_pre = dg.n_pre;
    t.p.assign(size_t(dg.n_out) * size_t(dg.n_post) * size_t(dg.n_pre), 0.0);
    std::vector<double> v(static_cast<size_t>(dg.n_par));
    for (int l = 0; l < dg.n_pre; ++l) {
        const double* b = dg.prep_row(l);
        for (int m = 0; m < dg.n_par; ++m) {
            double acc = 0.0;
            for (int n2 = 0; n2 < dg.n_par; ++n2) acc += r.R(m, n2) * b[n2];
            v[size_t(m)] = acc;
        }
        for (int k = 0; k < dg.n_post; ++k)
            for (int j = 0; j < dg.n_out; ++j) {
                const double* row = dg.c_row(k, j);
                double p = 0.0;
                for (int m = 0; m < dg.n_par; ++m) p += row[m] * v[size_t(m)];
                t.p[(size_t(l) * size_t(dg.n_post) + size_t(k)) * size_t(dg.n_out) + size_t(j)] =
                    p;
            }
    }
    return t;
}

namespace {

ExperimentRecord sample_from_tensor(const ProbTensor& t, const TomographySettings& s,
                                    ExperimentRecord::Kind kind, uint64_t seed) {
    ExperimentRecord rec;
    rec.kind = kind;
    rec.n_qubits = s.n_qubits;
    rec.n_outcomes = t.n_outcomes;
    rec.n_post = t.n_post;
    rec.n_pre = t.n_pre;
    rec.shots_per_setting = s.shots_per_setting;
    rec.counts.assign(t.p.size(), 0);
    std::vector<double> probs(static_cast<size_t>(t.n_outcomes));
    for (int l = 0; l < t.n_pre; ++l)
        for (int k = 0; k < t.n_post; ++k) {
            for (int j = 0; j < t.n_outcomes; ++j)
                probs[size_t(j)] = std::max(t.at(j, k, l), 0.0);
            Rng rng(Rng::derive_seed(seed, uint64_t(l) * uint64_t(t.n_post) + uint64_t(k)));
            const std::vector<long> draw = rng.multinomial(s.shots_per_setting, probs);
            for (int j = 0; j < t.n_outcomes; ++j) rec.count(j, k, l) = draw[size_t(j)];
        }
    return rec;
}

}  // namespace

ExperimentRecord sample_qst_record(const CMat& rho, const TomographySettings& s, uint64_t seed) {
    return sample_from_tensor(predicted_state_probabilities(rho, s), s,
                              ExperimentRecord::Kind::qst, seed);
}

ExperimentRecord sample_qpt_record(const ProcessPTM& r, const TomographySettings& s,
                                   const PauliBasis& basis, uint64_t seed) {
    return sample_from_tensor(predicted_probabilities(r, s, basis), s,
                              ExperimentRecord::Kind::qpt, seed);
}

// ---------------------------------------------------------------------------
// Likelihoods and estimators
// ---------------------------------------------------------------------------

double qst_log_likelihood(const ExperimentRecord& rec, const TomographySettings& s,
                          const RVec& rho_coeffs, RVec* grad) {
    rec.validate();
    if (rec.kind != ExperimentRecord::Kind::qst)
        throw std::invalid_argument("qst_log_likelihood: record is not state tomography");
    const Design dg = build_design(s, false);
    if (int(rho_coeffs.size()) != dg.n_par || rec.n_outcomes != dg.n_out ||
        rec.n_post != dg.n_post)
        throw std::invalid_argument("qst_log_likelihood: dimension mismatch");
    if (grad) grad->assign(size_t(dg.n_par), 0.0);
    return qst_like(dg, rec.counts, rho_coeffs.data(), grad ? grad->data() : nullptr);
}

double qpt_log_likelihood(const ExperimentRecord& rec, const TomographySettings& s,
                          const PauliBasis& basis, const RMat& r, RMat* grad) {
    rec.validate();
    if (rec.kind != ExperimentRecord::Kind::qpt)
        throw std::invalid_argument("qpt_log_likelihood: record is not process tomography");
    const Design dg = build_design(s, true);
    if (r.rows != dg.n_par || r.cols != dg.n_par || rec.n_outcomes != dg.n_out ||
        rec.n_post != dg.n_post || rec.n_pre != dg.n_pre)
        throw std::invalid_argument("qpt_log_likelihood: dimension mismatch");
    (void)basis;
    return qpt_like(dg, rec.counts, r, grad);
}

DensityState qst_mle(const ExperimentRecord& rec, const TomographySettings& s,
                     bool constrain_positive, const MleOptions& opts) {
    rec.validate();
    s.validate();
    if (rec.kind != ExperimentRecord::Kind::qst)
        throw std::invalid_argument("qst_mle: record is not state tomography");
    const Design dg = build_design(s, false);
    if (rec.n_outcomes != dg.n_out || rec.n_post != dg.n_post)
        throw std::invalid_argument("qst_mle: record does not match the settings");
    const PauliBasis basis = PauliBasis::make(s.n_qubits);
    const int m_par = dg.n_par;
    const double inv_sqrt_d = 1.0 / std::sqrt(double(dg.d));

    // Linear-inversion start: least squares of C rho = empirical frequencies.
    RMat a(m_par, m_par), rhs(m_par, 1);
    for (int k = 0; k < dg.n_post; ++k)
        for (int j = 0; j < dg.n_out; ++j) {
            const double* row = dg.c_row(k, j);
            const double f =
                double(rec.count(j, k)) / double(rec.shots_per_setting);
            for (int m = 0; m < m_par; ++m) {
                rhs(m, 0) += f * row[m];
                for (int n2 = 0; n2 <= m; ++n2) a(m, n2) += row[m] * row[n2];
            }
        }
    for (int m = 0; m < m_par; ++m)
        for (int n2 = m + 1; n2 < m_par; ++n2) a(m, n2) = a(n2, m);
    const RMat x0 = solve_normal(a, rhs);
    RVec x(static_cast<size_t>(m_par));
    for (int m = 0; m < m_par; ++m) x[size_t(m)] = x0(m, 0);

    auto make_feasible = [&](RVec& v) {
        v[0] = inv_sqrt_d;
        if (constrain_positive) {
            const CMat rho = project_psd_trace(matrix_from_coeffs(v, basis), 1.0);
            v = pauli_coeffs(rho, basis);
        }
    };
    make_feasible(x);

    RVec g(static_cast<size_t>(m_par));
    double ll = qst_like(dg, rec.counts, x.data(), g.data());
    if (ll == kNegInf) {
        // Retreat toward the maximally mixed state until the likelihood is
        // finite; pure linear-inversion starts can sit on a zero-probability
        // boundary.
        RVec mixed(size_t(m_par), 0.0);
        mixed[0] = inv_sqrt_d;
        for (double t : {0.9, 0.5, 0.1, 0.0}) {
            RVec blend(static_cast<size_t>(m_par));
            for (int m = 0; m < m_par; ++m)
                blend[size_t(m)] = t * x[size_t(m)] + (1.0 - t) * mixed[size_t(m)];
            make_feasible(blend);
            ll = qst_like(dg, rec.counts, blend.data(), g.data());
            if (ll > kNegInf) {
                x = blend;
                break;
            }
        }
    }

    DensityState out;
    if (ll == kNegInf) {
        // A counted outcome has zero probability for every candidate state:
        // the likelihood is identically -inf. Report rather than iterate.
        out.rho = matrix_from_coeffs(x, basis);
        out.log_likelihood = kNegInf;
        out.converged = false;
        return out;
    }

    double gmax0 = 0.0;
    for (double v : g) gmax0 = std::max(gmax0, std::abs(v));
    double alpha = 1.0 / (1.0 + gmax0);
    bool converged = false;
    RVec xt(static_cast<size_t>(m_par));
    for (int it = 0; it < opts.max_iter; ++it) {
        RVec gp = g;
        gp[0] = 0.0;  // trace direction is pinned
        alpha = std::min(4.0 * alpha, 1e6);
        bool accepted = false;
        double lt = ll;
        for (int bt = 0; bt < 60 && !accepted; ++bt) {
            for (int m = 0; m < m_par; ++m) xt[size_t(m)] = x[size_t(m)] + alpha * gp[size_t(m)];
            make_feasible(xt);
            // Sufficient-ascent test against the projected displacement, so
            // clipped overshoots are rejected instead of crawling.
            double dirderiv = 0.0;
            for (int m = 0; m < m_par; ++m)
                dirderiv += gp[size_t(m)] * (xt[size_t(m)] - x[size_t(m)]);
            lt = qst_like(dg, rec.counts, xt.data(), nullptr);
            accepted = dirderiv > 0.0 && lt >= ll + 1e-4 * dirderiv;
            if (!accepted) alpha *= 0.5;
        }
        if (!accepted) {
            converged = true;  // no ascent at any step length: stationary
            break;
        }
        const double gain = lt - ll;
        x = xt;
        ll = qst_like(dg, rec.counts, x.data(), g.data());
        if (gain < opts.rel_tol * (std::abs(ll) + 1.0)) {
            converged = true;
            break;
        }
    }

    out.rho = matrix_from_coeffs(x, basis);
    out.log_likelihood = ll;
    double gn = 0.0;
    for (size_t m = 1; m < g.size(); ++m) gn = std::max(gn, std::abs(g[m]));
    out.grad_norm = gn;
    out.converged = converged;
    return out;
}

ProcessPTM qpt_mle(const ExperimentRecord& rec, const TomographySettings& s,
                   QptConstraints constraints, const MleOptions& opts) {
    rec.validate();
    s.validate();
    if (rec.kind != ExperimentRecord::Kind::qpt)
        throw std::invalid_argument("qpt_mle: record is not process tomography");
    const Design dg = build_design(s, true);
    if (rec.n_outcomes != dg.n_out || rec.n_post != dg.n_post || rec.n_pre != dg.n_pre)
        throw std::invalid_argument("qpt_mle: record does not match the settings");
    const PauliBasis basis = PauliBasis::make(s.n_qubits);
    const int m_par = dg.n_par;

    // Linear-inversion start. The least-squares normal matrix factorizes as
    // kron(sum_jk c c^T, sum_l b b^T), so the solve splits into two small
    // symmetric solves.
    RMat ac(m_par, m_par), ab(m_par, m_par), rhs(m_par, m_par);
    for (int k = 0; k < dg.n_post; ++k)
        for (int j = 0; j < dg.n_out; ++j) {
            const double* row = dg.c_row(k, j);
            for (int m = 0; m < m_par; ++m)
                for (int n2 = 0; n2 <= m; ++n2) ac(m, n2) += row[m] * row[n2];
        }
    for (int l = 0; l < dg.n_pre; ++l) {
        const double* b = dg.prep_row(l);
        for (int m = 0; m < m_par; ++m)
            for (int n2 = 0; n2 <= m; ++n2) ab(m, n2) += b[m] * b[n2];
    }
    for (int m = 0; m < m_par; ++m)
        for (int n2 = m + 1; n2 < m_par; ++n2) {
            ac(m, n2) = ac(n2, m);
            ab(m, n2) = ab(n2, m);
        }
    std::vector<double> u(static_cast<size_t>(m_par));
    for (int l = 0; l < dg.n_pre; ++l) {
        const double* b = dg.prep_row(l);
        std::fill(u.begin(), u.end(), 0.0);
        for (int k = 0; k < dg.n_post; ++k)
            for (int j = 0; j < dg.n_out; ++j) {
                const double f = double(rec.count(j, k, l)) / double(rec.shots_per_setting);
                const double* row = dg.c_row(k, j);
                for (int m = 0; m < m_par; ++m) u[size_t(m)] += f * row[m];
            }
        for (int m = 0; m < m_par; ++m)
            for (int n2 = 0; n2 < m_par; ++n2) rhs(m, n2) += u[size_t(m)] * b[n2];
    }
    RMat r = transpose(solve_normal(ab, transpose(solve_normal(ac, rhs))));

    const bool cp = constraints == QptConstraints::cptp;
    // Feasibility map used on every trial point. For cptp it must CERTIFY the
    // result (Dykstra converged), because the multinomial likelihood of an
    // infeasible point is fictitious: accepting one lets the ascent chase
    // likelihoods that evaporate under an honest re-projection.
    auto make_feasible = [&](RMat& m) -> bool {
        if (cp) return dykstra_cptp(m, basis, 400, 1e-12);
        pin_tp_row(m);
        return true;
    };
    RMat depol(m_par, m_par);
    depol(0, 0) = 1.0;  // maximally depolarizing channel; strictly interior
    if (cp) {
        // The linear-inversion start can sit far outside the cone; give it a
        // generous budget, then retreat toward the interior until certified.
        RMat cand = r;
        bool ok = dykstra_cptp(cand, basis, 4000, 1e-12);
        for (double t : {0.5, 0.1, 0.0}) {
            if (ok) break;
            cand = r;
            cand *= t;
            RMat anchor = depol;
            anchor *= (1.0 - t);
            cand += anchor;
            ok = make_feasible(cand);
        }
        r = cand;
    } else {
        pin_tp_row(r);
    }

    RMat g;
    double ll = qpt_like(dg, rec.counts, r, &g);
    if (ll == kNegInf) {
        for (double t : {0.9, 0.5, 0.1, 0.0}) {
            RMat blend = depol;
            blend *= (1.0 - t);
            RMat scaled = r;
            scaled *= t;
            blend += scaled;
            if (!make_feasible(blend)) continue;
            ll = qpt_like(dg, rec.counts, blend, &g);
            if (ll > kNegInf) {
                r = blend;
                break;
            }
        }
    }

    ProcessPTM out;
    out.tp_constrained = constraints != QptConstraints::none;
    out.cp_projected = cp;
    if (ll == kNegInf) {
        out.R = r;
        out.log_likelihood = kNegInf;
        out.converged = false;
        return out;
    }

    double alpha = 0.0;
    bool converged = false;
    for (int it = 0; it < opts.max_iter; ++it) {
        RMat gp = g;
        for (int l = 0; l < m_par; ++l) gp(0, l) = 0.0;  // normalization row is pinned
        double gmax = 0.0;
        for (double v : gp.a) gmax = std::max(gmax, std::abs(v));
        // Cap the raw displacement at O(1) per entry so the trial point stays
        // within easy reach of the cone; larger steps only waste projection
        // sweeps before being rejected as uncertified.
        const double amax = 8.0 / (1.0 + gmax);
        alpha = (it == 0) ? amax : std::min(4.0 * alpha, amax);
        bool accepted = false;
        double lt = ll;
        RMat rt;
        for (int bt = 0; bt < 60 && !accepted; ++bt) {
            rt = gp;
            rt *= alpha;
            rt += r;
            const bool certified = make_feasible(rt);
            double dirderiv = 0.0;
            for (size_t i = 0; i < rt.a.size(); ++i) dirderiv += gp.a[i] * (rt.a[i] - r.a[i]);
            lt = qpt_like(dg, rec.counts, rt, nullptr);
            accepted = certified && dirderiv > 0.0 && lt >= ll + 1e-4 * dirderiv;
            if (!accepted) alpha *= 0.5;
        }
        if (!accepted) {
            converged = true;  // no certified ascent step exists: stationary
            break;
        }
        const double gain = lt - ll;
        r = rt;
        ll = qpt_like(dg, rec.counts, r, &g);
        if (gain < opts.rel_tol * (std::abs(ll) + 1.0)) {
            converged = true;
            break;
        }
    }

    if (cp) {
        r = project_cptp(r, basis, 4000, 1e-12);
        ll = qpt_like(dg, rec.counts, r, &g);
    }
    out.R = r;
    out.log_likelihood = ll;
    double gn = 0.0;
    for (int m = 1; m < m_par; ++m)
        for (int n2 = 0; n2 < m_par; ++n2) gn = std::max(gn, std::abs(g(m, n2)));
    out.grad_norm = gn;
    out.converged = converged;
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double avg_gate_fidelity(const ProcessPTM& r, const ProcessPTM& target) {
    if (r.R.rows != target.R.rows || r.R.cols != target.R.cols || r.R.rows != r.R.cols)
        throw std::invalid_argument("avg_gate_fidelity: dimension mismatch");
    const int d = dim_of_params(r.R.rows, "avg_gate_fidelity");
    const double tr = trace(matmul(transpose(target.R), r.R));
    return (tr / double(d) + 1.0) / (double(d) + 1.0);
}

double state_fidelity(const CMat& rho, const CVec& psi) {
    if (rho.rows != int(psi.size()) || rho.rows != rho.cols)
        throw std::invalid_argument("state_fidelity: dimension mismatch");
    cd acc(0.0, 0.0);
    for (int a = 0; a < rho.rows; ++a)
        for (int b = 0; b < rho.cols; ++b) acc += std::conj(psi[size_t(a)]) * rho(a, b) * psi[size_t(b)];
    return acc.real();
}

double state_fidelity(const CMat& rho, const CMat& sigma) {
    if (rho.rows != sigma.rows || rho.cols != sigma.cols || rho.rows != rho.cols)
        throw std::invalid_argument("state_fidelity: dimension mismatch");
    const HermEig e = herm_eig(rho);
    CMat root(rho.rows, rho.cols);
    for (size_t i = 0; i < e.w.size(); ++i) {
        const double w = std::sqrt(std::max(e.w[i], 0.0));
        if (w == 0.0) continue;
        for (int a = 0; a < rho.rows; ++a)
            for (int b = 0; b < rho.cols; ++b)
                root(a, b) += w * e.V(a, int(i)) * std::conj(e.V(b, int(i)));
    }
    const CMat m = matmul(matmul(root, sigma), root);
    const HermEig em = herm_eig(m);
    double f = 0.0;
    for (double w : em.w) f += std::sqrt(std::max(w, 0.0));
    return f * f;
}

UnitaryDecomposition nearest_unitary(const ProcessPTM& r, const PauliBasis& basis,
                                     const CMat& u_ideal) {
    const int d = basis.dim();
    if (r.R.rows != basis.size())
        throw std::invalid_argument("nearest_unitary: dimension mismatch");
    const CMat j = choi_of_ptm(r.R, basis);
    const HermEig e = herm_eig(j);  // ascending
    const int top = j.rows - 1;
    const double lead = e.w[size_t(top)];
    const double next = e.w[size_t(top - 1)];
    if (lead - next < 1e-6 * std::max(lead, 1e-12))
        throw std::runtime_error("nearest_unitary: leading Choi eigenvalue is degenerate");
    CMat kmat(d, d);
    for (int a = 0; a < d; ++a)
        for (int c = 0; c < d; ++c) kmat(a, c) = e.V(a * d + c, top);
    UnitaryDecomposition out;
    out.v = polar_unitary(kmat);
    out.leading_choi_weight = lead;
    const ProcessPTM rv = ptm_of_unitary(out.v, basis);
    out.coherent_infidelity = 1.0 - avg_gate_fidelity(rv, ptm_of_unitary(u_ideal, basis));
    out.decoherent_infidelity = 1.0 - avg_gate_fidelity(r, rv);
    return out;
}

}  // namespace paramgate
