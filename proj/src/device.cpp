#include "paramgate/device.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace paramgate {

namespace {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("device: " + msg); }

} // namespace

FluxResponse FluxResponse::from_extremes(double f01_max, double f01_min, double eta) {
    if (!(f01_min > 0.0) || !(f01_max > f01_min))
        fail("flux response needs 0 < f01_min < f01_max");
    if (!(eta > 0.0)) fail("flux response needs positive anharmonicity");
    FluxResponse r;
    r.f01_max_mhz = f01_max;
    r.f01_min_mhz = f01_min;
    r.eta_mhz = eta;
    const double ratio = (f01_min + eta) / (f01_max + eta);
    r.d = ratio * ratio;
    return r;
}

double FluxResponse::freq_mhz(double phi) const {
    const double c = std::cos(M_PI * phi);
    const double inner = d * d + (1.0 - d * d) * c * c;
    return (f01_max_mhz + eta_mhz) * std::pow(inner, 0.25) - eta_mhz;
}

double QubitParams::f01_mhz(double phi) const {
    if (!tunable) return f01_max_mhz;
    return flux_response().freq_mhz(phi);
}

FluxResponse QubitParams::flux_response() const {
    if (!tunable)
        fail("qubit " + std::to_string(index) + " is not flux-tunable");
    return FluxResponse::from_extremes(f01_max_mhz, f01_min_mhz, eta_mhz);
}

const QubitParams& DeviceModel::qubit(int i) const {
    if (i < 0 || i >= int(qubits.size()))
        fail("qubit index " + std::to_string(i) + " out of range");
    return qubits[size_t(i)];
}

const CouplingEdge* DeviceModel::edge_between(int a, int b) const {
    if (a > b) std::swap(a, b);
    for (const auto& e : edges)
        if (e.a == a && e.b == b) return &e;
    return nullptr;
}

double DeviceModel::chi_between_khz(int gate_qubit, int spectator) const {
    auto it = chi_khz.find({gate_qubit, spectator});
    return it == chi_khz.end() ? 0.0 : it->second;
}

double DeviceModel::avg_freq_mhz(int q, double phi_p, double f_flux_mhz, int samples) const {
    (void)f_flux_mhz;
    return modulation_averages(q, phi_p, samples).mean_mhz;
}

ModulationAverages DeviceModel::modulation_averages(int q, double phi_p, int samples) const {
    const FluxResponse resp = qubit(q).flux_response();
    if (phi_p < 0.0 || phi_p > 0.5)
        fail("modulation amplitude phi_p = " + std::to_string(phi_p) + " outside [0, 0.5]");
    double a0 = 0.0, a2c = 0.0, a2s = 0.0, a4c = 0.0, a4s = 0.0;
    for (int k = 0; k < samples; ++k) {
        const double th = 2.0 * M_PI * double(k) / double(samples);
        const double f = resp.freq_mhz(0.5 + phi_p * std::cos(th));
        a0 += f;
        a2c += f * std::cos(2.0 * th);
        a2s += f * std::sin(2.0 * th);
        a4c += f * std::cos(4.0 * th);
        a4s += f * std::sin(4.0 * th);
    }
    ModulationAverages out;
    out.mean_mhz = a0 / samples;
    out.eps_mhz = 2.0 * std::hypot(a2c, a2s) / samples;
    out.second_harm_mhz = 2.0 * std::hypot(a4c, a4s) / samples;
    return out;
}

uint64_t DeviceModel::hash() const {
    const std::string s = to_config_string();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string DeviceModel::to_config_string() const {
    std::ostringstream os;
    os << "schema_version " << schema_version << "\n";
    os << "name " << name << "\n";
    for (const auto& q : qubits) {
        os << "\n[qubit " << q.index << "]\n";
        os << "kind " << (q.tunable ? "tunable" : "fixed") << "\n";
        os << "readout_freq_mhz " << fmt_g17(q.readout_freq_mhz) << "\n";
        os << "f01_max_mhz " << fmt_g17(q.f01_max_mhz) << "\n";
        if (q.tunable) os << "f01_min_mhz " << fmt_g17(q.f01_min_mhz) << "\n";
        os << "anharmonicity_mhz " << fmt_g17(q.eta_mhz) << "\n";
        os << "t1_us " << fmt_g17(q.t1_us) << "\n";
        os << "t2_star_us " << fmt_g17(q.t2_star_us) << "\n";
        os << "readout_fidelity " << fmt_g17(q.readout_fidelity) << "\n";
        os << "single_qubit_error " << fmt_g17(q.single_qubit_error) << "\n";
    }
    for (const auto& e : edges) {
        os << "\n[edge " << e.a << " " << e.b << "]\n";
        os << "g_mhz " << fmt_g17(e.g_mhz) << "\n";
    }
    for (const auto& [pair, v] : chi_khz) {
        os << "\n[chi " << pair.first << " " << pair.second << "]\n";
        os << "chi_khz " << fmt_g17(v) << "\n";
    }
    return os.str();
}

namespace {

struct Stanza {
    std::string head; // e.g. "qubit 0"
    std::map<std::string, std::string> kv;
    std::vector<std::string> order;
    int line = 0;
};

double parse_num(const Stanza& st, const std::string& key, const std::string& where) {
    auto it = st.kv.find(key);
    if (it == st.kv.end()) fail(where + ": missing field '" + key + "'");
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail(where + ": field '" + key + "' is not a number: '" + it->second + "'");
    }
}

} // namespace

DeviceModel parse_device(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;

    std::map<std::string, std::string> top;
    std::vector<Stanza> stanzas;
    Stanza* cur = nullptr;

    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;
        if (tok.front() == '[') {
            std::string head = line.substr(line.find('[') + 1);
            const size_t close = head.find(']');
            if (close == std::string::npos)
                fail(origin + ":" + std::to_string(lineno) + ": unterminated stanza header");
            stanzas.push_back({head.substr(0, close), {}, {}, lineno});
            cur = &stanzas.back();
            continue;
        }
        std::string rest;
        std::getline(ls, rest);
        // trim
        const size_t b = rest.find_first_not_of(" \t");
        const size_t e = rest.find_last_not_of(" \t\r");
        rest = (b == std::string::npos) ? "" : rest.substr(b, e - b + 1);
        if (rest.empty())
            fail(origin + ":" + std::to_string(lineno) + ": key '" + tok + "' has no value");
        auto& kv = cur ? cur->kv : top;
        if (kv.count(tok))
            fail(origin + ":" + std::to_string(lineno) + ": duplicate key '" + tok + "'");
        kv[tok] = rest;
        if (cur) cur->order.push_back(tok);
    }

    DeviceModel dev;
    if (!top.count("schema_version")) fail(origin + ": missing schema_version");
    dev.schema_version = std::stoi(top["schema_version"]);
    if (dev.schema_version != 1)
        fail(origin + ": unsupported schema_version " + top["schema_version"]);
    dev.name = top.count("name") ? top["name"] : "unnamed";

    static const std::vector<std::string> qubit_keys = {
        "kind", "readout_freq_mhz", "f01_max_mhz", "f01_min_mhz", "anharmonicity_mhz",
        "t1_us", "t2_star_us", "readout_fidelity", "single_qubit_error"};

    for (const auto& st : stanzas) {
        std::istringstream hs(st.head);
        std::string kind;
        hs >> kind;
        const std::string where = origin + ":" + std::to_string(st.line) + " [" + st.head + "]";
        if (kind == "qubit") {
            QubitParams q;
            if (!(hs >> q.index) || q.index < 0) fail(where + ": bad qubit index");
            for (const auto& k : st.order)
                if (std::find(qubit_keys.begin(), qubit_keys.end(), k) == qubit_keys.end())
                    fail(where + ": unknown field '" + k + "'");
            auto it = st.kv.find("kind");
            if (it == st.kv.end()) fail(where + ": missing field 'kind'");
            if (it->second == "tunable") q.tunable = true;
            else if (it->second == "fixed") q.tunable = false;
            else fail(where + ": kind must be 'fixed' or 'tunable'");
            q.readout_freq_mhz = parse_num(st, "readout_freq_mhz", where);
            q.f01_max_mhz = parse_num(st, "f01_max_mhz", where);
            if (q.tunable) q.f01_min_mhz = parse_num(st, "f01_min_mhz", where);
            else if (st.kv.count("f01_min_mhz"))
                fail(where + ": fixed qubit must not set f01_min_mhz");
            q.eta_mhz = parse_num(st, "anharmonicity_mhz", where);
            q.t1_us = parse_num(st, "t1_us", where);
            q.t2_star_us = parse_num(st, "t2_star_us", where);
            q.readout_fidelity = parse_num(st, "readout_fidelity", where);
            q.single_qubit_error = parse_num(st, "single_qubit_error", where);

            if (!(q.readout_freq_mhz > 0.0) || !(q.f01_max_mhz > 0.0))
                fail(where + ": frequencies must be positive");
            if (q.tunable && !(q.f01_min_mhz > 0.0 && q.f01_min_mhz < q.f01_max_mhz))
                fail(where + ": needs 0 < f01_min_mhz < f01_max_mhz");
            if (!(q.eta_mhz > 0.0)) fail(where + ": anharmonicity_mhz must be positive");
            if (!(q.t1_us > 0.0) || !(q.t2_star_us > 0.0))
                fail(where + ": coherence times must be positive");
            if (q.t2_star_us > 2.0 * q.t1_us + 1e-12)
                fail(where + ": t2_star_us exceeds 2*t1_us");
            if (!(q.readout_fidelity > 0.5) || q.readout_fidelity > 1.0)
                fail(where + ": readout_fidelity must lie in (0.5, 1]");
            if (q.single_qubit_error < 0.0 || q.single_qubit_error >= 1.0)
                fail(where + ": single_qubit_error must lie in [0, 1)");
            dev.qubits.push_back(q);
        } else if (kind == "edge") {
            CouplingEdge e;
            if (!(hs >> e.a >> e.b)) fail(where + ": edge needs two qubit indices");
            if (e.a == e.b) fail(where + ": edge endpoints must differ");
            if (e.a > e.b) std::swap(e.a, e.b);
            for (const auto& k : st.order)
                if (k != "g_mhz") fail(where + ": unknown field '" + k + "'");
            e.g_mhz = parse_num(st, "g_mhz", where);
            if (!(e.g_mhz > 0.0)) fail(where + ": g_mhz must be positive");
            dev.edges.push_back(e);
        } else if (kind == "chi") {
            int a = -1, b = -1;
            if (!(hs >> a >> b)) fail(where + ": chi needs two qubit indices");
            for (const auto& k : st.order)
                if (k != "chi_khz") fail(where + ": unknown field '" + k + "'");
            dev.chi_khz[{a, b}] = parse_num(st, "chi_khz", where);
        } else {
            fail(where + ": unknown stanza kind '" + kind + "'");
        }
    }

    // sort and cross-validate
    std::sort(dev.qubits.begin(), dev.qubits.end(),
              [](const QubitParams& a, const QubitParams& b) { return a.index < b.index; });
    for (size_t i = 0; i < dev.qubits.size(); ++i)
        if (dev.qubits[i].index != int(i))
            fail(origin + ": qubit indices must be 0..n-1 without gaps (missing " +
                 std::to_string(i) + ")");
    const int n = int(dev.qubits.size());
    for (const auto& e : dev.edges) {
        if (e.a < 0 || e.b >= n)
            fail(origin + ": edge " + std::to_string(e.a) + "-" + std::to_string(e.b) +
                 " references unknown qubit");
        if (!dev.qubits[size_t(e.a)].tunable && !dev.qubits[size_t(e.b)].tunable)
            fail(origin + ": edge " + std::to_string(e.a) + "-" + std::to_string(e.b) +
                 " joins two fixed-frequency qubits; one endpoint must be tunable");
    }
    for (size_t i = 0; i < dev.edges.size(); ++i)
        for (size_t j = i + 1; j < dev.edges.size(); ++j)
            if (dev.edges[i].a == dev.edges[j].a && dev.edges[i].b == dev.edges[j].b)
                fail(origin + ": duplicate edge " + std::to_string(dev.edges[i].a) + "-" +
                     std::to_string(dev.edges[i].b));
    for (const auto& [pair, v] : dev.chi_khz) {
        (void)v;
        if (pair.first < 0 || pair.first >= n || pair.second < 0 || pair.second >= n)
            fail(origin + ": chi entry references unknown qubit");
    }
    return dev;
}

DeviceModel load_device(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_device(ss.str(), path);
}

void save_device(const DeviceModel& dev, const std::string& path) {
    std::ofstream f(path);
    if (!f) fail("cannot write config file '" + path + "'");
    f << dev.to_config_string();
}

} // namespace paramgate
