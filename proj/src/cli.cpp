#include "cilab/cli.hpp"

#include "cilab/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace cilab {

namespace {

using json = nlohmann::json;
constexpr double kTwoPi = 6.283185307179586;

/// Object reader that records consumed keys and reports errors by JSON pointer.
class Node {
public:
    Node(const json& j, std::string ptr) : j_(j), ptr_(std::move(ptr)) {
        if (!j_.is_object()) fail(ptr_, "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    const std::string& pointer() const { return ptr_; }
    std::string at(const std::string& key) const { return ptr_ + "/" + key; }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double def, bool positive = false) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_number()) fail(at(key), "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail(at(key), "expected a finite number");
        if (positive && !(x > 0.0)) fail(at(key), "expected a positive number");
        return x;
    }

    long long integer(const std::string& key, long long def, long long lo = std::numeric_limits<long long>::min()) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_number_integer()) fail(at(key), "expected an integer");
        const long long x = v.get<long long>();
        if (x < lo) fail(at(key), "expected an integer >= " + std::to_string(lo));
        return x;
    }

    std::string string(const std::string& key, const std::string& def, const std::vector<std::string>& allowed) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_string()) fail(at(key), "expected a string");
        const auto s = v.get<std::string>();
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            fail(at(key), "expected one of " + list);
        }
        return s;
    }

    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_boolean()) fail(at(key), "expected true or false");
        return v.get<bool>();
    }

    std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_array()) fail(at(key), "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) fail(at(key) + "/" + std::to_string(i), "expected a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    Node child(const std::string& key) {
        used_.insert(key);
        return Node(j_.at(key), at(key));
    }

    /// Rejects keys that were never read.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) fail(at(it.key()), "unknown key");
    }

    [[noreturn]] static void fail(const std::string& ptr, const std::string& what) {
        throw ConfigError((ptr.empty() ? std::string("/") : ptr) + ": " + what);
    }

private:
    const json& j_;
    std::string ptr_;
    std::set<std::string> used_;
};

Eigen::Matrix2d parse_matrix(const json& v, const std::string& ptr) {
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        const Eigen::Matrix2d J = (Eigen::Matrix2d() << 0, 1, -1, 0).finished();
        if (s == "J") return J;
        if (s == "-J") return -J;
        if (s == "I") return Eigen::Matrix2d::Identity();
        if (s == "-I") return -Eigen::Matrix2d::Identity();
        if (s == "0") return Eigen::Matrix2d::Zero();
        Node::fail(ptr, "expected J, -J, I, -I, 0 or a 2x2 array");
    }
    if (!v.is_array() || v.size() != 2) Node::fail(ptr, "expected a 2x2 array");
    Eigen::Matrix2d B;
    for (int i = 0; i < 2; ++i) {
        if (!v[i].is_array() || v[i].size() != 2) Node::fail(ptr + "/" + std::to_string(i), "expected a row of 2 numbers");
        for (int j = 0; j < 2; ++j) {
            if (!v[i][j].is_number())
                Node::fail(ptr + "/" + std::to_string(i) + "/" + std::to_string(j), "expected a number");
            B(i, j) = v[i][j].get<double>();
        }
    }
    return B;
}

std::vector<double> parse_times(const json& v, const std::string& ptr) {
    std::vector<double> t;
    if (v.is_array()) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) Node::fail(ptr + "/" + std::to_string(i), "expected a number");
            t.push_back(v[i].get<double>());
        }
    } else {
        Node n(v, ptr);
        const double a = n.number("start", 0.0), b = n.number("end", 1.0);
        const long long k = n.integer("slices", 17, 2);
        n.finish();
        if (!(b > a)) Node::fail(ptr + "/end", "must exceed start");
        for (long long i = 0; i < k; ++i) t.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(k - 1));
    }
    if (t.size() < 2) Node::fail(ptr, "at least two slices are needed");
    for (std::size_t i = 1; i < t.size(); ++i)
        if (!(t[i] > t[i - 1])) Node::fail(ptr + "/" + std::to_string(i), "times must increase");
    return t;
}

void parse_density(Node& n, AnsatzSpec& a) {
    if (!n.has("density")) return;
    Node d = n.child("density");
    a.density_mean = d.number("mean", 1.0, true);
    if (d.has("modes")) {
        const json& ms = d.raw("modes");
        const std::string base = d.at("modes");
        if (!ms.is_array()) Node::fail(base, "expected an array");
        for (std::size_t i = 0; i < ms.size(); ++i) {
            Node m(ms[i], base + "/" + std::to_string(i));
            DensityMode dm;
            const auto k = m.numbers("k", {1, 0});
            if (k.size() != 2 || k[0] != std::round(k[0]) || k[1] != std::round(k[1]))
                Node::fail(m.at("k"), "expected two integers");
            dm.k = {static_cast<int>(k[0]), static_cast<int>(k[1])};
            dm.amplitude = m.number("amplitude", 0.0);
            dm.sine = m.string("parity", "cos", {"cos", "sin"}) == "sin";
            m.finish();
            a.modes.push_back(dm);
        }
    }
    d.finish();
}

void parse_ansatz(Node n, RunConfig& c) {
    AnsatzSpec& a = c.ansatz;
    a.kind = n.string("kind", a.kind, {"piecewise_constant", "perturbed_density", "piecewise_lipschitz"});
    a.layout = n.string("layout", a.layout, {"halves", "stripes", "disk"});
    a.stripes = static_cast<int>(n.integer("stripes", a.stripes, 1));
    a.disk_radius = n.number("disk_radius", a.disk_radius, true);
    a.densities = n.numbers("densities", a.densities);
    for (std::size_t i = 0; i < a.densities.size(); ++i)
        if (!(a.densities[i] > 0.0)) Node::fail(n.at("densities") + "/" + std::to_string(i), "expected a positive number");
    a.chi = n.number("chi", a.chi, true);
    parse_density(n, a);
    auto& p = a.perturbed;
    auto& l = a.lipschitz;
    p.eps_budget = n.number("eps", p.eps_budget, true);
    p.c0 = n.number("c0", p.c0, true);
    if (n.has("chi0")) p.chi0 = l.chi0 = n.number("chi0", p.chi0);
    if (n.has("floor_constant")) p.floor_constant = l.floor_constant = n.number("floor_constant", p.floor_constant);
    p.rate_factor = n.number("rate_factor", p.rate_factor);
    l.T = n.number("T", l.T, true);
    l.theta = n.number("theta", l.theta, true);
    l.min_cube = static_cast<int>(n.integer("min_cube", l.min_cube, 1));
    const auto C = n.numbers("C", {l.C[0], l.C[1], l.C[2], l.C[3]});
    if (C.size() != 4) Node::fail(n.at("C"), "expected four numbers");
    for (int i = 0; i < 4; ++i) l.C[i] = C[i];
    n.finish();
}

void parse_iteration(Node n, IterationConfig& it) {
    it.max_stages = static_cast<int>(n.integer("max_stages", it.max_stages, 0));
    it.r0 = n.number("r0", it.r0, true);
    it.kappa = n.number("kappa", it.kappa, true);
    it.deficit = n.number("deficit", it.deficit, true);
    it.margin_cap = n.number("margin_cap", it.margin_cap, true);
    it.inner_fraction = n.number("inner_fraction", it.inner_fraction, true);
    it.delta = n.number("delta", it.delta, true);
    it.lambda_safety = n.number("lambda_safety", it.lambda_safety, true);
    it.max_doublings = static_cast<int>(n.integer("max_doublings", it.max_doublings, 0));
    it.max_layers_per_stage = static_cast<int>(n.integer("max_layers_per_stage", it.max_layers_per_stage, 1));
    it.quad_refine = static_cast<int>(n.integer("quad_refine", it.quad_refine, 1));
    it.settle = n.number("settle", it.settle, true);
    it.atom_checks = static_cast<int>(n.integer("atom_checks", it.atom_checks, 0));
    it.weak_budget = n.number("weak_budget", it.weak_budget, true);
    it.windows = n.numbers("windows", it.windows);
    if (n.has("t0")) it.t0 = n.number("t0", 0.0);
    if (n.has("t1")) it.t1 = n.number("t1", 1.0);
    it.threads = static_cast<int>(n.integer("threads", it.threads, 1));
    n.finish();
    try {
        it.validate();
    } catch (const SchemeError& e) {
        Node::fail(n.pointer(), e.what());
    }
}

void parse_verify(Node n, RunConfig& c) {
    auto& v = c.verify;
    v.tol = n.number("tol", v.tol, true);
    v.form = n.string("flux", "relaxed", {"relaxed", "nonlinear"}) == "relaxed" ? FluxForm::relaxed : FluxForm::nonlinear;
    v.constraint = n.boolean("constraint", v.constraint);
    v.dist_threshold = n.number("dist_threshold", v.dist_threshold, true);
    v.family.supports = n.numbers("ramp_supports", v.family.supports);
    for (std::size_t i = 0; i < v.family.supports.size(); ++i)
        if (!(v.family.supports[i] > 0.0 && v.family.supports[i] <= 1.0))
            Node::fail(n.at("ramp_supports") + "/" + std::to_string(i), "expected a fraction in (0, 1]");
    v.family.plateau = n.number("plateau", v.family.plateau, true);
    if (n.has("modes")) {
        const json& ms = n.raw("modes");
        if (!ms.is_array() || ms.empty()) Node::fail(n.at("modes"), "expected a nonempty array of [k1, k2]");
        v.family.modes.clear();
        for (std::size_t i = 0; i < ms.size(); ++i) {
            if (!ms[i].is_array() || ms[i].size() != 2 || !ms[i][0].is_number_integer() || !ms[i][1].is_number_integer())
                Node::fail(n.at("modes") + "/" + std::to_string(i), "expected [k1, k2] integers");
            v.family.modes.push_back({ms[i][0].get<int>(), ms[i][1].get<int>()});
        }
    }
    n.finish();
}

void parse_geometry(Node n, GeometrySpec& g) {
    g.rho = n.number("rho", g.rho, true);
    g.q = n.number("q", g.q, true);
    const auto t = n.numbers("target", {0, 0, 0, 0});
    if (t.size() != 4) Node::fail(n.at("target"), "expected (m1, m2, U11, U12)");
    for (int i = 0; i < 4; ++i) g.target[i] = t[i];
    n.finish();
}

StatePoint state_of(const std::array<double, 4>& c) {
    StatePoint w;
    w.n = 2;
    w.m[0] = c[0];
    w.m[1] = c[1];
    w.u[0] = c[2];
    w.u[1] = c[3];
    return w;
}

json state_json(const StatePoint& w) { return json::array({w.m[0], w.m[1], w.u[0], w.u[1]}); }

json report_json(const StageReport& r) {
    auto est = [](const Estimate& e) { return json{{"value", e.value}, {"stderr", e.stderr_}}; };
    json l2 = json::array(), inc = json::array();
    for (const auto& e : r.l2_norms) l2.push_back(est(e));
    for (const auto& e : r.l2_increment) inc.push_back(est(e));
    return json{{"stage", r.stage},
                {"eps_target", r.eps_target},
                {"dist_before_d1", r.dist_before_d1},
                {"dist_integral", est(r.dist_integral)},
                {"quad_tol", r.quad_tol},
                {"l2_norms", l2},
                {"l2_increment", inc},
                {"pairing", est(r.pairing)},
                {"pairing_bound", r.pairing_bound},
                {"pairing_target", r.pairing_target},
                {"weak_bound", r.weak_bound},
                {"weak_target", r.weak_target},
                {"atoms", {{"cubes", r.cubes},
                           {"layers", r.layers},
                           {"lambda_min", r.lambda_min},
                           {"lambda_median", r.lambda_median},
                           {"lambda_max", r.lambda_max},
                           {"lambda_doublings", r.lambda_doublings},
                           {"residual", r.atom_residual},
                           {"sup_distance", r.atom_sup_distance},
                           {"centre_offset", r.centre_offset}}},
                {"uncovered", r.uncovered},
                {"saturation_median", r.saturation_median},
                {"min_weight", r.min_weight},
                {"contraction_ok", r.contraction_ok},
                {"l2_ok", r.l2_ok},
                {"pairing_ok", r.pairing_ok},
                {"weak_ok", r.weak_ok}};
}

json census_json(const Census& c) {
    json cl = json::array();
    for (const auto& k : c.clusters)
        cl.push_back({{"state", state_json(k.w)},
                      {"rho", k.rho},
                      {"fraction", k.fraction},
                      {"vertex", k.vertex},
                      {"vertex_distance", k.vertex_distance}});
    return json{{"clusters", cl},       {"listed", c.clusters.size()},   {"total_clusters", c.total_clusters},
                {"captured", c.captured}, {"off_cluster", c.off_cluster}, {"tv_distance", c.tv_distance},
                {"caratheodory", c.caratheodory}, {"tol", c.tol}};
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
    if (!s.empty() && s.back() != '\n') out << '\n';
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

/// Test-gradient bounds of the verify family, for the weak-star monitor.
std::vector<double> family_gradients(const RunConfig& c) {
    std::vector<double> g;
    for (const auto& k : c.verify.family.modes) g.push_back(kTwoPi / c.grid.L * std::hypot(k[0], k[1]));
    return g;
}

json ansatz_certificates(const SubsolutionState& s) {
    json d = json::object();
    for (const auto& [k, v] : s.diagnostics) d[k] = v;
    d["min_strictness_margin"] = min_strictness_margin(s);
    const LinearResiduals lr = linear_residuals(s);
    d["linear_residual_continuity"] = lr.continuity;
    d["linear_residual_momentum"] = lr.momentum;
    d["linear_residual_scale"] = lr.scale;
    return d;
}

json verify_summary(const VerifyReport& r) {
    return json{{"weak_pass", r.weak_pass}, {"admissibility_pass", r.admissibility_pass}, {"resolved", r.resolved}};
}

/// Dumps, verifies and records a state under out/<name>.
VerifyReport dump_and_verify(const SubsolutionState& s, const std::filesystem::path& out, const std::string& name,
                             const std::map<std::string, std::vector<GridField>>& extra, VerifyOptions vo,
                             const std::string& report_name, json& manifest) {
    write_state_dump(s, out / name, extra);
    const DumpSet d = load_dump(out / name);
    const VerifyReport r = verify_dump(d, vo);
    write_text(out / report_name, verify_report_json(r, vo));
    manifest["certificates"][report_name] = verify_summary(r);
    return r;
}

}  // namespace

RunConfig parse_config(const json& j) {
    RunConfig c;
    c.source = j;
    Node n(j, "");
    c.mode = n.string("mode", c.mode, {"ansatz", "iterate", "iterate-initial", "verify", "geometry"});
    c.seed = static_cast<std::uint64_t>(n.integer("seed", 1, 0));
    if (n.has("grid")) {
        Node g = n.child("grid");
        const long long N = g.integer("N", 128, 16);
        if (N & (N - 1)) Node::fail(g.at("N"), "expected a power of two");
        const double L = g.number("L", 1.0, true);
        g.finish();
        c.grid = TorusGrid(static_cast<int>(N), L);
    }
    c.times = n.has("times") ? parse_times(n.raw("times"), "/times") : parse_times(json::object(), "/times");
    if (n.has("pressure")) {
        Node p = n.child("pressure");
        const double a = p.number("a", 0.5, true);
        const double gamma = p.number("gamma", 2.0);
        if (!(gamma > 1.0)) Node::fail(p.at("gamma"), "expected a number > 1");
        p.finish();
        c.plaw = PressureLaw(a, gamma);
    }
    if (n.has("B")) c.B = parse_matrix(n.raw("B"), "/B");
    if (n.has("ansatz")) parse_ansatz(n.child("ansatz"), c);
    if (n.has("verify")) parse_verify(n.child("verify"), c);
    c.iteration.test_gradient_bounds = family_gradients(c);
    if (n.has("iteration")) parse_iteration(n.child("iteration"), c.iteration);
    if (n.has("census")) {
        Node k = n.child("census");
        c.census_tol = k.number("tol", c.census_tol, true);
        k.finish();
    }
    if (n.has("geometry")) parse_geometry(n.child("geometry"), c.geometry);
    if (n.has("dump")) {
        const json& d = n.raw("dump");
        if (!d.is_string()) Node::fail("/dump", "expected a path string");
        c.dump = d.get<std::string>();
    }
    n.finish();
    if (c.mode == "verify" && c.dump.empty()) Node::fail("/dump", "verify mode needs a dump directory");
    if (c.ansatz.kind == "piecewise_constant") {
        const auto labels = region_labels(c);
        const int regions = *std::max_element(labels.begin(), labels.end()) + 1;
        if (static_cast<int>(c.ansatz.densities.size()) < regions)
            Node::fail("/ansatz/densities", "needs one density per region (" + std::to_string(regions) + ")");
    }
    c.iteration.seed = c.seed;
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("/: cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("/: config is not valid JSON: " + std::string(e.what()));
    }
    return parse_config(j);
}

void apply_overrides(RunConfig& cfg, const RunOverrides& o) {
    if (o.seed) cfg.seed = cfg.iteration.seed = *o.seed;
    if (o.threads) {
        if (*o.threads < 1) throw ConfigError("--threads: expected an integer >= 1");
        cfg.iteration.threads = cfg.verify.threads = *o.threads;
    }
    if (o.stages) {
        if (*o.stages < 0) throw ConfigError("--stages: expected an integer >= 0");
        cfg.iteration.max_stages = *o.stages;
    }
    if (o.quad_refine) {
        if (*o.quad_refine < 1) throw ConfigError("WILDFLOW_QUAD_REFINE: expected an integer >= 1");
        cfg.iteration.quad_refine = *o.quad_refine;
    }
}

std::vector<int> region_labels(const RunConfig& cfg) {
    const TorusGrid& g = cfg.grid;
    std::vector<int> l(g.nodes(), 0);
    for (int i1 = 0; i1 < g.N; ++i1)
        for (int i2 = 0; i2 < g.N; ++i2) {
            const double x1 = g.x(i1), x2 = g.x(i2);
            int label = 0;
            if (cfg.ansatz.layout == "halves") {
                label = x1 < 0.5 * g.L ? 0 : 1;
            } else if (cfg.ansatz.layout == "stripes") {
                label = std::min(cfg.ansatz.stripes - 1, static_cast<int>(x1 / g.L * cfg.ansatz.stripes));
            } else {
                const double r = std::hypot(x1 - 0.5 * g.L, x2 - 0.5 * g.L);
                label = r < cfg.ansatz.disk_radius * g.L ? 0 : 1;
            }
            l[static_cast<std::size_t>(i1) * g.N + i2] = label;
        }
    return l;
}

ScalarField initial_density(const RunConfig& cfg) {
    const TorusGrid& g = cfg.grid;
    ScalarField r(g, 1, "rho0");
    for (int i1 = 0; i1 < g.N; ++i1)
        for (int i2 = 0; i2 < g.N; ++i2) {
            double v = cfg.ansatz.density_mean;
            for (const auto& m : cfg.ansatz.modes) {
                const double th = kTwoPi * (m.k[0] * g.x(i1) + m.k[1] * g.x(i2)) / g.L;
                v += m.amplitude * (m.sine ? std::sin(th) : std::cos(th));
            }
            r(i1, i2) = v;
        }
    return r;
}

SubsolutionState build_ansatz(const RunConfig& cfg) {
    const auto& a = cfg.ansatz;
    if (a.kind == "piecewise_constant")
        return build_piecewise_constant(cfg.grid, region_labels(cfg), a.densities, a.chi, cfg.plaw, cfg.B, cfg.times,
                                        cfg.seed);
    if (a.kind == "perturbed_density") {
        PerturbedDensityOptions o = a.perturbed;
        o.times = cfg.times;
        return build_perturbed_density(initial_density(cfg), cfg.plaw, cfg.B, o);
    }
    LipschitzOptions o = a.lipschitz;
    o.times = cfg.times;
    o.seed = cfg.seed;
    return build_piecewise_lipschitz(initial_density(cfg), region_labels(cfg), cfg.plaw, cfg.B, o);
}

std::string file_hash(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

int run(const RunConfig& cfg_in, const std::filesystem::path& out, std::ostream& log) {
    RunConfig cfg = cfg_in;
    std::filesystem::create_directories(out);
    json manifest;
    manifest["version"] = kVersion;
    manifest["mode"] = cfg.mode;
    manifest["seed"] = cfg.seed;
    manifest["config"] = cfg.source;
    manifest["effective"] = {{"max_stages", cfg.iteration.max_stages},
                             {"quad_refine", cfg.iteration.quad_refine},
                             {"threads", cfg.iteration.threads}};
    manifest["certificates"] = json::object();
    int status = 0;
    std::vector<std::string> hashed;

    auto finish = [&]() {
        json files = json::object();
        for (const auto& rel : hashed) files[rel] = file_hash(out / rel);
        manifest["files"] = files;
        write_text(out / "manifest.json", manifest.dump(2));
        return status;
    };
    auto hash_dir = [&](const std::string& dir) {
        std::vector<std::string> names;
        for (const auto& e : std::filesystem::directory_iterator(out / dir)) names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        for (const auto& n : names) hashed.push_back(dir + "/" + n);
    };

    try {
        if (cfg.mode == "geometry") {
            const ConstraintParams p(cfg.geometry.rho, cfg.geometry.q);
            const StatePoint w = state_of(cfg.geometry.target);
            const double margin = hull_margin(w, p);
            json g{{"rho", p.rho}, {"q", p.q}, {"target", state_json(w)}, {"hull_margin", margin}};
            if (!(margin > 0.0)) {
                log << "geometry: target is not in the interior of the hull (margin " << margin << ")\n";
                g["error"] = "target outside the interior of the hull";
                status = 3;
            } else {
                const SimplexDecomposition d = select_extreme_points(w, p, cfg.seed);
                json pts = json::array();
                for (std::size_t i = 0; i < d.vertices.size(); ++i) {
                    pts.push_back({{"state", state_json(d.vertices[i])}, {"weight", d.weights[i]}});
                    log << "point " << i << ": m = (" << d.vertices[i].m[0] << ", " << d.vertices[i].m[1] << "), U = ("
                        << d.vertices[i].u[0] << ", " << d.vertices[i].u[1] << "), weight " << d.weights[i] << "\n";
                }
                log << "LP slack " << d.slack << "\n";
                g["points"] = pts;
                g["slack"] = d.slack;
            }
            write_text(out / "geometry.json", g.dump(2));
            hashed.push_back("geometry.json");
            manifest["certificates"]["geometry"] = {{"hull_margin", margin}};
            return finish();
        }

        if (cfg.mode == "verify") {
            const DumpSet d = load_dump(cfg.dump);
            const VerifyReport r = verify_dump(d, cfg.verify);
            write_text(out / "verify.json", verify_report_json(r, cfg.verify));
            hashed.push_back("verify.json");
            manifest["certificates"]["verify.json"] = verify_summary(r);
            manifest["dump"] = cfg.dump.string();
            log << "verify: weak " << (r.weak_pass ? "pass" : "fail") << ", admissibility "
                << (r.admissibility_pass ? "pass" : "fail") << (r.resolved ? "" : " (unresolved entries)") << "\n";
            status = r.weak_pass && r.admissibility_pass ? 0 : 1;
            return finish();
        }

        log << "building " << cfg.ansatz.kind << " ansatz on N = " << cfg.grid.N << " with " << cfg.times.size()
            << " slices\n";
        const SubsolutionState s = build_ansatz(cfg);
        manifest["certificates"]["ansatz"] = ansatz_certificates(s);
        if (s.kind == "perturbed_density") {
            const DecayCheck dc = decay_check(s, TimeCutoff());
            manifest["certificates"]["decay"] = {{"kappa", dc.kappa}, {"worst_ratio", dc.worst_ratio}, {"ok", dc.ok}};
        }

        if (cfg.mode == "ansatz") {
            dump_and_verify(s, out, "fields", {}, cfg.verify, "verify.json", manifest);
            hash_dir("fields");
            hashed.push_back("verify.json");
            return finish();
        }

        VerifyOptions no_constraint = cfg.verify;
        no_constraint.constraint = false;
        dump_and_verify(s, out, "ansatz", {}, no_constraint, "verify_ansatz.json", manifest);
        hash_dir("ansatz");
        hashed.push_back("verify_ansatz.json");

        std::ofstream csv(out / "stages.csv");
        csv << stage_csv_header(cfg.iteration.windows.size()) << "\n";
        IterationConfig it = cfg.iteration;
        it.progress = [&](int stage, int layer, double dist) {
            log << "stage " << stage << " layer " << layer << " dist " << dist << "\n";
        };
        const bool initial = cfg.mode == "iterate-initial";
        const IterationResult res = initial ? iterate_with_initial_data(s, it) : iterate(s, it);
        json reports = json::array();
        for (const auto& r : res.reports) {
            csv << stage_csv_row(r) << "\n";
            reports.push_back(report_json(r));
        }
        csv.flush();
        manifest["certificates"]["stages"] = reports;
        if (!res.error.empty()) {
            log << "iteration failed: " << res.error << "\n";
            manifest["certificates"]["error"] = res.error;
            status = 3;
        }

        std::map<std::string, std::vector<GridField>> extra{{"dist", res.dist}};
        if (initial) {
            extra["m_diamond"] = {res.m_diamond};
            extra["saturation"] = {res.saturation};
        }
        const VerifyReport vr = dump_and_verify(res.state, out, "fields", extra, cfg.verify, "verify.json", manifest);
        hash_dir("fields");
        hashed.push_back("verify.json");
        if (vr.has_constraint)
            log << "constraint: mean dist " << vr.constraint.mean << ", max " << vr.constraint.max << "\n";

        const double t0 = std::isnan(it.t0) ? cfg.times.front() : it.t0;
        const double t1 = std::isnan(it.t1) ? cfg.times.back() : it.t1;
        json census = json::object();
        for (const auto& reg : res.state.regions) {
            if (reg.kind != RegionKind::finite) continue;
            const double amp = region_amplitude(reg);
            const Census c = state_census(res.state, reg.label, cfg.census_tol * amp, t0 + 1e-12, t1 - 1e-12);
            census[std::to_string(reg.label)] = census_json(c);
            log << "census region " << reg.label << ": " << c.clusters.size() << " clusters, captured " << c.captured
                << ", TV " << c.tv_distance << "\n";
        }
        write_text(out / "census.json", census.dump(2));
        hashed.push_back("census.json");
        manifest["certificates"]["census"] = census;
        manifest["outputs"] = {"stages.csv", "fields/index.json", "ansatz/index.json", "census.json", "verify.json",
                               "verify_ansatz.json"};
        return finish();
    } catch (const AnsatzError& e) {
        log << "infeasible: " << e.what() << "\n";
        manifest["certificates"]["error"] = e.what();
        status = 3;
    } catch (const SchemeError& e) {
        log << "infeasible: " << e.what() << "\n";
        manifest["certificates"]["error"] = e.what();
        status = 3;
    }
    return finish();
}

}  // namespace cilab
