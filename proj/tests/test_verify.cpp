#include "cilab/scheme.hpp"
#include "cilab/verify.hpp"

#include "json.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

using namespace cilab;

namespace {

const Eigen::Matrix2d J = (Eigen::Matrix2d() << 0, 1, -1, 0).finished();

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("cilab_verify_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::vector<int> halves(const TorusGrid& g) {
    std::vector<int> l(g.nodes());
    for (int i = 0; i < g.N; ++i)
        for (int j = 0; j < g.N; ++j) l[static_cast<std::size_t>(i) * g.N + j] = g.x(i) < 0.5 * g.L ? 0 : 1;
    return l;
}

std::vector<double> slices(int n) {
    std::vector<double> t;
    for (int k = 0; k < n; ++k) t.push_back(k / double(n - 1));
    return t;
}

SubsolutionState two_regions(int N, int nt) {
    const TorusGrid g(N, 1.0);
    return build_piecewise_constant(g, halves(g), {1.0, 2.0}, 2.0, PressureLaw(0.5, 2.0), J, slices(nt));
}

SubsolutionState perturbed(int N, int nt, double rate_factor = 1.0, const Eigen::Matrix2d& B = -Eigen::Matrix2d::Identity()) {
    const TorusGrid g(N, 1.0);
    ScalarField r0(g, 1);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) r0(i, j) = 1.0 + 1e-3 / (2 * M_PI) * std::cos(2 * M_PI * g.x(i));
    PerturbedDensityOptions o;
    o.times = slices(nt);
    o.rate_factor = rate_factor;
    return build_perturbed_density(r0, PressureLaw(0.5, 2.0), B, o);
}

DumpSet dump_and_load(const SubsolutionState& s, const std::string& name) {
    const auto dir = scratch(name);
    write_state_dump(s, dir);
    return load_dump(dir);
}

std::vector<TestFunction> nonneg_family() {
    FamilyOptions o;
    o.nonnegative = true;
    return make_family(0.0, 1.0, 1.0, o);
}

}  // namespace

TEST(FieldDump, RoundTripIsBitIdenticalAndLittleEndian) {
    const TorusGrid g(16, 2.0);
    GridField f = band_limited_random(g, 3, 3, 7);
    f.data[0] = 1.0;
    f.time = 0.375;
    f.name = "U";
    const auto dir = scratch("roundtrip");
    std::filesystem::create_directories(dir);
    write_field(f, dir / "U_000");
    std::ifstream in(dir / "U_000.bin", std::ios::binary);
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    const unsigned char one[8] = {0, 0, 0, 0, 0, 0, 0xf0, 0x3f};
    EXPECT_EQ(std::memcmp(b, one, 8), 0);
    const GridField r = read_field(dir / "U_000");
    EXPECT_EQ(r.grid.N, 16);
    EXPECT_EQ(r.grid.L, 2.0);
    EXPECT_EQ(r.components, 3);
    EXPECT_EQ(r.time, 0.375);
    EXPECT_EQ(r.name, "U");
    ASSERT_EQ(r.data.size(), f.data.size());
    EXPECT_EQ(std::memcmp(r.data.data(), f.data.data(), 8 * f.data.size()), 0);
    std::ifstream side(dir / "U_000.json");
    const auto meta = nlohmann::json::parse(side);
    for (const char* key : {"resolution", "length", "components", "time", "name"}) EXPECT_TRUE(meta.contains(key)) << key;
}

TEST(FieldDump, TruncatedBlobRejected) {
    const TorusGrid g(16, 1.0);
    const auto dir = scratch("trunc");
    std::filesystem::create_directories(dir);
    write_field(GridField(g, 1, "rho"), dir / "rho_000");
    std::filesystem::resize_file(dir / "rho_000.bin", 100);
    EXPECT_THROW(read_field(dir / "rho_000"), OperatorError);
}

TEST(LoadDump, MetadataMismatchRejected) {
    const auto s = two_regions(16, 3);
    const auto dir = scratch("mismatch");
    write_state_dump(s, dir);
    EXPECT_NO_THROW(load_dump(dir));
    std::ifstream in(dir / "q_001.json");
    auto meta = nlohmann::json::parse(in);
    in.close();
    meta["time"] = 0.9;
    std::ofstream(dir / "q_001.json") << meta.dump();
    try {
        load_dump(dir);
        FAIL() << "expected a metadata error";
    } catch (const VerifyError& e) {
        EXPECT_NE(std::string(e.what()).find("q_001"), std::string::npos);
    }
}

TEST(LoadDump, IndexCarriesStateData) {
    const auto s = two_regions(16, 5);
    const DumpSet d = dump_and_load(s, "index");
    EXPECT_EQ(d.slices(), 5u);
    EXPECT_EQ(d.plaw.a, 0.5);
    EXPECT_EQ(d.plaw.gamma, 2.0);
    EXPECT_EQ(d.B, J);
    EXPECT_EQ(d.region, s.region);
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_EQ(d.rho[k].data, s.rho[k].data);
        EXPECT_EQ(d.U[k].data, s.U[k].data);
    }
}

TEST(TestFamily, DefaultSizeSupportAndSign) {
    const auto fam = make_family(0.0, 2.0, 1.0);
    EXPECT_EQ(fam.size(), 12u);
    for (const auto& f : fam) {
        EXPECT_EQ(f.time(0.0), 1.0);
        EXPECT_EQ(f.time(1.999), 0.0);
        EXPECT_EQ(f.time(2.0, 1), 0.0);
    }
    for (const auto& f : nonneg_family())
        for (double x = 0; x < 1; x += 0.01)
            for (double t = 0; t < 1; t += 0.05) EXPECT_GE(f.time(t) * f.space(x, 0.3), 0.0);
}

TEST(TestFamily, DerivativesMatchDifferences) {
    const auto fam = make_family(0.0, 1.0, 1.0);
    const double h = 1e-6;
    for (const auto& f : fam) {
        for (double t : {0.3, 0.45, 0.7}) {
            EXPECT_NEAR(f.time(t, 1), (f.time(t + h) - f.time(t - h)) / (2 * h), 1e-6 * (1 + f.c2_norm()));
            EXPECT_NEAR(f.time(t, 2), (f.time(t + h, 1) - f.time(t - h, 1)) / (2 * h), 1e-5 * (1 + f.c2_norm()));
        }
        const auto g = f.space_gradient(0.3, 0.7);
        EXPECT_NEAR(g[0], (f.space(0.3 + h, 0.7) - f.space(0.3 - h, 0.7)) / (2 * h), 1e-6);
        EXPECT_NEAR(g[1], (f.space(0.3, 0.7 + h) - f.space(0.3, 0.7 - h)) / (2 * h), 1e-6);
    }
}

TEST(WeakResidual, ConstantStateVanishesInBothForms) {
    const TorusGrid g(16, 1.0);
    auto s = build_piecewise_constant(g, std::vector<int>(g.nodes(), 0), {1.3}, 2.0, PressureLaw(1.0, 1.4),
                                      -Eigen::Matrix2d::Identity(), slices(5));
    const DumpSet d = dump_and_load(s, "const");
    for (FluxForm form : {FluxForm::relaxed, FluxForm::nonlinear})
        for (const auto& r : weak_residual(d, make_family(0, 1, 1), {form, 1e-6})) {
            EXPECT_LE(r.continuity.value, 1e-13 * r.continuity.scale) << r.test;
            EXPECT_LE(r.momentum.value, 1e-13 * r.momentum.scale) << r.test;
        }
}

TEST(WeakResidual, BuilderOutputsSatisfyTheLinearSystem) {
    for (const auto& s : {two_regions(32, 9), perturbed(32, 17)}) {
        const DumpSet d = dump_and_load(s, "builders");
        for (const auto& r : weak_residual(d, make_family(0, 1, 1))) {
            EXPECT_TRUE(r.continuity.pass) << s.kind << " " << r.test << " " << r.continuity.value;
            EXPECT_TRUE(r.momentum.pass) << s.kind << " " << r.test << " " << r.momentum.value;
        }
    }
}

TEST(WeakResidual, CorruptedMomentumBlobDetected) {
    DumpSet d = dump_and_load(two_regions(32, 9), "blob");
    const auto fam = make_family(0, 1, 1);
    const auto clean = weak_residual(d, fam);
    corrupt_momentum_blob(d, 0.25, 0.5, 0.5, 0.1, 0.2, 0.1);
    const auto dirty = weak_residual(d, fam);
    double worst_clean = 0, worst_dirty = 0;
    for (std::size_t i = 0; i < fam.size(); ++i) {
        worst_clean = std::max(worst_clean, clean[i].momentum.value / clean[i].momentum.scale);
        worst_dirty = std::max(worst_dirty, dirty[i].momentum.value / dirty[i].momentum.scale);
    }
    EXPECT_LE(worst_clean, 1e-14);
    EXPECT_GE(worst_dirty, 1e-6);
    EXPECT_GE(worst_dirty, 1e6 * worst_clean);
}

TEST(WeakResidual, HalfResolutionFlagsUnderresolvedTime) {
    const DumpSet coarse = dump_and_load(perturbed(16, 9), "unres");
    const DumpSet fine = dump_and_load(perturbed(16, 129), "res");
    const auto fam = make_family(0, 1, 1);
    const auto rc = weak_residual(coarse, fam);
    const auto rf = weak_residual(fine, fam);
    bool flagged = false;
    for (const auto& r : rc) flagged = flagged || !r.continuity.resolved;
    EXPECT_TRUE(flagged);
    for (std::size_t i = 0; i < fam.size(); ++i) EXPECT_LT(rf[i].continuity.value, rc[i].continuity.value + 1e-15);
}

TEST(Admissibility, PiecewiseConstantRotationIsEquality) {
    const DumpSet d = dump_and_load(two_regions(32, 9), "pc_adm");
    for (const auto& a : admissibility_residual(d, nonneg_family())) {
        EXPECT_TRUE(a.value.pass) << a.test;
        EXPECT_TRUE(a.equality) << a.test << " " << a.value.value;
    }
}

TEST(Admissibility, CertifiedChiIsAdmissible) {
    const DumpSet d = dump_and_load(perturbed(32, 33), "pd_adm");
    for (const auto& a : admissibility_residual(d, nonneg_family())) {
        EXPECT_TRUE(a.value.pass) << a.test << " " << a.value.value;
        EXPECT_GT(a.value.value, 0.0);
    }
}

TEST(Admissibility, FrozenChiViolationDetected) {
    const DumpSet d = dump_and_load(perturbed(32, 33, 0.0), "frozen");
    bool violated = false;
    for (const auto& a : admissibility_residual(d, nonneg_family()))
        violated = violated || a.value.value < -1e-6 * a.value.scale;
    EXPECT_TRUE(violated);
}

TEST(Admissibility, SourceTermChangesSignUnderMomentumReversal) {
    DumpSet d = dump_and_load(two_regions(16, 5), "sign");
    d.B = J;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    for (auto& m : d.m)
        for (double& v : m.data) v = n01(rng);
    const auto fam = make_family(0, 1, 1);
    std::vector<double> before;
    for (const auto& f : fam)
        for (int c = 0; c < 2; ++c) before.push_back(source_pairing(d, f, c));
    for (auto& m : d.m)
        for (double& v : m.data) v = -v;
    std::size_t i = 0;
    for (const auto& f : fam)
        for (int c = 0; c < 2; ++c, ++i) {
            const double after = source_pairing(d, f, c);
            EXPECT_LE(std::abs(after + before[i]), 1e-12 * std::abs(before[i]) + 1e-300);
            EXPECT_GT(std::abs(before[i]), 0.0);
        }
}

TEST(Constraint, FreshAnsatzMatchesDistanceOracle) {
    const auto s = two_regions(16, 3);
    const DumpSet d = dump_and_load(s, "cons");
    const auto c = constraint_field(d, 2);
    for (std::size_t k = 0; k < d.slices(); ++k)
        for (std::size_t i = 0; i < d.grid.nodes(); ++i) {
            const double rho = d.rho[k].data[i], q = d.q[k].data[i];
            EXPECT_NEAR(c.dist[k].data[i], std::sqrt(2 * rho * q + 2 * q * q), 1e-9);
        }
    const auto all = summarize_constraint(c, d, {0}, 0, 1, 1e-2);
    EXPECT_NEAR(all.mean, std::sqrt(7.5), 1e-9);
    EXPECT_EQ(all.fraction_above, 1.0);
    EXPECT_GT(all.min_margin, 0.0);
}

TEST(Constraint, IteratedStateMeetsScheduleAndSaturates) {
    const auto s = two_regions(16, 5);
    IterationConfig cfg;
    cfg.max_stages = 3;
    const auto res = iterate(s, cfg);
    ASSERT_TRUE(res.error.empty()) << res.error;
    const SchemeState st = prepare_region(s, cfg);
    const DumpSet d = dump_and_load(res.state, "iter");
    const auto c = constraint_field(d);
    const double thr = 1e-2;
    const auto sum = summarize_constraint(c, d, {0}, st.t0 + 1e-12, st.t1 - 1e-12, thr);
    EXPECT_EQ(sum.nodes, st.interior);
    const auto& last = res.reports.back();
    EXPECT_NEAR(sum.mean * st.measure, last.dist_integral.value, 1e-9);
    EXPECT_LE(sum.mean * st.measure, last.eps_target + last.quad_tol);
    EXPECT_LE(sum.saturation_near_k, (2 * std::sqrt(3.0) + thr) * thr);
}

TEST(VerifyReport, SameDumpsGiveIdenticalReports) {
    const auto dir = scratch("report");
    {
        const auto s = two_regions(16, 5);
        write_state_dump(s, dir);
    }
    VerifyOptions o;
    const std::string a = verify_report_json(verify_dump(load_dump(dir), o), o);
    const std::string b = verify_report_json(verify_dump(load_dump(dir), o), o);
    EXPECT_EQ(a, b);
    const auto j = nlohmann::json::parse(a);
    EXPECT_EQ(j["weak"].size(), 12u);
    EXPECT_EQ(j["admissibility"].size(), 12u);
    EXPECT_TRUE(j["pass"].get<bool>());
    EXPECT_TRUE(j.contains("constraint"));
}
