#pragma once

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zvlab/families.hpp"
#include "zvlab/pde.hpp"
#include "zvlab/sde.hpp"
#include "zvlab/zvonkin.hpp"

namespace zvlab {

/// Outcome of one acceptance criterion.
struct CriterionResult {
    int id = 0;
    std::string title;
    bool pass = false;
    std::string summary;
    nlohmann::json details = nlohmann::json::object();
    double seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const CriterionResult& r) {
    j = nlohmann::json{{"id", r.id},           {"title", r.title},     {"pass", r.pass},
                       {"summary", r.summary}, {"details", r.details}, {"seconds", r.seconds}};
}

struct AcceptanceOptions {
    int workers = 1;
    std::uint64_t seed = 20240917;
};

namespace detail {

inline CriterionResult criterion(int id, std::string title) {
    CriterionResult r;
    r.id = id;
    r.title = std::move(title);
    return r;
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline GridFn constant_vector(const Grid& g, std::initializer_list<double> v) {
    const std::vector<double> c(v);
    return sample(g, Rank::vector, [&](double, std::span<const double>, std::span<double> out) {
        for (int a = 0; a < g.dim; ++a) out[a] = c[a];
    });
}

/// 1-D Simpson rule, used for the cutoff norm oracle.
template <class F>
double simpson(F&& f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

inline double max_abs_z(const std::vector<AgreementRow>& rows, bool paired = false) {
    double z = 0.0;
    for (const auto& r : rows) z = std::max(z, std::abs(r.difference) / (paired ? r.paired_se : r.combined_se));
    return z;
}

inline double spread(const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) / *std::min_element(v.begin(), v.end());
}

} // namespace detail

/// 1. Forward solver exactness against constant and single-mode oracles.
inline CriterionResult acceptance_pde_exactness(const AcceptanceOptions&) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(1, "PDE exactness");
    const Grid g = build_grid(2, std::numbers::pi, 64, 1.0, 512);
    const GridFn I = scaled_identity(g, 1.0);
    const double tol = 5.0 * (g.time_step() + g.spacing() * g.spacing());
    double x[kMaxDim];

    const GridFn u1 = solve_forward({I, std::nullopt, 0.0, GridFn::constant(g, 1.0)}, g);
    double e1 = 0.0;
    for (int k = 0; k <= g.nt; ++k)
        for (std::size_t p = 0; p < g.points(); ++p) e1 = std::max(e1, std::abs(u1.at(k, p) - g.time(k)));

    const GridFn f2 = sample_scalar_time(g, [](double t, std::span<const double> y) { return std::exp(-t) * std::sin(y[0]); });
    const GridFn u2 = solve_forward({I, std::nullopt, 1.0, f2}, g);
    double e2 = 0.0;
    for (int k = 0; k <= g.nt; ++k) {
        const double gt = std::exp(-g.time(k)) - std::exp(-2.0 * g.time(k));
        for (std::size_t p = 0; p < g.points(); ++p) {
            g.point(p, x);
            e2 = std::max(e2, std::abs(u2.at(k, p) - gt * std::sin(x[0])));
        }
    }

    const GridFn f3 = sample_scalar(g, [](std::span<const double> y) { return std::sin(y[0]); });
    const GridFn u3 = solve_forward({I, detail::constant_vector(g, {1.0, 0.0}), 0.0, f3}, g);
    const std::complex<double> i1(0.0, 1.0);
    double e3 = 0.0;
    for (int k = 0; k <= g.nt; ++k) {
        const auto gk = (1.0 - std::exp((-1.0 + i1) * g.time(k))) / (1.0 - i1);
        for (std::size_t p = 0; p < g.points(); ++p) {
            g.point(p, x);
            e3 = std::max(e3, std::abs(u3.at(k, p) - (gk * std::exp(i1 * x[0])).imag()));
        }
    }
    r.seconds = sw.seconds();
    r.pass = e1 <= 1e-10 && e2 <= tol && e3 <= tol && r.seconds < 10.0;
    r.details = {{"constant_source_error", e1}, {"decay_mode_error", e2}, {"drift_mode_error", e3},
                 {"tolerance", tol},            {"nx", g.nx},               {"nt", g.nt}};
    r.summary = "u=t err " + detail::fmt(e1) + " (<=1e-10); mode errs " + detail::fmt(e2) + ", " + detail::fmt(e3) +
                " (<=" + detail::fmt(tol) + "); " + detail::fmt(r.seconds, 3) + " s (<10)";
    return r;
}

/// 2. Duality residual on the halving ladder Nx = 32, 64, 128 with Nt = 2 Nx.
inline CriterionResult acceptance_duality(const AcceptanceOptions&) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(2, "Duality");
    std::vector<double> res, flat;
    for (int nx : {32, 64, 128}) {
        const Grid g = build_grid(2, std::numbers::pi, nx, 1.0, 2 * nx);
        const GridFn a = sample(g, Rank::matrix, [](double, std::span<const double> y, std::span<double> o) {
            const double c = 1.0 + 0.5 * std::sin(y[0]);
            o[0] = o[3] = c;
            o[1] = o[2] = 0.0;
        });
        const GridFn phi = sample_scalar(g, [](std::span<const double> y) { return std::sin(y[0]); });
        const GridFn psi = sample_scalar(g, [](std::span<const double> y) { return std::cos(y[0]) + std::sin(y[0]); });
        res.push_back(duality_residual(a, 0.0, phi, psi, 0.25, 0.75, g));
        const GridFn cosx = sample_scalar(g, [](std::span<const double> y) { return std::cos(y[0]); });
        flat.push_back(duality_residual(scaled_identity(g, 1.0), 0.0, phi, cosx, 0.25, 0.75, g));
    }
    const double f1 = res[0] / res[1], f2 = res[1] / res[2];
    r.pass = f1 >= 3.5 && f2 >= 3.5 && res[2] <= 1e-4;
    r.details = {{"nx", {32, 64, 128}}, {"residual", res}, {"factors", {f1, f2}}, {"identity_a_residual", flat}};
    r.seconds = sw.seconds();
    r.summary = "factors " + detail::fmt(f1) + ", " + detail::fmt(f2) + " (>=3.5); residual at Nx=128 " +
                detail::fmt(res[2]) + " (<=1e-4)";
    return r;
}

/// 3. Maximal-regularity terms and the lambda sweep on the smooth source family.
inline CriterionResult acceptance_maxreg(const AcceptanceOptions& o) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(3, "Maximal regularity");
    const Grid g = build_grid(2, std::numbers::pi, 64, 1.0, 128);
    const GridFn a = scaled_identity(g, 1.0);
    const auto sources = smooth_sources(g);
    NormParams np{0.0, 2.0, Exponent::finite(2.0), 0.0, -1.0, 1.0};
    const MaxRegReport rep = max_reg_survey(a, std::nullopt, 1.0, sources, np, g, o.workers);
    bool finite = true;
    for (const auto& row : rep.rows)
        finite = finite && std::isfinite(row.lambda_term) && std::isfinite(row.time_term) &&
                 std::isfinite(row.hessian_term) && row.lambda_term >= 0 && row.time_term >= 0 && row.hessian_term >= 0;
    const auto s22 = lambda_sweep(a, sources, {1, 4, 16, 64}, np, g, o.workers);
    np.q = Exponent::finite(4.0);
    const auto s24 = lambda_sweep(a, sources, {1, 4, 16, 64}, np, g, o.workers);
    r.pass = finite && s22.worst_spread <= 4.0 && s24.worst_spread <= 4.0;
    r.details = {{"survey", rep}, {"sweep_p2_q2", s22}, {"sweep_p2_q4", s24}};
    r.seconds = sw.seconds();
    r.summary = std::string("terms ") + (finite ? "finite" : "NOT finite") + " (max " + detail::fmt(rep.max_lambda_term) +
                ", " + detail::fmt(rep.max_time_term) + ", " + detail::fmt(rep.max_hessian_term) +
                "); sweep max/min " + detail::fmt(s22.worst_spread) + " (q=2), " + detail::fmt(s24.worst_spread) +
                " (q=4) (<=4)";
    return r;
}

/// 4. Zvonkin calibration, resolution recheck and conjugacy ladder.
inline CriterionResult acceptance_zvonkin(const AcceptanceOptions& o) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(4, "Zvonkin transform");
    auto smooth_b = [](const Grid& g) {
        return sample(g, Rank::vector, [](double, std::span<const double> y, std::span<double> out) {
            out[0] = 0.5 * std::sin(y[1]);
            out[1] = 0.5 * std::sin(y[0]);
        });
    };
    // Smooth drift.
    const Grid gs = build_grid(2, std::numbers::pi, 64, 1.0, 256);
    const GridFn bs = smooth_b(gs);
    const ZvonkinTransform tfs = build_transform(scaled_identity(gs, 1.0), bs, gs);
    const Grid gs2 = build_grid(2, std::numbers::pi, 128, 1.0, 512);
    const double recheck = solve_transform(scaled_identity(gs2, 1.0), smooth_b(gs2), gs2, tfs.lambda()).smallness();
    const auto tcs = transformed_coefficients(tfs, o.workers);
    const ModelPtr Xs = std::make_shared<GriddedModel>(bs, std::nullopt, Extension::periodic);
    std::vector<double> pathwise;
    double z_smooth = 0.0, pz_smooth = 0.0;
    auto ladder = nlohmann::json::array();
    for (int nt : {128, 256, 512}) {
        SimConfig cfg;
        cfg.x0 = {0.3, -0.2};
        cfg.nt = nt;
        cfg.paths = 10000;
        cfg.seed = o.seed;
        cfg.workers = o.workers;
        const auto c = conjugacy_check(Xs, tfs, tcs, default_test_battery(2), cfg);
        pathwise.push_back(c.pathwise);
        z_smooth = std::max(z_smooth, detail::max_abs_z(c.weak));
        pz_smooth = std::max(pz_smooth, detail::max_abs_z(c.weak, true));
        ladder.push_back(c);
    }
    const bool decreasing = pathwise[1] < pathwise[0] && pathwise[2] < pathwise[1];

    // Family C at eps = 0.1.
    const Grid gc = build_grid(2, std::numbers::pi, 128, 1.0, 128, 0.5);
    const GridFn bc = mollified_drift(Family::C, Mollifier{MollifierShape::gaussian_truncated, 0.1},
                                      default_params(Family::C), gc, o.workers);
    const ZvonkinTransform tfc = build_transform(scaled_identity(gc, 1.0), bc, gc);
    bool monotone = true;
    const auto& tr = tfc.smallness_trace();
    for (std::size_t k = 1; k < tr.size(); ++k) monotone = monotone && tr[k] <= tr[k - 1];
    const auto tcc = transformed_coefficients(tfc, o.workers);
    SimConfig cc;
    cc.x0 = {0.3, -0.2};
    cc.nt = 256;
    cc.paths = 10000;
    cc.seed = o.seed + 1;
    cc.workers = o.workers;
    const auto conj_c = conjugacy_check(std::make_shared<GriddedModel>(bc, std::nullopt, Extension::periodic), tfc, tcc,
                                        default_test_battery(2), cc);
    const double z_c = detail::max_abs_z(conj_c.weak);

    r.seconds = sw.seconds();
    r.pass = tfs.smallness() <= 0.5 && recheck <= 0.55 && tfc.smallness() <= 0.5 && monotone && decreasing &&
             z_smooth <= 3.0 && z_c <= 3.0 && r.seconds < 120.0;
    r.details = {{"smooth", transform_summary(tfs, tcs)},
                 {"smooth_recheck_smallness", recheck},
                 {"smooth_conjugacy", ladder},
                 {"family_c", transform_summary(tfc, tcc)},
                 {"family_c_conjugacy", conj_c},
                 {"weak_max_paired_z", {pz_smooth, detail::max_abs_z(conj_c.weak, true)}}};
    r.summary = "smallness " + detail::fmt(tfs.smallness(), 3) + " (2x res " + detail::fmt(recheck, 3) + "), C " +
                detail::fmt(tfc.smallness(), 3) + (monotone ? " monotone" : " NOT monotone") + "; pathwise " +
                detail::fmt(pathwise[0], 3) + " > " + detail::fmt(pathwise[1], 3) + " > " + detail::fmt(pathwise[2], 3) +
                "; weak max|z| " + detail::fmt(z_smooth, 3) + ", " + detail::fmt(z_c, 3) + " (<=3); " +
                detail::fmt(r.seconds, 3) + " s (<120)";
    return r;
}

/// 5. Gradient weight against closed forms and finite differences.
inline CriterionResult acceptance_bel(const AcceptanceOptions& o) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(5, "Gradient formula");
    SimConfig cfg;
    cfg.x0 = {0.3, 0.0};
    cfg.nt = 128;
    cfg.paths = 100000;
    cfg.seed = o.seed;
    cfg.workers = o.workers;
    cfg.with_flow = true;
    const ModelPtr A = make_model(Family::A, 1);
    const auto lin = bel_gradient(PathStream(A, cfg), [](const double* x) { return x[0]; }, 1.0);
    const auto sn = bel_gradient(PathStream(A, cfg), [](const double* x) { return std::sin(x[0]); }, 1.0);
    const double exact = std::exp(-0.5) * std::cos(cfg.x0[0]);
    auto zmax = [](const EstimatorReport& e, std::vector<double> ref) {
        double z = 0.0;
        for (std::size_t j = 0; j < ref.size(); ++j) z = std::max(z, std::abs(e.value[j] - ref[j]) / e.se[j]);
        return z;
    };
    const double z_lin = zmax(lin, {1.0, 0.0});
    const double z_sin = zmax(sn, {exact, 0.0});
    SimConfig cc = cfg;
    cc.seed = o.seed + 1;
    const auto cmp = bel_versus_finite_difference(
        make_model(Family::C, 8, MollifierShape::gaussian_truncated, o.workers), cc,
        [](const double* x) { return std::exp(-((x[0] - 0.5) * (x[0] - 0.5) + x[1] * x[1])); }, 1.0, 0.05);
    r.seconds = sw.seconds();
    r.pass = z_lin <= 3.0 && z_sin <= 3.0 && cmp.max_z <= 3.0 && r.seconds < 180.0;
    r.details = {{"linear", lin},
                 {"sine", sn},
                 {"sine_exact", {exact, 0.0}},
                 {"family_c_weight", cmp.weight},
                 {"family_c_finite_difference", cmp.finite_difference},
                 {"family_c_max_z", cmp.max_z},
                 {"family_c_paired_se", cmp.paired_se},
                 {"family_c_max_paired_z", cmp.max_paired_z}};
    r.summary = "A x1: max|z| " + detail::fmt(z_lin, 3) + "; A sin: max|z| " + detail::fmt(z_sin, 3) +
                "; C weight vs FD max|z| " + detail::fmt(cmp.max_z, 3) + " (<=3); M=1e5, " + detail::fmt(r.seconds, 3) +
                " s (<180)";
    return r;
}

/// 6. Krylov ratio for f = 1 and the family-D sweep over mollification levels.
inline CriterionResult acceptance_krylov(const AcceptanceOptions& o) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(6, "Krylov estimate");
    const Grid fg = build_grid(2, std::numbers::pi, 128, 1.0, 1);
    const NormParams np{0.0, 2.0, Exponent::finite(2.0), 0.0, -1.0, 1.0};
    SimConfig cfg;
    cfg.x0 = {0.3, 0.0};
    cfg.nt = 128;
    cfg.paths = 1000;
    cfg.seed = o.seed;
    cfg.workers = o.workers;
    const auto one = krylov_estimate(PathStream(make_model(Family::A, 1), cfg), GridFn::constant(fg, 1.0), np, 0.25, 0.75);
    // |||1|||_{L^2_2(0.25, 0.75)} = 0.5^{1/2} ||chi_1||_{L^2}, with the radial integral by quadrature.
    const double chi = std::sqrt(2.0 * std::numbers::pi * detail::simpson([](double s) {
                                     const double c = smooth_step(s);
                                     return c * c * s;
                                 }, 0.0, 2.0, 200000));
    const double analytic = 0.5 / (std::sqrt(0.5) * chi);
    const double err = std::abs(one.scalar() - analytic);

    const std::vector<double> x0{0.2, 0.1, 0.0};
    const Grid dg = build_grid(3, 2.5, 32, 1.0, 1);
    const auto bumps = bump_battery(dg, x0, 0.5);
    const NormParams np3{0.0, 2.0, Exponent::infinity(), 0.0, -1.0, 1.0};
    std::vector<double> fam_max;
    auto rows = nlohmann::json::array();
    for (int n : {2, 4, 8}) {
        SimConfig c;
        c.x0 = x0;
        c.nt = 128;
        c.paths = 20000;
        c.seed = o.seed + n;
        c.workers = o.workers;
        const auto reps = krylov_battery(PathStream(make_model(Family::D, n, MollifierShape::gaussian_truncated, o.workers), c),
                                         bumps, np3, 0.0, 1.0);
        double m = 0.0;
        for (const auto& e : reps) m = std::max(m, e.scalar());
        fam_max.push_back(m);
        rows.push_back({{"n", n}, {"family_max", m}, {"reports", reps}});
    }
    const double var = detail::spread(fam_max);
    r.pass = err <= 1e-6 && var <= 2.0;
    r.details = {{"constant_ratio", one}, {"analytic", analytic}, {"family_d", rows}, {"variation", var}};
    r.seconds = sw.seconds();
    r.summary = "f=1 ratio " + detail::fmt(one.scalar(), 10) + " vs " + detail::fmt(analytic, 10) + " (err " +
                detail::fmt(err, 3) + " <=1e-6); D family-max over n=2,4,8 varies " + detail::fmt(var, 3) + "x (<=2)";
    return r;
}

/// 7. Exponential moments: exact constant case and stability across M decades on family C.
inline CriterionResult acceptance_khasminskii(const AcceptanceOptions& o) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(7, "Khasminskii estimate");
    const Grid g = build_grid(2, std::numbers::pi, 16, 1.0, 1);
    SimConfig cfg;
    cfg.x0 = {0.3, 0.0};
    cfg.nt = 128;
    cfg.paths = 1000;
    cfg.seed = o.seed;
    cfg.workers = o.workers;
    const double c = 0.7, gamma = 2.0;
    const auto k = khasminskii_estimate(PathStream(make_model(Family::A, 1), cfg), GridFn::constant(g, c), gamma);
    const double exact = std::exp(gamma * c * cfg.T);
    const bool exact_ok = std::abs(k.report.scalar() - exact) <= 1e-12 * exact && k.report.scalar_se() == 0.0;

    const FamilyParams pc = default_params(Family::C);
    const Mollifier m{MollifierShape::gaussian_truncated, level_width(8)};
    const GridFn b = mollified_drift(Family::C, m, pc, std::nullopt, o.workers);
    std::vector<double> mag(b.grid().points());
    for (std::size_t p = 0; p < mag.size(); ++p) mag[p] = std::hypot(b.at(0, p, 0), b.at(0, p, 1));
    const GridFn fb(b.grid(), Rank::scalar, false, std::move(mag));
    const ModelPtr C = std::make_shared<GriddedModel>(b, std::nullopt, Extension::compact);
    double worst = 0.0;
    auto rows = nlohmann::json::array();
    for (double gm : {1.0, 2.0, 4.0}) {
        std::vector<KhasminskiiReport> by_m;
        for (std::size_t M : {1000u, 10000u, 100000u}) {
            SimConfig cc = cfg;
            cc.paths = M;
            cc.seed = o.seed + M;
            by_m.push_back(khasminskii_estimate(PathStream(C, cc), fb, gm));
        }
        for (std::size_t i = 1; i < by_m.size(); ++i) {
            const double z = std::abs(by_m[i].report.scalar() - by_m[i - 1].report.scalar()) /
                             combined_se(by_m[i].report.scalar_se(), by_m[i - 1].report.scalar_se());
            worst = std::max(worst, z);
        }
        rows.push_back({{"gamma", gm},
                        {"estimates", {by_m[0].report, by_m[1].report, by_m[2].report}}});
    }
    r.pass = exact_ok && worst <= 3.0;
    r.details = {{"constant", k.report}, {"constant_exact", exact}, {"family_c", rows}, {"max_z", worst}};
    r.seconds = sw.seconds();
    r.summary = "f=c: " + detail::fmt(k.report.scalar(), 12) + " vs e^{gcT} " + detail::fmt(exact, 12) + ", se " +
                detail::fmt(k.report.scalar_se()) + "; C across M=1e3,1e4,1e5, gamma<=4: max|z| " + detail::fmt(worst, 3) +
                " (<=3)";
    return r;
}

/// 8. Flow moments and pathwise contraction.
inline CriterionResult acceptance_flow(const AcceptanceOptions& o) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(8, "Flow and contraction");
    SimConfig cfg;
    cfg.nt = 128;
    cfg.paths = 2000;
    cfg.seed = o.seed;
    cfg.workers = o.workers;
    const std::vector<std::vector<double>> x0s{{0.3, 0.0}, {-0.2, 0.25}, {0.05, 0.05}, {0.6, -0.4}};
    const std::vector<double> ps{2.0, 4.0};
    const int d = 2;

    const auto fa = flow_moment_survey({{1, make_model(Family::A, 1)}}, x0s, cfg, ps);
    const auto fbm = flow_moment_survey({{1, make_model(Family::B, 1)}}, x0s, cfg, ps);
    bool exact = true;
    for (const auto* rows : {&fa, &fbm})
        for (const auto& row : *rows) exact = exact && row.value == std::pow(d, row.p / 2.0) && row.se == 0.0;

    // Family B closed forms: E X_T = e^{-T} x0 within 3 SE and J_T = (1 - dt)^Nt I, within dt of e^{-T}.
    SimConfig cb = cfg;
    cb.x0 = {1.0, -0.5};
    cb.paths = 20000;
    cb.with_flow = true;
    const auto ens = PathStream(make_model(Family::B, 1), cb).map(d + 1, [&](std::size_t, const PathView& v, double* out) {
        out[0] = v.state(v.nt)[0];
        out[1] = v.state(v.nt)[1];
        out[2] = v.flow(v.nt)[0];
    });
    double zb = 0.0;
    for (int a = 0; a < d; ++a) {
        const auto [m, s] = mean_se(ens, d + 1, a);
        zb = std::max(zb, std::abs(m - std::exp(-1.0) * cb.x0[a]) / s);
    }
    const double jerr = std::abs(ens[2] - std::exp(-1.0));
    const bool closed_b = zb <= 3.0 && jerr <= cb.dt();

    std::vector<LevelModel> levels;
    for (int n : {2, 4, 8}) levels.push_back({n, make_model(Family::C, n, MollifierShape::gaussian_truncated, o.workers)});
    const auto fc = flow_moment_survey(levels, x0s, cfg, ps);
    double flow_var = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        std::vector<double> v;
        for (const auto& row : fc)
            if (row.p == ps[i]) v.push_back(row.value);
        flow_var = std::max(flow_var, detail::spread(v));
    }

    const std::vector<double> y1{0.3, 0.0};
    SimConfig ct = cfg;
    ct.paths = 4000;
    const double ca = pathwise_contraction(make_model(Family::A, 1), y1, {0.4, 0.0}, ct, 2.0).scalar();
    const double cbv = pathwise_contraction(make_model(Family::B, 1), y1, {0.4, 0.0}, ct, 2.0).scalar();
    std::vector<double> cc;
    const ModelPtr C8 = levels.back().model;
    for (double gap : {0.1, 0.05, 0.025}) cc.push_back(pathwise_contraction(C8, y1, {0.3 + gap, 0.0}, ct, 2.0).scalar());
    const double contr_var = detail::spread(cc);
    const bool contr_ok = std::abs(ca - 1.0) <= 1e-9 && std::abs(cbv - 1.0) <= 1e-9 && contr_var <= 2.0;

    r.pass = exact && closed_b && flow_var <= 2.0 && contr_ok;
    r.details = {{"family_a", fa},         {"family_b", fbm},  {"family_b_mean_max_z", zb}, {"family_b_jacobian_error", jerr},
                 {"family_c", fc},         {"flow_variation", flow_var}, {"contraction_a", ca}, {"contraction_b", cbv},
                 {"contraction_c", cc},    {"contraction_variation", contr_var}};
    r.seconds = sw.seconds();
    r.summary = std::string("A/B survey ") + (exact ? "= d^{p/2}" : "!= d^{p/2}") + "; B mean max|z| " +
                detail::fmt(zb, 3) + ", |J_T - e^{-T}| " + detail::fmt(jerr, 3) + " (<=dt); C flow n-variation " +
                detail::fmt(flow_var, 3) + "x (<=2); contraction A " + detail::fmt(ca, 12) + ", B " +
                detail::fmt(cbv, 12) + ", C gap-variation " + detail::fmt(contr_var, 3) + "x (<=2)";
    return r;
}

/// 9. Brownian modulus slope and cross-mollifier agreement on family D.
inline CriterionResult acceptance_tightness(const AcceptanceOptions& o) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(9, "Tightness and weak agreement");
    SimConfig cfg;
    cfg.x0 = {0.0, 0.0};
    cfg.nt = 256;
    cfg.paths = 20000;
    cfg.seed = o.seed;
    cfg.workers = o.workers;
    const std::vector<double> deltas{1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
    const auto rows = tightness_modulus(PathStream(make_model(Family::A, 1), cfg), deltas);
    std::vector<double> vals;
    for (const auto& row : rows) vals.push_back(row.value);
    const double slope = loglog_slope(deltas, vals);

    const std::vector<double> x0{0.2, 0.1, 0.0};
    const Grid fg = build_grid(3, 2.5, 32, 1.0, 1);
    std::vector<NamedField> battery;
    int i = 0;
    for (const auto& f : bump_battery(fg, x0, 0.5)) battery.push_back({"bump" + std::to_string(i++), field_of(f)});
    const FamilyParams pd = default_params(Family::D);
    const ModelPtr m1 = make_model(Family::D, Mollifier{MollifierShape::gaussian_truncated, 0.05}, pd, o.workers);
    const ModelPtr m2 = make_model(Family::D, Mollifier{MollifierShape::polynomial_bump, 0.05}, pd, o.workers);
    SimConfig cd;
    cd.x0 = x0;
    cd.nt = 128;
    cd.paths = 20000;
    cd.seed = o.seed + 1;
    cd.workers = o.workers;
    const auto agree = weak_agreement(m1, m2, battery, cd);
    const double z = detail::max_abs_z(agree);
    r.pass = slope >= 0.2 && slope <= 0.3 && z <= 3.0;
    auto trows = nlohmann::json::array();
    for (const auto& row : rows) trows.push_back({{"delta", row.delta}, {"value", row.value}, {"se", row.se}});
    r.details = {{"modulus", trows}, {"slope", slope}, {"family_d_agreement", agree}, {"max_z", z}};
    r.seconds = sw.seconds();
    r.summary = "Brownian modulus slope " + detail::fmt(slope, 3) + " (in [0.2, 0.3]); D cross-mollifier max|z| " +
                detail::fmt(z, 3) + " (<=3)";
    return r;
}

/// Bit-identical estimator output for worker counts 1 and `workers` (at least 2).
inline bool reports_match_across_workers(const AcceptanceOptions& o, nlohmann::json* evidence = nullptr) {
    auto run = [&](int workers) {
        SimConfig cfg;
        cfg.x0 = {0.3, 0.0};
        cfg.nt = 64;
        cfg.paths = 3000;
        cfg.seed = o.seed;
        cfg.workers = workers;
        cfg.with_flow = true;
        const ModelPtr C = make_model(Family::C, 4, MollifierShape::gaussian_truncated, workers);
        const PathEnsemble ens = simulate(C, cfg);
        const Grid g = build_grid(2, std::numbers::pi, 32, 1.0, 1);
        NormParams np{0.0, 2.0, Exponent::finite(2.0), 0.0, -1.0, 1.0};
        const GridFn bump = bump_battery(g, cfg.x0, 0.5).front();
        nlohmann::json j;
        j["krylov"] = krylov_estimate(ens, bump, np, 0.0, 1.0);
        j["khasminskii"] = khasminskii_estimate(ens, bump, 2.0).report;
        j["bel"] = bel_gradient(ens, [](const double* x) { return std::sin(x[0]); }, 1.0);
        j["tightness_first"] = tightness_modulus(ens, {0.25}).front().value;
        j["endpoint_sum"] = pairwise_sum(ens.states().data(), ens.states().size());
        return j.dump();
    };
    const std::string a = run(1), b = run(std::max(2, o.workers));
    if (evidence) *evidence = {{"workers", {1, std::max(2, o.workers)}}, {"bytes", a.size()}, {"identical", a == b}};
    return a == b;
}

/// 10. Determinism across worker counts and the whole-suite time budget.
inline CriterionResult acceptance_infrastructure(const AcceptanceOptions& o, double suite_seconds) {
    detail::Stopwatch sw;
    CriterionResult r = detail::criterion(10, "Infrastructure");
    nlohmann::json ev;
    const bool same = reports_match_across_workers(o, &ev);
    r.seconds = sw.seconds();
    const double total = suite_seconds + r.seconds;
    r.pass = same && total < 900.0;
    r.details = {{"determinism", ev}, {"suite_seconds", total}};
    r.summary = std::string("reports ") + (same ? "bit-identical" : "DIFFER") + " across worker counts; suite " +
                detail::fmt(total, 4) + " s (<900)";
    return r;
}

using CriterionFn = std::function<CriterionResult(const AcceptanceOptions&)>;

struct AcceptanceSummary {
    std::vector<CriterionResult> results;
    int passed = 0;
    double seconds = 0.0;
};

inline AcceptanceSummary run_acceptance(const AcceptanceOptions& o, const std::vector<int>& only = {},
                                        const std::function<void(const CriterionResult&)>& on_result = {}) {
    const std::vector<CriterionFn> fns{acceptance_pde_exactness, acceptance_duality, acceptance_maxreg,
                                       acceptance_zvonkin,       acceptance_bel,     acceptance_krylov,
                                       acceptance_khasminskii,   acceptance_flow,    acceptance_tightness};
    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    AcceptanceSummary s;
    detail::Stopwatch sw;
    auto record = [&](CriterionResult res) {
        if (res.pass) ++s.passed;
        if (on_result) on_result(res);
        s.results.push_back(std::move(res));
    };
    for (std::size_t i = 0; i < fns.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!wanted(id)) continue;
        try {
            record(fns[i](o));
        } catch (const std::exception& e) {
            CriterionResult failed = detail::criterion(id, "criterion " + std::to_string(id));
            failed.summary = std::string("error: ") + e.what();
            record(std::move(failed));
        }
    }
    if (wanted(10)) record(acceptance_infrastructure(o, sw.seconds()));
    s.seconds = sw.seconds();
    return s;
}

} // namespace zvlab
