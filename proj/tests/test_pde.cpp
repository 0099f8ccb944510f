#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "zvlab/pde.hpp"

using namespace zvlab;

namespace {

constexpr double kPi = std::numbers::pi;

GridFn diagonal(const Grid& g, auto&& c) {
    return sample(g, Rank::matrix, [&](double, std::span<const double> x, std::span<double> out) {
        const double v = c(x);
        for (int i = 0; i < g.dim; ++i)
            for (int j = 0; j < g.dim; ++j) out[i * g.dim + j] = i == j ? v : 0.0;
    });
}

ParabolicProblem forward_problem(GridFn a, std::optional<GridFn> b, double lambda, std::optional<GridFn> f) {
    return ParabolicProblem{std::move(a), std::move(b), lambda, std::move(f), Direction::forward,
                            AdjointMode::spectral_divergence};
}

// Classical RK4 for a complex scalar ODE y' = F(t, y) on [0, T].
template <class F>
std::complex<double> rk4(F&& F_, std::complex<double> y, double T, int n) {
    const double h = T / n;
    for (int k = 0; k < n; ++k) {
        const double t = k * h;
        const auto k1 = F_(t, y), k2 = F_(t + h / 2, y + h / 2 * k1), k3 = F_(t + h / 2, y + h / 2 * k2),
                   k4 = F_(t + h, y + h * k3);
        y += h / 6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

double max_abs(std::span<const double> v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace

TEST(Ellipticity, CertificateAndViolations) {
    const Grid g = build_grid(2, kPi, 16, 1.0, 4);
    const auto cert = certify_ellipticity(diagonal(g, [](auto x) { return 1.0 + 0.5 * std::sin(x[0]); }));
    EXPECT_NEAR(cert.min_eigenvalue, 0.5, 0.02);
    EXPECT_NEAR(cert.c0, 2.0, 0.1);
    for (std::size_t k = 1; k < cert.omega.size(); ++k) EXPECT_GE(cert.omega[k], cert.omega[k - 1]);
    EXPECT_THROW(certify_ellipticity(diagonal(g, [](auto x) { return std::sin(x[0]); })), CertificateViolation);
    const GridFn skew = sample(g, Rank::matrix, [](double, std::span<const double>, std::span<double> o) {
        o[0] = 1;
        o[1] = 0.5;
        o[2] = -0.5;
        o[3] = 1;
    });
    EXPECT_THROW(certify_ellipticity(skew), CertificateViolation);
}

TEST(SolveForward, ConstantSourceGivesTime) {
    const Grid g = build_grid(2, kPi, 64, 1.0, 512);
    const GridFn u = solve_forward(forward_problem(scaled_identity(g, 1.0), std::nullopt, 0.0, GridFn::constant(g, 1.0)), g);
    for (int k = 0; k <= g.nt; k += 64)
        for (std::size_t p = 0; p < g.points(); p += 97) EXPECT_NEAR(u.at(k, p), g.time(k), 1e-10);
}

TEST(SolveForward, SingleModeWithDecay) {
    // d_t g = -2 g + e^{-t}, g(0) = 0, so g = e^{-t} - e^{-2t}.
    const auto ode = rk4([](double t, std::complex<double> y) { return -2.0 * y + std::exp(-t); }, 0.0, 1.0, 4000);
    ASSERT_NEAR(ode.real(), std::exp(-1.0) - std::exp(-2.0), 1e-12);

    const Grid g = build_grid(2, kPi, 64, 1.0, 512);
    const GridFn f = sample_scalar_time(g, [](double t, auto x) { return std::exp(-t) * std::sin(x[0]); });
    const GridFn u = solve_forward(forward_problem(scaled_identity(g, 1.0), std::nullopt, 1.0, f), g);
    const double tol = 5 * (g.time_step() + g.spacing() * g.spacing());
    double err = 0;
    double x[3];
    for (int k = 0; k <= g.nt; ++k) {
        const double gt = std::exp(-g.time(k)) - std::exp(-2 * g.time(k));
        for (std::size_t p = 0; p < g.points(); ++p) {
            g.point(p, x);
            err = std::max(err, std::abs(u.at(k, p) - gt * std::sin(x[0])));
        }
    }
    EXPECT_LE(err, tol);
}

TEST(SolveForward, ConstantDriftComplexMode) {
    // u = Im(g(t) e^{i x1}) with g' = (-1 + i) g + 1, g(0) = 0.
    const Grid g = build_grid(2, kPi, 64, 1.0, 512);
    const GridFn b = sample(g, Rank::vector, [](double, std::span<const double>, std::span<double> o) {
        o[0] = 1.0;
        o[1] = 0.0;
    });
    const GridFn f = sample_scalar(g, [](auto x) { return std::sin(x[0]); });
    const GridFn u = solve_forward(forward_problem(scaled_identity(g, 1.0), b, 0.0, f), g);
    const std::complex<double> I(0, 1);
    const double tol = 5 * (g.time_step() + g.spacing() * g.spacing());
    double x[3];
    for (int k : {64, 256, 512}) {
        const auto gk = rk4([&](double, std::complex<double> y) { return (-1.0 + I) * y + 1.0; }, 0.0, g.time(k), 4 * k);
        const auto closed = (1.0 - std::exp((-1.0 + I) * g.time(k))) / (1.0 - I);
        ASSERT_NEAR(std::abs(gk - closed), 0.0, 1e-12);
        for (std::size_t p = 0; p < g.points(); p += 13) {
            g.point(p, x);
            EXPECT_NEAR(u.at(k, p), (gk * std::exp(I * x[0])).imag(), tol);
        }
    }
}

TEST(SolveForward, LinearityAndPositivity) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 128);
    const GridFn a = sample(g, Rank::matrix, [](double, std::span<const double> x, std::span<double> o) {
        o[0] = 1.0 + 0.3 * std::sin(x[0]);
        o[1] = o[2] = 0.1 * std::cos(x[1]);
        o[3] = 1.0 + 0.3 * std::cos(x[0] + x[1]);
    });
    const GridFn b = sample(g, Rank::vector, [](double, std::span<const double> x, std::span<double> o) {
        o[0] = 0.5 * std::sin(x[1]);
        o[1] = -0.4;
    });
    const GridFn f1 = sample_scalar_time(g, [](double t, auto x) { return std::exp(-(x[0] * x[0] + x[1] * x[1])) * (1 + t); });
    const GridFn f2 = sample_scalar(g, [](auto x) { return 0.5 + 0.5 * std::cos(2 * x[0]); });
    std::vector<double> sum(f1.values().size());
    for (int s = 0; s <= g.nt; ++s)
        for (std::size_t p = 0; p < g.points(); ++p) sum[s * g.points() + p] = f1.at(s, p) + f2.at(0, p);
    const GridFn u1 = solve_forward(forward_problem(a, b, 1.0, f1), g);
    const GridFn u2 = solve_forward(forward_problem(a, b, 1.0, f2), g);
    const GridFn u12 = solve_forward(forward_problem(a, b, 1.0, f1.with_values(sum)), g);
    const double scale = max_abs(u12.values());
    for (std::size_t i = 0; i < u12.values().size(); ++i)
        EXPECT_NEAR(u12.values()[i], u1.values()[i] + u2.values()[i], 1e-9 * scale);
    const double s1 = max_abs(u1.values()), s2 = max_abs(u2.values());
    for (double v : u1.values()) EXPECT_GE(v, -1e-9 * s1);
    for (double v : u2.values()) EXPECT_GE(v, -1e-9 * s2);
}

TEST(SolveForward, RejectsUnstableSplitting) {
    // Oscillation of a11 exceeds the weakest direction of abar, which the bound cannot absorb.
    const Grid g = build_grid(2, kPi, 32, 1.0, 10);
    const GridFn a = sample(g, Rank::matrix, [](double, std::span<const double> x, std::span<double> o) {
        o[0] = 1.0 + 0.9 * std::sin(x[0]);
        o[1] = o[2] = 0.0;
        o[3] = 0.2;
    });
    try {
        solve_forward(forward_problem(a, std::nullopt, 0.0, GridFn::constant(g, 1.0)), g);
        FAIL();
    } catch (const StepInstability& e) {
        EXPECT_NE(std::string(e.what()).find("increase Nt"), std::string::npos);
    }
    const GridFn mild = sample(g, Rank::matrix, [](double, std::span<const double> x, std::span<double> o) {
        o[0] = o[3] = 1.0 + 0.9 * std::sin(x[0]);
        o[1] = o[2] = 0.0;
    });
    EXPECT_NO_THROW(solve_forward(forward_problem(mild, std::nullopt, 0.0, GridFn::constant(g, 1.0)), g));
}

TEST(SolveBackward, MassConservationAndLambdaFactor) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 64);
    const GridFn a = sample(g, Rank::matrix, [](double, std::span<const double> x, std::span<double> o) {
        o[0] = 1.0 + 0.3 * std::sin(x[0]);
        o[1] = o[2] = 0.1 * std::sin(x[1]);
        o[3] = 1.2;
    });
    const GridFn psi = sample_scalar(g, [](auto x) { return std::exp(std::cos(x[0]) + 0.5 * std::sin(x[1])); });
    for (auto mode : {AdjointMode::spectral_divergence, AdjointMode::lattice_adjoint}) {
        ParabolicProblem prob{a, std::nullopt, 0.0, std::nullopt, Direction::backward_adjoint, mode};
        const GridFn w0 = solve_backward(prob, g, psi);
        const auto mass = [&](const GridFn& w, int s) {
            double m = 0;
            for (double v : w.slice(s)) m += v;
            return m;
        };
        const double m0 = mass(w0, g.nt);
        for (int s = 0; s <= g.nt; s += 8) EXPECT_NEAR(mass(w0, s), m0, 1e-10 * std::abs(m0));

        prob.lambda = 2.0;
        const GridFn wl = solve_backward(prob, g, psi);
        for (int s = 0; s <= g.nt; s += 8) {
            const double factor = std::exp(2.0 * (g.time(s) - g.horizon));
            for (std::size_t p = 0; p < g.points(); p += 7) EXPECT_NEAR(wl.at(s, p), factor * w0.at(s, p), 1e-12);
        }
    }
}

TEST(SolveBackward, HeatDecayOfSingleMode) {
    // d_s g = g backwards from g(t) = 1: g(s) = e^{-(t - s)}.
    const auto ode = rk4([](double, std::complex<double> y) { return -y; }, 1.0, 1.0, 2000);
    ASSERT_NEAR(ode.real(), std::exp(-1.0), 1e-12);
    const Grid g = build_grid(2, kPi, 64, 1.0, 512);
    ParabolicProblem prob{scaled_identity(g, 1.0), std::nullopt, 0.0, std::nullopt, Direction::backward_adjoint,
                          AdjointMode::spectral_divergence};
    const GridFn psi = sample_scalar(g, [](auto x) { return std::sin(x[1]); });
    const GridFn w = solve_backward(prob, g, psi);
    double x[3];
    for (int s = 0; s <= g.nt; s += 32)
        for (std::size_t p = 0; p < g.points(); p += 11) {
            g.point(p, x);
            EXPECT_NEAR(w.at(s, p), std::exp(-(g.horizon - g.time(s))) * std::sin(x[1]), 5 * g.time_step());
        }
}

TEST(SolveBackward, SourceMatchesDuhamelOfForward) {
    // Constant-coefficient backward problem with source f: w = (T - s) f for a = abar, lambda = 0, f const in x.
    const Grid g = build_grid(2, kPi, 16, 1.0, 32);
    ParabolicProblem prob{scaled_identity(g, 1.0), std::nullopt, 0.0, GridFn::constant(g, 2.0), Direction::backward_adjoint,
                          AdjointMode::lattice_adjoint};
    const GridFn w = solve_backward(prob, g);
    for (int s = 0; s <= g.nt; ++s) EXPECT_NEAR(w.at(s, 5), 2.0 * (g.horizon - g.time(s)), 1e-12);
}

TEST(Duality, IdentityAndOrthogonalPair) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 64);
    const GridFn a = scaled_identity(g, 1.0);
    const GridFn phi = sample_scalar(g, [](auto x) { return std::sin(x[0]); });
    const GridFn psi = sample_scalar(g, [](auto x) { return std::cos(x[0]); });
    EXPECT_EQ(duality_residual(a, 0.0, phi, psi, 0.5, 0.5, g), 0.0);
    for (int nx : {16, 32, 64}) {
        const Grid gn = build_grid(2, kPi, nx, 1.0, 2 * nx);
        const double h = gn.spacing();
        const double r = duality_residual(scaled_identity(gn, 1.0), 0.0, sample_scalar(gn, [](auto x) { return std::sin(x[0]); }),
                                          sample_scalar(gn, [](auto x) { return std::cos(x[0]); }), 0.25, 0.75, gn);
        EXPECT_LE(r, h * h + gn.time_step());
    }
}

TEST(Duality, VariableCoefficientConvergesInSpace) {
    std::vector<double> res;
    std::vector<double> hs;
    for (int nx : {16, 32, 64, 128}) {
        const Grid g = build_grid(2, kPi, nx, 1.0, 512);
        const GridFn a = diagonal(g, [](auto x) { return 1.0 + 0.5 * std::sin(x[0]); });
        const GridFn phi = sample_scalar(g, [](auto x) { return std::sin(x[0]); });
        const GridFn psi = sample_scalar(g, [](auto x) { return std::cos(x[0]) + std::sin(x[0]); });
        res.push_back(duality_residual(a, 0.0, phi, psi, 0.25, 0.75, g));
        hs.push_back(g.spacing());
    }
    for (std::size_t k = 1; k < res.size(); ++k) {
        const double order = std::log(res[k - 1] / res[k]) / std::log(hs[k - 1] / hs[k]);
        EXPECT_GE(order, 1.8);
    }
}

TEST(Duality, HalvingLadderOnSmoothPair) {
    std::vector<double> res;
    for (int nx : {32, 64, 128}) {
        const Grid g = build_grid(2, kPi, nx, 1.0, 2 * nx);
        const GridFn a = diagonal(g, [](auto x) { return 1.0 + 0.5 * std::sin(x[0]); });
        const GridFn phi = sample_scalar(g, [](auto x) { return std::sin(x[0]); });
        const GridFn psi = sample_scalar(g, [](auto x) { return std::cos(x[0]) + std::sin(x[0]); });
        res.push_back(duality_residual(a, 0.0, phi, psi, 0.25, 0.75, g));
    }
    EXPECT_GE(res[0] / res[1], 3.5);
    EXPECT_GE(res[1] / res[2], 3.5);
    EXPECT_LE(res[2], 1e-4);
}

TEST(Duality, LatticeAdjointIsExactTranspose) {
    const Grid g = build_grid(2, kPi, 16, 1.0, 8);
    const GridFn a = sample(g, Rank::matrix, [](double, std::span<const double> x, std::span<double> o) {
        o[0] = 1.0 + 0.3 * std::sin(x[0]);
        o[1] = o[2] = 0.2 * std::cos(x[0] + x[1]);
        o[3] = 1.0 + 0.2 * std::cos(x[1]);
    });
    const GridFn b = sample(g, Rank::vector, [](double, std::span<const double> x, std::span<double> o) {
        o[0] = std::sin(x[1]);
        o[1] = 0.3 * std::cos(x[0]);
    });
    ParabolicProblem prob{a, b, 0.7, std::nullopt, Direction::forward, AdjointMode::lattice_adjoint};
    const auto F = assemble_step_matrix(prob, g, 0, Direction::forward);
    const auto B = assemble_step_matrix(prob, g, 0, Direction::backward_adjoint);
    const std::size_t N = g.points();
    double worst = 0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) worst = std::max(worst, std::abs(F[i * N + j] - B[j * N + i]));
    EXPECT_LE(worst, 1e-13);

    const GridFn phi = sample_scalar(g, [](auto x) { return std::sin(x[0]) + std::cos(2 * x[1]); });
    const GridFn psi = sample_scalar(g, [](auto x) { return std::exp(std::sin(x[1])); });
    EXPECT_LE(duality_residual(a, 0.7, phi, psi, 0.0, 1.0, g, AdjointMode::lattice_adjoint), 1e-12);
}

TEST(MaxReg, SurveyAndLambdaSweep) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 64);
    const GridFn a = scaled_identity(g, 1.0);
    std::vector<NamedSource> sources;
    for (int k = 0; k < 3; ++k)
        sources.push_back({"s" + std::to_string(k), sample_scalar_time(g, [k](double t, auto x) {
                               return std::sin((k + 1) * x[0] + t) * std::cos(x[1]);
                           })});
    NormParams np{0.0, 2.0, Exponent::finite(2.0), 0.0, -1.0, 1.0};
    const auto rep = max_reg_survey(a, std::nullopt, 1.0, sources, np, g);
    ASSERT_EQ(rep.rows.size(), 3u);
    for (const auto& r : rep.rows) {
        EXPECT_TRUE(std::isfinite(r.lambda_term) && r.lambda_term > 0);
        EXPECT_TRUE(std::isfinite(r.time_term) && r.time_term > 0);
        EXPECT_TRUE(std::isfinite(r.hessian_term) && r.hessian_term > 0);
    }
    EXPECT_NE(rep.to_csv().find("s2,"), std::string::npos);
    np.alpha = 1.0;
    EXPECT_THROW(max_reg_survey(a, std::nullopt, 1.0, sources, np, g), InvalidParameter);

    np.alpha = 0.0;
    const auto sw = lambda_sweep(a, sources, {1, 4, 16, 64}, np, g);
    EXPECT_GE(sw.worst_spread, 1.0);
    EXPECT_TRUE(std::isfinite(sw.worst_spread));
}

TEST(MaxReg, TimeDerivativeIsBackwardDifference) {
    const Grid g = build_grid(1, 1.0, 8, 1.0, 4);
    const GridFn u = sample_scalar_time(g, [](double t, auto) { return t * t; });
    const GridFn du = time_derivative(u);
    EXPECT_NEAR(du.at(2, 0), (0.25 - 0.0625) / 0.25, 1e-14);
    EXPECT_EQ(du.at(0, 3), du.at(1, 3));
}
