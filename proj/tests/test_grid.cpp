#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "zvlab/grid.hpp"
#include "zvlab/norms.hpp"

using namespace zvlab;

namespace {

constexpr double kPi = std::numbers::pi;

// Composite Simpson rule on [a, b] with n (even) panels.
template <class F>
double simpson(F&& f, double a, double b, int n = 20000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

// Continuum attenuation of sin(x1) under a radial 2-D kernel:
// int rho(|y|) cos(y1) dy / int rho = int rho(s) s J0(s) ds / int rho(s) s ds.
double attenuation_2d(const Mollifier& m) {
    const double R = m.support_radius(2);
    const double num = simpson([&](double s) { return m.profile(s, 2) * s * std::cyl_bessel_j(0.0, s); }, 0.0, R);
    const double den = simpson([&](double s) { return m.profile(s, 2) * s; }, 0.0, R);
    return num / den;
}

double family_c_drift_component(std::span<const double> x, int c) {
    const double r = std::hypot(x[0], x[1]);
    return -0.5 * (x[c] / r) * std::pow(r, -0.3) * smooth_step(r);
}

} // namespace

TEST(BuildGrid, SpacingFromArithmetic) {
    const Grid g = build_grid(2, kPi, 64, 1.0, 100);
    EXPECT_DOUBLE_EQ(g.spacing(), 2 * kPi / 64);
    EXPECT_DOUBLE_EQ(g.time_step(), 0.01);
    EXPECT_DOUBLE_EQ(build_grid(3, 1.0, 16, 0.5, 50).spacing(), 0.125);
}

TEST(BuildGrid, RejectsOddAndSmallNx) {
    try {
        build_grid(2, kPi, 7, 1.0, 100);
        FAIL();
    } catch (const InvalidParameter& e) {
        EXPECT_NE(std::string(e.what()).find("Nx"), std::string::npos);
    }
    EXPECT_THROW(build_grid(2, kPi, 6, 1.0, 10), InvalidParameter);
    EXPECT_THROW(build_grid(4, kPi, 8, 1.0, 10), InvalidParameter);
    EXPECT_THROW(build_grid(2, -1.0, 8, 1.0, 10), InvalidParameter);
    EXPECT_THROW(build_grid(2, 1.0, 8, 0.0, 10), InvalidParameter);
    EXPECT_THROW(build_grid(2, 1.0, 8, 1.0, 0), InvalidParameter);
}

TEST(Sample, ConstantAndSine) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 4);
    const GridFn one = sample_scalar(g, [](auto) { return 1.0; });
    for (double v : one.values()) EXPECT_EQ(v, 1.0);
    const GridFn s = sample_scalar(g, [](auto x) { return std::sin(x[0]); });
    double x[3];
    for (std::size_t p = 0; p < g.points(); ++p) {
        g.point(p, x);
        EXPECT_DOUBLE_EQ(s.at(0, p), std::sin(x[0]));
    }
}

TEST(Sample, NonFiniteReportsIndex) {
    const Grid g = build_grid(2, kPi, 16, 1.0, 4);
    try {
        sample_scalar(g, [](auto x) { return 1.0 / std::hypot(x[0], x[1]); });
        FAIL();
    } catch (const NonFiniteValue& e) {
        double x[3];
        g.point(e.index(), x);
        EXPECT_EQ(x[0], 0.0);
        EXPECT_EQ(x[1], 0.0);
    }
}

TEST(Sample, SingularDriftFiniteOnShiftedLattice) {
    const Grid g = build_grid(2, kPi, 64, 1.0, 4, 0.5);
    const GridFn b = sample(g, Rank::vector, [](double, std::span<const double> x, std::span<double> out) {
        out[0] = family_c_drift_component(x, 0);
        out[1] = family_c_drift_component(x, 1);
    });
    double x[3];
    for (std::size_t p = 0; p < g.points(); ++p) {
        g.point(p, x);
        EXPECT_DOUBLE_EQ(b.at(0, p, 1), family_c_drift_component(std::span<const double>(x, 2), 1));
    }
}

TEST(Mollify, ConstantIsFixed) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 4);
    const GridFn c = GridFn::constant(g, 3.5);
    for (auto shape : {MollifierShape::gaussian_truncated, MollifierShape::polynomial_bump}) {
        const GridFn m = mollify(c, {shape, 0.3});
        for (double v : m.values()) EXPECT_NEAR(v, 3.5, 1e-13);
    }
}

TEST(Mollify, KernelMassAndSupport) {
    const Grid g = build_grid(2, kPi, 64, 1.0, 4);
    for (auto shape : {MollifierShape::gaussian_truncated, MollifierShape::polynomial_bump}) {
        const Mollifier m{shape, 0.25};
        const auto k = mollifier_kernel(g, m);
        double mass = 0.0;
        double x[3];
        for (std::size_t p = 0; p < k.size(); ++p) {
            EXPECT_GE(k[p], 0.0);
            mass += k[p];
            const auto idx = g.multi_index(p);
            const double dx = g.wrap_displacement(idx[0] * g.spacing());
            const double dy = g.wrap_displacement(idx[1] * g.spacing());
            if (std::hypot(dx, dy) > 4 * m.width) EXPECT_EQ(k[p], 0.0);
            (void)x;
        }
        EXPECT_NEAR(mass, 1.0, 1e-10);
    }
    EXPECT_THROW(mollifier_kernel(g, {MollifierShape::gaussian_truncated, 1.0}), InvalidParameter);
    EXPECT_THROW(mollifier_kernel(g, {MollifierShape::gaussian_truncated, 0.0}), InvalidParameter);
}

TEST(Mollify, SineAttenuationMatchesQuadrature) {
    const Grid g = build_grid(2, kPi, 128, 1.0, 4);
    const GridFn s = sample_scalar(g, [](auto x) { return std::sin(x[0]); });
    double prev = 0.0;
    for (double eps : {0.4, 0.2, 0.1}) {
        for (auto shape : {MollifierShape::gaussian_truncated, MollifierShape::polynomial_bump}) {
            const Mollifier m{shape, eps};
            const double a = attenuation_2d(m);
            const GridFn out = mollify(s, m);
            for (std::size_t p = 0; p < g.points(); p += 37) EXPECT_NEAR(out.at(0, p), a * s.at(0, p), 2e-5);
        }
        const double a = attenuation_2d({MollifierShape::gaussian_truncated, eps});
        EXPECT_GT(a, prev);
        EXPECT_LT(a, 1.0);
        prev = a;
    }
}

TEST(Mollify, PreservesMeanAndContractsLp) {
    const Grid g = build_grid(2, kPi, 64, 1.0, 4);
    const GridFn f = sample_scalar(g, [](auto x) {
        return std::exp(std::sin(x[0]) * std::cos(2 * x[1])) + 0.3 * std::sin(5 * x[1]) + (x[0] > 1.0 ? 1.0 : 0.0);
    });
    for (auto shape : {MollifierShape::gaussian_truncated, MollifierShape::polynomial_bump}) {
        const GridFn m = mollify(f, {shape, 0.2});
        double s0 = 0, s1 = 0;
        for (std::size_t p = 0; p < g.points(); ++p) {
            s0 += f.at(0, p);
            s1 += m.at(0, p);
        }
        EXPECT_NEAR(s1, s0, 1e-10 * std::abs(s0));
        for (double p : {1.0, 2.0, 5.0}) EXPECT_LE(lattice_lp_norm(m, p), lattice_lp_norm(f, p) * (1 + 1e-12));
    }
}

TEST(Mollify, SingularDriftLocalizedNormStable) {
    const Grid g = build_grid(2, kPi, 128, 1.0, 4, 0.5);
    const GridFn b = sample(g, Rank::vector, [](double, std::span<const double> x, std::span<double> out) {
        out[0] = family_c_drift_component(x, 0);
        out[1] = family_c_drift_component(x, 1);
    });
    NormParams np{0.0, 5.0, Exponent::infinity(), 0.0, -1.0, 1.0};
    const double base = localized_norm(b, np).value;
    for (double eps : {0.2, 0.1, 0.05}) {
        const double ratio = localized_norm(mollify(b, {MollifierShape::gaussian_truncated, eps}), np).value / base;
        EXPECT_GT(ratio, 0.5);
        EXPECT_LE(ratio, 1.05);
    }
}

TEST(Cutoff, SupportProperties) {
    const Grid g = build_grid(2, kPi, 64, 1.0, 4);
    const double z[2] = {0.0, 0.0};
    const double r = 0.5;
    const GridFn chi = cutoff(g, z, r);
    double x[3];
    for (std::size_t p = 0; p < g.points(); ++p) {
        g.point(p, x);
        const double d = std::hypot(x[0], x[1]);
        const double v = chi.at(0, p);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        if (d <= r) EXPECT_EQ(v, 1.0);
        if (d > 2 * r) EXPECT_EQ(v, 0.0);
    }
    EXPECT_EQ(smooth_step(0.0), 1.0);
    EXPECT_EQ(smooth_step(2.5), 0.0);
    EXPECT_GT(smooth_step(1.5), 0.0);
    EXPECT_LT(smooth_step(1.5), 1.0);
    for (double s = 1.0; s < 2.0; s += 0.01) EXPECT_GE(smooth_step(s), smooth_step(s + 0.01));
    EXPECT_THROW(cutoff(g, z, kPi / 2), InvalidParameter);
    EXPECT_THROW(cutoff(g, z, 0.0), InvalidParameter);
}

TEST(Cutoff, AnalyticDerivativesMatchDifferences) {
    for (double s = 1.05; s < 2.0; s += 0.1) {
        double d1, d2;
        smooth_step_derivatives(s, d1, d2);
        const double h = 1e-5;
        EXPECT_NEAR(d1, (smooth_step(s + h) - smooth_step(s - h)) / (2 * h), 1e-6);
        EXPECT_NEAR(d2, (smooth_step(s + h) - 2 * smooth_step(s) + smooth_step(s - h)) / (h * h), 1e-3);
    }
}

TEST(LocalMaximal, Constant) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 4);
    const GridFn m = local_maximal(GridFn::constant(g, 2.0), 0.8);
    for (double v : m.values()) EXPECT_NEAR(v, 2.0, 1e-14);
}

TEST(LocalMaximal, IndicatorOfUnitBallAtOrigin) {
    const Grid g = build_grid(2, 4.0, 64, 1.0, 4);
    const GridFn f = sample_scalar(g, [](auto x) { return std::hypot(x[0], x[1]) < 1.0 ? 1.0 : 0.0; });
    const GridFn m = local_maximal(f, 1.0);
    const std::size_t origin = g.linear({32, 32, 0});
    EXPECT_EQ(m.at(0, origin), 1.0);
}

TEST(LocalMaximal, RadialAverageOfNorm) {
    // Dense midpoint quadrature of the ball average of |y| over B_R in 2-D.
    const double R = 0.5;
    const int n = 2000;
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double x = -R + (i + 0.5) * 2 * R / n, y = -R + (j + 0.5) * 2 * R / n;
            const double r = std::hypot(x, y);
            if (r < R) {
                num += r;
                den += 1;
            }
        }
    const double oracle = num / den;
    ASSERT_NEAR(oracle, R * 2.0 / 3.0, 1e-4);

    const Grid g = build_grid(2, 2.0, 256, 1.0, 4);
    const GridFn f = sample_scalar(g, [](auto x) { return std::hypot(x[0], x[1]); });
    const GridFn m = local_maximal(f, R);
    EXPECT_NEAR(m.at(0, g.linear({128, 128, 0})), oracle, 5e-3);
}

TEST(LocalMaximal, DominatesAndRejectsSmallRadius) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 4);
    const GridFn f = sample_scalar(g, [](auto x) { return std::sin(3 * x[0]) * std::cos(x[1]); });
    const GridFn m = local_maximal(f.magnitude(), 0.6);
    for (std::size_t p = 0; p < g.points(); ++p) EXPECT_GE(m.at(0, p), std::abs(f.at(0, p)) - 1e-15);
    EXPECT_THROW(local_maximal(f, 0.5 * g.spacing()), InvalidParameter);
}

TEST(LocalMaximal, PointwiseDifferenceBound) {
    // |f(x) - f(y)| <= C |x - y| (M|grad f|(x) + M|grad f|(y) + ||f||_inf), one C for all pairs.
    const Grid g = build_grid(2, kPi, 32, 1.0, 4);
    const double R = 1.0;
    std::vector<double> constants;
    for (int k : {1, 2, 3}) {
        const GridFn f = sample_scalar(g, [k](auto x) { return std::sin(k * x[0]) * std::cos(x[1]) + 0.2 * std::cos(k * x[1]); });
        const GridFn grad = sample_scalar(g, [k](auto x) {
            const double fx = k * std::cos(k * x[0]) * std::cos(x[1]);
            const double fy = -std::sin(k * x[0]) * std::sin(x[1]) - 0.2 * k * std::sin(k * x[1]);
            return std::hypot(fx, fy);
        });
        const GridFn M = local_maximal(grad, R);
        double sup = 0;
        for (double v : f.values()) sup = std::max(sup, std::abs(v));
        double C = 0;
        double xa[3], xb[3];
        for (std::size_t p = 0; p < g.points(); ++p) {
            g.point(p, xa);
            for (std::size_t q = 0; q < g.points(); ++q) {
                g.point(q, xb);
                const double d = std::hypot(g.wrap_displacement(xa[0] - xb[0]), g.wrap_displacement(xa[1] - xb[1]));
                if (d == 0 || d > g.half_width / 4) continue;
                C = std::max(C, std::abs(f.at(0, p) - f.at(0, q)) / (d * (M.at(0, p) + M.at(0, q) + sup)));
            }
        }
        constants.push_back(C);
    }
    for (double C : constants) {
        EXPECT_GT(C, 0.0);
        EXPECT_LT(C, 1.0);
    }
}

TEST(LocalMaximal, LocalizedNormBounded) {
    const Grid g = build_grid(2, kPi, 32, 1.0, 16);
    NormParams np{0.0, 2.0, Exponent::finite(2.0), 0.0, -1.0, 0.75};
    std::vector<double> ratios;
    for (int k = 0; k < 10; ++k) {
        const GridFn f = sample_scalar_time(g, [k](double t, auto x) {
            return std::abs(std::sin((k % 3 + 1) * x[0] + t) * std::cos((k / 3 + 1) * x[1])) + 0.1 * k * std::exp(-x[0] * x[0] - x[1] * x[1]);
        });
        const double a = localized_norm(local_maximal(f, 0.8), np).value;
        const double b = localized_norm(f, np).value;
        ratios.push_back(a / b);
    }
    const auto st = ratio_stats(ratios);
    EXPECT_GE(st.min, 1.0 - 1e-12);
    EXPECT_LE(st.max, 3.0);
}
