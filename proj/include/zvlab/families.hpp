#pragma once

#include <cctype>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zvlab/coefficients.hpp"
#include "zvlab/grid.hpp"
#include "zvlab/pde.hpp"

namespace zvlab {

/// Coefficient families.
///
/// A: sigma = I, b = 0.
/// B: sigma = I, b = -kappa x.
/// C: d = 2, b = -c (x/|x|) |x|^{-0.3} chi(|x|/rho), so |b| is in L^p for p < 20/3.
/// D: d = 3, b = -c (x/|x|) |x|^{-1} (1 + |ln|x||)^{-gamma} chi(|x|/rho), in L^3 but no better.
/// E: d = 2, sigma = (1 + s |x|^{0.6} chi(|x|/rho)) I, b = 0.
enum class Family { A, B, C, D, E };

struct FamilyParams {
    double kappa = 1.0;        // B
    double c = 0.5;            // C, D drift strength; E amplitude of the sigma perturbation
    double exponent = 0.3;     // C singularity |x|^{-exponent}
    double log_power = 0.6;    // D logarithmic correction gamma
    double rho = 1.0;          // cutoff radius of the singular part
    int dim = 2;               // A, B only; C, E are planar and D is three-dimensional
};

inline char to_char(Family f) { return static_cast<char>('A' + static_cast<int>(f)); }

inline Family family_from_string(std::string_view s) {
    if (s.size() == 1) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        if (c >= 'A' && c <= 'E') return static_cast<Family>(c - 'A');
    }
    throw InvalidParameter("unknown family '" + std::string(s) + "' (expected A-E)");
}

/// Defaults per family; rho and exponents follow the catalog.
inline FamilyParams default_params(Family f) {
    FamilyParams p;
    switch (f) {
    case Family::C: p.dim = 2; p.rho = 1.0; break;
    case Family::D: p.dim = 3; p.rho = 0.5; break;
    case Family::E: p.dim = 2; p.c = 0.3; p.exponent = 0.6; p.rho = 1.0; break;
    default: break;
    }
    return p;
}

inline int family_dim(Family f, const FamilyParams& p) {
    switch (f) {
    case Family::C:
    case Family::E: return 2;
    case Family::D: return 3;
    default: return p.dim;
    }
}

inline double level_width(int n) {
    if (n < 1) throw InvalidParameter("mollification level n must be >= 1");
    return 1.0 / n;
}

/// Lattice carrying the mollified coefficients of C, D and E. Shifted by half a
/// cell so the singular point is never sampled; refined until h <= eps.
inline Grid coefficient_grid(Family f, double eps) {
    double L = std::numbers::pi;
    int nx = 256;
    int d = 2;
    if (f == Family::D) {
        L = 2.5;
        nx = 80;
        d = 3;
    }
    if (f == Family::A || f == Family::B) throw InvalidParameter("families A and B are analytic");
    const int need = 2 * static_cast<int>(std::ceil(L / eps - 1e-9));
    if (need > nx) nx = need;
    return build_grid(d, L, nx, 1.0, 1, 0.5);
}

namespace detail {

inline double radius(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

} // namespace detail

/// Unmollified drift of family C or D sampled on g (vector-valued, static).
inline GridFn raw_drift(Family f, const Grid& g, const FamilyParams& p) {
    if (f != Family::C && f != Family::D) throw InvalidParameter("only families C and D carry a singular drift");
    if (g.dim != family_dim(f, p)) throw InvalidParameter("grid dimension does not match the family");
    return sample(g, Rank::vector, [&](double, std::span<const double> x, std::span<double> out) {
        const double r = detail::radius(x);
        double mag = 0.0;
        if (f == Family::C)
            mag = p.c * std::pow(r, -p.exponent) * smooth_step(r / p.rho);
        else
            mag = p.c / (r * std::pow(1.0 + std::abs(std::log(r)), p.log_power)) * smooth_step(r / p.rho);
        for (int a = 0; a < g.dim; ++a) out[a] = -mag * x[a] / r;
    });
}

/// Unmollified diffusion matrix of family E.
inline GridFn raw_sigma(const Grid& g, const FamilyParams& p) {
    if (g.dim != 2) throw InvalidParameter("family E is planar");
    return sample(g, Rank::matrix, [&](double, std::span<const double> x, std::span<double> out) {
        const double r = detail::radius(x);
        const double s = 1.0 + p.c * std::pow(r, p.exponent) * smooth_step(r / p.rho);
        out[0] = out[3] = s;
        out[1] = out[2] = 0.0;
    });
}

/// Mollified drift b_n on the family's coefficient grid (or on `on` when given).
inline GridFn mollified_drift(Family f, const Mollifier& m, const FamilyParams& p, std::optional<Grid> on = std::nullopt,
                              int workers = 1) {
    const Grid g = on ? *on : coefficient_grid(f, m.width);
    return mollify(raw_drift(f, g, p), m, workers);
}

/// The mollified coefficient model of a family. The singular families are
/// continued by zero drift (and identity sigma) outside their coefficient box.
inline ModelPtr make_model(Family f, const Mollifier& m, const FamilyParams& p = {}, int workers = 1) {
    switch (f) {
    case Family::A: return std::make_shared<ConstantModel>(p.dim, 1.0);
    case Family::B: return std::make_shared<LinearDriftModel>(p.dim, p.kappa);
    case Family::C:
    case Family::D:
        return std::make_shared<GriddedModel>(mollified_drift(f, m, p, std::nullopt, workers), std::nullopt,
                                              Extension::compact);
    case Family::E: {
        const Grid g = coefficient_grid(f, m.width);
        return std::make_shared<GriddedModel>(std::nullopt, mollify(raw_sigma(g, p), m, workers), Extension::compact);
    }
    }
    throw InvalidParameter("unknown family");
}

inline ModelPtr make_model(Family f, int level, MollifierShape shape = MollifierShape::gaussian_truncated,
                           int workers = 1) {
    return make_model(f, Mollifier{shape, level_width(level)}, default_params(f), workers);
}

struct FamilyInfo {
    char id;
    std::string name;
    int dim;
    std::string coefficients;
    std::string parameters;
    std::string admissibility;
    std::string default_grid;
};

inline void to_json(nlohmann::json& j, const FamilyInfo& f) {
    j = nlohmann::json{{"id", std::string(1, f.id)},
                       {"name", f.name},
                       {"dim", f.dim},
                       {"coefficients", f.coefficients},
                       {"parameters", f.parameters},
                       {"admissibility", f.admissibility},
                       {"default_grid", f.default_grid}};
}

inline std::vector<FamilyInfo> list_families() {
    return {
        {'A', "brownian", 2, "sigma = I, b = 0", "none", "smooth: every (p, q)", "d=2, L=pi, Nx=64, Nt=128, T=1"},
        {'B', "linear drift", 2, "sigma = I, b = -kappa x", "kappa = 1", "smooth (solver tests only)",
         "d=2, L=pi, Nx=64, Nt=128, T=1"},
        {'C', "subcritical singular drift", 2, "b = -c (x/|x|) |x|^-0.3 chi(|x|/rho)", "c = 0.5, rho = 1",
         "subcritical: |b| in L^p for p < 20/3; with p = 5, q = inf: d/p + 2/q = 2/5 < 1",
         "d=2, L=pi, Nx=256, half-cell shift"},
        {'D', "critical drift", 3, "b = -c (x/|x|) |x|^-1 (1 + |ln|x||)^-0.6 chi(|x|/rho)", "c = 0.5, rho = 0.5",
         "critical: b in L~^{d;uni}_inf with p = d = 3, no subcritical (p, q)", "d=3, L=2.5, Nx=80, half-cell shift"},
        {'E', "Sobolev diffusion", 2, "sigma = (1 + s |x|^0.6 chi(|x|/rho)) I, b = 0", "s = 0.3, rho = 1",
         "grad sigma in L^p for p < 5; uniformly elliptic", "d=2, L=pi, Nx=256, half-cell shift"},
    };
}

// ---------------------------------------------------------------------------
// Smooth test families

/// Ten smooth planar sources with spatial frequencies |k|^2 in [2, 8] and a
/// gentle time modulation.
inline std::vector<NamedSource> smooth_sources(const Grid& g) {
    if (g.dim != 2) throw InvalidParameter("the smooth source family is planar");
    struct Mode {
        int k1, k2;
        double phase, wobble;
    };
    static const Mode modes[10] = {{1, 1, 0.0, 0.0}, {1, 1, 0.7, 0.3}, {2, 1, 0.0, 0.0}, {1, 2, 1.3, 0.4},
                                   {2, 2, 0.0, 0.2}, {2, 2, 0.4, 0.5}, {2, 1, 2.1, 0.5}, {1, 2, 0.2, 0.1},
                                   {1, 1, 2.5, 0.5}, {2, 2, 1.9, 0.3}};
    const double T = g.horizon;
    std::vector<NamedSource> out;
    for (int i = 0; i < 10; ++i) {
        const Mode m = modes[i];
        out.push_back({"s" + std::to_string(i), sample_scalar_time(g, [&](double t, std::span<const double> x) {
                           const double time = 1.0 + m.wobble * std::sin(std::numbers::pi * t / T + m.phase);
                           return time * std::sin(m.k1 * x[0] + m.phase) * std::cos(m.k2 * x[1] - 0.5 * m.phase);
                       })});
    }
    return out;
}

/// Ten smooth static functions (d = 1, 2 or 3) for norm diagnostics.
inline std::vector<GridFn> smooth_family(const Grid& g) {
    std::vector<GridFn> out;
    for (int i = 0; i < 10; ++i) {
        out.push_back(sample_scalar(g, [&](std::span<const double> x) {
            double v = 0.0, r2 = 0.0;
            for (int a = 0; a < g.dim; ++a) {
                v += std::sin((1 + (i + a) % 3) * x[a] + 0.3 * i);
                r2 += x[a] * x[a];
            }
            return v + (1.0 + 0.1 * i) * std::exp(-r2 / (0.5 + 0.2 * i));
        }));
    }
    return out;
}

} // namespace zvlab
