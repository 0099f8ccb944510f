#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "zvlab/fft.hpp"
#include "zvlab/lattice.hpp"
#include "zvlab/parallel.hpp"

namespace zvlab {

// ---------------------------------------------------------------------------
// Cutoff profile

namespace detail {

inline double glue(double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; }
inline double glue_d1(double t) { return t > 0.0 ? glue(t) / (t * t) : 0.0; }
inline double glue_d2(double t) {
    return t > 0.0 ? glue(t) * (1.0 / (t * t * t * t) - 2.0 / (t * t * t)) : 0.0;
}

} // namespace detail

/// Smooth radial step: 1 on [0, 1], 0 on [2, inf), C-infinity in between.
inline double smooth_step(double s) {
    if (s <= 1.0) return 1.0;
    if (s >= 2.0) return 0.0;
    const double a = detail::glue(2.0 - s);
    const double b = detail::glue(s - 1.0);
    return a / (a + b);
}

/// First and second derivative of smooth_step.
inline void smooth_step_derivatives(double s, double& d1, double& d2) {
    d1 = d2 = 0.0;
    if (s <= 1.0 || s >= 2.0) return;
    const double A = detail::glue(2.0 - s), B = detail::glue(s - 1.0);
    const double A1 = -detail::glue_d1(2.0 - s), B1 = detail::glue_d1(s - 1.0);
    const double A2 = detail::glue_d2(2.0 - s), B2 = detail::glue_d2(s - 1.0);
    const double S = A + B, S1 = A1 + B1;
    const double N = A1 * B - A * B1;
    const double N1 = A2 * B - A * B2;
    d1 = N / (S * S);
    d2 = (N1 * S - 2.0 * N * S1) / (S * S * S);
}

/// chi_r^z(x) = smooth_step(|x - z| / r) with the periodic minimum-image distance.
inline GridFn cutoff(const Grid& g, std::span<const double> z, double r) {
    if (!(r > 0.0)) throw InvalidParameter("cutoff radius r must be > 0");
    if (r >= g.half_width / 2.0)
        throw InvalidParameter("cutoff radius r must be < L/2 (cutoff would wrap onto itself)");
    for (int a = 0; a < g.dim; ++a)
        if (std::abs(z[a]) > g.half_width) throw InvalidParameter("cutoff centre z must lie in the box");
    return sample_scalar(g, [&](std::span<const double> x) {
        double s = 0.0;
        for (int a = 0; a < g.dim; ++a) {
            const double dx = g.wrap_displacement(x[a] - z[a]);
            s += dx * dx;
        }
        return smooth_step(std::sqrt(s) / r);
    });
}

// ---------------------------------------------------------------------------
// Lattice L^p norms

inline double lattice_lp_norm(std::span<const double> v, double p, double cell_volume) {
    double s = 0.0;
    if (p == 2.0) {
        for (double x : v) s += x * x;
        return std::sqrt(s * cell_volume);
    }
    for (double x : v) s += std::pow(std::abs(x), p);
    return std::pow(s * cell_volume, 1.0 / p);
}

/// Lattice L^p norm of one slice of a scalar GridFn.
inline double lattice_lp_norm(const GridFn& f, double p, int slice = 0) {
    return lattice_lp_norm(f.slice(slice), p, f.grid().cell_volume());
}

// ---------------------------------------------------------------------------
// Mollifiers

enum class MollifierShape { gaussian_truncated, polynomial_bump };

inline std::string_view to_string(MollifierShape s) {
    return s == MollifierShape::gaussian_truncated ? "gaussian" : "bump";
}

inline MollifierShape mollifier_shape_from_string(std::string_view s) {
    if (s == "gaussian" || s == "gaussian-truncated") return MollifierShape::gaussian_truncated;
    if (s == "bump" || s == "polynomial-bump") return MollifierShape::polynomial_bump;
    throw InvalidParameter("unknown mollifier shape '" + std::string(s) + "'");
}

/// Radial mollifier of width eps.
///
/// The Gaussian is cut at 4 eps. The bump (1 - |x|^2/R^2)^3 uses
/// R = eps sqrt(d + 8), which gives it the same per-axis variance eps^2 as
/// the Gaussian, so the two shapes are matched at equal eps.
struct Mollifier {
    MollifierShape shape = MollifierShape::gaussian_truncated;
    double width = 0.1;

    double support_radius(int d) const {
        return shape == MollifierShape::gaussian_truncated ? 4.0 * width
                                                           : width * std::sqrt(d + 8.0);
    }

    /// Unnormalized radial profile.
    double profile(double r, int d) const {
        const double R = support_radius(d);
        if (r > R) return 0.0;
        if (shape == MollifierShape::gaussian_truncated) return std::exp(-0.5 * r * r / (width * width));
        const double u = 1.0 - (r * r) / (R * R);
        return u * u * u;
    }

    /// Warn-worthy configuration: the kernel is narrower than one lattice cell.
    bool under_resolved(const Grid& g) const { return width < g.spacing(); }
};

/// Normalized lattice kernel indexed by offset (offset j sits at linear index of j).
inline std::vector<double> mollifier_kernel(const Grid& g, const Mollifier& m) {
    if (!(m.width > 0.0)) throw InvalidParameter("mollifier width must be > 0");
    if (m.support_radius(g.dim) >= g.half_width)
        throw InvalidParameter("mollifier support must be smaller than the half-width L");
    const std::size_t np = g.points();
    const double h = g.spacing();
    std::vector<double> k(np);
    double mass = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
        const auto idx = g.multi_index(p);
        double s = 0.0;
        for (int a = 0; a < g.dim; ++a) {
            const double dx = g.wrap_displacement(idx[a] * h);
            s += dx * dx;
        }
        k[p] = m.profile(std::sqrt(s), g.dim);
        mass += k[p];
    }
    for (double& v : k) v /= mass;
    return k;
}

/// Periodic lattice convolution f * rho_eps, slice by slice and component by component.
inline GridFn mollify(const GridFn& f, const Mollifier& m, int workers = 1) {
    const Grid& g = f.grid();
    const Spectral sp(g);
    const auto kernel = mollifier_kernel(g, m);
    std::vector<cplx> khat;
    sp.forward(kernel, khat);
    const std::size_t np = g.points();
    const int nc = f.components();
    std::vector<double> out(f.values().size());
    const std::size_t jobs = static_cast<std::size_t>(f.slice_count()) * nc;
    parallel_for(jobs, workers, [&](std::size_t job) {
        const int s = static_cast<int>(job / nc);
        const int c = static_cast<int>(job % nc);
        std::vector<double> in(np), res(np);
        for (std::size_t p = 0; p < np; ++p) in[p] = f.at(s, p, c);
        std::vector<cplx> spec;
        sp.forward(in, spec);
        for (std::size_t q = 0; q < spec.size(); ++q) spec[q] *= khat[q];
        sp.inverse(spec, res);
        for (std::size_t p = 0; p < np; ++p) out[(s * np + p) * nc + c] = res[p];
    });
    return f.with_values(std::move(out));
}

// ---------------------------------------------------------------------------
// Local Hardy-Littlewood maximal function

/// M_R |f| at every lattice point: the largest average of |f| over the open
/// lattice balls B_{kh}(x), k = 1..floor(R/h).
inline GridFn local_maximal(const GridFn& f, double R, int workers = 1) {
    if (f.rank() != Rank::scalar) throw InvalidParameter("local_maximal expects a scalar GridFn");
    const Grid& g = f.grid();
    const double h = g.spacing();
    if (R < h) throw InvalidParameter("maximal radius R must be >= h (no ball contains a neighbour)");
    const int kmax = static_cast<int>(std::floor(R / h + 1e-9));
    if (2 * kmax >= g.nx) throw InvalidParameter("maximal radius R must be < L");

    // Offsets with |o|^2 < kmax^2, sorted by squared length.
    struct Offset {
        int norm2;
        std::array<int, kMaxDim> o;
    };
    std::vector<Offset> offsets;
    const int span = kmax;
    std::array<int, kMaxDim> o{0, 0, 0};
    const int lo = -span, hi = span;
    for (int i = lo; i <= hi; ++i)
        for (int j = (g.dim > 1 ? lo : 0); j <= (g.dim > 1 ? hi : 0); ++j)
            for (int k = (g.dim > 2 ? lo : 0); k <= (g.dim > 2 ? hi : 0); ++k) {
                o = {i, j, k};
                const int n2 = i * i + j * j + k * k;
                if (n2 < kmax * kmax) offsets.push_back({n2, o});
            }
    std::stable_sort(offsets.begin(), offsets.end(),
                     [](const Offset& a, const Offset& b) { return a.norm2 < b.norm2; });
    // ball_end[k] = number of offsets with |o| < k.
    std::vector<std::size_t> ball_end(kmax + 1, 0);
    for (int k = 1; k <= kmax; ++k) {
        ball_end[k] = static_cast<std::size_t>(
            std::lower_bound(offsets.begin(), offsets.end(), k * k,
                             [](const Offset& a, int v) { return a.norm2 < v; }) -
            offsets.begin());
    }

    const std::size_t np = g.points();
    std::vector<double> out(f.values().size());
    for (int s = 0; s < f.slice_count(); ++s) {
        parallel_ranges(np, workers, [&](std::size_t begin, std::size_t end) {
            for (std::size_t p = begin; p < end; ++p) {
                const auto base = g.multi_index(p);
                double sum = 0.0, best = 0.0;
                std::size_t next = 0;
                for (int k = 1; k <= kmax; ++k) {
                    for (; next < ball_end[k]; ++next) {
                        std::array<int, kMaxDim> idx{0, 0, 0};
                        for (int a = 0; a < g.dim; ++a) idx[a] = base[a] + offsets[next].o[a];
                        sum += std::abs(f.at(s, g.linear(idx)));
                    }
                    best = std::max(best, sum / static_cast<double>(ball_end[k]));
                }
                out[s * np + p] = best;
            }
        });
    }
    return f.with_values(std::move(out));
}

} // namespace zvlab
