#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zvlab/error.hpp"

namespace zvlab {

inline constexpr int kMaxDim = 3;

/// Uniform periodic space-time lattice on [-L, L)^d x [0, T].
///
/// Spatial points sit at x_i = -L + (i + shift) h with h = 2L/Nx. A shift of
/// one half keeps every lattice point off the origin, which is where the
/// singular coefficient families place their singularity.
struct Grid {
    int dim = 2;
    double half_width = 3.141592653589793;
    int nx = 64;
    double horizon = 1.0;
    int nt = 128;
    double shift = 0.0;

    double spacing() const { return 2.0 * half_width / nx; }
    double time_step() const { return horizon / nt; }
    double time(int k) const { return k * time_step(); }
    double cell_volume() const { return std::pow(spacing(), dim); }
    double period() const { return 2.0 * half_width; }

    std::size_t points() const {
        std::size_t n = 1;
        for (int a = 0; a < dim; ++a) n *= static_cast<std::size_t>(nx);
        return n;
    }

    double coord(int i) const { return -half_width + (i + shift) * spacing(); }

    /// Row-major multi-index; axis 0 varies slowest.
    std::array<int, kMaxDim> multi_index(std::size_t p) const {
        std::array<int, kMaxDim> idx{0, 0, 0};
        for (int a = dim - 1; a >= 0; --a) {
            idx[a] = static_cast<int>(p % nx);
            p /= nx;
        }
        return idx;
    }

    /// Linear index of a multi-index, wrapped periodically on every axis.
    std::size_t linear(const std::array<int, kMaxDim>& idx) const {
        std::size_t p = 0;
        for (int a = 0; a < dim; ++a) {
            int i = idx[a] % nx;
            if (i < 0) i += nx;
            p = p * nx + static_cast<std::size_t>(i);
        }
        return p;
    }

    void point(std::size_t p, double* x) const {
        const auto idx = multi_index(p);
        for (int a = 0; a < dim; ++a) x[a] = coord(idx[a]);
    }

    /// Minimum-image representative of a displacement along one axis.
    double wrap_displacement(double dx) const {
        const double P = period();
        return dx - P * std::round(dx / P);
    }

    bool same_lattice(const Grid& o) const {
        return dim == o.dim && nx == o.nx && half_width == o.half_width && shift == o.shift;
    }
    bool same_space_time(const Grid& o) const {
        return same_lattice(o) && nt == o.nt && horizon == o.horizon;
    }
};

/// Validates and returns a lattice; throws InvalidParameter naming the bound.
inline Grid build_grid(int d, double L, int nx, double T, int nt, double shift = 0.0) {
    if (d < 1 || d > kMaxDim) throw InvalidParameter("dimension d must be 1, 2 or 3");
    if (!(L > 0.0) || !std::isfinite(L)) throw InvalidParameter("half-width L must be > 0");
    if (nx < 8) throw InvalidParameter("Nx must be >= 8");
    if (nx % 2 != 0) throw InvalidParameter("Nx must be even (Nx odd)");
    if (!(T > 0.0) || !std::isfinite(T)) throw InvalidParameter("horizon T must be > 0");
    if (nt < 1) throw InvalidParameter("Nt must be >= 1");
    if (!(shift >= 0.0 && shift < 1.0)) throw InvalidParameter("lattice shift must lie in [0, 1)");
    return Grid{d, L, nx, T, nt, shift};
}

enum class Rank { scalar, vector, matrix };

inline int component_count(Rank r, int d) {
    switch (r) {
    case Rank::scalar: return 1;
    case Rank::vector: return d;
    case Rank::matrix: return d * d;
    }
    return 1;
}

inline std::string_view to_string(Rank r) {
    switch (r) {
    case Rank::scalar: return "scalar";
    case Rank::vector: return "vector";
    case Rank::matrix: return "matrix";
    }
    return "scalar";
}

inline Rank rank_from_string(std::string_view s) {
    if (s == "scalar") return Rank::scalar;
    if (s == "vector") return Rank::vector;
    if (s == "matrix") return Rank::matrix;
    throw InvalidParameter("unknown rank '" + std::string(s) + "'");
}

/// Immutable function sampled on a Grid.
///
/// Values are stored row-major over (time slice, lattice point, component).
/// A static function holds one slice; a time-dependent one holds Nt + 1.
/// Copies share the underlying buffer.
class GridFn {
public:
    GridFn(Grid grid, Rank rank, bool time_dependent, std::vector<double> values)
        : grid_(grid), rank_(rank), time_dependent_(time_dependent) {
        const std::size_t expected = slice_count() * slice_size();
        if (values.size() != expected) {
            throw InvalidParameter("GridFn value array has " + std::to_string(values.size()) +
                                   " entries, expected " + std::to_string(expected));
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i])) {
                throw NonFiniteValue("non-finite GridFn entry at flat index " + std::to_string(i), i);
            }
        }
        values_ = std::make_shared<const std::vector<double>>(std::move(values));
    }

    static GridFn constant(const Grid& g, double c, Rank rank = Rank::scalar) {
        const std::size_t n = g.points() * component_count(rank, g.dim);
        return GridFn(g, rank, false, std::vector<double>(n, c));
    }

    const Grid& grid() const { return grid_; }
    Rank rank() const { return rank_; }
    bool time_dependent() const { return time_dependent_; }
    int components() const { return component_count(rank_, grid_.dim); }
    int slice_count() const { return time_dependent_ ? grid_.nt + 1 : 1; }
    std::size_t slice_size() const { return grid_.points() * components(); }

    /// Slice holding time step k (the single slice for static functions).
    int slice_for_step(int k) const { return time_dependent_ ? k : 0; }

    std::span<const double> values() const { return *values_; }
    std::span<const double> slice(int s) const {
        return std::span<const double>(*values_).subspan(s * slice_size(), slice_size());
    }
    double at(int s, std::size_t p, int c = 0) const {
        return (*values_)[s * slice_size() + p * components() + c];
    }

    /// Same layout, new values.
    GridFn with_values(std::vector<double> v) const {
        return GridFn(grid_, rank_, time_dependent_, std::move(v));
    }

    GridFn component(int c) const {
        std::vector<double> out(slice_count() * grid_.points());
        for (int s = 0; s < slice_count(); ++s)
            for (std::size_t p = 0; p < grid_.points(); ++p)
                out[s * grid_.points() + p] = at(s, p, c);
        return GridFn(grid_, Rank::scalar, time_dependent_, std::move(out));
    }

    /// Pointwise Euclidean (Frobenius for matrices) magnitude.
    GridFn magnitude() const {
        std::vector<double> out(slice_count() * grid_.points());
        const int nc = components();
        const auto v = values();
        for (std::size_t i = 0; i < out.size(); ++i) {
            double s = 0.0;
            for (int c = 0; c < nc; ++c) s += v[i * nc + c] * v[i * nc + c];
            out[i] = std::sqrt(s);
        }
        return GridFn(grid_, Rank::scalar, time_dependent_, std::move(out));
    }

    GridFn scaled(double c) const {
        std::vector<double> v(values().begin(), values().end());
        for (double& x : v) x *= c;
        return with_values(std::move(v));
    }

private:
    Grid grid_;
    Rank rank_;
    bool time_dependent_;
    std::shared_ptr<const std::vector<double>> values_;
};

/// Samples f(t, x, out) at every lattice point (and every time level when
/// time_dependent). Throws NonFiniteValue with the offending lattice index.
template <class F>
GridFn sample(const Grid& g, Rank rank, F&& f, bool time_dependent = false) {
    const int nc = component_count(rank, g.dim);
    const int slices = time_dependent ? g.nt + 1 : 1;
    const std::size_t np = g.points();
    std::vector<double> v(slices * np * nc);
    std::array<double, kMaxDim> x{};
    for (int s = 0; s < slices; ++s) {
        const double t = time_dependent ? g.time(s) : 0.0;
        for (std::size_t p = 0; p < np; ++p) {
            g.point(p, x.data());
            double* out = v.data() + (s * np + p) * nc;
            f(t, std::span<const double>(x.data(), g.dim), std::span<double>(out, nc));
            for (int c = 0; c < nc; ++c) {
                if (!std::isfinite(out[c])) {
                    throw NonFiniteValue("non-finite sample at time slice " + std::to_string(s) +
                                             ", lattice index " + std::to_string(p),
                                         p);
                }
            }
        }
    }
    return GridFn(g, rank, time_dependent, std::move(v));
}

template <class F>
GridFn sample_scalar(const Grid& g, F&& f) {
    return sample(g, Rank::scalar,
                  [&](double, std::span<const double> x, std::span<double> out) { out[0] = f(x); });
}

template <class F>
GridFn sample_scalar_time(const Grid& g, F&& f) {
    return sample(
        g, Rank::scalar,
        [&](double t, std::span<const double> x, std::span<double> out) { out[0] = f(t, x); },
        true);
}

/// Periodic multilinear interpolation in space, linear in time.
///
/// The gradient returned by value_and_gradient is the exact derivative of the
/// interpolant (piecewise polynomial), so flows driven by it are the exact
/// derivative of the interpolated dynamics.
class LatticeInterpolator {
public:
    explicit LatticeInterpolator(GridFn f) : f_(std::move(f)) {}

    const GridFn& function() const { return f_; }
    int components() const { return f_.components(); }

    void value(double t, const double* x, double* out) const { eval(t, x, out, nullptr); }

    /// grad is components x dim, row-major: grad[c*d + a] = d f_c / d x_a.
    void value_and_gradient(double t, const double* x, double* out, double* grad) const {
        eval(t, x, out, grad);
    }

    double scalar(double t, const double* x) const {
        double v = 0.0;
        eval(t, x, &v, nullptr);
        return v;
    }

private:
    void eval(double t, const double* x, double* out, double* grad) const {
        const Grid& g = f_.grid();
        const int d = g.dim;
        const int nc = f_.components();
        const double h = g.spacing();
        int i0[kMaxDim] = {0, 0, 0};
        int i1[kMaxDim] = {0, 0, 0};
        double w[kMaxDim] = {0, 0, 0};
        for (int a = 0; a < d; ++a) {
            const double s = (x[a] + g.half_width) / h - g.shift;
            const double fl = std::floor(s);
            w[a] = s - fl;
            long long i = static_cast<long long>(fl) % g.nx;
            if (i < 0) i += g.nx;
            i0[a] = static_cast<int>(i);
            i1[a] = static_cast<int>((i + 1) % g.nx);
        }
        int s0 = 0, s1 = 0;
        double wt = 0.0;
        if (f_.time_dependent()) {
            double u = t / g.time_step();
            if (u < 0.0) u = 0.0;
            if (u > g.nt) u = g.nt;
            s0 = static_cast<int>(std::floor(u));
            if (s0 >= g.nt) s0 = g.nt - 1;
            s1 = s0 + 1;
            wt = u - s0;
        }
        for (int c = 0; c < nc; ++c) out[c] = 0.0;
        if (grad)
            for (int i = 0; i < nc * d; ++i) grad[i] = 0.0;
        const int corners = 1 << d;
        for (int m = 0; m < corners; ++m) {
            std::array<int, kMaxDim> idx{0, 0, 0};
            double weight = 1.0;
            double partial[kMaxDim];
            for (int a = 0; a < d; ++a) {
                const bool up = (m >> a) & 1;
                idx[a] = up ? i1[a] : i0[a];
                weight *= up ? w[a] : 1.0 - w[a];
            }
            if (grad) {
                for (int a = 0; a < d; ++a) {
                    double prod = 1.0;
                    for (int b = 0; b < d; ++b) {
                        if (b == a) continue;
                        const bool up = (m >> b) & 1;
                        prod *= up ? w[b] : 1.0 - w[b];
                    }
                    partial[a] = (((m >> a) & 1) ? 1.0 : -1.0) * prod / h;
                }
            }
            const std::size_t p = g.linear(idx);
            for (int c = 0; c < nc; ++c) {
                double v = f_.at(s0, p, c);
                if (f_.time_dependent()) v = (1.0 - wt) * v + wt * f_.at(s1, p, c);
                out[c] += weight * v;
                if (grad)
                    for (int a = 0; a < d; ++a) grad[c * d + a] += partial[a] * v;
            }
        }
    }

    GridFn f_;
};

} // namespace zvlab
