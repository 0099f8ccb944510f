#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zvlab/fft.hpp"
#include "zvlab/grid.hpp"
#include "zvlab/lattice.hpp"
#include "zvlab/parallel.hpp"

namespace zvlab {

/// Integrability exponent in (1, inf]; infinity is a distinct state, not a large number.
struct Exponent {
    double value = 2.0;
    bool infinite = false;

    static Exponent finite(double v) { return Exponent{v, false}; }
    static Exponent infinity() { return Exponent{std::numeric_limits<double>::infinity(), true}; }

    std::string str() const { return infinite ? "inf" : nlohmann::json(value).dump(); }
};

inline void to_json(nlohmann::json& j, const Exponent& e) {
    if (e.infinite)
        j = "inf";
    else
        j = e.value;
}

inline Exponent exponent_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "infinity") return Exponent::infinity();
        throw InvalidParameter("exponent must be a number or \"inf\", got \"" + s + "\"");
    }
    if (!j.is_number()) throw InvalidParameter("exponent must be a number or \"inf\"");
    return Exponent::finite(j.get<double>());
}

/// (alpha, p, q, [t0, t1], r) for the localized norms. A negative t1 means "up to T".
struct NormParams {
    double alpha = 0.0;
    double p = 2.0;
    Exponent q = Exponent::finite(2.0);
    double t0 = 0.0;
    double t1 = -1.0;
    double r = 1.0;

    double end_time(const Grid& g) const { return t1 < 0.0 ? g.horizon : t1; }

    void validate(const Grid& g) const {
        if (!(p > 1.0) || !std::isfinite(p)) throw InvalidParameter("p must exceed 1 and be finite");
        if (!q.infinite && !(q.value > 1.0)) throw InvalidParameter("q must exceed 1");
        if (!(r > 0.0)) throw InvalidParameter("localization radius r must be > 0");
        if (r >= g.half_width / 2.0) throw InvalidParameter("localization radius r must be < L/2");
        if (t0 < 0.0) throw InvalidParameter("time window start t0 must be >= 0");
        if (!(end_time(g) > t0)) throw InvalidParameter("empty time window: t1 must exceed t0");
        if (end_time(g) > g.horizon * (1.0 + 1e-12)) throw InvalidParameter("time window end t1 must be <= T");
    }
};

inline void to_json(nlohmann::json& j, const NormParams& np) {
    j = nlohmann::json{{"alpha", np.alpha}, {"p", np.p}, {"q", np.q}, {"t0", np.t0}, {"t1", np.t1}, {"r", np.r}};
}

struct NormReport {
    double value = 0.0;
    std::vector<double> argmax_z;
    NormParams params;
    /// (L^q in time of sup over z), never smaller than value.
    double sup_inside = 0.0;
    /// Optional per-z table: centre coordinates and the value at that centre.
    std::vector<std::vector<double>> table_z;
    std::vector<double> table_value;
};

inline void to_json(nlohmann::json& j, const NormReport& r) {
    j = nlohmann::json{{"value", r.value}, {"argmax_z", r.argmax_z}, {"params", r.params}};
    if (!r.table_value.empty()) {
        auto rows = nlohmann::json::array();
        for (std::size_t i = 0; i < r.table_value.size(); ++i)
            rows.push_back({{"z", r.table_z[i]}, {"value", r.table_value[i]}});
        j["table"] = rows;
    }
}

namespace detail {

inline double abs_pow(double x, double p) {
    const double a = std::abs(x);
    if (p == 2.0) return a * a;
    if (p == 4.0) return (a * a) * (a * a);
    if (p == 5.0) return (a * a) * (a * a) * a;
    return std::pow(a, p);
}

inline double root(double s, double p) { return p == 2.0 ? std::sqrt(s) : std::pow(s, 1.0 / p); }

inline std::vector<double> bessel_multiplier(const Spectral& sp, double alpha) {
    std::vector<double> m(sp.spectrum_size());
    for (std::size_t q = 0; q < m.size(); ++q) m[q] = std::pow(1.0 + sp.modes()[q].xi2, alpha / 2.0);
    return m;
}

/// ||(I - Delta)^{alpha/2} v||_p for one scalar slice.
inline double bessel_slice(const Spectral& sp, std::span<const double> v, const std::vector<double>& mult,
                           double alpha, double p) {
    const Grid& g = sp.grid();
    if (alpha == 0.0) return lattice_lp_norm(v, p, g.cell_volume());
    std::vector<cplx> spec;
    sp.forward(v, spec);
    for (std::size_t q = 0; q < spec.size(); ++q) spec[q] *= mult[q];
    std::vector<double> out(v.size());
    sp.inverse(spec, out);
    return lattice_lp_norm(out, p, g.cell_volume());
}

/// Lattice offsets inside the cutoff support with the cutoff and its derivatives there.
struct CutoffStencil {
    std::vector<std::array<int, kMaxDim>> offset;
    std::vector<double> chi, lap;
    std::vector<std::array<double, kMaxDim>> grad;
};

inline CutoffStencil cutoff_stencil(const Grid& g, double r) {
    CutoffStencil st;
    const double h = g.spacing();
    const int reach = static_cast<int>(std::ceil(2.0 * r / h));
    const int lo = -reach, hi = reach;
    for (int i = lo; i <= hi; ++i)
        for (int j = (g.dim > 1 ? lo : 0); j <= (g.dim > 1 ? hi : 0); ++j)
            for (int k = (g.dim > 2 ? lo : 0); k <= (g.dim > 2 ? hi : 0); ++k) {
                const std::array<int, kMaxDim> o{i, j, k};
                double y[kMaxDim] = {i * h, j * h, k * h};
                double rho2 = 0.0;
                for (int a = 0; a < g.dim; ++a) rho2 += y[a] * y[a];
                const double rho = std::sqrt(rho2);
                const double s = rho / r;
                if (s >= 2.0) continue;
                double d1 = 0.0, d2 = 0.0;
                smooth_step_derivatives(s, d1, d2);
                std::array<double, kMaxDim> gr{0, 0, 0};
                double lap = 0.0;
                if (rho > 0.0 && d1 != 0.0) {
                    for (int a = 0; a < g.dim; ++a) gr[a] = d1 * y[a] / (rho * r);
                    lap = d2 / (r * r) + d1 * (g.dim - 1) / (rho * r);
                }
                st.offset.push_back(o);
                st.chi.push_back(smooth_step(s));
                st.grad.push_back(gr);
                st.lap.push_back(lap);
            }
    return st;
}

/// Slice data needed by the local alpha = 2 path: f, grad f, Laplacian f.
struct SliceDerivatives {
    std::vector<double> f, lap;
    std::vector<std::vector<double>> grad;
};

inline SliceDerivatives slice_derivatives(const Spectral& sp, std::span<const double> v) {
    const int d = sp.grid().dim;
    SliceDerivatives sd;
    sd.f.assign(v.begin(), v.end());
    std::vector<cplx> base, work;
    sp.forward(v, base);
    sd.grad.assign(d, std::vector<double>(v.size()));
    for (int a = 0; a < d; ++a) {
        work = base;
        for (std::size_t q = 0; q < work.size(); ++q) {
            const Mode& m = sp.modes()[q];
            work[q] *= m.nyquist[a] ? cplx(0.0) : cplx(0.0, m.xi[a]);
        }
        sp.inverse(work, sd.grad[a]);
    }
    work = base;
    for (std::size_t q = 0; q < work.size(); ++q) work[q] *= -sp.modes()[q].xi2;
    sd.lap.resize(v.size());
    sp.inverse(work, sd.lap);
    return sd;
}

} // namespace detail

/// ||(I - Delta)^{alpha/2} f(slice)||_p on the periodic lattice.
inline double bessel_norm(const GridFn& f, double alpha, double p, int slice = 0) {
    if (f.rank() != Rank::scalar)
        throw InvalidParameter("bessel_norm expects a scalar GridFn; use bessel_norm_componentwise");
    if (!(p >= 1.0)) throw InvalidParameter("p must be >= 1");
    const Spectral sp(f.grid());
    return detail::bessel_slice(sp, f.slice(slice), detail::bessel_multiplier(sp, alpha), alpha, p);
}

inline std::vector<double> bessel_norm_componentwise(const GridFn& f, double alpha, double p, int slice = 0) {
    std::vector<double> out;
    for (int c = 0; c < f.components(); ++c) out.push_back(bessel_norm(f.component(c), alpha, p, slice));
    return out;
}

struct LocalizedOptions {
    bool retain_table = false;
    int workers = 1;
};

/// Localized space-time norm: sup over a z-lattice of the L^q-in-time norm of
/// ||chi_r^z f(t)||_{alpha,p}.
///
/// Centres are lattice points with stride h * max(1, floor(r / 2h)). Non-scalar
/// f is measured through its pointwise magnitude, which needs alpha = 0.
/// alpha = 0 and alpha = 2 are evaluated on the cutoff support only (the
/// latter by the Leibniz rule with spectral derivatives of f); other alpha
/// use a full-box transform per centre.
inline NormReport localized_norm(const GridFn& f_in, const NormParams& np, const LocalizedOptions& opt = {}) {
    const Grid& g = f_in.grid();
    np.validate(g);
    if (f_in.rank() != Rank::scalar && np.alpha != 0.0)
        throw InvalidParameter("localized_norm with alpha != 0 expects a scalar GridFn");
    const GridFn f = f_in.rank() == Rank::scalar ? f_in : f_in.magnitude();

    // Time slices and their quadrature weights.
    const double t1 = np.end_time(g);
    std::vector<int> slices;
    double static_factor = 1.0;
    if (!f.time_dependent()) {
        slices.push_back(0);
        if (!np.q.infinite) static_factor = std::pow(t1 - np.t0, 1.0 / np.q.value);
    } else {
        const double dt = g.time_step();
        const double tol = 1e-9 * dt;
        for (int k = 0; k <= g.nt; ++k) {
            const double t = g.time(k);
            if (t < np.t0 - tol) continue;
            if (np.q.infinite ? t > t1 + tol : t >= t1 - tol) continue;
            slices.push_back(k);
        }
        if (slices.empty()) throw InvalidParameter("empty time window: no time slice in [t0, t1)");
    }
    const double dt = g.time_step();

    const Spectral sp(g);
    const double h = g.spacing();
    const int stride = std::max(1, static_cast<int>(std::floor(np.r / (2.0 * h) + 1e-12)));
    std::vector<int> axis;
    for (int i = 0; i < g.nx; i += stride) axis.push_back(i);
    std::size_t nz = 1;
    for (int a = 0; a < g.dim; ++a) nz *= axis.size();

    const auto st = detail::cutoff_stencil(g, np.r);
    const double vol = g.cell_volume();
    const double p = np.p;
    const bool fast0 = np.alpha == 0.0;
    const bool fast2 = np.alpha == 2.0;

    std::vector<detail::SliceDerivatives> derivs;
    if (fast2) {
        derivs.resize(slices.size());
        parallel_for(slices.size(), opt.workers,
                     [&](std::size_t k) { derivs[k] = detail::slice_derivatives(sp, f.slice(slices[k])); });
    }
    const auto mult = (fast0 || fast2) ? std::vector<double>{} : detail::bessel_multiplier(sp, np.alpha);

    // per_z_slice[iz * S + k] = ||chi^z f(t_k)||_{alpha,p}
    const std::size_t S = slices.size();
    std::vector<double> per(nz * S);
    std::vector<std::array<int, kMaxDim>> centres(nz);
    for (std::size_t iz = 0; iz < nz; ++iz) {
        std::size_t rem = iz;
        std::array<int, kMaxDim> c{0, 0, 0};
        for (int a = g.dim - 1; a >= 0; --a) {
            c[a] = axis[rem % axis.size()];
            rem /= axis.size();
        }
        centres[iz] = c;
    }

    parallel_ranges(nz, opt.workers, [&](std::size_t zb, std::size_t ze) {
        std::vector<std::size_t> lin(st.offset.size());
        std::vector<double> work;
        if (!fast0 && !fast2) work.resize(g.points());
        for (std::size_t iz = zb; iz < ze; ++iz) {
            for (std::size_t m = 0; m < st.offset.size(); ++m) {
                std::array<int, kMaxDim> idx{0, 0, 0};
                for (int a = 0; a < g.dim; ++a) idx[a] = centres[iz][a] + st.offset[m][a];
                lin[m] = g.linear(idx);
            }
            for (std::size_t k = 0; k < S; ++k) {
                double val = 0.0;
                if (fast0) {
                    const auto v = f.slice(slices[k]);
                    double s = 0.0;
                    for (std::size_t m = 0; m < lin.size(); ++m) s += detail::abs_pow(st.chi[m] * v[lin[m]], p);
                    val = detail::root(s * vol, p);
                } else if (fast2) {
                    const auto& sd = derivs[k];
                    double s = 0.0;
                    for (std::size_t m = 0; m < lin.size(); ++m) {
                        const std::size_t q = lin[m];
                        double cross = 0.0;
                        for (int a = 0; a < g.dim; ++a) cross += st.grad[m][a] * sd.grad[a][q];
                        const double w = st.chi[m] * sd.f[q] - st.lap[m] * sd.f[q] - 2.0 * cross - st.chi[m] * sd.lap[q];
                        s += detail::abs_pow(w, p);
                    }
                    val = detail::root(s * vol, p);
                } else {
                    std::fill(work.begin(), work.end(), 0.0);
                    const auto v = f.slice(slices[k]);
                    for (std::size_t m = 0; m < lin.size(); ++m) work[lin[m]] = st.chi[m] * v[lin[m]];
                    val = detail::bessel_slice(sp, work, mult, np.alpha, p);
                }
                per[iz * S + k] = val;
            }
        }
    });

    auto time_aggregate = [&](auto&& value_at) {
        if (!f.time_dependent()) return value_at(0) * static_factor;
        if (np.q.infinite) {
            double m = 0.0;
            for (std::size_t k = 0; k < S; ++k) m = std::max(m, value_at(k));
            return m;
        }
        double s = 0.0;
        for (std::size_t k = 0; k < S; ++k) s += std::pow(value_at(k), np.q.value) * dt;
        return std::pow(s, 1.0 / np.q.value);
    };

    NormReport rep;
    rep.params = np;
    std::size_t best = 0;
    double best_value = -1.0;
    for (std::size_t iz = 0; iz < nz; ++iz) {
        const double v = time_aggregate([&](std::size_t k) { return per[iz * S + k]; });
        if (v > best_value) {
            best_value = v;
            best = iz;
        }
        if (opt.retain_table) {
            std::vector<double> z;
            for (int a = 0; a < g.dim; ++a) z.push_back(g.coord(centres[iz][a]));
            rep.table_z.push_back(std::move(z));
            rep.table_value.push_back(v);
        }
    }
    rep.value = best_value;
    for (int a = 0; a < g.dim; ++a) rep.argmax_z.push_back(g.coord(centres[best][a]));
    rep.sup_inside = time_aggregate([&](std::size_t k) {
        double m = 0.0;
        for (std::size_t iz = 0; iz < nz; ++iz) m = std::max(m, per[iz * S + k]);
        return m;
    });
    return rep;
}

/// Stride of the centre lattice used by localized_norm.
inline double centre_stride(const Grid& g, double r) {
    return g.spacing() * std::max(1, static_cast<int>(std::floor(r / (2.0 * g.spacing()) + 1e-12)));
}

struct ModulusRow {
    double eps = 0.0;
    double kappa = 0.0;
};

/// kappa_T(eps) = sup_t |||f(t) * rho_eps - f(t)|||_p for each eps.
inline std::vector<ModulusRow> mollifier_modulus(const GridFn& f, double p, double T, const std::vector<double>& eps_list,
                                                 MollifierShape shape, double r, int workers = 1) {
    std::vector<ModulusRow> rows;
    NormParams np;
    np.alpha = 0.0;
    np.p = p;
    np.q = Exponent::infinity();
    np.t1 = std::min(T, f.grid().horizon);
    np.r = r;
    for (double eps : eps_list) {
        const GridFn fe = mollify(f, Mollifier{shape, eps}, workers);
        std::vector<double> diff(f.values().size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = fe.values()[i] - f.values()[i];
        rows.push_back({eps, localized_norm(f.with_values(std::move(diff)), np, {false, workers}).value});
    }
    return rows;
}

struct RatioStats {
    std::vector<double> ratios;
    double min = 0.0;
    double max = 0.0;
    /// Smallest C with every ratio in [1/C, C].
    double constant() const { return std::max(max, 1.0 / min); }
};

inline RatioStats ratio_stats(std::vector<double> ratios) {
    RatioStats s;
    s.ratios = std::move(ratios);
    if (s.ratios.empty()) return s;
    s.min = *std::min_element(s.ratios.begin(), s.ratios.end());
    s.max = *std::max_element(s.ratios.begin(), s.ratios.end());
    return s;
}

/// |||f|||_r / |||f|||_{r'} over a family.
inline RatioStats norm_equivalence_check(const std::vector<GridFn>& family, double r, double r_prime,
                                         NormParams np, int workers = 1) {
    if (r == r_prime) throw InvalidParameter("norm equivalence needs two distinct radii r != r'");
    std::vector<double> ratios;
    for (const auto& f : family) {
        np.r = r;
        const double a = localized_norm(f, np, {false, workers}).value;
        np.r = r_prime;
        const double b = localized_norm(f, np, {false, workers}).value;
        ratios.push_back(a / b);
    }
    return ratio_stats(std::move(ratios));
}

/// Upper end of the admissible p' window for the embedding of H^{alpha,p} into L^{p'}.
/// At p alpha = d the window is taken as [p, inf).
inline double sobolev_upper_exponent(double alpha, double p, int d) {
    if (p * alpha < d) return p * d / (d - p * alpha);
    return std::numeric_limits<double>::infinity();
}

/// |||f|||_{L^{p'}_q} / |||f|||_{H^{alpha,p}_q} over a family.
inline RatioStats sobolev_embedding_check(const std::vector<GridFn>& family, double alpha, double p, double p_prime,
                                          Exponent q, double r, int workers = 1) {
    if (!(alpha > 0.0)) throw InvalidParameter("embedding needs alpha > 0");
    if (family.empty()) return {};
    const int d = family.front().grid().dim;
    const double upper = sobolev_upper_exponent(alpha, p, d);
    if (p_prime < p || p_prime > upper * (1.0 + 1e-12))
        throw InvalidParameter("p' = " + std::to_string(p_prime) + " lies outside the exponent window [p, " +
                               (std::isinf(upper) ? std::string("inf") : std::to_string(upper)) + "]");
    std::vector<double> ratios;
    for (const auto& f : family) {
        NormParams lo{0.0, p_prime, q, 0.0, -1.0, r};
        NormParams hi{alpha, p, q, 0.0, -1.0, r};
        ratios.push_back(localized_norm(f, lo, {false, workers}).value / localized_norm(f, hi, {false, workers}).value);
    }
    return ratio_stats(std::move(ratios));
}

} // namespace zvlab
