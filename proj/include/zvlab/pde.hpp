#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "zvlab/fft.hpp"
#include "zvlab/lattice.hpp"
#include "zvlab/norms.hpp"
#include "zvlab/parallel.hpp"

namespace zvlab {

// ---------------------------------------------------------------------------
// Ellipticity

struct EllipticityCertificate {
    double c0 = 1.0;
    double min_eigenvalue = 1.0;
    double max_eigenvalue = 1.0;
    /// omega[k] = sampled sup over t, x of ||a(t, x) - a(t, x + j h e_i)||_HS for j h <= delta[k].
    std::vector<double> delta;
    std::vector<double> omega;
};

inline void to_json(nlohmann::json& j, const EllipticityCertificate& c) {
    j = nlohmann::json{{"c0", c.c0},       {"min_eigenvalue", c.min_eigenvalue}, {"max_eigenvalue", c.max_eigenvalue},
                       {"delta", c.delta}, {"omega", c.omega}};
}

namespace detail {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline Mat matrix_at(const GridFn& a, int s, std::size_t p) {
    const int d = a.grid().dim;
    Mat m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = a.at(s, p, i * d + j);
    return m;
}

inline void symmetric_eigen_range(const Mat& m, double& lo, double& hi) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
    lo = es.eigenvalues().minCoeff();
    hi = es.eigenvalues().maxCoeff();
}

} // namespace detail

/// Checks symmetry and positive definiteness of a matrix field and measures its
/// ellipticity constant and a sampled continuity modulus.
inline EllipticityCertificate certify_ellipticity(const GridFn& a, double symmetry_tol = 1e-12) {
    if (a.rank() != Rank::matrix) throw InvalidParameter("diffusion matrix a must be a matrix-valued GridFn");
    const Grid& g = a.grid();
    const int d = g.dim;
    EllipticityCertificate cert;
    cert.min_eigenvalue = std::numeric_limits<double>::infinity();
    cert.max_eigenvalue = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < a.slice_count(); ++s) {
        for (std::size_t p = 0; p < g.points(); ++p) {
            const auto m = detail::matrix_at(a, s, p);
            for (int i = 0; i < d; ++i)
                for (int j = i + 1; j < d; ++j)
                    if (std::abs(m(i, j) - m(j, i)) > symmetry_tol * (1.0 + std::abs(m(i, j))))
                        throw CertificateViolation("diffusion matrix is not symmetric at lattice index " +
                                                   std::to_string(p));
            double lo, hi;
            detail::symmetric_eigen_range(m, lo, hi);
            cert.min_eigenvalue = std::min(cert.min_eigenvalue, lo);
            cert.max_eigenvalue = std::max(cert.max_eigenvalue, hi);
        }
    }
    if (!(cert.min_eigenvalue > 0.0))
        throw CertificateViolation("diffusion matrix is not positive definite (min eigenvalue " +
                                   std::to_string(cert.min_eigenvalue) + ")");
    cert.c0 = std::max({1.0, cert.max_eigenvalue, 1.0 / cert.min_eigenvalue});

    const double h = g.spacing();
    for (int k = 1; 2 * k <= g.nx / 2; k *= 2) {
        double w = 0.0;
        for (int s = 0; s < a.slice_count(); ++s)
            for (std::size_t p = 0; p < g.points(); ++p) {
                const auto idx = g.multi_index(p);
                for (int ax = 0; ax < d; ++ax)
                    for (int j = 1; j <= k; ++j) {
                        auto q = idx;
                        q[ax] += j;
                        const std::size_t pq = g.linear(q);
                        double hs = 0.0;
                        for (int c = 0; c < d * d; ++c) {
                            const double diff = a.at(s, p, c) - a.at(s, pq, c);
                            hs += diff * diff;
                        }
                        w = std::max(w, std::sqrt(hs));
                    }
            }
        cert.delta.push_back(k * h);
        cert.omega.push_back(w);
    }
    return cert;
}

/// a = sigma sigma^T / 2, pointwise.
inline GridFn diffusion_from_sigma(const GridFn& sigma) {
    if (sigma.rank() != Rank::matrix) throw InvalidParameter("sigma must be a matrix-valued GridFn");
    const int d = sigma.grid().dim;
    std::vector<double> out(sigma.values().size());
    const std::size_t n = sigma.slice_count() * sigma.grid().points();
    const auto v = sigma.values();
    for (std::size_t m = 0; m < n; ++m) {
        const double* s = v.data() + m * d * d;
        double* a = out.data() + m * d * d;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int k = 0; k < d; ++k) acc += s[i * d + k] * s[j * d + k];
                a[i * d + j] = 0.5 * acc;
            }
    }
    return sigma.with_values(std::move(out));
}

/// Constant matrix field c I.
inline GridFn scaled_identity(const Grid& g, double c) {
    return sample(g, Rank::matrix, [&](double, std::span<const double>, std::span<double> out) {
        for (int i = 0; i < g.dim; ++i)
            for (int j = 0; j < g.dim; ++j) out[i * g.dim + j] = i == j ? c : 0.0;
    });
}

/// Reverses the time axis of a time-dependent GridFn (static functions are returned as is).
inline GridFn reverse_time(const GridFn& f) {
    if (!f.time_dependent()) return f;
    const int S = f.slice_count();
    const std::size_t n = f.slice_size();
    std::vector<double> out(f.values().size());
    for (int s = 0; s < S; ++s) {
        const auto src = f.slice(S - 1 - s);
        std::copy(src.begin(), src.end(), out.begin() + s * n);
    }
    return f.with_values(std::move(out));
}

// ---------------------------------------------------------------------------
// Problems and the split scheme

enum class Direction { forward, backward_adjoint };

/// How the backward equation discretizes the divergence-form remainder.
///
/// lattice_adjoint uses the transposes of the forward finite differences, so the
/// backward step matrix is the exact transpose of the forward one.
/// spectral_divergence differentiates (a - abar) w and b w spectrally; the
/// duality defect against the forward scheme is then O(h^4).
enum class AdjointMode { spectral_divergence, lattice_adjoint };

inline std::string_view to_string(AdjointMode m) {
    return m == AdjointMode::spectral_divergence ? "spectral_divergence" : "lattice_adjoint";
}

/// d_t u = a:D^2 u + b.Du - lambda u + f (forward) or its divergence-form
/// adjoint -d_s w = D_ij(a w) - D_i(b w) - lambda w + f (backward).
struct ParabolicProblem {
    GridFn a;
    std::optional<GridFn> b;
    double lambda = 0.0;
    std::optional<GridFn> f;
    Direction direction = Direction::forward;
    AdjointMode adjoint = AdjointMode::spectral_divergence;
};

struct SolveOptions {
    /// Maximum allowed residual of the implicit solve per step, relative to max(1, |rhs|_inf).
    double residual_tolerance = 1e-8;
    bool check_stability = true;
};

/// Per-step operators of the split scheme on one lattice.
class SplitScheme {
public:
    SplitScheme(const ParabolicProblem& prob, const Grid& g)
        : prob_(prob), g_(g), sp_(g) {
        validate();
        build_neighbours();
        cert_ = certify_ellipticity(prob_.a);
    }

    const Grid& grid() const { return g_; }
    const Spectral& spectral() const { return sp_; }
    const EllipticityCertificate& certificate() const { return cert_; }

    /// Throws StepInstability when the explicit remainder is not dominated by the implicit core.
    ///
    /// Frozen-coefficient von Neumann bound, a sufficient condition: with
    /// c_i^2 = (16 sin^2(xi_i h/2) - sin^2(xi_i h))/(3h^2) and
    /// s_i = (8 sin(xi_i h) - sin(2 xi_i h))/(6h) the remainder symbol obeys
    /// |e:M| <= rho(e) |c|^2 since M = diag(c^2 - s^2) + s s^T, and
    /// |b.(i s)| <= |b| |s|.
    void check_stability() const {
        const int d = g_.dim;
        const double dt = g_.time_step();
        double e_max = 0.0, b_max = 0.0, abar_min = std::numeric_limits<double>::infinity();
        for (int s = 0; s < prob_.a.slice_count(); ++s) {
            const auto& abar = abar_[s];
            double lo, hi;
            detail::symmetric_eigen_range(abar, lo, hi);
            abar_min = std::min(abar_min, lo);
            for (std::size_t p = 0; p < g_.points(); ++p) {
                const detail::Mat e = detail::matrix_at(prob_.a, s, p) - abar;
                detail::symmetric_eigen_range(e, lo, hi);
                e_max = std::max({e_max, std::abs(lo), std::abs(hi)});
            }
        }
        if (prob_.b) {
            for (int s = 0; s < prob_.b->slice_count(); ++s)
                for (std::size_t p = 0; p < g_.points(); ++p) {
                    double n2 = 0.0;
                    for (int c = 0; c < d; ++c) n2 += prob_.b->at(s, p, c) * prob_.b->at(s, p, c);
                    b_max = std::max(b_max, std::sqrt(n2));
                }
        }
        const double h = g_.spacing();
        const double allowed = 1.0 + dt * (1.0 + b_max * b_max / abar_min);
        double g_max = 0.0;
        for (const Mode& m : sp_.modes()) {
            double c2 = 0.0, s2 = 0.0;
            for (int a = 0; a < d; ++a) {
                const double th = m.xi[a] * h;
                const double sh = std::sin(th / 2.0), s1 = std::sin(th);
                const double sn = (8.0 * s1 - std::sin(2.0 * th)) / (6.0 * h);
                c2 += (16.0 * sh * sh - s1 * s1) / (3.0 * h * h);
                s2 += sn * sn;
            }
            const double num = std::hypot(1.0 + dt * e_max * c2, dt * b_max * std::sqrt(s2));
            g_max = std::max(g_max, num / (1.0 + dt * abar_min * m.xi2));
        }
        if (g_max > allowed) {
            std::ostringstream os;
            os << "explicit remainder is not dominated by the implicit core (amplification " << g_max
               << " > " << allowed << " with rho(a - abar) = " << e_max << ", min eig(abar) = " << abar_min
               << ", |b| = " << b_max << "); increase Nt or reduce the spatial oscillation of a";
            throw StepInstability(os.str());
        }
    }

    /// u^{n+1} = S_n(e^{-lambda dt}(I + dt R_n) u^n + phi1 dt f^{n+1}).
    void forward_step(int n, std::span<const double> u, std::span<double> out, bool with_source,
                      double residual_tol) const {
        const std::size_t np = g_.points();
        const double dt = g_.time_step();
        std::vector<double> v(np);
        remainder_fd(n, u, v);
        const double decay = std::exp(-prob_.lambda * dt);
        const double phi1 = phi1_dt(dt);
        for (std::size_t p = 0; p < np; ++p) v[p] = decay * (u[p] + dt * v[p]);
        if (with_source && prob_.f) {
            const int fs = prob_.f->slice_for_step(n + 1);
            for (std::size_t p = 0; p < np; ++p) v[p] += phi1 * prob_.f->at(fs, p);
        }
        implicit_solve(n, v, out, residual_tol);
    }

    /// w^n = (I + dt R*_n) S_n(e^{-lambda dt} w^{n+1} + phi1 dt f^n).
    void backward_step(int n, std::span<const double> w, std::span<double> out, bool with_source,
                       double residual_tol) const {
        const std::size_t np = g_.points();
        const double dt = g_.time_step();
        std::vector<double> v(np), sv(np), r(np);
        const double decay = std::exp(-prob_.lambda * dt);
        const double phi1 = phi1_dt(dt);
        for (std::size_t p = 0; p < np; ++p) v[p] = decay * w[p];
        if (with_source && prob_.f) {
            const int fs = prob_.f->slice_for_step(n);
            for (std::size_t p = 0; p < np; ++p) v[p] += phi1 * prob_.f->at(fs, p);
        }
        implicit_solve(n, v, sv, residual_tol);
        if (prob_.adjoint == AdjointMode::lattice_adjoint)
            remainder_adjoint_fd(n, sv, r);
        else
            remainder_adjoint_spectral(n, sv, r);
        for (std::size_t p = 0; p < np; ++p) out[p] = sv[p] + dt * r[p];
    }

private:
    // dt * phi_1(lambda dt) with phi_1(z) = (1 - e^{-z}) / z.
    double phi1_dt(double dt) const {
        const double z = prob_.lambda * dt;
        if (z < 1e-12) return dt;
        return dt * (-std::expm1(-z)) / z;
    }

    void validate() const {
        if (prob_.a.rank() != Rank::matrix) throw InvalidParameter("diffusion a must be matrix-valued");
        check_layout(prob_.a, "a");
        if (prob_.b) {
            if (prob_.b->rank() != Rank::vector) throw InvalidParameter("drift b must be vector-valued");
            check_layout(*prob_.b, "b");
        }
        if (prob_.f) {
            if (prob_.f->rank() != Rank::scalar) throw InvalidParameter("source f must be scalar");
            check_layout(*prob_.f, "f");
        }
        if (!(prob_.lambda >= 0.0)) throw InvalidParameter("lambda must be >= 0");
    }

    void check_layout(const GridFn& fn, const char* name) const {
        if (!fn.grid().same_lattice(g_))
            throw InvalidParameter(std::string(name) + " is sampled on a different lattice than the solve grid");
        if (fn.time_dependent() && !fn.grid().same_space_time(g_))
            throw InvalidParameter(std::string(name) + " has a different time grid than the solve grid");
    }

    detail::Mat mean_matrix(int slice) const {
        const int d = g_.dim;
        detail::Mat m = detail::Mat::Zero(d, d);
        for (std::size_t p = 0; p < g_.points(); ++p)
            for (int c = 0; c < d * d; ++c) m(c / d, c % d) += prob_.a.at(slice, p, c);
        return m / static_cast<double>(g_.points());
    }

    void build_neighbours() {
        const int d = g_.dim;
        const std::size_t np = g_.points();
        for (int a = 0; a < d; ++a) {
            for (int k = 0; k < 2; ++k) {
                plus_[k][a].resize(np);
                minus_[k][a].resize(np);
            }
            for (std::size_t p = 0; p < np; ++p) {
                const auto idx = g_.multi_index(p);
                for (int k = 0; k < 2; ++k) {
                    auto up = idx, dn = idx;
                    up[a] += k + 1;
                    dn[a] -= k + 1;
                    plus_[k][a][p] = g_.linear(up);
                    minus_[k][a][p] = g_.linear(dn);
                }
            }
        }
        abar_.clear();
        for (int s = 0; s < prob_.a.slice_count(); ++s) abar_.push_back(mean_matrix(s));
    }

    const detail::Mat& abar_at(int n) const { return abar_[prob_.a.slice_for_step(n)]; }

    // D_i u, D_ii u and D_i D_j u with fourth-order centered differences.
    double d1(std::span<const double> u, std::size_t p, int i) const {
        return (8.0 * (u[plus_[0][i][p]] - u[minus_[0][i][p]]) - (u[plus_[1][i][p]] - u[minus_[1][i][p]])) /
               (12.0 * g_.spacing());
    }
    double d2(std::span<const double> u, std::size_t p, int i, int j) const {
        const double h = g_.spacing();
        if (i == j)
            return (16.0 * (u[plus_[0][i][p]] + u[minus_[0][i][p]]) - (u[plus_[1][i][p]] + u[minus_[1][i][p]]) -
                    30.0 * u[p]) /
                   (12.0 * h * h);
        return (8.0 * (d1(u, plus_[0][j][p], i) - d1(u, minus_[0][j][p], i)) -
                (d1(u, plus_[1][j][p], i) - d1(u, minus_[1][j][p], i))) /
               (12.0 * h);
    }

    /// R_n u = (a - abar):D^2 u + b.D u.
    void remainder_fd(int n, std::span<const double> u, std::span<double> out) const {
        const int d = g_.dim;
        const int as = prob_.a.slice_for_step(n);
        const auto& abar = abar_at(n);
        const int bs = prob_.b ? prob_.b->slice_for_step(n) : 0;
        for (std::size_t p = 0; p < g_.points(); ++p) {
            double acc = 0.0;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    const double e = prob_.a.at(as, p, i * d + j) - abar(i, j);
                    if (e != 0.0) acc += e * d2(u, p, i, j);
                }
            if (prob_.b)
                for (int i = 0; i < d; ++i) acc += prob_.b->at(bs, p, i) * d1(u, p, i);
            out[p] = acc;
        }
    }

    /// Transpose of remainder_fd: D_ij((a - abar) w) - D_i(b w).
    void remainder_adjoint_fd(int n, std::span<const double> w, std::span<double> out) const {
        const int d = g_.dim;
        const std::size_t np = g_.points();
        const int as = prob_.a.slice_for_step(n);
        const auto& abar = abar_at(n);
        std::fill(out.begin(), out.end(), 0.0);
        std::vector<double> prod(np);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                for (std::size_t p = 0; p < np; ++p) prod[p] = (prob_.a.at(as, p, i * d + j) - abar(i, j)) * w[p];
                for (std::size_t p = 0; p < np; ++p) out[p] += d2(prod, p, i, j);
            }
        if (prob_.b) {
            const int bs = prob_.b->slice_for_step(n);
            for (int i = 0; i < d; ++i) {
                for (std::size_t p = 0; p < np; ++p) prod[p] = prob_.b->at(bs, p, i) * w[p];
                for (std::size_t p = 0; p < np; ++p) out[p] -= d1(prod, p, i);
            }
        }
    }

    /// Same operator with spectral derivatives.
    void remainder_adjoint_spectral(int n, std::span<const double> w, std::span<double> out) const {
        const int d = g_.dim;
        const std::size_t np = g_.points();
        const int as = prob_.a.slice_for_step(n);
        const auto& abar = abar_at(n);
        std::vector<cplx> acc(sp_.spectrum_size(), cplx(0.0)), spec;
        std::vector<double> prod(np);
        const auto& modes = sp_.modes();
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                for (std::size_t p = 0; p < np; ++p) prod[p] = (prob_.a.at(as, p, i * d + j) - abar(i, j)) * w[p];
                sp_.forward(prod, spec);
                const double sym = i == j ? 1.0 : 2.0;
                for (std::size_t q = 0; q < spec.size(); ++q) {
                    const Mode& m = modes[q];
                    if (i != j && (m.nyquist[i] || m.nyquist[j])) continue;
                    acc[q] -= sym * m.xi[i] * m.xi[j] * spec[q];
                }
            }
        if (prob_.b) {
            const int bs = prob_.b->slice_for_step(n);
            for (int i = 0; i < d; ++i) {
                for (std::size_t p = 0; p < np; ++p) prod[p] = prob_.b->at(bs, p, i) * w[p];
                sp_.forward(prod, spec);
                for (std::size_t q = 0; q < spec.size(); ++q) {
                    const Mode& m = modes[q];
                    if (m.nyquist[i]) continue;
                    acc[q] -= cplx(0.0, m.xi[i]) * spec[q];
                }
            }
        }
        sp_.inverse(acc, out);
    }

    /// out = (I + dt abar:xi xi)^{-1} rhs, with a residual check of the solve.
    void implicit_solve(int n, std::span<const double> rhs, std::span<double> out, double residual_tol) const {
        const int d = g_.dim;
        const double dt = g_.time_step();
        const auto& abar = abar_at(n);
        std::vector<cplx> spec, check;
        sp_.forward(rhs, spec);
        const auto& modes = sp_.modes();
        std::vector<double> symbol(spec.size());
        for (std::size_t q = 0; q < spec.size(); ++q) {
            const Mode& m = modes[q];
            double s = 0.0;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    if (i != j && (m.nyquist[i] || m.nyquist[j])) continue;
                    s += abar(i, j) * m.xi[i] * m.xi[j];
                }
            symbol[q] = 1.0 + dt * s;
            spec[q] /= symbol[q];
        }
        sp_.inverse(spec, out);
        if (residual_tol > 0.0) {
            sp_.forward(std::span<const double>(out.data(), out.size()), check);
            for (std::size_t q = 0; q < check.size(); ++q) check[q] *= symbol[q];
            std::vector<double> back(out.size());
            sp_.inverse(check, back);
            double res = 0.0, scale = 1.0;
            for (std::size_t p = 0; p < back.size(); ++p) {
                res = std::max(res, std::abs(back[p] - rhs[p]));
                scale = std::max(scale, std::abs(rhs[p]));
            }
            if (res > residual_tol * scale)
                throw NonConvergence("implicit solve residual " + std::to_string(res) + " exceeds tolerance at step " +
                                     std::to_string(n));
        }
    }

    ParabolicProblem prob_;
    Grid g_;
    Spectral sp_;
    EllipticityCertificate cert_;
    std::vector<detail::Mat> abar_;
    // plus_[k][a][p]: neighbour k + 1 steps along axis a.
    std::array<std::array<std::vector<std::size_t>, kMaxDim>, 2> plus_, minus_;
};

/// Solves the forward equation with u(0) = initial (default 0) on all Nt + 1 time levels.
inline GridFn solve_forward(const ParabolicProblem& prob, const Grid& g, const SolveOptions& opt = {},
                            const std::optional<GridFn>& initial = std::nullopt) {
    if (prob.direction != Direction::forward) throw InvalidParameter("solve_forward needs a forward problem");
    SplitScheme scheme(prob, g);
    if (opt.check_stability) scheme.check_stability();
    const std::size_t np = g.points();
    std::vector<double> u((g.nt + 1) * np, 0.0);
    if (initial) std::copy(initial->slice(0).begin(), initial->slice(0).end(), u.begin());
    for (int n = 0; n < g.nt; ++n) {
        scheme.forward_step(n, std::span<const double>(u.data() + n * np, np), std::span<double>(u.data() + (n + 1) * np, np),
                            true, opt.residual_tolerance);
    }
    return GridFn(g, Rank::scalar, true, std::move(u));
}

/// Solves the backward adjoint equation with w(T) = terminal (default 0) on all time levels.
inline GridFn solve_backward(const ParabolicProblem& prob, const Grid& g,
                             const std::optional<GridFn>& terminal = std::nullopt, const SolveOptions& opt = {}) {
    if (prob.direction != Direction::backward_adjoint)
        throw InvalidParameter("solve_backward needs a backward-adjoint problem");
    SplitScheme scheme(prob, g);
    if (opt.check_stability) scheme.check_stability();
    const std::size_t np = g.points();
    std::vector<double> w((g.nt + 1) * np, 0.0);
    if (terminal) std::copy(terminal->slice(0).begin(), terminal->slice(0).end(), w.begin() + g.nt * np);
    for (int n = g.nt - 1; n >= 0; --n) {
        scheme.backward_step(n, std::span<const double>(w.data() + (n + 1) * np, np), std::span<double>(w.data() + n * np, np),
                             true, opt.residual_tolerance);
    }
    return GridFn(g, Rank::scalar, true, std::move(w));
}

/// T_{s,t} phi: homogeneous forward propagation from step k0 to step k1.
inline std::vector<double> propagate_forward(const SplitScheme& scheme, std::span<const double> phi, int k0, int k1,
                                             double residual_tol = 1e-8) {
    std::vector<double> u(phi.begin(), phi.end()), next(u.size());
    for (int n = k0; n < k1; ++n) {
        scheme.forward_step(n, u, next, false, residual_tol);
        u.swap(next);
    }
    return u;
}

/// T*_{s,t} psi: homogeneous backward propagation from step k1 down to step k0.
inline std::vector<double> propagate_backward(const SplitScheme& scheme, std::span<const double> psi, int k0, int k1,
                                              double residual_tol = 1e-8) {
    std::vector<double> w(psi.begin(), psi.end()), next(w.size());
    for (int n = k1 - 1; n >= k0; --n) {
        scheme.backward_step(n, w, next, false, residual_tol);
        w.swap(next);
    }
    return w;
}

inline double lattice_inner(std::span<const double> x, std::span<const double> y, double cell_volume) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s * cell_volume;
}

/// |<T_{s,t} phi, psi> - <phi, T*_{s,t} psi>| with the lattice inner product.
/// s and t must be multiples of the time step.
inline double duality_residual(const GridFn& a, double lambda, const GridFn& phi, const GridFn& psi, double s, double t,
                               const Grid& g, AdjointMode mode = AdjointMode::spectral_divergence) {
    if (t < s) throw InvalidParameter("duality residual needs s <= t");
    const double dt = g.time_step();
    const int k0 = static_cast<int>(std::llround(s / dt));
    const int k1 = static_cast<int>(std::llround(t / dt));
    if (std::abs(k0 * dt - s) > 1e-9 * dt || std::abs(k1 * dt - t) > 1e-9 * dt || k1 > g.nt)
        throw InvalidParameter("s and t must lie on the time grid");
    ParabolicProblem prob{a, std::nullopt, lambda, std::nullopt, Direction::forward, mode};
    SplitScheme scheme(prob, g);
    const auto u = propagate_forward(scheme, phi.slice(0), k0, k1);
    const auto w = propagate_backward(scheme, psi.slice(0), k0, k1);
    const double vol = g.cell_volume();
    return std::abs(lattice_inner(u, psi.slice(0), vol) - lattice_inner(phi.slice(0), w, vol));
}

/// Dense matrix (row-major, N x N) of the homogeneous step at time step n.
inline std::vector<double> assemble_step_matrix(const ParabolicProblem& prob, const Grid& g, int n, Direction dir) {
    SplitScheme scheme(prob, g);
    const std::size_t N = g.points();
    std::vector<double> M(N * N), e(N, 0.0), col(N);
    for (std::size_t j = 0; j < N; ++j) {
        e[j] = 1.0;
        if (dir == Direction::forward)
            scheme.forward_step(n, e, col, false, 0.0);
        else
            scheme.backward_step(n, e, col, false, 0.0);
        for (std::size_t i = 0; i < N; ++i) M[i * N + j] = col[i];
        e[j] = 0.0;
    }
    return M;
}

// ---------------------------------------------------------------------------
// Maximal-regularity survey

struct MaxRegRow {
    std::string id;
    double lambda_term = 0.0;   // lambda^{1 - alpha/2 - 1/q} |||u|||_{H^{alpha,p}_inf} / |||f|||
    double time_term = 0.0;     // |||d_t u|||_{L^p_q} / |||f|||
    double hessian_term = 0.0;  // |||u|||_{H^{2,p}_q} / |||f|||
    double source_norm = 0.0;
};

struct MaxRegReport {
    std::vector<MaxRegRow> rows;
    double max_lambda_term = 0.0;
    double max_time_term = 0.0;
    double max_hessian_term = 0.0;
    NormParams params;
    double lambda = 0.0;

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(17);
        os << "source,lambda_term,time_term,hessian_term\n";
        for (const auto& r : rows) os << r.id << ',' << r.lambda_term << ',' << r.time_term << ',' << r.hessian_term << '\n';
        return os.str();
    }
};

inline void to_json(nlohmann::json& j, const MaxRegReport& r) {
    auto rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"source", row.id},
                        {"lambda_term", row.lambda_term},
                        {"time_term", row.time_term},
                        {"hessian_term", row.hessian_term}});
    j = nlohmann::json{{"lambda", r.lambda},
                       {"params", r.params},
                       {"max_lambda_term", r.max_lambda_term},
                       {"max_time_term", r.max_time_term},
                       {"max_hessian_term", r.max_hessian_term},
                       {"rows", rows}};
}

/// Backward time difference on the solver grid; slice 0 copies slice 1.
inline GridFn time_derivative(const GridFn& u) {
    if (!u.time_dependent()) return GridFn::constant(u.grid(), 0.0);
    const std::size_t n = u.slice_size();
    const double dt = u.grid().time_step();
    std::vector<double> out(u.values().size());
    for (int s = 1; s < u.slice_count(); ++s)
        for (std::size_t p = 0; p < n; ++p) out[s * n + p] = (u.at(s, p) - u.at(s - 1, p)) / dt;
    std::copy(out.begin() + n, out.begin() + 2 * n, out.begin());
    return u.with_values(std::move(out));
}

struct NamedSource {
    std::string id;
    GridFn f;
};

/// Solves the forward problem for each source and reports the three left-hand
/// terms of the maximal-regularity estimate divided by |||f|||_{L^p_q}.
/// The lambda term uses np.alpha, which must lie in [0, 2 - 2/q).
inline MaxRegReport max_reg_survey(const GridFn& a, const std::optional<GridFn>& b, double lambda,
                                   const std::vector<NamedSource>& sources, const NormParams& np, const Grid& g,
                                   int workers = 1) {
    const double qv = np.q.infinite ? std::numeric_limits<double>::infinity() : np.q.value;
    const double alpha_max = np.q.infinite ? 2.0 : 2.0 - 2.0 / qv;
    if (np.alpha < 0.0 || np.alpha >= alpha_max)
        throw InvalidParameter("maxreg alpha must lie in [0, 2 - 2/q)");
    const double expo = 1.0 - np.alpha / 2.0 - (np.q.infinite ? 0.0 : 1.0 / qv);
    MaxRegReport rep;
    rep.params = np;
    rep.lambda = lambda;
    rep.rows.resize(sources.size());
    parallel_for(sources.size(), workers, [&](std::size_t i) {
        ParabolicProblem prob{a, b, lambda, sources[i].f, Direction::forward, AdjointMode::spectral_divergence};
        const GridFn u = solve_forward(prob, g);
        NormParams lp = np;
        lp.alpha = 0.0;
        const double fn = localized_norm(sources[i].f, lp).value;
        if (!(fn > 0.0)) throw InvalidParameter("source '" + sources[i].id + "' has zero norm");
        NormParams sup = np;
        sup.q = Exponent::infinity();
        NormParams hess = np;
        hess.alpha = 2.0;
        MaxRegRow row;
        row.id = sources[i].id;
        row.source_norm = fn;
        row.lambda_term = std::pow(lambda, expo) * localized_norm(u, sup).value / fn;
        row.time_term = localized_norm(time_derivative(u), lp).value / fn;
        row.hessian_term = localized_norm(u, hess).value / fn;
        rep.rows[i] = row;
    });
    for (const auto& r : rep.rows) {
        rep.max_lambda_term = std::max(rep.max_lambda_term, r.lambda_term);
        rep.max_time_term = std::max(rep.max_time_term, r.time_term);
        rep.max_hessian_term = std::max(rep.max_hessian_term, r.hessian_term);
    }
    return rep;
}

struct LambdaSweep {
    std::vector<double> lambdas;
    /// quantity[i][k]: source i at lambdas[k].
    std::vector<std::vector<double>> quantity;
    std::vector<std::string> ids;
    /// Largest max/min over lambda among all sources.
    double worst_spread = 0.0;
};

inline void to_json(nlohmann::json& j, const LambdaSweep& s) {
    j = nlohmann::json{{"lambdas", s.lambdas}, {"ids", s.ids}, {"quantity", s.quantity}, {"worst_spread", s.worst_spread}};
}

/// lambda^{1 - 1/q} |||u_lambda|||_{L^p_inf} / |||f|||_{L^p_q} for each source and lambda (b = 0).
inline LambdaSweep lambda_sweep(const GridFn& a, const std::vector<NamedSource>& sources, const std::vector<double>& lambdas,
                                const NormParams& np, const Grid& g, int workers = 1) {
    LambdaSweep sw;
    sw.lambdas = lambdas;
    sw.quantity.assign(sources.size(), std::vector<double>(lambdas.size()));
    for (const auto& s : sources) sw.ids.push_back(s.id);
    const double expo = 1.0 - (np.q.infinite ? 0.0 : 1.0 / np.q.value);
    NormParams lp = np;
    lp.alpha = 0.0;
    NormParams sup = lp;
    sup.q = Exponent::infinity();
    parallel_for(sources.size() * lambdas.size(), workers, [&](std::size_t job) {
        const std::size_t i = job / lambdas.size(), k = job % lambdas.size();
        ParabolicProblem prob{a, std::nullopt, lambdas[k], sources[i].f, Direction::forward, AdjointMode::spectral_divergence};
        const GridFn u = solve_forward(prob, g);
        sw.quantity[i][k] = std::pow(lambdas[k], expo) * localized_norm(u, sup).value / localized_norm(sources[i].f, lp).value;
    });
    for (const auto& row : sw.quantity) {
        const double mx = *std::max_element(row.begin(), row.end());
        const double mn = *std::min_element(row.begin(), row.end());
        sw.worst_spread = std::max(sw.worst_spread, mx / mn);
    }
    return sw;
}

} // namespace zvlab
