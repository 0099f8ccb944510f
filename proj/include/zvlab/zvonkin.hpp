#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "zvlab/coefficients.hpp"
#include "zvlab/pde.hpp"
#include "zvlab/sde.hpp"

namespace zvlab {

namespace detail {

/// Centered-difference Jacobian of a vector GridFn: out[c*d + a] = D_a u_c.
inline GridFn centered_jacobian(const GridFn& u) {
    const Grid& g = u.grid();
    const int d = g.dim;
    const std::size_t np = g.points();
    const double h2 = 2.0 * g.spacing();
    std::vector<double> out(u.slice_count() * np * d * d);
    for (std::size_t p = 0; p < np; ++p) {
        const auto idx = g.multi_index(p);
        for (int a = 0; a < d; ++a) {
            auto ip = idx, im = idx;
            ++ip[a];
            --im[a];
            const std::size_t pp = g.linear(ip), pm = g.linear(im);
            for (int s = 0; s < u.slice_count(); ++s)
                for (int c = 0; c < d; ++c)
                    out[(s * np + p) * d * d + c * d + a] = (u.at(s, pp, c) - u.at(s, pm, c)) / h2;
        }
    }
    return GridFn(g, Rank::matrix, u.time_dependent(), std::move(out));
}

inline double max_pointwise_norm(const GridFn& f) {
    const int nc = f.components();
    const auto v = f.values();
    double m = 0.0;
    for (std::size_t i = 0; i < v.size() / nc; ++i) {
        double s = 0.0;
        for (int c = 0; c < nc; ++c) s += v[i * nc + c] * v[i * nc + c];
        m = std::max(m, s);
    }
    return std::sqrt(m);
}

} // namespace detail

struct InverseStats {
    int iterations = 0;
    /// Largest ratio |x_{k+1} - x_k| / |x_k - x_{k-1}| seen.
    double worst_ratio = 0.0;
};

/// Phi(t, x) = x + u(t, x) with u solving the backward equation
/// d_t u + a:D^2 u + b.Du - lambda u + b = 0, u(T) = 0, componentwise.
class ZvonkinTransform {
public:
    /// Wraps a given vector-valued u (on its space-time grid) with the sigma it transforms.
    ZvonkinTransform(GridFn u, GridFn sigma, double lambda)
        : u_(std::move(u)), sigma_(std::move(sigma)), lambda_(lambda), grad_u_(detail::centered_jacobian(u_)),
          u_ip_(u_), grad_ip_(grad_u_), sigma_ip_(sigma_) {
        if (u_.rank() != Rank::vector) throw InvalidParameter("Zvonkin u must be vector-valued");
        if (sigma_.rank() != Rank::matrix) throw InvalidParameter("sigma must be matrix-valued");
        if (!sigma_.grid().same_lattice(u_.grid())) throw InvalidParameter("sigma and u live on different lattices");
        sup_u_ = detail::max_pointwise_norm(u_);
        sup_grad_ = detail::max_pointwise_norm(grad_u_);
    }

    const Grid& grid() const { return u_.grid(); }
    int dim() const { return grid().dim; }
    const GridFn& u() const { return u_; }
    const GridFn& grad_u() const { return grad_u_; }
    const GridFn& sigma() const { return sigma_; }
    double lambda() const { return lambda_; }
    double sup_u() const { return sup_u_; }
    double sup_grad_u() const { return sup_grad_; }
    /// Lattice max |u| plus lattice max |Du|_F.
    double smallness() const { return sup_u_ + sup_grad_; }
    /// Upper bound 1 + sup |Du|_F of sup |D Phi|.
    double grad_phi_bound() const { return 1.0 + sup_grad_; }

    const std::vector<double>& lambda_trace() const { return lambdas_; }
    const std::vector<double>& smallness_trace() const { return trace_; }
    void set_trace(std::vector<double> lambdas, std::vector<double> trace) {
        lambdas_ = std::move(lambdas);
        trace_ = std::move(trace);
    }

    void u_at(double t, const double* x, double* out) const { u_ip_.value(t, x, out); }

    void phi(double t, const double* x, double* y) const {
        u_ip_.value(t, x, y);
        for (int a = 0; a < dim(); ++a) y[a] += x[a];
    }

    /// grad Phi at (t, x), row-major: J[c*d + a] = d Phi_c / d x_a.
    void grad_phi(double t, const double* x, double* J) const {
        grad_ip_.value(t, x, J);
        for (int a = 0; a < dim(); ++a) J[a * dim() + a] += 1.0;
    }

    /// Solves Phi(t, x) = y by x <- y - u(t, x). Starts from `warm` when given, else from y.
    void phi_inverse(double t, const double* y, double* x, InverseStats* stats = nullptr,
                     const double* warm = nullptr) const {
        const int d = dim();
        double cur[kMaxDim], next[kMaxDim], uv[kMaxDim];
        for (int a = 0; a < d; ++a) cur[a] = warm ? warm[a] : y[a];
        double prev_step = -1.0;
        InverseStats st;
        for (int it = 1; it <= 60; ++it) {
            u_ip_.value(t, cur, uv);
            double step = 0.0;
            for (int a = 0; a < d; ++a) {
                next[a] = y[a] - uv[a];
                step += (next[a] - cur[a]) * (next[a] - cur[a]);
            }
            step = std::sqrt(step);
            if (prev_step > 0.0) st.worst_ratio = std::max(st.worst_ratio, step / prev_step);
            prev_step = step;
            for (int a = 0; a < d; ++a) cur[a] = next[a];
            st.iterations = it;
            if (step <= 1e-10) {
                for (int a = 0; a < d; ++a) x[a] = cur[a];
                if (stats) *stats = st;
                return;
            }
        }
        throw NonConvergence("Phi inverse did not converge in 60 iterations (smallness " + std::to_string(smallness()) + ")");
    }

    void sigma_at(double t, const double* x, double* out) const { sigma_ip_.value(t, x, out); }

private:
    GridFn u_;
    GridFn sigma_;
    double lambda_;
    GridFn grad_u_;
    LatticeInterpolator u_ip_, grad_ip_, sigma_ip_;
    double sup_u_ = 0.0, sup_grad_ = 0.0;
    std::vector<double> lambdas_, trace_;
};

/// Solves the backward equation at a fixed lambda on the space-time grid g.
/// sigma is a matrix GridFn and b a vector GridFn on the lattice of g.
inline ZvonkinTransform solve_transform(const GridFn& sigma, const GridFn& b, const Grid& g, double lambda) {
    if (!sigma.grid().same_lattice(g) || !b.grid().same_lattice(g))
        throw InvalidParameter("sigma and b must be sampled on the transform lattice");
    if (b.rank() != Rank::vector) throw InvalidParameter("drift must be vector-valued");
    const int d = g.dim;
    const std::size_t np = g.points();
    auto on_grid = [&](const GridFn& f) {
        if (!f.time_dependent()) return GridFn(g, f.rank(), false, std::vector<double>(f.values().begin(), f.values().end()));
        if (f.grid().nt != g.nt) throw InvalidParameter("time-dependent coefficients must share Nt with the transform grid");
        return GridFn(g, f.rank(), true, std::vector<double>(f.values().begin(), f.values().end()));
    };
    const GridFn a = reverse_time(diffusion_from_sigma(on_grid(sigma)));
    const GridFn bb = reverse_time(on_grid(b));
    std::vector<double> u((g.nt + 1) * np * d);
    for (int i = 0; i < d; ++i) {
        ParabolicProblem prob{a, bb, lambda, bb.component(i), Direction::forward, AdjointMode::spectral_divergence};
        const GridFn v = reverse_time(solve_forward(prob, g));
        for (int s = 0; s <= g.nt; ++s)
            for (std::size_t p = 0; p < np; ++p) u[(s * np + p) * d + i] = v.at(s, p);
    }
    return ZvonkinTransform(GridFn(g, Rank::vector, true, std::move(u)), on_grid(sigma), lambda);
}

struct CalibrationOptions {
    double lambda0 = 1.0;
    int max_doublings = 20;
    double target = 0.5;
};

/// Doubles lambda from lambda0 until the smallness is at most 1/2.
/// Throws CalibrationFailure carrying the smallness trace.
inline ZvonkinTransform build_transform(const GridFn& sigma, const GridFn& b, const Grid& g,
                                        const CalibrationOptions& opt = {}) {
    if (!(opt.lambda0 > 0.0)) throw InvalidParameter("lambda0 must be > 0");
    std::vector<double> lambdas, trace;
    double lambda = opt.lambda0;
    for (int k = 0; k <= opt.max_doublings; ++k, lambda *= 2.0) {
        ZvonkinTransform tf = solve_transform(sigma, b, g, lambda);
        lambdas.push_back(lambda);
        trace.push_back(tf.smallness());
        if (tf.smallness() <= opt.target) {
            tf.set_trace(std::move(lambdas), std::move(trace));
            return tf;
        }
    }
    throw CalibrationFailure("smallness above " + std::to_string(opt.target) + " after " +
                                 std::to_string(opt.max_doublings) + " doublings of lambda",
                             trace);
}

struct TransformedCoefficients {
    GridFn sigma_tilde;
    GridFn b_tilde;
    /// Eigenvalue range of sigma_tilde sigma_tilde^T / 2 over the lattice.
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    /// Lattice max of the spectral norm of D Phi^{-1}(y) = (D Phi(x))^{-1}.
    double grad_inverse_max = 0.0;
    double grad_phi_max = 0.0;
    int max_inverse_iterations = 0;
    double worst_contraction = 0.0;
};

/// sigma~(t, y) = (D Phi sigma)(t, Phi^{-1}(t, y)) and b~(t, y) = lambda u(t, Phi^{-1}(t, y)) on the lattice.
inline TransformedCoefficients transformed_coefficients(const ZvonkinTransform& tf, int workers = 1) {
    const Grid& g = tf.grid();
    const int d = g.dim;
    const std::size_t np = g.points();
    const int S = g.nt + 1;
    std::vector<double> st(S * np * d * d), bt(S * np * d);
    struct Acc {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0, ginv = 0.0, gphi = 0.0, ratio = 0.0;
        int iters = 0;
    };
    std::vector<Acc> acc(S);
    parallel_for(S, workers, [&](std::size_t s) {
        const double t = g.time(static_cast<int>(s));
        double y[kMaxDim], x[kMaxDim], J[kMaxDim * kMaxDim], sg[kMaxDim * kMaxDim], uv[kMaxDim];
        Acc a;
        using M = detail::SmallMat;
        for (std::size_t p = 0; p < np; ++p) {
            g.point(p, y);
            InverseStats is;
            tf.phi_inverse(t, y, x, &is);
            a.iters = std::max(a.iters, is.iterations);
            a.ratio = std::max(a.ratio, is.worst_ratio);
            tf.grad_phi(t, x, J);
            tf.sigma_at(t, x, sg);
            tf.u_at(t, x, uv);
            M Jm(d, d), Sm(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    Jm(i, j) = J[i * d + j];
                    Sm(i, j) = sg[i * d + j];
                }
            const M St = Jm * Sm;
            for (int i = 0; i < d; ++i) {
                bt[(s * np + p) * d + i] = tf.lambda() * uv[i];
                for (int j = 0; j < d; ++j) st[(s * np + p) * d * d + i * d + j] = St(i, j);
            }
            const M A = 0.5 * St * St.transpose();
            Eigen::SelfAdjointEigenSolver<M> es(A);
            a.lo = std::min(a.lo, es.eigenvalues()(0));
            a.hi = std::max(a.hi, es.eigenvalues()(d - 1));
            Eigen::JacobiSVD<M> svd(Jm);
            a.gphi = std::max(a.gphi, svd.singularValues()(0));
            a.ginv = std::max(a.ginv, 1.0 / svd.singularValues()(d - 1));
        }
        acc[s] = a;
    });
    TransformedCoefficients out{GridFn(g, Rank::matrix, true, std::move(st)), GridFn(g, Rank::vector, true, std::move(bt))};
    out.min_eigenvalue = std::numeric_limits<double>::infinity();
    for (const auto& a : acc) {
        out.min_eigenvalue = std::min(out.min_eigenvalue, a.lo);
        out.max_eigenvalue = std::max(out.max_eigenvalue, a.hi);
        out.grad_inverse_max = std::max(out.grad_inverse_max, a.ginv);
        out.grad_phi_max = std::max(out.grad_phi_max, a.gphi);
        out.max_inverse_iterations = std::max(out.max_inverse_iterations, a.iters);
        out.worst_contraction = std::max(out.worst_contraction, a.ratio);
    }
    return out;
}

inline nlohmann::json transform_summary(const ZvonkinTransform& tf, const TransformedCoefficients& tc) {
    return nlohmann::json{{"lambda", tf.lambda()},
                          {"smallness", tf.smallness()},
                          {"sup_u", tf.sup_u()},
                          {"sup_grad_u", tf.sup_grad_u()},
                          {"lambda_trace", tf.lambda_trace()},
                          {"smallness_trace", tf.smallness_trace()},
                          {"sigma_tilde_ellipticity", {tc.min_eigenvalue, tc.max_eigenvalue}},
                          {"grad_phi_max", tc.grad_phi_max},
                          {"grad_phi_inverse_max", tc.grad_inverse_max}};
}

// ---------------------------------------------------------------------------
// Conjugacy

struct ConjugacyReport {
    /// max over the time grid of E|Phi(t, X_t) - Y_t|.
    double pathwise = 0.0;
    double pathwise_se = 0.0;
    std::vector<AgreementRow> weak;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    int nt = 0;
};

inline void to_json(nlohmann::json& j, const ConjugacyReport& r) {
    j = nlohmann::json{{"pathwise", r.pathwise}, {"pathwise_se", r.pathwise_se}, {"weak", r.weak},
                       {"samples", r.samples},   {"seed", r.seed},               {"nt", r.nt}};
}

struct NamedTest {
    std::string id;
    TestFunction phi;
};

/// Simulates X under (sigma, b) and Y = Phi(0, x0) + ... under (sigma~, b~) with the same increments.
/// `original` must use the same periodic coefficients the transform was built from.
inline ConjugacyReport conjugacy_check(const ModelPtr& original, const ZvonkinTransform& tf,
                                       const TransformedCoefficients& tc, const std::vector<NamedTest>& battery,
                                       SimConfig cfg) {
    const int d = tf.dim();
    cfg.with_flow = false;
    cfg.validate(d);
    const GriddedModel ymodel(tc.b_tilde, tc.sigma_tilde, Extension::periodic);
    std::vector<double> y0(d);
    tf.phi(0.0, cfg.x0.data(), y0.data());
    const int K = static_cast<int>(battery.size());
    const int nt = cfg.nt;
    // Per path: discrepancy at each step, then phi_i(Phi(T, X_T)), phi_i(Y_T) and their difference.
    const int cols = (nt + 1) + 3 * K;
    std::vector<double> tab(cfg.paths * cols);
    parallel_ranges(cfg.paths, cfg.workers, [&](std::size_t begin, std::size_t end) {
        PathBuffers bx, by;
        double px[kMaxDim];
        for (std::size_t m = begin; m < end; ++m) {
            const PathView vx = simulate_path(*original, cfg, cfg.x0, m, bx);
            const PathView vy = simulate_path(ymodel, cfg, y0, m, by);
            double* row = tab.data() + m * cols;
            for (int k = 0; k <= nt; ++k) {
                tf.phi(std::min(vx.time(k), tf.grid().horizon), vx.state(k), px);
                double s = 0.0;
                for (int a = 0; a < d; ++a) s += (px[a] - vy.state(k)[a]) * (px[a] - vy.state(k)[a]);
                row[k] = std::sqrt(s);
            }
            for (int i = 0; i < K; ++i) {
                row[nt + 1 + i] = battery[i].phi(px);
                row[nt + 1 + K + i] = battery[i].phi(vy.state(nt));
                row[nt + 1 + 2 * K + i] = row[nt + 1 + i] - row[nt + 1 + K + i];
            }
        }
    });
    ConjugacyReport r;
    r.samples = cfg.paths;
    r.seed = cfg.seed;
    r.nt = nt;
    for (int k = 0; k <= nt; ++k) {
        const auto [m, s] = mean_se(tab, cols, k);
        if (m >= r.pathwise) {
            r.pathwise = m;
            r.pathwise_se = s;
        }
    }
    for (int i = 0; i < K; ++i) {
        AgreementRow w;
        w.id = battery[i].id;
        std::tie(w.first, w.first_se) = mean_se(tab, cols, nt + 1 + i);
        std::tie(w.second, w.second_se) = mean_se(tab, cols, nt + 1 + K + i);
        w.difference = w.first - w.second;
        w.combined_se = combined_se(w.first_se, w.second_se);
        w.paired_se = mean_se(tab, cols, nt + 1 + 2 * K + i).second;
        r.weak.push_back(w);
    }
    return r;
}

/// Default test-function battery for weak comparisons.
inline std::vector<NamedTest> default_test_battery(int d) {
    return {
        {"cos_x1", [](const double* x) { return std::cos(x[0]); }},
        {"sin_x1", [](const double* x) { return std::sin(x[0]); }},
        {"bump", [d](const double* x) {
             double r2 = 0.0;
             for (int a = 0; a < d; ++a) r2 += x[a] * x[a];
             return std::exp(-r2);
         }},
        {"atan_sum", [d](const double* x) {
             double s = 0.0;
             for (int a = 0; a < d; ++a) s += x[a];
             return std::atan(s);
         }},
    };
}

} // namespace zvlab
