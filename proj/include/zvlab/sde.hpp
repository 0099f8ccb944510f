#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "zvlab/coefficients.hpp"
#include "zvlab/norms.hpp"
#include "zvlab/parallel.hpp"

namespace zvlab {

// ---------------------------------------------------------------------------
// Seeding and reductions

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of path `path` under master seed `seed`; streams are independent of the worker count.
inline std::uint64_t path_seed(std::uint64_t seed, std::uint64_t path) {
    return splitmix64(splitmix64(seed) ^ splitmix64(path + 0x632be59bd9b4e019ULL));
}

/// Pairwise sum of v[offset + k*stride], k < n, in index order.
inline double pairwise_sum(const double* v, std::size_t n, std::size_t stride = 1) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += v[k * stride];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(v, h, stride) + pairwise_sum(v + h * stride, n - h, stride);
}

// ---------------------------------------------------------------------------
// Simulation

struct SimConfig {
    std::vector<double> x0;
    double T = 1.0;
    int nt = 128;
    std::size_t paths = 1000;
    std::uint64_t seed = 1;
    bool with_flow = false;
    int workers = 1;
    /// Cap on paths * steps.
    double budget = 1e10;
    /// Time of the initial state; coefficients are evaluated at t_start + k dt.
    double t_start = 0.0;

    double dt() const { return T / nt; }

    void validate(int d) const {
        if (static_cast<int>(x0.size()) != d)
            throw InvalidParameter("x0 has " + std::to_string(x0.size()) + " entries, the model has d = " + std::to_string(d));
        if (!(T > 0.0)) throw InvalidParameter("horizon T must be > 0");
        if (nt < 1) throw InvalidParameter("Nt must be >= 1");
        if (paths < 1) throw InvalidParameter("M (paths) must be >= 1");
        const double cost = static_cast<double>(paths) * nt;
        if (cost > budget)
            throw BudgetExceeded("path budget exceeded: M * Nt = " + std::to_string(cost) + " > cap " + std::to_string(budget));
    }
};

/// One simulated path: states (Nt+1) x d, flows (Nt+1) x d x d (optional), increments Nt x d.
struct PathView {
    int d = 0;
    int nt = 0;
    double dt = 0.0;
    double t_start = 0.0;
    const double* states = nullptr;
    const double* flows = nullptr;
    const double* dW = nullptr;

    const double* state(int k) const { return states + static_cast<std::size_t>(k) * d; }
    const double* flow(int k) const { return flows + static_cast<std::size_t>(k) * d * d; }
    const double* increment(int k) const { return dW + static_cast<std::size_t>(k) * d; }
    double time(int k) const { return t_start + k * dt; }
};

struct PathBuffers {
    std::vector<double> states, flows, dW;
    void resize(int d, int nt, bool with_flow) {
        states.resize(static_cast<std::size_t>(nt + 1) * d);
        dW.resize(static_cast<std::size_t>(nt) * d);
        flows.resize(with_flow ? static_cast<std::size_t>(nt + 1) * d * d : 0);
    }
};

/// Euler-Maruyama for X and, when requested, the variational equation for J = dX/dx0.
/// Increments come from the stream of (seed, path) only.
inline PathView simulate_path(const CoefficientModel& model, const SimConfig& cfg, std::span<const double> x0,
                              std::size_t path, PathBuffers& buf) {
    const int d = model.dim();
    const int nt = cfg.nt;
    const double dt = cfg.dt();
    const double sdt = std::sqrt(dt);
    buf.resize(d, nt, cfg.with_flow);
    std::mt19937_64 rng(path_seed(cfg.seed, path));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < buf.dW.size(); ++k) buf.dW[k] = sdt * normal(rng);

    double* X = buf.states.data();
    for (int a = 0; a < d; ++a) X[a] = x0[a];
    double* J = cfg.with_flow ? buf.flows.data() : nullptr;
    if (J) {
        for (int i = 0; i < d * d; ++i) J[i] = 0.0;
        for (int i = 0; i < d; ++i) J[i * d + i] = 1.0;
    }
    const bool additive = model.additive_noise();
    CoeffSample c;
    for (int k = 0; k < nt; ++k) {
        const double t = cfg.t_start + k * dt;
        const double* x = X + k * d;
        double* xn = X + (k + 1) * d;
        const double* w = buf.dW.data() + k * d;
        model.eval(t, x, c, J != nullptr);
        for (int i = 0; i < d; ++i) {
            double v = x[i] + c.b[i] * dt;
            for (int j = 0; j < d; ++j) v += c.sigma[i * d + j] * w[j];
            if (!std::isfinite(v))
                throw BlowUp("non-finite state on path " + std::to_string(path) + " at step " + std::to_string(k + 1), path,
                             k + 1);
            xn[i] = v;
        }
        if (J) {
            const double* Jk = J + k * d * d;
            double* Jn = J + (k + 1) * d * d;
            for (int i = 0; i < d; ++i)
                for (int col = 0; col < d; ++col) {
                    double v = Jk[i * d + col];
                    for (int a = 0; a < d; ++a) v += c.db[i * d + a] * Jk[a * d + col] * dt;
                    if (!additive)
                        for (int j = 0; j < d; ++j)
                            for (int a = 0; a < d; ++a) v += c.dsigma[(i * d + j) * d + a] * Jk[a * d + col] * w[j];
                    Jn[i * d + col] = v;
                }
        }
    }
    return PathView{d, nt, dt, cfg.t_start, buf.states.data(), J, buf.dW.data()};
}

/// Streams M paths through kernel(path, view, out) with k outputs per path and
/// returns the M x k table in path order.
template <class Kernel>
std::vector<double> run_paths(const CoefficientModel& model, const SimConfig& cfg, int k, Kernel&& kernel) {
    cfg.validate(model.dim());
    std::vector<double> out(cfg.paths * static_cast<std::size_t>(k));
    parallel_ranges(cfg.paths, cfg.workers, [&](std::size_t begin, std::size_t end) {
        PathBuffers buf;
        for (std::size_t m = begin; m < end; ++m) {
            const PathView v = simulate_path(model, cfg, cfg.x0, m, buf);
            kernel(m, v, out.data() + m * k);
        }
    });
    return out;
}

/// Materialized ensemble; keeps the model so estimators can re-evaluate coefficients.
class PathEnsemble {
public:
    PathEnsemble(ModelPtr model, SimConfig cfg, std::vector<double> states, std::vector<double> flows,
                 std::vector<double> dW)
        : model_(std::move(model)), cfg_(std::move(cfg)), states_(std::move(states)), flows_(std::move(flows)),
          dW_(std::move(dW)) {}

    const CoefficientModel& model() const { return *model_; }
    const ModelPtr& model_ptr() const { return model_; }
    const SimConfig& config() const { return cfg_; }
    int dim() const { return model_->dim(); }
    std::size_t size() const { return cfg_.paths; }
    bool has_flow() const { return !flows_.empty(); }
    std::span<const double> states() const { return states_; }
    std::span<const double> flows() const { return flows_; }
    std::span<const double> increments() const { return dW_; }

    PathView view(std::size_t m) const {
        const int d = dim(), nt = cfg_.nt;
        const std::size_t sn = static_cast<std::size_t>(nt + 1) * d;
        return PathView{d,
                        nt,
                        cfg_.dt(),
                        cfg_.t_start,
                        states_.data() + m * sn,
                        has_flow() ? flows_.data() + m * sn * d : nullptr,
                        dW_.data() + m * static_cast<std::size_t>(nt) * d};
    }

    template <class Kernel>
    std::vector<double> map(int k, Kernel&& kernel) const {
        std::vector<double> out(size() * static_cast<std::size_t>(k));
        parallel_ranges(size(), cfg_.workers, [&](std::size_t begin, std::size_t end) {
            for (std::size_t m = begin; m < end; ++m) kernel(m, view(m), out.data() + m * k);
        });
        return out;
    }

private:
    ModelPtr model_;
    SimConfig cfg_;
    std::vector<double> states_, flows_, dW_;
};

/// Paths generated on demand; same interface as PathEnsemble::map without the memory.
class PathStream {
public:
    PathStream(ModelPtr model, SimConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
        cfg_.validate(model_->dim());
    }
    const CoefficientModel& model() const { return *model_; }
    const ModelPtr& model_ptr() const { return model_; }
    const SimConfig& config() const { return cfg_; }
    int dim() const { return model_->dim(); }
    std::size_t size() const { return cfg_.paths; }
    bool has_flow() const { return cfg_.with_flow; }

    template <class Kernel>
    std::vector<double> map(int k, Kernel&& kernel) const {
        return run_paths(*model_, cfg_, k, kernel);
    }

private:
    ModelPtr model_;
    SimConfig cfg_;
};

/// Largest number of doubles simulate() will materialize.
inline constexpr double kEnsembleCap = 4e8;

inline PathEnsemble simulate(ModelPtr model, SimConfig cfg) {
    const int d = model->dim();
    cfg.validate(d);
    const std::size_t sn = static_cast<std::size_t>(cfg.nt + 1) * d;
    const double cells = static_cast<double>(cfg.paths) * sn * (1.0 + (cfg.with_flow ? d : 0));
    if (cells > kEnsembleCap)
        throw BudgetExceeded("ensemble too large to materialize (" + std::to_string(cells) +
                             " values); use a streaming estimator");
    std::vector<double> states(cfg.paths * sn);
    std::vector<double> flows(cfg.with_flow ? cfg.paths * sn * d : 0);
    std::vector<double> dW(cfg.paths * static_cast<std::size_t>(cfg.nt) * d);
    parallel_ranges(cfg.paths, cfg.workers, [&](std::size_t begin, std::size_t end) {
        PathBuffers buf;
        for (std::size_t m = begin; m < end; ++m) {
            simulate_path(*model, cfg, cfg.x0, m, buf);
            std::copy(buf.states.begin(), buf.states.end(), states.begin() + m * sn);
            std::copy(buf.dW.begin(), buf.dW.end(), dW.begin() + m * cfg.nt * d);
            if (cfg.with_flow) std::copy(buf.flows.begin(), buf.flows.end(), flows.begin() + m * sn * d);
        }
    });
    return PathEnsemble(std::move(model), std::move(cfg), std::move(states), std::move(flows), std::move(dW));
}

// ---------------------------------------------------------------------------
// Reports

struct EstimatorReport {
    std::vector<double> value;
    /// Sample standard deviation / sqrt(M), per component.
    std::vector<double> se;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json table = nlohmann::json::array();

    double scalar() const { return value.at(0); }
    double scalar_se() const { return se.at(0); }
};

inline void to_json(nlohmann::json& j, const EstimatorReport& r) {
    j = nlohmann::json{{"value", r.value}, {"se", r.se}, {"samples", r.samples}, {"seed", r.seed}, {"params", r.params}};
    if (!r.table.empty()) j["table"] = r.table;
}

/// Mean and standard error of column c of an M x k table.
inline std::pair<double, double> mean_se(const std::vector<double>& tab, int k, int c) {
    const std::size_t M = tab.size() / k;
    const double mean = pairwise_sum(tab.data() + c, M, k) / M;
    std::vector<double> dev(M);
    for (std::size_t m = 0; m < M; ++m) dev[m] = (tab[m * k + c] - mean) * (tab[m * k + c] - mean);
    const double var = M > 1 ? pairwise_sum(dev.data(), M) / (M - 1) : 0.0;
    return {mean, std::sqrt(var / M)};
}

inline EstimatorReport summarize(const std::vector<double>& tab, int k, std::uint64_t seed) {
    EstimatorReport r;
    r.samples = tab.size() / k;
    r.seed = seed;
    for (int c = 0; c < k; ++c) {
        const auto [m, s] = mean_se(tab, k, c);
        r.value.push_back(m);
        r.se.push_back(s);
    }
    return r;
}

inline double combined_se(double a, double b) { return std::hypot(a, b); }

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

using ScalarField = std::function<double(double, const double*)>;

inline ScalarField field_of(const GridFn& f) {
    if (f.rank() != Rank::scalar) throw InvalidParameter("path functional needs a scalar GridFn");
    auto ip = std::make_shared<LatticeInterpolator>(f);
    return [ip](double t, const double* x) { return ip->scalar(t, x); };
}

namespace detail {

inline int step_of(double t, double dt, int nt, const char* what) {
    const long long k = std::llround(t / dt);
    if (std::abs(k * dt - t) > 1e-9 * std::max(1.0, std::abs(t)) || k < 0 || k > nt)
        throw InvalidParameter(std::string(what) + " must be a multiple of dt within [0, T]");
    return static_cast<int>(k);
}

/// Left-endpoint sum of f(t_k, X_k) dt over k0 <= k < k1.
inline double path_integral(const PathView& v, const ScalarField& f, int k0, int k1) {
    double s = 0.0;
    for (int k = k0; k < k1; ++k) s += f(v.time(k), v.state(k));
    return s * v.dt;
}

inline void require_nonnegative(const GridFn& f) {
    for (double x : f.values())
        if (x < 0.0) throw InvalidParameter("Krylov and Khasminskii functionals need f >= 0");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Krylov

/// E int_{t0}^{t1} f_i(s, X_s) ds / |||f_i|||_{L^p_q(t0, t1)} for every f_i, from one pass over the paths.
/// Window times are absolute.
template <class Source>
std::vector<EstimatorReport> krylov_battery(const Source& src, const std::vector<GridFn>& fs, NormParams np, double t0,
                                            double t1) {
    const auto& cfg = src.config();
    const int k0 = detail::step_of(t0 - cfg.t_start, cfg.dt(), cfg.nt, "window start t0");
    const int k1 = detail::step_of(t1 - cfg.t_start, cfg.dt(), cfg.nt, "window end t1");
    if (k1 <= k0) throw InvalidParameter("empty time window: t1 must exceed t0");
    np.t0 = t0;
    np.t1 = t1;
    const int K = static_cast<int>(fs.size());
    std::vector<double> norms;
    std::vector<ScalarField> fields;
    for (const auto& f : fs) {
        detail::require_nonnegative(f);
        norms.push_back(localized_norm(f, np).value);
        if (!(norms.back() > 0.0)) throw InvalidParameter("Krylov ratio needs |||f||| > 0 (zero norm)");
        fields.push_back(field_of(f));
    }
    const auto tab = src.map(K, [&](std::size_t, const PathView& v, double* out) {
        for (int i = 0; i < K; ++i) out[i] = detail::path_integral(v, fields[i], k0, k1);
    });
    std::vector<EstimatorReport> out;
    for (int i = 0; i < K; ++i) {
        const auto [m, se] = mean_se(tab, K, i);
        EstimatorReport r;
        r.samples = tab.size() / K;
        r.seed = cfg.seed;
        r.value = {m / norms[i]};
        r.se = {se / norms[i]};
        r.params = {{"t0", t0}, {"t1", t1}, {"norm", np}, {"f_norm", norms[i]}, {"integral", m}, {"integral_se", se}};
        out.push_back(std::move(r));
    }
    return out;
}

template <class Source>
EstimatorReport krylov_estimate(const Source& src, const GridFn& f, const NormParams& np, double t0, double t1) {
    return krylov_battery(src, std::vector<GridFn>{f}, np, t0, t1).front();
}

/// Scaling exponent of the short-window bound: 1 - d/(2p) - 1/q.
inline double krylov_theta(int d, double p, const Exponent& q) {
    return 1.0 - d / (2.0 * p) - (q.infinite ? 0.0 : 1.0 / q.value);
}

struct KrylovWindowRow {
    double delta = 0.0;
    double ratio = 0.0;
    double se = 0.0;
};

/// E int_{t0}^{t0+delta} f / (delta^theta |||f|||_{L^p_q(T)}) for each delta.
template <class Source>
std::vector<KrylovWindowRow> krylov_short_windows(const Source& src, const GridFn& f, NormParams np, double t0,
                                                  const std::vector<double>& deltas) {
    detail::require_nonnegative(f);
    const auto& cfg = src.config();
    const double theta = krylov_theta(src.dim(), np.p, np.q);
    if (!(theta > 0.0)) throw InvalidParameter("short-window Krylov needs d/p + 2/q < 2");
    np.t0 = 0.0;
    np.t1 = -1.0;
    const double norm = localized_norm(f, np).value;
    if (!(norm > 0.0)) throw InvalidParameter("Krylov ratio needs |||f||| > 0 (zero norm)");
    const int k0 = detail::step_of(t0 - cfg.t_start, cfg.dt(), cfg.nt, "window start t0");
    std::vector<int> k1;
    for (double dl : deltas) k1.push_back(detail::step_of(t0 + dl - cfg.t_start, cfg.dt(), cfg.nt, "window end t0 + delta"));
    const ScalarField fld = field_of(f);
    const int K = static_cast<int>(deltas.size());
    const auto tab = src.map(K, [&](std::size_t, const PathView& v, double* out) {
        for (int i = 0; i < K; ++i) out[i] = detail::path_integral(v, fld, k0, k1[i]);
    });
    std::vector<KrylovWindowRow> rows;
    for (int i = 0; i < K; ++i) {
        const auto [m, s] = mean_se(tab, K, i);
        const double den = std::pow(deltas[i], theta) * norm;
        rows.push_back({deltas[i], m / den, s / den});
    }
    return rows;
}

struct KrylovConditional {
    EstimatorReport unconditional;
    /// Ratios of chains restarted from sampled positions X_{t0}.
    std::vector<double> conditional;
    std::vector<double> conditional_se;
    double max_conditional = 0.0;
    /// max conditional / unconditional.
    double spread = 0.0;
};

/// Restarts the chain at `restarts` sampled positions X_{t0} and compares the
/// window ratio with the unconditional one.
inline KrylovConditional krylov_conditional(const ModelPtr& model, const SimConfig& cfg, const GridFn& f,
                                            const NormParams& np, double t0, double t1, std::size_t restarts,
                                            std::size_t paths_per_restart) {
    KrylovConditional out;
    out.unconditional = krylov_estimate(PathStream(model, cfg), f, np, t0, t1);
    const int d = model->dim();
    const int k0 = detail::step_of(t0 - cfg.t_start, cfg.dt(), cfg.nt, "window start t0");
    SimConfig first = cfg;
    first.paths = restarts;
    const auto starts = PathStream(model, first).map(d, [&](std::size_t, const PathView& v, double* o) {
        for (int a = 0; a < d; ++a) o[a] = v.state(k0)[a];
    });
    for (std::size_t i = 0; i < restarts; ++i) {
        SimConfig c = cfg;
        c.x0.assign(starts.begin() + i * d, starts.begin() + (i + 1) * d);
        c.t_start = t0;
        c.T = t1 - t0;
        c.nt = detail::step_of(t1 - t0, cfg.dt(), cfg.nt, "window length");
        c.paths = paths_per_restart;
        c.seed = splitmix64(cfg.seed + 0x1000 + i);
        const auto r = krylov_estimate(PathStream(model, c), f, np, t0, t1);
        out.conditional.push_back(r.scalar());
        out.conditional_se.push_back(r.scalar_se());
        out.max_conditional = std::max(out.max_conditional, r.scalar());
    }
    out.spread = out.max_conditional / out.unconditional.scalar();
    return out;
}

// ---------------------------------------------------------------------------
// Khasminskii

struct KhasminskiiReport {
    EstimatorReport report;
    double log_value = 0.0;
    /// exp(log_value) overflows double: value and se are reported as infinity.
    bool exceeds_budget = false;
};

/// E exp(gamma int_0^T f(s, X_s) ds), accumulated in log space.
template <class Source>
KhasminskiiReport khasminskii_estimate(const Source& src, const ScalarField& f, double gamma) {
    const auto& cfg = src.config();
    const auto tab = src.map(1, [&](std::size_t, const PathView& v, double* out) {
        out[0] = gamma * detail::path_integral(v, f, 0, v.nt);
    });
    const std::size_t M = tab.size();
    const double amax = *std::max_element(tab.begin(), tab.end());
    std::vector<double> e(M);
    for (std::size_t m = 0; m < M; ++m) e[m] = std::exp(tab[m] - amax);
    const auto [mean, se] = mean_se(e, 1, 0);
    KhasminskiiReport r;
    r.log_value = amax + std::log(mean);
    r.report.samples = M;
    r.report.seed = cfg.seed;
    r.report.params = {{"gamma", gamma}};
    const double scale = std::exp(amax);
    if (!std::isfinite(scale) || !std::isfinite(scale * mean)) {
        r.exceeds_budget = true;
        r.report.value = {std::numeric_limits<double>::infinity()};
        r.report.se = {std::numeric_limits<double>::infinity()};
    } else {
        r.report.value = {scale * mean};
        r.report.se = {scale * se};
    }
    r.report.params["log_value"] = r.log_value;
    r.report.params["exceeds_budget"] = r.exceeds_budget;
    return r;
}

template <class Source>
KhasminskiiReport khasminskii_estimate(const Source& src, const GridFn& f, double gamma) {
    detail::require_nonnegative(f);
    return khasminskii_estimate(src, field_of(f), gamma);
}

// ---------------------------------------------------------------------------
// Gradient estimators

using TestFunction = std::function<double(const double*)>;

namespace detail {

using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor, kMaxDim, kMaxDim>;

inline SmallMat sigma_inverse(const CoeffSample& c, int d) {
    SmallMat s(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) s(i, j) = c.sigma[i * d + j];
    Eigen::FullPivLU<SmallMat> lu(s);
    if (!lu.isInvertible() || lu.rcond() < 1e-12)
        throw CertificateViolation("singular sigma sample in the gradient weight");
    return lu.inverse();
}

} // namespace detail

namespace detail {

/// Per-path gradient weight phi(X_t) V / t, written to out[0..d).
inline void gradient_weight(const CoefficientModel& model, const PathView& v, int kt, double t, const TestFunction& phi,
                            double* out) {
    const int d = v.d;
    const bool additive = model.additive_noise();
    double V[kMaxDim] = {0, 0, 0};
    double P[kMaxDim * kMaxDim];
    CoeffSample c;
    SmallMat inv;
    for (int k = 0; k < kt; ++k) {
        if (k == 0 || !additive) {
            model.eval(v.time(k), v.state(k), c, !additive);
            inv = sigma_inverse(c, d);
        }
        const double* J = v.flow(k);
        if (additive) {
            std::copy(v.flow(k + 1), v.flow(k + 1) + d * d, P);
        } else {
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    double m = J[i * d + j];
                    for (int a = 0; a < d; ++a) m += c.db[i * d + a] * J[a * d + j] * v.dt;
                    P[i * d + j] = m;
                }
        }
        const double* w = v.increment(k);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double m = 0.0;
                for (int a = 0; a < d; ++a) m += inv(i, a) * P[a * d + j];
                V[j] += m * w[i];
            }
    }
    const double ph = phi(v.state(kt));
    for (int j = 0; j < d; ++j) out[j] = ph * V[j] / t;
}

/// Per-path central difference (phi(X_t(x0 + delta e_j)) - phi(X_t(x0 - delta e_j))) / (2 delta).
inline void finite_difference_sample(const CoefficientModel& model, const SimConfig& c, std::size_t m, int kt,
                                     const TestFunction& phi, double delta, PathBuffers& buf, double* out) {
    const int d = model.dim();
    std::vector<double> x(c.x0);
    for (int j = 0; j < d; ++j) {
        x[j] = c.x0[j] + delta;
        const double up = phi(simulate_path(model, c, x, m, buf).state(kt));
        x[j] = c.x0[j] - delta;
        const double dn = phi(simulate_path(model, c, x, m, buf).state(kt));
        x[j] = c.x0[j];
        out[j] = (up - dn) / (2.0 * delta);
    }
}

} // namespace detail

/// grad E phi(X_t(x0)) = (1/t) E[phi(X_t) V], V_j = sum_k sum_i [sigma(t_k, X_k)^{-1} P_k]_{ij} dW_k^i.
///
/// P_k = (I + Db(t_k, X_k) dt) J_k is known at t_k. Under additive noise it equals J_{k+1}, and
/// Gaussian integration by parts makes the weight exact for the Euler chain.
template <class Source>
EstimatorReport bel_gradient(const Source& src, const TestFunction& phi, double t) {
    if (!src.has_flow()) throw InvalidParameter("the gradient weight needs flow matrices (with_flow)");
    const auto& cfg = src.config();
    if (!(t > 0.0)) throw InvalidParameter("gradient time t must be > 0");
    const int kt = detail::step_of(t, cfg.dt(), cfg.nt, "gradient time t");
    const int d = src.dim();
    const CoefficientModel& model = src.model();
    const auto tab = src.map(d, [&](std::size_t, const PathView& v, double* out) {
        detail::gradient_weight(model, v, kt, t, phi, out);
    });
    EstimatorReport r = summarize(tab, d, cfg.seed);
    r.params = {{"t", t}, {"estimator", "weight"}};
    return r;
}

/// Central finite difference of x0 -> E phi(X_t(x0)) with common random numbers.
inline EstimatorReport finite_difference_gradient(const ModelPtr& model, const SimConfig& cfg, const TestFunction& phi,
                                                  double t, double delta) {
    if (!(delta > 0.0)) throw InvalidParameter("finite-difference step must be > 0");
    const int kt = detail::step_of(t, cfg.dt(), cfg.nt, "gradient time t");
    const int d = model->dim();
    SimConfig c = cfg;
    c.with_flow = false;
    c.validate(d);
    std::vector<double> tab(c.paths * d);
    parallel_ranges(c.paths, c.workers, [&](std::size_t begin, std::size_t end) {
        PathBuffers buf;
        for (std::size_t m = begin; m < end; ++m)
            detail::finite_difference_sample(*model, c, m, kt, phi, delta, buf, tab.data() + m * d);
    });
    EstimatorReport r = summarize(tab, d, c.seed);
    r.params = {{"t", t}, {"estimator", "finite_difference"}, {"delta", delta}};
    return r;
}

struct GradientComparison {
    EstimatorReport weight;
    EstimatorReport finite_difference;
    /// weight - finite difference per component.
    std::vector<double> difference;
    /// hypot of the two standard errors, per component.
    std::vector<double> combined_se;
    /// Standard error of the per-path differences; includes the covariance from the shared noise.
    std::vector<double> paired_se;
    /// max_j |difference_j| / combined_se_j.
    double max_z = 0.0;
    /// max_j |difference_j| / paired_se_j.
    double max_paired_z = 0.0;
};

/// Weight and finite-difference estimates on the same paths.
inline GradientComparison bel_versus_finite_difference(const ModelPtr& model, SimConfig cfg, const TestFunction& phi,
                                                       double t, double delta) {
    if (!(delta > 0.0)) throw InvalidParameter("finite-difference step must be > 0");
    if (!(t > 0.0)) throw InvalidParameter("gradient time t must be > 0");
    cfg.with_flow = true;
    const int d = model->dim();
    cfg.validate(d);
    const int kt = detail::step_of(t, cfg.dt(), cfg.nt, "gradient time t");
    SimConfig plain = cfg;
    plain.with_flow = false;
    // Per path: weight (d), finite difference (d), difference (d).
    const int cols = 3 * d;
    std::vector<double> tab(cfg.paths * cols);
    parallel_ranges(cfg.paths, cfg.workers, [&](std::size_t begin, std::size_t end) {
        PathBuffers buf;
        for (std::size_t m = begin; m < end; ++m) {
            double* row = tab.data() + m * cols;
            const PathView v = simulate_path(*model, cfg, cfg.x0, m, buf);
            detail::gradient_weight(*model, v, kt, t, phi, row);
            detail::finite_difference_sample(*model, plain, m, kt, phi, delta, buf, row + d);
            for (int j = 0; j < d; ++j) row[2 * d + j] = row[j] - row[d + j];
        }
    });
    const EstimatorReport all = summarize(tab, cols, cfg.seed);
    GradientComparison g;
    g.weight.samples = g.finite_difference.samples = all.samples;
    g.weight.seed = g.finite_difference.seed = cfg.seed;
    g.weight.value.assign(all.value.begin(), all.value.begin() + d);
    g.weight.se.assign(all.se.begin(), all.se.begin() + d);
    g.finite_difference.value.assign(all.value.begin() + d, all.value.begin() + 2 * d);
    g.finite_difference.se.assign(all.se.begin() + d, all.se.begin() + 2 * d);
    g.difference.assign(all.value.begin() + 2 * d, all.value.end());
    g.paired_se.assign(all.se.begin() + 2 * d, all.se.end());
    g.weight.params = {{"t", t}, {"estimator", "weight"}};
    g.finite_difference.params = {{"t", t}, {"estimator", "finite_difference"}, {"delta", delta}};
    for (int j = 0; j < d; ++j) {
        g.combined_se.push_back(combined_se(g.weight.se[j], g.finite_difference.se[j]));
        g.max_z = std::max(g.max_z, std::abs(g.difference[j]) / g.combined_se[j]);
        g.max_paired_z = std::max(g.max_paired_z, std::abs(g.difference[j]) / g.paired_se[j]);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Flow moments and contraction

struct LevelModel {
    int n = 0;
    ModelPtr model;
};

struct FlowSurveyRow {
    int n = 0;
    double p = 0.0;
    /// sup over starting points of E sup_t |J_t|_F^p.
    double value = 0.0;
    double se = 0.0;
    std::vector<double> argmax_x0;
};

inline void to_json(nlohmann::json& j, const FlowSurveyRow& r) {
    j = nlohmann::json{{"n", r.n}, {"p", r.p}, {"value", r.value}, {"se", r.se}, {"argmax_x0", r.argmax_x0}};
}

/// E sup_{t <= T} |J_t(x0)|_F^p for each level, starting point and p; the sup over x0 is reported per (n, p).
inline std::vector<FlowSurveyRow> flow_moment_survey(const std::vector<LevelModel>& levels,
                                                     const std::vector<std::vector<double>>& x0s, SimConfig cfg,
                                                     const std::vector<double>& p_list) {
    cfg.with_flow = true;
    std::vector<FlowSurveyRow> rows;
    const int P = static_cast<int>(p_list.size());
    for (const auto& lv : levels) {
        std::vector<FlowSurveyRow> best(P);
        for (int i = 0; i < P; ++i) {
            best[i].n = lv.n;
            best[i].p = p_list[i];
            best[i].value = -1.0;
        }
        for (const auto& x0 : x0s) {
            SimConfig c = cfg;
            c.x0 = x0;
            const int d = lv.model->dim();
            const auto tab = run_paths(*lv.model, c, P, [&](std::size_t, const PathView& v, double* out) {
                double sup = 0.0;
                for (int k = 0; k <= v.nt; ++k) {
                    const double* J = v.flow(k);
                    double s = 0.0;
                    for (int i = 0; i < d * d; ++i) s += J[i] * J[i];
                    sup = std::max(sup, s);
                }
                for (int i = 0; i < P; ++i) out[i] = std::pow(sup, p_list[i] / 2.0);
            });
            for (int i = 0; i < P; ++i) {
                const auto [m, s] = mean_se(tab, P, i);
                if (m > best[i].value) {
                    best[i].value = m;
                    best[i].se = s;
                    best[i].argmax_x0 = x0;
                }
            }
        }
        rows.insert(rows.end(), best.begin(), best.end());
    }
    return rows;
}

/// E sup_{t <= T} |Y1_t - Y2_t|^p / |y1 - y2|^p with shared noise per path.
inline EstimatorReport pathwise_contraction(const ModelPtr& model, const std::vector<double>& y1,
                                            const std::vector<double>& y2, SimConfig cfg, double p) {
    const int d = model->dim();
    double gap = 0.0;
    for (int a = 0; a < d; ++a) gap += (y1.at(a) - y2.at(a)) * (y1.at(a) - y2.at(a));
    gap = std::sqrt(gap);
    if (!(gap > 0.0)) throw InvalidParameter("contraction ratio needs y1 != y2 (degenerate ratio)");
    cfg.with_flow = false;
    cfg.x0 = y1;
    cfg.validate(d);
    std::vector<double> tab(cfg.paths);
    parallel_ranges(cfg.paths, cfg.workers, [&](std::size_t begin, std::size_t end) {
        PathBuffers b1, b2;
        for (std::size_t m = begin; m < end; ++m) {
            const PathView v1 = simulate_path(*model, cfg, y1, m, b1);
            const PathView v2 = simulate_path(*model, cfg, y2, m, b2);
            double sup = 0.0;
            for (int k = 0; k <= cfg.nt; ++k) {
                double s = 0.0;
                for (int a = 0; a < d; ++a) {
                    const double e = v1.state(k)[a] - v2.state(k)[a];
                    s += e * e;
                }
                sup = std::max(sup, s);
            }
            tab[m] = std::pow(std::sqrt(sup) / gap, p);
        }
    });
    EstimatorReport r = summarize(tab, 1, cfg.seed);
    r.params = {{"p", p}, {"gap", gap}};
    return r;
}

// ---------------------------------------------------------------------------
// Tightness and weak agreement

struct TightnessRow {
    double delta = 0.0;
    double value = 0.0;
    double se = 0.0;
};

/// E sup_{s} |X_{s+delta} - X_s|^{1/2} over the step grid, for each delta.
template <class Source>
std::vector<TightnessRow> tightness_modulus(const Source& src, const std::vector<double>& deltas) {
    const auto& cfg = src.config();
    std::vector<int> lags;
    for (double dl : deltas) {
        if (!(dl > 0.0) || dl >= cfg.T) throw InvalidParameter("tightness lag delta must lie in (0, T)");
        lags.push_back(detail::step_of(dl, cfg.dt(), cfg.nt, "tightness lag delta"));
    }
    const int K = static_cast<int>(lags.size());
    const int d = src.dim();
    const auto tab = src.map(K, [&](std::size_t, const PathView& v, double* out) {
        for (int i = 0; i < K; ++i) {
            double sup = 0.0;
            for (int k = 0; k + lags[i] <= v.nt; ++k) {
                double s = 0.0;
                for (int a = 0; a < d; ++a) {
                    const double e = v.state(k + lags[i])[a] - v.state(k)[a];
                    s += e * e;
                }
                sup = std::max(sup, s);
            }
            out[i] = std::pow(sup, 0.25);
        }
    });
    std::vector<TightnessRow> rows;
    for (int i = 0; i < K; ++i) {
        const auto [m, s] = mean_se(tab, K, i);
        rows.push_back({deltas[i], m, s});
    }
    return rows;
}

struct NamedField {
    std::string id;
    ScalarField f;
};

struct AgreementRow {
    std::string id;
    double first = 0.0, first_se = 0.0;
    double second = 0.0, second_se = 0.0;
    double difference = 0.0;
    double combined_se = 0.0;
    /// Standard error of the per-path differences when both samples share noise, else 0.
    double paired_se = 0.0;
    bool within(double bands) const { return std::abs(difference) <= bands * combined_se; }
};

inline void to_json(nlohmann::json& j, const AgreementRow& r) {
    j = nlohmann::json{{"f", r.id},           {"first", r.first},           {"first_se", r.first_se},
                       {"second", r.second},   {"second_se", r.second_se},   {"difference", r.difference},
                       {"combined_se", r.combined_se}};
    if (r.paired_se > 0.0) j["paired_se"] = r.paired_se;
}

/// Seed of the second, independent ensemble in weak_agreement.
inline std::uint64_t second_stream_seed(std::uint64_t seed) { return splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL); }

/// E int_0^T f(s, X^(1)_s) ds versus the same under a second model, with independent noise.
inline std::vector<AgreementRow> weak_agreement(const ModelPtr& first, const ModelPtr& second,
                                                const std::vector<NamedField>& battery, const SimConfig& cfg) {
    const int K = static_cast<int>(battery.size());
    auto kernel = [&](std::size_t, const PathView& v, double* out) {
        for (int i = 0; i < K; ++i) out[i] = detail::path_integral(v, battery[i].f, 0, v.nt);
    };
    SimConfig c2 = cfg;
    c2.seed = second_stream_seed(cfg.seed);
    const auto t1 = run_paths(*first, cfg, K, kernel);
    const auto t2 = run_paths(*second, c2, K, kernel);
    std::vector<AgreementRow> rows;
    for (int i = 0; i < K; ++i) {
        AgreementRow r;
        r.id = battery[i].id;
        std::tie(r.first, r.first_se) = mean_se(t1, K, i);
        std::tie(r.second, r.second_se) = mean_se(t2, K, i);
        r.difference = r.first - r.second;
        r.combined_se = combined_se(r.first_se, r.second_se);
        rows.push_back(r);
    }
    return rows;
}

/// Eight smooth nonnegative bumps around `centre` with radius `width`, sampled on g.
inline std::vector<GridFn> bump_battery(const Grid& g, std::span<const double> centre, double width) {
    std::vector<GridFn> out;
    for (int i = 0; i < 8; ++i) {
        const double ang = 2.0 * std::numbers::pi * i / 8.0;
        const double off = (i % 2 == 0 ? 0.5 : 1.0) * width;
        out.push_back(sample_scalar(g, [&](std::span<const double> x) {
            double r2 = 0.0;
            for (int a = 0; a < g.dim; ++a) {
                double c = centre[a];
                if (a == 0) c += off * std::cos(ang);
                if (a == 1) c += off * std::sin(ang);
                const double e = g.wrap_displacement(x[a] - c);
                r2 += e * e;
            }
            return std::exp(-r2 / (width * width * (0.5 + 0.1 * i)));
        }));
    }
    return out;
}

} // namespace zvlab
