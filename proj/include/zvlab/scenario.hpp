#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zvlab/acceptance.hpp"
#include "zvlab/families.hpp"
#include "zvlab/gridfn_io.hpp"
#include "zvlab/norms.hpp"
#include "zvlab/pde.hpp"
#include "zvlab/sde.hpp"
#include "zvlab/zvonkin.hpp"

namespace zvlab {

/// Scenario files are JSON objects:
///
///   { "name": "...", "seed": 1, "workers": 1, "out": "dir",
///     "budget": { "max_path_steps": 1e9, "max_lattice_cells": 5e7 },
///     "operations": [ { "op": "bel", "id": "grad", ..., "expect": { "grad_1": { "equals": 1, "within_se": 3 } } } ] }
///
/// Each operation produces named scalar metrics; "expect" bands are checked against them.

inline constexpr std::string_view kReportSchema = "report v1";

inline const std::vector<std::string>& operation_names() {
    static const std::vector<std::string> names{"norm",      "pde-solve", "maxreg", "lambda-sweep", "duality",
                                                "zvonkin",   "conjugacy", "simulate", "krylov",     "khasminskii",
                                                "bel",       "flow",      "contraction", "tightness", "weak-agree",
                                                "acceptance"};
    return names;
}

struct Band {
    std::string metric;
    std::optional<double> min, max, equals;
    double tol = 0.0;
    /// With `equals`: |value - equals| <= within_se * <metric>_se.
    double within_se = 0.0;
};

inline void to_json(nlohmann::json& j, const Band& b) {
    j = nlohmann::json::object();
    if (b.min) j["min"] = *b.min;
    if (b.max) j["max"] = *b.max;
    if (b.equals) j["equals"] = *b.equals;
    if (b.tol > 0.0) j["tol"] = b.tol;
    if (b.within_se > 0.0) j["within_se"] = b.within_se;
}

struct Budget {
    double max_path_steps = 1e9;
    double max_lattice_cells = 5e7;
};

/// One declared operation with every default filled in.
struct OpSpec {
    std::string id;
    std::string op;
    std::uint64_t seed = 0;
    int workers = 1;

    Family family = Family::A;
    FamilyParams fparams;
    Mollifier mollifier{MollifierShape::gaussian_truncated, 0.125};
    Mollifier second{MollifierShape::polynomial_bump, 0.125};

    std::vector<double> x0;
    double T = 1.0;
    int steps = 128;
    std::size_t paths = 1000;

    Grid grid;
    NormParams norm;

    std::string function;
    std::string drift = "none";
    std::string file;
    double constant = 1.0;
    double diffusion = 1.0;
    double gamma = 1.0;
    double t = 1.0;
    double delta = 0.0;
    double lambda = 1.0;
    double p = 2.0;
    std::vector<double> lambdas, deltas, ps, y1, y2;
    std::vector<int> levels, ladder, criteria;
    std::vector<std::vector<double>> x0s;
    bool dump = false;
    std::vector<Band> expect;
};

struct Scenario {
    std::string name;
    std::string out;
    std::uint64_t seed = 1;
    int workers = 1;
    Budget budget;
    std::vector<OpSpec> ops;
    nlohmann::json canonical;
    std::string hash;
};

struct Validation {
    std::optional<Scenario> scenario;
    std::vector<std::string> violations;
    bool ok() const { return scenario.has_value(); }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Sorted keys, no insignificant whitespace.
inline std::string canonical_text(const nlohmann::json& j) { return j.dump(); }

inline std::string config_hash(const nlohmann::json& j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(canonical_text(j))));
    return buf;
}

namespace detail {

/// Reads typed keys from one JSON object, collecting violations and flagging unknown keys.
class ParamReader {
public:
    ParamReader(const nlohmann::json& obj, std::string where, std::vector<std::string>& out)
        : obj_(obj), where_(std::move(where)), out_(out) {}

    void fail(const std::string& msg) { out_.push_back(where_ + ": " + msg); }

    bool has(const std::string& k) {
        used_.insert(k);
        return obj_.contains(k);
    }

    double number(const std::string& k, double def) {
        if (!has(k)) return def;
        const auto& v = obj_[k];
        if (!v.is_number()) {
            fail("'" + k + "' must be a number");
            return def;
        }
        return v.get<double>();
    }

    long long integer(const std::string& k, long long def) {
        if (!has(k)) return def;
        const auto& v = obj_[k];
        if (!v.is_number() || v.get<double>() != std::floor(v.get<double>()) || std::abs(v.get<double>()) > 9e15) {
            fail("'" + k + "' must be an integer");
            return def;
        }
        return static_cast<long long>(v.get<double>());
    }

    std::string text(const std::string& k, const std::string& def) {
        if (!has(k)) return def;
        if (!obj_[k].is_string()) {
            fail("'" + k + "' must be a string");
            return def;
        }
        return obj_[k].get<std::string>();
    }

    bool flag(const std::string& k, bool def) {
        if (!has(k)) return def;
        if (!obj_[k].is_boolean()) {
            fail("'" + k + "' must be true or false");
            return def;
        }
        return obj_[k].get<bool>();
    }

    std::vector<double> numbers(const std::string& k, std::vector<double> def) {
        if (!has(k)) return def;
        const auto& v = obj_[k];
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const auto& e) { return e.is_number(); })) {
            fail("'" + k + "' must be an array of numbers");
            return def;
        }
        return v.get<std::vector<double>>();
    }

    std::vector<int> integers(const std::string& k, std::vector<int> def) {
        const auto v = numbers(k, {});
        if (v.empty()) return def;
        std::vector<int> out;
        for (double x : v) {
            if (x != std::floor(x)) {
                fail("'" + k + "' must be an array of integers");
                return def;
            }
            out.push_back(static_cast<int>(x));
        }
        return out;
    }

    std::vector<std::vector<double>> points(const std::string& k, std::vector<std::vector<double>> def) {
        if (!has(k)) return def;
        const auto& v = obj_[k];
        std::vector<std::vector<double>> out;
        if (v.is_array()) {
            for (const auto& e : v) {
                if (!e.is_array() || !std::all_of(e.begin(), e.end(), [](const auto& c) { return c.is_number(); })) {
                    out.clear();
                    break;
                }
                out.push_back(e.get<std::vector<double>>());
            }
        }
        if (out.empty()) {
            fail("'" + k + "' must be a non-empty array of points");
            return def;
        }
        return out;
    }

    Exponent exponent(const std::string& k, Exponent def) {
        if (!has(k)) return def;
        try {
            return exponent_from_json(obj_[k]);
        } catch (const Error& e) {
            fail("'" + k + "': " + e.what());
            return def;
        }
    }

    const nlohmann::json* object(const std::string& k) {
        if (!has(k)) return nullptr;
        if (!obj_[k].is_object()) {
            fail("'" + k + "' must be an object");
            return nullptr;
        }
        return &obj_[k];
    }

    const std::string& where() const { return where_; }
    std::vector<std::string>& sink() { return out_; }

    void finish() {
        for (const auto& [k, v] : obj_.items())
            if (!used_.count(k)) fail("unknown key '" + k + "'");
    }

private:
    const nlohmann::json& obj_;
    std::string where_;
    std::vector<std::string>& out_;
    std::set<std::string> used_;
};

inline std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline bool uses_paths(const std::string& op) {
    static const std::set<std::string> s{"conjugacy", "simulate", "krylov",      "khasminskii", "bel",
                                         "flow",      "contraction", "tightness", "weak-agree"};
    return s.count(op) > 0;
}

inline bool uses_lattice(const std::string& op) {
    static const std::set<std::string> s{"norm",      "pde-solve", "maxreg", "lambda-sweep", "zvonkin", "conjugacy",
                                         "krylov", "khasminskii", "weak-agree"};
    return s.count(op) > 0;
}

inline bool singular(Family f) { return f == Family::C || f == Family::D || f == Family::E; }

/// Lattice defaults: the desk scale, L = 2.5 and Nx = 32 for family D, half-cell shift for
/// transforms of singular drifts, static (Nt = 1) grids for integrands.
inline Grid default_grid(const OpSpec& s) {
    const int d = family_dim(s.family, s.fparams);
    Grid g;
    g.dim = d;
    g.half_width = s.family == Family::D ? 2.5 : std::numbers::pi;
    g.nx = s.family == Family::D ? 32 : 64;
    g.horizon = s.T;
    g.nt = 128;
    if (s.op == "zvonkin" || s.op == "conjugacy") {
        if (s.drift == "smooth") {
            g.dim = 2;
            g.nt = 256;
        } else {
            g.nx = s.family == Family::D ? 32 : 128;
            g.nt = s.family == Family::D ? 64 : 128;
            g.shift = 0.5;
        }
    }
    if (s.op == "norm" || s.op == "krylov" || s.op == "khasminskii" || s.op == "weak-agree") g.nt = 1;
    if (s.op == "pde-solve" || s.op == "maxreg" || s.op == "lambda-sweep") g.dim = s.drift == "family" ? d : 2;
    if (s.op == "pde-solve" && s.drift == "family") g.shift = 0.5;
    return g;
}

inline void read_grid(ParamReader& r, OpSpec& s) {
    Grid g = default_grid(s);
    if (const auto* o = r.object("grid")) {
        ParamReader gr(*o, r.where() + " grid", r.sink());
        g.dim = static_cast<int>(gr.integer("d", g.dim));
        g.half_width = gr.number("L", g.half_width);
        g.nx = static_cast<int>(gr.integer("nx", g.nx));
        g.nt = static_cast<int>(gr.integer("nt", g.nt));
        g.horizon = gr.number("T", g.horizon);
        g.shift = gr.number("shift", g.shift);
        gr.finish();
    }
    try {
        s.grid = build_grid(g.dim, g.half_width, g.nx, g.horizon, g.nt, g.shift);
    } catch (const Error& e) {
        r.fail(std::string("grid: ") + e.what());
        s.grid = default_grid(s);
    }
}

inline void read_norm(ParamReader& r, OpSpec& s) {
    NormParams& np = s.norm;
    np.alpha = r.number("alpha", np.alpha);
    np.p = r.number("p", np.p);
    np.q = r.exponent("q", np.q);
    np.r = r.number("r", np.r);
    np.t0 = r.number("t0", np.t0);
    np.t1 = r.number("t1", np.t1);
    if (!(np.p > 1.0) || !std::isfinite(np.p)) r.fail("p must exceed 1 and be finite");
    if (!np.q.infinite && !(np.q.value > 1.0)) r.fail("q must exceed 1");
    if (!(np.r > 0.0)) r.fail("localization radius r must be > 0");
    if (np.r >= s.grid.half_width / 2.0) r.fail("localization radius r must be < L/2");
    if (np.t0 < 0.0) r.fail("time window start t0 must be >= 0");
    if (!(np.end_time(s.grid) > np.t0)) r.fail("empty time window: t1 must exceed t0");
}

inline void read_expect(ParamReader& r, OpSpec& s) {
    const auto* o = r.object("expect");
    if (!o) return;
    for (const auto& [metric, spec] : o->items()) {
        if (!spec.is_object()) {
            r.fail("expect." + metric + " must be an object");
            continue;
        }
        ParamReader br(spec, r.where() + " expect." + metric, r.sink());
        Band b;
        b.metric = metric;
        if (br.has("min")) b.min = br.number("min", 0.0);
        if (br.has("max")) b.max = br.number("max", 0.0);
        if (br.has("equals")) b.equals = br.number("equals", 0.0);
        b.tol = br.number("tol", 0.0);
        b.within_se = br.number("within_se", 0.0);
        br.finish();
        if (!b.min && !b.max && !b.equals) br.fail("a band needs min, max or equals");
        if ((b.tol != 0.0 || b.within_se != 0.0) && !b.equals) br.fail("tol and within_se need equals");
        if (b.tol < 0.0 || b.within_se < 0.0) br.fail("tol and within_se must be >= 0");
        s.expect.push_back(b);
    }
}

inline void read_model(ParamReader& r, OpSpec& s) {
    try {
        s.family = family_from_string(r.text("family", "A"));
    } catch (const Error& e) {
        r.fail(e.what());
    }
    s.fparams = default_params(s.family);
    if (s.family == Family::A || s.family == Family::B) s.fparams.dim = static_cast<int>(r.integer("dim", 2));
    if (s.fparams.dim < 1 || s.fparams.dim > kMaxDim) r.fail("dim must lie in [1, " + std::to_string(kMaxDim) + "]");
    if (s.family == Family::B) s.fparams.kappa = r.number("kappa", s.fparams.kappa);
    if (s.family != Family::A && s.family != Family::B) s.fparams.c = r.number("strength", s.fparams.c);
    const auto shape = r.text("mollifier", "gaussian");
    const auto shape2 = r.text("second_mollifier", "bump");
    try {
        s.mollifier.shape = mollifier_shape_from_string(shape);
        s.second.shape = mollifier_shape_from_string(shape2);
    } catch (const Error& e) {
        r.fail(e.what());
    }
    const bool has_level = r.has("level"), has_eps = r.has("mollify_eps");
    if (has_level && has_eps) r.fail("give either level or mollify_eps, not both");
    const long long level = r.integer("level", 8);
    if (level < 1) r.fail("mollification level n must be >= 1");
    s.mollifier.width = has_eps ? r.number("mollify_eps", 0.125) : 1.0 / std::max<long long>(level, 1);
    if (!(s.mollifier.width > 0.0)) r.fail("mollify_eps must be > 0");
    s.second.width = r.number("second_eps", s.mollifier.width);
    if (!(s.second.width > 0.0)) r.fail("second_eps must be > 0");
}

inline void read_paths(ParamReader& r, OpSpec& s, const Budget& budget) {
    const int d = family_dim(s.family, s.fparams);
    std::vector<double> def(d, 0.0);
    def[0] = 0.3;
    s.x0 = r.numbers("x0", def);
    if (static_cast<int>(s.x0.size()) != d)
        r.fail("x0 has " + std::to_string(s.x0.size()) + " entries, the model has d = " + std::to_string(d));
    s.T = r.number("T", 1.0);
    if (!(s.T > 0.0)) r.fail("horizon T must be > 0");
    s.steps = static_cast<int>(r.integer("steps", 128));
    if (s.steps < 1) r.fail("steps (Nt) must be >= 1");
    const long long M = r.integer("paths", 1000);
    if (M < 1) r.fail("paths (M) must be >= 1");
    s.paths = static_cast<std::size_t>(std::max<long long>(M, 1));
    const double cost = static_cast<double>(s.paths) * s.steps;
    if (cost > budget.max_path_steps)
        r.fail("path budget exceeded: M * Nt = " + num(cost) + " > cap max_path_steps = " + num(budget.max_path_steps));
}

inline void check_cells(ParamReader& r, const Grid& g, const Budget& budget) {
    const double cells = static_cast<double>(g.points()) * (g.nt + 1);
    if (cells > budget.max_lattice_cells)
        r.fail("lattice budget exceeded: Nx^d * (Nt + 1) = " + num(cells) + " > cap max_lattice_cells = " +
               num(budget.max_lattice_cells));
}

inline void require_choice(ParamReader& r, const std::string& key, const std::string& v,
                           std::initializer_list<const char*> allowed) {
    for (const char* a : allowed)
        if (v == a) return;
    std::string list;
    for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    r.fail("'" + key + "' must be one of " + list + " (got '" + v + "')");
}

inline void read_op(ParamReader& r, OpSpec& s, const Budget& budget) {
    const std::string& op = s.op;
    const bool pathy = uses_paths(op);
    if (op != "maxreg" && op != "lambda-sweep" && op != "duality" && op != "acceptance") read_model(r, s);
    if (pathy) read_paths(r, s, budget);
    if (op == "zvonkin" || op == "conjugacy" || op == "pde-solve") {
        s.drift = r.text("drift", op == "pde-solve" ? "none" : "family");
        if (op == "pde-solve")
            require_choice(r, "drift", s.drift, {"none", "smooth", "family"});
        else
            require_choice(r, "drift", s.drift, {"smooth", "family"});
        if (s.drift == "family" && s.family != Family::C && s.family != Family::D)
            r.fail("drift 'family' needs family C or D");
    }
    if (uses_lattice(op)) {
        read_grid(r, s);
        check_cells(r, s.grid, budget);
    }

    if (op == "norm") {
        read_norm(r, s);
        s.function = r.text("function", "one");
        require_choice(r, "function", s.function, {"one", "constant", "sin_x1", "bump", "drift_magnitude", "file"});
        s.constant = r.number("constant", 1.0);
        s.file = r.text("file", "");
        if (s.function == "file" && s.file.empty()) r.fail("function 'file' needs a file");
    } else if (op == "pde-solve") {
        s.function = r.text("source", "one");
        require_choice(r, "source", s.function, {"one", "sin_x1", "file"});
        s.file = r.text("file", "");
        if (s.function == "file" && s.file.empty()) r.fail("source 'file' needs a file");
        s.lambda = r.number("lambda", 0.0);
        s.diffusion = r.number("diffusion", 1.0);
        if (s.lambda < 0.0) r.fail("lambda must be >= 0");
        if (!(s.diffusion > 0.0)) r.fail("diffusion must be > 0");
        s.dump = r.flag("dump", false);
    } else if (op == "maxreg" || op == "lambda-sweep") {
        if (s.grid.dim != 2) r.fail("the smooth source family is planar (grid d = 2)");
        read_norm(r, s);
        if (op == "maxreg") {
            s.lambda = r.number("lambda", 1.0);
            if (!(s.lambda > 0.0)) r.fail("lambda must be > 0");
            const double amax = s.norm.q.infinite ? 2.0 : 2.0 - 2.0 / s.norm.q.value;
            if (s.norm.alpha < 0.0 || s.norm.alpha >= amax) r.fail("maxreg alpha must lie in [0, 2 - 2/q)");
        } else {
            s.lambdas = r.numbers("lambdas", {1, 4, 16, 64});
            for (double l : s.lambdas)
                if (!(l > 0.0)) r.fail("lambdas must be > 0");
        }
    } else if (op == "duality") {
        s.ladder = r.integers("ladder", {32, 64, 128});
        for (int nx : s.ladder)
            if (nx < 4 || nx % 2) r.fail("ladder entries must be even and >= 4");
        if (s.ladder.size() < 2) r.fail("ladder needs at least two resolutions");
    } else if (op == "zvonkin" || op == "conjugacy") {
        s.lambda = r.number("lambda0", 1.0);
        if (!(s.lambda > 0.0)) r.fail("lambda0 must be > 0");
        if (s.drift == "smooth" && s.grid.dim != 2) r.fail("the smooth drift is planar (grid d = 2)");
        if (s.drift == "family" && s.grid.dim != family_dim(s.family, s.fparams))
            r.fail("grid d must match the family dimension");
        if (op == "zvonkin") s.dump = r.flag("dump", false);
        if (op == "conjugacy" && static_cast<int>(s.x0.size()) != s.grid.dim)
            r.fail("x0 must have grid d entries");
    } else if (op == "simulate") {
        s.dump = r.flag("dump", false);
    } else if (op == "krylov" || op == "khasminskii") {
        if (s.grid.dim != family_dim(s.family, s.fparams)) r.fail("grid d must match the family dimension");
        s.function = r.text("function", op == "krylov" ? "bumps" : "constant");
        if (op == "krylov")
            require_choice(r, "function", s.function, {"one", "bumps", "drift_magnitude"});
        else
            require_choice(r, "function", s.function, {"constant", "bump", "drift_magnitude"});
        s.constant = r.number("constant", 1.0);
        if (op == "krylov") {
            read_norm(r, s);
            if (s.norm.end_time(s.grid) > s.T * (1.0 + 1e-12)) r.fail("time window end t1 must be <= T");
        } else {
            s.gamma = r.number("gamma", 1.0);
            if (s.function == "constant" && s.constant < 0.0) r.fail("constant must be >= 0");
        }
    } else if (op == "bel") {
        s.function = r.text("test", "x1");
        require_choice(r, "test", s.function, {"x1", "sin_x1", "cos_x1", "bump", "shifted_bump"});
        s.t = r.number("t", s.T);
        if (!(s.t > 0.0) || s.t > s.T * (1.0 + 1e-12)) r.fail("gradient time t must lie in (0, T]");
        s.delta = r.number("fd_delta", 0.0);
        if (s.delta < 0.0) r.fail("fd_delta must be >= 0 (0 disables the comparison)");
    } else if (op == "flow") {
        s.levels = r.integers("levels", {2, 4, 8});
        for (int n : s.levels)
            if (n < 1) r.fail("levels must be >= 1");
        s.ps = r.numbers("p_list", {2.0, 4.0});
        for (double p : s.ps)
            if (!(p > 0.0)) r.fail("p_list entries must be > 0");
        s.x0s = r.points("x0_list", {s.x0});
        for (const auto& x : s.x0s)
            if (static_cast<int>(x.size()) != family_dim(s.family, s.fparams)) r.fail("x0_list points must have d entries");
    } else if (op == "contraction") {
        s.y1 = r.numbers("y1", s.x0);
        std::vector<double> y2 = s.y1;
        if (!y2.empty()) y2[0] += 0.1;
        s.y2 = r.numbers("y2", y2);
        s.p = r.number("p", 2.0);
        if (s.y1.size() != s.x0.size() || s.y2.size() != s.x0.size()) r.fail("y1 and y2 must have d entries");
        if (s.y1 == s.y2) r.fail("contraction ratio needs y1 != y2 (degenerate ratio)");
        if (!(s.p > 0.0)) r.fail("p must be > 0");
    } else if (op == "tightness") {
        s.deltas = r.numbers("deltas", {1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128});
        for (double dl : s.deltas) {
            if (!(dl > 0.0) || dl >= s.T) {
                r.fail("tightness lag delta must lie in (0, T)");
                break;
            }
            const double k = dl * s.steps / s.T;
            if (std::abs(k - std::round(k)) > 1e-9) {
                r.fail("tightness lag delta " + num(dl) + " is not a multiple of dt");
                break;
            }
        }
        if (s.deltas.size() < 2) r.fail("tightness needs at least two lags");
    } else if (op == "weak-agree") {
        if (s.grid.dim != family_dim(s.family, s.fparams)) r.fail("grid d must match the family dimension");
        s.constant = r.number("bump_width", 0.5);
        if (!(s.constant > 0.0)) r.fail("bump_width must be > 0");
    } else if (op == "acceptance") {
        s.criteria = r.integers("criteria", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
        for (int c : s.criteria)
            if (c < 1 || c > 10) r.fail("criteria ids must lie in 1..10");
    }
    read_expect(r, s);
}

} // namespace detail

/// Parses and checks a scenario, returning every violation found.
inline Validation validate(std::string_view text) {
    Validation v;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        v.violations.push_back(std::string("scenario is not valid JSON: ") + e.what());
        return v;
    }
    if (!j.is_object()) {
        v.violations.push_back("scenario must be a JSON object");
        return v;
    }
    Scenario sc;
    sc.canonical = j;
    sc.hash = config_hash(j);
    detail::ParamReader top(j, "scenario", v.violations);
    sc.name = top.text("name", "");
    if (sc.name.empty()) top.fail("'name' is required");
    sc.out = top.text("out", "");
    const long long seed = top.integer("seed", 1);
    if (seed < 0) top.fail("seed must be >= 0");
    sc.seed = static_cast<std::uint64_t>(std::max<long long>(seed, 0));
    sc.workers = static_cast<int>(top.integer("workers", 1));
    if (sc.workers < 1) top.fail("workers must be >= 1");
    if (const auto* b = top.object("budget")) {
        detail::ParamReader br(*b, "scenario budget", v.violations);
        sc.budget.max_path_steps = br.number("max_path_steps", sc.budget.max_path_steps);
        sc.budget.max_lattice_cells = br.number("max_lattice_cells", sc.budget.max_lattice_cells);
        br.finish();
    }
    std::set<std::string> ids;
    if (!top.has("operations") || !j["operations"].is_array() || j["operations"].empty()) {
        top.fail("'operations' must be a non-empty array");
    } else {
        const auto& ops = j["operations"];
        for (std::size_t i = 0; i < ops.size(); ++i) {
            const std::string where = "operations[" + std::to_string(i) + "]";
            if (!ops[i].is_object()) {
                v.violations.push_back(where + ": must be an object");
                continue;
            }
            detail::ParamReader r(ops[i], where, v.violations);
            OpSpec s;
            s.op = r.text("op", "");
            const auto& names = operation_names();
            if (std::find(names.begin(), names.end(), s.op) == names.end()) {
                r.fail("unknown op '" + s.op + "'");
                continue;
            }
            s.id = r.text("id", s.op);
            detail::ParamReader rr(ops[i], where + " (" + s.id + ")", v.violations);
            rr.has("op");
            rr.has("id");
            if (!ids.insert(s.id).second) rr.fail("duplicate id '" + s.id + "'; give each operation a distinct id");
            const long long os = rr.integer("seed", static_cast<long long>(sc.seed));
            if (os < 0) rr.fail("seed must be >= 0");
            s.seed = static_cast<std::uint64_t>(std::max<long long>(os, 0));
            s.workers = sc.workers;
            detail::read_op(rr, s, sc.budget);
            rr.finish();
            sc.ops.push_back(std::move(s));
        }
    }
    top.finish();
    if (v.violations.empty()) v.scenario = std::move(sc);
    return v;
}

// ---------------------------------------------------------------------------
// Running

struct Table {
    std::string name;
    std::string csv;
};

struct OpOutcome {
    nlohmann::json metrics = nlohmann::json::object();
    nlohmann::json data = nlohmann::json::object();
    std::vector<Table> tables;
    std::vector<std::string> files;
    /// Set by operations that carry their own verdict (acceptance).
    std::optional<bool> verdict;
    nlohmann::json runtime = nlohmann::json::object();
};

struct RunOptions {
    /// Overrides the scenario worker count; never part of the report body.
    std::optional<int> workers;
    /// Overrides the scenario output directory. Empty: write nothing.
    std::optional<std::string> out;
    std::function<void(const std::string&)> log;
};

struct RunReport {
    nlohmann::json json;
    bool pass = false;
    std::vector<std::string> files;
};

/// Removes every "runtime" member (wall clock, worker count), leaving the reproducible part.
inline nlohmann::json strip_runtime(nlohmann::json j) {
    if (j.is_object()) {
        j.erase("runtime");
        for (auto& [k, v] : j.items()) v = strip_runtime(v);
    } else if (j.is_array()) {
        for (auto& v : j) v = strip_runtime(v);
    }
    return j;
}

namespace detail {

struct OpContext {
    std::string out;
    std::function<void(const std::string&)> log;
};

inline std::string table_name(const OpSpec& s, const std::string& suffix) {
    return suffix.empty() ? s.id + ".csv" : s.id + "-" + suffix + ".csv";
}

inline std::string file_path(const OpContext& ctx, const std::string& name) {
    return (std::filesystem::path(ctx.out) / name).string();
}

inline ModelPtr model_for(const OpSpec& s, const Mollifier& m) { return make_model(s.family, m, s.fparams, s.workers); }

inline SimConfig sim_config(const OpSpec& s) {
    SimConfig c;
    c.x0 = s.x0;
    c.T = s.T;
    c.nt = s.steps;
    c.paths = s.paths;
    c.seed = s.seed;
    c.workers = s.workers;
    return c;
}

inline GridFn drift_magnitude(const OpSpec& s, const Grid& g) {
    if (s.family != Family::C && s.family != Family::D) throw InvalidParameter("drift_magnitude needs family C or D");
    const GridFn b = mollified_drift(s.family, s.mollifier, s.fparams, g, s.workers);
    std::vector<double> mag(g.points());
    for (std::size_t p = 0; p < mag.size(); ++p) {
        double q = 0.0;
        for (int a = 0; a < g.dim; ++a) q += b.at(0, p, a) * b.at(0, p, a);
        mag[p] = std::sqrt(q);
    }
    return GridFn(g, Rank::scalar, false, std::move(mag));
}

inline GridFn static_function(const OpSpec& s, const std::string& name, const Grid& g) {
    if (name == "one") return GridFn::constant(g, 1.0);
    if (name == "constant") return GridFn::constant(g, s.constant);
    if (name == "sin_x1") return sample_scalar(g, [](std::span<const double> x) { return std::sin(x[0]); });
    if (name == "bump") return bump_battery(g, s.x0.empty() ? std::vector<double>(g.dim, 0.0) : s.x0, 0.5).front();
    if (name == "drift_magnitude") return drift_magnitude(s, g);
    if (name == "file") return load_gridfn(s.file);
    throw InvalidParameter("unknown function '" + name + "'");
}

inline TestFunction test_function(const std::string& name, int d) {
    if (name == "x1") return [](const double* x) { return x[0]; };
    if (name == "sin_x1") return [](const double* x) { return std::sin(x[0]); };
    if (name == "cos_x1") return [](const double* x) { return std::cos(x[0]); };
    if (name == "bump")
        return [d](const double* x) {
            double r2 = 0.0;
            for (int a = 0; a < d; ++a) r2 += x[a] * x[a];
            return std::exp(-r2);
        };
    if (name == "shifted_bump")
        return [d](const double* x) {
            double r2 = (x[0] - 0.5) * (x[0] - 0.5);
            for (int a = 1; a < d; ++a) r2 += x[a] * x[a];
            return std::exp(-r2);
        };
    throw InvalidParameter("unknown test function '" + name + "'");
}

inline void put_estimate(OpOutcome& o, const std::string& key, double v, double se) {
    o.metrics[key] = v;
    o.metrics[key + "_se"] = se;
}

inline GridFn smooth_drift(const Grid& g) {
    return sample(g, Rank::vector, [](double, std::span<const double> y, std::span<double> out) {
        out[0] = 0.5 * std::sin(y[1]);
        out[1] = 0.5 * std::sin(y[0]);
    });
}

inline std::optional<GridFn> pde_drift(const OpSpec& s, const Grid& g) {
    if (s.drift == "smooth") return smooth_drift(g);
    if (s.drift == "family") return mollified_drift(s.family, s.mollifier, s.fparams, g, s.workers);
    return std::nullopt;
}

inline std::string agreement_csv(const std::vector<AgreementRow>& rows, std::uint64_t seed) {
    std::ostringstream os;
    os << "f,first,first_se,second,second_se,difference,combined_se,paired_se,seed\n";
    for (const auto& r : rows)
        os << r.id << ',' << num(r.first) << ',' << num(r.first_se) << ',' << num(r.second) << ',' << num(r.second_se)
           << ',' << num(r.difference) << ',' << num(r.combined_se) << ',' << num(r.paired_se) << ',' << seed << '\n';
    return os.str();
}

inline double max_z(const std::vector<AgreementRow>& rows, bool paired) {
    double z = 0.0;
    for (const auto& r : rows) {
        const double se = paired ? r.paired_se : r.combined_se;
        if (se > 0.0) z = std::max(z, std::abs(r.difference) / se);
    }
    return z;
}

inline OpOutcome run_norm(const OpSpec& s) {
    OpOutcome o;
    const GridFn f = static_function(s, s.function, s.grid);
    const NormReport rep = localized_norm(f, s.norm);
    o.metrics["value"] = rep.value;
    o.metrics["sup_inside"] = rep.sup_inside;
    o.data["report"] = rep;
    return o;
}

inline OpOutcome run_pde(const OpSpec& s, const OpContext& ctx) {
    OpOutcome o;
    const Grid& g = s.grid;
    GridFn f = s.function == "file" ? load_gridfn(s.file) : static_function(s, s.function, g);
    if (!f.grid().same_lattice(g)) throw InvalidParameter("source file lattice does not match the operation grid");
    const GridFn u = solve_forward({scaled_identity(g, s.diffusion), pde_drift(s, g), s.lambda, f}, g);
    double mx = 0.0;
    for (double v : u.values()) mx = std::max(mx, std::abs(v));
    o.metrics["max_abs"] = mx;
    o.metrics["final_mean"] = pairwise_sum(u.slice(g.nt).data(), g.points()) / g.points();
    if (s.drift == "none" && s.function != "file") {
        // With b = 0 both sources are eigenfunctions: u = g(t) f with g' = -(c k^2 + lambda) g + 1.
        const double rate = (s.function == "one" ? 0.0 : s.diffusion) + s.lambda;
        double err = 0.0;
        for (int k = 0; k <= g.nt; ++k) {
            const double t = g.time(k);
            const double gt = rate > 0.0 ? (1.0 - std::exp(-rate * t)) / rate : t;
            for (std::size_t p = 0; p < g.points(); ++p) err = std::max(err, std::abs(u.at(k, p) - gt * f.at(0, p)));
        }
        o.metrics["exact_error"] = err;
    }
    if (s.dump && !ctx.out.empty()) {
        const std::string name = s.id + ".u.gridfn";
        save_gridfn(file_path(ctx, name), u);
        o.files.push_back(name);
    }
    return o;
}

inline OpOutcome run_maxreg(const OpSpec& s) {
    OpOutcome o;
    const MaxRegReport rep =
        max_reg_survey(scaled_identity(s.grid, 1.0), std::nullopt, s.lambda, smooth_sources(s.grid), s.norm, s.grid, s.workers);
    o.metrics["max_lambda_term"] = rep.max_lambda_term;
    o.metrics["max_time_term"] = rep.max_time_term;
    o.metrics["max_hessian_term"] = rep.max_hessian_term;
    o.data["report"] = rep;
    o.tables.push_back({"", rep.to_csv()});
    return o;
}

inline OpOutcome run_lambda_sweep(const OpSpec& s) {
    OpOutcome o;
    const LambdaSweep sw = lambda_sweep(scaled_identity(s.grid, 1.0), smooth_sources(s.grid), s.lambdas, s.norm, s.grid, s.workers);
    o.metrics["worst_spread"] = sw.worst_spread;
    o.data["sweep"] = sw;
    std::ostringstream os;
    os << "source,lambda,quantity\n";
    for (std::size_t i = 0; i < sw.ids.size(); ++i)
        for (std::size_t k = 0; k < sw.lambdas.size(); ++k)
            os << sw.ids[i] << ',' << num(sw.lambdas[k]) << ',' << num(sw.quantity[i][k]) << '\n';
    o.tables.push_back({"", os.str()});
    return o;
}

inline OpOutcome run_duality(const OpSpec& s) {
    OpOutcome o;
    std::vector<double> res;
    std::ostringstream os;
    os << "nx,nt,residual\n";
    for (int nx : s.ladder) {
        const Grid g = build_grid(2, std::numbers::pi, nx, 1.0, 2 * nx);
        const GridFn a = sample(g, Rank::matrix, [](double, std::span<const double> y, std::span<double> m) {
            m[0] = m[3] = 1.0 + 0.5 * std::sin(y[0]);
            m[1] = m[2] = 0.0;
        });
        const GridFn phi = sample_scalar(g, [](std::span<const double> y) { return std::sin(y[0]); });
        const GridFn psi = sample_scalar(g, [](std::span<const double> y) { return std::cos(y[0]) + std::sin(y[0]); });
        res.push_back(duality_residual(a, 0.0, phi, psi, 0.25, 0.75, g));
        os << nx << ',' << 2 * nx << ',' << num(res.back()) << '\n';
    }
    double fmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < res.size(); ++i) fmin = std::min(fmin, res[i - 1] / res[i]);
    o.metrics["min_factor"] = fmin;
    o.metrics["final_residual"] = res.back();
    o.data["residuals"] = res;
    o.tables.push_back({"", os.str()});
    return o;
}

struct BuiltTransform {
    GridFn b;
    ZvonkinTransform tf;
    TransformedCoefficients tc;
};

inline BuiltTransform build_for(const OpSpec& s) {
    const Grid& g = s.grid;
    GridFn b = s.drift == "smooth" ? smooth_drift(g) : mollified_drift(s.family, s.mollifier, s.fparams, g, s.workers);
    ZvonkinTransform tf = build_transform(scaled_identity(g, 1.0), b, g, CalibrationOptions{s.lambda});
    TransformedCoefficients tc = transformed_coefficients(tf, s.workers);
    return {std::move(b), std::move(tf), std::move(tc)};
}

inline void transform_metrics(OpOutcome& o, const BuiltTransform& bt) {
    o.metrics["lambda"] = bt.tf.lambda();
    o.metrics["smallness"] = bt.tf.smallness();
    o.metrics["sigma_tilde_min_eig"] = bt.tc.min_eigenvalue;
    o.metrics["sigma_tilde_max_eig"] = bt.tc.max_eigenvalue;
    o.data["transform"] = transform_summary(bt.tf, bt.tc);
}

inline OpOutcome run_zvonkin(const OpSpec& s, const OpContext& ctx) {
    OpOutcome o;
    const BuiltTransform bt = build_for(s);
    transform_metrics(o, bt);
    if (s.dump && !ctx.out.empty()) {
        const std::string name = s.id + ".u.gridfn";
        save_gridfn(file_path(ctx, name), bt.tf.u());
        o.files.push_back(name);
    }
    return o;
}

inline OpOutcome run_conjugacy(const OpSpec& s) {
    OpOutcome o;
    const BuiltTransform bt = build_for(s);
    transform_metrics(o, bt);
    SimConfig cfg = sim_config(s);
    const auto rep = conjugacy_check(std::make_shared<GriddedModel>(bt.b, std::nullopt, Extension::periodic), bt.tf, bt.tc,
                                     default_test_battery(s.grid.dim), cfg);
    put_estimate(o, "pathwise", rep.pathwise, rep.pathwise_se);
    o.metrics["max_z"] = max_z(rep.weak, false);
    o.metrics["max_paired_z"] = max_z(rep.weak, true);
    o.data["conjugacy"] = rep;
    o.tables.push_back({"", agreement_csv(rep.weak, s.seed)});
    return o;
}

inline OpOutcome run_simulate(const OpSpec& s, const OpContext& ctx) {
    OpOutcome o;
    const ModelPtr model = model_for(s, s.mollifier);
    const SimConfig cfg = sim_config(s);
    const int d = model->dim();
    auto endpoint = [&](std::size_t, const PathView& v, double* out) {
        for (int a = 0; a < d; ++a) out[a] = v.state(v.nt)[a];
    };
    std::vector<double> tab;
    if (s.dump && !ctx.out.empty()) {
        const PathEnsemble ens = simulate(model, cfg);
        tab = ens.map(d, endpoint);
        const std::string name = s.id + ".paths";
        save_paths(file_path(ctx, name), ens);
        o.files.push_back(name);
    } else {
        tab = PathStream(model, cfg).map(d, endpoint);
    }
    const EstimatorReport r = summarize(tab, d, s.seed);
    for (int a = 0; a < d; ++a) put_estimate(o, "mean_x" + std::to_string(a + 1), r.value[a], r.se[a]);
    o.data["endpoint_mean"] = r;
    return o;
}

inline OpOutcome run_krylov(const OpSpec& s) {
    OpOutcome o;
    std::vector<GridFn> fs;
    if (s.function == "bumps")
        fs = bump_battery(s.grid, s.x0, 0.5);
    else
        fs.push_back(static_function(s, s.function, s.grid));
    const auto reps = krylov_battery(PathStream(model_for(s, s.mollifier), sim_config(s)), fs, s.norm, s.norm.t0,
                                     s.norm.end_time(s.grid));
    std::size_t best = 0;
    for (std::size_t i = 1; i < reps.size(); ++i)
        if (reps[i].scalar() > reps[best].scalar()) best = i;
    put_estimate(o, "value", reps[best].scalar(), reps[best].scalar_se());
    o.data["reports"] = reps;
    std::ostringstream os;
    os << "f,ratio,se,seed\n";
    for (std::size_t i = 0; i < reps.size(); ++i)
        os << (s.function == "bumps" ? "bump" + std::to_string(i) : s.function) << ',' << num(reps[i].scalar()) << ','
           << num(reps[i].scalar_se()) << ',' << reps[i].seed << '\n';
    o.tables.push_back({"", os.str()});
    return o;
}

inline OpOutcome run_khasminskii(const OpSpec& s) {
    OpOutcome o;
    const GridFn f = static_function(s, s.function, s.grid);
    const KhasminskiiReport k = khasminskii_estimate(PathStream(model_for(s, s.mollifier), sim_config(s)), f, s.gamma);
    put_estimate(o, "value", k.report.scalar(), k.report.scalar_se());
    o.metrics["log_value"] = k.log_value;
    o.metrics["exceeds_budget"] = k.exceeds_budget ? 1.0 : 0.0;
    o.data["report"] = k.report;
    return o;
}

inline OpOutcome run_bel(const OpSpec& s) {
    OpOutcome o;
    const ModelPtr model = model_for(s, s.mollifier);
    const int d = model->dim();
    const TestFunction phi = test_function(s.function, d);
    SimConfig cfg = sim_config(s);
    cfg.with_flow = true;
    if (s.delta > 0.0) {
        const GradientComparison c = bel_versus_finite_difference(model, cfg, phi, s.t, s.delta);
        for (int a = 0; a < d; ++a) {
            put_estimate(o, "grad_" + std::to_string(a + 1), c.weight.value[a], c.weight.se[a]);
            put_estimate(o, "fd_" + std::to_string(a + 1), c.finite_difference.value[a], c.finite_difference.se[a]);
        }
        o.metrics["max_z"] = c.max_z;
        o.metrics["max_paired_z"] = c.max_paired_z;
        o.data["weight"] = c.weight;
        o.data["finite_difference"] = c.finite_difference;
        o.data["paired_se"] = c.paired_se;
    } else {
        const EstimatorReport r = bel_gradient(PathStream(model, cfg), phi, s.t);
        for (int a = 0; a < d; ++a) put_estimate(o, "grad_" + std::to_string(a + 1), r.value[a], r.se[a]);
        o.data["weight"] = r;
    }
    return o;
}

inline OpOutcome run_flow(const OpSpec& s) {
    OpOutcome o;
    std::vector<LevelModel> levels;
    if (s.family == Family::A || s.family == Family::B)
        levels.push_back({1, model_for(s, s.mollifier)});
    else
        for (int n : s.levels) levels.push_back({n, model_for(s, Mollifier{s.mollifier.shape, level_width(n)})});
    const auto rows = flow_moment_survey(levels, s.x0s, sim_config(s), s.ps);
    double var = 1.0, mx = 0.0;
    for (double p : s.ps) {
        double hi = 0.0, lo = std::numeric_limits<double>::infinity();
        for (const auto& r : rows)
            if (r.p == p) {
                hi = std::max(hi, r.value);
                lo = std::min(lo, r.value);
            }
        var = std::max(var, hi / lo);
        mx = std::max(mx, hi);
    }
    o.metrics["variation"] = var;
    o.metrics["max_value"] = mx;
    o.data["rows"] = rows;
    std::ostringstream os;
    os << "n,p,value,se,seed\n";
    for (const auto& r : rows) os << r.n << ',' << num(r.p) << ',' << num(r.value) << ',' << num(r.se) << ',' << s.seed << '\n';
    o.tables.push_back({"", os.str()});
    return o;
}

inline OpOutcome run_contraction(const OpSpec& s) {
    OpOutcome o;
    const EstimatorReport r = pathwise_contraction(model_for(s, s.mollifier), s.y1, s.y2, sim_config(s), s.p);
    put_estimate(o, "value", r.scalar(), r.scalar_se());
    o.data["report"] = r;
    return o;
}

inline OpOutcome run_tightness(const OpSpec& s) {
    OpOutcome o;
    const auto rows = tightness_modulus(PathStream(model_for(s, s.mollifier), sim_config(s)), s.deltas);
    std::vector<double> vals;
    std::ostringstream os;
    os << "delta,value,se,seed\n";
    auto jrows = nlohmann::json::array();
    for (const auto& r : rows) {
        vals.push_back(r.value);
        os << num(r.delta) << ',' << num(r.value) << ',' << num(r.se) << ',' << s.seed << '\n';
        jrows.push_back({{"delta", r.delta}, {"value", r.value}, {"se", r.se}});
    }
    o.metrics["slope"] = loglog_slope(s.deltas, vals);
    o.data["rows"] = jrows;
    o.tables.push_back({"", os.str()});
    return o;
}

inline OpOutcome run_weak_agree(const OpSpec& s) {
    OpOutcome o;
    std::vector<NamedField> battery;
    int i = 0;
    for (const auto& f : bump_battery(s.grid, s.x0, s.constant)) battery.push_back({"bump" + std::to_string(i++), field_of(f)});
    const auto rows = weak_agreement(model_for(s, s.mollifier), model_for(s, s.second), battery, sim_config(s));
    o.metrics["max_z"] = max_z(rows, false);
    o.data["rows"] = rows;
    o.data["second_seed"] = second_stream_seed(s.seed);
    o.tables.push_back({"", agreement_csv(rows, s.seed)});
    return o;
}

inline OpOutcome run_acceptance_op(const OpSpec& s, const OpContext& ctx) {
    OpOutcome o;
    const AcceptanceSummary sum =
        run_acceptance(AcceptanceOptions{s.workers, s.seed}, s.criteria, [&](const CriterionResult& r) {
            if (ctx.log) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "criterion %2d %s  ", r.id, r.pass ? "PASS" : "FAIL");
                ctx.log(buf + r.title + ": " + r.summary);
            }
        });
    auto rows = nlohmann::json::array();
    auto timing = nlohmann::json::array();
    std::ostringstream os;
    os << "criterion,title,pass\n";
    for (const auto& r : sum.results) {
        nlohmann::json details = r.details;
        nlohmann::json rt{{"seconds", r.seconds}, {"summary", r.summary}};
        if (details.contains("suite_seconds")) {
            rt["suite_seconds"] = details["suite_seconds"];
            details.erase("suite_seconds");
        }
        rows.push_back({{"id", r.id}, {"title", r.title}, {"pass", r.pass}, {"details", details}, {"runtime", rt}});
        os << r.id << ",\"" << r.title << "\"," << (r.pass ? "pass" : "fail") << '\n';
    }
    o.metrics["passed"] = sum.passed;
    o.metrics["total"] = sum.results.size();
    o.data["criteria"] = rows;
    o.verdict = sum.passed == static_cast<int>(sum.results.size());
    o.tables.push_back({"", os.str()});
    return o;
}

inline OpOutcome dispatch(const OpSpec& s, const OpContext& ctx) {
    const std::string& op = s.op;
    if (op == "norm") return run_norm(s);
    if (op == "pde-solve") return run_pde(s, ctx);
    if (op == "maxreg") return run_maxreg(s);
    if (op == "lambda-sweep") return run_lambda_sweep(s);
    if (op == "duality") return run_duality(s);
    if (op == "zvonkin") return run_zvonkin(s, ctx);
    if (op == "conjugacy") return run_conjugacy(s);
    if (op == "simulate") return run_simulate(s, ctx);
    if (op == "krylov") return run_krylov(s);
    if (op == "khasminskii") return run_khasminskii(s);
    if (op == "bel") return run_bel(s);
    if (op == "flow") return run_flow(s);
    if (op == "contraction") return run_contraction(s);
    if (op == "tightness") return run_tightness(s);
    if (op == "weak-agree") return run_weak_agree(s);
    if (op == "acceptance") return run_acceptance_op(s, ctx);
    throw InvalidParameter("unknown op '" + op + "'");
}

/// Checks one band; `why` receives a readable rule.
inline bool check_band(const Band& b, const nlohmann::json& metrics, std::string& why) {
    if (!metrics.contains(b.metric) || !metrics[b.metric].is_number()) {
        why = "metric '" + b.metric + "' not produced";
        return false;
    }
    const double v = metrics[b.metric].get<double>();
    bool ok = std::isfinite(v);
    std::string rule;
    if (b.min) {
        ok = ok && v >= *b.min;
        rule += ">= " + num(*b.min);
    }
    if (b.max) {
        ok = ok && v <= *b.max;
        rule += (rule.empty() ? "" : " and ") + ("<= " + num(*b.max));
    }
    if (b.equals) {
        double tol = b.tol;
        if (b.within_se > 0.0) {
            const std::string se = b.metric + "_se";
            if (!metrics.contains(se)) {
                why = "metric '" + se + "' not produced";
                return false;
            }
            tol = std::max(tol, b.within_se * metrics[se].get<double>());
        }
        ok = ok && std::abs(v - *b.equals) <= tol;
        rule += (rule.empty() ? "" : " and ") + ("= " + num(*b.equals) + " +- " + num(tol));
    }
    why = rule;
    return ok;
}

} // namespace detail

/// Executes every declared operation in declaration order; module errors are captured per row.
inline RunReport run(const Scenario& sc, const RunOptions& opt = {}) {
    const int workers = opt.workers.value_or(sc.workers);
    const std::string out = opt.out.value_or(sc.out);
    if (!out.empty()) std::filesystem::create_directories(out);
    detail::OpContext ctx{out, opt.log};
    detail::Stopwatch total;
    RunReport rep;
    rep.pass = true;
    auto rows = nlohmann::json::array();
    for (OpSpec s : sc.ops) {
        s.workers = workers;
        if (opt.log) opt.log("running " + s.id + " (" + s.op + ")");
        detail::Stopwatch sw;
        nlohmann::json row{{"id", s.id}, {"op", s.op}, {"seed", s.seed}};
        bool pass = true;
        try {
            OpOutcome o = detail::dispatch(s, ctx);
            auto bands = nlohmann::json::array();
            for (const auto& b : s.expect) {
                std::string why;
                const bool ok = detail::check_band(b, o.metrics, why);
                pass = pass && ok;
                bands.push_back({{"metric", b.metric}, {"band", b}, {"rule", why}, {"pass", ok}});
            }
            if (o.verdict) pass = pass && *o.verdict;
            std::vector<std::string> files = o.files;
            if (!out.empty())
                for (const auto& t : o.tables) {
                    const std::string name = detail::table_name(s, t.name);
                    std::ofstream(detail::file_path(ctx, name)) << t.csv;
                    files.push_back(name);
                }
            row["status"] = pass ? "pass" : "fail";
            row["metrics"] = o.metrics;
            row["bands"] = bands;
            row["data"] = o.data;
            row["files"] = files;
        } catch (const std::exception& e) {
            pass = false;
            row["status"] = "error";
            row["error"] = e.what();
        }
        row["pass"] = pass;
        row["runtime"] = {{"seconds", sw.seconds()}};
        rep.pass = rep.pass && pass;
        rows.push_back(std::move(row));
    }
    rep.json = {{"schema", kReportSchema},
                {"scenario", sc.name},
                {"config_hash", sc.hash},
                {"config", sc.canonical},
                {"seed", sc.seed},
                {"operations", rows},
                {"pass", rep.pass},
                {"runtime", {{"wall_clock_seconds", total.seconds()}, {"workers", workers}}}};
    if (!out.empty()) {
        const std::string path = (std::filesystem::path(out) / "report.json").string();
        std::ofstream(path) << rep.json.dump(2) << '\n';
        rep.files.push_back(path);
    }
    return rep;
}

inline int exit_code(const RunReport& r) { return r.pass ? 0 : 1; }
inline constexpr int kValidationExit = 2;

} // namespace zvlab
