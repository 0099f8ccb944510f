#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <span>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "zvlab/lattice.hpp"
#include "zvlab/sde.hpp"

namespace zvlab {

// Snapshot files: one ASCII header line, then row-major 8-byte little-endian doubles.
//
//   gridfn v1 <d> <Nx> <Nt> <rank> L=<L> T=<T> shift=<shift>
//
// Nt = 0 marks a static function (one slice); otherwise Nt + 1 slices are stored and the
// grid has Nt time steps. The key=value fields are optional on reading (defaults L = pi,
// T = 1, shift = 0).
//
//   paths v1 <d> <Nt> <M> dt=<dt> t_start=<t0> flow=<0|1> seed=<seed>
//
// followed by the M x (Nt + 1) x d states and, when flow=1, the M x (Nt + 1) x d x d flows.

namespace detail {

inline void write_doubles(std::ostream& os, std::span<const double> v) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    } else {
        for (double x : v) {
            auto u = std::bit_cast<std::uint64_t>(x);
            u = __builtin_bswap64(u);
            os.write(reinterpret_cast<const char*>(&u), sizeof u);
        }
    }
    if (!os) throw Error("write failed");
}

inline std::vector<double> read_doubles(std::istream& is, std::size_t n) {
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != n * sizeof(double))
        throw InvalidParameter("snapshot truncated: expected " + std::to_string(n) + " values");
    if constexpr (std::endian::native != std::endian::little)
        for (double& x : v) x = std::bit_cast<double>(__builtin_bswap64(std::bit_cast<std::uint64_t>(x)));
    return v;
}

inline std::string exact(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace detail

inline void write_gridfn(std::ostream& os, const GridFn& f) {
    const Grid& g = f.grid();
    os << "gridfn v1 " << g.dim << ' ' << g.nx << ' ' << (f.time_dependent() ? g.nt : 0) << ' ' << to_string(f.rank())
       << " L=" << detail::exact(g.half_width) << " T=" << detail::exact(g.horizon) << " shift=" << detail::exact(g.shift)
       << '\n';
    detail::write_doubles(os, f.values());
}

inline GridFn read_gridfn(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidParameter("empty snapshot");
    std::istringstream hs(line);
    std::string magic, version, rank;
    int d = 0, nx = 0, nt = -1;
    hs >> magic >> version >> d >> nx >> nt >> rank;
    if (!hs || magic != "gridfn" || version != "v1") throw InvalidParameter("not a gridfn v1 snapshot: '" + line + "'");
    double L = std::numbers::pi, T = 1.0, shift = 0.0;
    std::string kv;
    while (hs >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidParameter("bad header field '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const double val = std::stod(kv.substr(eq + 1));
        if (key == "L")
            L = val;
        else if (key == "T")
            T = val;
        else if (key == "shift")
            shift = val;
        else
            throw InvalidParameter("unknown header field '" + key + "'");
    }
    if (nt < 0) throw InvalidParameter("Nt must be >= 0 in a snapshot header");
    const bool timed = nt > 0;
    const Grid g = build_grid(d, L, nx, T, timed ? nt : 1, shift);
    const Rank r = rank_from_string(rank);
    const std::size_t n = static_cast<std::size_t>(timed ? nt + 1 : 1) * g.points() * component_count(r, d);
    return GridFn(g, r, timed, detail::read_doubles(is, n));
}

inline void save_gridfn(const std::string& path, const GridFn& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_gridfn(os, f);
}

inline GridFn load_gridfn(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidParameter("cannot open '" + path + "'");
    return read_gridfn(is);
}

struct PathDump {
    int d = 0;
    int nt = 0;
    std::size_t paths = 0;
    double dt = 0.0;
    double t_start = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> states;
    std::vector<double> flows;
};

inline void write_paths(std::ostream& os, const PathEnsemble& ens) {
    const auto& c = ens.config();
    os << "paths v1 " << ens.dim() << ' ' << c.nt << ' ' << ens.size() << " dt=" << detail::exact(c.dt())
       << " t_start=" << detail::exact(c.t_start) << " flow=" << (ens.has_flow() ? 1 : 0) << " seed=" << c.seed << '\n';
    detail::write_doubles(os, ens.states());
    if (ens.has_flow()) detail::write_doubles(os, ens.flows());
}

inline PathDump read_paths(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidParameter("empty path dump");
    std::istringstream hs(line);
    std::string magic, version;
    PathDump p;
    hs >> magic >> version >> p.d >> p.nt >> p.paths;
    if (!hs || magic != "paths" || version != "v1") throw InvalidParameter("not a paths v1 dump: '" + line + "'");
    bool flow = false;
    std::string kv;
    while (hs >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidParameter("bad header field '" + kv + "'");
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "dt")
            p.dt = std::stod(val);
        else if (key == "t_start")
            p.t_start = std::stod(val);
        else if (key == "flow")
            flow = val == "1";
        else if (key == "seed")
            p.seed = std::stoull(val);
        else
            throw InvalidParameter("unknown header field '" + key + "'");
    }
    const std::size_t sn = static_cast<std::size_t>(p.nt + 1) * p.d;
    p.states = detail::read_doubles(is, p.paths * sn);
    if (flow) p.flows = detail::read_doubles(is, p.paths * sn * p.d);
    return p;
}

inline void save_paths(const std::string& path, const PathEnsemble& ens) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_paths(os, ens);
}

} // namespace zvlab
