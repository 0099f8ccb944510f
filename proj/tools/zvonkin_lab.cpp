// zvonkin-lab: scenario runner and per-operation front end.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "zvlab/zvlab.hpp"

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw zvlab::InvalidParameter("cannot read '" + path + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

json number_or_integer(double v) {
    if (v == std::floor(v) && std::abs(v) < 9e15) return static_cast<long long>(v);
    return v;
}

struct Common {
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
    bool quiet = false;

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Base seed (recorded in the report)");
        app->add_option("--workers", workers, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);
        app->add_option("--out", out, "Output directory for report.json, CSV tables and dumps");
        app->add_flag("--quiet", quiet, "No progress lines on stderr");
    }

    zvlab::RunOptions run_options() const {
        zvlab::RunOptions o;
        o.workers = workers;
        if (!out.empty()) o.out = out;
        if (!quiet) o.log = [](const std::string& s) { std::cerr << s << '\n'; };
        return o;
    }
};

/// Flags shared by the single-operation subcommands. Only flags given on the
/// command line become operation keys; validation rejects keys the op does not take.
struct OpFlags {
    std::string config;
    std::string id, family, mollifier, function, source, test, load, q;
    double paths = 0, steps = 0, mollify_eps = 0, level = 0, T = 0, nx = 0, nt = 0, d = 0, L = 0, shift = 0;
    double alpha = 0, p = 0, r = 0, t0 = 0, t1 = 0, lambda = 0, gamma = 0, t = 0, fd_delta = 0, constant = 0;
    std::vector<double> x0;
    bool dump = false;
    std::vector<std::string> params;
    std::map<std::string, CLI::Option*> given;

    void add(CLI::App* app) {
        auto opt = [&](const char* flag, auto& var, const char* help) {
            return given[flag] = app->add_option(flag, var, help);
        };
        opt("--config", config, "JSON object of operation parameters; flags override it");
        opt("--id", id, "Operation id in the report");
        opt("--family", family, "Coefficient family A-E");
        opt("--paths", paths, "Monte Carlo paths M");
        opt("--steps", steps, "Euler steps Nt");
        opt("--mollify-eps", mollify_eps, "Mollifier width eps");
        opt("--level", level, "Mollification level n (eps = 1/n)");
        opt("--mollifier", mollifier, "Mollifier shape: gaussian or bump");
        opt("--x0", x0, "Starting point, comma separated")->delimiter(',')->allow_extra_args(false);
        opt("--T", T, "Horizon");
        opt("--nx", nx, "Lattice points per axis");
        opt("--nt", nt, "Lattice time steps");
        opt("--d", d, "Lattice dimension");
        opt("--L", L, "Box half width");
        opt("--shift", shift, "Lattice offset in cells");
        opt("--alpha", alpha, "Smoothness index");
        opt("--p", p, "Integrability p");
        opt("--q", q, "Time integrability q (number or inf)");
        opt("--r", r, "Localization radius");
        opt("--t0", t0, "Window start");
        opt("--t1", t1, "Window end");
        opt("--lambda", lambda, "lambda (lambda0 for zvonkin and conjugacy)");
        opt("--gamma", gamma, "Exponential moment factor");
        opt("--t", t, "Gradient time");
        opt("--fd-delta", fd_delta, "Finite-difference step for the gradient comparison");
        opt("--constant", constant, "Constant integrand value");
        opt("--function", function, "Integrand or norm function");
        opt("--source", source, "PDE source");
        opt("--test", test, "Gradient test function");
        opt("--load", load, "gridfn v1 snapshot used as the norm function or PDE source");
        given["--dump"] = app->add_flag("--dump", dump, "Write u (gridfn v1) or the paths (paths v1) to --out");
        opt("--param", params, "Extra KEY=JSON operation parameter (repeatable)");
    }

    bool has(const char* flag) const { return given.at(flag)->count() > 0; }

    json build(const std::string& op) const {
        json o = config.empty() ? json::object() : json::parse(read_file(config));
        if (!o.is_object()) throw zvlab::InvalidParameter("--config must hold a JSON object of operation parameters");
        o["op"] = op;
        auto set = [&](const char* flag, const char* key, const json& v) {
            if (has(flag)) o[key] = v;
        };
        set("--id", "id", id);
        set("--family", "family", family);
        set("--paths", "paths", number_or_integer(paths));
        set("--steps", "steps", number_or_integer(steps));
        set("--mollify-eps", "mollify_eps", mollify_eps);
        set("--level", "level", number_or_integer(level));
        set("--mollifier", "mollifier", mollifier);
        set("--x0", "x0", x0);
        set("--T", "T", T);
        set("--alpha", "alpha", alpha);
        set("--p", "p", p);
        set("--r", "r", r);
        set("--t0", "t0", t0);
        set("--t1", "t1", t1);
        set("--lambda", op == "zvonkin" || op == "conjugacy" ? "lambda0" : "lambda", lambda);
        set("--gamma", "gamma", gamma);
        set("--t", "t", t);
        set("--fd-delta", "fd_delta", fd_delta);
        set("--constant", "constant", constant);
        set("--function", "function", function);
        set("--source", "source", source);
        set("--test", "test", test);
        if (has("--q")) o["q"] = (q == "inf" || q == "infinity") ? json("inf") : json(std::stod(q));
        if (has("--dump") && dump) o["dump"] = true;
        if (has("--load")) {
            o[op == "pde-solve" ? "source" : "function"] = "file";
            o["file"] = load;
        }
        json grid = o.contains("grid") ? o["grid"] : json::object();
        const std::pair<const char*, const char*> gkeys[] = {{"--nx", "nx"}, {"--nt", "nt"}, {"--d", "d"},
                                                             {"--L", "L"},   {"--shift", "shift"}};
        const double gvals[] = {nx, nt, d, L, shift};
        for (int i = 0; i < 5; ++i)
            if (has(gkeys[i].first)) grid[gkeys[i].second] = number_or_integer(gvals[i]);
        if (!grid.empty()) o["grid"] = grid;
        for (const auto& kv : params) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw zvlab::InvalidParameter("--param expects KEY=JSON, got '" + kv + "'");
            const std::string val = kv.substr(eq + 1);
            json v;
            try {
                v = json::parse(val);
            } catch (const json::parse_error&) {
                v = val;
            }
            o[kv.substr(0, eq)] = v;
        }
        return o;
    }
};

int report_violations(const std::vector<std::string>& v) {
    std::cerr << "scenario invalid (" << v.size() << " violation" << (v.size() == 1 ? "" : "s") << "):\n";
    for (const auto& s : v) std::cerr << "  " << s << '\n';
    return zvlab::kValidationExit;
}

void print_run_summary(const zvlab::RunReport& rep) {
    int passed = 0, total = 0;
    for (const auto& row : rep.json["operations"]) {
        ++total;
        if (row["pass"].get<bool>()) ++passed;
        std::cout << row["status"].get<std::string>() << "  " << row["id"].get<std::string>() << " ("
                  << row["op"].get<std::string>() << ")";
        if (row.contains("error")) std::cout << ": " << row["error"].get<std::string>();
        for (const auto& b : row.value("bands", json::array()))
            if (!b["pass"].get<bool>()) std::cout << "\n    band " << b["metric"].get<std::string>() << ": " << b["rule"].get<std::string>();
        std::cout << '\n';
    }
    std::cout << "scenario " << rep.json["scenario"].get<std::string>() << ": " << passed << "/" << total
              << " operations passed\n";
}

void print_families(bool as_json) {
    const auto fams = zvlab::list_families();
    if (as_json) {
        std::cout << json(fams).dump(2) << '\n';
        return;
    }
    for (const auto& f : fams) {
        std::cout << f.id << "  " << f.name << " (d=" << f.dim << ")\n"
                  << "   coefficients:  " << f.coefficients << "\n"
                  << "   parameters:    " << f.parameters << "\n"
                  << "   admissibility: " << f.admissibility << "\n"
                  << "   default grid:  " << f.default_grid << "\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"zvonkin-lab: numerical experiments for SDEs with singular drift"};
    app.require_subcommand(1);

    bool families_json = false;
    auto* lf = app.add_subcommand("list-families", "Print the coefficient family catalog");
    lf->add_flag("--json", families_json, "JSON output");

    std::string validate_path;
    auto* val = app.add_subcommand("validate", "Check a scenario and list every violation");
    val->add_option("--config,config", validate_path, "Scenario file")->required();

    std::string run_path;
    Common run_common;
    auto* runc = app.add_subcommand("run", "Run a scenario file");
    runc->add_option("--config,config", run_path, "Scenario file")->required();
    run_common.add(runc);

    std::map<std::string, std::pair<CLI::App*, std::unique_ptr<OpFlags>>> ops;
    std::map<std::string, Common> op_common;
    for (const auto& name : zvlab::operation_names()) {
        auto* sc = app.add_subcommand(name, "Run a single '" + name + "' operation and print its report");
        auto flags = std::make_unique<OpFlags>();
        flags->add(sc);
        op_common[name].add(sc);
        ops[name] = {sc, std::move(flags)};
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : zvlab::kValidationExit;
    }

    try {
        if (*lf) {
            print_families(families_json);
            return 0;
        }
        if (*val) {
            const auto v = zvlab::validate(read_file(validate_path));
            if (!v.ok()) return report_violations(v.violations);
            std::cout << "valid: " << v.scenario->name << ", " << v.scenario->ops.size() << " operation"
                      << (v.scenario->ops.size() == 1 ? "" : "s") << ", " << v.scenario->hash << '\n';
            return 0;
        }
        if (*runc) {
            json j;
            try {
                j = json::parse(read_file(run_path));
            } catch (const json::parse_error& e) {
                return report_violations({std::string("scenario is not valid JSON: ") + e.what()});
            }
            if (run_common.seed && j.is_object()) j["seed"] = *run_common.seed;
            const auto v = zvlab::validate(j.dump());
            if (!v.ok()) return report_violations(v.violations);
            const auto rep = zvlab::run(*v.scenario, run_common.run_options());
            print_run_summary(rep);
            if (rep.files.empty())
                std::cout << rep.json.dump(2) << '\n';
            else
                std::cout << "report: " << rep.files.back() << '\n';
            return zvlab::exit_code(rep);
        }
        for (auto& [name, entry] : ops) {
            if (!*entry.first) continue;
            const Common& c = op_common[name];
            json op;
            try {
                op = entry.second->build(name);
            } catch (const std::exception& e) {
                return report_violations({e.what()});
            }
            json sc{{"name", name}, {"operations", json::array({op})}};
            if (c.seed) sc["seed"] = *c.seed;
            const auto v = zvlab::validate(sc.dump());
            if (!v.ok()) return report_violations(v.violations);
            const auto rep = zvlab::run(*v.scenario, c.run_options());
            std::cout << rep.json.dump(2) << '\n';
            return zvlab::exit_code(rep);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return zvlab::kValidationExit;
    }
    return 0;
}
