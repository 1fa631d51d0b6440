#include "illiquid/cli.hpp"

#include <algorithm>
#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "illiquid/envelope.hpp"
#include "illiquid/power_closed_form.hpp"

namespace illiquid {

using nlohmann::json;

namespace {

json num(double v) {
    if (std::isfinite(v)) return v;
    return format_double(v);
}

json num_list(const std::vector<double>& vs) {
    json a = json::array();
    for (double v : vs) a.push_back(num(v));
    return a;
}

template <class T>
T get_or(const json& j, const char* key, T def) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

template <class T>
T require(const json& j, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
    return get_or<T>(j, key, T{});
}

const json& section(const json& j, const char* key) {
    static const json empty = json::object();
    if (!j.contains(key)) return empty;
    const json& s = j.at(key);
    if (!s.is_object()) throw ConfigError(std::string("section '") + key + "' must be an object");
    return s;
}

MarketSpec parse_market(const json& m) {
    std::string type = get_or<std::string>(m, "type", "gbm");
    try {
        if (type == "gbm") {
            if (m.contains("gamma")) {
                if (m.contains("mu")) throw ConfigError("market: give either gamma or mu");
                return MarketSpec::gbm(require<double>(m, "gamma") / 2.0, 1.0);
            }
            double sigma = get_or<double>(m, "sigma", 1.0);
            if (!(sigma > 0.0)) throw ConfigError("market: sigma must be positive");
            return MarketSpec::gbm(require<double>(m, "mu"), sigma);
        }
        if (type == "sampled")
            return MarketSpec::sampled(require<std::vector<double>>(m, "ys"),
                                       require<std::vector<double>>(m, "mu"),
                                       require<std::vector<double>>(m, "sigma"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("market: ") + e.what());
    }
    throw ConfigError("market: unknown type '" + type + "'");
}

UtilitySpec parse_utility(const json& u) {
    std::string type = get_or<std::string>(u, "type", "power");
    try {
        if (type == "power") return UtilitySpec::power(require<double>(u, "p"));
        if (type == "custom")
            return UtilitySpec::custom(require<std::vector<double>>(u, "w"),
                                       require<std::vector<double>>(u, "u"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("utility: ") + e.what());
    }
    throw ConfigError("utility: unknown type '" + type + "'");
}

void check_window(const AutoWindow& w) {
    if (w.nx < 16 || w.nz < 16) throw ConfigError("window: nx and nz must be at least 16");
    if (!(w.decades > 0.0)) throw ConfigError("window: decades must be positive");
    if (!(w.x_res > 0.0)) throw ConfigError("window: x_res must be positive");
}

void check_window(const UniformWindow& w) {
    if (w.nx < 16 || w.nz < 16) throw ConfigError("window: nx and nz must be at least 16");
    if (!(w.x_min < w.x_max)) throw ConfigError("window: x_min must be below x_max");
    if (!(w.z_min < w.z_max)) throw ConfigError("window: z_min must be below z_max");
}

BoundaryMode parse_boundary_mode(const std::string& s) {
    if (s == "contact") return BoundaryMode::Contact;
    if (s == "closed_form") return BoundaryMode::ClosedForm;
    throw ConfigError("solver: boundary_mode must be 'contact' or 'closed_form'");
}

SimMode::Kind parse_sim_kind(const std::string& s) {
    if (s == "exact_exit") return SimMode::Kind::ExactExit;
    if (s == "path_sim") return SimMode::Kind::PathSim;
    throw ConfigError("sim: mode must be 'exact_exit' or 'path_sim'");
}

std::optional<double> opt_double(const json& j, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    return get_or<double>(j, key, 0.0);
}

Lattice auto_lattice(const AutoWindow& w, bool closure) {
    return power_lattice(w.decades, w.nx, w.nz, closure, w.x_res);
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig cfg;
    if (!j.contains("market")) throw ConfigError("missing section 'market'");
    if (!j.contains("utility")) throw ConfigError("missing section 'utility'");
    cfg.market = parse_market(section(j, "market"));
    cfg.utility = parse_utility(section(j, "utility"));

    const json& tr = section(j, "transform");
    std::string mode = get_or<std::string>(tr, "mode", cfg.market.is_gbm() ? "closed_form" : "numeric");
    if (mode == "closed_form") {
        if (!cfg.market.is_gbm()) throw ConfigError("transform: closed_form needs a gbm market");
        cfg.transform.mode = ScaleTransform::Mode::ClosedForm;
    } else if (mode == "numeric") {
        cfg.transform.mode = ScaleTransform::Mode::Numeric;
    } else {
        throw ConfigError("transform: mode must be 'closed_form' or 'numeric'");
    }
    cfg.transform.c = get_or<double>(tr, "c", 1.0);
    cfg.transform.y_min = opt_double(tr, "y_min");
    cfg.transform.y_max = opt_double(tr, "y_max");
    cfg.transform.nodes = get_or<int>(tr, "nodes", 2049);
    if (!(cfg.transform.c > 0.0)) throw ConfigError("transform: c must be positive");

    const json& w = section(j, "window");
    std::string wtype = get_or<std::string>(w, "type", "auto");
    if (wtype == "auto") {
        AutoWindow a;
        a.decades = get_or<double>(w, "decades", a.decades);
        a.nx = get_or<int>(w, "nx", a.nx);
        a.nz = get_or<int>(w, "nz", a.nz);
        a.x_res = get_or<double>(w, "x_res", a.x_res);
        a.closure = get_or<bool>(w, "closure", a.closure);
        check_window(a);
        cfg.window = a;
    } else if (wtype == "uniform") {
        UniformWindow u;
        u.x_min = require<double>(w, "x_min");
        u.x_max = require<double>(w, "x_max");
        u.nx = require<int>(w, "nx");
        u.z_min = require<double>(w, "z_min");
        u.z_max = require<double>(w, "z_max");
        u.nz = require<int>(w, "nz");
        check_window(u);
        cfg.window = u;
    } else {
        throw ConfigError("window: type must be 'auto' or 'uniform'");
    }

    const json& s = section(j, "solver");
    cfg.solver.fp_tol = get_or<double>(s, "fp_tol", cfg.solver.fp_tol);
    cfg.solver.max_iter = get_or<int>(s, "max_iter", cfg.solver.max_iter);
    cfg.solver.cap = get_or<double>(s, "cap", cfg.solver.cap);
    cfg.solver.boundary_mode = parse_boundary_mode(get_or<std::string>(s, "boundary_mode", "contact"));
    cfg.solver.widening_rounds = get_or<int>(s, "widening_rounds", cfg.solver.widening_rounds);
    cfg.solver.widening_threshold =
        get_or<double>(s, "widening_threshold", cfg.solver.widening_threshold);
    cfg.solver.benefit_tol = get_or<double>(s, "benefit_tol", cfg.solver.benefit_tol);
    if (!(cfg.solver.fp_tol > 0.0) || cfg.solver.max_iter < 1 || cfg.solver.widening_rounds < 0)
        throw ConfigError("solver: fp_tol > 0, max_iter >= 1 and widening_rounds >= 0 required");

    const json& sim = section(j, "sim");
    cfg.sim.n_paths = get_or<std::size_t>(sim, "n_paths", cfg.sim.n_paths);
    if (sim.contains("seed")) cfg.sim.seed = get_or<std::uint64_t>(sim, "seed", 0);
    cfg.sim.mode.kind = parse_sim_kind(get_or<std::string>(sim, "mode", "exact_exit"));
    cfg.sim.mode.dt = get_or<double>(sim, "dt", cfg.sim.mode.dt);
    cfg.sim.mode.horizon = get_or<double>(sim, "horizon", cfg.sim.mode.horizon);
    cfg.sim.x0 = opt_double(sim, "x0");
    cfg.sim.z0 = opt_double(sim, "z0");
    cfg.sim.y0 = opt_double(sim, "y0");
    cfg.sim.rounds = get_or<int>(sim, "rounds", 0);
    if (cfg.sim.z0 && cfg.sim.y0) throw ConfigError("sim: give either z0 or y0");
    if (cfg.sim.rounds < 0) throw ConfigError("sim: rounds must be nonnegative");

    const json& o = section(j, "output");
    cfg.output.dir = get_or<std::string>(o, "dir", cfg.output.dir);
    cfg.output.formats = get_or<std::vector<std::string>>(o, "formats", cfg.output.formats);
    for (const auto& f : cfg.output.formats)
        if (f != "csv" && f != "json") throw ConfigError("output: unknown format '" + f + "'");
    return cfg;
}

RunConfig power_config(double gamma, double p) {
    RunConfig cfg;
    cfg.market = MarketSpec::gbm(gamma / 2.0, 1.0);
    try {
        cfg.utility = UtilitySpec::power(p);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

GridWindow widen_uniform(const ScaleTransform& t, const GridWindow& w) {
    auto extend = [](const std::vector<double>& a) {
        std::size_t add = (a.size() + 3) / 4;
        double h = (a.back() - a.front()) / double(a.size() - 1);
        std::vector<double> out;
        for (std::size_t k = add; k > 0; --k) out.push_back(a.front() - h * double(k));
        out.insert(out.end(), a.begin(), a.end());
        for (std::size_t k = 1; k <= add; ++k) out.push_back(a.back() + h * double(k));
        return out;
    };
    std::vector<double> zs;
    Interval d = t.z_domain();
    for (double z : extend(w.z_axis))
        if (z >= d.lo && z <= d.hi) zs.push_back(z);
    return make_window(t, extend(w.x_axis), std::move(zs));
}

Problem build_problem(const RunConfig& cfg) {
    Problem pb;
    if (cfg.market.is_gbm()) pb.gamma = gamma_of(cfg.market);
    pb.p = cfg.utility.power_p();
    const auto* aw = std::get_if<AutoWindow>(&cfg.window);
    try {
        if (cfg.transform.mode == ScaleTransform::Mode::ClosedForm) {
            pb.transform = scale_closed_form(*pb.gamma);
        } else {
            Interval yw;
            if (cfg.transform.y_min && cfg.transform.y_max) {
                yw = {*cfg.transform.y_min, *cfg.transform.y_max};
            } else if (aw) {
                // Cover every widening round the solve may request.
                Lattice l = auto_lattice(*aw, aw->closure);
                for (int r = 0; r < cfg.solver.widening_rounds; ++r) l = widen(l);
                yw = {std::exp(l.t0 + l.hy * l.ky_lo) / 1.01, std::exp(l.t0 + l.hy * l.ky_hi) * 1.01};
            } else {
                throw ConfigError("transform: numeric mode with a uniform window needs y_min and y_max");
            }
            if (!(yw.lo > 0.0 && yw.lo < yw.hi)) throw ConfigError("transform: need 0 < y_min < y_max");
            pb.transform = scale_numeric(cfg.market, cfg.transform.c, yw, cfg.transform.nodes);
        }
        if (aw) {
            pb.window = std::make_shared<const GridWindow>(
                lattice_window(pb.transform, cfg.utility, auto_lattice(*aw, aw->closure)));
        } else {
            const auto& u = std::get<UniformWindow>(cfg.window);
            pb.window = std::make_shared<const GridWindow>(
                make_window(pb.transform, uniform_axis(u.x_min, u.x_max, std::size_t(u.nx)),
                            uniform_axis(u.z_min, u.z_max, std::size_t(u.nz))));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("window: ") + e.what());
    }
    if (cfg.solver.boundary_mode == BoundaryMode::ClosedForm) {
        if (!pb.gamma || !pb.p || cfg.transform.mode != ScaleTransform::Mode::ClosedForm)
            throw ConfigError("solver: closed_form boundary needs gbm, power utility and the closed-form transform");
        double g = *pb.gamma, p = *pb.p;
        pb.boundary = Boundary::closed_form([g, p](int level, double x, double z) {
            return level <= 1 ? ubar1_closed(x, z, g, p) : ubar2_closed(x, z, g, p);
        });
    }
    return pb;
}

namespace {

SolverOptions solver_options(const RunConfig& cfg, const Problem& pb, bool history = false) {
    SolverOptions o;
    o.fp_tol = cfg.solver.fp_tol;
    o.max_iter = cfg.solver.max_iter;
    o.cap = cfg.solver.cap;
    o.boundary = pb.boundary;
    o.keep_history = history;
    return o;
}

// Infinite closed-form cases cannot seed line endpoints.
std::optional<std::string> closed_form_divergence(const RunConfig& cfg, const Problem& pb) {
    if (cfg.solver.boundary_mode != BoundaryMode::ClosedForm) return std::nullopt;
    PowerCase c = classify(*pb.gamma, *pb.p);
    if (is_finite_case(c)) return std::nullopt;
    return "closed-form classification " + to_string(c) + ": the value is +inf";
}

WideningSolve solve_uniform(const RunConfig& cfg, const Problem& pb, const SolverOptions& opt) {
    WideningSolve out;
    out.base = iterate_to_fixed_point(build_ubar(cfg.utility, pb.transform, pb.window), opt);
    out.status = out.base.report.status;
    out.check.threshold = cfg.solver.widening_threshold;
    if (out.status == SolveStatus::Diverging) {
        out.check.note = "base solve diverged";
        return out;
    }
    SubWindow sub = central_half(*pb.window);
    GridWindow cur = *pb.window;
    ValueGrid prev = out.base.value;
    for (int r = 0; r < cfg.solver.widening_rounds; ++r) {
        cur = widen_uniform(pb.transform, cur);
        auto w = std::make_shared<const GridWindow>(cur);
        Solution s = iterate_to_fixed_point(build_ubar(cfg.utility, pb.transform, w), opt);
        if (s.report.status == SolveStatus::Diverging) {
            out.status = SolveStatus::Diverging;
            out.check.performed = true;
            out.check.note = "widened solve diverged: " + s.report.reason;
            return out;
        }
        out.check.increments.push_back(window_drift(prev, s.value, sub));
        prev = std::move(s.value);
    }
    out.check.performed = cfg.solver.widening_rounds > 0;
    if (out.check.performed) out.check.drift = out.check.increments.front();
    out.check.passed = out.check.performed && out.check.drift <= out.check.threshold;
    const auto& inc = out.check.increments;
    if (inc.size() >= 3 && inc[inc.size() - 1] > inc[inc.size() - 2] &&
        inc[inc.size() - 2] > inc[inc.size() - 3] && inc.back() > out.check.threshold) {
        out.status = SolveStatus::Diverging;
        out.check.note = "sub-window values grow strictly with every widening";
    }
    if (out.check.performed && !out.check.passed && out.check.note.empty())
        out.check.note = "window truncation drift exceeds the threshold";
    return out;
}

WideningSolve run_solve(const RunConfig& cfg, const Problem& pb) {
    SolverOptions opt = solver_options(cfg, pb);
    if (std::holds_alternative<AutoWindow>(cfg.window))
        return solve_with_widening(cfg.utility, pb.transform, *pb.window->lattice, opt,
                                   cfg.solver.widening_rounds, cfg.solver.widening_threshold);
    return solve_uniform(cfg, pb, opt);
}

json widening_json(const WideningCheck& c) {
    return {{"performed", c.performed}, {"passed", c.passed},      {"drift", num(c.drift)},
            {"threshold", num(c.threshold)}, {"increments", num_list(c.increments)},
            {"note", c.note}};
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("output: cannot create '" + dir + "': " + ec.message());
}

bool wants(const RunConfig& cfg, const char* fmt) {
    return std::find(cfg.output.formats.begin(), cfg.output.formats.end(), fmt) !=
           cfg.output.formats.end();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("output: cannot write '" + path + "'");
    f << text;
}

int cmd_solve(const RunConfig& cfg, std::ostream& out) {
    Problem pb = build_problem(cfg);
    json summary;
    summary["nx"] = pb.window->nx();
    summary["nz"] = pb.window->nz();
    summary["boundary_mode"] =
        cfg.solver.boundary_mode == BoundaryMode::Contact ? "contact" : "closed_form";
    if (auto why = closed_form_divergence(cfg, pb)) {
        summary["status"] = to_string(SolveStatus::Diverging);
        summary["n_final"] = nullptr;
        summary["sup_deltas"] = json::array();
        summary["widening_check"] = widening_json({});
        summary["reason"] = *why;
        summary["explanation"] = "U^inf = +inf: " + *why;
        ensure_dir(cfg.output.dir);
        if (wants(cfg, "json")) write_text(cfg.output.dir + "/summary.json", summary.dump(2) + "\n");
        out << summary.dump(2) << "\n";
        return EXIT_DIVERGENCE;
    }
    WideningSolve ws = run_solve(cfg, pb);
    const IterationReport& rep = ws.base.report;
    summary["status"] = to_string(ws.status);
    summary["n_final"] = rep.n_final >= 0 ? json(rep.n_final) : json(nullptr);
    summary["sup_deltas"] = num_list(rep.sup_deltas);
    summary["cap_hits"] = rep.cap_hits;
    summary["widening_check"] = widening_json(ws.check);
    summary["reason"] = rep.reason;
    ensure_dir(cfg.output.dir);
    if (ws.status == SolveStatus::Diverging) {
        std::string why = ws.base.report.status == SolveStatus::Diverging ? rep.reason : ws.check.note;
        summary["explanation"] = "U^inf = +inf: " + why;
    } else if (wants(cfg, "csv")) {
        ValueGrid u0 = build_ubar(cfg.utility, pb.transform, ws.base.value.window);
        auto benefit = gambling_benefit(ws.base.value, ws.base.first, cfg.solver.benefit_tol);
        std::size_t count = std::count(benefit.begin(), benefit.end(), std::uint8_t(1));
        summary["benefit_nodes"] = count;
        std::ofstream f(cfg.output.dir + "/grid.csv", std::ios::binary);
        if (!f) throw ConfigError("output: cannot write grid.csv");
        write_grid_csv(f, u0, ws.base.first, ws.base.value, benefit);
    }
    if (wants(cfg, "json")) write_text(cfg.output.dir + "/summary.json", summary.dump(2) + "\n");
    out << summary.dump(2) << "\n";
    if (ws.status == SolveStatus::Diverging) return EXIT_DIVERGENCE;
    return ws.status == SolveStatus::Converged ? EXIT_OK : EXIT_NOT_MET;
}

int cmd_no_trade(const RunConfig& cfg, std::ostream& out) {
    Problem pb = build_problem(cfg);
    ValueGrid u0 = build_ubar(cfg.utility, pb.transform, pb.window);
    if (u0.divergence_certificate) {
        out << json{{"status", "Diverging"}, {"explanation", "m = +inf: " + *u0.divergence_certificate}}
                   .dump(2)
            << "\n";
        return EXIT_DIVERGENCE;
    }
    ValueGrid m = no_trade_value(u0, pb.boundary);
    ensure_dir(cfg.output.dir);
    std::string path = cfg.output.dir + "/no_trade.csv";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("output: cannot write " + path);
    const GridWindow& w = *pb.window;
    f << "x,z,u0,m\n";
    for (std::size_t i = 0; i < w.nx(); ++i)
        for (std::size_t j = 0; j < w.nz(); ++j) {
            if (!w.on_mask(i, j)) continue;
            f << format_double(w.x_axis[i]) << ',' << format_double(w.z_axis[j]) << ','
              << format_double(u0.at(i, j)) << ',' << format_double(m.at(i, j)) << '\n';
        }
    out << json{{"status", "ok"}, {"nx", w.nx()}, {"nz", w.nz()}, {"file", path}}.dump(2) << "\n";
    return EXIT_OK;
}

std::size_t nearest(const std::vector<double>& axis, double v) {
    auto it = std::lower_bound(axis.begin(), axis.end(), v);
    if (it == axis.end()) return axis.size() - 1;
    std::size_t i = std::size_t(it - axis.begin());
    if (i > 0 && v - axis[i - 1] < axis[i] - v) --i;
    return i;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
    if (!cfg.sim.seed) throw ConfigError("simulate: --seed is required");
    if (!cfg.sim.x0 || !(cfg.sim.z0 || cfg.sim.y0))
        throw ConfigError("simulate: x0 and one of z0, y0 are required");
    if (cfg.sim.n_paths < 2) throw ConfigError("simulate: n_paths must be at least 2");
    Problem pb = build_problem(cfg);
    ValueGrid u0 = build_ubar(cfg.utility, pb.transform, pb.window);
    if (u0.divergence_certificate) {
        out << json{{"status", "Diverging"}, {"explanation", *u0.divergence_certificate}}.dump(2) << "\n";
        return EXIT_DIVERGENCE;
    }
    double z0 = cfg.sim.z0 ? *cfg.sim.z0 : pb.transform.s(*cfg.sim.y0);
    double x0 = pb.window->x_axis[nearest(pb.window->x_axis, *cfg.sim.x0)];
    StrategyPlan plan;
    try {
        plan = build_plan(u0, cfg.sim.rounds);
    } catch (const std::domain_error& e) {
        out << json{{"status", "Diverging"}, {"explanation", e.what()}}.dump(2) << "\n";
        return EXIT_DIVERGENCE;
    }
    SimResult r = simulate_strategy(plan, x0, z0, cfg.sim.n_paths, *cfg.sim.seed, cfg.sim.mode,
                                    pb.transform, cfg.market);
    json rounds = json::array();
    for (const auto& rs : r.rounds)
        rounds.push_back({{"z_increment_mean", num(rs.z_increment_mean)},
                          {"z_increment_stderr", num(rs.z_increment_stderr)}});
    double resid = r.mean_x_terminal - x0;
    json j = {{"mean", num(r.mean)},
              {"stderr", num(r.std_error)},
              {"n_paths", r.n_paths},
              {"target", num(r.target)},
              {"z_sigma_level", num((r.mean - r.target) / r.std_error)},
              {"martingale_residual", num(resid)},
              {"martingale_stderr", num(r.stderr_x_terminal)},
              {"x0", num(x0)},
              {"z0", num(z0)},
              {"seed", r.seed},
              {"n", cfg.sim.rounds},
              {"mode", cfg.sim.mode.kind == SimMode::Kind::ExactExit ? "exact_exit" : "path_sim"},
              {"horizon_fraction", num(r.horizon_fraction)},
              {"rounds", rounds}};
    out << j.dump(2) << "\n";
    return EXIT_OK;
}

// Largest relative error of the grid against a closed form on the sub-window.
double closed_form_error(const ValueGrid& g, const SubWindow& sub,
                         const std::function<double(double, double)>& f) {
    const GridWindow& w = *g.window;
    double err = 0.0;
    for (std::size_t i = sub.ix_lo; i < sub.ix_hi; ++i)
        for (std::size_t j = sub.iz_lo; j < sub.iz_hi; ++j) {
            double v = g.at(i, j);
            if (!std::isfinite(v)) continue;
            double c = f(w.x_axis[i], w.z_axis[j]);
            err = std::max(err, std::fabs(v - c) / std::max(1.0, std::fabs(c)));
        }
    return err;
}

int cmd_verify(double gamma, double p, const AutoWindow& aw, std::ostream& out) {
    PowerCase c = classify(gamma, p);
    json j = {{"gamma", gamma}, {"p", p}, {"case", to_string(c)}};
    if (!is_finite_case(c)) {
        j["status"] = "Diverging";
        j["pass"] = false;
        out << j.dump(2) << "\n";
        return EXIT_DIVERGENCE;
    }
    RunConfig cfg = power_config(gamma, p);
    cfg.window = aw;
    cfg.solver.boundary_mode = BoundaryMode::ClosedForm;
    Problem pb = build_problem(cfg);
    Solution s = iterate_to_fixed_point(build_ubar(cfg.utility, pb.transform, pb.window),
                                        solver_options(cfg, pb, true));
    SubWindow sub = central_half(*pb.window);
    auto u1 = [&](double x, double z) { return ubar1_closed(x, z, gamma, p); };
    auto u2 = [&](double x, double z) { return ubar2_closed(x, z, gamma, p); };
    const ValueGrid& g2 = s.history.size() > 2 ? s.history[2] : s.value;
    double e1 = closed_form_error(s.first, sub, u1);
    double e2 = closed_form_error(g2, sub, u2);
    double einf = closed_form_error(s.value, sub, u2);
    const double tol = 1e-2;
    bool pass = e1 <= tol && e2 <= tol && einf <= tol;
    j["status"] = to_string(s.report.status);
    j["n_final"] = s.report.n_final >= 0 ? json(s.report.n_final) : json(nullptr);
    j["max_rel_error_u1"] = num(e1);
    j["max_rel_error_u2"] = num(e2);
    j["max_rel_error_uinf"] = num(einf);
    j["tolerance"] = tol;
    j["pass"] = pass;
    out << j.dump(2) << "\n";
    return pass ? EXIT_OK : EXIT_NOT_MET;
}

std::vector<double> parse_csv_line(const std::string& line) {
    std::vector<double> v;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t\r"));
        tok.erase(tok.find_last_not_of(" \t\r") + 1);
        char* end = nullptr;
        double d = std::strtod(tok.c_str(), &end);
        if (tok.empty() || *end != '\0') throw ConfigError("envelope: bad number '" + tok + "'");
        v.push_back(d);
    }
    return v;
}

int cmd_envelope(std::istream& in, std::ostream& out) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("envelope: expected one CSV line on stdin");
    std::vector<double> v = parse_csv_line(line);
    if (v.size() < 4 || v.size() % 2 != 0)
        throw ConfigError("envelope: expected x_1..x_n,f_1..f_n with n >= 2");
    std::size_t n = v.size() / 2;
    std::vector<double> xs(v.begin(), v.begin() + long(n)), fs(v.begin() + long(n), v.end());
    EnvelopeResult r;
    try {
        r = concave_envelope_1d(xs, fs);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("envelope: ") + e.what());
    }
    for (std::size_t i = 0; i < n; ++i) out << (i ? "," : "") << format_double(r.env[i]);
    out << "\n";
    return EXIT_OK;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Flags {
    std::string config;
    std::optional<double> gamma, p, decades, x_res, x0, z0, y0, dt, horizon;
    std::optional<int> nx, nz, rounds, max_iter, widening_rounds;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n_paths;
    std::optional<std::string> out_dir, boundary_mode, mode;
};

RunConfig load(const Flags& fl) {
    RunConfig cfg;
    if (!fl.config.empty()) {
        cfg = parse_config(read_file(fl.config));
        if (fl.gamma || fl.p) throw ConfigError("--gamma/--p cannot be combined with --config");
    } else {
        if (!fl.gamma || !fl.p) throw ConfigError("need --config, or both --gamma and --p");
        cfg = power_config(*fl.gamma, *fl.p);
    }
    if (fl.decades || fl.nx || fl.nz || fl.x_res) {
        auto* aw = std::get_if<AutoWindow>(&cfg.window);
        if (aw) {
            if (fl.decades) aw->decades = *fl.decades;
            if (fl.x_res) aw->x_res = *fl.x_res;
            if (fl.nx) aw->nx = *fl.nx;
            if (fl.nz) aw->nz = *fl.nz;
            check_window(*aw);
        } else {
            auto& uw = std::get<UniformWindow>(cfg.window);
            if (fl.decades || fl.x_res) throw ConfigError("--decades/--x-res need an auto window");
            if (fl.nx) uw.nx = *fl.nx;
            if (fl.nz) uw.nz = *fl.nz;
            check_window(uw);
        }
    }
    if (fl.max_iter) cfg.solver.max_iter = *fl.max_iter;
    if (fl.widening_rounds) cfg.solver.widening_rounds = *fl.widening_rounds;
    if (fl.boundary_mode) cfg.solver.boundary_mode = parse_boundary_mode(*fl.boundary_mode);
    if (fl.seed) cfg.sim.seed = *fl.seed;
    if (fl.n_paths) cfg.sim.n_paths = *fl.n_paths;
    if (fl.rounds) cfg.sim.rounds = *fl.rounds;
    if (fl.x0) cfg.sim.x0 = *fl.x0;
    if (fl.z0) {
        cfg.sim.z0 = *fl.z0;
        cfg.sim.y0.reset();
    }
    if (fl.y0) {
        cfg.sim.y0 = *fl.y0;
        cfg.sim.z0.reset();
    }
    if (fl.mode) cfg.sim.mode.kind = parse_sim_kind(*fl.mode);
    if (fl.dt) cfg.sim.mode.dt = *fl.dt;
    if (fl.horizon) cfg.sim.mode.horizon = *fl.horizon;
    if (fl.out_dir) cfg.output.dir = *fl.out_dir;
    return cfg;
}

void add_problem_flags(CLI::App* c, Flags& fl) {
    c->add_option("--config", fl.config, "JSON run configuration");
    c->add_option("--gamma", fl.gamma, "2 mu / sigma^2 of a GBM market (with --p)");
    c->add_option("--p", fl.p, "power utility exponent (with --gamma)");
    c->add_option("--decades", fl.decades, "auto window: y in [10^-d, 10^d]");
    c->add_option("--x-res", fl.x_res, "auto window: x spacing near 0 relative to y_min");
    c->add_option("--nx", fl.nx, "x nodes");
    c->add_option("--nz", fl.nz, "z nodes");
    c->add_option("--boundary-mode", fl.boundary_mode, "contact or closed_form");
    c->add_option("--max-iter", fl.max_iter, "envelope budget");
    c->add_option("--widening-rounds", fl.widening_rounds, "number of 1.5x widenings");
    c->add_option("--out", fl.out_dir, "output directory");
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Value functions and strategies for trading an illiquid asset"};
    app.require_subcommand(1);
    Flags fl;
    AutoWindow verify_window;
    double vg = 0.0, vp = 0.0;

    auto* solve = app.add_subcommand("solve", "Solve for U^inf and write grid.csv and summary.json");
    add_problem_flags(solve, fl);
    auto* no_trade = app.add_subcommand("no-trade", "Write the no-trade value m = U^1");
    add_problem_flags(no_trade, fl);
    auto* sim = app.add_subcommand("simulate", "Monte Carlo of the n-round strategy");
    add_problem_flags(sim, fl);
    sim->add_option("--seed", fl.seed, "master seed");
    sim->add_option("--n-paths", fl.n_paths, "number of paths");
    sim->add_option("--rounds", fl.rounds, "strategy rounds n");
    sim->add_option("--x0", fl.x0, "start x (snapped to the nearest node)");
    sim->add_option("--z0", fl.z0, "start z");
    sim->add_option("--y0", fl.y0, "start y, mapped to z = S(y)");
    sim->add_option("--mode", fl.mode, "exact_exit or path_sim");
    sim->add_option("--dt", fl.dt, "path_sim time step");
    sim->add_option("--horizon", fl.horizon, "path_sim time per round");
    auto* classify_cmd = app.add_subcommand("classify", "Closed-form case and constants as JSON");
    classify_cmd->add_option("--gamma", vg, "2 mu / sigma^2")->required();
    classify_cmd->add_option("--p", vp, "utility exponent")->required();
    auto* verify = app.add_subcommand("verify", "Compare the grid solve with the closed forms");
    verify->add_option("--gamma", vg, "2 mu / sigma^2")->required();
    verify->add_option("--p", vp, "utility exponent")->required();
    verify->add_option("--decades", verify_window.decades, "y in [10^-d, 10^d]");
    verify->add_option("--nx", verify_window.nx, "x nodes");
    verify->add_option("--nz", verify_window.nz, "z nodes");
    verify->add_option("--x-res", verify_window.x_res, "x spacing near 0 relative to y_min");
    auto* env = app.add_subcommand("envelope", "Concave envelope of one CSV line x..,f.. from stdin");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? EXIT_OK : EXIT_USAGE;
    }

    try {
        if (*solve) return cmd_solve(load(fl), out);
        if (*no_trade) return cmd_no_trade(load(fl), out);
        if (*sim) return cmd_simulate(load(fl), out);
        if (*env) return cmd_envelope(std::cin, out);
        if (*verify) {
            check_window(verify_window);
            if (!(vp > 0.0)) throw ConfigError("verify: p must be positive");
            return cmd_verify(vg, vp, verify_window, out);
        }
        if (*classify_cmd) {
            if (!(vp > 0.0)) throw ConfigError("classify: p must be positive");
            const PowerConstants& k = power_constants(vg, vp);
            json j = {{"gamma", vg}, {"p", vp}, {"case", to_string(k.kind)}};
            j["gamma_hat"] = k.gamma_hat ? num(k.gamma_hat->value) : json(nullptr);
            j["gamma_hat_residual"] = k.gamma_hat ? num(k.gamma_hat->residual) : json(nullptr);
            j["low_precision"] = k.gamma_hat ? k.gamma_hat->low_precision : false;
            j["xi0"] = k.xi0 ? num(*k.xi0) : json(nullptr);
            j["xi1"] = k.xi12 ? num(k.xi12->xi1) : json(nullptr);
            j["xi2"] = k.xi12 ? num(k.xi12->xi2) : json(nullptr);
            json res = json::object();
            if (k.theta_residual) res["theta"] = num(*k.theta_residual);
            if (k.xi12) {
                res["chord"] = num(k.xi12->residual_chord);
                res["slope"] = num(k.xi12->residual_slope);
            }
            j["residuals"] = res;
            auto n = expected_fixed_point(k.kind);
            j["expected_fixed_point"] = n ? json(*n) : json(nullptr);
            out << j.dump(2) << "\n";
            return EXIT_OK;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return EXIT_USAGE;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return EXIT_USAGE;
    } catch (const DivergentValue& e) {
        err << "error: " << e.what() << "\n";
        return EXIT_DIVERGENCE;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return EXIT_NOT_MET;
    }
    return EXIT_USAGE;
}

}  // namespace illiquid
