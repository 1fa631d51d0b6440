#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "illiquid/envelope.hpp"
#include "illiquid/power_closed_form.hpp"
#include "illiquid/strategy.hpp"
#include "illiquid/value_solver.hpp"
#include "random_lines.hpp"

using namespace illiquid;

namespace {

constexpr double DECADES = 3.0;
constexpr int NODES = 512;
constexpr double X_RES = 1e-3;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Probe {
    double p;
    double g;
};

const std::vector<Probe> PROBES{{2, -0.5}, {2, 0.3}, {2, 0.5}, {2, 0.8}, {0.5, 0.6}, {1, 1.2}, {2, 1.5}, {2, 3}};

struct ProbeRun {
    Probe pr;
    PowerCase kind;
    // Closed-form boundary solve (finite cases).
    std::optional<Solution> closed;
    double closed_seconds = 0.0;
    // Contact solve with widening.
    std::optional<WideningSolve> contact;
    double contact_seconds = 0.0;
    ValueGrid u0;
    std::string note;
};

Lattice base_lattice() { return power_lattice(DECADES, NODES, NODES, true, X_RES); }

BoundaryEvaluator closed_forms(double g, double p) {
    return [g, p](int level, double x, double z) {
        return level <= 1 ? ubar1_closed(x, z, g, p) : ubar2_closed(x, z, g, p);
    };
}

ProbeRun run_probe(const Probe& pr) {
    ProbeRun r{pr, classify(pr.g, pr.p), std::nullopt, 0.0, std::nullopt, 0.0, {}, {}};
    auto t = scale_closed_form(pr.g);
    auto u = UtilitySpec::power(pr.p);
    Lattice l = base_lattice();
    auto w = std::make_shared<const GridWindow>(lattice_window(t, u, l));
    r.u0 = build_ubar(u, t, w);
    if (is_finite_case(r.kind)) {
        SolverOptions o;
        o.keep_history = true;
        o.boundary = Boundary::closed_form(closed_forms(pr.g, pr.p));
        auto t0 = std::chrono::steady_clock::now();
        r.closed = iterate_to_fixed_point(r.u0, o);
        r.closed_seconds = seconds_since(t0);
    }
    // Widening needs three rounds to certify divergence by growth; finite
    // cases only need the first one.
    int rounds = is_finite_case(r.kind) ? 1 : 3;
    auto t0 = std::chrono::steady_clock::now();
    r.contact = solve_with_widening(u, t, l, SolverOptions{}, rounds, 1e-6);
    r.contact_seconds = seconds_since(t0);
    return r;
}

// Smallest n with U^n within the criterion-3 tolerance of the final grid.
std::optional<int> profile_level(const Solution& s, double tol) {
    SubWindow sub = central_half(*s.value.window);
    for (std::size_t n = 0; n < s.history.size(); ++n)
        if (window_drift(s.history[n], s.value, sub) <= tol) return int(n);
    return std::nullopt;
}

double closed_form_error(const ValueGrid& g, double gamma, double p, int level) {
    const GridWindow& w = *g.window;
    SubWindow sub = central_half(w);
    double err = 0.0;
    for (std::size_t i = sub.ix_lo; i < sub.ix_hi; ++i)
        for (std::size_t j = sub.iz_lo; j < sub.iz_hi; ++j) {
            double v = g.at(i, j);
            if (!std::isfinite(v)) continue;
            double x = w.x_axis[i], z = w.z_axis[j];
            double c = level <= 1 ? ubar1_closed(x, z, gamma, p) : ubar2_closed(x, z, gamma, p);
            err = std::max(err, std::fabs(v - c) / std::max(1.0, std::fabs(c)));
        }
    return err;
}

void line(int k, bool pass, const std::string& text) {
    std::printf("criterion %d: %s  %s\n", k, pass ? "PASS" : "FAIL", text.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char b[64];
    std::snprintf(b, sizeof b, f, a);
    return b;
}

std::string probe_name(const Probe& p) {
    char b[48];
    std::snprintf(b, sizeof b, "(p=%g, gamma=%g)", p.p, p.g);
    return b;
}

bool criterion1() {
    auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 200; ++k) {
        auto l = illiquid::testing::random_line(1, k);
        auto a = concave_envelope_1d(l.xs, l.fs);
        auto b = concave_envelope_oracle(l.xs, l.fs);
        for (std::size_t i = 0; i < l.fs.size(); ++i) {
            if (a.env[i] == b.env[i]) continue;
            worst = std::max(worst, std::fabs(a.env[i] - b.env[i]));
        }
    }
    double sec = seconds_since(t0);
    bool pass = worst <= 1e-12 && sec < 5.0;
    line(1, pass, "200 random lines vs chord oracle: max |diff| " + fmt("%.3g", worst) + " (tol 1e-12), " +
                      fmt("%.2f", sec) + " s (limit 5 s)");
    return pass;
}

bool criterion2(const std::vector<ProbeRun>& runs) {
    bool all = true;
    for (const auto& r : runs) {
        auto want = expected_fixed_point(r.kind);
        std::string got;
        bool ok;
        double sec;
        if (!want) {
            SolveStatus st = r.contact->status;
            ok = st == SolveStatus::Diverging;
            sec = r.contact_seconds / double(1 + r.contact->check.increments.size());
            got = to_string(st);
            if (r.contact->base.report.status == SolveStatus::Diverging)
                got += " (certificate)";
            else
                got += " (widening increments grow)";
        } else {
            const Solution& s = *r.closed;
            auto n = profile_level(s, 1e-2);
            bool conv = s.report.status == SolveStatus::Converged;
            ok = conv && n && *n == *want;
            sec = r.closed_seconds;
            got = to_string(s.report.status) + ", profile n=" + (n ? std::to_string(*n) : std::string("none")) +
                  ", strict n_final=" + std::to_string(s.report.n_final);
        }
        ok = ok && sec < 30.0;
        all = all && ok;
        std::printf("  %s %-22s %-18s expected %-9s got %s, %.1f s\n", ok ? "ok  " : "MISS",
                    probe_name(r.pr).c_str(), to_string(r.kind).c_str(),
                    want ? ("n=" + std::to_string(*want)).c_str() : "Diverging", got.c_str(), sec);
    }
    line(2, all, "termination profile of the eight probes on 512x512 matches the classification (each solve < 30 s)");
    return all;
}

bool criterion3(const std::vector<ProbeRun>& runs) {
    bool all = true;
    for (const auto& r : runs) {
        if (!r.closed) continue;
        const Solution& s = *r.closed;
        double e1 = closed_form_error(s.first, r.pr.g, r.pr.p, 1);
        double einf = closed_form_error(s.value, r.pr.g, r.pr.p, 2);
        const WideningCheck& c = r.contact->check;
        bool ok = e1 <= 1e-2 && einf <= 1e-2 && c.performed && c.drift <= 1e-6;
        all = all && ok;
        std::printf("  %s %-22s U1 err %.2e  Uinf err %.2e  (tol 1e-2)  widening drift %.2e (tol 1e-6)%s\n",
                    ok ? "ok  " : "MISS", probe_name(r.pr).c_str(), e1, einf, c.drift,
                    r.contact->base.report.status == SolveStatus::Converged ? "" : "  [contact solve not converged]");
    }
    line(3, all, "closed-form agreement on the central half and contact-mode widening drift, finite probes");
    return all;
}

bool criterion4() {
    auto g2 = gamma_hat(2.0);
    double rg = std::fabs(G(g2.value, 2.0));
    bool a = rg <= 1e-10 && g2.value > 0.58 && g2.value < 0.60;
    double x05 = xi0(0.5, 2.0);
    double th = std::fabs(theta(x05, 0.5, 2.0));
    bool b = th <= 1e-12 && std::fabs(x05 - 1.0) <= 1e-10;
    double worst = 0.0;
    for (double p : {0.5, 2.0, 3.0}) {
        double gh = gamma_hat(p).value;
        worst = std::max(worst, std::fabs(xi0(gh, p) - p / (p - gh)));
    }
    bool c = worst <= 1e-6;
    bool pass = a && b && c;
    line(4, pass, "gamma_hat_2 = " + fmt("%.15g", g2.value) + " |G| " + fmt("%.2g", rg) + "; xi0(0.5,2) = " +
                      fmt("%.15g", x05) + " |Theta| " + fmt("%.2g", th) + "; max |xi0(gamma_hat_p) - p/(p - gamma_hat_p)| " +
                      fmt("%.2g", worst));
    return pass;
}

bool criterion5() {
    struct Start {
        double x, y;
    };
    struct McCase {
        double g;
        int n;
        std::vector<Start> starts;
    };
    const double p = 2.0;
    const std::size_t paths = 100000;
    std::vector<McCase> cases{{0.5, 0, {{1.0, 0.5}, {0.5, 0.2}, {2.0, 1.0}}},
                              {0.8, 1, {{0.3, 1.0}, {0.5, 1.0}, {1.0, 2.0}}}};
    bool all = true;
    for (const auto& c : cases) {
        auto t = scale_closed_form(c.g);
        auto u = UtilitySpec::power(p);
        auto spec = MarketSpec::gbm(c.g / 2.0, 1.0);
        auto w = std::make_shared<const GridWindow>(lattice_window(t, u, base_lattice()));
        auto plan = build_plan(build_ubar(u, t, w), c.n);
        for (const auto& st : c.starts) {
            std::size_t ix = std::size_t(std::lower_bound(w->x_axis.begin(), w->x_axis.end(), st.x) - w->x_axis.begin());
            double x0 = w->x_axis[ix];
            double z0 = t.s(st.y);
            auto t0 = std::chrono::steady_clock::now();
            auto a = simulate_strategy(plan, x0, z0, paths, 42, SimMode::exact_exit(), t, spec);
            double sa = seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            auto b = simulate_strategy(plan, x0, z0, paths, 43, SimMode::path_sim(1e-3), t, spec);
            double sb = seconds_since(t0);
            double za = (a.mean - a.target) / a.std_error;
            double zb = (b.mean - b.target) / b.std_error;
            double ma = (a.mean_x_terminal - x0) / a.stderr_x_terminal;
            double mb = (b.mean_x_terminal - x0) / b.stderr_x_terminal;
            double comb = std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
            double zab = (a.mean - b.mean) / comb;
            auto small = [](double v) { return !std::isfinite(v) || std::fabs(v) <= 3.0; };
            // A zero standard error means a deterministic quantity; it must then be exact.
            bool ok = (a.std_error > 0 ? std::fabs(za) <= 3.0 : a.mean == a.target) &&
                      (b.std_error > 0 ? std::fabs(zb) <= 3.0 : b.mean == b.target) &&
                      (a.stderr_x_terminal > 0 ? std::fabs(ma) <= 3.0 : a.mean_x_terminal == x0) &&
                      (b.stderr_x_terminal > 0 ? std::fabs(mb) <= 3.0 : b.mean_x_terminal == x0) &&
                      small(zab) && sa < 60.0 && sb < 60.0;
            all = all && ok;
            auto se = [](double v) { return std::isfinite(v) ? fmt("%.2f se", v) : std::string("exact"); };
            std::printf("  %s gamma=%.1f n=%d (x0=%.4g, y0=%.3g) target %.8g  exact: %.8g (%s) mart %s, "
                        "%.1f s  path: %.8g (%s) mart %s, %.1f s  modes %s\n",
                        ok ? "ok  " : "MISS", c.g, c.n, x0, st.y, a.target, a.mean, se(za).c_str(), se(ma).c_str(),
                        sa, b.mean, se(zb).c_str(), se(mb).c_str(), sb, se(zab).c_str());
        }
    }
    line(5, all, "strategy Monte Carlo with 1e5 paths: payoff identity, martingale residual and mode agreement at 3 se");
    return all;
}

struct OrderingStats {
    double order_violation = 0.0;
    double concavity = MINUS_INFINITY;
    double boundary_excess = 0.0;
};

OrderingStats ordering(const ValueGrid& u0, const ValueGrid& m, const ValueGrid& uinf) {
    const GridWindow& w = *u0.window;
    OrderingStats s;
    for (std::size_t k = 0; k < w.nx() * w.nz(); ++k) {
        if (!w.mask[k]) continue;
        double sc = std::max(1.0, std::fabs(u0.values[k]));
        if (!std::isfinite(u0.values[k])) sc = 1.0;
        auto d = [&](double lo, double hi) {
            if (lo == hi) return 0.0;
            return std::max(0.0, (lo - hi) / sc);
        };
        s.order_violation = std::max({s.order_violation, d(u0.values[k], m.values[k]), d(m.values[k], uinf.values[k])});
    }
    auto cd = concavity_defect(uinf);
    s.concavity = std::max(cd.along_z, cd.along_x);
    // Nodes on x + R(z) = 0: the first on-mask node of a row entered from
    // off-mask nodes, or a closure node with R = 0. The first node of other
    // rows is only the truncation edge of the window. Tolerance is two cells
    // of the utility's variation there.
    for (std::size_t i = 0; i < w.nx(); ++i) {
        std::size_t j = 0;
        while (j < w.nz() && !w.on_mask(i, j)) ++j;
        if (j + 2 >= w.nz()) continue;
        if (j == 0 && w.r[0] != 0.0) continue;
        double a = u0.at(i, j), b = uinf.at(i, j);
        if (a == b) continue;
        if (!std::isfinite(a) || !std::isfinite(b)) {
            s.boundary_excess = PLUS_INFINITY;
            continue;
        }
        double cell = std::fabs(u0.at(i, j + 1) - a);
        if (!std::isfinite(cell)) cell = std::fabs(u0.at(i, j + 2) - u0.at(i, j + 1));
        double excess = std::fabs(b - a) - 2.0 * cell;
        s.boundary_excess = std::max(s.boundary_excess, excess / std::max(1.0, std::fabs(a)));
    }
    return s;
}

bool criterion6(const std::vector<ProbeRun>& runs, const std::vector<std::pair<std::string, Solution>>& extra) {
    bool all = true;
    std::size_t count = 0;
    auto check = [&](const std::string& name, const ValueGrid& u0, const Solution& s) {
        if (s.report.status != SolveStatus::Converged) return;
        ++count;
        auto st = ordering(u0, s.first, s.value);
        bool ok = st.order_violation == 0.0 && st.concavity <= 1e-9 && st.boundary_excess <= 0.0;
        all = all && ok;
        std::printf("  %s %-38s order violation %.2e  concavity defect %.2e (tol 1e-9)  boundary excess %.2e\n",
                    ok ? "ok  " : "MISS", name.c_str(), st.order_violation, st.concavity, st.boundary_excess);
    };
    for (const auto& r : runs) {
        if (r.closed) check(probe_name(r.pr) + " closed-form", r.u0, *r.closed);
        if (r.contact) check(probe_name(r.pr) + " contact", r.u0, r.contact->base);
    }
    for (const auto& [name, s] : extra) {
        check(name, s.history.empty() ? s.value : s.history.front(), s);
    }
    line(6, all && count > 0, "ordering U0 <= m <= Uinf, bi-concavity and mask-boundary identity on " +
                                  std::to_string(count) + " converged solves");
    return all && count > 0;
}

struct Deferred {
    bool pass = false;
    std::string text;
};

Deferred criterion7(std::vector<std::pair<std::string, Solution>>& extra) {
    const double g = 0.5, p = 2.0;
    auto u = UtilitySpec::power(p);
    auto spec = MarketSpec::gbm(g / 2.0, 1.0);
    Lattice l = power_lattice(DECADES, NODES, NODES, false, X_RES);
    double ylo = std::exp(l.t0 + l.hy * l.ky_lo), yhi = std::exp(l.t0 + l.hy * l.ky_hi);
    auto tc = scale_closed_form(g);
    auto tn = scale_numeric(spec, 1.0, {ylo / 1.01, yhi * 1.01}, 4097);
    auto wc = std::make_shared<const GridWindow>(lattice_window(tc, u, l));
    auto wn = std::make_shared<const GridWindow>(lattice_window(tn, u, l));
    SolverOptions o;
    o.keep_history = true;
    auto t0 = std::chrono::steady_clock::now();
    auto sc = iterate_to_fixed_point(build_ubar(u, tc, wc), o);
    auto sn = iterate_to_fixed_point(build_ubar(u, tn, wn), o);
    double sec = seconds_since(t0);
    // The same y nodes; z' = (z - 1) / 0.5 is the affine map between the
    // closed-form and the normalized scale.
    double zmap = 0.0;
    for (std::size_t j = 0; j < wc->nz(); ++j)
        zmap = std::max(zmap, std::fabs(wn->z_axis[j] - (wc->z_axis[j] - 1.0) / 0.5) /
                                  std::max(1.0, std::fabs(wn->z_axis[j])));
    double vdiff = 0.0;
    for (std::size_t k = 0; k < sc.value.values.size(); ++k) {
        double a = sc.value.values[k], b = sn.value.values[k];
        if (a == b) continue;
        vdiff = std::max(vdiff, std::fabs(a - b) / std::max(1.0, std::fabs(a)));
    }
    auto bc = gambling_benefit(sc.value, sc.first), bn = gambling_benefit(sn.value, sn.first);
    bool same_mask = bc == bn && wc->mask == wn->mask;
    bool both = sc.report.status == SolveStatus::Converged && sn.report.status == SolveStatus::Converged;
    bool pass = both && vdiff <= 1e-8 && same_mask;
    Deferred d{pass, "numeric vs closed-form scale for (p=2, gamma=0.5): max rel V diff " + fmt("%.2e", vdiff) +
                      " (tol 1e-8), z map residual " + fmt("%.1e", zmap) + ", benefit masks " +
                      (same_mask ? "identical" : "differ") + ", statuses " + to_string(sc.report.status) + "/" +
                      to_string(sn.report.status) + ", " + fmt("%.1f", sec) + " s"};
    extra.emplace_back("(p=2, gamma=0.5) numeric scale", std::move(sn));
    extra.emplace_back("(p=2, gamma=0.5) closed-form scale", std::move(sc));
    return d;
}

}  // namespace

int main() {
    std::vector<bool> results;
    results.push_back(criterion1());

    std::vector<ProbeRun> runs;
    for (const auto& pr : PROBES) runs.push_back(run_probe(pr));
    results.push_back(criterion2(runs));
    results.push_back(criterion3(runs));
    results.push_back(criterion4());
    results.push_back(criterion5());
    std::vector<std::pair<std::string, Solution>> extra;
    Deferred r7 = criterion7(extra);
    results.push_back(criterion6(runs, extra));
    line(7, r7.pass, r7.text);
    results.push_back(r7.pass);

    int failed = int(std::count(results.begin(), results.end(), false));
    std::printf("acceptance: %d of %zu criteria pass\n", int(results.size()) - failed, results.size());
    return failed == 0 ? 0 : 1;
}
