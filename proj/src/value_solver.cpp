#include "illiquid/value_solver.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "illiquid/envelope.hpp"

namespace illiquid {

namespace {
std::atomic<unsigned> requested_workers{0};
}

void set_worker_count(unsigned workers) { requested_workers = workers; }

unsigned worker_count() {
    unsigned w = requested_workers;
    return w ? w : std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f) {
    std::size_t workers = std::min<std::size_t>(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) f(i);
        });
    }
    for (auto& th : pool) th.join();
}

Lattice power_lattice(double decades, int nx, int nz, bool closure, double x_res) {
    if (!(decades > 0.0)) throw std::invalid_argument("power_lattice: decades must be positive");
    int ny = closure ? nz - 1 : nz;
    if (nx < 16 || ny < 16) throw std::invalid_argument("power_lattice: at least 16 nodes per axis");
    Lattice l;
    double ylo = std::pow(10.0, -decades), yhi = std::pow(10.0, decades);
    l.t0 = std::log(ylo);
    l.hy = (std::log(yhi) - l.t0) / (ny - 1);
    l.ky_lo = 0;
    l.ky_hi = ny - 1;
    if (!(x_res > 0.0)) throw std::invalid_argument("power_lattice: x_res must be positive");
    l.c = x_res * ylo;
    l.kx_lo = -((nx - 1) / 2);
    l.kx_hi = l.kx_lo + nx - 1;
    l.hx = std::asinh(2.0 * yhi / l.c) / (-l.kx_lo);
    l.closure = closure;
    return l;
}

Lattice widen(const Lattice& l, double factor) {
    if (!(factor >= 1.0)) throw std::invalid_argument("widen: factor must be at least 1");
    Lattice w = l;
    int ex = int(std::lround(0.5 * (factor - 1.0) * l.nx()));
    int ey = int(std::lround(0.5 * (factor - 1.0) * l.ny()));
    w.kx_lo -= ex;
    w.kx_hi += ex;
    w.ky_lo -= ey;
    w.ky_hi += ey;
    return w;
}

std::vector<double> uniform_axis(double lo, double hi, std::size_t n) {
    if (n < 2 || !(hi > lo)) throw std::invalid_argument("uniform_axis: need n >= 2 and hi > lo");
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = lo + (hi - lo) * double(i) / double(n - 1);
    a.back() = hi;
    return a;
}

namespace {

void check_axis(const std::vector<double>& a, const char* name) {
    if (a.size() < 2) throw std::invalid_argument(std::string(name) + ": at least two nodes");
    for (std::size_t i = 1; i < a.size(); ++i)
        if (!(a[i] > a[i - 1]))
            throw std::invalid_argument(std::string(name) + " must increase strictly");
    for (double v : a)
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(name) + ": non-finite node");
}

}  // namespace

GridWindow make_window(const ScaleTransform& t, std::vector<double> xs, std::vector<double> zs) {
    check_axis(xs, "x axis");
    check_axis(zs, "z axis");
    Interval zw = t.z_window();
    bool numeric = t.mode() == ScaleTransform::Mode::Numeric;
    GridWindow w;
    w.r.resize(zs.size());
    for (std::size_t j = 0; j < zs.size(); ++j) {
        double z = zs[j];
        bool inside = numeric ? (z >= zw.lo && z <= zw.hi) : (z >= zw.lo && z <= zw.hi);
        if (!inside) throw std::invalid_argument("window: z node outside the transform's z range");
        w.r[j] = t.r_closure(z);
    }
    w.x_axis = std::move(xs);
    w.z_axis = std::move(zs);
    w.mask.assign(w.nx() * w.nz(), 0);
    for (std::size_t i = 0; i < w.nx(); ++i)
        for (std::size_t j = 0; j < w.nz(); ++j)
            w.mask[w.index(i, j)] = w.x_axis[i] + w.r[j] >= 0.0;
    return w;
}

GridWindow lattice_window(const ScaleTransform& t, const UtilitySpec& u, const Lattice& l) {
    std::vector<double> xs, zs;
    xs.reserve(l.nx());
    for (int k = l.kx_lo; k <= l.kx_hi; ++k) xs.push_back(k == 0 ? 0.0 : l.c * std::sinh(l.hx * k));
    std::vector<double> ys;
    for (int k = l.ky_lo; k <= l.ky_hi; ++k) ys.push_back(std::exp(l.t0 + l.hy * k));
    bool low_closure = false, high_closure = false;
    if (l.closure && t.mode() == ScaleTransform::Mode::ClosedForm) {
        Interval d = t.z_domain();
        low_closure = std::isfinite(d.lo);
        high_closure = std::isfinite(d.hi) && std::isfinite(u.sup());
    }
    if (low_closure) zs.push_back(t.z_domain().lo);
    for (double y : ys) zs.push_back(t.s(y));
    if (high_closure) zs.push_back(t.z_domain().hi);
    GridWindow w = make_window(t, std::move(xs), std::move(zs));
    w.lattice = l;
    return w;
}

ValueGrid build_ubar(const UtilitySpec& u, const ScaleTransform& t,
                     std::shared_ptr<const GridWindow> w) {
    if (!w) throw std::invalid_argument("build_ubar: null window");
    ValueGrid g;
    g.window = w;
    g.values.assign(w->nx() * w->nz(), MINUS_INFINITY);
    std::size_t on = 0;
    for (std::size_t i = 0; i < w->nx(); ++i)
        for (std::size_t j = 0; j < w->nz(); ++j) {
            std::size_t k = w->index(i, j);
            if (!w->mask[k]) continue;
            g.values[k] = u(w->x_axis[i] + w->r[j]);
            if (g.values[k] != MINUS_INFINITY) ++on;
        }
    if (on == 0) throw std::invalid_argument("build_ubar: empty domain mask");
    if (t.mode() == ScaleTransform::Mode::ClosedForm && std::isfinite(t.z_domain().hi) &&
        u.sup() == PLUS_INFINITY)
        g.divergence_certificate =
            "z domain has a finite upper edge where the utility is unbounded; "
            "every z-envelope is +inf in the interior";
    return g;
}

namespace {

struct LineScratch {
    std::vector<double> xs, fs, out;
    std::vector<std::size_t> stack;
    void resize(std::size_t n) {
        xs.resize(n);
        fs.resize(n);
        out.resize(n);
        stack.resize(n);
    }
};

void seed_endpoints(LineScratch& s, const Boundary& b, int level,
                    const std::function<std::pair<double, double>(std::size_t)>& coords) {
    if (b.mode != BoundaryMode::ClosedForm) return;
    if (!b.evaluator) throw std::invalid_argument("closed-form boundary without an evaluator");
    std::size_t n = s.fs.size();
    std::size_t lo = 0;
    while (lo < n && s.fs[lo] == MINUS_INFINITY) ++lo;
    if (lo + 1 >= n) return;
    std::size_t hi = n - 1;
    while (s.fs[hi] == MINUS_INFINITY) --hi;
    if (hi <= lo) return;
    for (std::size_t k : {lo, hi}) {
        auto [x, z] = coords(k);
        double v = b.evaluator(level, x, z);
        if (std::isnan(v) || v == PLUS_INFINITY)
            throw std::domain_error("closed-form boundary: evaluator is not finite at a line end");
        s.fs[k] = std::max(s.fs[k], v);
    }
}

}  // namespace

ValueGrid concavify_z(const ValueGrid& g, const Boundary& boundary) {
    const GridWindow& w = *g.window;
    ValueGrid out = g;
    out.n = g.n + 1;
    std::size_t nz = w.nz();
    parallel_for(w.nx(), [&](std::size_t i) {
        LineScratch s;
        s.resize(nz);
        std::copy(w.z_axis.begin(), w.z_axis.end(), s.xs.begin());
        for (std::size_t j = 0; j < nz; ++j) s.fs[j] = g.values[w.index(i, j)];
        seed_endpoints(s, boundary, out.n,
                       [&](std::size_t j) { return std::make_pair(w.x_axis[i], w.z_axis[j]); });
        envelope_line(s.xs, s.fs, s.out, s.stack);
        for (std::size_t j = 0; j < nz; ++j) out.values[w.index(i, j)] = s.out[j];
    });
    return out;
}

ValueGrid concavify_x(const ValueGrid& g, const Boundary& boundary) {
    const GridWindow& w = *g.window;
    ValueGrid out = g;
    out.n = g.n + 1;
    std::size_t nx = w.nx();
    parallel_for(w.nz(), [&](std::size_t j) {
        LineScratch s;
        s.resize(nx);
        std::copy(w.x_axis.begin(), w.x_axis.end(), s.xs.begin());
        for (std::size_t i = 0; i < nx; ++i) s.fs[i] = g.values[w.index(i, j)];
        seed_endpoints(s, boundary, out.n,
                       [&](std::size_t i) { return std::make_pair(w.x_axis[i], w.z_axis[j]); });
        envelope_line(s.xs, s.fs, s.out, s.stack);
        for (std::size_t i = 0; i < nx; ++i) out.values[w.index(i, j)] = s.out[i];
    });
    return out;
}

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "Converged";
        case SolveStatus::Diverging: return "Diverging";
        case SolveStatus::MaxIterations: return "MaxIterations";
    }
    return "unknown";
}

double sup_delta(const ValueGrid& next, const ValueGrid& prev) {
    if (next.values.size() != prev.values.size())
        throw std::invalid_argument("sup_delta: window mismatch");
    double d = 0.0;
    for (std::size_t k = 0; k < next.values.size(); ++k) {
        double a = next.values[k], b = prev.values[k];
        if (a == b) continue;
        if (!std::isfinite(a) || !std::isfinite(b)) return PLUS_INFINITY;
        d = std::max(d, std::fabs(a - b) / std::max(1.0, std::fabs(b)));
    }
    return d;
}

Solution iterate_to_fixed_point(const ValueGrid& g0, const SolverOptions& opt) {
    Solution sol;
    IterationReport& rep = sol.report;
    if (opt.keep_history) sol.history.push_back(g0);
    if (g0.divergence_certificate) {
        rep.status = SolveStatus::Diverging;
        rep.reason = *g0.divergence_certificate;
        sol.value = g0;
        sol.first = g0;
        return sol;
    }
    ValueGrid cur = g0;
    for (int k = 1; k <= opt.max_iter; ++k) {
        ValueGrid next = (k % 2 == 1) ? concavify_z(cur, opt.boundary) : concavify_x(cur, opt.boundary);
        double d = sup_delta(next, cur);
        rep.sup_deltas.push_back(d);
        if (k == 1) sol.first = next;
        if (opt.keep_history) sol.history.push_back(next);
        std::size_t hits = 0;
        for (double v : next.values)
            if (v > opt.cap) ++hits;
        rep.cap_hits = hits;
        cur = std::move(next);
        if (d <= opt.fp_tol) {
            rep.status = SolveStatus::Converged;
            rep.n_final = k - 1;
            sol.value = std::move(cur);
            return sol;
        }
        std::size_t m = rep.sup_deltas.size();
        if (hits > 0 && m >= 3 && rep.sup_deltas[m - 3] < rep.sup_deltas[m - 2] &&
            rep.sup_deltas[m - 2] < rep.sup_deltas[m - 1]) {
            rep.status = SolveStatus::Diverging;
            rep.reason = "values exceed the cap with strictly increasing changes";
            sol.value = std::move(cur);
            return sol;
        }
    }
    rep.status = SolveStatus::MaxIterations;
    rep.reason = "no fixed point within max_iter envelopes";
    sol.value = std::move(cur);
    if (sol.first.values.empty()) sol.first = sol.value;
    return sol;
}

ValueGrid no_trade_value(const ValueGrid& g0, const Boundary& boundary) {
    return concavify_z(g0, boundary);
}

std::vector<std::uint8_t> gambling_benefit(const ValueGrid& uinf, const ValueGrid& u1, double tol) {
    if (uinf.values.size() != u1.values.size() || uinf.window->nx() != u1.window->nx())
        throw std::invalid_argument("gambling_benefit: window mismatch");
    std::vector<std::uint8_t> b(uinf.values.size(), 0);
    for (std::size_t k = 0; k < b.size(); ++k) {
        double a = uinf.values[k], c = u1.values[k];
        if (a == MINUS_INFINITY || c == MINUS_INFINITY) continue;
        if (a == PLUS_INFINITY) {
            b[k] = c != PLUS_INFINITY;
            continue;
        }
        b[k] = a > c + tol * std::max(1.0, std::fabs(c));
    }
    return b;
}

namespace {

std::size_t cell(const std::vector<double>& axis, double v, const char* name) {
    if (!(v >= axis.front() && v <= axis.back()))
        throw std::out_of_range(std::string("v_of_xy: ") + name + " outside the window");
    auto it = std::upper_bound(axis.begin(), axis.end(), v);
    std::size_t i = std::size_t(it - axis.begin());
    if (i == 0) i = 1;
    if (i >= axis.size()) i = axis.size() - 1;
    return i - 1;
}

}  // namespace

double v_of_xy(const ValueGrid& g, const ScaleTransform& t, double x, double y) {
    const GridWindow& w = *g.window;
    double z = t.s(y);
    std::size_t i = cell(w.x_axis, x, "x");
    std::size_t j = cell(w.z_axis, z, "z");
    double tx = (x - w.x_axis[i]) / (w.x_axis[i + 1] - w.x_axis[i]);
    double tz = (z - w.z_axis[j]) / (w.z_axis[j + 1] - w.z_axis[j]);
    double acc = 0.0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            double wt = (a ? tx : 1.0 - tx) * (b ? tz : 1.0 - tz);
            if (wt == 0.0) continue;
            double v = g.at(i + a, j + b);
            if (!w.on_mask(i + a, j + b) || !std::isfinite(v))
                throw std::out_of_range("v_of_xy: interpolation cell leaves the finite domain");
            acc += wt * v;
        }
    return acc;
}

double v_of_xy(const Solution& s, const ScaleTransform& t, double x, double y) {
    if (s.report.status == SolveStatus::Diverging)
        throw DivergentValue("v_of_xy: the value is +inf in the interior");
    if (s.report.status != SolveStatus::Converged)
        throw std::runtime_error("v_of_xy: solve did not converge");
    return v_of_xy(s.value, t, x, y);
}

SubWindow central_half(const GridWindow& w) {
    double lo = w.x_axis.front(), hi = w.x_axis.back();
    double a = lo + 0.25 * (hi - lo), b = hi - 0.25 * (hi - lo);
    SubWindow s;
    s.ix_lo = std::size_t(std::lower_bound(w.x_axis.begin(), w.x_axis.end(), a) - w.x_axis.begin());
    s.ix_hi = std::size_t(std::upper_bound(w.x_axis.begin(), w.x_axis.end(), b) - w.x_axis.begin());
    s.iz_lo = w.nz() / 4;
    s.iz_hi = 3 * w.nz() / 4;
    return s;
}

namespace {

std::optional<std::size_t> find_node(const std::vector<double>& axis, double v) {
    auto it = std::lower_bound(axis.begin(), axis.end(), v);
    if (it == axis.end() || *it != v) return std::nullopt;
    return std::size_t(it - axis.begin());
}

}  // namespace

double window_drift(const ValueGrid& a, const ValueGrid& b, const SubWindow& sub) {
    const GridWindow& wa = *a.window;
    const GridWindow& wb = *b.window;
    std::vector<std::optional<std::size_t>> mx(wa.nx()), mz(wa.nz());
    for (std::size_t i = sub.ix_lo; i < sub.ix_hi; ++i) mx[i] = find_node(wb.x_axis, wa.x_axis[i]);
    for (std::size_t j = sub.iz_lo; j < sub.iz_hi; ++j) mz[j] = find_node(wb.z_axis, wa.z_axis[j]);
    double d = 0.0;
    for (std::size_t i = sub.ix_lo; i < sub.ix_hi; ++i) {
        if (!mx[i]) continue;
        for (std::size_t j = sub.iz_lo; j < sub.iz_hi; ++j) {
            if (!mz[j]) continue;
            double va = a.at(i, j), vb = b.at(*mx[i], *mz[j]);
            if (va == vb) continue;
            if (!std::isfinite(va) || !std::isfinite(vb)) return PLUS_INFINITY;
            d = std::max(d, std::fabs(va - vb) / std::max(1.0, std::fabs(vb)));
        }
    }
    return d;
}

WideningSolve solve_with_widening(const UtilitySpec& u, const ScaleTransform& t, const Lattice& l,
                                  const SolverOptions& opt, int rounds, double threshold) {
    WideningSolve out;
    auto solve = [&](const Lattice& lat) {
        auto w = std::make_shared<const GridWindow>(lattice_window(t, u, lat));
        return iterate_to_fixed_point(build_ubar(u, t, w), opt);
    };
    out.base = solve(l);
    out.status = out.base.report.status;
    out.check.threshold = threshold;
    if (out.status == SolveStatus::Diverging) {
        out.check.note = "base solve diverged";
        return out;
    }
    SubWindow sub = central_half(*out.base.value.window);
    Lattice cur = l;
    ValueGrid prev = out.base.value;
    for (int r = 0; r < rounds; ++r) {
        cur = widen(cur);
        Solution s = solve(cur);
        if (s.report.status == SolveStatus::Diverging) {
            out.status = SolveStatus::Diverging;
            out.check.performed = true;
            out.check.note = "widened solve diverged: " + s.report.reason;
            return out;
        }
        out.check.increments.push_back(window_drift(prev, s.value, sub));
        prev = std::move(s.value);
    }
    out.check.performed = rounds > 0;
    if (!out.check.increments.empty()) out.check.drift = out.check.increments.front();
    out.check.passed = out.check.performed && out.check.drift <= threshold;
    const auto& inc = out.check.increments;
    if (inc.size() >= 3) {
        bool growing = true;
        for (std::size_t k = inc.size() - 2; k < inc.size(); ++k) growing = growing && inc[k] > inc[k - 1];
        if (growing && inc.back() > threshold) {
            out.status = SolveStatus::Diverging;
            out.check.note = "sub-window values grow strictly with every widening";
        }
    }
    if (out.check.performed && !out.check.passed && out.check.note.empty())
        out.check.note = "window truncation drift exceeds the threshold";
    return out;
}

ConcavityDefect concavity_defect(const ValueGrid& g) {
    const GridWindow& w = *g.window;
    ConcavityDefect d;
    d.along_z = d.along_x = MINUS_INFINITY;
    auto check = [](double x0, double x1, double x2, double f0, double f1, double f2, double& acc) {
        if (!std::isfinite(f0) || !std::isfinite(f1) || !std::isfinite(f2)) return;
        double lam = (x2 - x1) / (x2 - x0);
        double chord = lam * f0 + (1.0 - lam) * f2;
        acc = std::max(acc, (chord - f1) / std::max(1.0, std::fabs(f1)));
    };
    for (std::size_t i = 0; i < w.nx(); ++i)
        for (std::size_t j = 1; j + 1 < w.nz(); ++j)
            check(w.z_axis[j - 1], w.z_axis[j], w.z_axis[j + 1], g.at(i, j - 1), g.at(i, j),
                  g.at(i, j + 1), d.along_z);
    for (std::size_t j = 0; j < w.nz(); ++j)
        for (std::size_t i = 1; i + 1 < w.nx(); ++i)
            check(w.x_axis[i - 1], w.x_axis[i], w.x_axis[i + 1], g.at(i - 1, j), g.at(i, j),
                  g.at(i + 1, j), d.along_x);
    return d;
}

std::string format_double(double v) {
    if (v == PLUS_INFINITY) return "inf";
    if (v == MINUS_INFINITY) return "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_grid_csv(std::ostream& os, const ValueGrid& u0, const ValueGrid& m, const ValueGrid& uinf,
                    const std::vector<std::uint8_t>& benefit) {
    const GridWindow& w = *u0.window;
    os << "x,z,u0,m,uinf,benefit\n";
    for (std::size_t i = 0; i < w.nx(); ++i)
        for (std::size_t j = 0; j < w.nz(); ++j) {
            if (!w.on_mask(i, j)) continue;
            std::size_t k = w.index(i, j);
            os << format_double(w.x_axis[i]) << ',' << format_double(w.z_axis[j]) << ','
               << format_double(u0.values[k]) << ',' << format_double(m.values[k]) << ','
               << format_double(uinf.values[k]) << ',' << int(benefit[k]) << '\n';
        }
}

}  // namespace illiquid
