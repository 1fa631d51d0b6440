#include "illiquid/market_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace illiquid {

MarketSpec MarketSpec::gbm(double mu, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("MarketSpec: sigma must be positive");
    return MarketSpec{GBM{mu, sigma}};
}

MarketSpec MarketSpec::general(std::function<double(double)> mu,
                               std::function<double(double)> sigma) {
    if (!mu || !sigma) throw std::invalid_argument("MarketSpec: missing coefficient");
    return MarketSpec{GeneralDiffusion{std::move(mu), std::move(sigma)}};
}

namespace {

std::function<double(double)> piecewise(std::vector<double> xs, std::vector<double> vs) {
    if (xs.size() != vs.size() || xs.empty())
        throw std::invalid_argument("sampled profile: size mismatch");
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] > xs[i - 1]))
            throw std::invalid_argument("sampled profile: abscissae must increase");
    return [xs = std::move(xs), vs = std::move(vs)](double x) {
        if (x <= xs.front()) return vs.front();
        if (x >= xs.back()) return vs.back();
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        std::size_t k = std::size_t(it - xs.begin());
        double lam = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
        return vs[k - 1] + lam * (vs[k] - vs[k - 1]);
    };
}

}  // namespace

MarketSpec MarketSpec::sampled(std::vector<double> ys, std::vector<double> mus,
                               std::vector<double> sigmas) {
    for (double s : sigmas)
        if (!(s > 0.0)) throw std::invalid_argument("MarketSpec: sigma must be positive");
    auto sig = piecewise(ys, std::move(sigmas));
    return MarketSpec::general(piecewise(std::move(ys), std::move(mus)), std::move(sig));
}

double MarketSpec::mu_at(double y) const {
    if (auto* g = std::get_if<GBM>(&kind)) return g->mu;
    return std::get<GeneralDiffusion>(kind).mu(y);
}

double MarketSpec::sigma_at(double y) const {
    if (auto* g = std::get_if<GBM>(&kind)) return g->sigma;
    return std::get<GeneralDiffusion>(kind).sigma(y);
}

double gamma_of(const MarketSpec& spec) {
    auto* g = std::get_if<GBM>(&spec.kind);
    if (!g) throw std::invalid_argument("gamma_of: only defined for constant coefficients");
    if (!(g->sigma > 0.0)) throw std::invalid_argument("gamma_of: sigma must be positive");
    return 2.0 * g->mu / (g->sigma * g->sigma);
}

UtilitySpec UtilitySpec::power(double p) {
    if (!(p > 0.0)) throw std::invalid_argument("UtilitySpec: p must be positive");
    return UtilitySpec{PowerUtility{p}};
}

UtilitySpec UtilitySpec::custom(std::vector<double> ws, std::vector<double> us) {
    if (ws.size() != us.size() || ws.size() < 2)
        throw std::invalid_argument("UtilitySpec: need at least two samples");
    double prev_slope = PLUS_INFINITY;
    for (std::size_t i = 1; i < ws.size(); ++i) {
        if (!(ws[i] > ws[i - 1]) || ws[0] < 0.0)
            throw std::invalid_argument("UtilitySpec: abscissae must increase from w >= 0");
        double s = (us[i] - us[i - 1]) / (ws[i] - ws[i - 1]);
        if (s < 0.0) throw std::invalid_argument("UtilitySpec: profile must be nondecreasing");
        if (s > prev_slope * (1.0 + 1e-12) + 1e-300)
            throw std::invalid_argument("UtilitySpec: profile must be concave");
        prev_slope = s;
    }
    return UtilitySpec{CustomUtility{std::move(ws), std::move(us)}};
}

double UtilitySpec::operator()(double w) const {
    if (std::isnan(w)) return w;
    if (w < 0.0) return MINUS_INFINITY;
    if (auto* pw = std::get_if<PowerUtility>(&kind)) {
        double p = pw->p;
        if (w == PLUS_INFINITY) return sup();
        if (p == 1.0) return w > 0.0 ? std::log(w) : MINUS_INFINITY;
        if (w == 0.0) return p < 1.0 ? -1.0 / (1.0 - p) : MINUS_INFINITY;
        return std::expm1((1.0 - p) * std::log(w)) / (1.0 - p);
    }
    const auto& c = std::get<CustomUtility>(kind);
    if (w == PLUS_INFINITY) return sup();
    const auto& ws = c.ws;
    const auto& us = c.us;
    std::size_t k;
    if (w <= ws.front()) {
        k = 1;
    } else if (w >= ws.back()) {
        k = ws.size() - 1;
    } else {
        k = std::size_t(std::upper_bound(ws.begin(), ws.end(), w) - ws.begin());
    }
    double slope = (us[k] - us[k - 1]) / (ws[k] - ws[k - 1]);
    return us[k - 1] + slope * (w - ws[k - 1]);
}

double UtilitySpec::sup() const {
    if (auto* pw = std::get_if<PowerUtility>(&kind))
        return pw->p > 1.0 ? 1.0 / (pw->p - 1.0) : PLUS_INFINITY;
    const auto& c = std::get<CustomUtility>(kind);
    std::size_t n = c.ws.size();
    double slope = (c.us[n - 1] - c.us[n - 2]) / (c.ws[n - 1] - c.ws[n - 2]);
    return slope > 0.0 ? PLUS_INFINITY : c.us.back();
}

std::optional<double> UtilitySpec::power_p() const {
    if (auto* pw = std::get_if<PowerUtility>(&kind)) return pw->p;
    return std::nullopt;
}

struct ScaleTransform::Table {
    std::vector<double> t;    // log y nodes
    std::vector<double> s;    // S at nodes
    std::vector<double> ds;   // dS/dt at nodes
    std::vector<double> lsp;  // log S' at nodes
    std::function<double(double)> a;  // d(log S')/dt
    double h = 0.0;

    std::size_t cell(double tt) const {
        std::size_t k = std::size_t((tt - t.front()) / h);
        if (k >= t.size() - 1) k = t.size() - 2;
        while (k > 0 && tt < t[k]) --k;
        while (k + 2 < t.size() && tt > t[k + 1]) ++k;
        return k;
    }

    double hermite(std::size_t k, double tt, double* deriv = nullptr) const {
        double dt = t[k + 1] - t[k];
        double u = (tt - t[k]) / dt;
        double m0 = ds[k] * dt;
        double m1 = ds[k + 1] * dt;
        double u2 = u * u, u3 = u2 * u;
        double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u, h01 = -2 * u3 + 3 * u2,
               h11 = u3 - u2;
        if (deriv) {
            double d00 = 6 * u2 - 6 * u, d10 = 3 * u2 - 4 * u + 1, d01 = -6 * u2 + 6 * u,
                   d11 = 3 * u2 - 2 * u;
            *deriv = (d00 * s[k] + d10 * m0 + d01 * s[k + 1] + d11 * m1) / dt;
        }
        return h00 * s[k] + h10 * m0 + h01 * s[k + 1] + h11 * m1;
    }
};

namespace {

void check_window(const Interval& w, double y) {
    if (!(y >= w.lo && y <= w.hi))
        throw std::out_of_range("scale transform: y=" + std::to_string(y) +
                                " outside the tabulated window");
}

}  // namespace

double ScaleTransform::s(double y) const {
    if (mode_ == Mode::ClosedForm) {
        double g = *gamma_;
        if (y == 0.0) return z_domain_.lo;
        if (y == PLUS_INFINITY) return z_domain_.hi;
        if (!(y > 0.0)) throw std::domain_error("scale transform: y must be positive");
        if (g == 1.0) return std::log(y);
        double v = std::pow(y, 1.0 - g);
        return g < 1.0 ? v : -v;
    }
    check_window(y_window_, y);
    double tt = std::log(y);
    const Table& tb = *table_;
    return tb.hermite(tb.cell(tt), tt);
}

double ScaleTransform::s_prime(double y) const {
    if (mode_ == Mode::ClosedForm) {
        double g = *gamma_;
        if (!(y > 0.0)) throw std::domain_error("scale transform: y must be positive");
        if (g == 1.0) return 1.0 / y;
        return std::fabs(1.0 - g) * std::pow(y, -g);
    }
    check_window(y_window_, y);
    const Table& tb = *table_;
    double tt = std::log(y);
    std::size_t k = tb.cell(tt);
    if (tt - tb.t[k] > tb.t[k + 1] - tt) ++k;
    double l = tb.lsp[k] + integrate(tb.a, tb.t[k], tt, 1e-13).value;
    return std::exp(l);
}

double ScaleTransform::r(double z) const {
    if (mode_ == Mode::ClosedForm) {
        if (!z_domain_.contains(z))
            throw std::domain_error("scale transform: z outside z_domain");
        double g = *gamma_;
        if (g == 1.0) return std::exp(z);
        double a = g < 1.0 ? z : -z;
        return std::pow(a, 1.0 / (1.0 - g));
    }
    const Table& tb = *table_;
    if (!(z >= tb.s.front() && z <= tb.s.back()))
        throw std::out_of_range("scale transform: z outside the tabulated window");
    if (z == tb.s.front()) return y_window_.lo;
    if (z == tb.s.back()) return y_window_.hi;
    std::size_t k = std::size_t(std::upper_bound(tb.s.begin(), tb.s.end(), z) - tb.s.begin());
    k = std::min(std::max<std::size_t>(k, 1), tb.s.size() - 1) - 1;
    if (z == tb.s[k]) return std::exp(tb.t[k]);
    auto f = [&](double tt) { return tb.hermite(k, tt) - z; };
    auto df = [&](double tt) {
        double d;
        tb.hermite(k, tt, &d);
        return d;
    };
    RootResult rr = newton_bracketed(f, df, tb.t[k], tb.t[k + 1], 0.0, 200);
    return std::exp(rr.x);
}

Interval ScaleTransform::z_window() const {
    if (mode_ == Mode::ClosedForm) return z_domain_;
    return {table_->s.front(), table_->s.back()};
}

double ScaleTransform::r_closure(double z) const {
    if (z == z_domain_.lo && std::isfinite(z) && mode_ == Mode::ClosedForm) return 0.0;
    if (z == z_domain_.hi && std::isfinite(z) && mode_ == Mode::ClosedForm) return PLUS_INFINITY;
    return r(z);
}

ScaleTransform scale_closed_form(double gamma) {
    ScaleTransform t;
    t.mode_ = ScaleTransform::Mode::ClosedForm;
    t.gamma_ = gamma;
    t.c_ = 1.0;
    if (gamma < 1.0)
        t.z_domain_ = {0.0, PLUS_INFINITY};
    else if (gamma > 1.0)
        t.z_domain_ = {MINUS_INFINITY, 0.0};
    else
        t.z_domain_ = {MINUS_INFINITY, PLUS_INFINITY};
    return t;
}

ScaleTransform scale_numeric(const MarketSpec& spec, double c, Interval window, int nodes) {
    if (!(window.lo > 0.0 && window.hi > window.lo && std::isfinite(window.hi)))
        throw std::invalid_argument("scale_numeric: window must be a finite subset of (0, inf)");
    if (!(c >= window.lo && c <= window.hi))
        throw std::invalid_argument("scale_numeric: normalization point outside window");
    if (nodes < 3) throw std::invalid_argument("scale_numeric: need at least three nodes");

    auto tb = std::make_shared<ScaleTransform::Table>();
    tb->a = [spec](double tt) {
        double y = std::exp(tt);
        double sg = spec.sigma_at(y);
        if (!(sg > 0.0)) throw std::domain_error("scale_numeric: sigma must be positive");
        return -2.0 * spec.mu_at(y) / (sg * sg);
    };
    double t0 = std::log(window.lo);
    double t1 = std::log(window.hi);
    std::size_t n = std::size_t(nodes);
    tb->h = (t1 - t0) / double(n - 1);
    tb->t.resize(n);
    for (std::size_t k = 0; k < n; ++k) tb->t[k] = t0 + double(k) * tb->h;
    tb->t.back() = t1;
    tb->s.assign(n, 0.0);
    tb->ds.assign(n, 0.0);
    tb->lsp.assign(n, 0.0);

    const double tc = std::log(c);
    auto lsp_from = [&](double base_t, double base_l, double tt) {
        return base_l + integrate(tb->a, base_t, tt, 1e-13).value;
    };
    auto s_increment = [&](double base_t, double base_l, double ta, double tb_) {
        auto integrand = [&](double u) { return std::exp(lsp_from(base_t, base_l, u) + u); };
        return integrate(integrand, ta, tb_, 1e-12).value;
    };

    std::size_t kc = tb->cell(tc);
    // nodes above c
    double prev_t = tc, prev_l = 0.0, prev_s = 0.0;
    for (std::size_t k = kc + 1; k < n; ++k) {
        double l = lsp_from(prev_t, prev_l, tb->t[k]);
        double sv = prev_s + s_increment(prev_t, prev_l, prev_t, tb->t[k]);
        tb->lsp[k] = l;
        tb->s[k] = sv;
        prev_t = tb->t[k];
        prev_l = l;
        prev_s = sv;
    }
    prev_t = tc;
    prev_l = 0.0;
    prev_s = 0.0;
    for (std::size_t kk = kc + 1; kk-- > 0;) {
        double l = lsp_from(prev_t, prev_l, tb->t[kk]);
        double sv = prev_s + s_increment(prev_t, prev_l, prev_t, tb->t[kk]);
        tb->lsp[kk] = l;
        tb->s[kk] = sv;
        prev_t = tb->t[kk];
        prev_l = l;
        prev_s = sv;
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (!std::isfinite(tb->lsp[k]) || !std::isfinite(tb->s[k]))
            throw std::runtime_error("scale_numeric: S' under/overflow, window truncation needed");
        tb->ds[k] = std::exp(tb->lsp[k] + tb->t[k]);
    }
    // Fritsch-Carlson safeguard on the Hermite slopes.
    for (std::size_t k = 0; k + 1 < n; ++k) {
        double dt = tb->t[k + 1] - tb->t[k];
        double delta = (tb->s[k + 1] - tb->s[k]) / dt;
        if (!(delta > 0.0)) throw std::runtime_error("scale_numeric: S is not increasing");
        double al = tb->ds[k] / delta, be = tb->ds[k + 1] / delta;
        double q = al * al + be * be;
        if (q > 9.0) {
            double tau = 3.0 / std::sqrt(q);
            tb->ds[k] = tau * al * delta;
            tb->ds[k + 1] = tau * be * delta;
        }
    }

    ScaleTransform t;
    t.mode_ = ScaleTransform::Mode::Numeric;
    t.c_ = c;
    if (spec.is_gbm()) t.gamma_ = gamma_of(spec);
    t.y_window_ = window;
    t.z_domain_ = {tb->s.front(), tb->s.back()};
    t.table_ = std::move(tb);
    return t;
}

double sigma_tilde(const ScaleTransform& t, const MarketSpec& spec, double z) {
    if (!t.z_domain().contains(z)) throw std::domain_error("sigma_tilde: z outside z_domain");
    double y = t.r(z);
    return y * t.s_prime(y) * spec.sigma_at(y);
}

PathExit::PathExit(std::size_t idx, double z)
    : std::runtime_error("z path left the domain at step " + std::to_string(idx)),
      index(idx),
      value(z) {}

ZStepper::ZStepper(const ScaleTransform& t, const MarketSpec& spec, double dt)
    : kind_(Kind::Euler), dt_(dt), t_(&t), spec_(&spec) {
    if (!(dt > 0.0)) throw std::invalid_argument("ZStepper: dt must be positive");
    if (spec.is_gbm() && !(spec.sigma_at(1.0) > 0.0))
        throw std::invalid_argument("ZStepper: degenerate volatility");
    if (t.mode() == ScaleTransform::Mode::ClosedForm && spec.is_gbm()) {
        double g = *t.gamma();
        double sg = spec.sigma_at(1.0);
        if (g == 1.0) {
            kind_ = Kind::Arithmetic;
            vol_ = sg * std::sqrt(dt);
        } else {
            kind_ = Kind::ExactLog;
            double v = std::fabs(1.0 - g) * sg;
            vol_ = v * std::sqrt(dt);
            drift_ = -0.5 * v * v * dt;
        }
    }
}

double ZStepper::step(double z, double gaussian) const {
    switch (kind_) {
        case Kind::ExactLog:
            return z * std::exp(vol_ * gaussian + drift_);
        case Kind::Arithmetic:
            return z + vol_ * gaussian;
        case Kind::Euler:
            break;
    }
    double st = sigma_tilde(*t_, *spec_, z);
    return z + st * std::sqrt(dt_) * gaussian;
}

std::vector<double> sample_z_path(const ScaleTransform& t, const MarketSpec& spec, double z0,
                                  double dt, double horizon, Philox& rng) {
    if (!t.z_domain().contains(z0)) throw std::domain_error("sample_z_path: z0 not interior");
    if (!(horizon >= 0.0)) throw std::invalid_argument("sample_z_path: negative horizon");
    ZStepper stepper(t, spec, dt);
    std::size_t steps = std::size_t(std::llround(horizon / dt));
    std::vector<double> path;
    path.reserve(steps + 1);
    path.push_back(z0);
    double z = z0;
    for (std::size_t k = 1; k <= steps; ++k) {
        z = stepper.step(z, rng.normal());
        if (!t.z_domain().contains(z)) throw PathExit(k, z);
        path.push_back(z);
    }
    return path;
}

}  // namespace illiquid
