#include "illiquid/power_closed_form.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace illiquid {

std::string to_string(PowerCase c) {
    switch (c) {
        case PowerCase::NoGamblingNoStopValue: return "NoGamblingNoStopValue";
        case PowerCase::StopOnly: return "StopOnly";
        case PowerCase::StopAndGamble: return "StopAndGamble";
        case PowerCase::InfiniteValue: return "InfiniteValue";
        case PowerCase::GambleHighGamma: return "GambleHighGamma";
        case PowerCase::StopOnlyHighGamma: return "StopOnlyHighGamma";
    }
    return "unknown";
}

std::optional<int> expected_fixed_point(PowerCase c) {
    switch (c) {
        case PowerCase::NoGamblingNoStopValue: return 0;
        case PowerCase::StopOnly:
        case PowerCase::StopOnlyHighGamma: return 1;
        case PowerCase::StopAndGamble:
        case PowerCase::GambleHighGamma: return 2;
        case PowerCase::InfiniteValue: return std::nullopt;
    }
    return std::nullopt;
}

bool is_finite_case(PowerCase c) { return c != PowerCase::InfiniteValue; }

namespace {

double U(double w, double p) {
    if (w < 0.0) return MINUS_INFINITY;
    if (w == PLUS_INFINITY) return p > 1.0 ? 1.0 / (p - 1.0) : PLUS_INFINITY;
    if (p == 1.0) return w > 0.0 ? std::log(w) : MINUS_INFINITY;
    if (w == 0.0) return p < 1.0 ? -1.0 / (1.0 - p) : MINUS_INFINITY;
    return std::expm1((1.0 - p) * std::log(w)) / (1.0 - p);
}

double L_of(double p) { return p > 1.0 ? 1.0 / (p - 1.0) : PLUS_INFINITY; }

// R on the closure of the closed-form z domain.
double R_of(double z, double g) {
    if (g == 1.0) {
        if (!std::isfinite(z)) throw std::domain_error("closed form: z outside the domain");
        return std::exp(z);
    }
    if (g < 1.0) {
        if (!(z >= 0.0) || z == PLUS_INFINITY)
            throw std::domain_error("closed form: z outside the domain");
        return std::pow(z, 1.0 / (1.0 - g));
    }
    if (!(z <= 0.0) || z == MINUS_INFINITY)
        throw std::domain_error("closed form: z outside the domain");
    if (z == 0.0) return PLUS_INFINITY;
    return std::pow(-z, 1.0 / (1.0 - g));
}

double gamma_hat_p1();

}  // namespace

double G(double gamma, double p) {
    return std::pow(p - gamma, p) * (p + 1.0 - gamma) - std::pow(2.0 * p - gamma, p) * (1.0 - gamma);
}

double theta(double xi, double gamma, double p) {
    double lp = std::log1p(xi);
    double first = p == 1.0 ? lp : std::expm1((1.0 - p) * lp) / (1.0 - p);
    return first - xi / (1.0 - gamma) * std::exp(-p * lp);
}

double xi0(double gamma, double p) {
    if (gamma > 1.0 && p > 1.0 && p < gamma) return (gamma - 1.0) / (gamma - p);
    if (!(gamma > 0.0 && gamma < 1.0 && gamma < p))
        throw std::invalid_argument("xi0: no inflection ratio for this (gamma, p)");
    auto f = [&](double xi) { return theta(xi, gamma, p); };
    double a = 1e-3;
    while (f(a) >= 0.0) {
        a *= 0.5;
        if (a < 1e-300) throw std::runtime_error("xi0: lower bracket not found");
    }
    double b = 1.0;
    while (f(b) <= 0.0) {
        b *= 2.0;
        if (b > 1e300) throw std::runtime_error("xi0: upper bracket not found");
    }
    return bisect(f, a, b).x;
}

namespace {

double stop_only_coefficient(double g, double p, double x0) {
    return std::pow(x0, g) * std::pow(1.0 + x0, -p) / (1.0 - g);
}

}  // namespace

double delta(double xi, double gamma, double p) {
    double x0 = xi0(gamma, p);
    double K = stop_only_coefficient(gamma, p, x0);
    return p - K * (p - gamma) * (p + 1.0 - gamma) * std::pow(xi, 1.0 - gamma);
}

GammaHat gamma_hat(double p) {
    if (!(p > 0.0)) throw std::invalid_argument("gamma_hat: p must be positive");
    if (p == 1.0) return {gamma_hat_p1(), 0.0, true};
    double hi = std::min(p, 1.0);
    auto f = [&](double g) { return G(g, p); };
    double g0 = f(0.0), g1 = f(hi);
    if (!((g0 < 0.0 && g1 > 0.0) || (g0 > 0.0 && g1 < 0.0)))
        throw std::runtime_error("gamma_hat: G does not change sign on (0, p^1)");
    RootResult r = bisect(f, 0.0, hi);
    return {r.x, r.residual, false};
}

namespace {

// Stop-only surface at R(z) = 1 and its x derivative.
struct StopProfile {
    double g, p, x0, K, xk;
    StopProfile(double g_, double p_) : g(g_), p(p_) {
        x0 = xi0(g, p);
        K = stop_only_coefficient(g, p, x0);
        xk = 1.0 / x0;
    }
    double h(double x) const {
        if (x <= xk) return U(1.0 + x, p);
        return U(x, p) + std::pow(x, g - p) * K;
    }
    double dh(double x) const {
        if (x <= xk) return std::pow(1.0 + x, -p);
        return std::pow(x, -p) + (g - p) * K * std::pow(x, g - p - 1.0);
    }
};

// Concavity of the sampled stop-only line just to the right of the junction.
bool stop_line_concave(double g) {
    StopProfile sp(g, 1.0);
    const int m = 200;
    const double eps = 1e-5;
    double prev2 = sp.h(sp.xk * (1.0 + eps));
    double prev1 = sp.h(sp.xk * (1.0 + 2.0 * eps));
    for (int k = 3; k <= m; ++k) {
        double cur = sp.h(sp.xk * (1.0 + eps * k));
        if (cur - 2.0 * prev1 + prev2 > 0.0) return false;
        prev2 = prev1;
        prev1 = cur;
    }
    return true;
}

double gamma_hat_p1() {
    static const double value = [] {
        double lo = 0.01, hi = 0.99;
        if (!stop_line_concave(lo) || stop_line_concave(hi))
            throw std::runtime_error("gamma_hat: inflection detection failed to bracket");
        while (hi - lo > 1e-5) {
            double mid = 0.5 * (lo + hi);
            if (stop_line_concave(mid))
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    }();
    return value;
}

}  // namespace

PowerCase classify(double gamma, double p) {
    if (!(p > 0.0)) throw std::invalid_argument("classify: p must be positive");
    if (std::isnan(gamma)) throw std::invalid_argument("classify: gamma is NaN");
    if (gamma <= 0.0) return PowerCase::NoGamblingNoStopValue;
    if (p <= 1.0 && gamma >= std::min(p, 1.0)) return PowerCase::InfiniteValue;
    if (gamma < 1.0) {
        double gh = gamma_hat(p).value;
        return gamma <= gh ? PowerCase::StopOnly : PowerCase::StopAndGamble;
    }
    if (gamma <= p) return PowerCase::GambleHighGamma;
    return PowerCase::StopOnlyHighGamma;
}

Xi12 xi12(double gamma, double p) {
    if (!(gamma > 0.0 && gamma < 1.0 && gamma < p))
        throw std::invalid_argument("xi12: requires 0 < gamma < min(p, 1)");
    StopProfile sp(gamma, p);
    Xi12 out;
    double C = sp.K * (p - gamma) * (p + 1.0 - gamma);
    double xi_c = std::pow(p / C, 1.0 / (1.0 - gamma));
    double xc = 1.0 / xi_c;
    if (!(xc > sp.xk * (1.0 + 1e-12))) {
        out.xi1 = out.xi2 = sp.x0;
        out.x1 = out.x2 = sp.xk;
        out.degenerate = true;
        return out;
    }
    double s_lo = sp.dh(sp.xk);
    double s_hi = sp.dh(xc);
    auto x1_of = [&](double s) { return std::pow(s, -1.0 / p) - 1.0; };
    auto x2_of = [&](double s) {
        double b = xc * 2.0;
        while (sp.dh(b) > s) b *= 2.0;
        return bisect([&](double x) { return sp.dh(x) - s; }, xc, b).x;
    };
    auto gap = [&](double s) {
        double a = x1_of(s), b = x2_of(s);
        return (sp.h(a) - s * a) - (sp.h(b) - s * b);
    };
    double d_lo = gap(s_lo), d_hi = gap(s_hi);
    if (!(d_lo < 0.0 && d_hi > 0.0)) {
        out.xi1 = out.xi2 = sp.x0;
        out.x1 = out.x2 = sp.xk;
        out.degenerate = true;
        return out;
    }
    double s = bisect(gap, s_lo, s_hi).x;
    double a = x1_of(s), b = x2_of(s);
    out.x1 = a;
    out.x2 = b;
    out.xi1 = 1.0 / a;
    out.xi2 = 1.0 / b;
    out.residual_chord = (sp.h(b) - sp.h(a)) / (b - a) - sp.dh(b);
    out.residual_slope = sp.dh(a) - sp.dh(b);
    // Damped Newton polish on (x1, x2) for the two residual equations.
    for (int it = 0; it < 20; ++it) {
        double r1 = out.residual_chord, r2 = out.residual_slope;
        if (std::fabs(r1) <= 1e-15 && std::fabs(r2) <= 1e-15) break;
        double hx = 1e-7 * std::max(1.0, std::fabs(a)), hy = 1e-7 * b;
        auto res = [&](double u, double v, double& e1, double& e2) {
            e1 = (sp.h(v) - sp.h(u)) / (v - u) - sp.dh(v);
            e2 = sp.dh(u) - sp.dh(v);
        };
        double e1a, e2a, e1b, e2b;
        res(a + hx, b, e1a, e2a);
        res(a, b + hy, e1b, e2b);
        double j11 = (e1a - r1) / hx, j21 = (e2a - r2) / hx;
        double j12 = (e1b - r1) / hy, j22 = (e2b - r2) / hy;
        double det = j11 * j22 - j12 * j21;
        if (det == 0.0 || !std::isfinite(det)) break;
        double da = (r1 * j22 - r2 * j12) / det;
        double db = (j11 * r2 - j21 * r1) / det;
        double lam = 1.0;
        bool improved = false;
        for (int k = 0; k < 30; ++k) {
            double na = a - lam * da, nb = b - lam * db;
            if (na > -1.0 && na <= sp.xk && nb > sp.xk) {
                double n1, n2;
                res(na, nb, n1, n2);
                if (std::hypot(n1, n2) < std::hypot(r1, r2)) {
                    a = na;
                    b = nb;
                    out.residual_chord = n1;
                    out.residual_slope = n2;
                    improved = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if (!improved) break;
    }
    out.x1 = a;
    out.x2 = b;
    out.xi1 = 1.0 / a;
    out.xi2 = 1.0 / b;
    if (!(a <= sp.xk && sp.xk < b))
        throw std::runtime_error("xi12: bridge endpoints violate the ordering x1 <= 1/xi0 < x2");
    if (std::fabs(out.residual_chord) > 1e-10 || std::fabs(out.residual_slope) > 1e-10)
        throw std::runtime_error("xi12: residuals above 1e-10");
    return out;
}

const PowerConstants& power_constants(double gamma, double p) {
    static std::mutex mu;
    static std::map<std::pair<double, double>, std::unique_ptr<PowerConstants>> cache;
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find({gamma, p});
        if (it != cache.end()) return *it->second;
    }
    auto pc = std::make_unique<PowerConstants>();
    pc->gamma = gamma;
    pc->p = p;
    pc->kind = classify(gamma, p);
    if (gamma > 0.0 && gamma < 1.0 && gamma < p) {
        pc->gamma_hat = gamma_hat(p);
        pc->xi0 = xi0(gamma, p);
        pc->theta_residual = theta(*pc->xi0, gamma, p);
        if (pc->kind == PowerCase::StopAndGamble) pc->xi12 = xi12(gamma, p);
    } else if (gamma > 1.0 && p > 1.0 && p < gamma) {
        pc->xi0 = xi0(gamma, p);
    }
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{gamma, p}];
    if (!slot) slot = std::move(pc);
    return *slot;
}

namespace {

void check_domain(double x, double r) {
    if (std::isnan(x) || !(x + r >= 0.0))
        throw std::domain_error("closed form: (x, z) outside the closed domain");
}

double stop_only_value(double x, double z, double r, double g, double p, double x0) {
    if (x * x0 <= r) return U(x + r, p);
    return U(x, p) + z * std::pow(x, g - p) * stop_only_coefficient(g, p, x0);
}

double stop_only_slope(double x, double z, double g, double p, double x0) {
    return std::pow(x, -p) + (g - p) * stop_only_coefficient(g, p, x0) * z * std::pow(x, g - p - 1.0);
}

double high_gamma_stop_value(double x, double z, double r, double g, double p) {
    double L = L_of(p);
    if (x >= 0.0) return L;
    double x0 = (g - 1.0) / (g - p);
    if (-x * x0 > r) return U(x + r, p);
    double c = std::pow(p - 1.0, -p) * std::pow(g - 1.0, g - 1.0) / std::pow(g - p, g - p);
    return L + z * c * std::pow(-x, g - p);
}

double debt_bridge_value(double x, double r, double p) {
    double L = L_of(p);
    if (r == PLUS_INFINITY || x >= 0.0) return L;
    double xb = -r / p;
    if (x <= xb) return U(x + r, p);
    double w0 = r * (1.0 - 1.0 / p);
    return U(w0, p) + (x - xb) * std::pow(w0, -p);
}

}  // namespace

double ubar1_closed(double x, double z, double g, double p) {
    if (!(p > 0.0)) throw std::invalid_argument("closed form: p must be positive");
    if (g <= 0.0) {
        double r = R_of(z, g);
        check_domain(x, r);
        return U(x + r, p);
    }
    double r = R_of(z, g);
    check_domain(x, r);
    if (g < 1.0) {
        if (p < 1.0 && g > p) return PLUS_INFINITY;
        if (p < 1.0 && g == p) {
            if (x <= 0.0) return U(x + r, p);
            return U(x, p) + z / (1.0 - p);
        }
        return stop_only_value(x, z, r, g, p, *power_constants(g, p).xi0);
    }
    if (g == 1.0) {
        if (p < 1.0) return PLUS_INFINITY;
        if (x <= 0.0) return U(x + r, p);
        return p == 1.0 ? PLUS_INFINITY : L_of(p);
    }
    if (p <= 1.0) return PLUS_INFINITY;
    if (p < g) return high_gamma_stop_value(x, z, r, g, p);
    if (x <= 0.0) return U(x + r, p);
    return L_of(p);
}

double ubar2_closed(double x, double z, double g, double p) {
    if (!(p > 0.0)) throw std::invalid_argument("closed form: p must be positive");
    const PowerCase kind = classify(g, p);
    double r = R_of(z, g);
    check_domain(x, r);
    switch (kind) {
        case PowerCase::NoGamblingNoStopValue:
            return U(x + r, p);
        case PowerCase::StopOnly:
        case PowerCase::StopOnlyHighGamma:
            return ubar1_closed(x, z, g, p);
        case PowerCase::InfiniteValue:
            if (g < 1.0 && g == p)
                throw std::invalid_argument("closed form: no second-stage formula for gamma = p < 1");
            return PLUS_INFINITY;
        case PowerCase::GambleHighGamma:
            return debt_bridge_value(x, r, p);
        case PowerCase::StopAndGamble:
            break;
    }
    const PowerConstants& pc = power_constants(g, p);
    const Xi12& b = *pc.xi12;
    if (x <= r * b.x1) return U(x + r, p);
    if (x >= r * b.x2) return ubar1_closed(x, z, g, p);
    double x2 = r * b.x2;
    double v2 = stop_only_value(x2, z, r, g, p, *pc.xi0);
    return v2 + (x - x2) * stop_only_slope(x2, z, g, p, *pc.xi0);
}

}  // namespace illiquid
