#include "illiquid/numerics.hpp"

#include <cmath>

namespace illiquid {

namespace {

bool opposite(double a, double b) { return (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0); }

}  // namespace

RootResult bisect(const std::function<double(double)>& f, double a, double b,
                  double xtol, int max_iter) {
    if (a > b) std::swap(a, b);
    double fa = f(a);
    double fb = f(b);
    RootResult r;
    if (fa == 0.0) return {a, 0.0, 0, true};
    if (fb == 0.0) return {b, 0.0, 0, true};
    if (!opposite(fa, fb))
        throw std::invalid_argument("bisect: root not bracketed");
    for (int it = 0; it < max_iter; ++it) {
        double m = 0.5 * (a + b);
        r.iterations = it + 1;
        if (m <= a || m >= b || (b - a) <= xtol) {
            r.converged = true;
            break;
        }
        double fm = f(m);
        if (fm == 0.0) {
            a = b = m;
            fa = fb = 0.0;
            r.converged = true;
            break;
        }
        if (opposite(fa, fm)) {
            b = m;
            fb = fm;
        } else {
            a = m;
            fa = fm;
        }
    }
    if (std::fabs(fa) <= std::fabs(fb)) {
        r.x = a;
        r.residual = fa;
    } else {
        r.x = b;
        r.residual = fb;
    }
    return r;
}

RootResult newton_bracketed(const std::function<double(double)>& f,
                            const std::function<double(double)>& df,
                            double a, double b, double xtol, int max_iter) {
    if (a > b) std::swap(a, b);
    double fa = f(a);
    double fb = f(b);
    if (fa == 0.0) return {a, 0.0, 0, true};
    if (fb == 0.0) return {b, 0.0, 0, true};
    if (!opposite(fa, fb))
        throw std::invalid_argument("newton_bracketed: root not bracketed");
    double x = 0.5 * (a + b);
    RootResult r;
    for (int it = 0; it < max_iter; ++it) {
        double fx = f(x);
        r.iterations = it + 1;
        if (fx == 0.0) return {x, 0.0, it + 1, true};
        if (opposite(fa, fx)) {
            b = x;
        } else {
            a = x;
            fa = fx;
        }
        double d = df(x);
        double next = (d != 0.0 && std::isfinite(d)) ? x - fx / d : a - 1.0;
        if (!(next > a && next < b)) next = 0.5 * (a + b);
        if (std::fabs(next - x) <= xtol || next == x || b - a <= xtol) {
            x = next;
            r.converged = true;
            break;
        }
        x = next;
    }
    r.x = x;
    r.residual = f(x);
    return r;
}

namespace {

constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

void gk15(const std::function<double(double)>& f, double a, double b, double& kronrod,
          double& err) {
    double c = 0.5 * (a + b);
    double h = 0.5 * (b - a);
    double fc = f(c);
    double k = fc * kWgk[7];
    double g = fc * kWg[3];
    for (int j = 0; j < 7; ++j) {
        double dx = h * kXgk[j];
        double s = f(c - dx) + f(c + dx);
        k += kWgk[j] * s;
        if (j % 2 == 1) g += kWg[j / 2] * s;
    }
    kronrod = k * h;
    err = std::fabs((k - g) * h);
}

void adapt(const std::function<double(double)>& f, double a, double b, double tol, int depth,
           QuadResult& out) {
    double k, e;
    gk15(f, a, b, k, e);
    out.evaluations += 15;
    if (!std::isfinite(k))
        throw std::runtime_error("integrate: non-finite integrand");
    constexpr double eps = std::numeric_limits<double>::epsilon();
    if (e <= tol || e <= 50.0 * eps * std::fabs(k) || b - a <= 4.0 * eps * std::fabs(a + b)) {
        out.value += k;
        out.error += e;
        return;
    }
    if (depth <= 0) throw std::runtime_error("integrate: subdivision limit reached");
    double m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1, out);
    adapt(f, m, b, 0.5 * tol, depth - 1, out);
}

}  // namespace

QuadResult integrate(const std::function<double(double)>& f, double a, double b,
                     double abs_tol, int max_depth) {
    QuadResult out;
    if (a == b) return out;
    double sign = 1.0;
    if (a > b) {
        std::swap(a, b);
        sign = -1.0;
    }
    adapt(f, a, b, abs_tol, max_depth, out);
    out.value *= sign;
    return out;
}

Philox::Counter Philox::block(Counter ctr, Key key) {
    constexpr std::uint32_t M0 = 0xD2511F53u;
    constexpr std::uint32_t M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u;
    constexpr std::uint32_t W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
        std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
        Counter next = {std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0], std::uint32_t(p1),
                        std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1], std::uint32_t(p0)};
        ctr = next;
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

Philox::Philox(std::uint64_t seed, std::uint64_t path, std::uint32_t stream)
    : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)},
      ctr_{0u, stream, std::uint32_t(path), std::uint32_t(path >> 32)} {}

std::uint32_t Philox::next_u32() {
    if (pos_ == 4) {
        buf_ = block(ctr_, key_);
        if (++ctr_[0] == 0u) throw std::runtime_error("Philox: stream exhausted");
        pos_ = 0;
    }
    return buf_[pos_++];
}

std::uint64_t Philox::next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
}

double Philox::uniform() {
    return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Philox::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 2.0 * M_PI * u2;
    spare_ = rad * std::sin(ang);
    have_spare_ = true;
    return rad * std::cos(ang);
}

}  // namespace illiquid
