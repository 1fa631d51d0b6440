#include "illiquid/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace illiquid {

std::pair<std::size_t, std::size_t> finite_block(std::span<const double> fs) {
    std::size_t n = fs.size();
    std::size_t lo = 0;
    while (lo < n && fs[lo] == MINUS_INFINITY) ++lo;
    if (lo == n) throw std::invalid_argument("envelope: no finite samples");
    std::size_t hi = n - 1;
    while (fs[hi] == MINUS_INFINITY) --hi;
    for (std::size_t i = lo; i <= hi; ++i)
        if (fs[i] == MINUS_INFINITY)
            throw std::invalid_argument("envelope: finite samples are not contiguous");
    if (hi == lo) throw std::invalid_argument("envelope: fewer than two finite samples");
    return {lo, hi};
}

namespace {

constexpr double SNAP_ULPS = 8.0;

inline double chord(std::span<const double> xs, std::span<const double> fs, std::size_t a,
                    std::size_t b, std::size_t i) {
    double lam = (xs[b] - xs[i]) / (xs[b] - xs[a]);
    return lam * fs[a] + (1.0 - lam) * fs[b];
}

void validate(std::span<const double> xs, std::span<const double> fs) {
    if (xs.size() != fs.size()) throw std::invalid_argument("envelope: size mismatch");
    if (xs.size() < 2) throw std::invalid_argument("envelope: need at least two samples");
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] > xs[i - 1]))
            throw std::invalid_argument("envelope: abscissae must increase strictly");
    for (double f : fs)
        if (std::isnan(f)) throw std::invalid_argument("envelope: NaN sample");
}

void finish(std::span<const double> fs, EnvelopeResult& r, double tol) {
    std::size_t n = fs.size();
    r.contact.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        r.contact[i] = fs[i] != MINUS_INFINITY && is_contact(r.env[i], fs[i], tol);
    r.segments.clear();
    std::size_t i = 0;
    while (i < n) {
        if (fs[i] == MINUS_INFINITY || r.contact[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && !r.contact[j] && fs[j] != MINUS_INFINITY) ++j;
        r.segments.emplace_back(i - 1, j);
        i = j;
    }
}

}  // namespace

void envelope_line(std::span<const double> xs, std::span<const double> fs, std::span<double> out,
                   std::span<std::size_t> stack) {
    std::size_t n = fs.size();
    std::copy(fs.begin(), fs.end(), out.begin());
    std::size_t lo = 0;
    while (lo < n && fs[lo] == MINUS_INFINITY) ++lo;
    if (lo + 1 >= n) return;
    std::size_t hi = n - 1;
    while (fs[hi] == MINUS_INFINITY) --hi;
    if (hi <= lo) return;
    for (std::size_t i = lo; i <= hi; ++i) {
        if (fs[i] == PLUS_INFINITY) {
            for (std::size_t j = lo; j <= hi; ++j) out[j] = PLUS_INFINITY;
            return;
        }
    }
    std::size_t k = 0;
    for (std::size_t i = lo; i <= hi; ++i) {
        while (k >= 2) {
            std::size_t a = stack[k - 2], b = stack[k - 1];
            if ((fs[b] - fs[a]) * (xs[i] - xs[a]) <= (fs[i] - fs[a]) * (xs[b] - xs[a]))
                --k;
            else
                break;
        }
        stack[k++] = i;
    }
    for (std::size_t s = 0; s + 1 < k; ++s) {
        std::size_t a = stack[s], b = stack[s + 1];
        for (std::size_t i = a + 1; i < b; ++i) {
            // Samples within rounding of the chord are kept, so that the
            // envelope of an envelope reproduces it bit for bit.
            double c = chord(xs, fs, a, b, i);
            if (!(c - fs[i] <= SNAP_ULPS * std::numeric_limits<double>::epsilon() *
                                   std::max(1.0, std::fabs(c))))
                out[i] = c;
        }
    }
}

EnvelopeResult concave_envelope_1d(std::span<const double> xs, std::span<const double> fs,
                                   double contact_tol) {
    validate(xs, fs);
    finite_block(fs);
    EnvelopeResult r;
    r.env.resize(fs.size());
    std::vector<std::size_t> stack(fs.size());
    envelope_line(xs, fs, r.env, stack);
    finish(fs, r, contact_tol);
    return r;
}

EnvelopeResult concave_envelope_oracle(std::span<const double> xs, std::span<const double> fs,
                                       double contact_tol) {
    validate(xs, fs);
    auto [lo, hi] = finite_block(fs);
    EnvelopeResult r;
    r.env.assign(fs.begin(), fs.end());
    bool has_inf = std::any_of(fs.begin() + lo, fs.begin() + hi + 1,
                               [](double v) { return v == PLUS_INFINITY; });
    for (std::size_t i = lo; i <= hi; ++i) {
        if (has_inf) {
            r.env[i] = PLUS_INFINITY;
            continue;
        }
        double best = fs[i];
        for (std::size_t a = lo; a <= i; ++a)
            for (std::size_t b = i; b <= hi; ++b)
                if (a < b) best = std::max(best, chord(xs, fs, a, b, i));
        r.env[i] = best;
    }
    finish(fs, r, contact_tol);
    return r;
}

ContactBracket contact_points(std::span<const double> fs, std::span<const double> env,
                              std::size_t around, double tol) {
    if (around >= fs.size() || fs[around] == MINUS_INFINITY)
        throw std::invalid_argument("contact_points: query outside the finite block");
    auto contact = [&](std::size_t i) {
        return fs[i] != MINUS_INFINITY && is_contact(env[i], fs[i], tol);
    };
    if (contact(around)) return {around, around, around};
    std::size_t lo = around;
    while (true) {
        if (lo == 0 || fs[lo - 1] == MINUS_INFINITY)
            throw MissingContact("contact_points: no contact below the query");
        --lo;
        if (contact(lo)) break;
    }
    std::size_t up = around;
    while (true) {
        if (up + 1 >= fs.size() || fs[up + 1] == MINUS_INFINITY)
            throw MissingContact("contact_points: no contact above the query");
        ++up;
        if (contact(up)) break;
    }
    return {lo, up, around};
}

ContactBracket contact_points(std::span<const double> fs, const EnvelopeResult& result,
                              std::size_t around, double tol) {
    return contact_points(fs, std::span<const double>(result.env), around, tol);
}

}  // namespace illiquid
