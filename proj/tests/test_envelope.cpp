#include <doctest.h>

#include <cmath>

#include "illiquid/envelope.hpp"
#include "random_lines.hpp"

using namespace illiquid;
using illiquid::testing::random_line;

namespace {

void check_equal(const std::vector<double>& a, const std::vector<double>& b, double tol = 0.0) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;
        CHECK(std::fabs(a[i] - b[i]) <= tol);
    }
}

}  // namespace

TEST_CASE("concave input is its own envelope") {
    std::vector<double> xs{0, 1, 2, 3}, fs{0, 1, 1.5, 1.75};
    auto r = concave_envelope_1d(xs, fs);
    check_equal(r.env, fs);
    for (auto c : r.contact) CHECK(c == 1);
    CHECK(r.segments.empty());
    check_equal(concave_envelope_oracle(xs, fs).env, fs);
}

TEST_CASE("single chord") {
    std::vector<double> xs{0, 1, 2}, fs{0, 0, 1};
    auto r = concave_envelope_1d(xs, fs);
    check_equal(r.env, {0, 0.5, 1});
    CHECK(r.contact == std::vector<std::uint8_t>{1, 0, 1});
    REQUIRE(r.segments.size() == 1);
    CHECK(r.segments[0] == std::pair<std::size_t, std::size_t>{0, 2});
    check_equal(concave_envelope_oracle(xs, fs).env, {0, 0.5, 1});
}

TEST_CASE("outer maxima dominate") {
    std::vector<double> xs{0, 1, 2, 3, 4}, fs{1, 0, 1, 0, 1};
    check_equal(concave_envelope_1d(xs, fs).env, {1, 1, 1, 1, 1});
}

TEST_CASE("sentinels are kept and the finite block is enveloped") {
    std::vector<double> xs{0, 1, 2, 3, 4}, fs{MINUS_INFINITY, 0, -1, 2, MINUS_INFINITY};
    auto r = concave_envelope_1d(xs, fs);
    CHECK(r.env[0] == MINUS_INFINITY);
    CHECK(r.env[4] == MINUS_INFINITY);
    CHECK(r.env[2] == doctest::Approx(1.0));
    CHECK(finite_block(fs) == std::pair<std::size_t, std::size_t>{1, 3});
}

TEST_CASE("invalid lines") {
    std::vector<double> xs{0, 1, 2};
    CHECK_THROWS_AS(concave_envelope_1d(xs, std::vector<double>{MINUS_INFINITY, 1, MINUS_INFINITY}),
                    std::invalid_argument);
    CHECK_THROWS_AS(concave_envelope_1d(xs, std::vector<double>{1, MINUS_INFINITY, 1}),
                    std::invalid_argument);
}

TEST_CASE("contact points") {
    std::vector<double> xs{0, 1, 2, 3};
    std::vector<double> concave{0, 1, 1.5, 1.75};
    auto all = concave_envelope_1d(xs, concave);
    auto b = contact_points(concave, all, 2);
    CHECK(b.lower == 2);
    CHECK(b.upper == 2);
    std::vector<double> xs3{0, 1, 2}, fs{0, 0, 1};
    auto r = concave_envelope_1d(xs3, fs);
    auto c = contact_points(fs, r, 1);
    CHECK(c.lower == 0);
    CHECK(c.upper == 2);
}

TEST_CASE("missing contact at a truncated edge") {
    std::vector<double> env{0.0, 1.0, 2.0};
    std::vector<double> fs{0.0, 0.5, 1.0};
    CHECK_THROWS_AS(contact_points(fs, env, 1), MissingContact);
}

TEST_CASE("random instances agree with the chord oracle") {
    for (std::uint64_t k = 0; k < 200; ++k) {
        auto l = random_line(20261014, k);
        auto fast = concave_envelope_1d(l.xs, l.fs);
        auto slow = concave_envelope_oracle(l.xs, l.fs);
        check_equal(fast.env, slow.env, 1e-12);
    }
}

TEST_CASE("envelope properties on random instances") {
    for (std::uint64_t k = 0; k < 100; ++k) {
        auto l = random_line(77, k);
        auto r = concave_envelope_1d(l.xs, l.fs);
        auto [lo, hi] = finite_block(l.fs);
        for (std::size_t i = lo; i <= hi; ++i) CHECK(r.env[i] >= l.fs[i]);
        for (std::size_t i = lo + 1; i < hi; ++i) {
            double lam = (l.xs[i + 1] - l.xs[i]) / (l.xs[i + 1] - l.xs[i - 1]);
            double chord = lam * r.env[i - 1] + (1 - lam) * r.env[i + 1];
            CHECK(r.env[i] >= chord - 1e-12);
        }
        // Minimality: every non-contact node lies inside a segment with contact ends
        // on which the envelope is affine.
        for (auto [i, j] : r.segments) {
            CHECK(is_contact(r.env[i], l.fs[i], DEFAULT_CONTACT_TOL));
            CHECK(is_contact(r.env[j], l.fs[j], DEFAULT_CONTACT_TOL));
            for (std::size_t m = i + 1; m < j; ++m) {
                double lam = (l.xs[j] - l.xs[m]) / (l.xs[j] - l.xs[i]);
                CHECK(std::fabs(r.env[m] - (lam * l.fs[i] + (1 - lam) * l.fs[j])) <= 1e-12);
                CHECK(r.env[m] > l.fs[m]);
            }
        }
        auto twice = concave_envelope_1d(l.xs, r.env);
        check_equal(twice.env, r.env);

        std::vector<double> scaled(l.fs.size()), xs2(l.xs.size());
        for (std::size_t i = 0; i < l.fs.size(); ++i) {
            scaled[i] = 2.5 * l.fs[i] - 0.75;
            xs2[i] = 3.0 * l.xs[i] + 1.0;
        }
        auto a = concave_envelope_1d(xs2, scaled);
        for (std::size_t i = lo; i <= hi; ++i)
            CHECK(std::fabs(a.env[i] - (2.5 * r.env[i] - 0.75)) <= 1e-11);
    }
}

TEST_CASE("solver kernel matches the full envelope") {
    for (std::uint64_t k = 0; k < 50; ++k) {
        auto l = random_line(5, k);
        std::vector<double> out(l.fs.size());
        std::vector<std::size_t> stack(l.fs.size());
        envelope_line(l.xs, l.fs, out, stack);
        check_equal(out, concave_envelope_1d(l.xs, l.fs).env);
    }
}
