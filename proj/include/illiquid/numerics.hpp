#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace illiquid {

inline constexpr double PLUS_INFINITY = std::numeric_limits<double>::infinity();
inline constexpr double MINUS_INFINITY = -std::numeric_limits<double>::infinity();

struct RootResult {
    double x = 0.0;
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Bisection on [a, b]. Throws std::invalid_argument when f(a) and f(b)
/// do not have opposite signs. Iterates until the bracket width is below
/// xtol or the midpoint can no longer be represented between the ends.
RootResult bisect(const std::function<double(double)>& f, double a, double b,
                  double xtol = 0.0, int max_iter = 2000);

/// Newton step polish inside a known bracket [a, b]; falls back to
/// bisection whenever a step would leave the bracket.
RootResult newton_bracketed(const std::function<double(double)>& f,
                            const std::function<double(double)>& df,
                            double a, double b, double xtol = 0.0,
                            int max_iter = 200);

struct QuadResult {
    double value = 0.0;
    double error = 0.0;
    int evaluations = 0;
};

/// Adaptive Gauss-Kronrod (7/15) quadrature to an absolute tolerance.
/// Throws std::runtime_error when the subdivision depth is exhausted.
QuadResult integrate(const std::function<double(double)>& f, double a, double b,
                     double abs_tol = 1e-12, int max_depth = 60);

/// Philox4x32-10 counter-based generator.
class Philox {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key);

    /// One independent stream per (seed, path, stream id).
    Philox(std::uint64_t seed, std::uint64_t path, std::uint32_t stream);

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    /// Uniform in the open interval (0, 1).
    double uniform();
    double normal();

private:
    Key key_;
    Counter ctr_;
    Counter buf_{};
    int pos_ = 4;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace illiquid
