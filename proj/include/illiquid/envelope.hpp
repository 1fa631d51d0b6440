#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "illiquid/numerics.hpp"

namespace illiquid {

inline constexpr double DEFAULT_CONTACT_TOL = 1e-9;

struct EnvelopeResult {
    std::vector<double> env;
    std::vector<std::uint8_t> contact;
    /// Index pairs (i, j) of contact nodes bracketing each maximal non-contact run.
    std::vector<std::pair<std::size_t, std::size_t>> segments;
};

struct MissingContact : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Finite block [first, last] of a sampled line; throws std::invalid_argument
/// when fewer than two samples are finite or the block is not contiguous.
std::pair<std::size_t, std::size_t> finite_block(std::span<const double> fs);

/// Upper hull scan. Sentinel entries keep MINUS_INFINITY.
EnvelopeResult concave_envelope_1d(std::span<const double> xs, std::span<const double> fs,
                                   double contact_tol = DEFAULT_CONTACT_TOL);

/// Literal maximisation over all chords, O(n^2) per point.
EnvelopeResult concave_envelope_oracle(std::span<const double> xs, std::span<const double> fs,
                                       double contact_tol = DEFAULT_CONTACT_TOL);

/// Allocation-free kernel used by the grid solver. `out` may alias nothing in
/// `fs`; `stack` must hold at least fs.size() entries. Lines with fewer than
/// two finite samples are copied unchanged.
void envelope_line(std::span<const double> xs, std::span<const double> fs, std::span<double> out,
                   std::span<std::size_t> stack);

/// Node-relative contact test |env - f| <= tol * max(1, |f|).
inline bool is_contact(double env, double f, double tol) {
    if (env == f) return true;
    double scale = f < 0 ? -f : f;
    if (scale < 1.0) scale = 1.0;
    double d = env - f;
    if (d < 0) d = -d;
    return d <= tol * scale;
}

struct ContactBracket {
    std::size_t lower;
    std::size_t upper;
    std::size_t around;
};

/// Nearest contacts at-or-below and at-or-above `around`.
ContactBracket contact_points(std::span<const double> fs, const EnvelopeResult& result,
                              std::size_t around, double tol = DEFAULT_CONTACT_TOL);

/// Same search on raw envelope values.
ContactBracket contact_points(std::span<const double> fs, std::span<const double> env,
                              std::size_t around, double tol = DEFAULT_CONTACT_TOL);

}  // namespace illiquid
