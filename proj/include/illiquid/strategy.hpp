#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "illiquid/envelope.hpp"
#include "illiquid/market_model.hpp"
#include "illiquid/value_solver.hpp"

namespace illiquid {

struct StrategyPlan {
    int n = 0;
    /// U^0, ..., U^{2n+1} on one window.
    std::vector<ValueGrid> surfaces;
    std::shared_ptr<const GridWindow> window;
    double contact_tol = DEFAULT_CONTACT_TOL;
};

/// Runs exactly 2n+1 alternating envelopes starting from U^0.
StrategyPlan build_plan(const ValueGrid& g0, int n, const Boundary& boundary = {},
                        double contact_tol = DEFAULT_CONTACT_TOL);

/// Index of an exact axis node (relative tolerance 1e-12); throws
/// std::invalid_argument when v is not a node.
std::size_t node_index(const std::vector<double>& axis, double v);

struct ZInterval {
    double z1 = 0.0;
    double z2 = 0.0;
    std::size_t j1 = 0;
    std::size_t j2 = 0;
};

/// Nearest z-contacts of `upper` with `lower` bracketing z on the row of
/// the grid node x. Throws MissingContact at the edge of the finite block.
ZInterval z_contact_interval(const ValueGrid& upper, const ValueGrid& lower, double x, double z,
                             double tol = DEFAULT_CONTACT_TOL);

/// z2 with probability (z - z1) / (z2 - z1), else z1.
double sample_z_exit(double z, double z1, double z2, Philox& rng);

struct JumpLaw {
    double a = 0.0;
    double b = 0.0;
    double prob_a = 1.0;
    std::size_t ia = 0;
    std::size_t ib = 0;
};

/// x-contacts a >= u >= b of `upper` with `lower` on the column of the grid
/// node v, with prob_a * a + (1 - prob_a) * b = u. Throws MissingContact,
/// or std::runtime_error when upper is not affine between b and a.
JumpLaw x_jump_law(const ValueGrid& upper, const ValueGrid& lower, double u, double v,
                   double tol = DEFAULT_CONTACT_TOL);

double sample_jump(const JumpLaw& law, Philox& rng);

struct SimMode {
    enum class Kind { ExactExit, PathSim };
    Kind kind = Kind::ExactExit;
    double dt = 1e-3;
    /// Path simulation time per round after which the exit is drawn from
    /// the two-point law at the current z.
    double horizon = 5.0;

    static SimMode exact_exit() { return {}; }
    static SimMode path_sim(double dt, double horizon = 5.0) { return {Kind::PathSim, dt, horizon}; }
};

struct RoundStats {
    /// Mean and standard error of z_exit - z_start over paths.
    double z_increment_mean = 0.0;
    double z_increment_stderr = 0.0;
};

struct SimResult {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    double mean_x_terminal = 0.0;
    double stderr_x_terminal = 0.0;
    std::uint64_t seed = 0;
    /// Grid U^{2n+1} at the start point.
    double target = 0.0;
    /// Fraction of path-simulated rounds resolved by the two-point law at the horizon.
    double horizon_fraction = 0.0;
    std::vector<RoundStats> rounds;
};

/// Each path: for i = 1..n+1 with k = n-i+1, run z with x frozen until it
/// leaves the z-contact interval of (U^{2k+1}, U^{2k}); for i <= n jump x
/// by the law of (U^{2k}, U^{2k-1}) at the exit z. Payoff U^0 at the end.
/// x0 must be a grid node; z0 may lie between nodes. Deterministic in
/// the seed, whatever the number of threads.
SimResult simulate_strategy(const StrategyPlan& plan, double x0, double z0, std::size_t n_paths,
                            std::uint64_t seed, const SimMode& mode, const ScaleTransform& t,
                            const MarketSpec& spec);

}  // namespace illiquid
