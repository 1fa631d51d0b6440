#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "illiquid/market_model.hpp"
#include "illiquid/strategy.hpp"
#include "illiquid/value_solver.hpp"

namespace illiquid {

inline constexpr int EXIT_OK = 0;
/// The run completed but the result is not the requested one (no fixed point
/// within max_iter, or a verification miss).
inline constexpr int EXIT_NOT_MET = 1;
inline constexpr int EXIT_DIVERGENCE = 2;
inline constexpr int EXIT_USAGE = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Lattice window from power_lattice.
struct AutoWindow {
    double decades = 3.0;
    int nx = 512;
    int nz = 512;
    double x_res = 1e-3;
    bool closure = true;
};

struct UniformWindow {
    double x_min = 0.0;
    double x_max = 0.0;
    int nx = 0;
    double z_min = 0.0;
    double z_max = 0.0;
    int nz = 0;
};

struct TransformConfig {
    ScaleTransform::Mode mode = ScaleTransform::Mode::ClosedForm;
    double c = 1.0;
    /// Tabulation range for the numeric mode; derived from an auto window when unset.
    std::optional<double> y_min;
    std::optional<double> y_max;
    int nodes = 2049;
};

struct SolverConfig {
    double fp_tol = 1e-9;
    int max_iter = 64;
    double cap = 1e12;
    BoundaryMode boundary_mode = BoundaryMode::Contact;
    int widening_rounds = 3;
    double widening_threshold = 1e-6;
    /// Relative margin of the benefit mask; kept above the discretization
    /// error of the default grid.
    double benefit_tol = 1e-3;
};

struct SimConfig {
    std::size_t n_paths = 100000;
    std::optional<std::uint64_t> seed;
    SimMode mode;
    std::optional<double> x0;
    std::optional<double> z0;
    std::optional<double> y0;
    int rounds = 0;
};

struct OutputConfig {
    std::string dir = ".";
    std::vector<std::string> formats{"csv", "json"};
};

struct RunConfig {
    MarketSpec market;
    UtilitySpec utility;
    TransformConfig transform;
    std::variant<AutoWindow, UniformWindow> window;
    SolverConfig solver;
    SimConfig sim;
    OutputConfig output;
};

/// Parses one JSON document; throws ConfigError on malformed or inconsistent input.
RunConfig parse_config(const std::string& json_text);

/// GBM with mu = gamma / 2, sigma = 1 and power utility p on the default auto window.
RunConfig power_config(double gamma, double p);

/// Everything needed to start a solve on the window of the first round.
struct Problem {
    ScaleTransform transform;
    std::shared_ptr<const GridWindow> window;
    Boundary boundary;
    std::optional<double> gamma;
    std::optional<double> p;
};

/// Throws ConfigError when the window does not fit the transform.
Problem build_problem(const RunConfig& cfg);

/// Uniform window widened by 25% more nodes on each side at the same
/// spacing; z nodes outside the closed z domain are dropped.
GridWindow widen_uniform(const ScaleTransform& t, const GridWindow& w);

/// Entry point of the `illiquid` executable.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace illiquid
