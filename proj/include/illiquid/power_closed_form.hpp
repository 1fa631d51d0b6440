#pragma once

#include <optional>
#include <string>

#include "illiquid/numerics.hpp"

namespace illiquid {

enum class PowerCase {
    NoGamblingNoStopValue,
    StopOnly,
    StopAndGamble,
    InfiniteValue,
    GambleHighGamma,
    StopOnlyHighGamma,
};

std::string to_string(PowerCase c);

/// Round index n at which the alternating sequence reaches its fixed point
/// for the given case; std::nullopt for InfiniteValue.
std::optional<int> expected_fixed_point(PowerCase c);

bool is_finite_case(PowerCase c);

double G(double gamma, double p);
double theta(double xi, double gamma, double p);
/// Second-derivative sign function of the stop-only surface in x, as a
/// function of xi = R(z)/x; D(xi0) = 0 marks the critical gamma.
double delta(double xi, double gamma, double p);

struct GammaHat {
    double value = 0.0;
    double residual = 0.0;
    bool low_precision = false;
};

GammaHat gamma_hat(double p);

double xi0(double gamma, double p);

struct Xi12 {
    double xi1 = 0.0;
    double xi2 = 0.0;
    /// Bridge endpoints at z with R(z) = 1; x1 = 1/xi1 may be negative.
    double x1 = 0.0;
    double x2 = 0.0;
    double residual_chord = 0.0;
    double residual_slope = 0.0;
    bool degenerate = false;
};

Xi12 xi12(double gamma, double p);

PowerCase classify(double gamma, double p);

struct PowerConstants {
    double gamma = 0.0;
    double p = 1.0;
    PowerCase kind = PowerCase::NoGamblingNoStopValue;
    std::optional<GammaHat> gamma_hat;
    std::optional<double> xi0;
    std::optional<double> theta_residual;
    std::optional<Xi12> xi12;
};

/// Computed once per (gamma, p) and cached.
const PowerConstants& power_constants(double gamma, double p);

double ubar1_closed(double x, double z, double gamma, double p);
double ubar2_closed(double x, double z, double gamma, double p);

}  // namespace illiquid
