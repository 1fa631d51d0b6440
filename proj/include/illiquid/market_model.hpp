#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "illiquid/numerics.hpp"

namespace illiquid {

struct GBM {
    double mu = 0.0;
    double sigma = 1.0;
};

/// Drift and volatility rate profiles, i.e. dY = Y[mu(Y)dt + sigma(Y)dB].
struct GeneralDiffusion {
    std::function<double(double)> mu;
    std::function<double(double)> sigma;
};

struct MarketSpec {
    std::variant<GBM, GeneralDiffusion> kind;

    static MarketSpec gbm(double mu, double sigma);
    static MarketSpec general(std::function<double(double)> mu, std::function<double(double)> sigma);
    /// Piecewise-linear profiles through (y_k, mu_k) and (y_k, sigma_k), held flat outside.
    static MarketSpec sampled(std::vector<double> ys, std::vector<double> mus,
                              std::vector<double> sigmas);

    bool is_gbm() const { return std::holds_alternative<GBM>(kind); }
    double mu_at(double y) const;
    double sigma_at(double y) const;
};

double gamma_of(const MarketSpec& spec);

struct PowerUtility {
    double p = 2.0;
};

/// Nondecreasing concave profile through (w_k, u_k); linear in between,
/// extended with the end slopes, MINUS_INFINITY for w < 0.
struct CustomUtility {
    std::vector<double> ws;
    std::vector<double> us;
};

struct UtilitySpec {
    std::variant<PowerUtility, CustomUtility> kind;

    static UtilitySpec power(double p);
    static UtilitySpec custom(std::vector<double> ws, std::vector<double> us);

    double operator()(double w) const;
    /// Limit of U(w) as w grows without bound (PLUS_INFINITY when unbounded).
    double sup() const;
    std::optional<double> power_p() const;
};

struct Interval {
    double lo = MINUS_INFINITY;
    double hi = PLUS_INFINITY;
    bool contains(double v) const { return v > lo && v < hi; }
};

class ScaleTransform {
public:
    enum class Mode { ClosedForm, Numeric };

    double s(double y) const;
    double r(double z) const;
    double s_prime(double y) const;

    /// Open interval (S(0), S(inf)).
    const Interval& z_domain() const { return z_domain_; }
    /// Range of y on which the transform is defined (the whole half line
    /// for the closed form, the tabulation window for the numeric mode).
    const Interval& y_window() const { return y_window_; }
    /// Tabulated z range; coincides with z_domain for closed-form transforms.
    Interval z_window() const;
    double c() const { return c_; }
    std::optional<double> gamma() const { return gamma_; }
    Mode mode() const { return mode_; }

    /// R extended to the closure of z_domain: R(S(0)) = 0 and R(S(inf)) = inf.
    double r_closure(double z) const;

    friend ScaleTransform scale_closed_form(double gamma);
    friend ScaleTransform scale_numeric(const MarketSpec& spec, double c, Interval window,
                                        int nodes);

private:
    struct Table;
    Mode mode_ = Mode::ClosedForm;
    Interval z_domain_;
    Interval y_window_{0.0, PLUS_INFINITY};
    double c_ = 1.0;
    std::optional<double> gamma_;
    std::shared_ptr<const Table> table_;
};

ScaleTransform scale_closed_form(double gamma);

/// Tabulates S with S(c) = 0, S'(c) = 1 on the y window. Queries outside the
/// window throw std::out_of_range.
ScaleTransform scale_numeric(const MarketSpec& spec, double c, Interval window,
                             int nodes = 2049);

double sigma_tilde(const ScaleTransform& t, const MarketSpec& spec, double z);

struct PathExit : std::runtime_error {
    PathExit(std::size_t idx, double z);
    std::size_t index;
    double value;
};

/// Samples z at times 0, dt, 2dt, ... up to horizon.
std::vector<double> sample_z_path(const ScaleTransform& t, const MarketSpec& spec, double z0,
                                  double dt, double horizon, Philox& rng);

/// One step of the z process; false when the step leaves z_domain.
struct ZStepper {
    ZStepper(const ScaleTransform& t, const MarketSpec& spec, double dt);
    double step(double z, double gaussian) const;
    /// True when the step uses exact log-normal increments.
    bool log_scale() const { return kind_ == Kind::ExactLog; }
    /// Volatility of the increment of log|z| (log_scale) or of z (arithmetic) per step.
    double step_vol() const { return vol_; }
    bool arithmetic() const { return kind_ == Kind::Arithmetic; }

private:
    enum class Kind { ExactLog, Arithmetic, Euler };
    Kind kind_;
    double dt_;
    double vol_ = 0.0;
    double drift_ = 0.0;
    const ScaleTransform* t_;
    const MarketSpec* spec_;
};

}  // namespace illiquid
