#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "illiquid/market_model.hpp"

namespace illiquid {

/// Index lattice behind an auto-generated window:
/// x_k = c * sinh(hx * k) for k in [kx_lo, kx_hi],
/// y_k = exp(t0 + hy * k) for k in [ky_lo, ky_hi], z_k = S(y_k),
/// plus an optional node at the finite end of the z domain.
struct Lattice {
    double c = 0.0;
    double hx = 0.0;
    int kx_lo = 0;
    int kx_hi = 0;
    double t0 = 0.0;
    double hy = 0.0;
    int ky_lo = 0;
    int ky_hi = 0;
    bool closure = false;

    int nx() const { return kx_hi - kx_lo + 1; }
    int ny() const { return ky_hi - ky_lo + 1; }
};

/// Lattice for y in [10^-decades, 10^decades] with nx x-nodes and nz z-nodes
/// (including the closure node when requested). x spans roughly
/// [-2 y_max, 2 y_max] and contains 0; spacing near 0 is about x_res * y_min.
Lattice power_lattice(double decades, int nx, int nz, bool closure, double x_res = 0.05);

/// Same spacing with 25% more nodes on each side of both axes (1.5x in
/// total), so the result is a superset of the input lattice.
Lattice widen(const Lattice& l, double factor = 1.5);

struct GridWindow {
    std::vector<double> x_axis;
    std::vector<double> z_axis;
    /// R(z) at each z node, with 0 and PLUS_INFINITY at closure nodes.
    std::vector<double> r;
    /// Node (ix, iz) lies in the closed domain x + R(z) >= 0.
    std::vector<std::uint8_t> mask;
    std::optional<Lattice> lattice;

    std::size_t nx() const { return x_axis.size(); }
    std::size_t nz() const { return z_axis.size(); }
    std::size_t index(std::size_t ix, std::size_t iz) const { return ix * z_axis.size() + iz; }
    bool on_mask(std::size_t ix, std::size_t iz) const { return mask[index(ix, iz)] != 0; }
};

std::vector<double> uniform_axis(double lo, double hi, std::size_t n);

/// Throws std::invalid_argument for non-increasing axes and z nodes outside
/// the closure of the transform's z range.
GridWindow make_window(const ScaleTransform& t, std::vector<double> xs, std::vector<double> zs);

/// Closure nodes are only added where the transform has a finite z edge
/// and R there is 0 (low edge) or the utility is bounded (high edge).
GridWindow lattice_window(const ScaleTransform& t, const UtilitySpec& u, const Lattice& l);

struct ValueGrid {
    std::shared_ptr<const GridWindow> window;
    /// MINUS_INFINITY off-mask and where U(x + R(z)) = -inf.
    std::vector<double> values;
    int n = 0;
    /// Set by build_ubar when the value is known to be infinite before
    /// any iteration (finite upper z edge with unbounded utility).
    std::optional<std::string> divergence_certificate;

    double at(std::size_t ix, std::size_t iz) const { return values[window->index(ix, iz)]; }
};

ValueGrid build_ubar(const UtilitySpec& u, const ScaleTransform& t,
                     std::shared_ptr<const GridWindow> w);

enum class BoundaryMode { Contact, ClosedForm };

/// Value of the level-n surface at a node; used to seed line endpoints.
using BoundaryEvaluator = std::function<double(int level, double x, double z)>;

struct Boundary {
    BoundaryMode mode = BoundaryMode::Contact;
    BoundaryEvaluator evaluator;

    static Boundary contact() { return {}; }
    static Boundary closed_form(BoundaryEvaluator e) { return {BoundaryMode::ClosedForm, std::move(e)}; }
};

/// Envelope in z of every line with x frozen.
ValueGrid concavify_z(const ValueGrid& g, const Boundary& boundary = {});
/// Envelope in x of every line with z frozen.
ValueGrid concavify_x(const ValueGrid& g, const Boundary& boundary = {});

enum class SolveStatus { Converged, Diverging, MaxIterations };
std::string to_string(SolveStatus s);

struct IterationReport {
    SolveStatus status = SolveStatus::MaxIterations;
    /// Level n with U^n a fixed point of both envelopes (Converged only).
    int n_final = -1;
    /// sup_deltas[k-1] = max |U^k - U^{k-1}| / max(1, |U^{k-1}|).
    std::vector<double> sup_deltas;
    std::size_t cap_hits = 0;
    std::string reason;
};

struct SolverOptions {
    double fp_tol = 1e-9;
    int max_iter = 64;
    double cap = 1e12;
    Boundary boundary;
    bool keep_history = false;
};

struct Solution {
    ValueGrid value;
    /// U^1, the no-trade surface.
    ValueGrid first;
    IterationReport report;
    /// U^0, U^1, ... when keep_history is set.
    std::vector<ValueGrid> history;
};

double sup_delta(const ValueGrid& next, const ValueGrid& prev);

Solution iterate_to_fixed_point(const ValueGrid& g0, const SolverOptions& opt = {});

ValueGrid no_trade_value(const ValueGrid& g0, const Boundary& boundary = {});

/// True where uinf > u1 + tol * max(1, |u1|).
std::vector<std::uint8_t> gambling_benefit(const ValueGrid& uinf, const ValueGrid& u1,
                                           double tol = 1e-6);

struct DivergentValue : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bilinear interpolation at (x, S(y)); all four cell corners must be finite
/// on-mask nodes. Throws std::out_of_range outside the window.
double v_of_xy(const ValueGrid& uinf, const ScaleTransform& t, double x, double y);
/// Throws DivergentValue unless the solve converged.
double v_of_xy(const Solution& s, const ScaleTransform& t, double x, double y);

/// Index box [ix_lo, ix_hi) x [iz_lo, iz_hi).
struct SubWindow {
    std::size_t ix_lo = 0, ix_hi = 0, iz_lo = 0, iz_hi = 0;
    bool contains(std::size_t ix, std::size_t iz) const {
        return ix >= ix_lo && ix < ix_hi && iz >= iz_lo && iz < iz_hi;
    }
};

/// Nodes in the central half of the x coordinate range and of the z index
/// range (log y on lattice windows).
SubWindow central_half(const GridWindow& w);

/// Largest relative difference max |a - b| / max(1, |b|) between two grids
/// over the nodes of `sub` in a's window whose coordinates also exist in
/// b's window. Nodes infinite in either are skipped when equal.
double window_drift(const ValueGrid& a, const ValueGrid& b, const SubWindow& sub);

struct WideningCheck {
    bool performed = false;
    bool passed = false;
    double drift = 0.0;
    double threshold = 0.0;
    /// Drift of successive widenings on the base sub-window.
    std::vector<double> increments;
    std::string note;
};

struct WideningSolve {
    Solution base;
    WideningCheck check;
    SolveStatus status = SolveStatus::MaxIterations;
};

/// Solves on `l`, then on `rounds` successive widenings, comparing each on
/// the central half of the base window. Diverging when the base solve
/// diverges or the increments grow strictly over three widenings.
WideningSolve solve_with_widening(const UtilitySpec& u, const ScaleTransform& t, const Lattice& l,
                                  const SolverOptions& opt, int rounds = 1,
                                  double threshold = 1e-8);

struct ConcavityDefect {
    double along_z = 0.0;
    double along_x = 0.0;
};

/// Largest chord deficit (chord - v) / max(1, |v|) at interior nodes of
/// finite triples along each axis; nonpositive for a bi-concave grid.
ConcavityDefect concavity_defect(const ValueGrid& g);

/// Number formatted as the shortest decimal that parses back to the same double.
std::string format_double(double v);

/// CSV x,z,u0,m,uinf,benefit with one line per on-mask node.
void write_grid_csv(std::ostream& os, const ValueGrid& u0, const ValueGrid& m,
                    const ValueGrid& uinf, const std::vector<std::uint8_t>& benefit);

/// Calls f(i) for i in [0, n) on the worker threads; f must not depend on order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f);

/// Number of worker threads used by parallel_for; 0 selects the hardware
/// concurrency (the default).
void set_worker_count(unsigned workers);
unsigned worker_count();

}  // namespace illiquid
