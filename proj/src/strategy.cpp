#include "illiquid/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace illiquid {

StrategyPlan build_plan(const ValueGrid& g0, int n, const Boundary& boundary, double contact_tol) {
    if (n < 0) throw std::invalid_argument("build_plan: n must be nonnegative");
    StrategyPlan plan;
    plan.n = n;
    plan.window = g0.window;
    plan.contact_tol = contact_tol;
    plan.surfaces.push_back(g0);
    for (int k = 1; k <= 2 * n + 1; ++k) {
        const ValueGrid& prev = plan.surfaces.back();
        plan.surfaces.push_back(k % 2 == 1 ? concavify_z(prev, boundary) : concavify_x(prev, boundary));
    }
    for (const auto& s : plan.surfaces)
        for (double v : s.values)
            if (v == PLUS_INFINITY) throw std::domain_error("build_plan: surfaces must be finite");
    return plan;
}

std::size_t node_index(const std::vector<double>& axis, double v) {
    auto it = std::lower_bound(axis.begin(), axis.end(), v);
    std::size_t i = std::size_t(it - axis.begin());
    auto close = [&](std::size_t k) {
        return k < axis.size() && std::fabs(axis[k] - v) <= 1e-12 * std::max(1.0, std::fabs(v));
    };
    if (close(i)) return i;
    if (i > 0 && close(i - 1)) return i - 1;
    throw std::invalid_argument("node_index: value is not a grid node");
}

namespace {

struct Bracket {
    std::size_t lo, hi;
};

// Nearest contacts at-or-below `from_lo` and at-or-above `from_hi`.
Bracket search_contacts(const std::vector<double>& f, const std::vector<double>& env,
                        std::size_t from_lo, std::size_t from_hi, double tol) {
    auto contact = [&](std::size_t k) {
        return f[k] != MINUS_INFINITY && is_contact(env[k], f[k], tol);
    };
    std::size_t lo = from_lo;
    while (!contact(lo)) {
        if (lo == 0 || f[lo - 1] == MINUS_INFINITY)
            throw MissingContact("no contact below the query within the finite block");
        --lo;
    }
    std::size_t hi = from_hi;
    while (!contact(hi)) {
        if (hi + 1 >= f.size() || f[hi + 1] == MINUS_INFINITY)
            throw MissingContact("no contact above the query within the finite block");
        ++hi;
    }
    return {lo, hi};
}

// Cell [j, j+1] containing v, or j = j+1 when v is a node.
std::pair<std::size_t, std::size_t> locate(const std::vector<double>& axis, double v) {
    if (!(v >= axis.front() && v <= axis.back())) throw std::out_of_range("query outside the window");
    auto it = std::lower_bound(axis.begin(), axis.end(), v);
    std::size_t i = std::size_t(it - axis.begin());
    if (*it == v) return {i, i};
    return {i - 1, i};
}

}  // namespace

ZInterval z_contact_interval(const ValueGrid& upper, const ValueGrid& lower, double x, double z,
                             double tol) {
    const GridWindow& w = *upper.window;
    std::size_t i = node_index(w.x_axis, x);
    std::vector<double> f(w.nz()), env(w.nz());
    for (std::size_t j = 0; j < w.nz(); ++j) {
        f[j] = lower.at(i, j);
        env[j] = upper.at(i, j);
    }
    auto [a, b] = locate(w.z_axis, z);
    if (f[a] == MINUS_INFINITY || f[b] == MINUS_INFINITY)
        throw std::domain_error("z_contact_interval: query outside the finite block");
    Bracket br = search_contacts(f, env, a, b, tol);
    ZInterval out;
    out.j1 = br.lo;
    out.j2 = br.hi;
    out.z1 = w.z_axis[br.lo];
    out.z2 = w.z_axis[br.hi];
    if (br.lo == br.hi) out.z1 = out.z2 = z;
    return out;
}

double sample_z_exit(double z, double z1, double z2, Philox& rng) {
    if (!(z1 <= z && z <= z2)) throw std::invalid_argument("sample_z_exit: need z1 <= z <= z2");
    if (z1 == z2) return z;
    double p = (z - z1) / (z2 - z1);
    return rng.uniform() < p ? z2 : z1;
}

JumpLaw x_jump_law(const ValueGrid& upper, const ValueGrid& lower, double u, double v, double tol) {
    const GridWindow& w = *upper.window;
    std::size_t j = node_index(w.z_axis, v);
    std::vector<double> f(w.nx()), env(w.nx());
    for (std::size_t i = 0; i < w.nx(); ++i) {
        f[i] = lower.at(i, j);
        env[i] = upper.at(i, j);
    }
    auto [a, b] = locate(w.x_axis, u);
    if (f[a] == MINUS_INFINITY || f[b] == MINUS_INFINITY)
        throw std::domain_error("x_jump_law: query outside the finite block");
    Bracket br = search_contacts(f, env, a, b, tol);
    JumpLaw law;
    law.ib = br.lo;
    law.ia = br.hi;
    if (br.lo == br.hi) {
        law.a = law.b = u;
        law.prob_a = 1.0;
        return law;
    }
    law.b = w.x_axis[br.lo];
    law.a = w.x_axis[br.hi];
    law.prob_a = (u - law.b) / (law.a - law.b);
    double fb = env[br.lo], fa = env[br.hi];
    for (std::size_t k = br.lo + 1; k < br.hi; ++k) {
        double lam = (law.a - w.x_axis[k]) / (law.a - law.b);
        double chord = lam * fb + (1.0 - lam) * fa;
        if (std::fabs(env[k] - chord) > tol * std::max(1.0, std::fabs(chord)))
            throw std::runtime_error("x_jump_law: surface is not affine between the contacts");
    }
    return law;
}

double sample_jump(const JumpLaw& law, Philox& rng) {
    if (law.a == law.b) return law.a;
    return rng.uniform() < law.prob_a ? law.a : law.b;
}

namespace {

struct PathExitSampler {
    const ScaleTransform& t;
    const MarketSpec& spec;
    ZStepper stepper;
    double dt;
    double horizon;

    PathExitSampler(const ScaleTransform& t_, const MarketSpec& s_, double dt_, double h)
        : t(t_), spec(s_), stepper(t_, s_, dt_), dt(dt_), horizon(h) {}

    // Returns the exit level; `timed_out` is set when the two-point law
    // resolved the exit at the horizon.
    double exit(double z, double z1, double z2, Philox& rng, bool& timed_out) const {
        timed_out = false;
        if (z <= z1) return z1;
        if (z >= z2) return z2;
        std::size_t steps = std::size_t(std::ceil(horizon / dt));
        if (stepper.log_scale() || stepper.arithmetic()) {
            bool lg = stepper.log_scale();
            double sign = z < 0.0 ? -1.0 : 1.0;
            auto phi = [&](double v) { return lg ? std::log(std::fabs(v)) : v; };
            double l1 = phi(z1), l2 = phi(z2);
            // Upper and lower levels in the stepping coordinate with their z values.
            double up = std::max(l1, l2), dn = std::min(l1, l2);
            double z_up = l1 > l2 ? z1 : z2, z_dn = l1 > l2 ? z2 : z1;
            double vol = stepper.step_vol();
            double drift = lg ? -0.5 * vol * vol : 0.0;
            double var = vol * vol;
            double l = phi(z);
            for (std::size_t k = 0; k < steps; ++k) {
                double ln = l + vol * rng.normal() + drift;
                if (ln >= up) return z_up;
                if (ln <= dn) return z_dn;
                double pu = 0.0, pd = 0.0;
                double du = (up - l) * (up - ln), dd = (l - dn) * (ln - dn);
                if (du < 25.0 * var) pu = std::exp(-2.0 * du / var);
                if (dd < 25.0 * var) pd = std::exp(-2.0 * dd / var);
                if (pu > 0.0 || pd > 0.0) {
                    double r = rng.uniform();
                    if (r < pu) return z_up;
                    if (r < pu + pd) return z_dn;
                }
                l = ln;
            }
            timed_out = true;
            double zc = lg ? sign * std::exp(l) : l;
            return sample_z_exit(std::clamp(zc, z1, z2), z1, z2, rng);
        }
        double sq = std::sqrt(dt);
        for (std::size_t k = 0; k < steps; ++k) {
            double s = sigma_tilde(t, spec, z) * sq;
            double zn = stepper.step(z, rng.normal());
            if (zn >= z2) return z2;
            if (zn <= z1) return z1;
            double var = s * s;
            double du = (z2 - z) * (z2 - zn), dd = (z - z1) * (zn - z1);
            double pu = du < 25.0 * var ? std::exp(-2.0 * du / var) : 0.0;
            double pd = dd < 25.0 * var ? std::exp(-2.0 * dd / var) : 0.0;
            if (pu > 0.0 || pd > 0.0) {
                double r = rng.uniform();
                if (r < pu) return z2;
                if (r < pu + pd) return z1;
            }
            z = zn;
        }
        timed_out = true;
        return sample_z_exit(z, z1, z2, rng);
    }
};

void mean_and_stderr(const std::vector<double>& v, double& mean, double& se) {
    // Sums of deviations from the first sample keep a constant sample exact.
    double n = double(v.size());
    double s = 0.0;
    for (double x : v) s += x - v.front();
    mean = v.front() + s / n;
    double q = 0.0;
    for (double x : v) q += (x - mean) * (x - mean);
    se = v.size() > 1 ? std::sqrt(q / (n - 1.0) / n) : 0.0;
}

}  // namespace

SimResult simulate_strategy(const StrategyPlan& plan, double x0, double z0, std::size_t n_paths,
                            std::uint64_t seed, const SimMode& mode, const ScaleTransform& t,
                            const MarketSpec& spec) {
    if (n_paths == 0) throw std::invalid_argument("simulate_strategy: n_paths must be positive");
    if (plan.surfaces.size() != std::size_t(2 * plan.n + 2))
        throw std::invalid_argument("simulate_strategy: plan needs U^0..U^{2n+1}");
    const GridWindow& w = *plan.window;
    std::size_t ix0 = node_index(w.x_axis, x0);
    auto [ja, jb] = locate(w.z_axis, z0);
    const ValueGrid& top = plan.surfaces.back();
    double ta = top.at(ix0, ja), tb = top.at(ix0, jb);
    if (!std::isfinite(ta) || !std::isfinite(tb))
        throw std::domain_error("simulate_strategy: start point outside the finite domain");
    SimResult res;
    res.n_paths = n_paths;
    res.seed = seed;
    res.target = ja == jb ? ta
                          : ta + (tb - ta) * (z0 - w.z_axis[ja]) / (w.z_axis[jb] - w.z_axis[ja]);

    int n = plan.n;
    std::size_t rounds = std::size_t(n + 1);
    std::vector<double> payoff(n_paths), xterm(n_paths), incr(n_paths * rounds);
    std::vector<std::uint8_t> timed(n_paths * rounds, 0);
    std::optional<PathExitSampler> sampler;
    if (mode.kind == SimMode::Kind::PathSim) sampler.emplace(t, spec, mode.dt, mode.horizon);

    std::mutex err_mu;
    std::exception_ptr err;
    const std::size_t chunk = 1024;
    std::size_t n_chunks = (n_paths + chunk - 1) / chunk;
    parallel_for(n_chunks, [&](std::size_t c) {
        try {
            for (std::size_t p = c * chunk; p < std::min(n_paths, (c + 1) * chunk); ++p) {
                double x = x0, z = z0;
                for (int i = 1; i <= n + 1; ++i) {
                    int k = n - i + 1;
                    Philox zr(seed, p, std::uint32_t(2 * i));
                    Philox jr(seed, p, std::uint32_t(2 * i + 1));
                    double zs = z;
                    try {
                        ZInterval iv = z_contact_interval(plan.surfaces[2 * k + 1],
                                                          plan.surfaces[2 * k], x, z, plan.contact_tol);
                        if (iv.z1 != iv.z2) {
                            if (sampler) {
                                bool to = false;
                                z = sampler->exit(z, iv.z1, iv.z2, zr, to);
                                timed[p * rounds + std::size_t(i - 1)] = to;
                            } else {
                                z = sample_z_exit(z, iv.z1, iv.z2, zr);
                            }
                        }
                        incr[p * rounds + std::size_t(i - 1)] = z - zs;
                        if (i <= n) {
                            JumpLaw law = x_jump_law(plan.surfaces[2 * k], plan.surfaces[2 * k - 1],
                                                     x, z, plan.contact_tol);
                            x = sample_jump(law, jr);
                        }
                    } catch (const std::exception& e) {
                        std::ostringstream os;
                        os << "simulate_strategy: round " << i << " at x=" << x << " z=" << z << ": "
                           << e.what();
                        throw std::runtime_error(os.str());
                    }
                }
                std::size_t ix = node_index(w.x_axis, x);
                auto [j1, j2] = locate(w.z_axis, z);
                if (j1 != j2) throw std::runtime_error("simulate_strategy: path ended between z nodes");
                payoff[p] = plan.surfaces[0].at(ix, j1);
                xterm[p] = x - x0;
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);

    mean_and_stderr(payoff, res.mean, res.std_error);
    mean_and_stderr(xterm, res.mean_x_terminal, res.stderr_x_terminal);
    res.mean_x_terminal += x0;
    std::vector<double> col(n_paths);
    for (std::size_t r = 0; r < rounds; ++r) {
        for (std::size_t p = 0; p < n_paths; ++p) col[p] = incr[p * rounds + r];
        RoundStats rs;
        mean_and_stderr(col, rs.z_increment_mean, rs.z_increment_stderr);
        res.rounds.push_back(rs);
    }
    if (sampler) {
        std::size_t c = 0;
        for (auto v : timed) c += v;
        res.horizon_fraction = double(c) / double(timed.size());
    }
    return res;
}

}  // namespace illiquid
