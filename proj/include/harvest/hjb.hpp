#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "harvest/grid.hpp"
#include "harvest/model.hpp"
#include "harvest/parallel.hpp"

namespace harvest {

// ============================================================================
// Markov-chain approximation of the controlled diffusion on the log grid
// ============================================================================
//
// In (log x, log y) the diffusion matrix is the constant A, so upwind finite
// differences yield a locally consistent controlled chain with transitions to
// the 9-point neighborhood. The cross term moves mass to diagonal neighbors
// (NE/SW for a12 > 0, NW/SE for a12 < 0); nonnegativity of the axis rates
// requires |a12| <= min(a11 h2/h1, a22 h1/h2).

/// Neighbor offsets in fixed order: E, W, N, S, NE, SW, NW, SE.
inline constexpr std::array<std::array<int, 2>, 8> kNeighborOffsets{{
    {{1, 0}}, {{-1, 0}}, {{0, 1}}, {{0, -1}}, {{1, 1}}, {{-1, -1}}, {{-1, 1}}, {{1, -1}}}};

struct Mdp {
    Grid grid;
    DiffusionCoeffs coeffs;
    ModelParams params;
    HarvestSpec hs;
    double h1 = 0, h2 = 0;
    double dt_min = 0;

    struct Cand {
        double u = 0;
        double dt = 0;
        double reward = 0;
        std::array<double, 8> p{};  // transition probabilities to kNeighborOffsets
    };

    static constexpr int kMaxCands = 10;
    std::vector<std::array<int, 8>> nbr;  // clamped neighbor node ids
    std::vector<Cand> cands;              // node * kMaxCands + k
    std::vector<std::uint8_t> n_cands;

    const Cand& cand(int node, int k) const { return cands[std::size_t(node) * kMaxCands + k]; }
    int cand_count(int node) const { return n_cands[node]; }
};

namespace detail {

struct RateParts {
    double d1, d2, dd;  // axis diffusion rates and diagonal rate
    bool positive_cross;
};

inline RateParts diffusion_rate_parts(const DiffusionCoeffs& c, double h1, double h2) {
    RateParts r;
    double cross = std::abs(c.a12) / (2.0 * h1 * h2);
    r.d1 = c.a11 / (2.0 * h1 * h1) - cross;
    r.d2 = c.a22 / (2.0 * h2 * h2) - cross;
    r.dd = cross;
    r.positive_cross = c.a12 > 0;
    return r;
}

/// Upwind rates for one node and control. Order matches kNeighborOffsets.
inline void node_rates(const ModelParams& p, const HarvestSpec& hs, const RateParts& rp,
                       double x, double y, double u, double h1, double h2,
                       std::array<double, 8>& rates, double& q_total) {
    double mu1 = p.a1 - p.b1 * x - p.c1 * y;                    // drift of log x
    double mu2 = p.s2 - hs.h(y) * u - p.b2 * y + p.c2 * x;      // drift of log y
    rates[0] = rp.d1 + std::max(mu1, 0.0) / h1;
    rates[1] = rp.d1 + std::max(-mu1, 0.0) / h1;
    rates[2] = rp.d2 + std::max(mu2, 0.0) / h2;
    rates[3] = rp.d2 + std::max(-mu2, 0.0) / h2;
    if (rp.positive_cross) {
        rates[4] = rp.dd;
        rates[5] = rp.dd;
        rates[6] = rates[7] = 0.0;
    } else {
        rates[6] = rp.dd;
        rates[7] = rp.dd;
        rates[4] = rates[5] = 0.0;
    }
    q_total = 0.0;
    for (double r : rates) q_total += r;
    q_total = std::max(q_total, 1e-10);  // degenerate node (no noise, zero drift)
}

/// Candidate controls at a node: bang-bang endpoints plus the drift kink
/// where the controlled log-y drift changes sign (the one-step value is
/// piecewise linear in u between those points for linear yields); concave
/// yields additionally get a coarse control grid.
inline int candidate_controls(const ModelParams& p, const HarvestSpec& hs, double x, double y,
                              std::array<double, Mdp::kMaxCands>& out) {
    int n = 0;
    out[n++] = 0.0;
    if (p.M > 0) {
        if (!hs.yield_is_linear())
            for (int k = 1; k < 8; ++k) out[n++] = p.M * k / 8.0;
        out[n++] = p.M;
        double hy = hs.h(y);
        if (hy > 1e-14) {
            double u0 = (p.s2 - p.b2 * y + p.c2 * x) / hy;
            if (u0 > 1e-12 && u0 < p.M * (1.0 - 1e-12)) out[n++] = u0;
        }
    }
    return n;
}

} // namespace detail

/// Builds the controlled-chain tables: per node and candidate control, the
/// probabilities over the 9-point neighborhood and the interpolation interval
/// dt = 1/(total rate), with outward transitions reflected to the boundary.
inline Mdp build_mdp(const ModelParams& params, const HarvestSpec& hs,
                     const DiffusionCoeffs& coeffs, const Grid& grid) {
    params.validate();
    hs.validate();
    grid.validate();
    Mdp m;
    m.grid = grid;
    m.coeffs = coeffs;
    m.params = params;
    m.hs = hs;
    m.h1 = grid.h1();
    m.h2 = grid.h2();

    auto rp = detail::diffusion_rate_parts(coeffs, m.h1, m.h2);
    if (rp.d1 < 0 || rp.d2 < 0)
        throw std::invalid_argument(
            "build_mdp: cross term too large for the grid: need |a12| <= min(a11 h2/h1, a22 "
            "h1/h2); refine the grid or rotate coordinates (a11=" +
            format_double(coeffs.a11) + ", a12=" + format_double(coeffs.a12) +
            ", a22=" + format_double(coeffs.a22) + ")");

    int n = grid.size();
    m.nbr.resize(n);
    m.cands.resize(std::size_t(n) * Mdp::kMaxCands);
    m.n_cands.resize(n);
    m.dt_min = std::numeric_limits<double>::infinity();

    for (int node = 0; node < n; ++node) {
        int i = grid.ix(node), j = grid.iy(node);
        for (int k = 0; k < 8; ++k) {
            int ii = std::clamp(i + kNeighborOffsets[k][0], 0, grid.nx - 1);
            int jj = std::clamp(j + kNeighborOffsets[k][1], 0, grid.ny - 1);
            m.nbr[node][k] = grid.index(ii, jj);
        }
        double x = grid.node_x(i), y = grid.node_y(j);
        std::array<double, Mdp::kMaxCands> us;
        int nc = detail::candidate_controls(params, hs, x, y, us);
        m.n_cands[node] = std::uint8_t(nc);
        for (int k = 0; k < nc; ++k) {
            Mdp::Cand& c = m.cands[std::size_t(node) * Mdp::kMaxCands + k];
            c.u = us[k];
            std::array<double, 8> rates;
            double q_total;
            detail::node_rates(params, hs, rp, x, y, c.u, m.h1, m.h2, rates, q_total);
            c.dt = 1.0 / q_total;
            c.reward = reward_rate(hs, y, c.u);
            double psum = 0.0;
            for (int t = 0; t < 8; ++t) {
                c.p[t] = rates[t] * c.dt;
                if (c.p[t] < 0)
                    throw std::runtime_error("build_mdp: negative probability at node " +
                                             std::to_string(node));
                psum += c.p[t];
            }
            if (std::abs(psum - 1.0) > 1e-12)
                throw std::runtime_error("build_mdp: probabilities at node " +
                                         std::to_string(node) + " sum to " +
                                         format_double(psum));
            m.dt_min = std::min(m.dt_min, c.dt);
        }
    }
    return m;
}

// ============================================================================
// Pointwise Hamiltonian maximization
// ============================================================================

/// Maximizes Phi(y h(y) u) - dVdy * y h(y) u over u in [0, M]. For linear
/// yields the objective is linear in u, decided by the sign of
/// y h(y) (Phi' - dVdy); ties resolve to u = 0 (least intervention). Strictly
/// concave yields use golden-section search to 1e-8 in u.
inline double pointwise_max(const ModelParams& p, const HarvestSpec& hs, const State2D& z,
                            double dVdy, double tie_tol = 0.0) {
    double w = z.y * hs.h(z.y);  // harvested biomass rate per unit effort
    if (p.M <= 0 || w <= 0) return 0.0;
    if (hs.yield_is_linear()) {
        double coef = w * (hs.phi_prime0() - dVdy);
        return coef > tie_tol ? p.M : 0.0;
    }
    auto objective = [&](double u) { return hs.phi(w * u) - dVdy * w * u; };
    double lo = 0.0, hi = p.M;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = objective(c), fd = objective(d);
    while (hi - lo > 1e-8) {
        if (fc >= fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = objective(d);
        }
    }
    double u_star = 0.5 * (lo + hi);
    double best = objective(u_star);
    // endpoints and the tie rule
    if (objective(p.M) >= best) {
        u_star = p.M;
        best = objective(p.M);
    }
    if (objective(0.0) + tie_tol >= best) u_star = 0.0;
    return u_star;
}

// ============================================================================
// Average-reward solver: relative value iteration with a Howard warm start
// ============================================================================

struct SolveOptions {
    bool warm_start = true;      // Howard policy iteration before the RVI loop
    int ref_node = -1;           // anchoring node; -1 = grid center
    int max_policy_iters = 40;
};

struct SolveResult {
    ValueFunction value;
    PolicyTable policy;                // raw per-node maximizing efforts
    std::vector<double> span_history;  // RVI span per iteration
    long iterations = 0;
    bool converged = false;
};

namespace detail {

/// Evaluates a fixed stationary policy (candidate index per node) exactly:
/// solves V_i - sum_m p_im V_m + rho dt_i = c_i dt_i with V(ref) = 0.
inline void evaluate_fixed_policy(const Mdp& m, const std::vector<int>& choice, int ref_node,
                                  std::vector<double>& V, double& rho) {
    int n = m.grid.size();
    using Trip = Eigen::Triplet<double>;
    std::vector<Trip> trips;
    trips.reserve(std::size_t(n) * 10 + 2);
    Eigen::VectorXd b(n + 1);
    for (int i = 0; i < n; ++i) {
        const Mdp::Cand& c = m.cand(i, choice[i]);
        double diag = 1.0;
        std::array<double, 8> offdiag{};
        for (int t = 0; t < 8; ++t) {
            int j = m.nbr[i][t];
            if (j == i) diag -= c.p[t];
            else offdiag[t] = c.p[t];
        }
        trips.emplace_back(i, i, diag);
        for (int t = 0; t < 8; ++t) {
            int j = m.nbr[i][t];
            if (j != i && offdiag[t] != 0.0) trips.emplace_back(i, j, -offdiag[t]);
        }
        trips.emplace_back(i, n, c.dt);  // rho column
        b(i) = c.reward * c.dt;
    }
    trips.emplace_back(n, ref_node, 1.0);  // anchor V(ref) = 0
    b(n) = 0.0;

    Eigen::SparseMatrix<double> A(n + 1, n + 1);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(A);
    lu.factorize(A);
    if (lu.info() != Eigen::Success)
        throw std::runtime_error("policy evaluation: singular linear system");
    Eigen::VectorXd sol = lu.solve(b);
    V.resize(n);
    for (int i = 0; i < n; ++i) V[i] = sol(i);
    rho = sol(n);
}

/// Greedy candidate per node for the discrete Bellman operator
/// max_u [ c(i,u) + (sum_j p(i,j|u) V_j - V_i)/dt(i,u) ]. Ties keep the
/// incumbent to avoid cycling, then prefer smaller efforts.
inline void greedy_choice(const Mdp& m, const std::vector<double>& V, std::vector<int>& choice) {
    int n = m.grid.size();
    parallel_for_blocks(std::size_t(n), [&](std::size_t b, std::size_t e) {
        for (std::size_t idx = b; idx < e; ++idx) {
            int i = int(idx);
            double vals[Mdp::kMaxCands];
            double best = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < m.cand_count(i); ++k) {
                const Mdp::Cand& c = m.cand(i, k);
                double pv = 0.0;
                for (int t = 0; t < 8; ++t) pv += c.p[t] * V[m.nbr[i][t]];
                vals[k] = c.reward + (pv - V[i]) / c.dt;
                best = std::max(best, vals[k]);
            }
            double tie = 1e-12 * (1.0 + std::abs(best));
            if (vals[choice[i]] >= best - tie) continue;  // keep incumbent on ties
            int best_k = 0;
            for (int k = 1; k < m.cand_count(i); ++k) {
                bool wins = vals[k] > vals[best_k] + tie ||
                            (vals[k] >= vals[best_k] - tie && m.cand(i, k).u < m.cand(i, best_k).u);
                if (wins) best_k = k;
            }
            choice[i] = best_k;
        }
    });
}

} // namespace detail

/// Relative value iteration for the average-reward optimality equation of the
/// approximating chain, uniformized to the step dtbar = dt_min/2. rho is read
/// off the span midpoint of one-step updates; the iteration stops when
/// span(V_{k+1} - V_k) < tol * dtbar (stricter than tol * dt_min). A Howard
/// policy-iteration warm start (exact sparse policy evaluations) cuts the
/// desk-scale runtime; the RVI loop still certifies the fixed point.
inline SolveResult solve_average_reward(const Mdp& m, double tol, long max_iters,
                                        const SolveOptions& opt = {}) {
    int n = m.grid.size();
    int ref = opt.ref_node >= 0 ? opt.ref_node : m.grid.index(m.grid.nx / 2, m.grid.ny / 2);
    if (ref < 0 || ref >= n) throw std::invalid_argument("solve_average_reward: bad ref node");
    double dtbar = 0.5 * m.dt_min;

    std::vector<double> V(n, 0.0), TV(n, 0.0);
    std::vector<int> choice(n, 0);

    if (opt.warm_start) {
        // Howard iterations: evaluate exactly, improve greedily.
        detail::greedy_choice(m, V, choice);
        std::vector<int> prev;
        double rho = 0.0;
        for (int it = 0; it < opt.max_policy_iters; ++it) {
            detail::evaluate_fixed_policy(m, choice, ref, V, rho);
            prev = choice;
            detail::greedy_choice(m, V, choice);
            if (prev == choice) break;
        }
    }

    SolveResult res;
    res.value.grid = m.grid;
    res.value.ref_node = ref;

    double rho = 0.0;
    bool converged = false;
    long it = 0;
    for (; it < max_iters; ++it) {
        parallel_for_blocks(std::size_t(n), [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                double vi = V[i];
                double best = -std::numeric_limits<double>::infinity();
                for (int k = 0; k < m.cand_count(int(i)); ++k) {
                    const Mdp::Cand& c = m.cands[i * Mdp::kMaxCands + k];
                    double pv = 0.0;
                    for (int t = 0; t < 8; ++t) pv += c.p[t] * V[m.nbr[i][t]];
                    double w = dtbar / c.dt;
                    double val = c.reward * dtbar + w * (pv - vi);
                    if (val > best) best = val;
                }
                TV[i] = vi + best;
            }
        });
        double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
        for (int i = 0; i < n; ++i) {
            double d = TV[i] - V[i];
            dmin = std::min(dmin, d);
            dmax = std::max(dmax, d);
        }
        double span = dmax - dmin;
        res.span_history.push_back(span);
        rho = 0.5 * (dmax + dmin) / dtbar;
        double anchor = TV[ref];
        for (int i = 0; i < n; ++i) V[i] = TV[i] - anchor;
        if (span < tol * dtbar) {
            converged = true;
            ++it;
            break;
        }
    }
    if (!converged)
        throw std::runtime_error("solve_average_reward: max_iters = " + std::to_string(max_iters) +
                                 " exceeded, final span = " +
                                 format_double(res.span_history.empty() ? 0.0
                                                                        : res.span_history.back()));

    res.iterations = it;
    res.converged = true;
    res.value.values = V;
    res.value.rho = rho;
    res.value.iterations = int(it);
    res.value.final_span = res.span_history.back();

    // Raw policy: per-node maximizing effort at the converged value.
    detail::greedy_choice(m, V, choice);
    res.policy.grid = m.grid;
    res.policy.max_effort = m.params.M;
    res.policy.efforts.resize(n);
    for (int i = 0; i < n; ++i) res.policy.efforts[i] = m.cand(i, choice[i]).u;
    return res;
}

/// Max over interior nodes of |max_u [L_u V + c] - rho| for a converged value.
inline double hjb_residual(const ValueFunction& vf, const Mdp& m) {
    if (!vf.grid.same_shape(m.grid))
        throw std::invalid_argument("hjb_residual: value and mdp grids disagree");
    int n = m.grid.size();
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!m.grid.interior(i)) continue;
        double best = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < m.cand_count(i); ++k) {
            const Mdp::Cand& c = m.cand(i, k);
            double pv = 0.0;
            for (int t = 0; t < 8; ++t) pv += c.p[t] * vf.values[m.nbr[i][t]];
            best = std::max(best, c.reward + (pv - vf.values[i]) / c.dt);
        }
        worst = std::max(worst, std::abs(best - vf.rho));
    }
    return worst;
}

/// Average reward of an arbitrary feedback policy on the approximating chain
/// (exact sparse policy evaluation); the constant-policy oracle.
inline double evaluate_policy_table(const ModelParams& params, const HarvestSpec& hs,
                                    const DiffusionCoeffs& coeffs, const Grid& grid,
                                    const PolicyTable& policy, int ref_node = -1) {
    params.validate();
    grid.validate();
    auto rp = detail::diffusion_rate_parts(coeffs, grid.h1(), grid.h2());
    if (rp.d1 < 0 || rp.d2 < 0)
        throw std::invalid_argument("evaluate_policy_table: cross term too large for grid");
    int n = grid.size();
    int ref = ref_node >= 0 ? ref_node : grid.index(grid.nx / 2, grid.ny / 2);

    // Single-candidate chain with the policy's effort at each node.
    Mdp m;
    m.grid = grid;
    m.coeffs = coeffs;
    m.params = params;
    m.hs = hs;
    m.h1 = grid.h1();
    m.h2 = grid.h2();
    m.nbr.resize(n);
    m.cands.resize(std::size_t(n) * Mdp::kMaxCands);
    m.n_cands.assign(n, 1);
    for (int node = 0; node < n; ++node) {
        int i = grid.ix(node), j = grid.iy(node);
        for (int k = 0; k < 8; ++k) {
            int ii = std::clamp(i + kNeighborOffsets[k][0], 0, grid.nx - 1);
            int jj = std::clamp(j + kNeighborOffsets[k][1], 0, grid.ny - 1);
            m.nbr[node][k] = grid.index(ii, jj);
        }
        double x = grid.node_x(i), y = grid.node_y(j);
        Mdp::Cand& c = m.cands[std::size_t(node) * Mdp::kMaxCands];
        c.u = std::clamp(policy.at(x, y), 0.0, params.M);
        std::array<double, 8> rates;
        double q_total;
        detail::node_rates(params, hs, rp, x, y, c.u, m.h1, m.h2, rates, q_total);
        c.dt = 1.0 / q_total;
        c.reward = reward_rate(hs, y, c.u);
        for (int t = 0; t < 8; ++t) c.p[t] = rates[t] * c.dt;
    }
    std::vector<int> choice(n, 0);
    std::vector<double> V;
    double rho = 0.0;
    detail::evaluate_fixed_policy(m, choice, ref, V, rho);
    return rho;
}

// ============================================================================
// Policy regularization (Lipschitz smoothing)
// ============================================================================

/// Kernel-smooths the effort table with a normalized triangular kernel over
/// the (2 radius + 1)^2 neighborhood, then clamps to [0, M]. The result has
/// difference quotients bounded by M / (radius * spacing); radius 0 is the
/// identity.
inline PolicyTable lipschitz_regularize(const PolicyTable& policy, int radius) {
    if (radius < 0) throw std::invalid_argument("lipschitz_regularize: radius >= 0");
    policy.validate();
    if (radius == 0) return policy;
    PolicyTable out = policy;
    out.lipschitz_radius = radius;
    const Grid& g = policy.grid;
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            double num = 0.0, den = 0.0;
            for (int dj = -radius; dj <= radius; ++dj) {
                int jj = j + dj;
                if (jj < 0 || jj >= g.ny) continue;
                for (int di = -radius; di <= radius; ++di) {
                    int ii = i + di;
                    if (ii < 0 || ii >= g.nx) continue;
                    double w = double(radius + 1 - std::abs(di)) *
                               double(radius + 1 - std::abs(dj));
                    num += w * policy.efforts[g.index(ii, jj)];
                    den += w;
                }
            }
            out.efforts[g.index(i, j)] = std::clamp(num / den, 0.0, policy.max_effort);
        }
    }
    return out;
}

} // namespace harvest
