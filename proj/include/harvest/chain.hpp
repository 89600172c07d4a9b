#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "harvest/rng.hpp"
#include "harvest/util.hpp"

namespace harvest {

// ============================================================================
// Finite-state jump chain driving the fast noise
// ============================================================================

/// Finite-state pure-jump Markov chain: per-state jump rates q(w), a
/// row-stochastic transition kernel with zero diagonal, and the two noise
/// maps r1, r2 that multiply prey and predator densities.
///
/// The generator acts on per-state vectors as Q = diag(q) (kernel - I).
struct JumpChainSpec {
    std::vector<std::string> states;
    std::vector<double> jump_rate;            // q(w) > 0
    std::vector<std::vector<double>> kernel;  // row-stochastic, zero diagonal
    std::vector<double> r1;
    std::vector<double> r2;

    int size() const { return static_cast<int>(states.size()); }

    /// Construction-time validation: shapes, positive rates, stochastic rows,
    /// zero diagonal, irreducibility (single communicating class).
    void validate() const;

    Eigen::MatrixXd generator() const {
        int n = size();
        Eigen::MatrixXd Q(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                Q(i, j) = jump_rate[i] * (kernel[i][j] - (i == j ? 1.0 : 0.0));
        return Q;
    }
};

/// Averaged covariance of the integrated noise and its symmetric PSD square
/// root, plus the effective intrinsic rates of the limit diffusion (the rates
/// are filled in by the model module, not here).
struct DiffusionCoeffs {
    double a11 = 0, a12 = 0, a22 = 0;      // A, symmetric PSD
    double s11 = 0, s12 = 0, s22 = 0;      // sigma, symmetric PSD square root
    double abar1 = 0, abar2 = 0;           // effective signed intrinsic rates

    double a(int i, int j) const {
        if (i == 0 && j == 0) return a11;
        if (i == 1 && j == 1) return a22;
        return a12;
    }
};

namespace detail {

inline std::vector<int> reachable_from(const JumpChainSpec& spec, int start, bool transpose) {
    int n = spec.size();
    std::vector<int> seen(n, 0);
    std::vector<int> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w = 0; w < n; ++w) {
            double p = transpose ? spec.kernel[w][v] : spec.kernel[v][w];
            if (p > 0.0 && !seen[w]) {
                seen[w] = 1;
                stack.push_back(w);
            }
        }
    }
    return seen;
}

} // namespace detail

inline void JumpChainSpec::validate() const {
    int n = size();
    if (n < 2) throw std::invalid_argument("JumpChainSpec: need at least 2 states");
    if (static_cast<int>(jump_rate.size()) != n || static_cast<int>(kernel.size()) != n ||
        static_cast<int>(r1.size()) != n || static_cast<int>(r2.size()) != n)
        throw std::invalid_argument("JumpChainSpec: field sizes disagree with state count");
    for (int i = 0; i < n; ++i) {
        if (!(jump_rate[i] > 0.0))
            throw std::invalid_argument("JumpChainSpec: jump rate of state '" + states[i] +
                                        "' must be positive");
        if (static_cast<int>(kernel[i].size()) != n)
            throw std::invalid_argument("JumpChainSpec: kernel row " + std::to_string(i) +
                                        " has wrong length");
        if (kernel[i][i] != 0.0)
            throw std::invalid_argument("JumpChainSpec: kernel diagonal must be zero (state '" +
                                        states[i] + "')");
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            if (kernel[i][j] < 0.0)
                throw std::invalid_argument("JumpChainSpec: negative kernel entry");
            s += kernel[i][j];
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw std::invalid_argument("JumpChainSpec: kernel row for state '" + states[i] +
                                        "' sums to " + format_double(s) + ", expected 1");
    }
    // Irreducibility: every state reachable from state 0 and vice versa.
    auto fwd = detail::reachable_from(*this, 0, false);
    auto bwd = detail::reachable_from(*this, 0, true);
    std::vector<std::string> stranded;
    for (int i = 0; i < n; ++i)
        if (!fwd[i] || !bwd[i]) stranded.push_back(states[i]);
    if (!stranded.empty()) {
        std::string msg = "JumpChainSpec: chain is reducible; states outside the class of '" +
                          states[0] + "': {";
        for (std::size_t i = 0; i < stranded.size(); ++i)
            msg += (i ? ", " : "") + stranded[i];
        msg += "}";
        throw std::invalid_argument(msg);
    }
}

// ============================================================================
// Stationary analysis and the Poisson equation
// ============================================================================

/// Stationary distribution pi solving pi Q = 0, sum(pi) = 1. Unique for an
/// irreducible chain.
inline std::vector<double> stationary_distribution(const JumpChainSpec& spec) {
    spec.validate();
    int n = spec.size();
    Eigen::MatrixXd Q = spec.generator();
    // Solve [Q^T; 1^T] pi = [0; 1] by least squares; exact for irreducible chains.
    Eigen::MatrixXd M(n + 1, n);
    M.topRows(n) = Q.transpose();
    M.row(n).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 1);
    b(n) = 1.0;
    Eigen::VectorXd pi = M.colPivHouseholderQr().solve(b);
    // One iterative refinement pass keeps the residual at roundoff level.
    Eigen::VectorXd resid = b - M * pi;
    pi += M.colPivHouseholderQr().solve(resid);
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = std::max(0.0, pi(i));
    double s = 0.0;
    for (double v : out) s += v;
    for (double& v : out) v /= s;
    return out;
}

/// Replaces r_i by r_i - pi.r_i so both noise maps have zero stationary mean.
/// Idempotent.
inline JumpChainSpec center_noise(const JumpChainSpec& spec) {
    auto pi = stationary_distribution(spec);
    JumpChainSpec out = spec;
    for (auto* r : {&out.r1, &out.r2}) {
        double m = 0.0;
        for (int i = 0; i < out.size(); ++i) m += pi[i] * (*r)[i];
        for (auto& v : *r) v -= m;
    }
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    KahanSum s;
    for (std::size_t i = 0; i < a.size(); ++i) s.add(a[i] * b[i]);
    return s.value();
}

/// Solves the Poisson equation Q psi = -phi for centered phi (pi.phi = 0),
/// normalized so that pi.psi = 0. This is the Fredholm-alternative solve that
/// realizes the action of the deviation kernel on finite chains.
inline std::vector<double> solve_poisson(const JumpChainSpec& spec,
                                         const std::vector<double>& phi) {
    spec.validate();
    int n = spec.size();
    if (static_cast<int>(phi.size()) != n)
        throw std::invalid_argument("solve_poisson: phi has wrong length");
    auto pi = stationary_distribution(spec);
    double proj = dot(pi, phi);
    if (std::abs(proj) > 1e-10)
        throw std::invalid_argument("solve_poisson: phi is not centered, pi.phi = " +
                                    format_double(proj));

    // Work with the exactly centered right-hand side; the precondition bounds
    // how far phi may sit from it.
    std::vector<double> phic(phi);
    for (auto& v : phic) v -= proj;

    Eigen::MatrixXd Q = spec.generator();
    Eigen::MatrixXd M(n + 1, n);
    M.topRows(n) = Q;
    for (int j = 0; j < n; ++j) M(n, j) = pi[j];
    Eigen::VectorXd b(n + 1);
    for (int i = 0; i < n; ++i) b(i) = -phic[i];
    b(n) = 0.0;
    auto qr = M.colPivHouseholderQr();
    Eigen::VectorXd psi = qr.solve(b);
    Eigen::VectorXd resid = b - M * psi;
    psi += qr.solve(resid);

    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = psi(i);
    double anchor = dot(pi, out);
    for (auto& v : out) v -= anchor;
    // Contract: residual at solver tolerance, else report it.
    double rmax = 0.0;
    Eigen::VectorXd qpsi = Q * psi;
    for (int i = 0; i < n; ++i) rmax = std::max(rmax, std::abs(qpsi(i) + phic[i]));
    if (rmax > 1e-12)
        throw std::runtime_error("solve_poisson: singular solve, residual |Q psi + phi|_inf = " +
                                 format_double(rmax));
    return out;
}

// ============================================================================
// Averaged diffusion matrix
// ============================================================================

/// Averaged covariance A of the integrated noise, via the Poisson solver:
/// with psi_j solving Q psi_j = -r_j,
///   a_ij = pi.(r_i * psi_j) + pi.(r_j * psi_i)
/// (entrywise products), which equals the integrated-autocovariance double
/// integral for finite chains. sigma is the symmetric PSD square root of A.
/// Effective rates are left to the model module.
inline DiffusionCoeffs diffusion_matrix(const JumpChainSpec& spec) {
    auto pi = stationary_distribution(spec);
    for (auto* r : {&spec.r1, &spec.r2}) {
        double m = dot(pi, *r);
        if (std::abs(m) > 1e-10)
            throw std::invalid_argument("diffusion_matrix: spec is not centered (pi.r = " +
                                        format_double(m) + "); call center_noise first");
    }
    auto psi1 = solve_poisson(spec, spec.r1);
    auto psi2 = solve_poisson(spec, spec.r2);
    int n = spec.size();
    auto weighted = [&](const std::vector<double>& a, const std::vector<double>& b) {
        KahanSum s;
        for (int i = 0; i < n; ++i) s.add(pi[i] * a[i] * b[i]);
        return s.value();
    };
    DiffusionCoeffs c;
    c.a11 = 2.0 * weighted(spec.r1, psi1);
    c.a22 = 2.0 * weighted(spec.r2, psi2);
    c.a12 = weighted(spec.r1, psi2) + weighted(spec.r2, psi1);

    Eigen::Matrix2d A;
    A << c.a11, c.a12, c.a12, c.a22;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(A);
    Eigen::Vector2d ev = es.eigenvalues();
    for (int k = 0; k < 2; ++k) {
        if (ev(k) < -1e-10)
            throw std::runtime_error("diffusion_matrix: A has negative eigenvalue " +
                                     format_double(ev(k)) + "; invalid spec");
        if (ev(k) < 0.0) ev(k) = 0.0;  // clip roundoff-negative eigenvalues
    }
    Eigen::Matrix2d S = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
                        es.eigenvectors().transpose();
    c.s11 = S(0, 0);
    c.s12 = 0.5 * (S(0, 1) + S(1, 0));
    c.s22 = S(1, 1);
    return c;
}

// ============================================================================
// Path sampling
// ============================================================================

struct JumpEvent {
    double time;
    int state;
};

/// Samples the jump chain: exact exponential holding times with rate q(w),
/// next state drawn from the kernel row. The first event is (0, start).
inline std::vector<JumpEvent> sample_jump_path(const JumpChainSpec& spec, double t_end,
                                               std::uint64_t seed, int start = 0) {
    if (!(t_end > 0.0)) throw std::invalid_argument("sample_jump_path: t_end must be positive");
    spec.validate();
    if (start < 0 || start >= spec.size())
        throw std::invalid_argument("sample_jump_path: start state out of range");
    auto rng = make_rng(seed, stage_id(RngStage::chain_path), 0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<JumpEvent> path;
    path.push_back({0.0, start});
    double t = 0.0;
    int w = start;
    while (true) {
        double u = unif(rng);
        // inverse-CDF exponential; guard against u == 0
        double hold = -std::log(std::max(u, 1e-300)) / spec.jump_rate[w];
        t += hold;
        if (t >= t_end) break;
        double v = unif(rng);
        double acc = 0.0;
        int nxt = spec.size() - 1;
        for (int j = 0; j < spec.size(); ++j) {
            acc += spec.kernel[w][j];
            if (v <= acc) {
                nxt = j;
                break;
            }
        }
        w = nxt;
        path.push_back({t, w});
    }
    return path;
}

/// Occupation fractions of a sampled path over [0, t_end].
inline std::vector<double> occupation_fractions(const JumpChainSpec& spec,
                                                const std::vector<JumpEvent>& path,
                                                double t_end) {
    std::vector<double> occ(spec.size(), 0.0);
    for (std::size_t k = 0; k < path.size(); ++k) {
        double t0 = path[k].time;
        double t1 = (k + 1 < path.size()) ? path[k + 1].time : t_end;
        occ[path[k].state] += (std::min(t1, t_end) - t0);
    }
    for (double& v : occ) v /= t_end;
    return occ;
}

} // namespace harvest
