#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "harvest/chain.hpp"
#include "harvest/util.hpp"

namespace harvest {

// ============================================================================
// Ecological model
// ============================================================================

/// Lotka-Volterra parameters. The predator intrinsic rate s2 is signed:
/// s2 < 0 means the predator dies out without prey. Prey drift is
/// x (a1 - b1 x - c1 y), predator drift y (s2 - h(y) u - b2 y + c2 x).
struct ModelParams {
    double a1, b1, c1;  // prey: intrinsic rate, self-limitation, predation loss
    double s2;          // predator intrinsic rate (signed)
    double b2, c2;      // predator self-limitation, conversion gain
    double M;           // maximum harvest effort (M = 0 disables harvesting)

    void validate() const {
        if (!(a1 > 0 && b1 > 0 && c1 > 0 && b2 > 0 && c2 > 0))
            throw std::invalid_argument("ModelParams: a1, b1, c1, b2, c2 must be positive");
        if (!(M >= 0)) throw std::invalid_argument("ModelParams: M must be nonnegative");
        if (!std::isfinite(s2)) throw std::invalid_argument("ModelParams: s2 must be finite");
    }

    /// Persistence margin s2 + c2 a1 / b1; positive means the predator can
    /// invade the prey-only equilibrium.
    double persistence_margin() const { return s2 + c2 * a1 / b1; }
};

struct State2D {
    double x = 0.0;
    double y = 0.0;

    bool finite_nonnegative() const {
        return std::isfinite(x) && std::isfinite(y) && x >= 0.0 && y >= 0.0;
    }
    double norm() const { return std::hypot(x, y); }
};

// ============================================================================
// Harvest effectiveness and yield
// ============================================================================

/// Named built-ins:
///   effectiveness "ramp":      h(y) = min(1, y / kappa)
///   effectiveness "michaelis": h(y) = y / (kappa + y)
///   yield "linear":     Phi(r) = r
///   yield "saturating": Phi(r) = r / (c + r)
struct HarvestSpec {
    std::string effectiveness = "michaelis";
    double kappa = 1.0;
    std::string yield = "linear";
    double c = 1.0;

    double h(double y) const {
        if (effectiveness == "ramp") return std::min(1.0, y / kappa);
        return y / (kappa + y);  // michaelis
    }

    double phi(double r) const {
        if (yield == "linear") return r;
        return r / (c + r);  // saturating
    }

    bool yield_is_linear() const { return yield == "linear"; }

    /// One-sided slope of Phi at 0+ (exact for the built-ins).
    double phi_prime0() const { return yield_is_linear() ? 1.0 : 1.0 / c; }

    void validate(double y_max = 1e3) const {
        if (effectiveness != "ramp" && effectiveness != "michaelis")
            throw std::invalid_argument("HarvestSpec: unknown effectiveness '" + effectiveness +
                                        "' (built-ins: ramp, michaelis)");
        if (yield != "linear" && yield != "saturating")
            throw std::invalid_argument("HarvestSpec: unknown yield '" + yield +
                                        "' (built-ins: linear, saturating)");
        if (!(kappa > 0)) throw std::invalid_argument("HarvestSpec: kappa must be positive");
        if (!(c > 0)) throw std::invalid_argument("HarvestSpec: c must be positive");
        // Sampled checks of the contracts h(0)=0, h nondecreasing into [0,1],
        // Phi(0)=0 with finite Lipschitz constant.
        if (h(0.0) != 0.0) throw std::invalid_argument("HarvestSpec: h(0) != 0");
        if (phi(0.0) != 0.0) throw std::invalid_argument("HarvestSpec: Phi(0) != 0");
        const int n = 2000;
        double prev = 0.0;
        for (int i = 1; i <= n; ++i) {
            double y = y_max * double(i) / n;
            double v = h(y);
            if (v < prev - 1e-12 || v < 0.0 || v > 1.0 + 1e-12)
                throw std::invalid_argument("HarvestSpec: h must be nondecreasing into [0,1]");
            prev = v;
        }
        if (!(std::isfinite(lipschitz_phi(y_max))))
            throw std::invalid_argument("HarvestSpec: Phi has no finite Lipschitz bound");
    }

    /// Lipschitz constant of Phi on [0, R], estimated from difference
    /// quotients on a log-graded sample (steepest at 0 for the built-ins).
    double lipschitz_phi(double R = 1e3) const {
        return sampled_lipschitz([this](double r) { return phi(r); }, R);
    }

    /// Lipschitz constant of h on [0, R], same sampling.
    double lipschitz_h(double R = 1e3) const {
        return sampled_lipschitz([this](double y) { return h(y); }, R);
    }

  private:
    template <class Fn>
    static double sampled_lipschitz(Fn&& fn, double R) {
        double L = 0.0;
        double prev_x = 0.0, prev_v = fn(0.0);
        for (double x = 1e-8 * R; x <= R * (1 + 1e-12); x *= 1.3) {
            double v = fn(x);
            L = std::max(L, std::abs(v - prev_v) / (x - prev_x));
            prev_x = x;
            prev_v = v;
        }
        return L;
    }

  public:
};

// ============================================================================
// Vector fields, reward, persistence
// ============================================================================

/// Deterministic drift G(z, u). Throws if u is outside [0, M].
inline State2D drift_G(const ModelParams& p, const HarvestSpec& hs, const State2D& z, double u) {
    if (!(u >= 0.0 && u <= p.M))
        throw std::invalid_argument("drift_G: effort " + format_double(u) + " outside [0, " +
                                    format_double(p.M) + "]");
    return {z.x * (p.a1 - p.b1 * z.x - p.c1 * z.y),
            z.y * (p.s2 - hs.h(z.y) * u - p.b2 * z.y + p.c2 * z.x)};
}

/// Multiplicative noise field F(z, w) = (x r1(w), y r2(w)).
inline State2D noise_F(const JumpChainSpec& spec, const State2D& z, int w) {
    if (w < 0 || w >= spec.size())
        throw std::invalid_argument("noise_F: invalid state index");
    return {z.x * spec.r1[w], z.y * spec.r2[w]};
}

/// Instantaneous reward Phi(y h(y) u): yield of the harvested biomass rate.
inline double reward_rate(const HarvestSpec& hs, double y, double u) {
    return hs.phi(y * hs.h(y) * u);
}

enum class Persistence { Persistent, Extinct };

struct PersistenceResult {
    Persistence verdict;
    double margin;
    bool degenerate;  // margin within 1e-12 of the threshold
};

/// Sign test of the persistence threshold s2 + c2 a1 / b1.
inline PersistenceResult persistence_check(const ModelParams& p) {
    p.validate();
    double m = p.persistence_margin();
    return {m > 0 ? Persistence::Persistent : Persistence::Extinct, m, std::abs(m) <= 1e-12};
}

/// Interior rest point of the unharvested drift: a1 - b1 x - c1 y = 0 and
/// s2 - b2 y + c2 x = 0. Exists in the open quadrant iff the persistence
/// margin is positive.
inline State2D interior_equilibrium(const ModelParams& p) {
    double det = p.b1 * p.b2 + p.c1 * p.c2;
    return {(p.a1 * p.b2 - p.c1 * p.s2) / det, (p.b1 * p.s2 + p.c2 * p.a1) / det};
}

/// Fills the effective rates of the limit diffusion: the averaging correction
/// adds half the corresponding diagonal covariance to each signed rate.
inline DiffusionCoeffs with_effective_rates(const ModelParams& p, DiffusionCoeffs c) {
    c.abar1 = p.a1 + 0.5 * c.a11;
    c.abar2 = p.s2 + 0.5 * c.a22;
    return c;
}

} // namespace harvest
