#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "harvest/diffusion.hpp"
#include "harvest/grid.hpp"
#include "harvest/model.hpp"
#include "harvest/parallel.hpp"
#include "harvest/path.hpp"
#include "harvest/rng.hpp"

namespace harvest {

// ============================================================================
// Wideband-noise system: piecewise-deterministic Markov process
// ============================================================================

struct WidebandConfig {
    double epsilon = 0.5;        // noise time-scale parameter, in (0, 1]
    double t_end = 400.0;
    double burn_in = 80.0;
    double max_substep = 0.005;  // ODE step cap between jumps
    std::uint64_t seed = 0;
    State2D initial{1.0, 1.0};
    long substep_budget = 400000000;  // per-path cap on projected ODE steps
    int n_samples = 2000;

    void validate() const {
        if (!(epsilon > 0 && epsilon <= 1))
            throw std::invalid_argument("WidebandConfig: epsilon must lie in (0, 1]");
        if (!(burn_in >= 0 && burn_in < t_end))
            throw std::invalid_argument("WidebandConfig: need 0 <= burn_in < t_end");
        if (!(max_substep > 0))
            throw std::invalid_argument("WidebandConfig: max_substep must be positive");
        if (!(initial.x > 0 && initial.y > 0))
            throw std::invalid_argument("WidebandConfig: initial state must be in the open quadrant");
    }
};

namespace detail {

struct LogDrift {
    double dlx, dly;
};

/// Drift of (log x, log y) between jumps: deterministic part plus the 1/eps
/// noise rates of the frozen chain state.
inline LogDrift wideband_log_drift(const ModelParams& p, const HarvestSpec& hs,
                                   const PolicyTable& policy, double lx, double ly,
                                   double noise1, double noise2) {
    double x = std::exp(lx), y = std::exp(ly);
    double u = policy.at(x, y);
    return {p.a1 - p.b1 * x - p.c1 * y + noise1,
            p.s2 - hs.h(y) * u - p.b2 * y + p.c2 * x + noise2};
}

/// Classic RK4 step of the frozen-noise ODE in log coordinates.
inline void rk4_step(const ModelParams& p, const HarvestSpec& hs, const PolicyTable& policy,
                     double& lx, double& ly, double dt, double noise1, double noise2) {
    LogDrift k1 = wideband_log_drift(p, hs, policy, lx, ly, noise1, noise2);
    LogDrift k2 = wideband_log_drift(p, hs, policy, lx + 0.5 * dt * k1.dlx,
                                     ly + 0.5 * dt * k1.dly, noise1, noise2);
    LogDrift k3 = wideband_log_drift(p, hs, policy, lx + 0.5 * dt * k2.dlx,
                                     ly + 0.5 * dt * k2.dly, noise1, noise2);
    LogDrift k4 = wideband_log_drift(p, hs, policy, lx + dt * k3.dlx, ly + dt * k3.dly,
                                     noise1, noise2);
    lx += dt / 6.0 * (k1.dlx + 2 * k2.dlx + 2 * k3.dlx + k4.dlx);
    ly += dt / 6.0 * (k1.dly + 2 * k2.dly + 2 * k3.dly + k4.dly);
}

/// One PDMP path: exponential holding times of the accelerated chain, RK4 on
/// the frozen-noise ODE between jumps. on_step fires per substep.
template <class StepFn>
inline void run_wideband_path(const ModelParams& p, const HarvestSpec& hs,
                              const JumpChainSpec& chain, const PolicyTable& policy,
                              const WidebandConfig& cfg, std::mt19937_64& rng,
                              StepFn&& on_step) {
    double eps2 = cfg.epsilon * cfg.epsilon;
    double q_max = 0.0;
    for (double q : chain.jump_rate) q_max = std::max(q_max, q);
    // Substep rule: resolve both the jump clock and the stiff 1/eps drift.
    double cap = std::min(cfg.max_substep, eps2 / (10.0 * q_max));
    long projected = long(cfg.t_end / cap) + 1;
    if (projected > cfg.substep_budget)
        throw std::runtime_error(
            "simulate_wideband: projected " + std::to_string(projected) +
            " substeps exceed the configured budget " + std::to_string(cfg.substep_budget) +
            "; increase substep_budget or epsilon");

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> start_state(0, chain.size() - 1);
    int w = start_state(rng);
    double lx = std::log(cfg.initial.x);
    double ly = std::log(cfg.initial.y);
    double t = 0.0;
    while (t < cfg.t_end) {
        double rate = chain.jump_rate[w] / eps2;
        double hold = -std::log(std::max(unif(rng), 1e-300)) / rate;
        double segment_end = std::min(t + hold, cfg.t_end);
        double noise1 = chain.r1[w] / cfg.epsilon;
        double noise2 = chain.r2[w] / cfg.epsilon;
        while (t < segment_end) {
            double dt = std::min(cap, segment_end - t);
            double x = std::exp(lx), y = std::exp(ly);
            double u = policy.at(x, y);
            on_step(t, dt, State2D{x, y}, u, reward_rate(hs, y, u));
            rk4_step(p, hs, policy, lx, ly, dt, noise1, noise2);
            if (!std::isfinite(lx) || !std::isfinite(ly))
                throw std::runtime_error("simulate_wideband: non-finite state at t = " +
                                         format_double(t + dt));
            t += dt;
        }
        if (segment_end < cfg.t_end) {
            // resample the chain state
            double v = unif(rng);
            double acc = 0.0;
            int nxt = chain.size() - 1;
            for (int j = 0; j < chain.size(); ++j) {
                acc += chain.kernel[w][j];
                if (v <= acc) {
                    nxt = j;
                    break;
                }
            }
            w = nxt;
        }
    }
    double x = std::exp(lx), y = std::exp(ly);
    double u = policy.at(x, y);
    on_step(cfg.t_end, 0.0, State2D{x, y}, u, reward_rate(hs, y, u));
}

} // namespace detail

/// Simulates the wideband system under a feedback policy. The driving chain
/// must be centered; positivity is exact (log coordinates).
inline PathRecord simulate_wideband(const ModelParams& p, const HarvestSpec& hs,
                                    const JumpChainSpec& chain, const PolicyTable& policy,
                                    const WidebandConfig& cfg,
                                    std::uint32_t stage = stage_id(RngStage::wideband_base),
                                    std::uint64_t path_index = 0) {
    p.validate();
    cfg.validate();
    policy.validate();
    auto rng = make_rng(cfg.seed, stage, path_index);
    PathAccumulator acc(cfg.t_end, cfg.burn_in, cfg.t_end / cfg.n_samples, true);
    detail::run_wideband_path(p, hs, chain, policy, cfg, rng,
                              [&](double t, double dt, const State2D& z, double u, double r) {
                                  acc.step(t, dt, z, u, r);
                              });
    return acc.take_record();
}

/// Across-path Monte Carlo estimate of the wideband long-run average reward;
/// per-path streams derive from (seed, stage, path index).
inline BatchResult average_reward_wideband(const ModelParams& p, const HarvestSpec& hs,
                                           const JumpChainSpec& chain, const PolicyTable& policy,
                                           const WidebandConfig& cfg, int n_paths,
                                           const BatchOptions& opt = {},
                                           std::uint32_t stage = stage_id(RngStage::wideband_base)) {
    if (n_paths < 1) throw std::invalid_argument("average_reward_wideband: n_paths >= 1");
    p.validate();
    cfg.validate();
    policy.validate();

    std::vector<PathRecord> records(n_paths);
    std::vector<double> avgs(n_paths), sups(n_paths), run_end(n_paths), run_half(n_paths);
    parallel_for(std::size_t(n_paths), [&](std::size_t i) {
        auto rng = make_rng(cfg.seed, stage, i);
        PathAccumulator acc(cfg.t_end, cfg.burn_in, cfg.t_end / cfg.n_samples, true);
        double half_avg = 0.0;
        bool half_done = false;
        detail::run_wideband_path(p, hs, chain, policy, cfg, rng,
                                  [&](double t, double dt, const State2D& z, double u, double r) {
                                      acc.step(t, dt, z, u, r);
                                      if (!half_done && t + dt >= 0.5 * cfg.t_end) {
                                          half_avg = acc.running_average_at_end();
                                          half_done = true;
                                      }
                                  });
        avgs[i] = acc.post_burn_in_average();
        sups[i] = acc.sup_norm2();
        run_end[i] = acc.running_average_at_end();
        run_half[i] = half_avg;
        records[i] = acc.take_record();
    });

    BatchResult out;
    out.per_path_avg = avgs;
    out.per_path_sup_norm2 = sups;
    out.est.estimate = mean(avgs);
    out.est.stderr_ = stderr_of_mean(avgs);
    out.est.n_paths = n_paths;
    out.est.t_end = cfg.t_end;
    out.est.burn_in = cfg.burn_in;
    out.est.epsilon = cfg.epsilon;
    if (opt.occupation_grid) out.occupation.init(*opt.occupation_grid);
    std::size_t box_total = 0, box_outside = 0;
    for (int i = 0; i < n_paths; ++i) {
        detail::fold_record_into_batch(records[i], cfg.burn_in, opt, out, box_total, box_outside);
        if (i < opt.keep_records) out.kept.push_back(std::move(records[i]));
    }
    if (opt.occupation_grid) out.occupation.normalize();
    out.outside_box_fraction = box_total ? double(box_outside) / double(box_total) : 0.0;
    out.mean_running_avg_end = mean(run_end);
    out.mean_running_avg_half = mean(run_half);
    return out;
}

} // namespace harvest
