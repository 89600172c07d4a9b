#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "harvest/grid.hpp"
#include "harvest/model.hpp"
#include "harvest/parallel.hpp"
#include "harvest/path.hpp"
#include "harvest/rng.hpp"

namespace harvest {

// ============================================================================
// Limit-diffusion simulator (Euler-Maruyama in log coordinates)
// ============================================================================

struct DiffusionConfig {
    double dt = 0.005;
    double t_end = 2000.0;
    double burn_in = 400.0;
    std::uint64_t seed = 0;
    State2D initial{1.0, 1.0};
    int n_samples = 2000;  // recorded samples per path

    void validate(const ModelParams& p) const {
        if (!(dt > 0 && dt <= 1e-2 / p.a1))
            throw std::invalid_argument("DiffusionConfig: dt must lie in (0, 1e-2/a1]");
        if (!(burn_in >= 0 && burn_in < t_end))
            throw std::invalid_argument("DiffusionConfig: need 0 <= burn_in < t_end");
        if (!(initial.x > 0 && initial.y > 0))
            throw std::invalid_argument("DiffusionConfig: initial state must be in the open quadrant");
    }
};

namespace detail {

/// One log-Euler path. on_step(t, dt, z, u, reward) fires before each step is
/// taken, with z the pre-step state. Throws on non-finite states.
template <class StepFn>
inline void run_diffusion_path(const ModelParams& p, const HarvestSpec& hs,
                               const DiffusionCoeffs& cf, const PolicyTable& policy,
                               const DiffusionConfig& cfg, std::mt19937_64& rng,
                               StepFn&& on_step) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    double lx = std::log(cfg.initial.x);
    double ly = std::log(cfg.initial.y);
    double sd = std::sqrt(cfg.dt);
    // Ito corrections of the log dynamics
    double corr1 = 0.5 * (cf.s11 * cf.s11 + cf.s12 * cf.s12);
    double corr2 = 0.5 * (cf.s12 * cf.s12 + cf.s22 * cf.s22);
    long n_steps = long(std::ceil(cfg.t_end / cfg.dt));
    double t = 0.0;
    for (long k = 0; k < n_steps; ++k) {
        double dt = std::min(cfg.dt, cfg.t_end - t);
        if (dt <= 0) break;
        double x = std::exp(lx), y = std::exp(ly);
        double u = policy.at(x, y);
        double r = reward_rate(hs, y, u);
        on_step(t, dt, State2D{x, y}, u, r);
        double g1 = gauss(rng), g2 = gauss(rng);
        double sdt = (dt == cfg.dt) ? sd : std::sqrt(dt);
        lx += (cf.abar1 - p.b1 * x - p.c1 * y - corr1) * dt + (cf.s11 * g1 + cf.s12 * g2) * sdt;
        ly += (cf.abar2 - hs.h(y) * u - p.b2 * y + p.c2 * x - corr2) * dt +
              (cf.s12 * g1 + cf.s22 * g2) * sdt;
        if (!std::isfinite(lx) || !std::isfinite(ly))
            throw std::runtime_error("simulate_diffusion: non-finite state at t = " +
                                     format_double(t + dt));
        t += dt;
    }
    double x = std::exp(lx), y = std::exp(ly);
    double u = policy.at(x, y);
    on_step(cfg.t_end, 0.0, State2D{x, y}, u, reward_rate(hs, y, u));
}

} // namespace detail

/// Simulates one path of the controlled limit diffusion; positivity is exact
/// because the integration lives in (log x, log y).
inline PathRecord simulate_diffusion(const ModelParams& p, const HarvestSpec& hs,
                                     const DiffusionCoeffs& cf, const PolicyTable& policy,
                                     const DiffusionConfig& cfg,
                                     std::uint32_t stage = stage_id(RngStage::diffusion_eval),
                                     std::uint64_t path_index = 0) {
    p.validate();
    cfg.validate(p);
    policy.validate();
    auto rng = make_rng(cfg.seed, stage, path_index);
    PathAccumulator acc(cfg.t_end, cfg.burn_in, cfg.t_end / cfg.n_samples, true);
    detail::run_diffusion_path(p, hs, cf, policy, cfg, rng,
                               [&](double t, double dt, const State2D& z, double u, double r) {
                                   acc.step(t, dt, z, u, r);
                               });
    return acc.take_record();
}

// ============================================================================
// Monte Carlo batches
// ============================================================================

struct BatchOptions {
    int keep_records = 0;              // keep the first k PathRecords
    const Grid* occupation_grid = nullptr;
    double tightness_delta = 0.0;      // box [delta, R]^2 for the outside fraction
    double tightness_R = 0.0;
    bool collect_y_samples = false;    // post-burn-in y samples (percentile checks)
};

struct BatchResult {
    RewardEstimate est;
    std::vector<double> per_path_avg;
    std::vector<double> per_path_sup_norm2;
    std::vector<PathRecord> kept;
    OccupationHistogram occupation;
    double outside_box_fraction = 0.0;
    std::vector<double> y_samples;
    std::vector<double> phi_samples;    // reward_rate at samples (bound checks)
    double mean_running_avg_end = 0.0;  // ergodic-stabilization diagnostics
    double mean_running_avg_half = 0.0;
};

namespace detail {

/// Shared across both simulators: post-burn-in record samples feed the
/// occupation histogram, tightness box and sample pools in path-index order.
inline void fold_record_into_batch(const PathRecord& rec, double burn_in,
                                   const BatchOptions& opt, BatchResult& out,
                                   std::size_t& box_total, std::size_t& box_outside) {
    for (std::size_t k = 0; k < rec.size(); ++k) {
        if (rec.times[k] < burn_in) continue;
        const State2D& z = rec.states[k];
        if (opt.occupation_grid) out.occupation.add(z.x, z.y);
        if (opt.tightness_R > 0) {
            ++box_total;
            bool inside = z.x >= opt.tightness_delta && z.x <= opt.tightness_R &&
                          z.y >= opt.tightness_delta && z.y <= opt.tightness_R;
            if (!inside) ++box_outside;
        }
        if (opt.collect_y_samples) {
            out.y_samples.push_back(z.y);
            out.phi_samples.push_back(rec.rewards[k]);
        }
    }
}

} // namespace detail

/// Across-path estimate of the long-run average reward of the diffusion under
/// a feedback policy. Per-path RNG streams derive from (seed, stage, path), so
/// the estimate does not depend on execution order or thread count.
inline BatchResult average_reward_diffusion(const ModelParams& p, const HarvestSpec& hs,
                                            const DiffusionCoeffs& cf, const PolicyTable& policy,
                                            const DiffusionConfig& cfg, int n_paths,
                                            const BatchOptions& opt = {},
                                            std::uint32_t stage = stage_id(RngStage::diffusion_eval)) {
    if (n_paths < 1) throw std::invalid_argument("average_reward_diffusion: n_paths >= 1");
    p.validate();
    cfg.validate(p);
    policy.validate();

    std::vector<PathRecord> records(n_paths);
    std::vector<double> avgs(n_paths), sups(n_paths);
    parallel_for(std::size_t(n_paths), [&](std::size_t i) {
        auto rng = make_rng(cfg.seed, stage, i);
        PathAccumulator acc(cfg.t_end, cfg.burn_in, cfg.t_end / cfg.n_samples, true);
        detail::run_diffusion_path(p, hs, cf, policy, cfg, rng,
                                   [&](double t, double dt, const State2D& z, double u, double r) {
                                       acc.step(t, dt, z, u, r);
                                   });
        avgs[i] = acc.post_burn_in_average();
        sups[i] = acc.sup_norm2();
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
    out.est.epsilon = 0.0;
    if (opt.occupation_grid) out.occupation.init(*opt.occupation_grid);
    std::size_t box_total = 0, box_outside = 0;
    for (int i = 0; i < n_paths; ++i) {
        detail::fold_record_into_batch(records[i], cfg.burn_in, opt, out, box_total, box_outside);
        if (i < opt.keep_records) out.kept.push_back(std::move(records[i]));
    }
    if (opt.occupation_grid) out.occupation.normalize();
    out.outside_box_fraction = box_total ? double(box_outside) / double(box_total) : 0.0;
    return out;
}

/// Empirical occupation measure of one recorded path (burn-in removed by the
/// caller or passed here): cell weights plus an outside bucket, summing to 1.
inline OccupationHistogram occupation_histogram(const PathRecord& rec, const Grid& grid,
                                                double burn_in = 0.0) {
    OccupationHistogram h;
    h.init(grid);
    for (std::size_t k = 0; k < rec.size(); ++k)
        if (rec.times[k] >= burn_in) h.add(rec.states[k].x, rec.states[k].y);
    h.normalize();
    return h;
}

// ============================================================================
// Moment boundedness probe
// ============================================================================

struct MomentSeries {
    std::vector<double> times;
    std::vector<double> values;  // sample means of V(Z(t))^theta
    bool pass = false;
    double worst_ratio = 0.0;
};

/// Tracks sample means of V(Z(t))^theta on a dyadic time grid; PASS when the
/// series is nonincreasing after burn-in up to a 20% noise tolerance.
inline MomentSeries moment_boundedness_check(const ModelParams& p, const HarvestSpec& hs,
                                             const DiffusionCoeffs& cf, const PolicyTable& policy,
                                             const DiffusionConfig& cfg, int n_paths, double theta,
                                             const std::function<double(const State2D&)>& V) {
    if (!(theta > 0 && theta <= 0.5))
        throw std::invalid_argument("moment_boundedness_check: theta in (0, 0.5]");
    std::vector<double> times;
    for (double t = cfg.t_end; t > cfg.dt * 8; t *= 0.5) times.push_back(t);
    std::sort(times.begin(), times.end());

    std::vector<std::vector<double>> samples(n_paths, std::vector<double>(times.size(), 0.0));
    parallel_for(std::size_t(n_paths), [&](std::size_t i) {
        auto rng = make_rng(cfg.seed, stage_id(RngStage::moment_check), i);
        std::size_t next = 0;
        detail::run_diffusion_path(p, hs, cf, policy, cfg, rng,
                                   [&](double t, double dt, const State2D& z, double, double) {
                                       while (next < times.size() && t + dt >= times[next]) {
                                           samples[i][next] = std::pow(V(z), theta);
                                           ++next;
                                       }
                                   });
    });

    MomentSeries out;
    out.times = times;
    out.values.resize(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        KahanSum s;
        for (int i = 0; i < n_paths; ++i) s.add(samples[i][k]);
        out.values[k] = s.value() / n_paths;
    }
    out.pass = true;
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        if (times[k] < cfg.burn_in) continue;
        double ratio = out.values[k + 1] / std::max(out.values[k], 1e-300);
        out.worst_ratio = std::max(out.worst_ratio, ratio);
        if (ratio > 1.2) out.pass = false;
    }
    return out;
}

} // namespace harvest
