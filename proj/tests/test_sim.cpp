#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "harvest/diffusion.hpp"
#include "harvest/wideband.hpp"
#include "test_support.hpp"

using namespace harvest;

namespace {

DiffusionCoeffs default_coeffs() {
    auto chain = center_noise(testsup::product_chain(1.0, 1.25, 0.3, 0.3));
    return with_effective_rates(testsup::default_params(), diffusion_matrix(chain));
}

DiffusionCoeffs zero_coeffs(const ModelParams& p) {
    DiffusionCoeffs c;
    return with_effective_rates(p, c);
}

} // namespace

// ============================================================================
// Limit diffusion
// ============================================================================

TEST_CASE("diffusion holds the deterministic equilibrium with no noise") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = zero_coeffs(p);
    auto z = interior_equilibrium(p);
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 100.0;
    cfg.burn_in = 0.0;
    cfg.initial = z;
    cfg.seed = 1;
    auto pol = constant_policy(testsup::default_grid(16), 0.0, p.M);
    auto rec = simulate_diffusion(p, hs, cf, pol, cfg);
    for (const auto& s : rec.states) {
        CHECK(std::abs(s.x - z.x) < 1e-6);
        CHECK(std::abs(s.y - z.y) < 1e-6);
    }
}

TEST_CASE("no-noise extinct dynamics drive the predator down monotonically") {
    auto p = testsup::extinct_params();
    auto hs = testsup::default_harvest();
    auto cf = zero_coeffs(p);
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 60.0;
    cfg.burn_in = 0.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 1;
    auto pol = constant_policy(testsup::default_grid(16), 0.0, p.M);
    auto rec = simulate_diffusion(p, hs, cf, pol, cfg);
    // after a short transient y decreases towards zero
    std::size_t start = rec.size() / 6;
    for (std::size_t k = start + 1; k < rec.size(); ++k)
        CHECK(rec.states[k].y <= rec.states[k - 1].y + 1e-12);
    CHECK(rec.states.back().y < 1e-3);
}

TEST_CASE("one-step log scheme matches direct Euler through second order") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    double dt = 1e-3;
    State2D z0{1.2, 0.7};
    DiffusionConfig cfg;
    cfg.dt = dt;
    cfg.t_end = dt;
    cfg.burn_in = 0.0;
    cfg.initial = z0;
    cfg.seed = 31;
    double u = 0.75;
    auto pol = constant_policy(testsup::default_grid(16), u, p.M);
    auto rec = simulate_diffusion(p, hs, cf, pol, cfg, stage_id(RngStage::diffusion_eval), 0);
    REQUIRE(rec.size() >= 2);
    double x_impl = rec.states.back().x;

    // replicate the Gaussian draw of the stream
    auto rng = make_rng(cfg.seed, stage_id(RngStage::diffusion_eval), 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double g1 = gauss(rng), g2 = gauss(rng);

    double mu_direct = cf.abar1 - p.b1 * z0.x - p.c1 * z0.y;
    double s = cf.s11 * g1 + cf.s12 * g2;
    double x_direct = z0.x * (1.0 + mu_direct * dt + s * std::sqrt(dt));
    double E = (mu_direct - 0.5 * cf.a11) * dt + s * std::sqrt(dt);
    // Taylor prediction of the gap through O(dt^(3/2))
    double predicted = z0.x * (0.5 * E * E + E * E * E / 6.0 - 0.5 * cf.a11 * dt);
    double gap = x_impl - x_direct;
    CHECK(std::abs(gap - predicted) < 10.0 * dt * dt);
    // and the gap itself is O(dt)
    CHECK(std::abs(gap) < 2.0 * z0.x * (0.5 * (s * s + cf.a11) + std::abs(mu_direct * s)) * dt);
}

TEST_CASE("zero-effort policy earns exactly zero reward") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 50.0;
    cfg.burn_in = 10.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 5;
    auto res = average_reward_diffusion(p, hs, cf,
                                        constant_policy(testsup::default_grid(16), 0.0, p.M), cfg,
                                        8);
    CHECK(res.est.estimate == 0.0);
    CHECK(res.est.stderr_ == 0.0);
}

TEST_CASE("diffusion reward estimates from independent seeds agree within 3 se") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 400.0;
    cfg.burn_in = 80.0;
    cfg.initial = {1.0, 1.0};
    auto pol = constant_policy(testsup::default_grid(16), p.M, p.M);
    cfg.seed = 101;
    auto r1 = average_reward_diffusion(p, hs, cf, pol, cfg, 48);
    cfg.seed = 202;
    auto r2 = average_reward_diffusion(p, hs, cf, pol, cfg, 48);
    double comb = std::sqrt(r1.est.stderr_ * r1.est.stderr_ + r2.est.stderr_ * r2.est.stderr_);
    CHECK(std::abs(r1.est.estimate - r2.est.estimate) < 3.0 * comb);
    // crude upper bound from the occupation tail (boundedness consequence)
    BatchOptions opt;
    opt.collect_y_samples = true;
    cfg.seed = 101;
    auto r3 = average_reward_diffusion(p, hs, cf, pol, cfg, 16, opt);
    double y_cap = percentile(r3.y_samples, 0.999);
    double bound = hs.phi(y_cap * hs.h(y_cap) * p.M);
    CHECK(r3.est.estimate <= bound * 1.05 + 1e-9);
    // empirical second-moment bound on the reward samples
    KahanSum phis, phi2;
    for (double v : r3.phi_samples) {
        phis.add(v);
        phi2.add((1.0 + v) * (1.0 + v));
    }
    double n = double(r3.phi_samples.size());
    CHECK(phis.value() / n <= std::sqrt(phi2.value() / n));
}

TEST_CASE("diffusion paths are reproducible and positive") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 30.0;
    cfg.burn_in = 0.0;
    cfg.initial = {0.5, 0.25};
    cfg.seed = 7;
    auto pol = constant_policy(testsup::default_grid(16), 1.0, p.M);
    auto a = simulate_diffusion(p, hs, cf, pol, cfg);
    auto b = simulate_diffusion(p, hs, cf, pol, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a.states[k].x == b.states[k].x);
        CHECK(a.states[k].y == b.states[k].y);
        CHECK(a.states[k].x > 0.0);
        CHECK(a.states[k].y > 0.0);
        CHECK(a.running_average[k] >= 0.0);
    }
}

TEST_CASE("halving dt moves the estimate by less than the Monte Carlo error") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    DiffusionConfig cfg;
    cfg.t_end = 300.0;
    cfg.burn_in = 60.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 404;
    auto pol = constant_policy(testsup::default_grid(16), p.M, p.M);
    cfg.dt = 0.005;
    auto coarse = average_reward_diffusion(p, hs, cf, pol, cfg, 200);
    cfg.dt = 0.0025;
    auto fine = average_reward_diffusion(p, hs, cf, pol, cfg, 200);
    double comb = std::sqrt(coarse.est.stderr_ * coarse.est.stderr_ +
                            fine.est.stderr_ * fine.est.stderr_);
    CHECK(std::abs(coarse.est.estimate - fine.est.estimate) <= 2.0 * comb + 1e-4);
}

TEST_CASE("moment growth across initial conditions stays linear in 1 + |z|^2") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    auto pol = constant_policy(testsup::default_grid(16), 0.0, p.M);
    std::vector<State2D> inits{{0.5, 0.5}, {2.0, 2.0}, {5.0, 5.0}, {10.0, 10.0}};
    std::vector<double> ratios;
    for (const auto& z0 : inits) {
        DiffusionConfig cfg;
        cfg.dt = 0.005;
        cfg.t_end = 20.0;
        cfg.burn_in = 0.0;
        cfg.initial = z0;
        cfg.seed = 99;
        auto res = average_reward_diffusion(p, hs, cf, pol, cfg, 16);
        double m = mean(res.per_path_sup_norm2);
        ratios.push_back(m / (1.0 + z0.x * z0.x + z0.y * z0.y));
    }
    double lo = *std::min_element(ratios.begin(), ratios.end());
    double hi = *std::max_element(ratios.begin(), ratios.end());
    CHECK(hi / lo < 10.0);  // finite-sample rendering of E sup |Z|^2 <= K (1 + |z|^2)
}

// ============================================================================
// Occupation histograms
// ============================================================================

TEST_CASE("occupation histogram of a frozen path is a point mass") {
    PathRecord rec;
    for (int k = 0; k < 50; ++k) rec.append(0.1 * k, {1.0, 1.0}, 0, 0, 0);
    auto h = occupation_histogram(rec, testsup::default_grid(16));
    double total = 0.0, biggest = 0.0;
    for (double m : h.mass) {
        total += m;
        biggest = std::max(biggest, m);
    }
    CHECK(total == Catch::Approx(1.0));
    CHECK(biggest == Catch::Approx(1.0));
    CHECK(h.outside == 0.0);
}

TEST_CASE("no-noise occupation concentrates at the equilibrium cell") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = zero_coeffs(p);
    auto z = interior_equilibrium(p);
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 300.0;
    cfg.burn_in = 0.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 3;
    auto pol = constant_policy(testsup::default_grid(16), 0.0, p.M);
    auto rec = simulate_diffusion(p, hs, cf, pol, cfg);
    auto grid = testsup::default_grid(48);
    auto h = occupation_histogram(rec, grid, 150.0);
    int i, j;
    double fx, fy;
    grid.locate(z.x, z.y, i, j, fx, fy);
    CHECK(h.mass[std::size_t(j) * (grid.nx - 1) + i] > 0.99);
}

TEST_CASE("persistent occupation leaves almost no mass outside the box") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 400.0;
    cfg.burn_in = 80.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 11;
    Grid grid = testsup::default_grid(48);
    BatchOptions opt;
    opt.occupation_grid = &grid;
    opt.tightness_delta = 0.02;
    opt.tightness_R = 12.0;
    for (double u : {0.0, 2.0}) {
        auto res = average_reward_diffusion(p, hs, cf, constant_policy(grid, u, p.M), cfg, 24,
                                            opt);
        CHECK(res.occupation.outside < 0.01);
        CHECK(res.outside_box_fraction < 0.01);
    }
}

// ============================================================================
// Wideband system
// ============================================================================

TEST_CASE("wideband system holds the equilibrium with zero noise maps") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto chain = testsup::product_chain(1.0, 1.25, 0.0, 0.0);
    auto z = interior_equilibrium(p);
    WidebandConfig cfg;
    cfg.epsilon = 0.5;
    cfg.t_end = 100.0;
    cfg.burn_in = 0.0;
    cfg.initial = z;
    cfg.seed = 21;
    auto rec = simulate_wideband(p, hs, chain,
                                 constant_policy(testsup::default_grid(16), 0.0, p.M), cfg);
    for (const auto& s : rec.states) {
        CHECK(std::abs(s.x - z.x) < 1e-6);
        CHECK(std::abs(s.y - z.y) < 1e-6);
    }
}

TEST_CASE("wideband paths are bit-identical under a fixed seed") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto chain = center_noise(testsup::product_chain(1.0, 1.25, 0.3, 0.3));
    WidebandConfig cfg;
    cfg.epsilon = 0.5;
    cfg.t_end = 40.0;
    cfg.burn_in = 0.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 77;
    auto pol = constant_policy(testsup::default_grid(16), 1.0, p.M);
    auto a = simulate_wideband(p, hs, chain, pol, cfg);
    auto b = simulate_wideband(p, hs, chain, pol, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a.states[k].x == b.states[k].x);
        CHECK(a.states[k].y == b.states[k].y);
        CHECK(a.states[k].x > 0);
        CHECK(a.states[k].y > 0);
    }
}

TEST_CASE("wideband extinct regime sends the predator below 1e-3") {
    auto p = testsup::extinct_params();
    auto hs = testsup::default_harvest();
    auto chain = center_noise(testsup::product_chain(1.0, 1.25, 0.3, 0.3));
    WidebandConfig cfg;
    cfg.epsilon = 0.3;
    cfg.t_end = 200.0;
    cfg.burn_in = 0.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 13;
    auto pol = constant_policy(testsup::default_grid(16), 0.0, p.M);
    std::vector<double> finals;
    for (int i = 0; i < 20; ++i) {
        auto rec = simulate_wideband(p, hs, chain, pol, cfg, stage_id(RngStage::wideband_base), i);
        finals.push_back(rec.states.back().y);
    }
    CHECK(mean(finals) < 1e-3);
}

TEST_CASE("wideband zero effort earns zero and the budget guard trips") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto chain = center_noise(testsup::product_chain(1.0, 1.25, 0.3, 0.3));
    WidebandConfig cfg;
    cfg.epsilon = 0.5;
    cfg.t_end = 30.0;
    cfg.burn_in = 5.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 1;
    auto res = average_reward_wideband(
        p, hs, chain, constant_policy(testsup::default_grid(16), 0.0, p.M), cfg, 4);
    CHECK(res.est.estimate == 0.0);

    WidebandConfig tiny = cfg;
    tiny.epsilon = 0.001;
    tiny.substep_budget = 1000;
    REQUIRE_THROWS_WITH(
        simulate_wideband(p, hs, chain, constant_policy(testsup::default_grid(16), 0.0, p.M),
                          tiny),
        Catch::Matchers::ContainsSubstring("budget"));
}

TEST_CASE("wideband reward approaches the diffusion reward as epsilon shrinks") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto chain = center_noise(testsup::product_chain(1.0, 1.25, 0.3, 0.3));
    auto cf = with_effective_rates(p, diffusion_matrix(chain));
    auto pol = constant_policy(testsup::default_grid(16), p.M, p.M);

    DiffusionConfig dc;
    dc.dt = 0.005;
    dc.t_end = 400.0;
    dc.burn_in = 80.0;
    dc.initial = {1.0, 1.0};
    dc.seed = 3001;
    auto dres = average_reward_diffusion(p, hs, cf, pol, dc, 64);

    WidebandConfig wc;
    wc.t_end = 250.0;
    wc.burn_in = 50.0;
    wc.initial = {1.0, 1.0};
    wc.seed = 3001;
    int k = 0;
    for (double eps : {0.5, 0.25}) {
        wc.epsilon = eps;
        auto wres = average_reward_wideband(p, hs, chain, pol, wc, 48, {},
                                            stage_id(RngStage::wideband_base, 8 * k++));
        double comb = std::sqrt(wres.est.stderr_ * wres.est.stderr_ +
                                dres.est.stderr_ * dres.est.stderr_);
        if (eps <= 0.25)
            CHECK(std::abs(wres.est.estimate - dres.est.estimate) <
                  3.0 * comb + 0.05 * std::abs(dres.est.estimate));
        // ergodic stabilization of the running average
        CHECK(std::abs(wres.mean_running_avg_end - wres.mean_running_avg_half) <
              0.05 * std::max(std::abs(wres.mean_running_avg_end), 1e-9));
    }
}

TEST_CASE("wideband time-average of |Z|^2 is bounded uniformly in epsilon") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto chain = center_noise(testsup::product_chain(1.0, 1.25, 0.3, 0.3));
    auto pol = constant_policy(testsup::default_grid(16), 0.0, p.M);
    WidebandConfig cfg;
    cfg.t_end = 120.0;
    cfg.burn_in = 0.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 55;
    for (double eps : {0.5, 0.25, 0.1}) {
        cfg.epsilon = eps;
        KahanSum z2;
        std::size_t n = 0;
        for (int i = 0; i < 6; ++i) {
            auto rec = simulate_wideband(p, hs, chain, pol, cfg,
                                         stage_id(RngStage::wideband_base, 30), i);
            for (const auto& s : rec.states) {
                z2.add(s.x * s.x + s.y * s.y);
                ++n;
            }
        }
        double avg = z2.value() / double(n);
        CHECK(avg < 30.0);
    }
}
