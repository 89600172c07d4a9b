#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "harvest/diffusion.hpp"
#include "harvest/hjb.hpp"
#include "test_support.hpp"

using namespace harvest;

namespace {

DiffusionCoeffs default_coeffs() {
    auto chain = center_noise(testsup::product_chain(1.0, 1.25, 0.3, 0.3));
    return with_effective_rates(testsup::default_params(), diffusion_matrix(chain));
}

Grid small_grid() { return {0.05, 10.0, 0.02, 6.0, 32, 32}; }

} // namespace

TEST_CASE("transition rows are probability vectors everywhere") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto mdp = build_mdp(p, hs, default_coeffs(), small_grid());
    for (int node = 0; node < mdp.grid.size(); ++node) {
        for (int k = 0; k < mdp.cand_count(node); ++k) {
            const auto& c = mdp.cand(node, k);
            double sum = 0.0;
            for (double v : c.p) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
            CHECK(c.dt > 0.0);
        }
    }
}

TEST_CASE("zero drift and isotropic covariance give the symmetric 5-point rule") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    DiffusionCoeffs cf;
    cf.a11 = cf.a22 = 0.25;
    cf.a12 = 0.0;
    cf = with_effective_rates(p, cf);
    // at the interior equilibrium both log drifts vanish under u = 0
    auto z = interior_equilibrium(p);
    double h = 0.05;
    auto rp = detail::diffusion_rate_parts(cf, h, h);
    std::array<double, 8> rates;
    double q_total = 0.0;
    detail::node_rates(p, hs, rp, z.x, z.y, 0.0, h, h, rates, q_total);
    for (int k = 0; k < 4; ++k) CHECK(rates[k] / q_total == Catch::Approx(0.25).margin(1e-12));
    for (int k = 4; k < 8; ++k) CHECK(rates[k] == 0.0);
}

TEST_CASE("pure drift with no noise concentrates on the upwind neighbor") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    DiffusionCoeffs cf;
    cf = with_effective_rates(p, cf);  // A = 0
    double h = 0.05;
    auto rp = detail::diffusion_rate_parts(cf, h, h);
    std::array<double, 8> rates;
    double q_total = 0.0;
    // far right of the equilibrium: log-x drift negative, log-y drift positive
    detail::node_rates(p, hs, rp, 8.0, 0.05, 0.0, h, h, rates, q_total);
    double mu1 = p.a1 - p.b1 * 8.0 - p.c1 * 0.05;
    REQUIRE(mu1 < 0);
    CHECK(rates[0] == 0.0);                      // E
    CHECK(rates[1] == Catch::Approx(-mu1 / h));  // W (upwind)
    double mu2 = p.s2 - p.b2 * 0.05 + p.c2 * 8.0;
    REQUIRE(mu2 > 0);
    CHECK(rates[2] == Catch::Approx(mu2 / h));  // N
    CHECK(rates[3] == 0.0);
}

TEST_CASE("chain moments are locally consistent with drift and covariance") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    DiffusionCoeffs cf = default_coeffs();
    cf.a12 = 0.03;  // exercise the diagonal transitions
    Grid g = small_grid();
    auto mdp = build_mdp(p, hs, cf, g);
    double h1 = g.h1(), h2 = g.h2();
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> node_dist(0, g.size() - 1);
    int tested = 0;
    while (tested < 20) {
        int node = node_dist(rng);
        if (!g.interior(node)) continue;
        int i = g.ix(node), j = g.iy(node);
        double x = g.node_x(i), y = g.node_y(j);
        for (int k = 0; k < mdp.cand_count(node); ++k) {
            const auto& c = mdp.cand(node, k);
            double mu1 = p.a1 - p.b1 * x - p.c1 * y;
            double mu2 = p.s2 - hs.h(y) * c.u - p.b2 * y + p.c2 * x;
            double m1 = 0, m2 = 0, v11 = 0, v22 = 0, v12 = 0;
            for (int t = 0; t < 8; ++t) {
                double dx = kNeighborOffsets[t][0] * h1;
                double dy = kNeighborOffsets[t][1] * h2;
                m1 += c.p[t] * dx;
                m2 += c.p[t] * dy;
                v11 += c.p[t] * dx * dx;
                v22 += c.p[t] * dy * dy;
                v12 += c.p[t] * dx * dy;
            }
            CHECK(m1 == Catch::Approx(mu1 * c.dt).margin(1e-12));
            CHECK(m2 == Catch::Approx(mu2 * c.dt).margin(1e-12));
            // second moments match A dt up to the O(h) upwind correction
            CHECK(std::abs(v11 - cf.a11 * c.dt) <= (h1 * std::abs(mu1) + 1e-12) * c.dt);
            CHECK(std::abs(v22 - cf.a22 * c.dt) <= (h2 * std::abs(mu2) + 1e-12) * c.dt);
            CHECK(v12 == Catch::Approx(cf.a12 * c.dt).margin(1e-12));
        }
        ++tested;
    }
}

TEST_CASE("cross term too large for the grid is rejected with guidance") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    DiffusionCoeffs cf;
    cf.a11 = 0.09;
    cf.a22 = 0.072;
    cf.a12 = 0.085;  // exceeds min(a11, a22) at comparable spacings
    cf = with_effective_rates(p, cf);
    REQUIRE_THROWS_WITH(build_mdp(p, hs, cf, small_grid()),
                        Catch::Matchers::ContainsSubstring("refine the grid"));
}

TEST_CASE("pointwise Hamiltonian maximizer: bang-bang sign rule and ties") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();  // linear yield
    CHECK(pointwise_max(p, hs, {1.0, 0.0}, 0.0) == 0.0);  // y = 0: tie -> 0
    CHECK(pointwise_max(p, hs, {1.0, 1.0}, 0.0) == p.M);  // dV/dy = 0 -> harvest
    CHECK(pointwise_max(p, hs, {1.0, 1.0}, 2.0) == 0.0);  // 1 - 2 < 0 -> idle
    HarvestSpec sat = hs;
    sat.yield = "saturating";
    sat.c = 0.5;
    // strictly concave yield: maximizer from golden-section search
    double u_star = pointwise_max(p, sat, {1.0, 1.0}, 0.3);
    // oracle: dense scan of the objective
    double w = 1.0 * sat.h(1.0);
    double best_u = 0.0, best_v = -1e300;
    for (int k = 0; k <= 200000; ++k) {
        double u = p.M * k / 200000.0;
        double v = sat.phi(w * u) - 0.3 * w * u;
        if (v > best_v) {
            best_v = v;
            best_u = u;
        }
    }
    CHECK(u_star == Catch::Approx(best_u).margin(2e-5));
}

TEST_CASE("zero effort cap solves to zero reward and flat value") {
    auto p = testsup::default_params();
    p.M = 0.0;
    auto hs = testsup::default_harvest();
    auto mdp = build_mdp(p, hs, default_coeffs(), small_grid());
    auto sol = solve_average_reward(mdp, 1e-6, 100000);
    CHECK(sol.value.rho == Catch::Approx(0.0).margin(1e-9));
    for (double v : sol.value.values) CHECK(std::abs(v) < 1e-7);
    CHECK(hjb_residual(sol.value, mdp) < 1e-7);
}

TEST_CASE("optimal rho dominates every constant-policy evaluation") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    Grid g = small_grid();
    auto mdp = build_mdp(p, hs, cf, g);
    double tol = 1e-5;
    auto sol = solve_average_reward(mdp, tol, 200000);
    for (int k = 0; k <= 4; ++k) {
        double u = p.M * k / 4.0;
        double rho_u = evaluate_policy_table(p, hs, cf, g, constant_policy(g, u, p.M));
        CHECK(sol.value.rho >= rho_u - tol);
    }
    // residual contract
    CHECK(hjb_residual(sol.value, mdp) < 10 * tol);
}

TEST_CASE("relative value iteration span is monotone after warm-up") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    Grid g{0.05, 10.0, 0.02, 6.0, 16, 16};
    auto mdp = build_mdp(p, hs, default_coeffs(), g);
    SolveOptions opt;
    opt.warm_start = false;
    auto sol = solve_average_reward(mdp, 1e-4, 400000, opt);
    REQUIRE(sol.span_history.size() > 20);
    for (std::size_t k = 10; k + 1 < sol.span_history.size(); ++k)
        CHECK(sol.span_history[k + 1] <= sol.span_history[k] * (1.0 + 1e-9));
    // warm-started solve agrees on rho
    auto warm = solve_average_reward(mdp, 1e-4, 400000);
    CHECK(warm.value.rho == Catch::Approx(sol.value.rho).margin(2e-4));
}

TEST_CASE("rho is invariant under the anchoring node") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto mdp = build_mdp(p, hs, default_coeffs(), small_grid());
    double tol = 1e-5;
    SolveOptions a, b;
    a.ref_node = mdp.grid.index(3, 3);
    b.ref_node = mdp.grid.index(mdp.grid.nx - 4, mdp.grid.ny - 4);
    auto sa = solve_average_reward(mdp, tol, 200000, a);
    auto sb = solve_average_reward(mdp, tol, 200000, b);
    CHECK(sa.value.rho == Catch::Approx(sb.value.rho).margin(2 * tol));
    CHECK(sa.value.values[a.ref_node] == 0.0);
}

TEST_CASE("enlarging the effort cap never decreases rho") {
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    Grid g{0.05, 10.0, 0.02, 6.0, 24, 24};
    double tol = 1e-5;
    double prev = -1e300;
    for (double M : {0.5, 1.0, 2.0}) {
        auto p = testsup::default_params();
        p.M = M;
        auto sol = solve_average_reward(build_mdp(p, hs, cf, g), tol, 200000);
        CHECK(sol.value.rho >= prev - tol);
        prev = sol.value.rho;
    }
}

TEST_CASE("perturbing the converged value raises the residual at grid scale") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto mdp = build_mdp(p, hs, default_coeffs(), small_grid());
    double tol = 1e-5;
    auto sol = solve_average_reward(mdp, tol, 200000);
    double base = hjb_residual(sol.value, mdp);
    int node = mdp.grid.index(mdp.grid.nx / 2, mdp.grid.ny / 2);
    double dt_worst = 0.0;
    for (int k = 0; k < mdp.cand_count(node); ++k)
        dt_worst = std::max(dt_worst, mdp.cand(node, k).dt);
    ValueFunction bumped = sol.value;
    bumped.values[node] += 1.0;
    double raised = hjb_residual(bumped, mdp);
    CHECK(raised > base);
    CHECK(raised >= 0.5 / dt_worst);  // spacing-scale lower bound
}

TEST_CASE("triangular smoothing preserves constants and ramps a step") {
    Grid g{0.05, 10.0, 0.02, 6.0, 24, 24};
    auto flat = constant_policy(g, 1.5, 2.0);
    auto smoothed = lipschitz_regularize(flat, 2);
    for (double v : smoothed.efforts) CHECK(v == Catch::Approx(1.5).margin(1e-12));
    CHECK(smoothed.lipschitz_radius == 2.0);

    // vertical step: 0 for i < 12, M for i >= 12
    PolicyTable step = flat;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) step.efforts[g.index(i, j)] = i < 12 ? 0.0 : 2.0;
    auto ramp = lipschitz_regularize(step, 2);
    int j = g.ny / 2;
    // away from the step the kernel sees a constant; across it, partial sums
    // of the 1-D triangular weights (1,2,3,2,1)/9
    std::vector<double> expected = {0.0,           2.0 * 1 / 9.0, 2.0 * 3 / 9.0,
                                    2.0 * 6 / 9.0, 2.0 * 8 / 9.0, 2.0};
    for (int offs = -3; offs <= 2; ++offs) {
        double got = ramp.efforts[g.index(12 + offs, j)];
        CHECK(got == Catch::Approx(expected[offs + 3]).margin(1e-12));
    }
    // difference quotients bounded by M / (radius * spacing)
    double bound = 2.0 / (2.0 * g.h1());
    for (int jj = 0; jj < g.ny; ++jj)
        for (int i = 0; i + 1 < g.nx; ++i) {
            double dq = std::abs(ramp.efforts[g.index(i + 1, jj)] -
                                 ramp.efforts[g.index(i, jj)]) /
                        g.h1();
            CHECK(dq <= bound * (1 + 1e-12));
        }
    // radius 0 is the identity
    auto same = lipschitz_regularize(step, 0);
    CHECK(same.efforts == step.efforts);
}

TEST_CASE("regularized policy keeps nearly the raw diffusion reward") {
    auto p = testsup::default_params();
    auto hs = testsup::default_harvest();
    auto cf = default_coeffs();
    Grid g = small_grid();
    auto mdp = build_mdp(p, hs, cf, g);
    auto sol = solve_average_reward(mdp, 1e-5, 200000);
    DiffusionConfig cfg;
    cfg.dt = 0.005;
    cfg.t_end = 400.0;
    cfg.burn_in = 80.0;
    cfg.initial = {1.0, 1.0};
    cfg.seed = 606;
    auto raw = average_reward_diffusion(p, hs, cf, sol.policy, cfg, 48);
    for (int radius : {1, 2}) {
        auto reg = lipschitz_regularize(sol.policy, radius);
        auto smooth = average_reward_diffusion(p, hs, cf, reg, cfg, 48);
        double comb = std::sqrt(raw.est.stderr_ * raw.est.stderr_ +
                                smooth.est.stderr_ * smooth.est.stderr_);
        CHECK(std::abs(raw.est.estimate - smooth.est.estimate) <=
              2.0 * comb + 0.02 * raw.est.estimate);
    }
}
