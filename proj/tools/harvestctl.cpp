// Command-line front end: averaged coefficients, HJB solve, simulators,
// Lyapunov verification, and the canned experiments.
//
// Exit codes: 0 = all checks pass, 1 = a verification check failed,
// 2 = runtime error (bad config, numerical failure, I/O).

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "harvest/config.hpp"
#include "harvest/harness.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned threads = 0;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_config = true) {
    auto* copt = cmd->add_option("--config", o.config_path, "experiment configuration (JSON)");
    if (needs_config) copt->required();
    cmd->add_option("--out", o.out_dir, "output directory (overrides the config)");
    cmd->add_option("--seed", o.seed, "seed override")->each([&](const std::string&) {
        o.seed_set = true;
    });
    cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
    cmd->add_flag("--quiet", o.quiet, "suppress progress output");
}

harvest::ExperimentConfig load(const CommonOpts& o) {
    auto cfg = harvest::load_config(o.config_path);
    if (o.seed_set) {
        cfg.seed = o.seed;
        cfg.diffusion.seed = o.seed;
        cfg.wideband.seed = o.seed;
    }
    if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
    harvest::set_max_threads(o.threads);
    return cfg;
}

void print_checks(const harvest::ExperimentReport& rep, bool quiet) {
    if (quiet) return;
    for (const auto& c : rep.checks)
        std::printf("%-28s %s  measured=%.6g threshold=%.6g\n", c.check.c_str(),
                    c.pass ? "PASS" : "FAIL", c.measured, c.threshold);
}

int report_exit(const harvest::ExperimentReport& rep, bool quiet) {
    print_checks(rep, quiet);
    if (!quiet) std::printf("artifacts: %s\n", rep.out_dir.c_str());
    return rep.all_pass() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"harvestctl: near-optimal harvesting policies for a stochastic "
                 "predator-prey system"};
    app.require_subcommand(1);

    CommonOpts o;
    std::string policy_path;
    double epsilon_override = 0.0;

    auto* avg = app.add_subcommand("avg-coeffs", "averaged covariance and effective rates");
    add_common(avg, o);
    auto* solve = app.add_subcommand("solve", "solve the ergodic HJB and extract the policy");
    add_common(solve, o);
    auto* simd = app.add_subcommand("simulate-diffusion", "simulate the limit diffusion");
    add_common(simd, o);
    simd->add_option("--policy", policy_path, "policy JSON (default: constant 0)");
    auto* simw = app.add_subcommand("simulate-wideband", "simulate the wideband system");
    add_common(simw, o);
    simw->add_option("--policy", policy_path, "policy JSON (default: constant 0)");
    simw->add_option("--epsilon", epsilon_override, "epsilon override");
    auto* verify = app.add_subcommand("verify-lyapunov", "run the Lyapunov verification battery");
    add_common(verify, o);
    auto* pipe = app.add_subcommand("pipeline", "run the full experiment pipeline");
    add_common(pipe, o);
    auto* ext = app.add_subcommand("extinction", "run the extinction study");
    add_common(ext, o);
    auto* lad = app.add_subcommand("ladder", "epsilon ladder for a policy");
    add_common(lad, o);
    lad->add_option("--policy", policy_path, "policy JSON (default: solve first)");
    auto* exp = app.add_subcommand("export", "emit plot-ready data from a pipeline run");
    exp->add_option("--out", o.out_dir, "pipeline output directory")->required();
    exp->add_flag("--quiet", o.quiet);

    CLI11_PARSE(app, argc, argv);

    try {
        if (avg->parsed()) {
            auto cfg = load(o);
            auto chain = harvest::center_noise(cfg.chain);
            auto coeffs = harvest::with_effective_rates(cfg.model,
                                                        harvest::diffusion_matrix(chain));
            harvest::fs::create_directories(cfg.output_dir);
            harvest::write_json(cfg.output_dir + "/coeffs.json",
                                harvest::coeffs_to_json(coeffs));
            harvest::write_json(cfg.output_dir + "/chain_centered.json",
                                harvest::chain_to_json(chain));
            if (!o.quiet)
                std::printf("A = [[%.8g, %.8g], [%.8g, %.8g]]  abar1=%.8g abar2=%.8g\n",
                            coeffs.a11, coeffs.a12, coeffs.a12, coeffs.a22, coeffs.abar1,
                            coeffs.abar2);
            return 0;
        }
        if (solve->parsed()) {
            auto cfg = load(o);
            auto chain = harvest::center_noise(cfg.chain);
            auto coeffs = harvest::with_effective_rates(cfg.model,
                                                        harvest::diffusion_matrix(chain));
            auto mdp = harvest::build_mdp(cfg.model, cfg.harvest, coeffs, cfg.grid);
            auto sol = harvest::solve_average_reward(mdp, cfg.solver.tol, cfg.solver.max_iters);
            double resid = harvest::hjb_residual(sol.value, mdp);
            auto policy = harvest::lipschitz_regularize(sol.policy,
                                                        cfg.solver.regularization_radius);
            harvest::fs::create_directories(cfg.output_dir);
            harvest::write_json(cfg.output_dir + "/value.json",
                                harvest::value_to_json(sol.value, cfg.solver.tol));
            harvest::write_json(cfg.output_dir + "/policy_raw.json",
                                harvest::policy_to_json(sol.policy));
            harvest::write_json(cfg.output_dir + "/policy.json", harvest::policy_to_json(policy));
            harvest::detail::policy_to_csv(policy, cfg.output_dir + "/policy.csv");
            harvest::detail::value_to_csv(sol.value, cfg.output_dir + "/value.csv");
            if (!o.quiet)
                std::printf("rho* = %.8g  residual = %.3g  iterations = %ld\n", sol.value.rho,
                            resid, sol.iterations);
            bool ok = resid < cfg.solver.residual_factor * cfg.solver.tol;
            return ok ? 0 : 1;
        }
        if (simd->parsed()) {
            auto cfg = load(o);
            auto chain = harvest::center_noise(cfg.chain);
            auto coeffs = harvest::with_effective_rates(cfg.model,
                                                        harvest::diffusion_matrix(chain));
            harvest::PolicyTable policy =
                policy_path.empty()
                    ? harvest::constant_policy(cfg.grid, 0.0, cfg.model.M)
                    : harvest::policy_from_json(harvest::read_json(policy_path));
            harvest::DiffusionConfig dc = cfg.diffusion;
            dc.seed = cfg.seed;
            auto res = harvest::average_reward_diffusion(cfg.model, cfg.harvest, coeffs, policy,
                                                         dc, cfg.n_paths, {.keep_records = 3});
            harvest::fs::create_directories(cfg.output_dir);
            harvest::write_json(cfg.output_dir + "/reward_diffusion.json",
                                harvest::reward_to_json(res.est));
            for (std::size_t i = 0; i < res.kept.size(); ++i)
                res.kept[i].to_csv(cfg.output_dir + "/diffusion_" + std::to_string(i) + ".csv");
            if (!o.quiet)
                std::printf("J_diffusion = %.8g +/- %.3g (n=%d)\n", res.est.estimate,
                            res.est.stderr_, res.est.n_paths);
            return 0;
        }
        if (simw->parsed()) {
            auto cfg = load(o);
            auto chain = harvest::center_noise(cfg.chain);
            harvest::PolicyTable policy =
                policy_path.empty()
                    ? harvest::constant_policy(cfg.grid, 0.0, cfg.model.M)
                    : harvest::policy_from_json(harvest::read_json(policy_path));
            harvest::WidebandConfig wc = cfg.wideband;
            wc.epsilon = epsilon_override > 0 ? epsilon_override : cfg.epsilon_ladder.front();
            wc.seed = cfg.seed;
            auto res = harvest::average_reward_wideband(cfg.model, cfg.harvest, chain, policy, wc,
                                                        cfg.n_paths_wideband,
                                                        {.keep_records = 3});
            harvest::fs::create_directories(cfg.output_dir);
            harvest::write_json(cfg.output_dir + "/reward_wideband.json",
                                harvest::reward_to_json(res.est));
            for (std::size_t i = 0; i < res.kept.size(); ++i)
                res.kept[i].to_csv(cfg.output_dir + "/wideband_" + std::to_string(i) + ".csv");
            if (!o.quiet)
                std::printf("J_wideband(eps=%.4g) = %.8g +/- %.3g (n=%d)\n", wc.epsilon,
                            res.est.estimate, res.est.stderr_, res.est.n_paths);
            return 0;
        }
        if (verify->parsed()) {
            auto cfg = load(o);
            return report_exit(harvest::verify_lyapunov(cfg), o.quiet);
        }
        if (pipe->parsed()) {
            auto cfg = load(o);
            return report_exit(harvest::run_pipeline(cfg), o.quiet);
        }
        if (ext->parsed()) {
            auto cfg = load(o);
            return report_exit(harvest::run_extinction_study(cfg), o.quiet);
        }
        if (lad->parsed()) {
            auto cfg = load(o);
            auto chain = harvest::center_noise(cfg.chain);
            harvest::PolicyTable policy;
            if (policy_path.empty()) {
                auto coeffs = harvest::with_effective_rates(cfg.model,
                                                            harvest::diffusion_matrix(chain));
                auto mdp = harvest::build_mdp(cfg.model, cfg.harvest, coeffs, cfg.grid);
                auto sol = harvest::solve_average_reward(mdp, cfg.solver.tol,
                                                         cfg.solver.max_iters);
                policy = harvest::lipschitz_regularize(sol.policy,
                                                       cfg.solver.regularization_radius);
            } else {
                policy = harvest::policy_from_json(harvest::read_json(policy_path));
            }
            auto table = harvest::run_epsilon_ladder(cfg, policy, chain);
            harvest::fs::create_directories(cfg.output_dir);
            harvest::ladder_to_csv(table, cfg.output_dir + "/ladder.csv");
            if (!o.quiet) {
                std::printf("rho_diffusion = %.8g +/- %.3g\n", table.rho_diffusion,
                            table.rho_diffusion_se);
                for (const auto& r : table.rows)
                    std::printf("eps=%.4g  J=%.8g +/- %.3g  gap=%.6g\n", r.epsilon, r.estimate,
                                r.stderr_, r.gap);
            }
            return table.gap_trend_ok ? 0 : 1;
        }
        if (exp->parsed()) {
            auto files = harvest::export_plot_data(o.out_dir);
            if (!o.quiet)
                for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
