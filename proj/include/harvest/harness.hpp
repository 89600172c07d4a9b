#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "harvest/config.hpp"
#include "harvest/csv.hpp"
#include "harvest/diffusion.hpp"
#include "harvest/hjb.hpp"
#include "harvest/lyapunov.hpp"
#include "harvest/serialize.hpp"
#include "harvest/wideband.hpp"

namespace harvest {

namespace fs = std::filesystem;

// ============================================================================
// Report plumbing
// ============================================================================

struct CheckRecord {
    std::string check;
    bool pass = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string note;
};

struct StageRecord {
    std::string name;
    double wall_ms = 0.0;
    std::vector<std::string> outputs;  // paths relative to the output dir
};

struct ExperimentReport {
    std::string config_digest;
    std::string out_dir;
    std::vector<StageRecord> stages;
    std::vector<CheckRecord> checks;
    double rho_star = 0.0;
    bool completed = false;

    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return completed;
    }

    bool has_stage(const std::string& name) const {
        for (const auto& s : stages)
            if (s.name == name) return true;
        return false;
    }
};

namespace detail {

inline json check_to_json(const CheckRecord& c) {
    return json{{"check", c.check},         {"pass", c.pass}, {"measured", c.measured},
                {"threshold", c.threshold}, {"note", c.note}};
}

inline json report_to_json(const ExperimentReport& r) {
    json stages = json::array();
    for (const auto& s : r.stages)
        stages.push_back(json{{"name", s.name}, {"wall_ms", s.wall_ms}, {"outputs", s.outputs}});
    json checks = json::array();
    for (const auto& c : r.checks) checks.push_back(check_to_json(c));
    return json{{"config_hash", r.config_digest}, {"stages", stages},   {"checks", checks},
                {"rho_star", r.rho_star},         {"completed", r.completed}};
}

inline ExperimentReport report_from_json(const json& j) {
    ExperimentReport r;
    r.config_digest = j.at("config_hash");
    r.rho_star = j.value("rho_star", 0.0);
    r.completed = j.value("completed", false);
    for (const auto& s : j.at("stages")) {
        StageRecord st;
        st.name = s.at("name");
        st.wall_ms = s.value("wall_ms", 0.0);
        st.outputs = s.at("outputs").get<std::vector<std::string>>();
        r.stages.push_back(st);
    }
    for (const auto& c : j.value("checks", json::array())) {
        CheckRecord cr;
        cr.check = c.at("check");
        cr.pass = c.at("pass");
        cr.measured = c.value("measured", 0.0);
        cr.threshold = c.value("threshold", 0.0);
        cr.note = c.value("note", "");
        r.checks.push_back(cr);
    }
    return r;
}

/// Collects artifacts under one output directory, times stages and produces
/// the manifest plus a deterministic checksum listing of every artifact
/// (manifest and checksums themselves excluded: they carry wall-clock times).
class OutputDir {
  public:
    OutputDir(std::string dir, std::string digest) : dir_(std::move(dir)) {
        report_.config_digest = std::move(digest);
        report_.out_dir = dir_;
        fs::create_directories(dir_);
        fs::create_directories(dir_ + "/paths");
    }

    const std::string& dir() const { return dir_; }
    ExperimentReport& report() { return report_; }

    std::string path(const std::string& rel) const { return dir_ + "/" + rel; }

    template <class Fn>
    void stage(const std::string& name, Fn&& body) {
        auto t0 = std::chrono::steady_clock::now();
        stage_outputs_.clear();
        body();
        auto t1 = std::chrono::steady_clock::now();
        StageRecord st;
        st.name = name;
        st.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        st.outputs = stage_outputs_;
        report_.stages.push_back(st);
    }

    void note_output(const std::string& rel) { stage_outputs_.push_back(rel); }

    void write_json_output(const std::string& rel, const json& j) {
        write_json(path(rel), j);
        note_output(rel);
    }

    void add_check(const CheckRecord& c) { report_.checks.push_back(c); }

    /// Writes checksums.txt (sorted `hash  relpath` lines over csv/json
    /// artifacts) and manifest.json.
    void finalize(bool completed) {
        report_.completed = completed;
        std::map<std::string, std::string> sums;
        for (auto& entry : fs::recursive_directory_iterator(dir_)) {
            if (!entry.is_regular_file()) continue;
            std::string rel = fs::relative(entry.path(), dir_).generic_string();
            if (rel == "manifest.json" || rel == "checksums.txt") continue;
            std::string ext = entry.path().extension().string();
            if (ext != ".csv" && ext != ".json") continue;
            std::ifstream in(entry.path(), std::ios::binary);
            std::string data((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
            sums[rel] = hex64(fnv1a64(data));
        }
        std::ofstream out(path("checksums.txt"), std::ios::binary);
        for (const auto& [rel, h] : sums) out << h << "  " << rel << "\n";
        out.close();
        write_json(path("manifest.json"), report_to_json(report_));
    }

  private:
    std::string dir_;
    ExperimentReport report_;
    std::vector<std::string> stage_outputs_;
};

inline void policy_to_csv(const PolicyTable& p, const std::string& path) {
    CsvWriter w(path);
    w.row({"x", "y", "effort"});
    for (int j = 0; j < p.grid.ny; ++j)
        for (int i = 0; i < p.grid.nx; ++i)
            w.row_values({p.grid.node_x(i), p.grid.node_y(j), p.efforts[p.grid.index(i, j)]});
}

inline void value_to_csv(const ValueFunction& v, const std::string& path) {
    CsvWriter w(path);
    w.row({"x", "y", "value"});
    for (int j = 0; j < v.grid.ny; ++j)
        for (int i = 0; i < v.grid.nx; ++i)
            w.row_values({v.grid.node_x(i), v.grid.node_y(j), v.values[v.grid.index(i, j)]});
}

inline void occupation_to_csv(const OccupationHistogram& h, const std::string& path) {
    CsvWriter w(path);
    w.row({"x_lo", "x_hi", "y_lo", "y_hi", "mass"});
    for (int j = 0; j + 1 < h.grid.ny; ++j)
        for (int i = 0; i + 1 < h.grid.nx; ++i)
            w.row_values({h.grid.node_x(i), h.grid.node_x(i + 1), h.grid.node_y(j),
                          h.grid.node_y(j + 1), h.mass[std::size_t(j) * (h.grid.nx - 1) + i]});
}

} // namespace detail

// ============================================================================
// Epsilon ladder
// ============================================================================

struct LadderRow {
    double epsilon = 0.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    double gap = 0.0;  // |J_eps - rho_diffusion(policy)|
};

struct LadderTable {
    std::vector<LadderRow> rows;
    double rho_diffusion = 0.0;
    double rho_diffusion_se = 0.0;
    bool gap_trend_ok = true;
    double worst_trend_sigma = 0.0;  // max (gap_{k+1}-gap_k)/combined_se
};

/// Evaluates the policy on the wideband system across the epsilon ladder and
/// compares against its diffusion reward. The gap column must be nonincreasing
/// within 2 combined standard errors (combined over the two J estimates and
/// the shared diffusion estimate).
inline LadderTable run_epsilon_ladder(const ExperimentConfig& cfg, const PolicyTable& policy,
                                      const JumpChainSpec& centered_chain) {
    LadderTable table;
    auto dres = average_reward_diffusion(cfg.model, cfg.harvest,
                                         with_effective_rates(cfg.model,
                                                              diffusion_matrix(centered_chain)),
                                         policy, cfg.diffusion, cfg.n_paths, {},
                                         stage_id(RngStage::diffusion_eval));
    table.rho_diffusion = dres.est.estimate;
    table.rho_diffusion_se = dres.est.stderr_;
    for (std::size_t k = 0; k < cfg.epsilon_ladder.size(); ++k) {
        WidebandConfig wc = cfg.wideband;
        wc.epsilon = cfg.epsilon_ladder[k];
        wc.seed = cfg.seed;
        auto wres = average_reward_wideband(cfg.model, cfg.harvest, centered_chain, policy, wc,
                                            cfg.n_paths_wideband, {},
                                            stage_id(RngStage::wideband_base, std::uint32_t(8 * k)));
        LadderRow row;
        row.epsilon = wc.epsilon;
        row.estimate = wres.est.estimate;
        row.stderr_ = wres.est.stderr_;
        row.gap = std::abs(wres.est.estimate - table.rho_diffusion);
        table.rows.push_back(row);
    }
    for (std::size_t k = 0; k + 1 < table.rows.size(); ++k) {
        const auto& a = table.rows[k];
        const auto& b = table.rows[k + 1];
        double comb = std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_ +
                                4.0 * table.rho_diffusion_se * table.rho_diffusion_se);
        double sigma = comb > 0 ? (b.gap - a.gap) / comb : 0.0;
        table.worst_trend_sigma = std::max(table.worst_trend_sigma, sigma);
        if (b.gap > a.gap + 2.0 * comb) table.gap_trend_ok = false;
    }
    return table;
}

inline void ladder_to_csv(const LadderTable& t, const std::string& path) {
    CsvWriter w(path);
    w.row({"epsilon", "estimate", "stderr", "gap"});
    for (const auto& r : t.rows) w.row_values({r.epsilon, r.estimate, r.stderr_, r.gap});
}

// ============================================================================
// Full pipeline
// ============================================================================

/// Runs the canonical experiment end to end and writes every artifact plus a
/// manifest under the output directory. Stage order: averaged coefficients,
/// Lyapunov exponents and drift scans, HJB solve, diffusion evaluation of the
/// regularized policy, the wideband epsilon ladder, constant-policy baselines.
inline ExperimentReport run_pipeline(const ExperimentConfig& cfg,
                                     const std::string& out_override = "") {
    cfg.validate();
    detail::OutputDir out(out_override.empty() ? cfg.output_dir : out_override,
                          config_hash(cfg));
    bool completed = false;
    try {
        out.write_json_output("config_echo.json", config_to_json(cfg));

        // Stage 1: center the chain, averaged covariance and effective rates.
        JumpChainSpec chain;
        DiffusionCoeffs coeffs;
        out.stage("coeffs", [&] {
            chain = center_noise(cfg.chain);
            coeffs = with_effective_rates(cfg.model, diffusion_matrix(chain));
            out.write_json_output("chain_centered.json", chain_to_json(chain));
            out.write_json_output("coeffs.json", coeffs_to_json(coeffs));
        });

        // Stage 2: Lyapunov exponents, drift inequality, perturbed sandwich.
        LyapunovParams lp;
        out.stage("lyapunov", [&] {
            lp = choose_exponents(cfg.model, cfg.lyapunov.H_override);
            Grid scan{1e-4 * lp.H, 150.0 * lp.H, 1e-4 * lp.H, 150.0 * lp.H, 128, 128};
            auto drift = drift_inequality_scan(cfg.model, cfg.harvest, coeffs, lp, scan);
            auto sandwich = perturbed_sandwich_check(chain, cfg.model, coeffs, lp,
                                                     cfg.lyapunov.sandwich_epsilon);
            out.write_json_output(
                "lyapunov.json",
                json{{"p0", lp.p0},
                     {"p1", lp.p1},
                     {"p2", lp.p2},
                     {"lambda", lp.lambda},
                     {"H", lp.H},
                     {"exponent_combo", lp.exponent_combo},
                     {"combo_positive", lp.combo_positive},
                     {"combo_negative_reading", lp.combo_negative_reading}});
            out.write_json_output("drift_scan.json",
                                  json{{"pass", drift.pass},
                                       {"sup_outside", drift.sup_outside},
                                       {"threshold", -1.0},
                                       {"C_H", drift.C_H},
                                       {"K5", drift.K5},
                                       {"beta", drift.beta},
                                       {"detail", drift.detail}});
            out.write_json_output("sandwich.json",
                                  json{{"pass", sandwich.pass},
                                       {"identity_error", sandwich.identity_error},
                                       {"K_empirical", sandwich.K_empirical},
                                       {"K_formula", sandwich.K_formula},
                                       {"eps_max", sandwich.eps_max}});
            out.add_check({"drift_inequality", drift.pass, drift.sup_outside, -1.0,
                           "sup of L_uV/V outside the box"});
            out.add_check({"perturbed_sandwich", sandwich.pass, sandwich.identity_error, 1e-10,
                           "finite-chain identity error"});
        });

        // Stage 3: HJB solve, residual, regularization.
        SolveResult sol;
        PolicyTable policy;
        double residual = 0.0;
        out.stage("hjb", [&] {
            Mdp mdp = build_mdp(cfg.model, cfg.harvest, coeffs, cfg.grid);
            sol = solve_average_reward(mdp, cfg.solver.tol, cfg.solver.max_iters);
            residual = hjb_residual(sol.value, mdp);
            policy = lipschitz_regularize(sol.policy, cfg.solver.regularization_radius);
            out.write_json_output("value.json", value_to_json(sol.value, cfg.solver.tol));
            out.write_json_output("policy_raw.json", policy_to_json(sol.policy));
            out.write_json_output("policy.json", policy_to_json(policy));
            detail::policy_to_csv(policy, out.path("policy.csv"));
            out.note_output("policy.csv");
            detail::value_to_csv(sol.value, out.path("value.csv"));
            out.note_output("value.csv");
            out.add_check({"hjb_residual", residual < cfg.solver.residual_factor * cfg.solver.tol,
                           residual, cfg.solver.residual_factor * cfg.solver.tol,
                           "interior HJB residual"});
        });
        out.report().rho_star = sol.value.rho;

        // Stage 4: diffusion reward of the regularized policy.
        BatchResult dpol;
        out.stage("diffusion-eval", [&] {
            BatchOptions opt;
            opt.keep_records = 3;
            opt.occupation_grid = &cfg.grid;
            opt.tightness_delta = cfg.tightness.delta;
            opt.tightness_R = cfg.tightness.R;
            DiffusionConfig dc = cfg.diffusion;
            dc.seed = cfg.seed;
            dpol = average_reward_diffusion(cfg.model, cfg.harvest, coeffs, policy, dc,
                                            cfg.n_paths, opt, stage_id(RngStage::diffusion_eval));
            out.write_json_output("reward_diffusion.json", reward_to_json(dpol.est));
            detail::occupation_to_csv(dpol.occupation, out.path("occupation_diffusion.csv"));
            out.note_output("occupation_diffusion.csv");
            out.write_json_output("occupation_diffusion.json",
                                  json{{"outside", dpol.occupation.outside},
                                       {"outside_box_fraction", dpol.outside_box_fraction}});
            for (std::size_t i = 0; i < dpol.kept.size(); ++i) {
                std::string rel = "paths/diffusion_" + std::to_string(i) + ".csv";
                dpol.kept[i].to_csv(out.path(rel));
                out.note_output(rel);
            }
            double lo = sol.value.rho - 3 * dpol.est.stderr_ - 0.05 * std::abs(sol.value.rho);
            double hi = sol.value.rho + 3 * dpol.est.stderr_ + 0.05 * std::abs(sol.value.rho);
            bool ok = dpol.est.estimate >= lo && dpol.est.estimate <= hi;
            out.add_check({"policy_sim_consistency", ok, dpol.est.estimate, sol.value.rho,
                           "diffusion reward vs rho* (3 se + 5% bias budget)"});
        });

        // Stage 5: wideband ladder for {policy, 0, M} with occupation tracking.
        std::vector<LadderRow> ladder_rows;
        double worst_outside = std::max(dpol.occupation.outside, dpol.outside_box_fraction);
        std::map<std::string, RewardEstimate> smallest_eps_rewards;
        double stabilization = 0.0;
        out.stage("ladder", [&] {
            struct NamedPolicy {
                std::string name;
                PolicyTable table;
            };
            std::vector<NamedPolicy> pols{{"policy", policy},
                                          {"u0", constant_policy(cfg.grid, 0.0, cfg.model.M)},
                                          {"uM", constant_policy(cfg.grid, cfg.model.M, cfg.model.M)}};
            for (std::size_t k = 0; k < cfg.epsilon_ladder.size(); ++k) {
                WidebandConfig wc = cfg.wideband;
                wc.epsilon = cfg.epsilon_ladder[k];
                wc.seed = cfg.seed;
                for (std::size_t pi = 0; pi < pols.size(); ++pi) {
                    BatchOptions opt;
                    opt.keep_records = pi == 0 ? 3 : 0;
                    opt.occupation_grid = &cfg.grid;
                    opt.tightness_delta = cfg.tightness.delta;
                    opt.tightness_R = cfg.tightness.R;
                    auto res = average_reward_wideband(
                        cfg.model, cfg.harvest, chain, pols[pi].table, wc, cfg.n_paths_wideband,
                        opt, stage_id(RngStage::wideband_base, std::uint32_t(8 * k + pi)));
                    worst_outside = std::max(worst_outside,
                                             std::max(res.occupation.outside,
                                                      res.outside_box_fraction));
                    std::string tag = "eps" + std::to_string(k) + "_" + pols[pi].name;
                    out.write_json_output("reward_wideband_" + tag + ".json",
                                          reward_to_json(res.est));
                    detail::occupation_to_csv(res.occupation,
                                              out.path("occupation_wideband_" + tag + ".csv"));
                    out.note_output("occupation_wideband_" + tag + ".csv");
                    if (pi == 0) {
                        LadderRow row;
                        row.epsilon = wc.epsilon;
                        row.estimate = res.est.estimate;
                        row.stderr_ = res.est.stderr_;
                        row.gap = std::abs(res.est.estimate - dpol.est.estimate);
                        ladder_rows.push_back(row);
                        for (std::size_t i = 0; i < res.kept.size(); ++i) {
                            std::string rel = "paths/wideband_eps" + std::to_string(k) + "_" +
                                              std::to_string(i) + ".csv";
                            res.kept[i].to_csv(out.path(rel));
                            out.note_output(rel);
                        }
                        if (k + 1 == cfg.epsilon_ladder.size()) {
                            double denom = std::max(std::abs(res.mean_running_avg_end), 1e-9);
                            stabilization =
                                std::abs(res.mean_running_avg_end - res.mean_running_avg_half) /
                                denom;
                        }
                    }
                    if (k + 1 == cfg.epsilon_ladder.size())
                        smallest_eps_rewards[pols[pi].name] = res.est;
                }
            }
            CsvWriter w(out.path("ladder.csv"));
            w.row({"epsilon", "estimate", "stderr", "gap"});
            for (const auto& r : ladder_rows)
                w.row_values({r.epsilon, r.estimate, r.stderr_, r.gap});
            out.note_output("ladder.csv");
        });

        // Stage 6: constant-policy baselines on both systems.
        out.stage("baselines", [&] {
            std::vector<double> baseline_efforts;
            for (int k = 0; k <= 4; ++k) baseline_efforts.push_back(cfg.model.M * k / 4.0);
            CsvWriter w(out.path("baselines.csv"));
            w.row({"system", "u", "epsilon", "estimate", "stderr"});
            DiffusionConfig dc = cfg.diffusion;
            dc.seed = cfg.seed;
            for (std::size_t bi = 0; bi < baseline_efforts.size(); ++bi) {
                double u = baseline_efforts[bi];
                auto res = average_reward_diffusion(
                    cfg.model, cfg.harvest, coeffs, constant_policy(cfg.grid, u, cfg.model.M), dc,
                    cfg.n_paths, {}, stage_id(RngStage::baseline_base, std::uint32_t(bi)));
                w.row({"diffusion", format_double(u), "0", format_double(res.est.estimate),
                       format_double(res.est.stderr_)});
            }
            WidebandConfig wc = cfg.wideband;
            wc.epsilon = cfg.epsilon_ladder.back();
            wc.seed = cfg.seed;
            // u = 0 and u = M at the smallest epsilon already ran in the ladder
            for (std::size_t bi = 1; bi + 1 < baseline_efforts.size(); ++bi) {
                double u = baseline_efforts[bi];
                auto res = average_reward_wideband(
                    cfg.model, cfg.harvest, chain, constant_policy(cfg.grid, u, cfg.model.M), wc,
                    cfg.n_paths_wideband, {},
                    stage_id(RngStage::baseline_base, std::uint32_t(16 + bi)));
                smallest_eps_rewards["u" + format_double(u)] = res.est;
                w.row({"wideband", format_double(u), format_double(wc.epsilon),
                       format_double(res.est.estimate), format_double(res.est.stderr_)});
            }
            for (const auto& [name, est] : smallest_eps_rewards)
                if (name != "policy")
                    w.row({"wideband", name, format_double(wc.epsilon),
                           format_double(est.estimate), format_double(est.stderr_)});
            out.note_output("baselines.csv");
        });

        // Cross-stage checks.
        {
            bool trend_ok = true;
            double worst_sigma = 0.0;
            for (std::size_t k = 0; k + 1 < ladder_rows.size(); ++k) {
                const auto& a = ladder_rows[k];
                const auto& b = ladder_rows[k + 1];
                double comb = std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_ +
                                        4.0 * dpol.est.stderr_ * dpol.est.stderr_);
                double sigma = comb > 0 ? (b.gap - a.gap) / comb : 0.0;
                worst_sigma = std::max(worst_sigma, sigma);
                if (b.gap > a.gap + 2.0 * comb) trend_ok = false;
            }
            out.add_check({"ladder_gap_trend", trend_ok, worst_sigma, 2.0,
                           "gap increase in combined-stderr units"});

            const auto& pol_est = smallest_eps_rewards["policy"];
            bool dominates = true;
            double worst = 0.0;
            for (const auto& [name, est] : smallest_eps_rewards) {
                if (name == "policy") continue;
                double comb = std::sqrt(est.stderr_ * est.stderr_ +
                                        pol_est.stderr_ * pol_est.stderr_);
                double sigma = comb > 0 ? (est.estimate - pol_est.estimate) / comb : 0.0;
                worst = std::max(worst, sigma);
                if (est.estimate > pol_est.estimate + 2.0 * comb) dominates = false;
            }
            out.add_check({"baseline_domination", dominates, worst, 2.0,
                           "best constant baseline above policy, in combined-stderr units"});
            out.add_check({"tightness", worst_outside <= cfg.tightness.max_outside, worst_outside,
                           cfg.tightness.max_outside, "worst occupation mass outside the box"});
            out.add_check({"running_avg_stabilization", stabilization < 0.05, stabilization, 0.05,
                           "relative running-average drift over the second half"});
        }
        completed = true;
    } catch (...) {
        out.finalize(false);
        throw;
    }
    out.finalize(completed);
    return out.report();
}

// ============================================================================
// Extinction study
// ============================================================================

/// Negative-margin experiment: both systems under u in {0, M} must drive the
/// predator and the reward to zero. Refuses persistent configurations.
inline ExperimentReport run_extinction_study(const ExperimentConfig& cfg,
                                             const std::string& out_override = "") {
    cfg.validate();
    auto pc = persistence_check(cfg.model);
    if (pc.verdict != Persistence::Extinct)
        throw std::invalid_argument(
            "run_extinction_study: configuration is persistent (margin = " +
            format_double(pc.margin) + "); this study needs a negative margin");

    detail::OutputDir out(out_override.empty() ? cfg.output_dir : out_override, config_hash(cfg));
    bool completed = false;
    try {
        JumpChainSpec chain = center_noise(cfg.chain);
        DiffusionCoeffs coeffs = with_effective_rates(cfg.model, diffusion_matrix(chain));
        std::vector<double> controls{0.0, cfg.model.M};
        std::vector<double> checkpoints{0.25, 0.5, 1.0};

        struct Row {
            std::string system;
            double u;
            double median_y_end;
            std::vector<double> reward_at_checkpoints;
        };
        std::vector<Row> rows;
        const int n_paths = std::min(cfg.n_paths, 50);

        out.stage("extinction", [&] {
            for (int sys = 0; sys < 2; ++sys) {
                for (double u : controls) {
                    PolicyTable pol = constant_policy(cfg.grid, u, cfg.model.M);
                    std::vector<double> finals(n_paths);
                    std::vector<std::vector<double>> rewards(checkpoints.size());
                    for (auto& r : rewards) r.resize(n_paths);
                    parallel_for(std::size_t(n_paths), [&](std::size_t i) {
                        std::vector<double> cps;
                        double t_end = sys == 0 ? cfg.diffusion.t_end : cfg.wideband.t_end;
                        for (double c : checkpoints) cps.push_back(c * t_end);
                        std::size_t next = 0;
                        double y_final = 0.0;
                        KahanSum reward_int;
                        std::vector<double> cp_avgs(checkpoints.size(), 0.0);
                        auto observer = [&](double t, double dt, const State2D& z, double,
                                            double r) {
                            reward_int.add(r * dt);
                            y_final = z.y;
                            while (next < cps.size() && t + dt >= cps[next] - 1e-9) {
                                cp_avgs[next] = reward_int.value() / cps[next];
                                ++next;
                            }
                        };
                        if (sys == 0) {
                            DiffusionConfig dc = cfg.diffusion;
                            dc.seed = cfg.seed;
                            auto rng = make_rng(dc.seed,
                                                stage_id(RngStage::extinction,
                                                         std::uint32_t(2 * sys + (u > 0))),
                                                i);
                            detail::run_diffusion_path(cfg.model, cfg.harvest, coeffs, pol, dc,
                                                       rng, observer);
                        } else {
                            WidebandConfig wc = cfg.wideband;
                            wc.epsilon = cfg.epsilon_ladder.front();
                            wc.seed = cfg.seed;
                            auto rng = make_rng(wc.seed,
                                                stage_id(RngStage::extinction,
                                                         std::uint32_t(2 * sys + (u > 0))),
                                                i);
                            detail::run_wideband_path(cfg.model, cfg.harvest, chain, pol, wc, rng,
                                                      observer);
                        }
                        finals[i] = y_final;
                        for (std::size_t c = 0; c < checkpoints.size(); ++c)
                            rewards[c][i] = cp_avgs[c];
                    });
                    Row row;
                    row.system = sys == 0 ? "diffusion" : "wideband";
                    row.u = u;
                    row.median_y_end = percentile(finals, 0.5);
                    for (auto& r : rewards) row.reward_at_checkpoints.push_back(mean(r));
                    rows.push_back(row);
                }
            }
            CsvWriter w(out.path("extinction.csv"));
            w.row({"system", "u", "median_y_end", "reward_quarter", "reward_half", "reward_end"});
            for (const auto& r : rows)
                w.row({r.system, format_double(r.u), format_double(r.median_y_end),
                       format_double(r.reward_at_checkpoints[0]),
                       format_double(r.reward_at_checkpoints[1]),
                       format_double(r.reward_at_checkpoints[2])});
            out.note_output("extinction.csv");
        });

        double worst_median = 0.0, worst_reward = 0.0;
        bool monotone = true;
        for (const auto& r : rows) {
            worst_median = std::max(worst_median, r.median_y_end);
            worst_reward = std::max(worst_reward, r.reward_at_checkpoints.back());
            for (std::size_t c = 0; c + 1 < r.reward_at_checkpoints.size(); ++c)
                if (r.reward_at_checkpoints[c + 1] > r.reward_at_checkpoints[c] + 1e-12)
                    monotone = false;
        }
        out.add_check({"extinction_median_y", worst_median < 1e-3, worst_median, 1e-3,
                       "median terminal predator density"});
        out.add_check({"extinction_reward", worst_reward < 1e-3, worst_reward, 1e-3,
                       "largest time-average reward"});
        out.add_check({"extinction_reward_monotone", monotone, monotone ? 0.0 : 1.0, 0.0,
                       "reward decreasing across checkpoints"});
        out.write_json_output("extinction.json",
                              json{{"margin", pc.margin},
                                   {"worst_median_y", worst_median},
                                   {"worst_reward", worst_reward},
                                   {"monotone", monotone}});
        completed = true;
    } catch (...) {
        out.finalize(false);
        throw;
    }
    out.finalize(completed);
    return out.report();
}

// ============================================================================
// Plot-data export
// ============================================================================

/// Re-derives the plot-ready file families from a completed pipeline output
/// directory (reads its manifest). Errors name the missing stage.
inline std::vector<std::string> export_plot_data(const std::string& out_dir) {
    ExperimentReport rep = detail::report_from_json(read_json(out_dir + "/manifest.json"));
    std::vector<std::string> required{"hjb", "diffusion-eval", "ladder"};
    for (const auto& s : required)
        if (!rep.has_stage(s))
            throw std::runtime_error("export_plot_data: report lacks stage '" + s + "'");
    for (const auto& st : rep.stages)
        for (const auto& rel : st.outputs)
            if (!fs::exists(out_dir + "/" + rel))
                throw std::runtime_error("export_plot_data: missing stage output " + rel);

    fs::create_directories(out_dir + "/plot_data");
    std::vector<std::string> written;
    auto policy = policy_from_json(read_json(out_dir + "/policy.json"));
    {
        detail::policy_to_csv(policy, out_dir + "/plot_data/policy_heatmap.csv");
        written.push_back("plot_data/policy_heatmap.csv");
    }
    {
        fs::copy_file(out_dir + "/value.csv", out_dir + "/plot_data/value_surface.csv",
                      fs::copy_options::overwrite_existing);
        written.push_back("plot_data/value_surface.csv");
    }
    {
        fs::copy_file(out_dir + "/ladder.csv", out_dir + "/plot_data/ladder.csv",
                      fs::copy_options::overwrite_existing);
        written.push_back("plot_data/ladder.csv");
    }
    int occ_count = 0;
    for (auto& entry : fs::directory_iterator(out_dir)) {
        std::string name = entry.path().filename().string();
        if (name.rfind("occupation_", 0) == 0 && entry.path().extension() == ".csv") {
            fs::copy_file(entry.path(), out_dir + "/plot_data/" + name,
                          fs::copy_options::overwrite_existing);
            written.push_back("plot_data/" + name);
            ++occ_count;
        }
    }
    if (occ_count == 0) throw std::runtime_error("export_plot_data: no occupation histograms");
    int path_count = 0;
    if (fs::exists(out_dir + "/paths")) {
        for (auto& entry : fs::directory_iterator(out_dir + "/paths")) {
            std::string name = entry.path().filename().string();
            fs::copy_file(entry.path(), out_dir + "/plot_data/" + name,
                          fs::copy_options::overwrite_existing);
            written.push_back("plot_data/" + name);
            ++path_count;
        }
    }
    if (path_count == 0) throw std::runtime_error("export_plot_data: no sample paths");
    return written;
}

// ============================================================================
// Lyapunov verification battery
// ============================================================================

/// Runs the full verification battery: exponent selection, drift inequality,
/// perturbed sandwich, boundary averages, prey-only and comparison-system
/// checks. Each report carries {check, params_hash, pass, worst_value,
/// threshold}.
inline ExperimentReport verify_lyapunov(const ExperimentConfig& cfg,
                                        const std::string& out_override = "") {
    cfg.validate();
    detail::OutputDir out(out_override.empty() ? cfg.output_dir : out_override, config_hash(cfg));
    std::string phash = config_hash(cfg);
    bool completed = false;
    try {
        JumpChainSpec chain = center_noise(cfg.chain);
        DiffusionCoeffs coeffs = with_effective_rates(cfg.model, diffusion_matrix(chain));
        LyapunovParams lp;
        out.stage("exponents", [&] {
            lp = choose_exponents(cfg.model, cfg.lyapunov.H_override);
            out.write_json_output("verify_exponents.json",
                                  json{{"check", "choose_exponents"},
                                       {"params_hash", phash},
                                       {"pass", lp.lambda > 0},
                                       {"worst_value", lp.lambda},
                                       {"threshold", 0.0},
                                       {"p0", lp.p0},
                                       {"p1", lp.p1},
                                       {"p2", lp.p2},
                                       {"H", lp.H},
                                       {"exponent_combo", lp.exponent_combo},
                                       {"combo_negative_reading", lp.combo_negative_reading}});
            out.add_check({"choose_exponents", lp.lambda > 0, lp.lambda, 0.0, "lambda"});
        });

        out.stage("drift-scan", [&] {
            Grid scan{1e-4 * lp.H, 150.0 * lp.H, 1e-4 * lp.H, 150.0 * lp.H, 128, 128};
            auto drift = drift_inequality_scan(cfg.model, cfg.harvest, coeffs, lp, scan);
            out.write_json_output("verify_drift.json",
                                  json{{"check", "drift_inequality_scan"},
                                       {"params_hash", phash},
                                       {"pass", drift.pass},
                                       {"worst_value", drift.sup_outside},
                                       {"threshold", -1.0},
                                       {"C_H", drift.C_H},
                                       {"K5", drift.K5},
                                       {"beta", drift.beta},
                                       {"detail", drift.detail}});
            out.add_check({"drift_inequality", drift.pass, drift.sup_outside, -1.0, ""});
        });

        out.stage("sandwich", [&] {
            auto sw = perturbed_sandwich_check(chain, cfg.model, coeffs, lp,
                                               cfg.lyapunov.sandwich_epsilon);
            out.write_json_output("verify_sandwich.json",
                                  json{{"check", "perturbed_sandwich_check"},
                                       {"params_hash", phash},
                                       {"pass", sw.pass},
                                       {"worst_value", sw.identity_error},
                                       {"threshold", 1e-10},
                                       {"K_empirical", sw.K_empirical},
                                       {"K_formula", sw.K_formula},
                                       {"eps_max", sw.eps_max}});
            out.add_check({"perturbed_sandwich", sw.pass, sw.identity_error, 1e-10, ""});
        });

        out.stage("boundary-averages", [&] {
            const auto& b = cfg.lyapunov.boundary;
            auto rep = boundary_average_check(cfg.model, cfg.harvest, coeffs, lp, b.delta, b.H,
                                              b.T1, b.k0, b.n_paths, cfg.seed);
            out.write_json_output("verify_boundary.json",
                                  json{{"check", "boundary_average_check"},
                                       {"params_hash", phash},
                                       {"pass", rep.pass},
                                       {"worst_value", rep.f_min},
                                       {"threshold", rep.f_threshold},
                                       {"f_min", rep.f_min},
                                       {"g_max", rep.g_max},
                                       {"g_threshold", rep.g_threshold},
                                       {"h_max", rep.h_max},
                                       {"h_threshold", rep.h_threshold}});
            out.add_check({"boundary_averages", rep.pass, rep.f_min, rep.f_threshold, ""});
        });

        out.stage("comparison", [&] {
            auto comp = comparison_average_check(cfg.model, cfg.harvest, coeffs, lp, 24,
                                                 cfg.seed);
            DiffusionConfig dc;
            dc.dt = std::min(5e-3, 1e-2 / cfg.model.a1);
            dc.t_end = 50.0;
            dc.burn_in = 0.0;
            dc.seed = cfg.seed;
            dc.initial = {0.05, 0.5};
            auto dom = comparison_domination_check(cfg.model, cfg.harvest, coeffs,
                                                   constant_policy(cfg.grid, 0.0, cfg.model.M),
                                                   dc);
            out.write_json_output("verify_comparison.json",
                                  json{{"check", "comparison_system"},
                                       {"params_hash", phash},
                                       {"pass", comp.pass && dom.pass},
                                       {"worst_value", comp.f_min},
                                       {"threshold", comp.f_threshold},
                                       {"g_max", comp.g_max},
                                       {"g_threshold", comp.g_threshold},
                                       {"ytilde_avg_max", comp.ytilde_max},
                                       {"ytilde_threshold", comp.ytilde_threshold},
                                       {"domination_pass", dom.pass},
                                       {"domination_window", dom.zeta},
                                       {"T0", comp.T0}});
            out.add_check({"comparison_prey_only", comp.f_pass && comp.g_pass, comp.f_min,
                           comp.f_threshold, ""});
            out.add_check({"comparison_ytilde", comp.y_pass, comp.ytilde_max,
                           comp.ytilde_threshold, ""});
            out.add_check({"comparison_domination", dom.pass, dom.max_violation, 1e-9, ""});
        });

        out.stage("moment-bound", [&] {
            LyapunovFunctions lf(cfg.model, coeffs, lp.p1, lp.p2);
            DiffusionConfig dc = cfg.diffusion;
            dc.t_end = std::min(dc.t_end, 400.0);
            dc.burn_in = 0.1 * dc.t_end;
            dc.seed = cfg.seed;
            auto series = moment_boundedness_check(
                cfg.model, cfg.harvest, coeffs, constant_policy(cfg.grid, 0.0, cfg.model.M), dc,
                64, cfg.lyapunov.theta, [&](const State2D& z) { return lf.V(z); });
            out.write_json_output("verify_moment.json",
                                  json{{"check", "moment_boundedness"},
                                       {"params_hash", phash},
                                       {"pass", series.pass},
                                       {"worst_value", series.worst_ratio},
                                       {"threshold", 1.2},
                                       {"times", series.times},
                                       {"values", series.values}});
            out.add_check({"moment_boundedness", series.pass, series.worst_ratio, 1.2, ""});
        });
        completed = true;
    } catch (...) {
        out.finalize(false);
        throw;
    }
    out.finalize(completed);
    return out.report();
}

} // namespace harvest
