#pragma once

#include <string>
#include <vector>

#include "harvest/diffusion.hpp"
#include "harvest/serialize.hpp"
#include "harvest/wideband.hpp"

namespace harvest {

// ============================================================================
// Experiment configuration (one versioned JSON document)
// ============================================================================

struct SolverConfig {
    double tol = 1e-4;
    long max_iters = 200000;
    int regularization_radius = 2;
    double residual_factor = 10.0;  // PASS threshold = residual_factor * tol
};

struct TightnessConfig {
    double delta = 0.02;  // occupation box [delta, R]^2
    double R = 12.0;
    double max_outside = 0.01;
};

struct BoundaryCheckConfig {
    double delta = 1e-38;
    double H = 6.0;
    double T1 = 40.0;
    double k0 = 1.2;
    int n_paths = 24;
};

struct LyapunovConfig {
    double H_override = 0.0;  // 0 = derive the drift box from the exponents
    double theta = 0.1;       // moment exponent
    double sandwich_epsilon = 0.25;
    BoundaryCheckConfig boundary;
};

struct ExperimentConfig {
    int schema_version = 1;
    ModelParams model{2.0, 1.0, 1.0, -1.0, 1.0, 1.0, 2.0};
    HarvestSpec harvest;
    JumpChainSpec chain;
    Grid grid{0.05, 10.0, 0.02, 6.0, 96, 96};
    SolverConfig solver;
    DiffusionConfig diffusion;
    WidebandConfig wideband;
    std::vector<double> epsilon_ladder{0.5, 0.25, 0.1};
    int n_paths = 200;
    int n_paths_wideband = 96;
    std::uint64_t seed = 20240601;
    std::string output_dir = "out";
    TightnessConfig tightness;
    LyapunovConfig lyapunov;

    void validate() const {
        model.validate();
        harvest.validate();
        chain.validate();
        grid.validate();
        diffusion.validate(model);
        wideband.validate();
        if (epsilon_ladder.empty())
            throw std::invalid_argument("config: epsilon_ladder must be nonempty");
        for (std::size_t i = 0; i < epsilon_ladder.size(); ++i) {
            double e = epsilon_ladder[i];
            if (!(e > 0 && e <= 1))
                throw std::invalid_argument("config: epsilon_ladder entries must lie in (0, 1]");
            if (i > 0 && !(e < epsilon_ladder[i - 1]))
                throw std::invalid_argument("config: epsilon_ladder must be strictly decreasing");
        }
        if (n_paths < 1 || n_paths_wideband < 1)
            throw std::invalid_argument("config: n_paths must be positive");
        if (!(solver.tol > 0) || solver.max_iters < 1 || solver.regularization_radius < 0)
            throw std::invalid_argument("config: invalid solver settings");
    }
};

inline json config_to_json(const ExperimentConfig& c) {
    json sim{{"diffusion",
              {{"dt", c.diffusion.dt},
               {"t_end", c.diffusion.t_end},
               {"burn_in", c.diffusion.burn_in},
               {"initial", {c.diffusion.initial.x, c.diffusion.initial.y}},
               {"n_samples", c.diffusion.n_samples}}},
             {"wideband",
              {{"t_end", c.wideband.t_end},
               {"burn_in", c.wideband.burn_in},
               {"max_substep", c.wideband.max_substep},
               {"initial", {c.wideband.initial.x, c.wideband.initial.y}},
               {"substep_budget", c.wideband.substep_budget},
               {"n_samples", c.wideband.n_samples}}}};
    return json{
        {"schema_version", c.schema_version},
        {"model", model_to_json(c.model)},
        {"harvest", harvest_to_json(c.harvest)},
        {"chain", chain_to_json(c.chain)},
        {"grid", grid_to_json(c.grid)},
        {"solver",
         {{"tol", c.solver.tol},
          {"max_iters", c.solver.max_iters},
          {"regularization_radius", c.solver.regularization_radius},
          {"residual_factor", c.solver.residual_factor}}},
        {"sim", sim},
        {"epsilon_ladder", c.epsilon_ladder},
        {"n_paths", c.n_paths},
        {"n_paths_wideband", c.n_paths_wideband},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"tightness",
         {{"delta", c.tightness.delta}, {"R", c.tightness.R},
          {"max_outside", c.tightness.max_outside}}},
        {"lyapunov",
         {{"H_override", c.lyapunov.H_override},
          {"theta", c.lyapunov.theta},
          {"sandwich_epsilon", c.lyapunov.sandwich_epsilon},
          {"boundary",
           {{"delta", c.lyapunov.boundary.delta},
            {"H", c.lyapunov.boundary.H},
            {"T1", c.lyapunov.boundary.T1},
            {"k0", c.lyapunov.boundary.k0},
            {"n_paths", c.lyapunov.boundary.n_paths}}}}}};
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    int version = j.value("schema_version", 1);
    if (version != 1)
        throw std::invalid_argument("config: unsupported schema_version " +
                                    std::to_string(version));
    c.schema_version = version;
    c.model = model_from_json(j.at("model"));
    c.harvest = harvest_from_json(j.at("harvest"));
    c.chain = chain_from_json(j.at("chain"));
    c.grid = grid_from_json(j.at("grid"));
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        c.solver.tol = s.value("tol", c.solver.tol);
        c.solver.max_iters = s.value("max_iters", c.solver.max_iters);
        c.solver.regularization_radius =
            s.value("regularization_radius", c.solver.regularization_radius);
        c.solver.residual_factor = s.value("residual_factor", c.solver.residual_factor);
    }
    if (j.contains("sim")) {
        const auto& sim = j.at("sim");
        if (sim.contains("diffusion")) {
            const auto& d = sim.at("diffusion");
            c.diffusion.dt = d.value("dt", c.diffusion.dt);
            c.diffusion.t_end = d.value("t_end", c.diffusion.t_end);
            c.diffusion.burn_in = d.value("burn_in", c.diffusion.burn_in);
            if (d.contains("initial"))
                c.diffusion.initial = {d.at("initial").at(0), d.at("initial").at(1)};
            c.diffusion.n_samples = d.value("n_samples", c.diffusion.n_samples);
        }
        if (sim.contains("wideband")) {
            const auto& w = sim.at("wideband");
            c.wideband.t_end = w.value("t_end", c.wideband.t_end);
            c.wideband.burn_in = w.value("burn_in", c.wideband.burn_in);
            c.wideband.max_substep = w.value("max_substep", c.wideband.max_substep);
            if (w.contains("initial"))
                c.wideband.initial = {w.at("initial").at(0), w.at("initial").at(1)};
            c.wideband.substep_budget = w.value("substep_budget", c.wideband.substep_budget);
            c.wideband.n_samples = w.value("n_samples", c.wideband.n_samples);
        }
    }
    c.epsilon_ladder = j.value("epsilon_ladder", c.epsilon_ladder);
    c.n_paths = j.value("n_paths", c.n_paths);
    c.n_paths_wideband = j.value("n_paths_wideband", std::min(c.n_paths, 96));
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("tightness")) {
        const auto& t = j.at("tightness");
        c.tightness.delta = t.value("delta", c.tightness.delta);
        c.tightness.R = t.value("R", c.tightness.R);
        c.tightness.max_outside = t.value("max_outside", c.tightness.max_outside);
    }
    if (j.contains("lyapunov")) {
        const auto& l = j.at("lyapunov");
        c.lyapunov.H_override = l.value("H_override", c.lyapunov.H_override);
        c.lyapunov.theta = l.value("theta", c.lyapunov.theta);
        c.lyapunov.sandwich_epsilon = l.value("sandwich_epsilon", c.lyapunov.sandwich_epsilon);
        if (l.contains("boundary")) {
            const auto& b = l.at("boundary");
            c.lyapunov.boundary.delta = b.value("delta", c.lyapunov.boundary.delta);
            c.lyapunov.boundary.H = b.value("H", c.lyapunov.boundary.H);
            c.lyapunov.boundary.T1 = b.value("T1", c.lyapunov.boundary.T1);
            c.lyapunov.boundary.k0 = b.value("k0", c.lyapunov.boundary.k0);
            c.lyapunov.boundary.n_paths = b.value("n_paths", c.lyapunov.boundary.n_paths);
        }
    }
    // The diffusion seed/wideband seed follow the experiment seed.
    c.diffusion.seed = c.seed;
    c.wideband.seed = c.seed;
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    return config_from_json(read_json(path));
}

inline std::string config_hash(const ExperimentConfig& c) {
    return hex64(fnv1a64(config_to_json(c).dump()));
}

} // namespace harvest
