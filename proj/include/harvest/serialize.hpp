#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>

#include "harvest/chain.hpp"
#include "harvest/grid.hpp"
#include "harvest/model.hpp"
#include "harvest/path.hpp"

namespace harvest {

using json = nlohmann::json;

// ============================================================================
// JumpChainSpec <-> {"states", "rates", "kernel", "r1", "r2"}
// ============================================================================

inline json chain_to_json(const JumpChainSpec& spec) {
    return json{{"states", spec.states},
                {"rates", spec.jump_rate},
                {"kernel", spec.kernel},
                {"r1", spec.r1},
                {"r2", spec.r2}};
}

inline JumpChainSpec chain_from_json(const json& j) {
    JumpChainSpec spec;
    spec.states = j.at("states").get<std::vector<std::string>>();
    spec.jump_rate = j.at("rates").get<std::vector<double>>();
    spec.kernel = j.at("kernel").get<std::vector<std::vector<double>>>();
    spec.r1 = j.at("r1").get<std::vector<double>>();
    spec.r2 = j.at("r2").get<std::vector<double>>();
    spec.validate();
    return spec;
}

// ============================================================================
// DiffusionCoeffs <-> {"A", "sigma", "abar1", "abar2"}
// ============================================================================

inline json coeffs_to_json(const DiffusionCoeffs& c) {
    return json{{"A", {{c.a11, c.a12}, {c.a12, c.a22}}},
                {"sigma", {{c.s11, c.s12}, {c.s12, c.s22}}},
                {"abar1", c.abar1},
                {"abar2", c.abar2}};
}

inline DiffusionCoeffs coeffs_from_json(const json& j) {
    DiffusionCoeffs c;
    auto A = j.at("A");
    auto S = j.at("sigma");
    c.a11 = A.at(0).at(0);
    c.a12 = A.at(0).at(1);
    c.a22 = A.at(1).at(1);
    c.s11 = S.at(0).at(0);
    c.s12 = S.at(0).at(1);
    c.s22 = S.at(1).at(1);
    c.abar1 = j.value("abar1", 0.0);
    c.abar2 = j.value("abar2", 0.0);
    return c;
}

// ============================================================================
// Model and harvest
// ============================================================================

inline json model_to_json(const ModelParams& p) {
    return json{{"a1", p.a1}, {"b1", p.b1}, {"c1", p.c1}, {"s2", p.s2},
                {"b2", p.b2}, {"c2", p.c2}, {"M", p.M}};
}

inline ModelParams model_from_json(const json& j) {
    ModelParams p{j.at("a1"), j.at("b1"), j.at("c1"), j.at("s2"),
                  j.at("b2"), j.at("c2"), j.at("M")};
    p.validate();
    return p;
}

inline json harvest_to_json(const HarvestSpec& hs) {
    return json{{"effectiveness", {{"name", hs.effectiveness}, {"kappa", hs.kappa}}},
                {"yield", {{"name", hs.yield}, {"c", hs.c}}}};
}

inline HarvestSpec harvest_from_json(const json& j) {
    HarvestSpec hs;
    const auto& e = j.at("effectiveness");
    hs.effectiveness = e.at("name").get<std::string>();
    hs.kappa = e.value("kappa", 1.0);
    const auto& y = j.at("yield");
    hs.yield = y.at("name").get<std::string>();
    hs.c = y.value("c", 1.0);
    hs.validate();
    return hs;
}

// ============================================================================
// Grid, policy, value
// ============================================================================

inline json grid_to_json(const Grid& g) {
    return json{{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min},
                {"y_max", g.y_max}, {"nx", g.nx},       {"ny", g.ny}};
}

inline Grid grid_from_json(const json& j) {
    Grid g{j.at("x_min"), j.at("x_max"), j.at("y_min"), j.at("y_max"), j.at("nx"), j.at("ny")};
    g.validate();
    return g;
}

/// Interchange format consumed by both simulators.
inline json policy_to_json(const PolicyTable& p) {
    return json{{"grid", grid_to_json(p.grid)},
                {"efforts", p.efforts},
                {"max_effort", p.max_effort},
                {"lipschitz_radius", p.lipschitz_radius}};
}

inline PolicyTable policy_from_json(const json& j) {
    PolicyTable p;
    p.grid = grid_from_json(j.at("grid"));
    p.efforts = j.at("efforts").get<std::vector<double>>();
    p.max_effort = j.at("max_effort");
    p.lipschitz_radius = j.value("lipschitz_radius", 0.0);
    p.validate();
    return p;
}

inline json value_to_json(const ValueFunction& v, double tol) {
    return json{{"grid", grid_to_json(v.grid)}, {"values", v.values},
                {"rho", v.rho},                 {"ref_node", v.ref_node},
                {"tol", tol},                   {"iterations", v.iterations},
                {"final_span", v.final_span}};
}

inline json reward_to_json(const RewardEstimate& r) {
    return json{{"epsilon", r.epsilon}, {"estimate", r.estimate}, {"stderr", r.stderr_},
                {"n_paths", r.n_paths}, {"t_end", r.t_end},       {"burn_in", r.burn_in}};
}

// ============================================================================
// File helpers
// ============================================================================

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

inline json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return json::parse(in);
}

} // namespace harvest
