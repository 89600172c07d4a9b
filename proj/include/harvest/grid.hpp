#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "harvest/util.hpp"

namespace harvest {

// ============================================================================
// Log-uniform grid on a truncated open-quadrant box
// ============================================================================

/// Rectangular grid, uniform in (log x, log y). Node (i, j) has
/// x = exp(lx0 + i h1), y = exp(ly0 + j h2); index = j * nx + i.
struct Grid {
    double x_min, x_max, y_min, y_max;
    int nx = 0, ny = 0;

    void validate() const {
        if (!(x_min > 0 && y_min > 0 && x_max > x_min && y_max > y_min))
            throw std::invalid_argument("Grid: need 0 < x_min < x_max and 0 < y_min < y_max");
        if (nx < 16 || ny < 16)
            throw std::invalid_argument("Grid: nx, ny must be at least 16");
    }

    int size() const { return nx * ny; }
    double lx0() const { return std::log(x_min); }
    double ly0() const { return std::log(y_min); }
    double h1() const { return (std::log(x_max) - std::log(x_min)) / (nx - 1); }
    double h2() const { return (std::log(y_max) - std::log(y_min)) / (ny - 1); }
    double node_x(int i) const { return std::exp(lx0() + i * h1()); }
    double node_y(int j) const { return std::exp(ly0() + j * h2()); }
    int index(int i, int j) const { return j * nx + i; }
    int ix(int idx) const { return idx % nx; }
    int iy(int idx) const { return idx / nx; }

    bool interior(int idx) const {
        int i = ix(idx), j = iy(idx);
        return i > 0 && i + 1 < nx && j > 0 && j + 1 < ny;
    }

    bool same_shape(const Grid& o) const {
        return x_min == o.x_min && x_max == o.x_max && y_min == o.y_min && y_max == o.y_max &&
               nx == o.nx && ny == o.ny;
    }

    Grid refined() const { return {x_min, x_max, y_min, y_max, 2 * nx, 2 * ny}; }

    /// Continuous cell coordinates of (x, y) in log space, clamped to the box.
    void locate(double x, double y, int& i, int& j, double& fx, double& fy) const {
        double u = (std::log(std::max(x, 1e-300)) - lx0()) / h1();
        double v = (std::log(std::max(y, 1e-300)) - ly0()) / h2();
        u = std::clamp(u, 0.0, double(nx - 1));
        v = std::clamp(v, 0.0, double(ny - 1));
        i = std::min(int(u), nx - 2);
        j = std::min(int(v), ny - 2);
        fx = u - i;
        fy = v - j;
    }
};

// ============================================================================
// Gridded feedback policy and relative value function
// ============================================================================

/// Feedback harvest policy on a grid, evaluated by bilinear interpolation in
/// log coordinates and clamped to the boundary value outside the box.
struct PolicyTable {
    Grid grid;
    std::vector<double> efforts;      // one per node, in [0, M]
    double max_effort = 0.0;          // M used for validation/clamping
    double lipschitz_radius = 0.0;    // smoothing radius in cells (0 = raw)

    void validate() const {
        grid.validate();
        if (static_cast<int>(efforts.size()) != grid.size())
            throw std::invalid_argument("PolicyTable: effort table size mismatch");
        for (double u : efforts)
            if (!(u >= 0.0 && u <= max_effort + 1e-12))
                throw std::invalid_argument("PolicyTable: effort outside [0, M]");
    }

    double at(double x, double y) const {
        int i, j;
        double fx, fy;
        grid.locate(x, y, i, j, fx, fy);
        double v00 = efforts[grid.index(i, j)];
        double v10 = efforts[grid.index(i + 1, j)];
        double v01 = efforts[grid.index(i, j + 1)];
        double v11 = efforts[grid.index(i + 1, j + 1)];
        double v = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 +
                   fx * fy * v11;
        return std::clamp(v, 0.0, max_effort);
    }
};

inline PolicyTable constant_policy(const Grid& grid, double u, double M) {
    if (!(u >= 0.0 && u <= M)) throw std::invalid_argument("constant_policy: u outside [0, M]");
    PolicyTable p;
    p.grid = grid;
    p.efforts.assign(grid.size(), u);
    p.max_effort = M;
    return p;
}

/// Relative value of the average-reward problem, anchored to 0 at ref_node,
/// together with the optimal average reward rho.
struct ValueFunction {
    Grid grid;
    std::vector<double> values;
    double rho = 0.0;
    int ref_node = 0;
    int iterations = 0;
    double final_span = 0.0;
};

// ============================================================================
// Occupation histogram
// ============================================================================

/// Empirical occupation measure on a grid: nonnegative cell weights summing
/// (with the outside bucket) to 1. Cells are the (nx-1) x (ny-1) log boxes.
struct OccupationHistogram {
    Grid grid;
    std::vector<double> mass;  // (nx-1)*(ny-1), row-major in i
    double outside = 0.0;
    std::size_t samples = 0;

    void init(const Grid& g) {
        grid = g;
        mass.assign(std::size_t(g.nx - 1) * (g.ny - 1), 0.0);
        outside = 0.0;
        samples = 0;
    }

    void add(double x, double y) {
        ++samples;
        if (x < grid.x_min || x > grid.x_max || y < grid.y_min || y > grid.y_max) {
            outside += 1.0;
            return;
        }
        int i, j;
        double fx, fy;
        grid.locate(x, y, i, j, fx, fy);
        mass[std::size_t(j) * (grid.nx - 1) + i] += 1.0;
    }

    void normalize() {
        if (samples == 0) return;
        for (double& m : mass) m /= double(samples);
        outside /= double(samples);
    }
};

} // namespace harvest
