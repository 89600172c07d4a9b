#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "harvest/csv.hpp"
#include "harvest/model.hpp"
#include "harvest/util.hpp"

namespace harvest {

/// Time-stamped trajectory of either system: sampled states, applied efforts,
/// instantaneous rewards and the running time-average of the reward.
struct PathRecord {
    std::vector<double> times;
    std::vector<State2D> states;
    std::vector<double> controls;
    std::vector<double> rewards;          // reward_rate at the sample
    std::vector<double> running_average;  // cumulative time-average reward

    std::size_t size() const { return times.size(); }

    void append(double t, const State2D& z, double u, double r, double run_avg) {
        times.push_back(t);
        states.push_back(z);
        controls.push_back(u);
        rewards.push_back(r);
        running_average.push_back(run_avg);
    }

    void to_csv(const std::string& path) const {
        CsvWriter w(path);
        w.row({"t", "x", "y", "u", "reward_rate", "running_avg"});
        for (std::size_t k = 0; k < size(); ++k)
            w.row_values({times[k], states[k].x, states[k].y, controls[k], rewards[k],
                          running_average[k]});
    }
};

/// Across-path Monte Carlo estimate of the long-run average reward.
struct RewardEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    int n_paths = 0;
    double t_end = 0.0;
    double burn_in = 0.0;
    double epsilon = 0.0;  // 0 for the limit diffusion
};

/// Streaming recorder used by both integrators: accumulates the exact reward
/// integral at step resolution and records (t, Z(t)) samples on a fixed time
/// stride. Integrators call step() before advancing each step (dt = 0 marks
/// the terminal state).
class PathAccumulator {
  public:
    PathAccumulator(double t_end, double burn_in, double sample_dt, bool keep_record)
        : t_end_(t_end), burn_in_(burn_in), sample_dt_(sample_dt), keep_(keep_record) {}

    void step(double t, double dt, const State2D& z, double u, double r) {
        double run_avg = total_time_ > 0 ? total_.value() / total_time_ : 0.0;
        if (keep_ && t + 1e-12 >= next_sample_) {
            record_.append(t, z, u, r, run_avg);
            while (next_sample_ <= t + 1e-12) next_sample_ += sample_dt_;
        }
        sup_norm2_ = std::max(sup_norm2_, z.x * z.x + z.y * z.y);
        total_.add(r * dt);
        total_time_ += dt;
        if (t + dt > burn_in_) {
            double eff = std::min(dt, t + dt - burn_in_);
            post_.add(r * eff);
            post_time_ += eff;
        }
        last_state_ = z;
        last_run_avg_ = total_time_ > 0 ? total_.value() / total_time_ : 0.0;
    }

    double post_burn_in_average() const {
        return post_time_ > 0 ? post_.value() / post_time_ : 0.0;
    }
    double running_average_at_end() const { return last_run_avg_; }
    double sup_norm2() const { return sup_norm2_; }
    const PathRecord& record() const { return record_; }
    PathRecord&& take_record() { return std::move(record_); }
    const State2D& last_state() const { return last_state_; }

  private:
    double t_end_, burn_in_, sample_dt_;
    bool keep_;
    KahanSum total_, post_;
    double total_time_ = 0.0, post_time_ = 0.0;
    double next_sample_ = 0.0;
    double sup_norm2_ = 0.0;
    PathRecord record_;
    State2D last_state_{};
    double last_run_avg_ = 0.0;
};

} // namespace harvest
