#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace mlcoda::nuts {

/// Returns log p(q) up to a constant and writes its gradient into `grad`.
/// Non-finite return values mark q as outside the support.
using LogDensity = std::function<double(const Eigen::VectorXd& q, Eigen::VectorXd& grad)>;

struct Settings {
    int warmup = 500;
    int iterations = 2500;
    double adapt_target = 0.8;
    int max_depth = 10;
    std::uint64_t seed = 1;
    /// Initial values are drawn uniformly from [-init_radius, init_radius].
    double init_radius = 2.0;
    int init_tries = 100;
};

struct ChainOutput {
    Eigen::MatrixXd draws;  ///< iterations x dim, unconstrained scale
    std::vector<char> divergent;
    std::vector<int> tree_depth;
    std::vector<int> leapfrog_steps;
    std::vector<double> accept_stat;
    double step_size = 0.0;
    Eigen::VectorXd inverse_metric;
};

/// One chain of dynamic HMC with multinomial trajectory sampling. Warmup
/// adapts the step size by dual averaging and a diagonal metric in
/// expanding windows. Throws SamplingError if no finite initial point is
/// found within `init_tries` attempts.
ChainOutput run_chain(const LogDensity& target, Eigen::Index dim, const Settings& settings,
                      const std::optional<Eigen::VectorXd>& init = std::nullopt);

/// Dual-averaging step-size controller.
class StepSizeAdaptation {
public:
    explicit StepSizeAdaptation(double target) : target_(target) {}

    void restart(double step_size);
    /// Feeds one acceptance statistic; returns the next step size.
    double learn(double accept_stat);
    /// Final step size once warmup ends.
    double final_step_size() const;

private:
    double target_;
    double mu_ = 0.0;
    double s_bar_ = 0.0;
    double x_bar_ = 0.0;
    double counter_ = 0.0;
    static constexpr double gamma_ = 0.05;
    static constexpr double t0_ = 10.0;
    static constexpr double kappa_ = 0.75;
};

/// Warmup schedule: fast initial buffer, doubling slow windows, fast terminal buffer.
class WindowSchedule {
public:
    explicit WindowSchedule(int warmup);

    /// True if iteration `i` (0-based) contributes to the metric estimate.
    bool in_window(int i) const;
    /// True if iteration `i` closes a slow window.
    bool closes_window(int i) const;
    /// Advance past a closed window.
    void next_window();

    int init_buffer() const noexcept { return init_buffer_; }
    int term_buffer() const noexcept { return term_buffer_; }

private:
    int warmup_;
    int init_buffer_ = 75;
    int term_buffer_ = 50;
    int window_size_ = 25;
    int window_end_ = 0;
    int counter_ = 0;
};

}  // namespace mlcoda::nuts
