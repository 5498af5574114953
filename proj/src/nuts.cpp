#include "mlcoda/nuts.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "mlcoda/errors.hpp"

namespace mlcoda::nuts {

namespace {

constexpr double kMaxEnergyError = 1000.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct PhasePoint {
    Eigen::VectorXd q;
    Eigen::VectorXd p;
    Eigen::VectorXd grad;  // gradient of log density
    double log_density = 0.0;
};

class Integrator {
public:
    Integrator(const LogDensity& target, const Eigen::VectorXd& inverse_metric)
        : target_(target), inv_metric_(inverse_metric) {}

    void evaluate(PhasePoint& z) const {
        z.log_density = target_(z.q, z.grad);
        if (!std::isfinite(z.log_density) || !z.grad.allFinite()) {
            z.log_density = -kInf;
        }
    }

    double kinetic(const PhasePoint& z) const {
        return 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p));
    }

    double hamiltonian(const PhasePoint& z) const {
        return -z.log_density + kinetic(z);
    }

    Eigen::VectorXd velocity(const PhasePoint& z) const {
        return inv_metric_.cwiseProduct(z.p);
    }

    void leapfrog(PhasePoint& z, double eps) const {
        z.p += 0.5 * eps * z.grad;
        z.q += eps * inv_metric_.cwiseProduct(z.p);
        evaluate(z);
        if (z.log_density == -kInf) {
            return;
        }
        z.p += 0.5 * eps * z.grad;
    }

    void sample_momentum(PhasePoint& z, std::mt19937_64& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index i = 0; i < z.p.size(); ++i) {
            z.p(i) = normal(rng) / std::sqrt(inv_metric_(i));
        }
    }

private:
    const LogDensity& target_;
    const Eigen::VectorXd& inv_metric_;
};

bool no_u_turn(const Eigen::VectorXd& v_minus, const Eigen::VectorXd& v_plus,
               const Eigen::VectorXd& rho) {
    return v_minus.dot(rho) > 0 && v_plus.dot(rho) > 0;
}

class Transition {
public:
    Transition(const Integrator& integrator, std::mt19937_64& rng, double step_size, int max_depth)
        : integ_(integrator), rng_(rng), step_size_(step_size), max_depth_(max_depth) {}

    struct Result {
        PhasePoint sample;
        double accept_stat = 0.0;
        int depth = 0;
        int leapfrogs = 0;
        bool divergent = false;
    };

    Result run(const PhasePoint& start) {
        Result res;
        PhasePoint z = start;
        integ_.sample_momentum(z, rng_);
        const double h0 = integ_.hamiltonian(z);

        PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;

        Eigen::VectorXd p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
        Eigen::VectorXd v_fwd_fwd = integ_.velocity(z);
        Eigen::VectorXd v_fwd_bck = v_fwd_fwd, v_bck_fwd = v_fwd_fwd, v_bck_bck = v_fwd_fwd;
        Eigen::VectorXd rho = z.p;

        double log_sum_weight = 0.0;
        leapfrogs_ = 0;
        sum_metro_ = 0.0;
        divergent_ = false;
        int depth = 0;
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        while (depth < max_depth_) {
            Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(rho.size());
            Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(rho.size());
            double log_sum_weight_subtree = -kInf;
            bool valid = false;

            if (unif(rng_) > 0.5) {
                current_ = z_fwd;
                rho_bck = rho;
                p_bck_fwd = p_fwd_bck;
                v_bck_fwd = v_fwd_bck;
                valid = build_tree(depth, z_propose, v_fwd_bck, v_fwd_fwd, rho_fwd, p_fwd_bck,
                                   p_fwd_fwd, h0, +1.0, log_sum_weight_subtree);
                z_fwd = current_;
            } else {
                current_ = z_bck;
                rho_fwd = rho;
                p_fwd_bck = p_bck_fwd;
                v_fwd_bck = v_bck_fwd;
                valid = build_tree(depth, z_propose, v_bck_fwd, v_bck_bck, rho_bck, p_bck_fwd,
                                   p_bck_bck, h0, -1.0, log_sum_weight_subtree);
                z_bck = current_;
            }
            if (!valid) break;
            ++depth;

            if (log_sum_weight_subtree > log_sum_weight) {
                z_sample = z_propose;
            } else if (unif(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
                z_sample = z_propose;
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

            rho = rho_bck + rho_fwd;
            bool persist = no_u_turn(v_bck_bck, v_fwd_fwd, rho);
            Eigen::VectorXd rho_ext = rho_bck + p_fwd_bck;
            persist = persist && no_u_turn(v_bck_bck, v_fwd_bck, rho_ext);
            rho_ext = rho_fwd + p_bck_fwd;
            persist = persist && no_u_turn(v_bck_fwd, v_fwd_fwd, rho_ext);
            if (!persist) break;
        }

        res.sample = std::move(z_sample);
        res.depth = depth;
        res.leapfrogs = leapfrogs_;
        res.accept_stat = leapfrogs_ > 0 ? sum_metro_ / leapfrogs_ : 0.0;
        res.divergent = divergent_;
        return res;
    }

private:
    bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& v_beg,
                    Eigen::VectorXd& v_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                    Eigen::VectorXd& p_end, double h0, double sign, double& log_sum_weight) {
        if (depth == 0) {
            integ_.leapfrog(current_, sign * step_size_);
            ++leapfrogs_;
            double h = current_.log_density == -kInf ? kInf : integ_.hamiltonian(current_);
            if (std::isnan(h)) h = kInf;
            if (h - h0 > kMaxEnergyError) divergent_ = true;
            log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
            sum_metro_ += (h0 - h > 0) ? 1.0 : std::exp(h0 - h);
            z_propose = current_;
            v_beg = integ_.velocity(current_);
            v_end = v_beg;
            rho += current_.p;
            p_beg = current_.p;
            p_end = p_beg;
            return !divergent_;
        }

        double log_sum_weight_init = -kInf;
        Eigen::VectorXd p_init_end(current_.p.size()), v_init_end(current_.p.size());
        Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(rho.size());
        if (!build_tree(depth - 1, z_propose, v_beg, v_init_end, rho_init, p_beg, p_init_end, h0,
                        sign, log_sum_weight_init)) {
            return false;
        }

        PhasePoint z_propose_final = current_;
        double log_sum_weight_final = -kInf;
        Eigen::VectorXd p_final_beg(current_.p.size()), v_final_beg(current_.p.size());
        Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(rho.size());
        if (!build_tree(depth - 1, z_propose_final, v_final_beg, v_end, rho_final, p_final_beg,
                        p_end, h0, sign, log_sum_weight_final)) {
            return false;
        }

        const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
        if (log_sum_weight_final > log_sum_weight_subtree) {
            z_propose = z_propose_final;
        } else {
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            if (unif(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
                z_propose = z_propose_final;
            }
        }

        Eigen::VectorXd rho_subtree = rho_init + rho_final;
        rho += rho_subtree;
        bool persist = no_u_turn(v_beg, v_end, rho_subtree);
        Eigen::VectorXd rho_ext = rho_init + p_final_beg;
        persist = persist && no_u_turn(v_beg, v_final_beg, rho_ext);
        rho_ext = rho_final + p_init_end;
        persist = persist && no_u_turn(v_init_end, v_end, rho_ext);
        return persist;
    }

    const Integrator& integ_;
    std::mt19937_64& rng_;
    double step_size_;
    int max_depth_;
    PhasePoint current_;
    int leapfrogs_ = 0;
    double sum_metro_ = 0.0;
    bool divergent_ = false;
};

// Doubles or halves the step size until one leapfrog step crosses an
// acceptance probability of 0.8.
double initial_step_size(const Integrator& integ, const PhasePoint& start, double eps,
                         std::mt19937_64& rng) {
    auto energy_change = [&](double step) {
        PhasePoint z = start;
        integ.sample_momentum(z, rng);
        const double h0 = integ.hamiltonian(z);
        integ.leapfrog(z, step);
        double h = z.log_density == -kInf ? kInf : integ.hamiltonian(z);
        if (std::isnan(h)) h = kInf;
        return h0 - h;
    };
    const double threshold = std::log(0.8);
    const int direction = energy_change(eps) > threshold ? 1 : -1;
    for (int guard = 0; guard < 200; ++guard) {
        const double delta = energy_change(eps);
        if (direction == 1 && !(delta > threshold)) break;
        if (direction == -1 && !(delta < threshold)) break;
        eps = direction == 1 ? eps * 2.0 : eps * 0.5;
        if (eps > 1e7) throw SamplingError("step size search diverged; posterior may be improper");
        if (eps == 0.0) throw SamplingError("step size collapsed to zero");
    }
    return eps;
}

}  // namespace

void StepSizeAdaptation::restart(double step_size) {
    mu_ = std::log(10.0 * step_size);
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    counter_ = 0.0;
}

double StepSizeAdaptation::learn(double accept_stat) {
    counter_ += 1.0;
    accept_stat = std::min(accept_stat, 1.0);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    const double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
}

double StepSizeAdaptation::final_step_size() const {
    return std::exp(x_bar_);
}

WindowSchedule::WindowSchedule(int warmup) : warmup_(warmup) {
    if (warmup < 20) {
        window_size_ = 0;
        window_end_ = -1;
        return;
    }
    if (init_buffer_ + window_size_ + term_buffer_ > warmup) {
        init_buffer_ = static_cast<int>(0.15 * warmup);
        term_buffer_ = static_cast<int>(0.1 * warmup);
        window_size_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_end_ = init_buffer_ + window_size_ - 1;
}

bool WindowSchedule::in_window(int i) const {
    return window_size_ > 0 && i >= init_buffer_ && i < warmup_ - term_buffer_;
}

bool WindowSchedule::closes_window(int i) const {
    return window_size_ > 0 && i == window_end_;
}

void WindowSchedule::next_window() {
    const int last = warmup_ - term_buffer_ - 1;
    if (window_end_ == last) {
        window_end_ = -1;
        return;
    }
    counter_ = window_end_;
    window_size_ *= 2;
    window_end_ = counter_ + window_size_;
    // Stretch the window to the terminal buffer if the following one would not fit.
    if (window_end_ != last && window_end_ + 2 * window_size_ >= warmup_ - term_buffer_) {
        window_end_ = last;
    }
}

ChainOutput run_chain(const LogDensity& target, Eigen::Index dim, const Settings& settings,
                      const std::optional<Eigen::VectorXd>& init) {
    std::mt19937_64 rng(settings.seed);
    Eigen::VectorXd inv_metric = Eigen::VectorXd::Ones(dim);
    Integrator integ(target, inv_metric);

    PhasePoint z;
    z.p = Eigen::VectorXd::Zero(dim);
    z.grad = Eigen::VectorXd::Zero(dim);
    bool found = false;
    if (init) {
        z.q = *init;
        integ.evaluate(z);
        found = z.log_density > -kInf;
    }
    std::uniform_real_distribution<double> init_dist(-settings.init_radius, settings.init_radius);
    for (int attempt = 0; !found && attempt < settings.init_tries; ++attempt) {
        z.q.resize(dim);
        for (Eigen::Index i = 0; i < dim; ++i) z.q(i) = init_dist(rng);
        integ.evaluate(z);
        found = z.log_density > -kInf;
    }
    if (!found) {
        throw SamplingError("no finite initial value after " +
                            std::to_string(settings.init_tries) + " attempts");
    }

    double eps = initial_step_size(integ, z, 1.0, rng);
    StepSizeAdaptation stepsize(settings.adapt_target);
    stepsize.restart(eps);
    WindowSchedule schedule(settings.warmup);

    // Welford accumulators for the metric window.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim), m2 = Eigen::VectorXd::Zero(dim);
    double window_n = 0.0;

    for (int i = 0; i < settings.warmup; ++i) {
        Transition step(integ, rng, eps, settings.max_depth);
        auto res = step.run(z);
        z = std::move(res.sample);
        eps = stepsize.learn(res.accept_stat);

        if (schedule.in_window(i)) {
            window_n += 1.0;
            Eigen::VectorXd delta = z.q - mean;
            mean += delta / window_n;
            m2 += delta.cwiseProduct(z.q - mean);
        }
        if (schedule.closes_window(i)) {
            schedule.next_window();
            if (window_n > 1.0) {
                Eigen::VectorXd var = m2 / (window_n - 1.0);
                inv_metric = (window_n / (window_n + 5.0)) * var.array() +
                             1e-3 * (5.0 / (window_n + 5.0));
            }
            mean.setZero();
            m2.setZero();
            window_n = 0.0;
            integ.evaluate(z);
            eps = initial_step_size(integ, z, eps, rng);
            stepsize.restart(eps);
        }
    }
    if (settings.warmup > 0) {
        eps = stepsize.final_step_size();
    }

    ChainOutput out;
    out.draws.resize(settings.iterations, dim);
    out.divergent.reserve(static_cast<std::size_t>(settings.iterations));
    for (int i = 0; i < settings.iterations; ++i) {
        Transition step(integ, rng, eps, settings.max_depth);
        auto res = step.run(z);
        z = std::move(res.sample);
        out.draws.row(i) = z.q.transpose();
        out.divergent.push_back(res.divergent ? 1 : 0);
        out.tree_depth.push_back(res.depth);
        out.leapfrog_steps.push_back(res.leapfrogs);
        out.accept_stat.push_back(res.accept_stat);
    }
    out.step_size = eps;
    out.inverse_metric = inv_metric;
    return out;
}

}  // namespace mlcoda::nuts
