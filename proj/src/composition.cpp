#include "mlcoda/composition.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "mlcoda/errors.hpp"

namespace mlcoda {

namespace {

void require_positive_parts(std::span<const double> parts) {
    for (std::size_t d = 0; d < parts.size(); ++d) {
        if (!std::isfinite(parts[d]) || parts[d] <= 0.0) {
            std::ostringstream msg;
            msg << "part " << d + 1 << " is " << parts[d]
                << "; compositions need finite, strictly positive parts";
            throw DataError(msg.str());
        }
    }
}

void require_total(double total) {
    if (!std::isfinite(total) || total <= 0.0) {
        throw DataError("composition total must be finite and positive");
    }
}

}  // namespace

Composition::Composition(std::vector<double> parts, double total)
    : parts_(std::move(parts)), total_(total) {
    require_total(total_);
    if (parts_.size() < 2) {
        throw ShapeError("a composition needs at least 2 parts");
    }
    require_positive_parts(parts_);
    double sum = std::accumulate(parts_.begin(), parts_.end(), 0.0);
    if (std::abs(sum - total_) > kTotalTolerance * total_) {
        std::ostringstream msg;
        msg.precision(12);
        msg << "parts sum to " << sum << ", expected " << total_;
        throw DataError(msg.str());
    }
}

Composition closure(std::span<const double> raw, double total) {
    require_total(total);
    if (raw.empty()) {
        throw ShapeError("cannot close an empty vector");
    }
    require_positive_parts(raw);
    double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (!std::isfinite(sum)) {
        throw DataError("parts overflow when summed");
    }
    std::vector<double> out(raw.begin(), raw.end());
    for (auto& v : out) {
        v = v / sum * total;
    }
    return Composition(std::move(out), total);
}

Composition neutral(std::size_t parts, double total) {
    return Composition(std::vector<double>(parts, total / static_cast<double>(parts)), total);
}

namespace detail {

void require_compatible(const Composition& x, const Composition& y) {
    if (x.size() != y.size()) {
        throw ShapeError("compositions have different numbers of parts");
    }
    if (std::abs(x.total() - y.total()) > kTotalTolerance * x.total()) {
        throw ShapeError("compositions have different totals");
    }
}

std::vector<double> clr(const Composition& x) {
    std::vector<double> out(x.size());
    double mean_log = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        out[d] = std::log(x[d]);
        mean_log += out[d];
    }
    mean_log /= static_cast<double>(x.size());
    for (auto& v : out) {
        v -= mean_log;
    }
    return out;
}

double inner_product_pairwise(const Composition& x, const Composition& y) {
    require_compatible(x, y);
    double acc = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        for (std::size_t e = d + 1; e < x.size(); ++e) {
            acc += std::log(x[d] / x[e]) * std::log(y[d] / y[e]);
        }
    }
    return acc / static_cast<double>(x.size());
}

}  // namespace detail

Composition perturb(const Composition& x, const Composition& y) {
    detail::require_compatible(x, y);
    // Products of parts can underflow for large D; work with a rescaled copy.
    std::vector<double> raw(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) {
        raw[d] = (x[d] / x.total()) * (y[d] / y.total());
    }
    return closure(raw, x.total());
}

Composition opposite(const Composition& x) {
    return power(x, -1.0);
}

Composition power(const Composition& x, double alpha) {
    if (!std::isfinite(alpha)) {
        throw DataError("power exponent must be finite");
    }
    // Exponentiate centred logs so large |alpha| does not overflow.
    auto logs = detail::clr(x);
    double peak = -INFINITY;
    for (auto& v : logs) {
        v *= alpha;
        peak = std::max(peak, v);
    }
    for (auto& v : logs) {
        v = std::exp(v - peak);
    }
    return closure(logs, x.total());
}

double inner_product(const Composition& x, const Composition& y) {
    detail::require_compatible(x, y);
    auto cx = detail::clr(x);
    auto cy = detail::clr(y);
    return std::inner_product(cx.begin(), cx.end(), cy.begin(), 0.0);
}

double norm(const Composition& x) {
    return std::sqrt(inner_product(x, x));
}

Composition geometric_mean_composition(std::span<const Composition> xs) {
    if (xs.empty()) {
        throw ShapeError("geometric mean of an empty set of compositions");
    }
    const auto& first = xs.front();
    std::vector<double> mean_log(first.size(), 0.0);
    for (const auto& x : xs) {
        detail::require_compatible(first, x);
        for (std::size_t d = 0; d < x.size(); ++d) {
            mean_log[d] += std::log(x[d]);
        }
    }
    double n = static_cast<double>(xs.size());
    double peak = -INFINITY;
    for (auto& v : mean_log) {
        v /= n;
        peak = std::max(peak, v);
    }
    for (auto& v : mean_log) {
        v = std::exp(v - peak);
    }
    return closure(mean_log, first.total());
}

}  // namespace mlcoda
