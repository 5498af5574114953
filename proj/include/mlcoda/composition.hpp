#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mlcoda {

/// Relative tolerance on the sum-to-total constraint.
inline constexpr double kTotalTolerance = 1e-9;

/**
 * A D-part composition: strictly positive parts summing to `total()`.
 *
 * Part order is significant. The total is carried as metadata so that every
 * operation returns results on the caller's scale (minutes, hours, ...).
 */
class Composition {
public:
    /// Validates without rescaling. Throws DataError if a part is not
    /// finite and positive, or if the parts do not sum to `total`.
    Composition(std::vector<double> parts, double total);

    std::size_t size() const noexcept { return parts_.size(); }
    double total() const noexcept { return total_; }
    double operator[](std::size_t d) const { return parts_[d]; }
    std::span<const double> parts() const noexcept { return parts_; }

private:
    std::vector<double> parts_;
    double total_;
};

/// Rescale positive values so they sum to `total`. Zeros are rejected, never imputed.
Composition closure(std::span<const double> raw, double total);

/// Composition with all parts equal to total / D.
Composition neutral(std::size_t parts, double total);

/// Closed element-wise product.
Composition perturb(const Composition& x, const Composition& y);

/// Closed element-wise reciprocal, the perturbation inverse of `x`.
Composition opposite(const Composition& x);

/// Closed element-wise power.
Composition power(const Composition& x, double alpha);

/// Aitchison inner product, computed through centred log-ratios.
double inner_product(const Composition& x, const Composition& y);

/// Aitchison norm.
double norm(const Composition& x);

/// Closure of the per-part geometric means of `xs`.
Composition geometric_mean_composition(std::span<const Composition> xs);

namespace detail {

/// Centred log-ratio of `x`. Internal helper; not part of the public transform set.
std::vector<double> clr(const Composition& x);

/// The pairwise log-ratio form of the inner product, (1/D) sum_{d<d'} ln(x_d/x_d') ln(y_d/y_d').
double inner_product_pairwise(const Composition& x, const Composition& y);

void require_compatible(const Composition& x, const Composition& y);

}  // namespace detail

}  // namespace mlcoda
