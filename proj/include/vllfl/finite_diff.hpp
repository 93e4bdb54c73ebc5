#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vllfl/errors.hpp"

namespace vllfl {

// Central-difference gradient of a scalar function of a flat vector:
//   g_i = (f(x + h e_i) - f(x - h e_i)) / (2h)
// Used as the independent oracle against analytic gradients.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h) {
    if (!(h > 0.0)) throw domain_error("finite_diff_grad: h must be positive");
    std::vector<double> grad(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        x[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw eval_error("finite_diff_grad: function returned a non-finite value");
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Relative error between two gradient vectors, ||a-b|| / max(||a||, ||b||, tiny).
inline double gradient_rel_error(const std::vector<double>& a,
                                 const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / denom;
}

}  // namespace vllfl
