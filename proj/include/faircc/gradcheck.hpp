#pragma once

#include <functional>
#include <span>
#include <vector>

namespace faircc {

// Scalar-valued function of a flat parameter vector.
using ScalarFn = std::function<double(std::span<const double>)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// Central-difference check of an analytic gradient at `point`:
// max_i |analytic_i - numeric_i| / max(1e-12, |numeric_i|)
// with numeric_i = (f(x + h e_i) - f(x - h e_i)) / 2h.
GradCheckResult finite_diff_check(const ScalarFn& fn, std::span<const double> point,
                                  std::span<const double> analytic_grad, double step = 1e-5);

}  // namespace faircc
