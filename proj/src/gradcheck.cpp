#include "faircc/gradcheck.hpp"

#include <cmath>

#include "faircc/errors.hpp"

namespace faircc {

GradCheckResult finite_diff_check(const ScalarFn& fn, std::span<const double> point,
                                  std::span<const double> analytic_grad, double step) {
    if (point.size() != analytic_grad.size())
        throw ContractError("finite_diff_check: gradient length mismatch");
    if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");

    std::vector<double> x(point.begin(), point.end());
    GradCheckResult res;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double fp = fn(x);
        x[i] = saved - step;
        const double fm = fn(x);
        x[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic_grad[i] - numeric) / std::max(1e-12, std::abs(numeric));
        if (err >= res.max_rel_err) {
            res.max_rel_err = err;
            res.worst_index = i;
            res.analytic_at_worst = analytic_grad[i];
            res.numeric_at_worst = numeric;
        }
    }
    return res;
}

}  // namespace faircc
