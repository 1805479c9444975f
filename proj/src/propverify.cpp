#include "faircc/propverify.hpp"

#include <algorithm>
#include <cmath>

#include "faircc/errors.hpp"
#include "faircc/rng.hpp"
#include "faircc/tensor.hpp"

namespace faircc {

namespace {

// Minimizes f(theta) = scale * [ -sum_k w_k log softmax(theta)_k ] by plain
// gradient descent. The gradient is scale * (sum(w) * p - w); with step
// 1/(scale*sum(w)) the descent lemma applies, so the objective trace is
// non-increasing. The optimum is p_k = w_k / sum(w) regardless of `scale`.
SimplexSolution minimize_weighted_nll(const std::vector<double>& weights, double scale,
                                      int max_iters, double tol) {
    const std::size_t n = weights.size();
    double wsum = 0.0;
    for (double w : weights) wsum += w;

    std::vector<double> theta(n, 0.0);
    std::vector<double> p(n);
    std::vector<double> grad(n);
    const double step = 1.0 / (scale * wsum);

    SimplexSolution sol;
    sol.objective_trace.reserve(256);

    auto eval = [&]() {
        const double m = *std::max_element(theta.begin(), theta.end());
        double z = 0.0;
        for (std::size_t k = 0; k < n; ++k) z += std::exp(theta[k] - m);
        const double lse = m + std::log(z);
        double obj = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            p[k] = std::exp(theta[k] - lse);
            obj -= weights[k] * (theta[k] - lse);
        }
        return scale * obj;
    };

    double obj = eval();
    int it = 0;
    for (; it < max_iters; ++it) {
        sol.objective_trace.push_back(obj);
        double gnorm2 = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            grad[k] = scale * (wsum * p[k] - weights[k]);
            gnorm2 += grad[k] * grad[k];
        }
        sol.grad_norm = std::sqrt(gnorm2);
        if (sol.grad_norm <= tol) {
            sol.converged = true;
            break;
        }
        for (std::size_t k = 0; k < n; ++k) theta[k] -= step * grad[k];
        obj = eval();
    }
    sol.iterations = it;
    sol.enforcement = p;
    return sol;
}

}  // namespace

SimplexSolution verify_prop1(int l, int max_iters, double tol, bool normalize) {
    if (l < 1) throw ContractError("verify_prop1: L must be at least 1");
    const std::vector<double> weights(static_cast<std::size_t>(l), 1.0);
    const double scale = normalize ? 1.0 / static_cast<double>(l) : 1.0;
    SimplexSolution sol = minimize_weighted_nll(weights, scale, max_iters, tol);
    const double target = 1.0 / static_cast<double>(l);
    for (double li : sol.enforcement) sol.max_dev = std::max(sol.max_dev, std::abs(li - target));
    return sol;
}

SimplexSolution verify_prop2(int l, double alpha, int max_iters, double tol, bool normalize) {
    if (l < 1) throw ContractError("verify_prop2: L must be at least 1");
    if (alpha <= 0.0) throw ConfigError("verify_prop2: alpha must be positive");
    std::vector<double> weights(static_cast<std::size_t>(l) + 1, alpha);
    weights.back() = 1.0;  // the transition-vector slot
    const double scale = normalize ? 1.0 / static_cast<double>(l) : 1.0;
    SimplexSolution sol = minimize_weighted_nll(weights, scale, max_iters, tol);

    sol.enforcement_v = sol.enforcement.back();
    sol.enforcement.pop_back();
    const double target_i = alpha / (1.0 + alpha * l);  // == (alpha^-1 + L)^-1
    const double target_v = 1.0 / (1.0 + alpha * l);
    for (double li : sol.enforcement) sol.max_dev = std::max(sol.max_dev, std::abs(li - target_i));
    sol.max_dev_v = std::abs(sol.enforcement_v - target_v);
    return sol;
}

GapResult enforcement_gap(double alpha, long l_major, long l_minor) {
    if (alpha <= 0.0) throw ConfigError("enforcement_gap: alpha must be positive");
    if (l_minor < 1 || l_major < l_minor)
        throw ContractError("enforcement_gap: need L_major >= L_minor >= 1");
    GapResult r;
    const double inv_a = 1.0 / alpha;
    r.fair_gap = std::abs(1.0 / (inv_a + static_cast<double>(l_major)) -
                          1.0 / (inv_a + static_cast<double>(l_minor)));
    r.vanilla_gap = std::abs(1.0 / static_cast<double>(l_major) - 1.0 / static_cast<double>(l_minor));
    r.degenerate = l_major == l_minor;
    r.holds = !r.degenerate && r.fair_gap < r.vanilla_gap;
    return r;
}

double kd_upper_bound_check(int n_trials, int dim, std::uint64_t seed) {
    if (n_trials < 1) throw ContractError("kd_upper_bound_check: need at least one trial");
    if (dim < 1) throw ConfigError("kd_upper_bound_check: dimension must be positive");
    Rng rng(seed);
    double worst = -1e300;
    for (int trial = 0; trial < n_trials; ++trial) {
        const int n = rng.uniform_int(2, 40);
        const int n_centroids = rng.uniform_int(1, 12);
        const double spread = rng.uniform(0.1, 20.0);
        const Tensor cur = Tensor::randn({n, dim}, rng, spread);
        const Tensor prev = Tensor::randn({n, dim}, rng, spread);
        const Tensor centroids = Tensor::randn({n_centroids, dim}, rng, spread);

        double lhs = 0.0;
        for (int i = 0; i < n; ++i) lhs += dense::distance(cur.row(i), prev.row(i));
        lhs /= n;

        double rhs = 0.0;
        for (int c = 0; c < n_centroids; ++c) {
            double to_c = 0.0, from_c = 0.0;
            for (int i = 0; i < n; ++i) {
                to_c += dense::distance(cur.row(i), centroids.row(c));
                from_c += dense::distance(centroids.row(c), prev.row(i));
            }
            rhs += (to_c + from_c) / n;
        }
        rhs /= n_centroids;
        worst = std::max(worst, lhs - rhs);
    }
    return worst;
}

}  // namespace faircc
