#pragma once

#include <cstdint>
#include <vector>

namespace faircc {

// Numerical verification of the closed-form optima of the clustering losses
// on the probability simplex, the major/minor enforcement-gap inequality and
// the triangle-inequality bound behind the distillation argument.
//
// The simplex constraint is enforced exactly by optimizing free logits through
// a softmax; plain gradient descent with step 1/sum(weights) descends
// monotonically (the objective is convex and smooth in the logits).

struct SimplexSolution {
    std::vector<double> enforcement;  // l_i, length L
    double enforcement_v = 0.0;       // l_v (prop 2 only)
    double max_dev = 0.0;             // max_i |l_i - analytic target|
    double max_dev_v = 0.0;           // |l_v - analytic target| (prop 2 only)
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;  // recorded every iteration
};

// Minimizes -sum_i log l_i over the simplex and compares with l_i = 1/L.
// `normalize` rescales the whole objective by 1/L (a positive constant), which
// must not move the optimum.
SimplexSolution verify_prop1(int l, int max_iters = 100000, double tol = 1e-8,
                             bool normalize = false);

// Minimizes -alpha*sum_i log l_i - log l_v subject to sum l_i + l_v = 1 and
// compares with l_i = alpha/(1+alpha*L), l_v = 1/(1+alpha*L).
SimplexSolution verify_prop2(int l, double alpha, int max_iters = 100000, double tol = 1e-8,
                             bool normalize = false);

struct GapResult {
    double fair_gap = 0.0;     // |(1/a+Lmaj)^-1 - (1/a+Lmin)^-1|
    double vanilla_gap = 0.0;  // |1/Lmaj - 1/Lmin|
    bool holds = false;        // fair_gap < vanilla_gap, strictly
    bool degenerate = false;   // L_major == L_minor boundary
};

// Closed-form evaluation of the enforcement-gap inequality.
GapResult enforcement_gap(double alpha, long l_major, long l_minor);

// Random instances of the mean-distance triangle inequality
//   mean_i ||f^t_i - f^{t-1}_i|| <= (1/|C|) sum_c [ mean_i ||f^t_i - c||
//                                                 + mean_i ||c - f^{t-1}_i|| ].
// Returns the maximum of (lhs - rhs) over the trials; expected <= 0.
double kd_upper_bound_check(int n_trials, int dim, std::uint64_t seed = 2024);

}  // namespace faircc
