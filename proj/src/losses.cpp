#include "faircc/losses.hpp"

#include <algorithm>
#include <cmath>

#include "faircc/errors.hpp"

namespace faircc {

namespace {

// Stable softmax weights of `logits`, shared by the plain-double paths.
std::vector<double> softmax_weights(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    std::vector<double> w(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        w[i] = std::exp(logits[i] - m);
        s += w[i];
    }
    for (double& v : w) v /= s;
    return w;
}

void check_feature_dims(const Tensor& c, const Tensor& candidates) {
    if (candidates.rank() != 2) throw DimensionError("candidates must be a (N,D) matrix");
    if (c.rank() != 1 || c.dim(0) != candidates.cols())
        throw DimensionError("centroid dimension does not match candidates");
}

}  // namespace

std::vector<double> enforcement_all(const Tensor& c, const Tensor& candidates) {
    check_feature_dims(c, candidates);
    const int n = candidates.rows();
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) logits[static_cast<std::size_t>(i)] = dense::dot(candidates.row(i), c.values());
    return softmax_weights(logits);
}

double enforcement(const Tensor& f, const Tensor& c, const Tensor& candidates) {
    check_feature_dims(c, candidates);
    if (candidates.rows() == 0) throw ContractError("enforcement: empty candidate set");
    if (f.rank() != 1 || f.dim(0) != candidates.cols())
        throw DimensionError("enforcement: feature dimension mismatch");
    int row = -1;
    for (int i = 0; i < candidates.rows(); ++i) {
        if (std::equal(f.values().begin(), f.values().end(), candidates.row(i).begin())) {
            row = i;
            break;
        }
    }
    if (row < 0) throw ContractError("enforcement: feature is not among the candidates");
    return enforcement_all(c, candidates)[static_cast<std::size_t>(row)];
}

Var contrastive_cluster_loss(Graph& g, Var candidates, std::span<const int> assigned, Var centroid,
                             bool normalize) {
    check_feature_dims(g.value(centroid), g.value(candidates));
    if (assigned.empty()) return g.scalar_const(0.0);
    const int n = g.value(candidates).rows();
    for (int i : assigned)
        if (i < 0 || i >= n) throw ContractError("contrastive_cluster_loss: assigned row out of range");

    const Var logits = g.matvec(candidates, centroid);
    const Var lse = g.logsumexp(logits);
    const Var picked = g.gather(logits, std::vector<int>(assigned.begin(), assigned.end()));
    const double l = static_cast<double>(assigned.size());
    // -sum_i log l_i  ==  L*lse - sum_i logit_i
    Var loss = g.sub(g.scale(lse, l), g.sum(picked));
    if (normalize) loss = g.scale(loss, 1.0 / l);
    return loss;
}

Var fairness_cluster_loss(Graph& g, Var candidates, std::span<const int> assigned, Var centroid,
                          Var transition, double alpha, bool normalize) {
    if (alpha <= 0.0) throw ConfigError("fairness_cluster_loss: alpha must be positive");
    const Tensor& tc = g.value(centroid);
    check_feature_dims(tc, g.value(candidates));
    if (g.value(transition).rank() != 1 || g.value(transition).dim(0) != tc.dim(0))
        throw DimensionError("fairness_cluster_loss: transition vector dimension mismatch");
    const int n = g.value(candidates).rows();
    for (int i : assigned)
        if (i < 0 || i >= n) throw ContractError("fairness_cluster_loss: assigned row out of range");

    // Shared denominator over the batch candidates plus this cluster's
    // transition vector; the transition logit sits at index n.
    const Var cand_logits = g.matvec(candidates, centroid);
    const Var v_logit = g.dot(transition, centroid);
    const Var logits = g.concat({cand_logits, v_logit});
    const Var lse = g.logsumexp(logits);

    const Var v_term = g.sub(lse, g.pick(logits, n));  // -log l_v
    if (assigned.empty()) return v_term;

    const Var picked = g.gather(logits, std::vector<int>(assigned.begin(), assigned.end()));
    const double l = static_cast<double>(assigned.size());
    Var data_term = g.sub(g.scale(lse, l), g.sum(picked));
    if (normalize) data_term = g.scale(data_term, 1.0 / l);
    return g.add(g.scale(data_term, alpha), v_term);
}

Var cluster_regularizer(Graph& g, std::span<const Var> centroids, double margin) {
    if (centroids.empty()) throw ContractError("cluster_regularizer: need at least one centroid");
    if (margin <= 0.0) throw ConfigError("cluster_regularizer: margin must be positive");
    Var total = g.scalar_const(0.0);
    for (std::size_t i = 0; i < centroids.size(); ++i) {
        for (std::size_t j = i + 1; j < centroids.size(); ++j) {
            const Var diff = g.sub(centroids[i], centroids[j]);
            const Var dist = g.sqrt_safe(g.dot(diff, diff));
            const Var hinge = g.relu(g.sub(g.scalar_const(2.0 * margin), dist));
            total = g.add(total, g.square(hinge));
        }
    }
    return total;
}

Var cross_entropy(Graph& g, Var logits, int target) {
    const Tensor& tl = g.value(logits);
    if (tl.rank() != 1) throw DimensionError("cross_entropy: logits must be 1-D");
    if (target < 0 || target >= tl.dim(0))
        throw ContractError("cross_entropy: target class out of range");
    return g.neg(g.pick(g.log_softmax(logits), target));
}

Var cross_entropy_mean(Graph& g, Var logits, std::span<const int> targets) {
    const Tensor& tl = g.value(logits);
    if (tl.rank() != 2) throw DimensionError("cross_entropy_mean: logits must be 2-D");
    if (static_cast<int>(targets.size()) != tl.rows())
        throw DimensionError("cross_entropy_mean: one target per row required");
    std::vector<int> flat_index;  // row-major position of each included target
    for (int i = 0; i < tl.rows(); ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0) continue;
        if (t >= tl.cols()) throw ContractError("cross_entropy_mean: target class out of range");
        flat_index.push_back(i * tl.cols() + t);
    }
    if (flat_index.empty()) return g.scalar_const(0.0);
    const Var logp = g.log_softmax(logits);
    std::vector<Var> picks;
    picks.reserve(flat_index.size());
    for (int fi : flat_index) picks.push_back(g.pick(logp, fi));
    const Var picked = picks.size() == 1 ? picks[0] : g.sum(g.concat(picks));
    return g.scale(g.neg(picked), 1.0 / static_cast<double>(flat_index.size()));
}

Var total_objective(Graph& g, Var ce, std::span<const Var> clustering_terms, Var regularizer,
                    const ObjectiveConfig& cfg) {
    if (cfg.lambda_cl < 0.0 || cfg.lambda_c < 0.0)
        throw ConfigError("total_objective: loss weights must be non-negative");
    Var total = ce;
    if (!clustering_terms.empty() && cfg.lambda_cl != 0.0) {
        Var cl = clustering_terms[0];
        for (std::size_t i = 1; i < clustering_terms.size(); ++i)
            cl = g.add(cl, clustering_terms[i]);
        total = g.add(total, g.scale(cl, cfg.lambda_cl));
    }
    if (regularizer.valid() && cfg.lambda_c != 0.0)
        total = g.add(total, g.scale(regularizer, cfg.lambda_c));
    return total;
}

}  // namespace faircc
