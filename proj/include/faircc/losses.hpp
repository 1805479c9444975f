#pragma once

#include <span>
#include <vector>

#include "faircc/graph.hpp"
#include "faircc/tensor.hpp"

namespace faircc {

// Per-cluster fairness parameters: one shared scaling factor and a trainable
// transition vector per cluster. The transition vector receives gradient
// updates; frozen cluster centers do not.
struct FairnessParams {
    double alpha = 0.05;
};

// Weights of the combined objective. `margin` is the half-separation target
// of the cluster regularizer (the hinge fires below 2*margin).
struct ObjectiveConfig {
    double lambda_cl = 1.0;
    double lambda_c = 1.0;
    double margin = 10.0;
    bool normalize_per_cluster = true;
};

// Softmax weight between feature `f` and centroid `c` over the candidate set,
// computed with a max shift. `f` must be one of the candidate rows.
double enforcement(const Tensor& f, const Tensor& c, const Tensor& candidates);

// Enforcement of every candidate row against `c` in one pass (plain doubles,
// no graph); used by the evaluation metrics.
std::vector<double> enforcement_all(const Tensor& c, const Tensor& candidates);

// -sum_{i in assigned} log softmax(candidates . c)[i], optionally divided by
// |assigned|. Empty `assigned` contributes exactly zero.
Var contrastive_cluster_loss(Graph& g, Var candidates, std::span<const int> assigned, Var centroid,
                             bool normalize);

// Fairness variant: the candidate set is augmented with the cluster's
// transition vector, the data term is scaled by alpha (and optionally divided
// by |assigned|), and the transition vector contributes its own log term.
Var fairness_cluster_loss(Graph& g, Var candidates, std::span<const int> assigned, Var centroid,
                          Var transition, double alpha, bool normalize);

// sum over unordered pairs of {max(0, 2*margin - ||ci - cj||)}^2.
Var cluster_regularizer(Graph& g, std::span<const Var> centroids, double margin);

// -log softmax(logits)[target].
Var cross_entropy(Graph& g, Var logits, int target);

// Mean cross-entropy over the rows of a logit matrix; rows whose target is
// negative are excluded. Returns zero if nothing is included.
Var cross_entropy_mean(Graph& g, Var logits, std::span<const int> targets);

// ce + lambda_cl * sum(clustering_terms) + lambda_c * regularizer.
Var total_objective(Graph& g, Var ce, std::span<const Var> clustering_terms, Var regularizer,
                    const ObjectiveConfig& cfg);

}  // namespace faircc
