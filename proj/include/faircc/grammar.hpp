#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faircc/attention.hpp"
#include "faircc/clustering.hpp"
#include "faircc/graph.hpp"
#include "faircc/rng.hpp"
#include "faircc/tensor.hpp"

namespace faircc {

struct GrammarHyper {
    int blocks = 12;
    int m = 128;      // features per sample
    int dim = 16;     // feature dimension D
    int heads = 4;
    int mlp_width = 0;  // 0 -> 4*dim

    int effective_mlp_width() const { return mlp_width > 0 ? mlp_width : 4 * dim; }
};

// Ordered neighborhood of a center: M delta rows sorted by descending cosine
// between the source feature and the center. When the pool is smaller than M
// the remaining slots are resampled from the pool and flagged as duplicates.
struct GrammarSample {
    Tensor center;                 // D
    Tensor deltas;                 // M x D, delta_i = f_i - c
    std::vector<double> order_key; // M cosines, non-increasing
    std::vector<int> source;       // M indices into the pool
    std::vector<char> duplicate;   // padding re-draws of an earlier source
    std::vector<char> memberships; // optional training labels u_i (empty or M)
};

GrammarSample build_grammar_sample(const Tensor& center, const Tensor& pool, int m, Rng& rng);

// The membership network phi: input LN over [delta_1..delta_M, c] plus a
// positional embedding, a stack of self-attention blocks, and a per-row linear
// projection of the first M rows to membership logits.
class GrammarModel {
  public:
    GrammarHyper hyper;
    Tensor pos;               // (M+1) x D positional embedding
    Tensor in_gain, in_bias;  // input layer norm
    std::vector<MhsaBlockParams> blocks;
    Tensor proj_w;  // D x 1
    Tensor proj_b;  // 1

    static GrammarModel init(const GrammarHyper& hyper, std::uint64_t seed);

    // Membership probabilities (length M) for one sample; pure inference.
    Tensor forward(const GrammarSample& sample) const;
    // Logits as a graph node; parameters enter through the binder so the same
    // code path serves training (bind) and inference (bind_const handled by
    // forward()).
    Var forward_logits(Graph& g, Binder& binder, const GrammarSample& sample);

    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;

    void save(std::ostream& os) const;
    static GrammarModel load(std::istream& is);
    void save_file(const std::string& path) const;
    static GrammarModel load_file(const std::string& path);

    bool bit_equal(const GrammarModel& other) const;
};

struct GrammarTrainConfig {
    int epochs = 3;
    SgdConfig sgd{0.005, 0.9, 1e-5};
    std::uint64_t shuffle_stream = 17;  // rng fork tag for epoch shuffles
};

// Trains phi on the known centroids that have visibly labeled features:
// for each such center, the M closest features of the step's feature pool
// form a sample and u_i says whether feature i carries the center's class
// label. Factorized Bernoulli negative log-likelihood, SGD on Theta.
// Returns the mean per-element NLL of the final epoch.
double train_grammar(GrammarModel& model, const ClusterStore& store, const Tensor& feats,
                     std::span<const int> visible_labels, const GrammarTrainConfig& cfg, Sgd& opt,
                     Rng& rng);

struct AssignResult {
    std::vector<int> cluster_id;   // one per feature, always resolved
    std::vector<char> via_grammar; // false where the nearest-centroid fallback fired
    std::vector<double> probability;  // winning probability (0 for fallback)
};

// Grammar-driven cluster assignment: every centroid scores its M closest
// features; claims above the threshold go to the highest-probability centroid
// and everything unclaimed falls back to the nearest centroid. A null model
// sends every feature through the fallback.
AssignResult assign_via_grammar(const GrammarModel* model, const ClusterStore& store,
                                const Tensor& feats, Rng& rng, double threshold = 0.5);

struct GrammarPretrainConfig {
    GrammarHyper hyper;
    int scenes = 48;
    int clusters_per_scene = 6;
    // Sized against hyper.m so a center's top-M slots mix members and
    // non-members; all-member samples teach nothing.
    int points_per_cluster_min = 50;
    int points_per_cluster_max = 110;
    // Per-scene center scale is drawn from [min, max] so some scenes contain
    // nearly touching clusters and membership cannot be read off the raw
    // delta norm alone.
    double center_scale_min = 5.0;
    double center_scale = 10.0;
    double spread_min = 0.5;
    double spread_max = 2.2;
    // Fraction of clusters placed a short hop from the previous one.
    double adjacent_pair_fraction = 0.25;
    double outlier_fraction = 0.05;
    int epochs = 1;
    SgdConfig sgd{0.005, 0.9, 1e-5};
    std::uint64_t seed = 404;
    int eval_scenes = 12;
};

struct PretrainResult {
    double train_loss = 0.0;     // final-epoch mean NLL
    double eval_accuracy = 0.0;  // thresholded membership accuracy on fresh scenes
};

// Desk-scale stand-in for pretraining phi on an external corpus: clusters are
// drawn from a synthetic mixture family (its own seed stream, distinct from
// any evaluation stream) and the model learns membership from scratch.
PretrainResult pretrain_synthetic(GrammarModel& model, const GrammarPretrainConfig& cfg);

// Scene sampler shared by pretraining and its evaluation; exposed for tests.
struct SyntheticScene {
    Tensor points;
    std::vector<int> cluster_of;  // -1 for outliers
    Tensor centers;               // one row per cluster
};
SyntheticScene sample_scene(const GrammarPretrainConfig& cfg, Rng& rng);

}  // namespace faircc
