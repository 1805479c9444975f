#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "faircc/clustering.hpp"
#include "faircc/grammar.hpp"
#include "faircc/graph.hpp"
#include "faircc/losses.hpp"
#include "faircc/metrics.hpp"
#include "faircc/stream.hpp"

namespace faircc {

// Small trainable stand-in for the segmentation backbone: a two-layer MLP
// feature extractor plus a linear classifier over the known classes and a
// background slot (slot 0). The head grows as classes arrive.
struct ExtractorConfig {
    int input_dim = 24;
    int hidden = 32;
    int feature_dim = 16;
    std::uint64_t seed = 11;
};

class Extractor {
  public:
    explicit Extractor(const ExtractorConfig& cfg);

    Var features(Graph& g, Binder& binder, Var inputs) const;
    Var class_logits(Graph& g, Binder& binder, Var feats) const;
    Tensor extract(const Tensor& inputs) const;  // no-grad forward
    Tensor classify(const Tensor& feats) const;  // no-grad logits

    void add_classes(std::span<const int> classes, Rng& rng);
    int slot_of_class(int cls) const;  // -1 when unknown
    int class_of_slot(int slot) const; // kBackgroundLabel for slot 0
    int n_slots() const { return 1 + static_cast<int>(slot_class_.size()); }
    int feature_dim() const { return cfg_.feature_dim; }

    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    void save(std::ostream& os) const;
    void save_file(const std::string& path) const;

  private:
    ExtractorConfig cfg_;
    Tensor w1_, b1_, w2_, b2_;
    Tensor head_w_;  // feature_dim x n_slots
    Tensor head_b_;  // n_slots
    std::vector<int> slot_class_;  // slot i+1 -> class id

    // binder() caches need mutable access; Extractor itself is logically
    // const during forward passes.
    friend class Simulation;
};

enum class LossMode { vanilla, fairness };
enum class AssignMode { nearest, fixed_grammar, adaptive_grammar };

struct SimConfig {
    StreamConfig stream;
    int hidden = 32;
    int feature_dim = 16;

    LossMode loss_mode = LossMode::fairness;
    AssignMode assign_mode = AssignMode::adaptive_grammar;
    bool ce_only = false;
    double alpha = 0.05;
    ObjectiveConfig objective;  // lambda_cl, lambda_c, margin, normalization

    int batch = 16;
    int epochs_first = 10;
    int epochs_later = 6;
    double lr_first = 1e-4;
    double lr_later = 5e-5;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    // Global L2 clip on the per-batch gradient; the saturated dot-product
    // losses are locally very steep. 0 disables.
    double grad_clip = 10.0;

    StorePolicy policy;  // K, eta, buffer capacity
    double dbscan_eps = 5.0;
    int dbscan_min_pts = 8;

    GrammarHyper grammar;          // simulation-scale grammar dimensions
    GrammarTrainConfig grammar_train;
    int eval_points = 1600;
};

std::string to_string(LossMode mode);
std::string to_string(AssignMode mode);

// One continual run: owns the extractor, cluster store and (optionally) the
// grammar model, and executes the per-step procedure: extract features,
// initialize new known clusters, discover unknown clusters, train with the
// combined objective, re-extract, retrain the grammar (adaptive mode only).
class Simulation {
  public:
    Simulation(const SimConfig& cfg, std::optional<GrammarModel> pretrained);

    MetricsRecord run_step(const StepDataset& train, const StepDataset& eval);
    std::vector<MetricsRecord> run();  // generates streams and runs all steps

    const ClusterStore& store() const { return store_; }
    ClusterStore& store() { return store_; }
    const Extractor& extractor() const { return *extractor_; }
    const GrammarModel* grammar() const { return grammar_ ? &*grammar_ : nullptr; }
    GrammarModel* grammar() { return grammar_ ? &*grammar_ : nullptr; }
    const SimConfig& config() const { return cfg_; }
    const std::vector<int>& learned_classes() const { return learned_classes_; }
    // Mean combined objective per epoch of the most recent step.
    const std::vector<double>& last_epoch_losses() const { return epoch_losses_; }

  private:

    void assign_pool(const Tensor& feats, std::span<const int> labels, int step,
                     std::vector<int>& cluster_of, std::vector<int>& ce_target);
    MetricsRecord evaluate(const StepDataset& eval, int step, const std::vector<int>& old_classes,
                           const std::vector<int>& new_classes);

    SimConfig cfg_;
    std::unique_ptr<Extractor> extractor_;
    ClusterStore store_;
    std::optional<GrammarModel> grammar_;
    Sgd model_opt_;
    Sgd grammar_opt_;
    Rng run_rng_;
    long optimizer_steps_ = 0;
    int current_step_ = 0;
    std::vector<int> learned_classes_;
    std::map<int, long> class_totals_;
    std::vector<double> epoch_losses_;
};

// Benchmark driver: runs one configuration, optionally mirroring everything
// into a run directory (effective config, per-step store and grammar
// snapshots, metrics.jsonl, summary.csv).
struct BenchmarkResult {
    std::vector<MetricsRecord> records;
    double final_miou_all = 0.0;
    double final_miou_minor = 0.0;
    double final_enforcement_std = 0.0;
    double final_unknown_rand_index = -1.0;
};

BenchmarkResult run_benchmark(const SimConfig& cfg, std::optional<GrammarModel> pretrained,
                              const std::string& out_dir = "",
                              const std::string& config_echo = "");

}  // namespace faircc
