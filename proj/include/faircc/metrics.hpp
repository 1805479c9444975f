#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace faircc {

// Per-step evaluation results. Group means are always recomputable from the
// per-class values plus the listed class groups.
struct MetricsRecord {
    int step = 0;
    std::string variant;
    std::uint64_t seed = 0;

    std::map<int, double> iou;  // per class
    std::map<int, double> acc;
    std::map<int, double> enforcement_mean;  // per class
    double enforcement_std = 0.0;            // std-dev across the class means

    std::vector<int> old_classes;   // learned before this step
    std::vector<int> new_classes;   // introduced at this step
    std::vector<int> major_classes; // by cumulative pixel share

    double miou_old = 0.0, miou_new = 0.0, miou_all = 0.0;
    double macc_old = 0.0, macc_new = 0.0, macc_all = 0.0;
    double miou_major = 0.0, miou_minor = 0.0;

    double unknown_rand_index = -1.0;  // -1 when not evaluated
    std::vector<std::string> warnings;
};

// Confusion-matrix IoU/accuracy per class. `class_sizes` are dataset-level
// pixel counts per class id; the major group is the smallest prefix of
// classes, sorted by descending count, whose cumulative share reaches 75%.
// Classes absent from the ground truth are excluded from every mean.
MetricsRecord compute_metrics(std::span<const int> predicted, std::span<const int> truth,
                              const std::map<int, long>& class_sizes,
                              std::span<const int> old_classes, std::span<const int> new_classes);

// Rand index between two labelings of the same points (pair-counting
// agreement in [0, 1]).
double rand_index(std::span<const int> a, std::span<const int> b);

// Accuracy matrix over learning steps, in the layout of per-step reports:
// one row per step, one column per class group (classes introduced at each
// step) plus "all"; then per-group maximum drop and the final average.
struct ForgettingReport {
    std::vector<std::vector<double>> group_miou;  // [step][group], -1 = not yet learned
    std::vector<double> all_miou;                 // per step
    std::vector<double> max_drop;                 // per group, in IoU points (0-100 scale)
    double final_average = 0.0;                   // mean of all_miou over steps
    double avg_over_final_classes = 0.0;          // mean of final step's group values

    std::string render() const;
};

ForgettingReport forgetting_report(const std::vector<MetricsRecord>& records,
                                   const std::vector<std::vector<int>>& classes_per_step);

}  // namespace faircc
