#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "faircc/tensor.hpp"

namespace faircc {

// Label value for everything outside the current step's class set.
inline constexpr int kBackgroundLabel = -1;

// Synthetic imbalanced stream: one Gaussian blob per class in raw input
// space, point counts following a Zipf law over class rank, and per-step
// label collapse of everything outside the step's classes into background.
struct StreamConfig {
    int n_classes = 25;
    int input_dim = 24;
    double zipf_exponent = 1.1;
    int points_per_step = 1200;
    int min_class_points = 8;
    std::string schedule = "10-5";  // base count, then chunk per step
    std::uint64_t seed = 1;
    double separation = 11.0;  // scale of class centers
    double noise = 0.9;        // base within-class spread
    double noise_jitter = 0.25; // per-class multiplier drawn from [1-j, 1+j]
    // Rare classes get proportionally wider blobs: class k's spread gains a
    // factor (1 + ramp * k / (n-1)), so the tail is both small and noisy.
    double noise_rank_ramp = 0.5;
};

struct StepDataset {
    int step = 0;                  // 1-based
    std::vector<int> new_classes;  // C^t
    Tensor inputs;                 // N x input_dim
    std::vector<int> labels;       // class id, or kBackgroundLabel
    std::vector<int> true_labels;  // oracle labels; evaluation only
};

// "10-5" with 25 classes -> {10, 5, 5, 5}. Throws ConfigError when the
// expansion cannot consume n_classes exactly.
std::vector<int> expand_schedule(const std::string& schedule, int n_classes);

// Training stream: byte-deterministic in cfg.seed.
std::vector<StepDataset> generate_stream(const StreamConfig& cfg);

// Evaluation stream over the same class geometry but disjoint random draws;
// `points` sets the per-step sample size.
std::vector<StepDataset> generate_eval_stream(const StreamConfig& cfg, int points);

// Dataset-level pixel counts per class across the whole training stream
// (used for the major/minor split).
std::map<int, long> class_point_totals(const StreamConfig& cfg);

}  // namespace faircc
