#pragma once

#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faircc/tensor.hpp"

namespace faircc {

// A prototype vector. Known centroids carry the class they represent; unknown
// ones are discovered by density clustering. Once frozen, the vector (and its
// transition vector) is immutable for the rest of the run.
struct Centroid {
    int id = -1;
    Tensor vec;
    bool known = false;
    bool frozen = false;
    int class_index = -1;  // known centroids only
    Tensor transition;     // trainable v, same dimension as vec
};

struct StorePolicy {
    int update_period = 100;     // momentum update every K optimizer steps
    double momentum = 0.99;      // eta
    int buffer_capacity = 500;   // B
    bool update_all_each_step = false;  // domain-incremental mode: ignore frozen flags
};

// Id-indexed centroid collection with per-centroid FIFO feature buffers and
// the periodic momentum update. Single-writer; ids are never reused.
class ClusterStore {
  public:
    explicit ClusterStore(int dim, StorePolicy policy = {});

    int dim() const { return dim_; }
    const StorePolicy& policy() const { return policy_; }
    StorePolicy& policy() { return policy_; }

    int add_known(const Tensor& vec, int class_index);
    int add_unknown(const Tensor& vec);
    void remove(int id);
    bool contains(int id) const { return centroids_.count(id) > 0; }

    Centroid& centroid(int id);
    const Centroid& centroid(int id) const;
    const std::map<int, Centroid>& centroids() const { return centroids_; }
    std::size_t size() const { return centroids_.size(); }
    bool empty() const { return centroids_.empty(); }

    std::vector<int> ids() const;
    std::vector<int> known_ids() const;
    std::vector<int> unknown_ids() const;
    // Known centroid id for a class, or -1.
    int id_of_class(int class_index) const;

    // FIFO feature buffer, capacity policy().buffer_capacity.
    void push_feature(int id, std::span<const double> feature);
    const std::deque<std::vector<double>>& buffer(int id) const;

    // Every update_period-th step, pulls each updatable centroid toward its
    // buffer mean: vec <- eta*vec + (1-eta)*mean(buffer). Frozen centroids are
    // untouched unless the domain-incremental flag is set. Buffers persist.
    void momentum_update(long step_counter);

    // Freezes the known centroids of the listed classes.
    void freeze_classes(std::span<const int> classes);

    // Round-trip exact serialization (doubles stored as raw bytes).
    void save(std::ostream& os) const;
    static ClusterStore load(std::istream& is);
    void save_file(const std::string& path) const;
    static ClusterStore load_file(const std::string& path);

  private:
    int dim_;
    StorePolicy policy_;
    int next_id_ = 0;
    std::map<int, Centroid> centroids_;
    std::map<int, std::deque<std::vector<double>>> buffers_;
};

// Id of the closest centroid by Euclidean distance; ties break to the lowest
// id. Throws ContractError on an empty store.
int nearest_cluster_assign(const Tensor& f, const ClusterStore& store);
int nearest_cluster_assign(std::span<const double> f, const ClusterStore& store);

// Density-based clustering. Returns one label per point: cluster ids are
// consecutive from 0 in order of their lowest-index core point, noise is -1.
// Core points need at least min_pts neighbors within eps (self included);
// clusters are the connected components of core points; border points attach
// to their nearest core (ties to the lower point index).
std::vector<int> dbscan(const Tensor& points, double eps, int min_pts);

struct UnknownInitResult {
    std::vector<int> new_ids;
    int dbscan_clusters = 0;
    int merges = 0;
    int dropped_near_existing = 0;
    bool over_estimate = false;  // more new clusters than 1.5x the remaining-class estimate
};

// Initializes unknown centroids from the DBSCAN cluster means of background
// features: iteratively merges the closest pair of new means while their
// distance is below 2*margin (merged mean = midpoint), drops candidates that
// fall within 2*margin of an existing unknown centroid, and reports (without
// enforcing) when the count exceeds 1.5x remaining_class_estimate.
UnknownInitResult init_unknown_clusters(ClusterStore& store, const Tensor& background_feats,
                                        double eps, int min_pts, double margin,
                                        int remaining_class_estimate = -1);

// One known centroid per class at the mean of its features.
std::vector<int> init_known_clusters(ClusterStore& store,
                                     const std::map<int, Tensor>& feats_by_class);

}  // namespace faircc
