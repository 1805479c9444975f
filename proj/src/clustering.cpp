#include "faircc/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "faircc/errors.hpp"

namespace faircc {

namespace {

constexpr char kStoreMagic[9] = "CCSTORE1";

void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw IoError("cluster store: truncated input");
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v;
    read_bytes(is, &v, sizeof(T));
    return v;
}

void write_vec(std::ostream& os, std::span<const double> v) {
    write_pod(os, static_cast<std::int64_t>(v.size()));
    write_bytes(os, v.data(), v.size() * sizeof(double));
}

std::vector<double> read_vec(std::istream& is) {
    const auto n = read_pod<std::int64_t>(is);
    if (n < 0) throw IoError("cluster store: negative length");
    std::vector<double> v(static_cast<std::size_t>(n));
    read_bytes(is, v.data(), v.size() * sizeof(double));
    return v;
}

}  // namespace

ClusterStore::ClusterStore(int dim, StorePolicy policy) : dim_(dim), policy_(policy) {
    if (dim <= 0) throw ConfigError("cluster store: dimension must be positive");
    if (policy.update_period < 1 || policy.buffer_capacity < 1)
        throw ConfigError("cluster store: policy values must be positive");
    if (policy.momentum < 0.0 || policy.momentum > 1.0)
        throw ConfigError("cluster store: momentum must be in [0,1]");
}

int ClusterStore::add_known(const Tensor& vec, int class_index) {
    if (vec.rank() != 1 || vec.dim(0) != dim_) throw DimensionError("add_known: bad vector shape");
    if (class_index < 0) throw ContractError("add_known: known centroids need a class index");
    if (id_of_class(class_index) >= 0)
        throw ContractError("add_known: class already has a centroid");
    Centroid c;
    c.id = next_id_++;
    c.vec = vec;
    c.known = true;
    c.class_index = class_index;
    c.transition = vec;  // v starts at the centroid and trains from there
    const int id = c.id;
    centroids_.emplace(id, std::move(c));
    buffers_.emplace(id, std::deque<std::vector<double>>{});
    return id;
}

int ClusterStore::add_unknown(const Tensor& vec) {
    if (vec.rank() != 1 || vec.dim(0) != dim_)
        throw DimensionError("add_unknown: bad vector shape");
    Centroid c;
    c.id = next_id_++;
    c.vec = vec;
    c.known = false;
    c.transition = vec;
    const int id = c.id;
    centroids_.emplace(id, std::move(c));
    buffers_.emplace(id, std::deque<std::vector<double>>{});
    return id;
}

void ClusterStore::remove(int id) {
    if (!centroids_.erase(id)) throw ContractError("remove: unknown centroid id");
    buffers_.erase(id);
}

Centroid& ClusterStore::centroid(int id) {
    auto it = centroids_.find(id);
    if (it == centroids_.end()) throw ContractError("centroid: unknown id");
    return it->second;
}

const Centroid& ClusterStore::centroid(int id) const {
    auto it = centroids_.find(id);
    if (it == centroids_.end()) throw ContractError("centroid: unknown id");
    return it->second;
}

std::vector<int> ClusterStore::ids() const {
    std::vector<int> out;
    out.reserve(centroids_.size());
    for (const auto& [id, c] : centroids_) out.push_back(id);
    return out;
}

std::vector<int> ClusterStore::known_ids() const {
    std::vector<int> out;
    for (const auto& [id, c] : centroids_)
        if (c.known) out.push_back(id);
    return out;
}

std::vector<int> ClusterStore::unknown_ids() const {
    std::vector<int> out;
    for (const auto& [id, c] : centroids_)
        if (!c.known) out.push_back(id);
    return out;
}

int ClusterStore::id_of_class(int class_index) const {
    for (const auto& [id, c] : centroids_)
        if (c.known && c.class_index == class_index) return id;
    return -1;
}

void ClusterStore::push_feature(int id, std::span<const double> feature) {
    if (static_cast<int>(feature.size()) != dim_)
        throw DimensionError("push_feature: dimension mismatch");
    auto it = buffers_.find(id);
    if (it == buffers_.end()) throw ContractError("push_feature: unknown centroid id");
    it->second.emplace_back(feature.begin(), feature.end());
    while (static_cast<int>(it->second.size()) > policy_.buffer_capacity) it->second.pop_front();
}

const std::deque<std::vector<double>>& ClusterStore::buffer(int id) const {
    auto it = buffers_.find(id);
    if (it == buffers_.end()) throw ContractError("buffer: unknown centroid id");
    return it->second;
}

void ClusterStore::momentum_update(long step_counter) {
    if (step_counter % policy_.update_period != 0) return;
    const double eta = policy_.momentum;
    for (auto& [id, c] : centroids_) {
        if (c.frozen && !policy_.update_all_each_step) continue;
        const auto& buf = buffers_.at(id);
        if (buf.empty()) continue;
        std::vector<double> mean(static_cast<std::size_t>(dim_), 0.0);
        for (const auto& f : buf)
            for (int j = 0; j < dim_; ++j) mean[static_cast<std::size_t>(j)] += f[static_cast<std::size_t>(j)];
        for (double& v : mean) v /= static_cast<double>(buf.size());
        for (int j = 0; j < dim_; ++j)
            c.vec.at(static_cast<std::size_t>(j)) =
                eta * c.vec.at(static_cast<std::size_t>(j)) + (1.0 - eta) * mean[static_cast<std::size_t>(j)];
    }
}

void ClusterStore::freeze_classes(std::span<const int> classes) {
    for (auto& [id, c] : centroids_) {
        if (!c.known) continue;
        if (std::find(classes.begin(), classes.end(), c.class_index) != classes.end())
            c.frozen = true;
    }
}

void ClusterStore::save(std::ostream& os) const {
    write_bytes(os, kStoreMagic, sizeof(kStoreMagic));
    write_pod(os, static_cast<std::int32_t>(dim_));
    write_pod(os, static_cast<std::int32_t>(policy_.update_period));
    write_pod(os, policy_.momentum);
    write_pod(os, static_cast<std::int32_t>(policy_.buffer_capacity));
    write_pod(os, static_cast<std::int8_t>(policy_.update_all_each_step));
    write_pod(os, static_cast<std::int32_t>(next_id_));
    write_pod(os, static_cast<std::int64_t>(centroids_.size()));
    for (const auto& [id, c] : centroids_) {
        write_pod(os, static_cast<std::int32_t>(id));
        write_pod(os, static_cast<std::int8_t>(c.known));
        write_pod(os, static_cast<std::int8_t>(c.frozen));
        write_pod(os, static_cast<std::int32_t>(c.class_index));
        write_vec(os, c.vec.values());
        write_vec(os, c.transition.values());
        const auto& buf = buffers_.at(id);
        write_pod(os, static_cast<std::int64_t>(buf.size()));
        for (const auto& f : buf) write_vec(os, f);
    }
    if (!os) throw IoError("cluster store: write failed");
}

ClusterStore ClusterStore::load(std::istream& is) {
    char magic[sizeof(kStoreMagic)];
    read_bytes(is, magic, sizeof(magic));
    if (std::memcmp(magic, kStoreMagic, sizeof(magic)) != 0)
        throw IoError("cluster store: bad magic");
    const int dim = read_pod<std::int32_t>(is);
    StorePolicy policy;
    policy.update_period = read_pod<std::int32_t>(is);
    policy.momentum = read_pod<double>(is);
    policy.buffer_capacity = read_pod<std::int32_t>(is);
    policy.update_all_each_step = read_pod<std::int8_t>(is) != 0;
    ClusterStore store(dim, policy);
    store.next_id_ = read_pod<std::int32_t>(is);
    const auto count = read_pod<std::int64_t>(is);
    for (std::int64_t i = 0; i < count; ++i) {
        Centroid c;
        c.id = read_pod<std::int32_t>(is);
        c.known = read_pod<std::int8_t>(is) != 0;
        c.frozen = read_pod<std::int8_t>(is) != 0;
        c.class_index = read_pod<std::int32_t>(is);
        c.vec = Tensor::from({dim}, read_vec(is));
        c.transition = Tensor::from({dim}, read_vec(is));
        const auto nbuf = read_pod<std::int64_t>(is);
        std::deque<std::vector<double>> buf;
        for (std::int64_t j = 0; j < nbuf; ++j) buf.push_back(read_vec(is));
        const int id = c.id;
        store.centroids_.emplace(id, std::move(c));
        store.buffers_.emplace(id, std::move(buf));
    }
    return store;
}

void ClusterStore::save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cluster store: cannot open " + path + " for writing");
    save(os);
}

ClusterStore ClusterStore::load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cluster store: cannot open " + path);
    return load(is);
}

int nearest_cluster_assign(std::span<const double> f, const ClusterStore& store) {
    if (store.empty()) throw ContractError("nearest_cluster_assign: empty store");
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [id, c] : store.centroids()) {
        const double d = dense::squared_distance(f, c.vec.values());
        if (d < best_d) {  // strict: earlier (lower) id wins ties
            best_d = d;
            best = id;
        }
    }
    return best;
}

int nearest_cluster_assign(const Tensor& f, const ClusterStore& store) {
    if (f.rank() != 1) throw DimensionError("nearest_cluster_assign: feature must be 1-D");
    return nearest_cluster_assign(f.values(), store);
}

std::vector<int> dbscan(const Tensor& points, double eps, int min_pts) {
    if (eps <= 0.0) throw ConfigError("dbscan: eps must be positive");
    if (min_pts < 1) throw ConfigError("dbscan: min_pts must be at least 1");
    if (points.rank() == 0 || points.size() == 0) return {};
    if (points.rank() != 2) throw DimensionError("dbscan: points must be (N,D)");
    const int n = points.rows();
    const double eps2 = eps * eps;

    std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (dense::squared_distance(points.row(i), points.row(j)) <= eps2)
                neighbors[static_cast<std::size_t>(i)].push_back(j);
        }
    }
    std::vector<bool> core(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        core[static_cast<std::size_t>(i)] =
            static_cast<int>(neighbors[static_cast<std::size_t>(i)].size()) >= min_pts;

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    int next_label = 0;
    // Components of the core graph, expanded in ascending index order.
    for (int i = 0; i < n; ++i) {
        if (!core[static_cast<std::size_t>(i)] || labels[static_cast<std::size_t>(i)] >= 0) continue;
        const int label = next_label++;
        std::vector<int> stack = {i};
        labels[static_cast<std::size_t>(i)] = label;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            for (int q : neighbors[static_cast<std::size_t>(p)]) {
                if (!core[static_cast<std::size_t>(q)] || labels[static_cast<std::size_t>(q)] >= 0)
                    continue;
                labels[static_cast<std::size_t>(q)] = label;
                stack.push_back(q);
            }
        }
    }
    // Border points join the cluster of their nearest core neighbor.
    for (int i = 0; i < n; ++i) {
        if (core[static_cast<std::size_t>(i)]) continue;
        double best_d = std::numeric_limits<double>::infinity();
        int best_core = -1;
        for (int q : neighbors[static_cast<std::size_t>(i)]) {
            if (!core[static_cast<std::size_t>(q)]) continue;
            const double d = dense::squared_distance(points.row(i), points.row(q));
            if (d < best_d) {
                best_d = d;
                best_core = q;
            }
        }
        if (best_core >= 0) labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(best_core)];
    }
    return labels;
}

UnknownInitResult init_unknown_clusters(ClusterStore& store, const Tensor& background_feats,
                                        double eps, int min_pts, double margin,
                                        int remaining_class_estimate) {
    if (margin <= 0.0) throw ConfigError("init_unknown_clusters: margin must be positive");
    UnknownInitResult res;
    if (background_feats.rank() == 0 || background_feats.size() == 0) return res;

    const std::vector<int> labels = dbscan(background_feats, eps, min_pts);
    int n_clusters = 0;
    for (int l : labels) n_clusters = std::max(n_clusters, l + 1);
    res.dbscan_clusters = n_clusters;
    if (n_clusters == 0) return res;

    const int d = background_feats.cols();
    std::vector<std::vector<double>> means(static_cast<std::size_t>(n_clusters),
                                           std::vector<double>(static_cast<std::size_t>(d), 0.0));
    std::vector<int> counts(static_cast<std::size_t>(n_clusters), 0);
    for (int i = 0; i < background_feats.rows(); ++i) {
        const int l = labels[static_cast<std::size_t>(i)];
        if (l < 0) continue;
        ++counts[static_cast<std::size_t>(l)];
        const auto row = background_feats.row(i);
        for (int j = 0; j < d; ++j) means[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)] += row[j];
    }
    for (int l = 0; l < n_clusters; ++l)
        for (int j = 0; j < d; ++j)
            means[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)] /= counts[static_cast<std::size_t>(l)];

    // Greedy merge of the closest pair while any pair sits below 2*margin.
    const double limit = 2.0 * margin;
    std::vector<std::vector<double>> centers = std::move(means);
    while (centers.size() > 1) {
        double best_d = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < centers.size(); ++i)
            for (std::size_t j = i + 1; j < centers.size(); ++j) {
                const double dist = dense::distance(centers[i], centers[j]);
                if (dist < best_d) {
                    best_d = dist;
                    bi = i;
                    bj = j;
                }
            }
        if (best_d >= limit) break;
        for (int k = 0; k < d; ++k)
            centers[bi][static_cast<std::size_t>(k)] =
                0.5 * (centers[bi][static_cast<std::size_t>(k)] + centers[bj][static_cast<std::size_t>(k)]);
        centers.erase(centers.begin() + static_cast<std::ptrdiff_t>(bj));
        ++res.merges;
    }

    // Candidates within 2*margin of an existing unknown centroid are treated
    // as re-detections of that centroid and dropped.
    const std::vector<int> existing = store.unknown_ids();
    for (const auto& center : centers) {
        bool near_existing = false;
        for (int id : existing) {
            if (dense::distance(center, store.centroid(id).vec.values()) < limit) {
                near_existing = true;
                break;
            }
        }
        if (near_existing) {
            ++res.dropped_near_existing;
            continue;
        }
        res.new_ids.push_back(store.add_unknown(Tensor::from({d}, center)));
    }

    if (remaining_class_estimate > 0 &&
        static_cast<double>(res.new_ids.size()) > 1.5 * remaining_class_estimate)
        res.over_estimate = true;
    return res;
}

std::vector<int> init_known_clusters(ClusterStore& store,
                                     const std::map<int, Tensor>& feats_by_class) {
    std::vector<int> out;
    for (const auto& [class_index, feats] : feats_by_class) {
        if (feats.rank() != 2 || feats.rows() == 0)
            throw ContractError("init_known_clusters: each class needs at least one feature");
        const int d = feats.cols();
        std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < feats.rows(); ++i) {
            const auto row = feats.row(i);
            for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += row[j];
        }
        for (double& v : mean) v /= static_cast<double>(feats.rows());
        out.push_back(store.add_known(Tensor::from({d}, std::move(mean)), class_index));
    }
    return out;
}

}  // namespace faircc
