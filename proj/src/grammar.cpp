#include "faircc/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "faircc/errors.hpp"

namespace faircc {

namespace {

constexpr char kGrammarMagic[8] = "CCGRAM1";

void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw IoError("grammar weights: truncated input");
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

void write_tensor(std::ostream& os, const Tensor& t) {
    write_pod(os, static_cast<std::int32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_pod(os, static_cast<std::int32_t>(t.dim(i)));
    write_bytes(os, t.data(), t.size() * sizeof(double));
}

Tensor read_tensor(std::istream& is) {
    const int rank = read_pod<std::int32_t>(is);
    if (rank < 1 || rank > 4) throw IoError("grammar weights: bad tensor rank");
    std::vector<int> shape(static_cast<std::size_t>(rank));
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
        shape[static_cast<std::size_t>(i)] = read_pod<std::int32_t>(is);
        n *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    }
    std::vector<double> data(n);
    read_bytes(is, data.data(), n * sizeof(double));
    return Tensor::from(std::move(shape), std::move(data));
}

// Draws a random-size subset of a scene's points (uniform over
// [max(6, M/3), scene size]) so samples cover the padded and abundant pool
// regimes alike.
void subsample_pool(const SyntheticScene& scene, int m, Rng& rng, Tensor& pool,
                    std::vector<int>& pool_owner) {
    const int scene_n = scene.points.rows();
    const int dim = scene.points.cols();
    const int lo = std::min(scene_n, std::max(6, m / 3));
    const int pool_n = rng.uniform_int(lo, scene_n);
    std::vector<int> pick(static_cast<std::size_t>(scene_n));
    std::iota(pick.begin(), pick.end(), 0);
    rng.shuffle(pick);
    pick.resize(static_cast<std::size_t>(pool_n));
    pool = Tensor({pool_n, dim});
    pool_owner.assign(static_cast<std::size_t>(pool_n), -1);
    for (int i = 0; i < pool_n; ++i) {
        std::copy_n(scene.points.row(pick[static_cast<std::size_t>(i)]).data(), dim,
                    pool.row(i).data());
        pool_owner[static_cast<std::size_t>(i)] =
            scene.cluster_of[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])];
    }
}

// Assembles the (M+1) x D input matrix [delta_1; ...; delta_M; c].
Tensor sample_input(const GrammarSample& sample) {
    const int m = sample.deltas.rows();
    const int d = sample.deltas.cols();
    Tensor x({m + 1, d});
    for (int i = 0; i < m; ++i) std::copy_n(sample.deltas.row(i).data(), d, x.row(i).data());
    std::copy_n(sample.center.data(), d, x.row(m).data());
    return x;
}

Var forward_logits_impl(Graph& g, const GrammarSample& sample, Var pos, Var in_gain, Var in_bias,
                        const std::vector<MhsaBlockVars>& blocks, Var proj_w, Var proj_b, int m) {
    const Var x = g.constant(sample_input(sample));
    Var z = g.add(g.layer_norm(x, in_gain, in_bias), pos);
    for (const auto& blk : blocks) z = mhsa_block(g, z, blk);
    std::vector<int> first_m(static_cast<std::size_t>(m));
    std::iota(first_m.begin(), first_m.end(), 0);
    const Var tokens = g.gather_rows(z, std::move(first_m));     // M x D
    return g.add_rowvec(g.matmul(tokens, proj_w), proj_b);       // M x 1
}

struct SampleBatchStats {
    double nll_sum = 0.0;
    long elements = 0;
};

}  // namespace

GrammarSample build_grammar_sample(const Tensor& center, const Tensor& pool, int m, Rng& rng) {
    if (pool.rank() != 2 || pool.rows() == 0)
        throw ContractError("build_grammar_sample: empty feature pool");
    if (center.rank() != 1 || center.dim(0) != pool.cols())
        throw DimensionError("build_grammar_sample: center/pool dimension mismatch");
    if (m < 1) throw ConfigError("build_grammar_sample: m must be positive");

    const int n = pool.rows();
    std::vector<double> cos(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        cos[static_cast<std::size_t>(i)] = dense::cosine(pool.row(i), center.values());

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double ca = cos[static_cast<std::size_t>(a)], cb = cos[static_cast<std::size_t>(b)];
        if (ca != cb) return ca > cb;
        return a < b;
    });

    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < std::min(n, m); ++i) chosen.push_back(order[static_cast<std::size_t>(i)]);
    // Pad by resampling with replacement when the pool is short.
    while (static_cast<int>(chosen.size()) < m) chosen.push_back(rng.uniform_int(0, n - 1));
    std::stable_sort(chosen.begin(), chosen.end(), [&](int a, int b) {
        return cos[static_cast<std::size_t>(a)] > cos[static_cast<std::size_t>(b)];
    });

    GrammarSample s;
    s.center = center;
    const int d = pool.cols();
    s.deltas = Tensor({m, d});
    s.order_key.resize(static_cast<std::size_t>(m));
    s.source = chosen;
    s.duplicate.assign(static_cast<std::size_t>(m), 0);
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int j = 0; j < m; ++j) {
        const int src = chosen[static_cast<std::size_t>(j)];
        const auto row = pool.row(src);
        for (int k = 0; k < d; ++k) s.deltas.at(j, k) = row[k] - center.at(static_cast<std::size_t>(k));
        s.order_key[static_cast<std::size_t>(j)] = cos[static_cast<std::size_t>(src)];
        if (seen[static_cast<std::size_t>(src)]) s.duplicate[static_cast<std::size_t>(j)] = 1;
        seen[static_cast<std::size_t>(src)] = 1;
    }
    for (int j = 0; j + 1 < m; ++j) {
        if (s.order_key[static_cast<std::size_t>(j)] < s.order_key[static_cast<std::size_t>(j + 1)])
            throw ContractError("build_grammar_sample: cosine ordering violated");
    }
    return s;
}

GrammarModel GrammarModel::init(const GrammarHyper& hyper, std::uint64_t seed) {
    if (hyper.blocks < 1 || hyper.m < 1 || hyper.dim < 1 || hyper.heads < 1)
        throw ConfigError("grammar: hyperparameters must be positive");
    if (hyper.dim % hyper.heads != 0)
        throw ConfigError("grammar: dim must be divisible by head count");
    GrammarModel model;
    model.hyper = hyper;
    Rng rng(mix_seed(seed, 0xabcdef));
    model.pos = Tensor::randn({hyper.m + 1, hyper.dim}, rng, 0.02);
    model.in_gain = Tensor::full({hyper.dim}, 1.0);
    model.in_bias = Tensor({hyper.dim});
    model.blocks.reserve(static_cast<std::size_t>(hyper.blocks));
    for (int b = 0; b < hyper.blocks; ++b)
        model.blocks.push_back(
            MhsaBlockParams::init(hyper.dim, hyper.heads, hyper.effective_mlp_width(), rng));
    model.proj_w = Tensor::randn({hyper.dim, 1}, rng, 1.0 / std::sqrt(static_cast<double>(hyper.dim)));
    model.proj_b = Tensor({1});
    return model;
}

Tensor GrammarModel::forward(const GrammarSample& sample) const {
    if (sample.deltas.rows() != hyper.m || sample.deltas.cols() != hyper.dim)
        throw ConfigError("grammar forward: sample does not match the model dimensions");
    Graph g;
    std::vector<MhsaBlockVars> blk;
    blk.reserve(blocks.size());
    for (const auto& b : blocks) blk.push_back(MhsaBlockVars::bind_const(g, b));
    const Var logits = forward_logits_impl(g, sample, g.constant(pos), g.constant(in_gain),
                                           g.constant(in_bias), blk, g.constant(proj_w),
                                           g.constant(proj_b), hyper.m);
    const Var probs = g.sigmoid(logits);
    const Tensor& out = g.value(probs);
    Tensor flat({hyper.m});
    std::copy_n(out.data(), out.size(), flat.data());
    return flat;
}

Var GrammarModel::forward_logits(Graph& g, Binder& binder, const GrammarSample& sample) {
    if (sample.deltas.rows() != hyper.m || sample.deltas.cols() != hyper.dim)
        throw ConfigError("grammar forward: sample does not match the model dimensions");
    std::vector<MhsaBlockVars> blk;
    blk.reserve(blocks.size());
    for (auto& b : blocks) blk.push_back(MhsaBlockVars::bind(binder, b));
    return forward_logits_impl(g, sample, binder(pos), binder(in_gain), binder(in_bias), blk,
                               binder(proj_w), binder(proj_b), hyper.m);
}

std::vector<std::pair<std::string, Tensor*>> GrammarModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("pos", &pos);
    out.emplace_back("in_g", &in_gain);
    out.emplace_back("in_b", &in_bias);
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (auto& [suffix, t] : blocks[b].named())
            out.emplace_back("blk" + std::to_string(b) + "." + suffix, t);
    out.emplace_back("proj_w", &proj_w);
    out.emplace_back("proj_b", &proj_b);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> GrammarModel::named_parameters() const {
    auto mut = const_cast<GrammarModel*>(this)->named_parameters();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [k, t] : mut) out.emplace_back(k, t);
    return out;
}

void GrammarModel::save(std::ostream& os) const {
    write_bytes(os, kGrammarMagic, sizeof(kGrammarMagic));
    write_pod(os, static_cast<std::int32_t>(1));  // format version
    write_pod(os, static_cast<std::int32_t>(hyper.blocks));
    write_pod(os, static_cast<std::int32_t>(hyper.m));
    write_pod(os, static_cast<std::int32_t>(hyper.dim));
    write_pod(os, static_cast<std::int32_t>(hyper.heads));
    write_pod(os, static_cast<std::int32_t>(hyper.effective_mlp_width()));
    const auto named = named_parameters();
    write_pod(os, static_cast<std::int32_t>(named.size()));
    for (const auto& [key, t] : named) {
        write_pod(os, static_cast<std::int32_t>(key.size()));
        write_bytes(os, key.data(), key.size());
        write_tensor(os, *t);
    }
    if (!os) throw IoError("grammar weights: write failed");
}

GrammarModel GrammarModel::load(std::istream& is) {
    char magic[sizeof(kGrammarMagic)];
    read_bytes(is, magic, sizeof(magic));
    if (std::memcmp(magic, kGrammarMagic, sizeof(magic)) != 0)
        throw IoError("grammar weights: bad magic");
    const int version = read_pod<std::int32_t>(is);
    if (version != 1) throw IoError("grammar weights: unsupported version");
    GrammarHyper hyper;
    hyper.blocks = read_pod<std::int32_t>(is);
    hyper.m = read_pod<std::int32_t>(is);
    hyper.dim = read_pod<std::int32_t>(is);
    hyper.heads = read_pod<std::int32_t>(is);
    hyper.mlp_width = read_pod<std::int32_t>(is);
    GrammarModel model = GrammarModel::init(hyper, 0);
    auto named = model.named_parameters();
    const int count = read_pod<std::int32_t>(is);
    if (count != static_cast<int>(named.size()))
        throw IoError("grammar weights: parameter count mismatch");
    for (auto& [key, t] : named) {
        const int len = read_pod<std::int32_t>(is);
        std::string got(static_cast<std::size_t>(len), '\0');
        read_bytes(is, got.data(), got.size());
        if (got != key) throw IoError("grammar weights: parameter order mismatch at " + got);
        Tensor loaded = read_tensor(is);
        if (!loaded.same_shape(*t)) throw IoError("grammar weights: shape mismatch at " + key);
        *t = std::move(loaded);
    }
    return model;
}

void GrammarModel::save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("grammar weights: cannot open " + path + " for writing");
    save(os);
}

GrammarModel GrammarModel::load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("grammar weights: cannot open " + path);
    return load(is);
}

bool GrammarModel::bit_equal(const GrammarModel& other) const {
    const auto a = named_parameters();
    const auto b = other.named_parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first) return false;
        if (!a[i].second->bit_equal(*b[i].second)) return false;
    }
    return true;
}

double train_grammar(GrammarModel& model, const ClusterStore& store, const Tensor& feats,
                     std::span<const int> visible_labels, const GrammarTrainConfig& cfg, Sgd& opt,
                     Rng& rng) {
    if (feats.rank() != 2 || feats.rows() == 0)
        throw ContractError("train_grammar: empty feature pool");
    if (static_cast<int>(visible_labels.size()) != feats.rows())
        throw DimensionError("train_grammar: one label per feature required");

    // Centers eligible for sampling: known clusters whose class is visible in
    // the labels (old-class features sit in the background and would poison
    // the negatives of their own cluster).
    std::map<int, long> label_counts;
    for (int l : visible_labels)
        if (l >= 0) ++label_counts[l];
    std::vector<int> eligible;
    for (int id : store.known_ids()) {
        const int cls = store.centroid(id).class_index;
        if (label_counts.count(cls) && label_counts[cls] > 0) eligible.push_back(id);
    }
    if (eligible.empty()) throw ContractError("train_grammar: no labeled features for any centroid");

    std::unordered_map<const Tensor*, std::string> key_of;
    for (auto& [key, t] : model.named_parameters()) key_of.emplace(t, "grammar." + key);

    Rng shuffle_rng = rng.fork(cfg.shuffle_stream);
    double final_epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = eligible;
        shuffle_rng.shuffle(order);
        SampleBatchStats stats;
        for (int id : order) {
            const Centroid& c = store.centroid(id);
            GrammarSample sample = build_grammar_sample(c.vec, feats, model.hyper.m, shuffle_rng);
            Tensor targets({model.hyper.m, 1});
            for (int j = 0; j < model.hyper.m; ++j) {
                const int src = sample.source[static_cast<std::size_t>(j)];
                targets.at(j, 0) =
                    visible_labels[static_cast<std::size_t>(src)] == c.class_index ? 1.0 : 0.0;
            }
            Graph g;
            Binder binder(g);
            const Var logits = model.forward_logits(g, binder, sample);
            const Var loss = g.scale(g.bce_with_logits_sum(logits, targets),
                                     1.0 / static_cast<double>(model.hyper.m));
            stats.nll_sum += g.value(loss).at(0);
            stats.elements += 1;
            g.backward(loss);
            for (const auto& [t, var] : binder.params())
                opt.update(key_of.at(t), *t, g.grad(var), cfg.sgd);
        }
        final_epoch_loss = stats.elements ? stats.nll_sum / stats.elements : 0.0;
    }
    return final_epoch_loss;
}

AssignResult assign_via_grammar(const GrammarModel* model, const ClusterStore& store,
                                const Tensor& feats, Rng& rng, double threshold) {
    if (feats.rank() != 2) throw DimensionError("assign_via_grammar: feats must be (N,D)");
    const int n = feats.rows();
    AssignResult res;
    res.cluster_id.assign(static_cast<std::size_t>(n), -1);
    res.via_grammar.assign(static_cast<std::size_t>(n), 0);
    res.probability.assign(static_cast<std::size_t>(n), 0.0);
    if (n == 0) return res;

    if (model != nullptr) {
        for (const auto& [id, c] : store.centroids()) {
            GrammarSample sample = build_grammar_sample(c.vec, feats, model->hyper.m, rng);
            const Tensor probs = model->forward(sample);
            for (int j = 0; j < model->hyper.m; ++j) {
                if (sample.duplicate[static_cast<std::size_t>(j)]) continue;
                const int src = sample.source[static_cast<std::size_t>(j)];
                const double p = probs.at(static_cast<std::size_t>(j));
                if (p <= threshold) continue;
                if (p > res.probability[static_cast<std::size_t>(src)]) {
                    res.probability[static_cast<std::size_t>(src)] = p;
                    res.cluster_id[static_cast<std::size_t>(src)] = id;
                    res.via_grammar[static_cast<std::size_t>(src)] = 1;
                }
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        if (res.cluster_id[static_cast<std::size_t>(i)] < 0)
            res.cluster_id[static_cast<std::size_t>(i)] = nearest_cluster_assign(feats.row(i), store);
    }
    return res;
}

SyntheticScene sample_scene(const GrammarPretrainConfig& cfg, Rng& rng) {
    SyntheticScene scene;
    const int d = cfg.hyper.dim;
    const double scene_scale = rng.uniform(cfg.center_scale_min, cfg.center_scale);
    scene.centers = Tensor({cfg.clusters_per_scene, d});
    std::vector<std::vector<double>> rows;
    std::vector<int> owner;
    for (int k = 0; k < cfg.clusters_per_scene; ++k) {
        std::vector<double> center(static_cast<std::size_t>(d));
        if (k > 0 && rng.uniform() < cfg.adjacent_pair_fraction) {
            // Offset from the previous center so boundary arbitration between
            // touching clusters is a routine training situation.
            std::vector<double> dir(static_cast<std::size_t>(d));
            double norm = 0.0;
            for (double& v : dir) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            const double gap = rng.uniform(3.0, 8.0);
            for (int j = 0; j < d; ++j)
                center[static_cast<std::size_t>(j)] =
                    scene.centers.at(k - 1, j) + gap * dir[static_cast<std::size_t>(j)] / norm;
        } else {
            for (double& v : center) v = rng.normal() * scene_scale;
        }
        std::copy(center.begin(), center.end(), scene.centers.row(k).data());
        const int count = rng.uniform_int(cfg.points_per_cluster_min, cfg.points_per_cluster_max);
        const double spread = rng.uniform(cfg.spread_min, cfg.spread_max);
        for (int i = 0; i < count; ++i) {
            std::vector<double> p(static_cast<std::size_t>(d));
            for (int j = 0; j < d; ++j) p[static_cast<std::size_t>(j)] = center[static_cast<std::size_t>(j)] + rng.normal() * spread;
            rows.push_back(std::move(p));
            owner.push_back(k);
        }
    }
    const int n_outliers = static_cast<int>(cfg.outlier_fraction * static_cast<double>(rows.size()));
    for (int i = 0; i < n_outliers; ++i) {
        std::vector<double> p(static_cast<std::size_t>(d));
        for (double& v : p) v = rng.uniform(-2.5 * scene_scale, 2.5 * scene_scale);
        rows.push_back(std::move(p));
        owner.push_back(-1);
    }
    scene.points = Tensor({static_cast<int>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), scene.points.row(static_cast<int>(i)).data());
    scene.cluster_of = std::move(owner);
    return scene;
}

PretrainResult pretrain_synthetic(GrammarModel& model, const GrammarPretrainConfig& cfg) {
    Rng base(cfg.seed);
    Sgd opt;
    PretrainResult result;
    std::unordered_map<const Tensor*, std::string> key_of;
    for (auto& [key, t] : model.named_parameters()) key_of.emplace(t, "grammar." + key);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double nll = 0.0;
        long count = 0;
        Rng train_rng = base.fork(1000 + static_cast<std::uint64_t>(epoch));
        for (int s = 0; s < cfg.scenes; ++s) {
            const SyntheticScene scene = sample_scene(cfg, train_rng);
            for (int k = 0; k < cfg.clusters_per_scene; ++k) {
                Tensor center({cfg.hyper.dim});
                std::copy_n(scene.centers.row(k).data(), cfg.hyper.dim, center.data());
                // Pool sizes span the padded small-pool regime up to the full
                // scene, matching how samples are built at assignment time.
                Tensor pool;
                std::vector<int> pool_owner;
                subsample_pool(scene, model.hyper.m, train_rng, pool, pool_owner);
                GrammarSample sample = build_grammar_sample(center, pool, model.hyper.m, train_rng);
                Tensor targets({model.hyper.m, 1});
                for (int j = 0; j < model.hyper.m; ++j)
                    targets.at(j, 0) =
                        pool_owner[static_cast<std::size_t>(
                            sample.source[static_cast<std::size_t>(j)])] == k
                            ? 1.0
                            : 0.0;
                Graph g;
                Binder binder(g);
                const Var logits = model.forward_logits(g, binder, sample);
                const Var loss = g.scale(g.bce_with_logits_sum(logits, targets),
                                         1.0 / static_cast<double>(model.hyper.m));
                nll += g.value(loss).at(0);
                ++count;
                g.backward(loss);
                for (const auto& [t, var] : binder.params())
                    opt.update(key_of.at(t), *t, g.grad(var), cfg.sgd);
            }
        }
        result.train_loss = count ? nll / count : 0.0;
    }

    // Fresh scenes from a disjoint stream of the same family, sampled with
    // the same pool protocol as training.
    Rng eval_rng = base.fork(0xe7a1);
    long correct = 0, total = 0;
    for (int s = 0; s < cfg.eval_scenes; ++s) {
        const SyntheticScene scene = sample_scene(cfg, eval_rng);
        for (int k = 0; k < cfg.clusters_per_scene; ++k) {
            Tensor center({cfg.hyper.dim});
            std::copy_n(scene.centers.row(k).data(), cfg.hyper.dim, center.data());
            Tensor pool;
            std::vector<int> pool_owner;
            subsample_pool(scene, model.hyper.m, eval_rng, pool, pool_owner);
            GrammarSample sample = build_grammar_sample(center, pool, model.hyper.m, eval_rng);
            const Tensor probs = model.forward(sample);
            for (int j = 0; j < model.hyper.m; ++j) {
                if (sample.duplicate[static_cast<std::size_t>(j)]) continue;
                const bool truth = pool_owner[static_cast<std::size_t>(
                                       sample.source[static_cast<std::size_t>(j)])] == k;
                const bool pred = probs.at(static_cast<std::size_t>(j)) > 0.5;
                if (truth == pred) ++correct;
                ++total;
            }
        }
    }
    result.eval_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return result;
}

}  // namespace faircc
