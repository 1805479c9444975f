#include "faircc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "faircc/errors.hpp"

namespace faircc {

namespace {

Tensor rows_subset(const Tensor& m, std::span<const int> rows) {
    const int d = m.cols();
    Tensor out({static_cast<int>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(m.row(rows[i]).data(), d, out.row(static_cast<int>(i)).data());
    return out;
}

}  // namespace

Extractor::Extractor(const ExtractorConfig& cfg) : cfg_(cfg) {
    Rng rng(mix_seed(cfg.seed, 0xe87));
    w1_ = Tensor::randn({cfg.input_dim, cfg.hidden}, rng, 1.0 / std::sqrt(cfg.input_dim));
    b1_ = Tensor({cfg.hidden});
    w2_ = Tensor::randn({cfg.hidden, cfg.feature_dim}, rng, 1.7 / std::sqrt(cfg.hidden));
    b2_ = Tensor({cfg.feature_dim});
    head_w_ = Tensor::randn({cfg.feature_dim, 1}, rng, 0.01);  // background slot
    head_b_ = Tensor({1});
}

Var Extractor::features(Graph& g, Binder& binder, Var inputs) const {
    auto& self = const_cast<Extractor&>(*this);
    const Var h = g.gelu(g.add_rowvec(g.matmul(inputs, binder(self.w1_)), binder(self.b1_)));
    return g.add_rowvec(g.matmul(h, binder(self.w2_)), binder(self.b2_));
}

Var Extractor::class_logits(Graph& g, Binder& binder, Var feats) const {
    auto& self = const_cast<Extractor&>(*this);
    return g.add_rowvec(g.matmul(feats, binder(self.head_w_)), binder(self.head_b_));
}

Tensor Extractor::extract(const Tensor& inputs) const {
    Graph g;
    const Var h = g.gelu(g.add_rowvec(g.matmul(g.constant(inputs), g.constant(w1_)), g.constant(b1_)));
    const Var f = g.add_rowvec(g.matmul(h, g.constant(w2_)), g.constant(b2_));
    return g.value(f);
}

Tensor Extractor::classify(const Tensor& feats) const {
    Graph g;
    return g.value(g.add_rowvec(g.matmul(g.constant(feats), g.constant(head_w_)), g.constant(head_b_)));
}

void Extractor::add_classes(std::span<const int> classes, Rng& rng) {
    if (classes.empty()) return;
    const int old_slots = n_slots();
    const int added = static_cast<int>(classes.size());
    Tensor w({cfg_.feature_dim, old_slots + added});
    Tensor b({old_slots + added});
    for (int i = 0; i < cfg_.feature_dim; ++i) {
        for (int j = 0; j < old_slots; ++j) w.at(i, j) = head_w_.at(i, j);
        for (int j = 0; j < added; ++j) w.at(i, old_slots + j) = rng.normal() * 0.01;
    }
    for (int j = 0; j < old_slots; ++j) b.at(static_cast<std::size_t>(j)) = head_b_.at(static_cast<std::size_t>(j));
    head_w_ = std::move(w);
    head_b_ = std::move(b);
    for (int c : classes) {
        if (slot_of_class(c) >= 0) throw ContractError("extractor: class already has a slot");
        slot_class_.push_back(c);
    }
}

int Extractor::slot_of_class(int cls) const {
    for (std::size_t i = 0; i < slot_class_.size(); ++i)
        if (slot_class_[i] == cls) return static_cast<int>(i) + 1;
    return -1;
}

int Extractor::class_of_slot(int slot) const {
    if (slot <= 0 || slot > static_cast<int>(slot_class_.size())) return kBackgroundLabel;
    return slot_class_[static_cast<std::size_t>(slot) - 1];
}

std::vector<std::pair<std::string, Tensor*>> Extractor::named_parameters() {
    return {{"ext.w1", &w1_},     {"ext.b1", &b1_},     {"ext.w2", &w2_},
            {"ext.b2", &b2_},     {"ext.head_w", &head_w_}, {"ext.head_b", &head_b_}};
}

void Extractor::save(std::ostream& os) const {
    auto& self = const_cast<Extractor&>(*this);
    os << "extractor v1 slots";
    for (int c : slot_class_) os << " " << c;
    os << "\n";
    for (auto& [key, t] : self.named_parameters()) {
        os << key << " ";
        for (int e : t->shape()) os << e << " ";
        os << "\n";
        os.write(reinterpret_cast<const char*>(t->data()),
                 static_cast<std::streamsize>(t->size() * sizeof(double)));
        os << "\n";
    }
}

void Extractor::save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("extractor: cannot open " + path + " for writing");
    save(os);
}

std::string to_string(LossMode mode) {
    return mode == LossMode::vanilla ? "vanilla" : "fairness";
}

std::string to_string(AssignMode mode) {
    switch (mode) {
        case AssignMode::nearest: return "nearest";
        case AssignMode::fixed_grammar: return "fixed";
        case AssignMode::adaptive_grammar: return "adaptive";
    }
    return "?";
}

Simulation::Simulation(const SimConfig& cfg, std::optional<GrammarModel> pretrained)
    : cfg_(cfg),
      store_(cfg.feature_dim, cfg.policy),
      grammar_(std::move(pretrained)),
      run_rng_(mix_seed(cfg.stream.seed, 0x510)) {
    ExtractorConfig ecfg;
    ecfg.input_dim = cfg.stream.input_dim;
    ecfg.hidden = cfg.hidden;
    ecfg.feature_dim = cfg.feature_dim;
    ecfg.seed = mix_seed(cfg.stream.seed, 0xfea7);
    extractor_ = std::make_unique<Extractor>(ecfg);
    if (cfg.assign_mode != AssignMode::nearest && !cfg.ce_only) {
        if (!grammar_) throw ConfigError("simulation: grammar weights required for this mode");
        if (grammar_->hyper.dim != cfg.feature_dim)
            throw ConfigError("simulation: grammar dimension does not match the feature dimension");
    }
    class_totals_ = class_point_totals(cfg.stream);
}

void Simulation::assign_pool(const Tensor& feats, std::span<const int> labels, int step,
                             std::vector<int>& cluster_of, std::vector<int>& ce_target) {
    const int n = feats.rows();
    cluster_of.assign(static_cast<std::size_t>(n), -1);
    ce_target.assign(static_cast<std::size_t>(n), -1);

    std::vector<int> bg_rows;
    for (int i = 0; i < n; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label == kBackgroundLabel) {
            if (cfg_.ce_only) {
                ce_target[static_cast<std::size_t>(i)] = 0;  // explicit background slot
            } else {
                bg_rows.push_back(i);
            }
            continue;
        }
        cluster_of[static_cast<std::size_t>(i)] = store_.id_of_class(label);
        ce_target[static_cast<std::size_t>(i)] = extractor_->slot_of_class(label);
    }
    if (cfg_.ce_only || bg_rows.empty() || store_.empty()) return;

    const Tensor bg_feats = rows_subset(feats, bg_rows);
    Rng arng = run_rng_.fork(mix_seed(0xa551, static_cast<std::uint64_t>(step) * 1000 +
                                                  static_cast<std::uint64_t>(optimizer_steps_)));
    const GrammarModel* model =
        cfg_.assign_mode == AssignMode::nearest ? nullptr : (grammar_ ? &*grammar_ : nullptr);
    const AssignResult res = assign_via_grammar(model, store_, bg_feats, arng);
    for (std::size_t j = 0; j < bg_rows.size(); ++j) {
        const int row = bg_rows[j];
        const int cid = res.cluster_id[j];
        cluster_of[static_cast<std::size_t>(row)] = cid;
        const Centroid& c = store_.centroid(cid);
        // Background pixels pseudo-labeled only toward known clusters; unknown
        // assignments join the clustering loss but never the cross-entropy.
        if (c.known) ce_target[static_cast<std::size_t>(row)] = extractor_->slot_of_class(c.class_index);
    }
}

MetricsRecord Simulation::run_step(const StepDataset& train, const StepDataset& eval) {
    ++current_step_;
    const int t = current_step_;
    std::vector<std::string> warnings;

    // Step 0: features under the incoming parameters.
    Tensor feats = extractor_->extract(train.inputs);

    // Entering step t: freeze everything learned in earlier steps.
    store_.freeze_classes(learned_classes_);
    const std::vector<int> old_classes = learned_classes_;

    // Step 1: new known clusters at the labeled means; grow the classifier.
    if (!cfg_.ce_only) {
        std::map<int, Tensor> by_class;
        for (int cls : train.new_classes) {
            std::vector<int> rows;
            for (int i = 0; i < feats.rows(); ++i)
                if (train.labels[static_cast<std::size_t>(i)] == cls) rows.push_back(i);
            if (rows.empty()) {
                warnings.push_back("class " + std::to_string(cls) + " has no labeled points");
                continue;
            }
            by_class.emplace(cls, rows_subset(feats, rows));
        }
        init_known_clusters(store_, by_class);

        // Unknown centroids superseded by a new known class are retired.
        const double limit = 2.0 * cfg_.objective.margin;
        for (int uid : store_.unknown_ids()) {
            bool near_new = false;
            for (int cls : train.new_classes) {
                const int kid = store_.id_of_class(cls);
                if (kid < 0) continue;
                if (dense::distance(store_.centroid(uid).vec.values(),
                                    store_.centroid(kid).vec.values()) < limit) {
                    near_new = true;
                    break;
                }
            }
            if (near_new) store_.remove(uid);
        }
    }
    Rng head_rng = run_rng_.fork(mix_seed(0x6ead, static_cast<std::uint64_t>(t)));
    extractor_->add_classes(train.new_classes, head_rng);

    // Step 2: discover unknown clusters among the background features.
    if (!cfg_.ce_only) {
        std::vector<int> bg_rows;
        for (int i = 0; i < feats.rows(); ++i)
            if (train.labels[static_cast<std::size_t>(i)] == kBackgroundLabel) bg_rows.push_back(i);
        if (!bg_rows.empty()) {
            const int remaining = cfg_.stream.n_classes -
                                  static_cast<int>(learned_classes_.size()) -
                                  static_cast<int>(train.new_classes.size());
            const auto res =
                init_unknown_clusters(store_, rows_subset(feats, bg_rows), cfg_.dbscan_eps,
                                      cfg_.dbscan_min_pts, cfg_.objective.margin, remaining);
            if (res.over_estimate)
                warnings.push_back("unknown clusters exceed 1.5x the remaining-class estimate");
            if (res.new_ids.empty() && t == 1)
                warnings.push_back("no unknown clusters discovered at the first step");
        }
    }
    for (int cls : train.new_classes) learned_classes_.push_back(cls);

    // Step 3: train the model on this step's data.
    const int epochs = t == 1 ? cfg_.epochs_first : cfg_.epochs_later;
    SgdConfig sgd;
    sgd.lr = t == 1 ? cfg_.lr_first : cfg_.lr_later;
    sgd.momentum = cfg_.momentum;
    sgd.weight_decay = cfg_.weight_decay;

    const int n = train.inputs.rows();
    std::vector<int> cluster_of, ce_target;
    epoch_losses_.clear();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double epoch_loss = 0.0;
        int epoch_batches = 0;
        const Tensor epoch_feats = epoch == 0 ? feats : extractor_->extract(train.inputs);
        assign_pool(epoch_feats, train.labels, t, cluster_of, ce_target);

        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = run_rng_.fork(mix_seed(0x0e0c, static_cast<std::uint64_t>(t) * 100 +
                                                         static_cast<std::uint64_t>(epoch)));
        shuffle.shuffle(order);

        for (int start = 0; start < n; start += cfg_.batch) {
            const int stop = std::min(n, start + cfg_.batch);
            std::vector<int> rows(order.begin() + start, order.begin() + stop);

            Graph g;
            Binder bind(g);
            std::unordered_map<const Tensor*, std::string> key_of;
            for (auto& [key, tensor] : extractor_->named_parameters()) key_of.emplace(tensor, key);

            const Var x = g.constant(rows_subset(train.inputs, rows));
            const Var f = extractor_->features(g, bind, x);
            const Var logits = extractor_->class_logits(g, bind, f);
            std::vector<int> targets(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i)
                targets[i] = ce_target[static_cast<std::size_t>(rows[i])];
            const Var ce = cross_entropy_mean(g, logits, targets);

            std::vector<Var> terms;
            Var reg;  // invalid unless built
            if (!cfg_.ce_only) {
                std::vector<Var> centroid_vars;
                for (int id : store_.ids()) {
                    Centroid& c = store_.centroid(id);
                    Var cv;
                    if (c.frozen) {
                        cv = g.constant(c.vec);
                    } else {
                        cv = bind(c.vec);
                        key_of.emplace(&c.vec, "c" + std::to_string(id) + ".vec");
                    }
                    centroid_vars.push_back(cv);

                    std::vector<int> local;
                    for (std::size_t i = 0; i < rows.size(); ++i)
                        if (cluster_of[static_cast<std::size_t>(rows[i])] == id)
                            local.push_back(static_cast<int>(i));
                    if (local.empty()) continue;

                    if (cfg_.loss_mode == LossMode::fairness) {
                        const Var vv = bind(c.transition);
                        key_of.emplace(&c.transition, "c" + std::to_string(id) + ".v");
                        terms.push_back(fairness_cluster_loss(g, f, local, cv, vv, cfg_.alpha,
                                                              cfg_.objective.normalize_per_cluster));
                    } else {
                        terms.push_back(contrastive_cluster_loss(
                            g, f, local, cv, cfg_.objective.normalize_per_cluster));
                    }
                }
                if (cfg_.objective.lambda_c > 0.0 && centroid_vars.size() > 1)
                    reg = cluster_regularizer(g, centroid_vars, cfg_.objective.margin);
            }
            const Var total = total_objective(g, ce, terms, reg, cfg_.objective);
            epoch_loss += g.value(total).at(0);
            ++epoch_batches;
            g.backward(total);
            double scale = 1.0;
            if (cfg_.grad_clip > 0.0) {
                double norm2 = 0.0;
                for (const auto& [tensor, var] : bind.params())
                    for (double v : g.grad(var).values()) norm2 += v * v;
                const double norm = std::sqrt(norm2);
                if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
            }
            for (const auto& [tensor, var] : bind.params()) {
                if (scale == 1.0) {
                    model_opt_.update(key_of.at(tensor), *tensor, g.grad(var), sgd);
                } else {
                    Tensor clipped = g.grad(var);
                    for (std::size_t vi = 0; vi < clipped.size(); ++vi) clipped.at(vi) *= scale;
                    model_opt_.update(key_of.at(tensor), *tensor, clipped, sgd);
                }
            }

            // Assigned features feed the per-cluster buffers.
            if (!cfg_.ce_only) {
                const Tensor& fv = g.value(f);
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    const int cid = cluster_of[static_cast<std::size_t>(rows[i])];
                    if (cid >= 0 && store_.contains(cid))
                        store_.push_feature(cid, fv.row(static_cast<int>(i)));
                }
            }
            ++optimizer_steps_;
            if (!cfg_.ce_only) store_.momentum_update(optimizer_steps_);
        }
        epoch_losses_.push_back(epoch_batches ? epoch_loss / epoch_batches : 0.0);
    }

    // Step 4 + 5: refresh features and adapt the grammar.
    if (cfg_.assign_mode == AssignMode::adaptive_grammar && !cfg_.ce_only && grammar_) {
        const Tensor feats2 = extractor_->extract(train.inputs);
        Rng grng = run_rng_.fork(mix_seed(0x96a3, static_cast<std::uint64_t>(t)));
        train_grammar(*grammar_, store_, feats2, train.labels, cfg_.grammar_train, grammar_opt_,
                      grng);
    }

    MetricsRecord rec = evaluate(eval, t, old_classes, train.new_classes);
    rec.warnings = std::move(warnings);
    return rec;
}

MetricsRecord Simulation::evaluate(const StepDataset& eval, int step,
                                   const std::vector<int>& old_classes,
                                   const std::vector<int>& new_classes) {
    const Tensor feats = extractor_->extract(eval.inputs);
    const Tensor logits = extractor_->classify(feats);

    const int n = feats.rows();
    std::vector<int> pred(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int s = 1; s < logits.cols(); ++s)
            if (logits.at(i, s) > logits.at(i, best)) best = s;
        pred[static_cast<std::size_t>(i)] = extractor_->class_of_slot(best);
    }

    MetricsRecord rec = compute_metrics(pred, eval.true_labels, class_totals_, old_classes,
                                        new_classes);
    rec.step = step;
    rec.seed = cfg_.stream.seed;
    rec.variant = to_string(cfg_.loss_mode) + "-" + to_string(cfg_.assign_mode) +
                  (cfg_.ce_only ? "-ce_only" : "");

    // Per-class mean enforcement over the evaluation features.
    if (!cfg_.ce_only && !store_.empty()) {
        std::vector<double> class_means;
        for (int cls : learned_classes_) {
            const int cid = store_.id_of_class(cls);
            if (cid < 0) continue;
            const std::vector<double> w = enforcement_all(store_.centroid(cid).vec, feats);
            double sum = 0.0;
            long count = 0;
            for (int i = 0; i < n; ++i) {
                if (eval.true_labels[static_cast<std::size_t>(i)] != cls) continue;
                sum += w[static_cast<std::size_t>(i)];
                ++count;
            }
            if (!count) continue;
            rec.enforcement_mean[cls] = sum / static_cast<double>(count);
            class_means.push_back(sum / static_cast<double>(count));
        }
        if (class_means.size() > 1) {
            double mu = 0.0;
            for (double v : class_means) mu += v;
            mu /= static_cast<double>(class_means.size());
            double var = 0.0;
            for (double v : class_means) var += (v - mu) * (v - mu);
            rec.enforcement_std = std::sqrt(var / static_cast<double>(class_means.size()));
        }
    }

    // Unknown-cluster quality on future-class features.
    if (!cfg_.ce_only && !store_.empty()) {
        std::vector<int> future_rows;
        for (int i = 0; i < n; ++i) {
            const int truth = eval.true_labels[static_cast<std::size_t>(i)];
            if (std::find(learned_classes_.begin(), learned_classes_.end(), truth) ==
                learned_classes_.end())
                future_rows.push_back(i);
        }
        std::map<int, int> future_class_count;
        for (int i : future_rows) ++future_class_count[eval.true_labels[static_cast<std::size_t>(i)]];
        if (future_class_count.size() >= 2) {
            const Tensor ff = rows_subset(feats, future_rows);
            Rng arng = run_rng_.fork(mix_seed(0xf0f0, static_cast<std::uint64_t>(step)));
            const GrammarModel* model =
                cfg_.assign_mode == AssignMode::nearest ? nullptr : (grammar_ ? &*grammar_ : nullptr);
            const AssignResult res = assign_via_grammar(model, store_, ff, arng);
            std::vector<int> truth;
            truth.reserve(future_rows.size());
            for (int i : future_rows) truth.push_back(eval.true_labels[static_cast<std::size_t>(i)]);
            rec.unknown_rand_index = rand_index(res.cluster_id, truth);
        }
    }
    return rec;
}

std::vector<MetricsRecord> Simulation::run() {
    const std::vector<StepDataset> trains = generate_stream(cfg_.stream);
    const std::vector<StepDataset> evals = generate_eval_stream(cfg_.stream, cfg_.eval_points);
    std::vector<MetricsRecord> records;
    for (std::size_t t = 0; t < trains.size(); ++t) records.push_back(run_step(trains[t], evals[t]));
    return records;
}

namespace {

nlohmann::ordered_json record_to_json(const MetricsRecord& rec) {
    nlohmann::ordered_json j;
    j["step"] = rec.step;
    j["variant"] = rec.variant;
    j["seed"] = rec.seed;
    j["miou_old"] = rec.miou_old;
    j["miou_new"] = rec.miou_new;
    j["miou_all"] = rec.miou_all;
    j["macc_old"] = rec.macc_old;
    j["macc_new"] = rec.macc_new;
    j["macc_all"] = rec.macc_all;
    j["miou_major"] = rec.miou_major;
    j["miou_minor"] = rec.miou_minor;
    j["enforcement_std"] = rec.enforcement_std;
    j["unknown_rand_index"] = rec.unknown_rand_index;
    auto map_json = [](const std::map<int, double>& m) {
        nlohmann::ordered_json out;
        for (const auto& [k, v] : m) out[std::to_string(k)] = v;
        return out;
    };
    j["iou"] = map_json(rec.iou);
    j["acc"] = map_json(rec.acc);
    j["enforcement_mean"] = map_json(rec.enforcement_mean);
    j["old_classes"] = rec.old_classes;
    j["new_classes"] = rec.new_classes;
    j["major_classes"] = rec.major_classes;
    j["warnings"] = rec.warnings;
    return j;
}

}  // namespace

BenchmarkResult run_benchmark(const SimConfig& cfg, std::optional<GrammarModel> pretrained,
                              const std::string& out_dir, const std::string& config_echo) {
    namespace fs = std::filesystem;
    const bool writing = !out_dir.empty();
    if (writing) {
        fs::create_directories(out_dir);
        std::ofstream cfg_out(out_dir + "/config.effective");
        if (!cfg_out) throw IoError("run dir: cannot write config echo");
        cfg_out << config_echo;
    }

    Simulation sim(cfg, std::move(pretrained));
    const std::vector<StepDataset> trains = generate_stream(cfg.stream);
    const std::vector<StepDataset> evals = generate_eval_stream(cfg.stream, cfg.eval_points);

    BenchmarkResult result;
    std::ofstream metrics_out;
    if (writing) {
        metrics_out.open(out_dir + "/metrics.jsonl");
        if (!metrics_out) throw IoError("run dir: cannot write metrics");
    }
    for (std::size_t t = 0; t < trains.size(); ++t) {
        MetricsRecord rec = sim.run_step(trains[t], evals[t]);
        if (writing) {
            metrics_out << record_to_json(rec).dump() << "\n";
            const std::string suffix = "_step_" + std::to_string(rec.step) + ".bin";
            sim.store().save_file(out_dir + "/store" + suffix);
            sim.extractor().save_file(out_dir + "/extractor" + suffix);
            if (sim.grammar()) sim.grammar()->save_file(out_dir + "/grammar" + suffix);
        }
        result.records.push_back(std::move(rec));
    }

    const MetricsRecord& last = result.records.back();
    result.final_miou_all = last.miou_all;
    result.final_miou_minor = last.miou_minor;
    result.final_enforcement_std = last.enforcement_std;
    result.final_unknown_rand_index = last.unknown_rand_index;

    if (writing) {
        std::ofstream csv(out_dir + "/summary.csv");
        if (!csv) throw IoError("run dir: cannot write summary");
        csv << "step,group,metric,value,seed,variant\n";
        for (const MetricsRecord& rec : result.records) {
            auto emit = [&](const std::string& group, const std::string& metric, double value) {
                csv << rec.step << "," << group << "," << metric << "," << value << ","
                    << rec.seed << "," << rec.variant << "\n";
            };
            emit("old", "miou", rec.miou_old);
            emit("new", "miou", rec.miou_new);
            emit("all", "miou", rec.miou_all);
            emit("major", "miou", rec.miou_major);
            emit("minor", "miou", rec.miou_minor);
            emit("all", "enforcement_std", rec.enforcement_std);
            emit("all", "unknown_rand_index", rec.unknown_rand_index);
        }
    }
    return result;
}

}  // namespace faircc
