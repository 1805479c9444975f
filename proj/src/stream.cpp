#include "faircc/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "faircc/errors.hpp"
#include "faircc/rng.hpp"

namespace faircc {

namespace {

// Per-class point counts for one step.
std::vector<int> step_class_counts(const StreamConfig& cfg) {
    std::vector<double> weight(static_cast<std::size_t>(cfg.n_classes));
    double total = 0.0;
    for (int k = 0; k < cfg.n_classes; ++k) {
        weight[static_cast<std::size_t>(k)] = std::pow(static_cast<double>(k + 1), -cfg.zipf_exponent);
        total += weight[static_cast<std::size_t>(k)];
    }
    std::vector<int> counts(static_cast<std::size_t>(cfg.n_classes));
    for (int k = 0; k < cfg.n_classes; ++k) {
        const double share = weight[static_cast<std::size_t>(k)] / total;
        counts[static_cast<std::size_t>(k)] = std::max(
            cfg.min_class_points,
            static_cast<int>(std::lround(share * static_cast<double>(cfg.points_per_step))));
    }
    return counts;
}

struct ClassGeometry {
    std::vector<std::vector<double>> centers;
    std::vector<double> spread;
};

ClassGeometry class_geometry(const StreamConfig& cfg) {
    ClassGeometry geo;
    Rng base(cfg.seed);
    Rng center_rng = base.fork(0xc0);
    Rng jitter_rng = base.fork(0x11);
    const double denom = cfg.n_classes > 1 ? static_cast<double>(cfg.n_classes - 1) : 1.0;
    for (int k = 0; k < cfg.n_classes; ++k) {
        std::vector<double> c(static_cast<std::size_t>(cfg.input_dim));
        for (double& v : c) v = center_rng.normal() * cfg.separation;
        geo.centers.push_back(std::move(c));
        const double ramp = 1.0 + cfg.noise_rank_ramp * static_cast<double>(k) / denom;
        geo.spread.push_back(cfg.noise * ramp *
                             jitter_rng.uniform(1.0 - cfg.noise_jitter, 1.0 + cfg.noise_jitter));
    }
    return geo;
}

std::vector<StepDataset> generate(const StreamConfig& cfg, int points_per_step,
                                  std::uint64_t draw_stream) {
    if (cfg.n_classes < 1 || cfg.input_dim < 1 || points_per_step < 1)
        throw ConfigError("stream: sizes must be positive");
    if (cfg.separation <= 0.0 || cfg.noise <= 0.0)
        throw ConfigError("stream: separation and noise must be positive");
    if (cfg.noise_jitter < 0.0 || cfg.noise_jitter >= 1.0)
        throw ConfigError("stream: noise_jitter must lie in [0, 1)");

    const std::vector<int> schedule = expand_schedule(cfg.schedule, cfg.n_classes);
    const ClassGeometry geo = class_geometry(cfg);

    StreamConfig sized = cfg;
    sized.points_per_step = points_per_step;
    const std::vector<int> counts = step_class_counts(sized);

    Rng base(cfg.seed);
    std::vector<StepDataset> out;
    int first_class = 0;
    for (std::size_t t = 0; t < schedule.size(); ++t) {
        StepDataset ds;
        ds.step = static_cast<int>(t) + 1;
        for (int k = 0; k < schedule[t]; ++k) ds.new_classes.push_back(first_class + k);

        int total = 0;
        for (int c : counts) total += c;
        ds.inputs = Tensor({total, cfg.input_dim});
        ds.labels.resize(static_cast<std::size_t>(total));
        ds.true_labels.resize(static_cast<std::size_t>(total));

        int row = 0;
        for (int k = 0; k < cfg.n_classes; ++k) {
            Rng pt = base.fork(mix_seed(draw_stream, (static_cast<std::uint64_t>(t) << 20) |
                                                         static_cast<std::uint64_t>(k)));
            const bool visible = k >= first_class && k < first_class + schedule[t];
            for (int i = 0; i < counts[static_cast<std::size_t>(k)]; ++i, ++row) {
                double* dst = ds.inputs.row(row).data();
                for (int j = 0; j < cfg.input_dim; ++j)
                    dst[j] = geo.centers[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] +
                             pt.normal() * geo.spread[static_cast<std::size_t>(k)];
                ds.true_labels[static_cast<std::size_t>(row)] = k;
                ds.labels[static_cast<std::size_t>(row)] = visible ? k : kBackgroundLabel;
            }
        }

        // Shuffle rows so mini-batches mix classes.
        Rng order = base.fork(mix_seed(draw_stream ^ 0x5eed, static_cast<std::uint64_t>(t)));
        std::vector<int> perm(static_cast<std::size_t>(total));
        std::iota(perm.begin(), perm.end(), 0);
        order.shuffle(perm);
        Tensor shuffled({total, cfg.input_dim});
        std::vector<int> lab(static_cast<std::size_t>(total)), tru(static_cast<std::size_t>(total));
        for (int i = 0; i < total; ++i) {
            const int src = perm[static_cast<std::size_t>(i)];
            std::copy_n(ds.inputs.row(src).data(), cfg.input_dim, shuffled.row(i).data());
            lab[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
            tru[static_cast<std::size_t>(i)] = ds.true_labels[static_cast<std::size_t>(src)];
        }
        ds.inputs = std::move(shuffled);
        ds.labels = std::move(lab);
        ds.true_labels = std::move(tru);

        out.push_back(std::move(ds));
        first_class += schedule[t];
    }
    return out;
}

}  // namespace

std::vector<int> expand_schedule(const std::string& schedule, int n_classes) {
    // "10-5" with 25 classes -> 10,5,5,5; explicit lists like "10-5-5" are
    // accepted too, with the final chunk repeating as needed.
    std::vector<int> parts;
    std::size_t begin = 0;
    try {
        while (begin <= schedule.size()) {
            const auto dash = schedule.find('-', begin);
            const std::string tok = schedule.substr(begin, dash == std::string::npos
                                                               ? std::string::npos
                                                               : dash - begin);
            parts.push_back(std::stoi(tok));
            if (dash == std::string::npos) break;
            begin = dash + 1;
        }
    } catch (const std::exception&) {
        throw ConfigError("schedule: expected dash-separated counts, got " + schedule);
    }
    if (parts.empty() || parts.front() < 1)
        throw ConfigError("schedule: base class count must be positive");
    std::vector<int> out;
    int used = 0;
    std::size_t i = 0;
    while (used < n_classes) {
        const int chunk = i < parts.size() ? parts[i] : parts.back();
        if (chunk < 1)
            throw ConfigError("schedule: " + schedule + " cannot cover " +
                              std::to_string(n_classes) + " classes");
        out.push_back(chunk);
        used += chunk;
        ++i;
    }
    if (used != n_classes || i < parts.size())
        throw ConfigError("schedule: " + schedule + " does not sum to " +
                          std::to_string(n_classes) + " classes");
    return out;
}

std::vector<StepDataset> generate_stream(const StreamConfig& cfg) {
    return generate(cfg, cfg.points_per_step, 0x7121);
}

std::vector<StepDataset> generate_eval_stream(const StreamConfig& cfg, int points) {
    return generate(cfg, points, 0xe7a1);
}

std::map<int, long> class_point_totals(const StreamConfig& cfg) {
    const std::vector<int> counts = step_class_counts(cfg);
    const std::size_t steps = expand_schedule(cfg.schedule, cfg.n_classes).size();
    std::map<int, long> totals;
    for (int k = 0; k < cfg.n_classes; ++k)
        totals[k] = static_cast<long>(counts[static_cast<std::size_t>(k)]) *
                    static_cast<long>(steps);
    return totals;
}

}  // namespace faircc
