#include "faircc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "faircc/errors.hpp"

namespace faircc {

namespace {

double mean_over(const std::map<int, double>& per_class, std::span<const int> classes) {
    double s = 0.0;
    int n = 0;
    for (int c : classes) {
        auto it = per_class.find(c);
        if (it == per_class.end()) continue;
        s += it->second;
        ++n;
    }
    return n ? s / n : 0.0;
}

}  // namespace

MetricsRecord compute_metrics(std::span<const int> predicted, std::span<const int> truth,
                              const std::map<int, long>& class_sizes,
                              std::span<const int> old_classes, std::span<const int> new_classes) {
    if (predicted.size() != truth.size())
        throw ContractError("compute_metrics: prediction/truth length mismatch");

    MetricsRecord rec;
    rec.old_classes.assign(old_classes.begin(), old_classes.end());
    rec.new_classes.assign(new_classes.begin(), new_classes.end());

    std::map<int, long> tp, fp, fn;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if (t == p) {
            ++tp[t];
        } else {
            if (p >= 0) ++fp[p];
            ++fn[t];
        }
    }

    // Evaluated classes: those that appear in the ground truth.
    std::vector<int> evaluated;
    for (int c : old_classes)
        if (tp.count(c) || fn.count(c)) evaluated.push_back(c);
    for (int c : new_classes)
        if (tp.count(c) || fn.count(c)) evaluated.push_back(c);

    for (int c : evaluated) {
        const long t = tp.count(c) ? tp[c] : 0;
        const long f_pos = fp.count(c) ? fp[c] : 0;
        const long f_neg = fn.count(c) ? fn[c] : 0;
        const long denom = t + f_pos + f_neg;
        rec.iou[c] = denom ? static_cast<double>(t) / static_cast<double>(denom) : 0.0;
        const long support = t + f_neg;
        rec.acc[c] = support ? static_cast<double>(t) / static_cast<double>(support) : 0.0;
    }

    // Major group: smallest prefix by descending pixel count reaching 75%.
    std::vector<std::pair<long, int>> by_size;
    long total = 0;
    for (const auto& [c, n] : class_sizes) {
        by_size.emplace_back(n, c);
        total += n;
    }
    std::sort(by_size.begin(), by_size.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    long cum = 0;
    for (const auto& [n, c] : by_size) {
        if (cum >= static_cast<long>(std::ceil(0.75 * static_cast<double>(total)))) break;
        rec.major_classes.push_back(c);
        cum += n;
    }

    rec.miou_old = mean_over(rec.iou, rec.old_classes);
    rec.miou_new = mean_over(rec.iou, rec.new_classes);
    rec.miou_all = mean_over(rec.iou, evaluated);
    rec.macc_old = mean_over(rec.acc, rec.old_classes);
    rec.macc_new = mean_over(rec.acc, rec.new_classes);
    rec.macc_all = mean_over(rec.acc, evaluated);

    std::vector<int> minor;
    std::vector<int> major_eval;
    for (int c : evaluated) {
        if (std::find(rec.major_classes.begin(), rec.major_classes.end(), c) !=
            rec.major_classes.end())
            major_eval.push_back(c);
        else
            minor.push_back(c);
    }
    rec.miou_major = mean_over(rec.iou, major_eval);
    rec.miou_minor = mean_over(rec.iou, minor);
    return rec;
}

double rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ContractError("rand_index: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    long long agree = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool same_a = a[i] == a[j];
            const bool same_b = b[i] == b[j];
            agree += same_a == same_b;
            ++pairs;
        }
    return static_cast<double>(agree) / static_cast<double>(pairs);
}

ForgettingReport forgetting_report(const std::vector<MetricsRecord>& records,
                                   const std::vector<std::vector<int>>& classes_per_step) {
    if (records.size() < 2) throw ContractError("forgetting_report: need at least 2 steps");
    ForgettingReport rep;
    const std::size_t steps = records.size();
    const std::size_t groups = classes_per_step.size();
    rep.group_miou.assign(steps, std::vector<double>(groups, -1.0));
    rep.all_miou.resize(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        rep.all_miou[s] = records[s].miou_all;
        for (std::size_t gidx = 0; gidx <= s && gidx < groups; ++gidx) {
            double sum = 0.0;
            int count = 0;
            for (int c : classes_per_step[gidx]) {
                auto it = records[s].iou.find(c);
                if (it == records[s].iou.end()) continue;
                sum += it->second;
                ++count;
            }
            if (count) rep.group_miou[s][gidx] = sum / count;
        }
    }
    rep.max_drop.assign(groups, 0.0);
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
        for (std::size_t s = 1; s < steps; ++s) {
            const double prev = rep.group_miou[s - 1][gidx];
            const double cur = rep.group_miou[s][gidx];
            if (prev < 0.0 || cur < 0.0) continue;
            rep.max_drop[gidx] = std::max(rep.max_drop[gidx], (prev - cur) * 100.0);
        }
    }
    double total = 0.0;
    for (double v : rep.all_miou) total += v;
    rep.final_average = total / static_cast<double>(steps);
    double fin = 0.0;
    int fin_n = 0;
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
        const double v = rep.group_miou[steps - 1][gidx];
        if (v < 0.0) continue;
        fin += v;
        ++fin_n;
    }
    rep.avg_over_final_classes = fin_n ? fin / fin_n : 0.0;
    return rep;
}

std::string ForgettingReport::render() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << "step ";
    for (std::size_t gidx = 0; gidx < max_drop.size(); ++gidx) os << "| grp" << gidx + 1 << "  ";
    os << "| all\n";
    for (std::size_t s = 0; s < group_miou.size(); ++s) {
        os << "  " << s + 1 << "  ";
        for (std::size_t gidx = 0; gidx < max_drop.size(); ++gidx) {
            const double v = group_miou[s][gidx];
            if (v < 0.0)
                os << "|  -    ";
            else
                os << "| " << v * 100.0 << (v * 100.0 < 10.0 ? "  " : " ");
        }
        os << "| " << all_miou[s] * 100.0 << "\n";
    }
    os << "max drop (pts): ";
    for (std::size_t gidx = 0; gidx < max_drop.size(); ++gidx) os << max_drop[gidx] << " ";
    os << "\navg over steps: " << final_average * 100.0;
    os << "\navg over final groups: " << avg_over_final_classes * 100.0 << "\n";
    return os.str();
}

}  // namespace faircc
