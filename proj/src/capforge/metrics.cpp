// SPDX-License-Identifier: Apache-2.0
#include "capforge/metrics.hpp"

#include "capforge/error.hpp"
#include "capforge/kmeans.hpp"
#include "capforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <map>
#include <set>

namespace capforge {

double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

double population_std(const std::vector<std::size_t>& counts) {
    if (counts.empty()) return 0.0;
    const double n = static_cast<double>(counts.size());
    double mean = 0.0;
    for (auto c : counts) mean += static_cast<double>(c);
    mean /= n;
    double var = 0.0;
    for (auto c : counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
    return std::sqrt(var / n);
}

AccuracyReport accuracy_from_predictions(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t n_classes,
                                         const std::vector<int>& seen_classes) {
    require(pred.size() == truth.size(), ErrorKind::InvalidArgument, "accuracy: prediction/label length mismatch");
    AccuracyReport r;
    r.per_class_acc.assign(n_classes, 0.0);
    r.class_support.assign(n_classes, 0);
    r.pred_counts.assign(n_classes, 0);
    std::vector<std::size_t> hits(n_classes, 0);
    std::set<int> seen(seen_classes.begin(), seen_classes.end());
    std::size_t correct = 0, s_n = 0, s_hit = 0, u_n = 0, u_hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        require(truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < n_classes, ErrorKind::InvalidArgument,
                "accuracy: missing or out-of-range test label");
        const auto t = static_cast<std::size_t>(truth[i]);
        const bool ok = pred[i] == truth[i];
        ++r.pred_counts[static_cast<std::size_t>(pred[i])];
        ++r.class_support[t];
        hits[t] += ok;
        correct += ok;
        if (seen.count(truth[i])) {
            ++s_n;
            s_hit += ok;
        } else {
            ++u_n;
            u_hit += ok;
        }
    }
    r.overall_acc = pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
    r.min_class_acc = 1.0;
    bool any = false;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (!r.class_support[c]) continue;
        r.per_class_acc[c] = static_cast<double>(hits[c]) / static_cast<double>(r.class_support[c]);
        r.min_class_acc = std::min(r.min_class_acc, r.per_class_acc[c]);
        any = true;
    }
    if (!any) r.min_class_acc = 0.0;
    r.pred_count_std = population_std(r.pred_counts);
    std::size_t mx = 0, mn = 0;
    for (auto c : r.pred_counts) {
        mx = std::max(mx, c);
        if (c && (!mn || c < mn)) mn = c;
    }
    r.imbalance_ratio = mn ? static_cast<double>(mx) / static_cast<double>(mn) : 0.0;
    if (!seen.empty()) {
        r.seen_acc = s_n ? static_cast<double>(s_hit) / static_cast<double>(s_n) : 0.0;
        r.unseen_acc = u_n ? static_cast<double>(u_hit) / static_cast<double>(u_n) : 0.0;
        r.harmonic_mean = harmonic_mean(*r.seen_acc, *r.unseen_acc);
    }
    return r;
}

AccuracyReport accuracy_report(const AdapterModel& model, const EmbeddingDataset& ds) {
    const auto test = ds.test_indices();
    std::vector<int> truth;
    for (auto i : test) {
        require(ds.labels[i] != kUnknownLabel, ErrorKind::InvalidArgument, "accuracy_report: missing test labels");
        truth.push_back(ds.labels[i]);
    }
    const Predictions p = predict(model, ds, test);
    return accuracy_from_predictions(p.pred, truth, ds.n_classes, ds.splits.seen_classes);
}

std::vector<double> concentration_from_assignments(const std::vector<int>& labels, const std::vector<std::size_t>& assignments,
                                                   std::size_t n_classes, std::size_t k) {
    require(labels.size() == assignments.size(), ErrorKind::InvalidArgument, "cluster_concentration: length mismatch");
    std::vector<std::vector<std::size_t>> tally(n_classes, std::vector<std::size_t>(k, 0));
    std::vector<std::size_t> total(n_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++tally[static_cast<std::size_t>(labels[i])][assignments[i]];
        ++total[static_cast<std::size_t>(labels[i])];
    }
    std::vector<double> out(n_classes, 0.0);
    for (std::size_t c = 0; c < n_classes; ++c)
        if (total[c])
            out[c] = static_cast<double>(*std::max_element(tally[c].begin(), tally[c].end())) / static_cast<double>(total[c]);
    return out;
}

std::vector<double> cluster_concentration(const EmbeddingDataset& ds, std::uint64_t seed, const std::vector<std::size_t>& samples) {
    std::vector<std::size_t> idx;
    for (std::size_t i : samples.empty() ? ds.train_pool() : samples)
        if (ds.labels[i] != kUnknownLabel) idx.push_back(i);
    require(idx.size() >= ds.n_classes, ErrorKind::InvalidArgument, "cluster_concentration: not enough labeled samples");
    KMeansOptions km;
    km.seed = seed;
    const ClusterModel cm = kmeans(ds.rows(idx), ds.n_classes, km);
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(ds.labels[i]);
    return concentration_from_assignments(labels, cm.assignments, ds.n_classes, ds.n_classes);
}

std::vector<std::vector<int>> find_confused_groups(const Matrix& similarity, double theta) {
    const auto n = static_cast<std::size_t>(similarity.rows());
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (similarity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= theta ||
                similarity(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) >= theta) {
                auto a = find(i), b = find(j);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
    std::map<std::size_t, std::vector<int>> comps;
    for (std::size_t i = 0; i < n; ++i) comps[find(i)].push_back(static_cast<int>(i));
    std::vector<std::vector<int>> out;
    for (auto& [_, g] : comps)
        if (g.size() >= 2) out.push_back(std::move(g));
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t confidence_bin(double confidence, std::size_t bins) {
    const double c = std::clamp(confidence, 0.0, 1.0);
    return std::min(bins - 1, static_cast<std::size_t>(c * static_cast<double>(bins)));
}

EceResult local_ece(const std::vector<int>& pred, const std::vector<double>& confidence, const std::vector<int>& truth,
                    const std::vector<int>& group, std::size_t bins) {
    require(bins > 0, ErrorKind::InvalidArgument, "local_ece: bins must be positive");
    require(!group.empty(), ErrorKind::InvalidArgument, "local_ece: empty group");
    require(pred.size() == confidence.size() && pred.size() == truth.size(), ErrorKind::InvalidArgument, "local_ece: length mismatch");
    std::set<int> members(group.begin(), group.end());
    std::vector<double> conf_sum(bins, 0.0);
    std::vector<std::size_t> hits(bins, 0), count(bins, 0);
    EceResult r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!members.count(pred[i])) continue;
        const std::size_t b = confidence_bin(confidence[i], bins);
        conf_sum[b] += confidence[i];
        hits[b] += pred[i] == truth[i];
        ++count[b];
        ++r.samples;
    }
    if (r.samples == 0) {
        r.empty = true;
        return r;
    }
    for (std::size_t b = 0; b < bins; ++b) {
        if (!count[b]) continue;
        const double n = static_cast<double>(count[b]);
        r.ece += n / static_cast<double>(r.samples) * std::abs(static_cast<double>(hits[b]) / n - conf_sum[b] / n);
    }
    return r;
}

std::size_t ConfidenceHistogram::total() const {
    return std::accumulate(correct.begin(), correct.end(), std::size_t{0}) +
           std::accumulate(incorrect.begin(), incorrect.end(), std::size_t{0});
}

ConfidenceHistogram confidence_density(const std::vector<int>& pred, const std::vector<double>& confidence,
                                       const std::vector<int>& truth, const std::vector<int>& group, std::size_t bins) {
    ConfidenceHistogram h;
    if (group.empty()) return h;
    require(bins > 0, ErrorKind::InvalidArgument, "confidence_density: bins must be positive");
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = static_cast<double>(b) / static_cast<double>(bins);
    h.correct.assign(bins, 0);
    h.incorrect.assign(bins, 0);
    std::set<int> members(group.begin(), group.end());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!members.count(pred[i])) continue;
        auto& dst = pred[i] == truth[i] ? h.correct : h.incorrect;
        ++dst[confidence_bin(confidence[i], bins)];
    }
    return h;
}

}  // namespace capforge
