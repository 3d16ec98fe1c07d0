// SPDX-License-Identifier: Apache-2.0
#include "capforge/mismatch.hpp"

#include "capforge/error.hpp"
#include "capforge/kmeans.hpp"

#include <algorithm>
#include <numeric>

namespace capforge {

ZeroShot zero_shot_predict(const EmbeddingDataset& ds, double gamma) {
    ZeroShot zs;
    Matrix logits = gamma * cosine_matrix(ds.images(), ds.texts());
    zs.probs = row_softmax(logits);
    zs.pred.resize(ds.n_samples);
    zs.confidence.resize(ds.n_samples);
    for (std::size_t i = 0; i < ds.n_samples; ++i) {
        const Vector row = zs.probs.row(static_cast<Eigen::Index>(i)).transpose();
        std::size_t c = argmax(row);
        zs.pred[i] = static_cast<int>(c);
        zs.confidence[i] = row(static_cast<Eigen::Index>(c));
    }
    return zs;
}

std::size_t default_threshold(std::size_t n_classes) { return std::max<std::size_t>(1, (n_classes + 9) / 10); }

MismatchReport detect_mismatch(const EmbeddingDataset& ds, const DetectOptions& opts) {
    std::vector<int> classes = opts.classes;
    if (classes.empty()) {
        classes.resize(ds.n_classes);
        std::iota(classes.begin(), classes.end(), 0);
    }
    std::sort(classes.begin(), classes.end());
    const std::size_t n_cls = classes.size();
    require(opts.t >= 1 && opts.t <= n_cls, ErrorKind::InvalidArgument,
            "detect_mismatch: t must be in [1, " + std::to_string(n_cls) + "], got " + std::to_string(opts.t));

    std::vector<std::size_t> active = opts.pool.empty() ? ds.train_pool() : opts.pool;
    std::sort(active.begin(), active.end());
    require(active.size() >= n_cls, ErrorKind::InvalidArgument, "detect_mismatch: fewer samples than classes");

    // Zero-shot predictions are made once against the full class set and held fixed.
    const ZeroShot zs = zero_shot_predict(ds, opts.gamma);
    const Matrix texts = ds.texts();

    MismatchReport rep;
    rep.t = opts.t;
    rep.predicted_counts.assign(ds.n_classes, 0);
    for (auto i : active) ++rep.predicted_counts[static_cast<std::size_t>(zs.pred[i])];

    std::vector<int> remaining = classes;
    std::size_t round = 0;
    while (remaining.size() >= opts.t) {
        const std::size_t k = remaining.size();
        const Matrix feats = ds.rows(active);
        KMeansOptions km;
        km.seed = opts.seed ^ (0x9e37ULL * (round + 1));
        const ClusterModel clusters = kmeans(feats, k, km);

        Matrix text_rows(static_cast<Eigen::Index>(k), texts.cols());
        for (std::size_t r = 0; r < k; ++r) text_rows.row(static_cast<Eigen::Index>(r)) = texts.row(remaining[r]);
        const Matrix probs = row_softmax(cosine_matrix(text_rows, clusters.centroids));

        Eigen::Index bi = 0, bj = 0;
        for (Eigen::Index i = 0; i < probs.rows(); ++i)
            for (Eigen::Index j = 0; j < probs.cols(); ++j)
                if (probs(i, j) > probs(bi, bj)) {
                    bi = i;
                    bj = j;
                }

        MismatchIteration it;
        it.text_class = remaining[static_cast<std::size_t>(bi)];
        it.cluster = static_cast<std::size_t>(bj);
        it.confidence = probs(bi, bj);
        it.cap = active.size() / k;

        std::vector<std::size_t> candidates;
        for (std::size_t r = 0; r < active.size(); ++r)
            if (clusters.assignments[r] == it.cluster && zs.pred[active[r]] == it.text_class) candidates.push_back(active[r]);
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](std::size_t a, std::size_t b) { return zs.confidence[a] > zs.confidence[b]; });
        if (candidates.size() > it.cap) candidates.resize(it.cap);
        it.removed = candidates;
        std::sort(it.removed.begin(), it.removed.end());

        std::vector<std::size_t> kept;
        kept.reserve(active.size());
        std::set_difference(active.begin(), active.end(), it.removed.begin(), it.removed.end(), std::back_inserter(kept));
        active = std::move(kept);
        remaining.erase(remaining.begin() + bi);
        rep.trace.push_back(std::move(it));
        ++round;
    }

    rep.y_final = remaining;
    rep.remaining_samples = active;

    std::vector<int> by_count = classes;
    std::stable_sort(by_count.begin(), by_count.end(), [&](int a, int b) {
        return rep.predicted_counts[static_cast<std::size_t>(a)] < rep.predicted_counts[static_cast<std::size_t>(b)];
    });
    rep.y_low_t.assign(by_count.begin(), by_count.begin() + static_cast<std::ptrdiff_t>(opts.t));
    std::sort(rep.y_low_t.begin(), rep.y_low_t.end());
    std::set_intersection(rep.y_final.begin(), rep.y_final.end(), rep.y_low_t.begin(), rep.y_low_t.end(),
                          std::back_inserter(rep.y_mm));
    return rep;
}

}  // namespace capforge
