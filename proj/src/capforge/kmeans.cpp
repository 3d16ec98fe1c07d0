// SPDX-License-Identifier: Apache-2.0
#include "capforge/kmeans.hpp"

#include "capforge/error.hpp"
#include "capforge/rng.hpp"

#include <limits>

namespace capforge {

std::size_t nearest_centroid(const Matrix& centroids, const Eigen::Ref<const Vector>& point, double* dist2) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
        double d = (centroids.row(j).transpose() - point).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(j);
        }
    }
    if (dist2) *dist2 = best_d;
    return best;
}

namespace {

Matrix seed_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
    const auto n = static_cast<std::size_t>(points.rows());
    Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);

    std::size_t first = uniform_index(rng, n);
    centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
    taken[first] = true;

    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = (points.row(static_cast<Eigen::Index>(i)) - centroids.row(static_cast<Eigen::Index>(c - 1))).squaredNorm();
            d2[i] = std::min(d2[i], d);
            total += d2[i];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            double r = uniform01(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                acc += d2[i];
                pick = i;
                if (acc > r) break;
            }
        } else {
            // all remaining points coincide with chosen centroids
            for (std::size_t i = 0; i < n && pick == n; ++i)
                if (!taken[i]) pick = i;
            if (pick == n) pick = 0;
        }
        taken[pick] = true;
        centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    }
    return centroids;
}

double assign(const Matrix& points, const Matrix& centroids, std::vector<std::size_t>& assignments,
              std::vector<double>& dists) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double d = 0.0;
        assignments[static_cast<std::size_t>(i)] = nearest_centroid(centroids, points.row(i).transpose(), &d);
        dists[static_cast<std::size_t>(i)] = d;
        inertia += d;
    }
    return inertia;
}

}  // namespace

ClusterModel kmeans(const Matrix& points, std::size_t k, const KMeansOptions& opts) {
    const auto n = static_cast<std::size_t>(points.rows());
    require(n > 0, ErrorKind::InvalidArgument, "kmeans: empty input");
    require(k >= 1, ErrorKind::InvalidArgument, "kmeans: k must be positive");
    require(k <= n, ErrorKind::InvalidArgument, "kmeans: k > number of points");
    require(points.allFinite(), ErrorKind::Numeric, "kmeans: non-finite input");

    Rng rng = substream(opts.seed, "kmeans++");
    ClusterModel model;
    model.k = k;
    model.centroids = seed_plus_plus(points, k, rng);
    model.assignments.assign(n, 0);
    std::vector<double> dists(n, 0.0);

    double inertia = assign(points, model.centroids, model.assignments, dists);
    model.inertia_trace.push_back(inertia);

    for (int it = 0; it < opts.max_iter; ++it) {
        model.iterations = it + 1;
        Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), points.cols());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums.row(static_cast<Eigen::Index>(model.assignments[i])) += points.row(static_cast<Eigen::Index>(i));
            ++counts[model.assignments[i]];
        }

        Matrix next = model.centroids;
        std::vector<bool> moved_to(n, false);
        for (std::size_t j = 0; j < k; ++j) {
            auto row = static_cast<Eigen::Index>(j);
            if (counts[j] > 0) {
                next.row(row) = sums.row(row) / static_cast<double>(counts[j]);
                continue;
            }
            // Empty cluster: reseed at the point farthest from its centroid.
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (moved_to[i]) continue;
                if (dists[i] > far_d) {
                    far_d = dists[i];
                    far = i;
                }
            }
            if (far == n) continue;
            moved_to[far] = true;
            dists[far] = 0.0;
            next.row(row) = points.row(static_cast<Eigen::Index>(far));
        }

        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            auto row = static_cast<Eigen::Index>(j);
            shift = std::max(shift, (next.row(row) - model.centroids.row(row)).norm());
        }
        model.centroids = std::move(next);
        inertia = assign(points, model.centroids, model.assignments, dists);

        double prev = model.inertia_trace.back();
        // Lloyd steps never increase inertia; allow only rounding noise.
        require(inertia <= prev + 1e-9 * (1.0 + prev), ErrorKind::Runtime, "kmeans: inertia increased");
        model.inertia_trace.push_back(inertia);
        if (shift < opts.tol) break;
    }
    model.inertia = inertia;
    return model;
}

}  // namespace capforge
