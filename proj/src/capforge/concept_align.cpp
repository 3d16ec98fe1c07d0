// SPDX-License-Identifier: Apache-2.0
#include "capforge/concept_align.hpp"

#include "capforge/error.hpp"
#include "capforge/kmeans.hpp"
#include "capforge/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace capforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string description_prompt(const std::string& class_name) {
    return "Please describe the most distinguishing visual features of " + class_name + ", in one sentence.";
}

FileDescriptionProvider::FileDescriptionProvider(const fs::path& file, std::size_t dim) {
    require(fs::exists(file), ErrorKind::MissingFile, "missing file: " + file.string());
    json arr;
    try {
        std::ifstream in(file);
        arr = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, file.filename().string() + ": " + e.what());
    }
    require(arr.is_array(), ErrorKind::Format, file.filename().string() + ": expected a JSON array");
    try {
        for (const auto& item : arr) {
            DescriptionCandidate c;
            c.text = item.at("text").get<std::string>();
            auto emb = item.at("embedding").get<std::vector<double>>();
            require(emb.size() == dim, ErrorKind::Format,
                    "description embedding has dimension " + std::to_string(emb.size()) + ", expected " + std::to_string(dim));
            c.embedding = Eigen::Map<const Vector>(emb.data(), static_cast<Eigen::Index>(emb.size()));
            double n = c.embedding.norm();
            require(n > 0.0, ErrorKind::Format, "description embedding is a zero vector");
            c.embedding /= n;
            by_class_[item.at("class_name").get<std::string>()].push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, file.filename().string() + ": " + e.what());
    }
}

std::vector<DescriptionCandidate> FileDescriptionProvider::fetch(int class_id, const std::string& class_name, std::size_t n) {
    require(n >= 1, ErrorKind::InvalidArgument, "provider_fetch: n must be >= 1");
    auto it = by_class_.find(class_name);
    const std::size_t have = it == by_class_.end() ? 0 : it->second.size();
    require(have >= n, ErrorKind::InvalidArgument,
            "insufficient candidates for '" + class_name + "': have " + std::to_string(have) + ", need " + std::to_string(n));
    std::vector<DescriptionCandidate> out(it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(n));
    for (auto& c : out) c.class_id = class_id;
    return out;
}

std::vector<DescriptionCandidate> MockDescriptionProvider::fetch(int class_id, const std::string& class_name, std::size_t n) {
    require(n >= 1, ErrorKind::InvalidArgument, "provider_fetch: n must be >= 1");
    std::vector<DescriptionCandidate> out;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t q = 0; q < n; ++q) {
        Rng rng(splitmix64(fnv1a(class_name) ^ splitmix64(seed_) ^ splitmix64(q + 1)));
        DescriptionCandidate c;
        c.class_id = class_id;
        c.text = "mock description " + std::to_string(q) + " of " + class_name;
        c.embedding.resize(static_cast<Eigen::Index>(dim_));
        for (auto& v : c.embedding) v = gauss(rng);
        c.embedding.normalize();
        out.push_back(std::move(c));
    }
    return out;
}

DescriptionCandidate select_optimal_description(const std::vector<DescriptionCandidate>& candidates, const Matrix& remaining,
                                                std::uint64_t seed) {
    require(!candidates.empty(), ErrorKind::InvalidArgument, "select_optimal_description: no candidates");
    if (candidates.size() == 1) return candidates.front();
    require(remaining.rows() > 0, ErrorKind::InvalidArgument, "select_optimal_description: no remaining image features");
    require(static_cast<std::size_t>(remaining.rows()) >= candidates.size(), ErrorKind::InvalidArgument,
            "select_optimal_description: fewer remaining samples than candidates");

    KMeansOptions km;
    km.seed = seed;
    const ClusterModel clusters = kmeans(remaining, candidates.size(), km);
    Matrix cand(static_cast<Eigen::Index>(candidates.size()), remaining.cols());
    for (std::size_t i = 0; i < candidates.size(); ++i) cand.row(static_cast<Eigen::Index>(i)) = candidates[i].embedding.transpose();
    const Matrix probs = row_softmax(cosine_matrix(cand, clusters.centroids));

    Eigen::Index bi = 0, bj = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        for (Eigen::Index j = 0; j < probs.cols(); ++j)
            if (probs(i, j) > probs(bi, bj)) {
                bi = i;
                bj = j;
            }
    return candidates[static_cast<std::size_t>(bi)];
}

std::string to_string(PlSource s) {
    switch (s) {
        case PlSource::Alignment: return "alignment";
        case PlSource::TopkConfidence: return "topk-confidence";
        case PlSource::Growth: return "growth";
    }
    return "topk-confidence";
}

PlSource parse_pl_source(const std::string& s) {
    if (s == "alignment") return PlSource::Alignment;
    if (s == "topk-confidence") return PlSource::TopkConfidence;
    if (s == "growth") return PlSource::Growth;
    fail(ErrorKind::Format, "unknown pseudolabel source '" + s + "'");
}

std::vector<std::size_t> topk_by_confidence(const ZeroShot& zs, const std::vector<std::size_t>& pool, int c, std::size_t k) {
    std::vector<std::size_t> predicted, rest;
    for (auto i : pool) (zs.pred[i] == c ? predicted : rest).push_back(i);
    std::stable_sort(predicted.begin(), predicted.end(),
                     [&](std::size_t a, std::size_t b) { return zs.confidence[a] > zs.confidence[b]; });
    if (predicted.size() >= k) {
        predicted.resize(k);
        return predicted;
    }
    const auto col = static_cast<Eigen::Index>(c);
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
        return zs.probs(static_cast<Eigen::Index>(a), col) > zs.probs(static_cast<Eigen::Index>(b), col);
    });
    for (std::size_t r = 0; r < rest.size() && predicted.size() < k; ++r) predicted.push_back(rest[r]);
    return predicted;
}

std::vector<std::size_t> topk_by_similarity(const EmbeddingDataset& ds, const std::vector<std::size_t>& pool,
                                            const Vector& direction, std::size_t k, std::vector<double>* scores) {
    std::vector<double> sim(pool.size());
    for (std::size_t r = 0; r < pool.size(); ++r)
        sim[r] = cosine_sim(Vector(ds.image_features.row(static_cast<Eigen::Index>(pool[r])).cast<double>().transpose()), direction);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    if (order.size() > k) order.resize(k);
    std::vector<std::size_t> out;
    for (auto r : order) {
        out.push_back(pool[r]);
        if (scores) scores->push_back(sim[r]);
    }
    return out;
}

PseudolabelSet build_initial_pl(const EmbeddingDataset& ds, const MismatchReport& report,
                                const std::map<int, DescriptionCandidate>& enhanced, const PseudolabelOptions& opts) {
    require(opts.k >= 1, ErrorKind::InvalidArgument, "build_initial_pl: k must be >= 1");
    std::vector<std::size_t> pool = opts.pool.empty() ? ds.train_pool() : opts.pool;
    require(opts.k <= pool.size(), ErrorKind::InvalidArgument, "build_initial_pl: k exceeds the number of samples");
    std::set<int> mm(report.y_mm.begin(), report.y_mm.end());
    for (int c : mm)
        require(enhanced.count(c), ErrorKind::InvalidArgument, "build_initial_pl: no enhanced description for class " + std::to_string(c));
    for (const auto& [c, _] : enhanced)
        require(mm.count(c), ErrorKind::InvalidArgument, "build_initial_pl: enhanced description for non-mismatched class " + std::to_string(c));

    std::vector<int> classes = opts.classes;
    if (classes.empty()) {
        classes.resize(ds.n_classes);
        std::iota(classes.begin(), classes.end(), 0);
    }

    const ZeroShot zs = zero_shot_predict(ds, opts.gamma);
    PseudolabelSet pl;
    pl.k = opts.k;
    for (int c : classes) {
        if (mm.count(c)) {
            std::vector<double> scores;
            auto picked = topk_by_similarity(ds, pool, enhanced.at(c).embedding, opts.k, &scores);
            for (std::size_t r = 0; r < picked.size(); ++r)
                pl.records.push_back({picked[r], c, scores[r], PlSource::Alignment});
        } else {
            for (auto i : topk_by_confidence(zs, pool, c, opts.k))
                pl.records.push_back({i, c, zs.probs(static_cast<Eigen::Index>(i), c), PlSource::TopkConfidence});
        }
    }
    return pl;
}

}  // namespace capforge
