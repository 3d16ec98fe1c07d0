// SPDX-License-Identifier: Apache-2.0
#include "capforge/synth.hpp"

#include "capforge/error.hpp"
#include "capforge/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace capforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vector random_unit(std::size_t dim, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v(static_cast<Eigen::Index>(dim));
    for (auto& x : v) x = gauss(rng);
    return v.normalized();
}

// Unit vector orthogonal to every row of `basis` (Gram-Schmidt on a random draw).
Vector orthogonal_unit(const Matrix& basis, std::size_t dim, Rng& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        Vector v = random_unit(dim, rng);
        std::vector<Vector> q;
        for (Eigen::Index r = 0; r < basis.rows(); ++r) {
            Vector b = basis.row(r).transpose();
            for (const auto& e : q) b -= e * e.dot(b);
            if (b.norm() > 1e-9) q.push_back(b.normalized());
        }
        for (const auto& e : q) v -= e * e.dot(v);
        if (v.norm() > 1e-6) return v.normalized();
    }
    fail(ErrorKind::InvalidArgument, "synth: dimension too small for an orthogonal text feature");
}

Vector slerp(const Vector& a, const Vector& b, double t) {
    const double theta = std::acos(std::clamp(a.dot(b), -1.0, 1.0));
    if (theta < 1e-12) return a;
    return ((std::sin((1.0 - t) * theta) * a + std::sin(t * theta) * b) / std::sin(theta)).normalized();
}

Vector noisy_unit(const Vector& center, double std, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, std);
    Vector v = center;
    for (auto& x : v) x += gauss(rng);
    return v.normalized();
}

}  // namespace

SynthOutput generate(const SynthSpec& spec) {
    const std::size_t C = spec.n_classes, D = spec.dim;
    require(C >= 2 && D >= 2 && spec.per_class >= 1, ErrorKind::InvalidArgument, "synth: need C >= 2, D >= 2, per_class >= 1");
    require(spec.n_mismatch + 2 * spec.n_confusion_pairs <= C, ErrorKind::InvalidArgument,
            "synth: n_mismatch + 2 * confusion pairs exceeds the class count");
    require(C + spec.n_mismatch <= D || spec.n_mismatch == 0, ErrorKind::InvalidArgument,
            "synth: infeasible spec, mismatched text features need D > C");
    require(spec.confusion_bias >= 0.0 && spec.confusion_bias <= 1.0, ErrorKind::InvalidArgument, "synth: bias must be in [0, 1]");

    Rng rng = substream(spec.seed, "synth");
    const double max_cos = std::cos(spec.min_center_angle_deg * std::numbers::pi / 180.0);

    // Class centers with a minimum pairwise angle.
    Matrix centers(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(D));
    for (std::size_t c = 0; c < C; ++c) {
        for (int attempt = 0;; ++attempt) {
            require(attempt < 10000, ErrorKind::InvalidArgument, "synth: cannot place centers with the requested minimum angle");
            Vector v = random_unit(D, rng);
            bool ok = true;
            for (std::size_t p = 0; p < c && ok; ++p) ok = centers.row(static_cast<Eigen::Index>(p)).dot(v) <= max_cos;
            if (ok) {
                centers.row(static_cast<Eigen::Index>(c)) = v.transpose();
                break;
            }
        }
    }

    // Which classes get which treatment, chosen by a seeded shuffle.
    std::vector<int> order(C);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    GroundTruth gt;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < spec.n_mismatch; ++i) gt.mismatched.push_back(order[cursor++]);
    for (std::size_t i = 0; i < spec.n_confusion_pairs; ++i) {
        ConfusionPair p;
        p.favored = order[cursor++];
        p.disfavored = order[cursor++];
        p.bias = spec.confusion_bias;
        gt.confusion_pairs.push_back(p);
    }
    std::sort(gt.mismatched.begin(), gt.mismatched.end());

    // Confused pairs: pull the disfavored center to the requested cosine from the favored one.
    for (const auto& p : gt.confusion_pairs) {
        const Vector a = centers.row(p.favored).transpose();
        Vector b = centers.row(p.disfavored).transpose();
        Vector orth = b - a * a.dot(b);
        orth.normalize();
        const double s = std::sqrt(std::max(0.0, 1.0 - spec.confusion_cos * spec.confusion_cos));
        centers.row(p.disfavored) = (spec.confusion_cos * a + s * orth).transpose();
    }
    gt.centers = centers;

    Matrix text = centers;
    for (int c : gt.mismatched) text.row(c) = orthogonal_unit(centers, D, rng).transpose();
    for (const auto& p : gt.confusion_pairs) {
        const Vector a = centers.row(p.favored).transpose();
        const Vector b = centers.row(p.disfavored).transpose();
        // The favored text slides along the great circle toward the disfavored
        // center, moving the zero-shot boundary into the disfavored cluster.
        text.row(p.favored) = slerp(a, b, p.bias).transpose();
        text.row(p.disfavored) = b.transpose();
    }

    const std::size_t per = spec.per_class + spec.test_per_class;
    const std::size_t N = C * per;
    EmbeddingDataset ds;
    ds.n_samples = N;
    ds.n_classes = C;
    ds.dim = D;
    ds.image_features.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(D));
    MatrixF aug(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(D));
    ds.labels.resize(N);
    Rng sample_rng = substream(spec.seed, "synth-samples");
    Rng aug_rng = substream(spec.seed, "synth-aug");
    std::size_t row = 0;
    // Samples are interleaved by class so that index order carries no label structure.
    for (std::size_t j = 0; j < per; ++j) {
        for (std::size_t c = 0; c < C; ++c, ++row) {
            const Vector x = noisy_unit(centers.row(static_cast<Eigen::Index>(c)).transpose(), spec.intra_class_std, sample_rng);
            ds.image_features.row(static_cast<Eigen::Index>(row)) = x.cast<float>().transpose();
            aug.row(static_cast<Eigen::Index>(row)) = noisy_unit(x, spec.aug_noise_std, aug_rng).cast<float>().transpose();
            ds.labels[row] = static_cast<int>(c);
            (j < spec.per_class ? ds.splits.train_unlabeled : ds.splits.test).push_back(row);
        }
    }
    ds.image_features_aug = aug;
    ds.text_features = text.cast<float>();
    for (std::size_t c = 0; c < C; ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "class_%02zu", c);
        ds.class_names.emplace_back(name);
    }

    SynthOutput out{std::move(ds), std::move(gt), {}};
    // Candidate descriptions: the true center with increasing noise, in shuffled order.
    Rng desc_rng = substream(spec.seed, "synth-descriptions");
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<DescriptionCandidate> cands;
        for (std::size_t q = 0; q < spec.n_descriptions; ++q) {
            DescriptionCandidate d;
            d.class_id = static_cast<int>(c);
            d.text = "synthetic description " + std::to_string(q) + " of " + out.dataset.class_names[c];
            const double noise = spec.description_noise * static_cast<double>(q + 1);
            d.embedding = noisy_unit(out.truth.centers.row(static_cast<Eigen::Index>(c)).transpose(), noise, desc_rng)
                              .cast<float>()
                              .cast<double>();
            cands.push_back(std::move(d));
        }
        shuffle(cands.begin(), cands.end(), desc_rng);
        for (auto& d : cands) out.descriptions.push_back(std::move(d));
    }
    return out;
}

std::vector<std::vector<int>> planted_groups(const GroundTruth& gt) {
    std::vector<std::vector<int>> groups;
    for (const auto& p : gt.confusion_pairs) groups.push_back({std::min(p.favored, p.disfavored), std::max(p.favored, p.disfavored)});
    std::sort(groups.begin(), groups.end());
    return groups;
}

void write_synth(const SynthOutput& out, const SynthSpec& spec, const fs::path& dir) {
    save_dataset(out.dataset, dir);

    json pairs = json::array();
    for (const auto& p : out.truth.confusion_pairs)
        pairs.push_back({{"favored", p.favored}, {"disfavored", p.disfavored}, {"bias", p.bias}});
    json gt = {{"mismatched", out.truth.mismatched},
               {"confusion_pairs", pairs},
               {"labels", out.dataset.labels},
               {"spec",
                {{"n_classes", spec.n_classes},
                 {"per_class", spec.per_class},
                 {"test_per_class", spec.test_per_class},
                 {"dim", spec.dim},
                 {"intra_class_std", spec.intra_class_std},
                 {"n_mismatch", spec.n_mismatch},
                 {"n_confusion_pairs", spec.n_confusion_pairs},
                 {"confusion_bias", spec.confusion_bias},
                 {"confusion_cos", spec.confusion_cos},
                 {"aug_noise_std", spec.aug_noise_std},
                 {"description_noise", spec.description_noise},
                 {"n_descriptions", spec.n_descriptions},
                 {"seed", spec.seed}}}};
    {
        std::ofstream f(dir / "ground_truth.json", std::ios::trunc);
        require(static_cast<bool>(f), ErrorKind::Runtime, "cannot write ground_truth.json");
        f << gt.dump(2) << '\n';
    }

    json desc = json::array();
    for (const auto& d : out.descriptions) {
        std::vector<float> emb(static_cast<std::size_t>(d.embedding.size()));
        for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = static_cast<float>(d.embedding(static_cast<Eigen::Index>(i)));
        desc.push_back({{"class_name", out.dataset.class_names[static_cast<std::size_t>(d.class_id)]}, {"text", d.text}, {"embedding", emb}});
    }
    std::ofstream f(dir / "descriptions.json", std::ios::trunc);
    require(static_cast<bool>(f), ErrorKind::Runtime, "cannot write descriptions.json");
    f << desc.dump(2) << '\n';
}

}  // namespace capforge
