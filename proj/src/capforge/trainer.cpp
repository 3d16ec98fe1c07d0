// SPDX-License-Identifier: Apache-2.0
#include "capforge/trainer.hpp"

#include "capforge/error.hpp"
#include "capforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

namespace capforge {

namespace {

Vector row_of(const MatrixF& m, std::size_t i) { return m.row(static_cast<Eigen::Index>(i)).cast<double>().transpose(); }

Vector augmented_view(const EmbeddingDataset& ds, std::size_t i, double noise, Rng& rng) {
    if (ds.image_features_aug) return row_of(*ds.image_features_aug, i);
    std::normal_distribution<double> gauss(0.0, noise);
    Vector v = row_of(ds.image_features, i);
    for (auto& x : v) x += gauss(rng);
    return v.normalized();
}

void sgd_step(Matrix& w, Matrix& velocity, const Matrix& grad, double lr, const TrainConfig& cfg) {
    velocity = cfg.momentum * velocity + grad + cfg.weight_decay * w;
    w -= lr * velocity;
}

std::vector<int> true_labels(const EmbeddingDataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.labels[i]);
    return out;
}

}  // namespace

Predictions predict(const AdapterModel& model, const EmbeddingDataset& ds, const std::vector<std::size_t>& samples,
                    Branch branch) {
    const Matrix text_out = text_forward(model, ds.texts(), branch != Branch::Inference);
    Predictions p;
    p.probs = row_softmax(batch_logits(model, text_out, ds.rows(samples), branch));
    for (Eigen::Index r = 0; r < p.probs.rows(); ++r) {
        const Vector row = p.probs.row(r).transpose();
        const std::size_t c = argmax(row);
        p.pred.push_back(static_cast<int>(c));
        p.confidence.push_back(row(static_cast<Eigen::Index>(c)));
    }
    return p;
}

std::vector<ConfidentSample> fixmatch_pseudolabel(const AdapterModel& model, const Matrix& text_features,
                                                  const EmbeddingDataset& ds, const std::vector<std::size_t>& batch,
                                                  double tau) {
    std::vector<ConfidentSample> kept;
    if (batch.empty()) return kept;
    const Matrix text_out = text_forward(model, text_features, true);
    const Matrix probs = row_softmax(batch_logits(model, text_out, ds.rows(batch), Branch::Main));
    for (std::size_t r = 0; r < batch.size(); ++r) {
        const Vector row = probs.row(static_cast<Eigen::Index>(r)).transpose();
        const std::size_t c = argmax(row);
        const double conf = row(static_cast<Eigen::Index>(c));
        if (conf >= tau) kept.push_back({batch[r], static_cast<int>(c), conf});
    }
    return kept;
}

double learning_rate(const TrainConfig& cfg, int epoch, std::size_t step, std::size_t steps_in_epoch) {
    if (epoch == 0) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(std::max<std::size_t>(1, steps_in_epoch));
    const int annealed = std::max(1, cfg.epochs - 1);
    const double progress = static_cast<double>(epoch - 1) / static_cast<double>(annealed);
    return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainState make_train_state(const EmbeddingDataset& ds, const PseudolabelSet& pl, const std::vector<int>& pl_classes) {
    TrainState st;
    st.pl = pl;
    st.pl_classes = pl_classes;
    st.labeled = ds.splits.train_labeled;
    std::sort(st.labeled.begin(), st.labeled.end());
    std::set<std::size_t> taken(st.labeled.begin(), st.labeled.end());
    for (const auto& r : pl.records) taken.insert(r.sample);
    for (auto i : ds.train_pool())
        if (!taken.count(i)) st.unlabeled.push_back(i);
    st.unlabeled_initial = st.unlabeled.size();
    return st;
}

MarginState refresh_margin(const AdapterModel& model, const EmbeddingDataset& ds, const PseudolabelSet& pl,
                           double base_scale, double tau) {
    const Matrix texts = ds.texts();
    const Matrix text_out = text_forward(model, texts, true);
    const std::size_t n_classes = ds.n_classes;
    const auto dim = static_cast<Eigen::Index>(ds.dim);

    std::vector<Vector> sums(n_classes, Vector::Zero(dim));
    std::vector<std::size_t> counts(n_classes, 0);
    std::vector<std::pair<int, double>> preds;
    preds.reserve(pl.records.size());
    for (const auto& r : pl.records) {
        const Vector u = visual_forward(model, row_of(ds.image_features, r.sample), Branch::Main);
        sums[static_cast<std::size_t>(r.class_id)] += u;
        ++counts[static_cast<std::size_t>(r.class_id)];
        const Vector p = softmax(model.gamma * (text_out * u));
        const std::size_t c = argmax(p);
        preds.emplace_back(static_cast<int>(c), p(static_cast<Eigen::Index>(c)));
    }
    for (auto i : ds.splits.train_labeled) {
        const auto c = static_cast<std::size_t>(ds.labels[i]);
        sums[c] += visual_forward(model, row_of(ds.image_features, i), Branch::Main);
        ++counts[c];
    }

    std::map<int, Matrix> by_class;
    for (std::size_t c = 0; c < n_classes; ++c) {
        Matrix m(1, dim);
        // classes with no pseudolabeled or labeled sample fall back to their text output
        m.row(0) = counts[c] > 0 ? Vector(sums[c] / static_cast<double>(counts[c])).transpose()
                                 : Vector(text_out.row(static_cast<Eigen::Index>(c)).transpose()).transpose();
        if (m.row(0).norm() == 0.0) m.row(0) = text_out.row(static_cast<Eigen::Index>(c));
        by_class.emplace(static_cast<int>(c), std::move(m));
    }
    const Prototypes protos = class_prototypes(by_class, text_out);
    const Matrix s = similarity_matrix(protos.visual, protos.text);
    return build_margin_state(s, tendency_stats(preds, tau, n_classes), base_scale, tau);
}

EpochStats train_epoch(AdapterModel& model, ModelGrads& velocity, TrainState& state, const EmbeddingDataset& ds,
                       const MarginState& margin, const TrainConfig& cfg, int epoch) {
    require(cfg.batch_size > 0, ErrorKind::InvalidArgument, "train_epoch: batch_size must be positive");
    const Matrix texts = ds.texts();
    const std::size_t b = cfg.batch_size;
    const auto& records = state.pl.records;

    std::vector<std::size_t> pl_order(records.size());
    std::iota(pl_order.begin(), pl_order.end(), 0);
    Rng batch_rng = substream(cfg.seed, "batching", static_cast<std::uint64_t>(epoch));
    shuffle(pl_order.begin(), pl_order.end(), batch_rng);
    std::vector<std::size_t> ul_order = state.unlabeled;
    shuffle(ul_order.begin(), ul_order.end(), batch_rng);
    std::vector<std::size_t> l_order = state.labeled;
    shuffle(l_order.begin(), l_order.end(), batch_rng);
    Rng aug_rng = substream(cfg.seed, "augment", static_cast<std::uint64_t>(epoch));

    const bool use_labeled = cfg.paradigm != Paradigm::UL && !l_order.empty();
    const std::size_t steps = (records.size() + b - 1) / b;
    EpochStats st;
    st.epoch = epoch + 1;
    st.steps = steps;
    double sum_pl = 0.0, sum_ul = 0.0, sum_l = 0.0;
    std::size_t n_pl = 0, n_l = 0;
    std::size_t ul_cursor = 0, l_cursor = 0;

    for (std::size_t step = 0; step < steps; ++step) {
        const double lr = learning_rate(cfg, epoch, step, steps);
        st.lr = lr;

        const std::size_t lo = step * b, hi = std::min(records.size(), lo + b);
        Matrix pl_x(static_cast<Eigen::Index>(hi - lo), static_cast<Eigen::Index>(ds.dim));
        std::vector<int> pl_y;
        for (std::size_t r = lo; r < hi; ++r) {
            const auto& rec = records[pl_order[r]];
            pl_x.row(static_cast<Eigen::Index>(r - lo)) = ds.image_features.row(static_cast<Eigen::Index>(rec.sample)).cast<double>();
            pl_y.push_back(rec.class_id);
        }

        std::vector<std::size_t> ul_batch;
        for (std::size_t r = 0; r < b && !ul_order.empty() && r < ul_order.size(); ++r) {
            ul_batch.push_back(ul_order[ul_cursor]);
            ul_cursor = (ul_cursor + 1) % ul_order.size();
        }
        const auto kept = fixmatch_pseudolabel(model, texts, ds, ul_batch, cfg.tau);
        st.ul_seen += ul_batch.size();
        st.ul_kept += kept.size();
        Matrix ul_x(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(ds.dim));
        std::vector<int> ul_y;
        for (std::size_t r = 0; r < kept.size(); ++r) {
            ul_x.row(static_cast<Eigen::Index>(r)) = augmented_view(ds, kept[r].sample, cfg.aug_noise, aug_rng).transpose();
            ul_y.push_back(kept[r].label);
        }

        std::vector<std::size_t> l_batch;
        if (use_labeled) {
            for (std::size_t r = 0; r < b && r < l_order.size(); ++r) {
                l_batch.push_back(l_order[l_cursor]);
                l_cursor = (l_cursor + 1) % l_order.size();
            }
        }
        const Matrix l_x = ds.rows(l_batch);

        ModelGrads g = ModelGrads::zeros(ds.dim);
        const double lpl = loss_and_grad(model, texts, {{&pl_x, pl_y, Branch::Main}}, margin.margin, &g);
        const double lul = loss_and_grad(model, texts, {{&ul_x, ul_y, Branch::Pseudo}}, margin.margin, &g);
        const double ll = use_labeled ? loss_and_grad(model, texts, {{&l_x, true_labels(ds, l_batch), Branch::Main}}, margin.margin, &g) : 0.0;
        require(std::isfinite(lpl) && std::isfinite(lul) && std::isfinite(ll), ErrorKind::Numeric,
                "training diverged: loss is not finite at epoch " + std::to_string(epoch + 1));

        sum_pl += lpl * static_cast<double>(pl_y.size());
        n_pl += pl_y.size();
        sum_ul += lul * static_cast<double>(ul_y.size());
        sum_l += ll * static_cast<double>(l_batch.size());
        n_l += l_batch.size();

        sgd_step(model.trunk_img, velocity.trunk_img, g.trunk_img, lr, cfg);
        sgd_step(model.trunk_txt, velocity.trunk_txt, g.trunk_txt, lr, cfg);
        sgd_step(model.main_adapter, velocity.main_adapter, g.main_adapter, lr, cfg);
        sgd_step(model.pseudo_adapter, velocity.pseudo_adapter, g.pseudo_adapter, lr, cfg);
        sgd_step(model.text_adapter, velocity.text_adapter, g.text_adapter, lr, cfg);
    }

    st.loss_pl = n_pl ? sum_pl / static_cast<double>(n_pl) : 0.0;
    st.loss_ul = st.ul_kept ? sum_ul / static_cast<double>(st.ul_kept) : 0.0;
    st.loss_l = n_l ? sum_l / static_cast<double>(n_l) : 0.0;
    st.loss_total = st.loss_pl + st.loss_ul + st.loss_l;
    return st;
}

std::size_t grow_pl(const AdapterModel& model, TrainState& state, const EmbeddingDataset& ds, const TrainConfig& cfg) {
    if (cfg.growth_every <= 0 || state.unlabeled.empty() || state.pl_classes.empty()) return 0;
    const std::size_t events = static_cast<std::size_t>(cfg.epochs / cfg.growth_every);
    if (events == 0) return 0;
    const std::size_t quota = state.unlabeled_initial / (events * state.pl_classes.size());
    if (quota == 0) return 0;

    const Predictions p = predict(model, ds, state.unlabeled, Branch::Main);
    std::set<int> eligible(state.pl_classes.begin(), state.pl_classes.end());
    std::map<int, std::vector<std::size_t>> by_class; // positions into state.unlabeled
    for (std::size_t r = 0; r < state.unlabeled.size(); ++r)
        if (eligible.count(p.pred[r])) by_class[p.pred[r]].push_back(r);

    std::vector<std::size_t> moved;
    for (auto& [c, rows] : by_class) {
        std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return p.confidence[a] > p.confidence[b]; });
        if (rows.size() > quota) rows.resize(quota);
        for (auto r : rows) {
            state.pl.records.push_back({state.unlabeled[r], c, p.confidence[r], PlSource::Growth});
            moved.push_back(state.unlabeled[r]);
        }
    }
    std::sort(moved.begin(), moved.end());
    std::vector<std::size_t> rest;
    std::set_difference(state.unlabeled.begin(), state.unlabeled.end(), moved.begin(), moved.end(), std::back_inserter(rest));
    state.unlabeled = std::move(rest);
    return moved.size();
}

namespace {

void fill_eval_stats(EpochStats& st, const AdapterModel& model, const EmbeddingDataset& ds, const TrainState& state) {
    st.pl_size = state.pl.size();
    st.ul_size = state.unlabeled.size();
    std::size_t known = 0, correct = 0;
    for (const auto& r : state.pl.records) {
        const int truth = ds.labels[r.sample];
        if (truth == kUnknownLabel) continue;
        ++known;
        correct += truth == r.class_id;
    }
    if (known) st.pl_accuracy = static_cast<double>(correct) / static_cast<double>(known);

    const auto test = ds.test_indices();
    const Predictions p = predict(model, ds, test);
    st.pred_counts.assign(ds.n_classes, 0);
    std::size_t tk = 0, tc = 0;
    for (std::size_t r = 0; r < test.size(); ++r) {
        ++st.pred_counts[static_cast<std::size_t>(p.pred[r])];
        const int truth = ds.labels[test[r]];
        if (truth == kUnknownLabel) continue;
        ++tk;
        tc += truth == p.pred[r];
    }
    if (tk) st.test_accuracy = static_cast<double>(tc) / static_cast<double>(tk);
}

}  // namespace

TrainResult run_training(const EmbeddingDataset& ds, const PseudolabelSet& pl, const std::vector<int>& pl_classes,
                         const TrainConfig& cfg) {
    require(cfg.epochs >= 0, ErrorKind::InvalidArgument, "run_training: epochs must be >= 0");
    require(!pl.records.empty() || cfg.epochs == 0, ErrorKind::InvalidArgument, "run_training: empty pseudolabel set");
    if (cfg.paradigm != Paradigm::UL)
        require(!ds.splits.train_labeled.empty(), ErrorKind::InvalidArgument,
                "run_training: " + to_string(cfg.paradigm) + " requires labeled training samples");
    if (cfg.paradigm == Paradigm::TRZSL)
        require(!ds.splits.seen_classes.empty(), ErrorKind::InvalidArgument, "run_training: trzsl requires a seen/unseen class split");

    TrainResult res{AdapterModel::zero_init(ds.dim, cfg.gamma), make_train_state(ds, pl, pl_classes), {}, {}};
    ModelGrads velocity = ModelGrads::zeros(ds.dim);

    EpochStats init;
    fill_eval_stats(init, res.model, ds, res.state);
    res.log.push_back(init);

    for (int e = 0; e < cfg.epochs; ++e) {
        MarginState margin = refresh_margin(res.model, ds, res.state.pl, cfg.margin_scale, cfg.tau);
        EpochStats st = train_epoch(res.model, velocity, res.state, ds, margin, cfg, e);
        st.big_delta = margin.big_delta;
        if (cfg.growth_every > 0 && (e + 1) % cfg.growth_every == 0) st.grown = grow_pl(res.model, res.state, ds, cfg);
        fill_eval_stats(st, res.model, ds, res.state);
        res.margins.push_back(std::move(margin));
        res.log.push_back(std::move(st));
    }
    return res;
}

}  // namespace capforge
