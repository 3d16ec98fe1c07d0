// SPDX-License-Identifier: Apache-2.0
#include "capforge/error.hpp"
#include "capforge/mismatch.hpp"
#include "capforge/synth.hpp"
#include "capforge/trainer.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

using namespace capforge;

namespace {

struct Fixture {
    SynthOutput out;
    PseudolabelSet pl;
    std::vector<int> classes;

    explicit Fixture(std::uint64_t seed = 7, std::size_t k = 16) {
        SynthSpec s;
        s.seed = seed;
        s.n_mismatch = 2;
        s.n_confusion_pairs = 2;
        out = generate(s);
        MismatchReport rep;
        rep.y_mm = out.truth.mismatched;
        std::map<int, DescriptionCandidate> enh;
        for (int c : rep.y_mm) enh[c] = DescriptionCandidate{c, "x", out.truth.centers.row(c).transpose()};
        pl = build_initial_pl(out.dataset, rep, enh, {.k = k});
        for (std::size_t c = 0; c < out.dataset.n_classes; ++c) classes.push_back(static_cast<int>(c));
    }
};

TrainConfig quick(int epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("defaults") {
    const TrainConfig cfg;
    CHECK(cfg.epochs == 50);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.lr == 0.01);
    CHECK(cfg.momentum == 0.9);
    CHECK(cfg.weight_decay == 0.1);
    CHECK(cfg.tau == 0.85);
    CHECK(cfg.k == 16);
    CHECK(cfg.margin_scale == 12.0);
    CHECK(cfg.growth_every == 5);
    CHECK(defaults::kTauAircraft == 0.5);
    CHECK(defaults::kTopKFlowers == 6);
    CHECK(defaults::kQueryTimes == 5);
}

TEST_CASE("learning rate: linear warmup then cosine annealing") {
    const TrainConfig cfg = quick(50);
    CHECK(learning_rate(cfg, 0, 0, 10) == doctest::Approx(0.001));
    CHECK(learning_rate(cfg, 0, 9, 10) == doctest::Approx(0.01));
    CHECK(learning_rate(cfg, 1, 0, 10) == doctest::Approx(0.01));
    CHECK(learning_rate(cfg, 25, 3, 10) == doctest::Approx(0.005 * (1 + std::cos(std::numbers::pi * 24.0 / 49.0))));
    CHECK(learning_rate(cfg, 49, 0, 10) == doctest::Approx(0.005 * (1 + std::cos(std::numbers::pi * 48.0 / 49.0))));
    CHECK(learning_rate(cfg, 49, 0, 10) < 1.1e-5);
}

TEST_CASE("confidence threshold filters unlabeled samples") {
    Fixture f;
    const auto& ds = f.out.dataset;
    const auto model = AdapterModel::zero_init(ds.dim, 100.0);
    const auto batch = ds.train_pool();
    const auto zs = zero_shot_predict(ds);

    const auto kept = fixmatch_pseudolabel(model, ds.texts(), ds, batch, 0.85);
    std::size_t oracle = 0;
    for (auto i : batch) oracle += zs.confidence[i] >= 0.85;
    CHECK(kept.size() == oracle);
    for (const auto& k : kept) {
        CHECK(k.confidence >= 0.85);
        CHECK(k.label == zs.pred[k.sample]);
    }
    CHECK(fixmatch_pseudolabel(model, ds.texts(), ds, batch, 1.01).empty());
    CHECK(fixmatch_pseudolabel(model, ds.texts(), ds, batch, 0.0).size() == batch.size());
}

TEST_CASE("lr = 0 leaves the model unchanged and reports the initial loss") {
    Fixture f;
    const auto& ds = f.out.dataset;
    TrainConfig cfg = quick(1);
    cfg.lr = 0.0;
    AdapterModel model = AdapterModel::zero_init(ds.dim, cfg.gamma);
    ModelGrads vel = ModelGrads::zeros(ds.dim);
    TrainState st = make_train_state(ds, f.pl, f.classes);
    const MarginState zero = MarginState::zeros(ds.n_classes);
    const auto stats = train_epoch(model, vel, st, ds, zero, cfg, 0);
    const auto init = AdapterModel::zero_init(ds.dim, cfg.gamma);
    CHECK(model.trunk_img == init.trunk_img);
    CHECK(model.main_adapter == init.main_adapter);
    CHECK(model.text_adapter == init.text_adapter);

    const auto zs = zero_shot_predict(ds);
    double expected = 0;
    for (const auto& r : f.pl.records) expected += -std::log(zs.probs(static_cast<Eigen::Index>(r.sample), r.class_id));
    expected /= static_cast<double>(f.pl.size());
    CHECK(stats.loss_pl == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("loss composition by paradigm") {
    Fixture f;
    auto ds = f.out.dataset;
    TrainConfig cfg = quick(1);
    AdapterModel model = AdapterModel::zero_init(ds.dim, cfg.gamma);
    ModelGrads vel = ModelGrads::zeros(ds.dim);
    TrainState st = make_train_state(ds, f.pl, f.classes);
    auto ul = train_epoch(model, vel, st, ds, MarginState::zeros(ds.n_classes), cfg, 0);
    CHECK(ul.loss_l == 0.0);
    CHECK(ul.loss_total == doctest::Approx(ul.loss_pl + ul.loss_ul));

    ds.splits = make_ssl_split(ds, 2, 3);
    cfg.paradigm = Paradigm::SSL;
    model = AdapterModel::zero_init(ds.dim, cfg.gamma);
    vel = ModelGrads::zeros(ds.dim);
    st = make_train_state(ds, f.pl, f.classes);
    auto ssl = train_epoch(model, vel, st, ds, MarginState::zeros(ds.n_classes), cfg, 0);
    CHECK(ssl.loss_l > 0.0);
    CHECK(ssl.loss_total == doctest::Approx(ssl.loss_pl + ssl.loss_ul + ssl.loss_l));
}

TEST_CASE("growth moves the top-confidence samples per predicted class") {
    Fixture f;
    const auto& ds = f.out.dataset;
    TrainConfig cfg = quick(50);
    const auto trained = run_training(ds, f.pl, f.classes, quick(3)).model;
    TrainState st = make_train_state(ds, f.pl, f.classes);
    const auto before = st.unlabeled;
    const std::size_t quota = st.unlabeled_initial / (10 * ds.n_classes);

    // oracle: full confidence table, then per-class sort
    const Matrix text_out = text_forward(trained, ds.texts(), true);
    std::vector<std::vector<std::pair<double, std::size_t>>> table(ds.n_classes);
    for (auto i : before) {
        const Vector p = softmax(trained.gamma * (text_out * visual_forward(trained, ds.image_features.row(static_cast<Eigen::Index>(i)).cast<double>().transpose(), Branch::Main)));
        const std::size_t c = argmax(p);
        table[c].push_back({p(static_cast<Eigen::Index>(c)), i});
    }
    std::set<std::size_t> expected;
    for (auto& rows : table) {
        std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t r = 0; r < std::min(quota, rows.size()); ++r) expected.insert(rows[r].second);
    }

    const std::size_t added = grow_pl(trained, st, ds, cfg);
    std::set<std::size_t> got;
    for (const auto& r : st.pl.records)
        if (r.source == PlSource::Growth) got.insert(r.sample);
    CHECK(added == expected.size());
    CHECK(got == expected);
    for (auto i : st.unlabeled) CHECK(got.count(i) == 0);
    CHECK(st.unlabeled.size() + added == before.size());
}

TEST_CASE("growth with an exhausted pool adds nothing") {
    Fixture f;
    const auto& ds = f.out.dataset;
    TrainState st = make_train_state(ds, f.pl, f.classes);
    st.unlabeled.clear();
    CHECK(grow_pl(AdapterModel::zero_init(ds.dim, 100), st, ds, quick(50)) == 0);
}

TEST_CASE("growth schedule over a full run") {
    Fixture f;
    const auto& ds = f.out.dataset;
    const auto res = run_training(ds, f.pl, f.classes, quick(50));
    REQUIRE(res.log.size() == 51);
    const std::size_t ul0 = make_train_state(ds, f.pl, f.classes).unlabeled_initial;
    std::size_t total = 0;
    for (int e = 1; e <= 50; ++e) {
        const auto& st = res.log[static_cast<std::size_t>(e)];
        if (e % 5 == 0) {
            CHECK(st.grown <= ul0 / 10);
        } else {
            CHECK(st.grown == 0);
        }
        total += st.grown;
        CHECK(st.pl_size + st.ul_size == f.pl.size() + ul0);
    }
    CHECK(total <= ul0);
    CHECK(res.state.pl.size() == f.pl.size() + total);
    std::set<std::size_t> pl_samples;
    for (const auto& r : res.state.pl.records) pl_samples.insert(r.sample);
    for (auto i : res.state.unlabeled) CHECK(pl_samples.count(i) == 0);
}

TEST_CASE("zero epochs returns the zero-shot model") {
    Fixture f;
    const auto& ds = f.out.dataset;
    const auto res = run_training(ds, f.pl, f.classes, quick(0));
    CHECK(res.log.size() == 1);
    const auto zs = zero_shot_predict(ds);
    std::vector<std::size_t> counts(ds.n_classes, 0);
    for (auto i : ds.test_indices()) ++counts[static_cast<std::size_t>(zs.pred[i])];
    CHECK(res.log[0].pred_counts == counts);
    CHECK(res.model.trunk_img.isZero(0));
}

TEST_CASE("training is deterministic") {
    Fixture f;
    const auto& ds = f.out.dataset;
    const auto a = run_training(ds, f.pl, f.classes, quick(6));
    const auto b = run_training(ds, f.pl, f.classes, quick(6));
    CHECK(a.model.trunk_img == b.model.trunk_img);
    CHECK(a.model.main_adapter == b.model.main_adapter);
    CHECK(a.model.text_adapter == b.model.text_adapter);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss_total == b.log[i].loss_total);
        CHECK(a.log[i].pred_counts == b.log[i].pred_counts);
    }
    auto other = quick(6);
    other.seed = 6;
    const auto c = run_training(ds, f.pl, f.classes, other);
    CHECK(c.model.trunk_img != a.model.trunk_img);
}

TEST_CASE("margin refresh falls back to the text output for an empty class") {
    Fixture f;
    const auto& ds = f.out.dataset;
    PseudolabelSet only;
    for (const auto& r : f.pl.records)
        if (r.class_id != 4) only.records.push_back(r);
    const auto m = refresh_margin(AdapterModel::zero_init(ds.dim, 100), ds, only, 12.0, 0.85);
    CHECK(m.margin.rows() == static_cast<Eigen::Index>(ds.n_classes));
    // sigma counts confident predictions, so class 4 can still collect some
    const auto zs = zero_shot_predict(ds);
    std::size_t predicted4 = 0;
    for (const auto& r : only.records) predicted4 += zs.pred[r.sample] == 4 && zs.confidence[r.sample] >= 0.85;
    CHECK(m.sigma[4] == predicted4);
    CHECK(m.delta[4] > 0.0);
    CHECK(m.margin.allFinite());
}

TEST_CASE("invalid training configurations") {
    Fixture f;
    const auto& ds = f.out.dataset;
    auto cfg = quick(-1);
    CHECK_THROWS_AS(run_training(ds, f.pl, f.classes, cfg), Error);
    cfg = quick(2);
    cfg.paradigm = Paradigm::SSL;
    CHECK_THROWS_AS(run_training(ds, f.pl, f.classes, cfg), Error);
    CHECK_THROWS_AS(run_training(ds, PseudolabelSet{}, f.classes, quick(2)), Error);
}
