// SPDX-License-Identifier: Apache-2.0
#include "capforge/config.hpp"
#include "capforge/error.hpp"
#include "capforge/pipeline.hpp"
#include "capforge/synth.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace capforge;

namespace {

struct Planted {
    SynthOutput out;
    PipelineConfig cfg;

    explicit Planted(std::uint64_t seed = 7) {
        cfg.synth.seed = seed;
        cfg.synth.n_mismatch = 2;
        cfg.synth.n_confusion_pairs = 2;
        cfg.train.seed = seed;
        cfg.t = 3;
        out = generate(cfg.synth);
    }
};

class MemoryProvider final : public DescriptionProvider {
public:
    explicit MemoryProvider(std::vector<DescriptionCandidate> d) : d_(std::move(d)) {}
    std::vector<DescriptionCandidate> fetch(int class_id, const std::string&, std::size_t n) override {
        std::vector<DescriptionCandidate> out;
        for (const auto& c : d_)
            if (c.class_id == class_id && out.size() < n) out.push_back(c);
        return out;
    }

private:
    std::vector<DescriptionCandidate> d_;
};

}  // namespace

TEST_CASE("config set, get and unknown keys") {
    PipelineConfig c;
    CHECK(c.get("epochs") == "50");
    CHECK(c.get("t") == "auto");
    CHECK(c.get("margin_scale") == "12");
    CHECK(c.get("aug_noise") == "0.05");
    c.set("epochs", "7");
    c.set("paradigm", "ssl");
    c.set("t", "4");
    c.set("seed", "19");
    CHECK(c.train.epochs == 7);
    CHECK(c.train.paradigm == Paradigm::SSL);
    CHECK(c.t == 4);
    CHECK(c.train.seed == 19);
    CHECK(c.synth.seed == 19);
    CHECK_THROWS_AS(c.set("nope", "1"), Error);
    CHECK_THROWS_AS(c.set("epochs", "many"), Error);
    CHECK_THROWS_AS(c.set("paradigm", "xyz"), Error);
    CHECK_THROWS_AS(c.get("nope"), Error);
    const auto j = c.to_json();
    CHECK(j.size() == PipelineConfig::keys().size());
}

TEST_CASE("config values round-trip through their text form") {
    PipelineConfig a;
    a.set("lr", "0.003");
    a.set("tau", "0.5");
    a.set("synth.confusion_bias", "0.65");
    PipelineConfig b;
    for (const auto& k : PipelineConfig::keys()) b.set(k, a.get(k));
    for (const auto& k : PipelineConfig::keys()) CHECK(b.get(k) == a.get(k));
    CHECK(b.train.lr == 0.003);
}

TEST_CASE("config file with sections, comments and quotes") {
    const auto kv = parse_kv_text("# top\nepochs = 3\n[synth]\nn_classes = 12 # trailing\n\ndescriptions_x = \"a # b\"\n");
    REQUIRE(kv.size() == 3);
    CHECK(kv[0] == std::pair<std::string, std::string>{"epochs", "3"});
    CHECK(kv[1] == std::pair<std::string, std::string>{"synth.n_classes", "12"});
    CHECK(kv[2].second == "a # b");
    CHECK_THROWS_AS(parse_kv_text("novalue\n"), Error);
    CHECK_THROWS_AS(parse_kv_text("[broken\n"), Error);

    testutil::TempDir dir;
    testutil::spit(dir / "c.toml", "epochs = 3\nlr = 0.02\n[synth]\nn_classes = 12\n");
    PipelineConfig c;
    c.load_file(dir / "c.toml");
    CHECK(c.train.epochs == 3);
    CHECK(c.synth.n_classes == 12);
    CHECK_THROWS_AS(c.load_file(dir / "missing.toml"), Error);
}

TEST_CASE("environment overrides the file, later calls override both") {
    testutil::TempDir dir;
    testutil::spit(dir / "c.toml", "epochs = 3\nlr = 0.02\n");
    PipelineConfig c;
    c.load_file(dir / "c.toml");
    const char* env[] = {"CAPFORGE_EPOCHS=9", "CAPFORGE_SYNTH_N_CLASSES=14", "UNRELATED=1", nullptr};
    c.apply_env(env);
    CHECK(c.train.epochs == 9);
    CHECK(c.train.lr == 0.02);
    CHECK(c.synth.n_classes == 14);
    c.set("epochs", "11");
    CHECK(c.train.epochs == 11);
    CHECK(env_name("synth.n_classes") == "CAPFORGE_SYNTH_N_CLASSES");
}

TEST_CASE("threshold rule") {
    PipelineConfig c;
    CHECK(effective_t(c, 45) == 5);
    CHECK(effective_t(c, 10) == 1);
    CHECK(effective_t(c, 102) == 11);
    c.t = 3;
    CHECK(effective_t(c, 45) == 3);
}

TEST_CASE("paradigm preparation") {
    Planted p;
    auto cfg = p.cfg;
    auto ul = prepare_paradigm(p.out.dataset, cfg);
    CHECK(ul.splits.train_labeled.empty());
    CHECK(ul.splits.train_unlabeled.size() == 600);

    cfg.train.paradigm = Paradigm::SSL;
    auto ssl = prepare_paradigm(p.out.dataset, cfg);
    CHECK(ssl.splits.train_labeled.size() == 20);
    CHECK(ssl.splits.test == p.out.dataset.splits.test);

    cfg.train.paradigm = Paradigm::TRZSL;
    try {
        prepare_paradigm(p.out.dataset, cfg);
        FAIL("expected a config conflict");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("config conflict") != std::string::npos);
    }
    auto with_split = p.out.dataset;
    with_split.splits = make_trzsl_split(with_split, 0.62, 7);
    auto tz = prepare_paradigm(with_split, cfg);
    CHECK(pseudolabel_classes(tz, Paradigm::TRZSL) == with_split.splits.unseen_classes);
    CHECK(pseudolabel_classes(ul, Paradigm::UL).size() == 10);
}

TEST_CASE("report and pseudolabel JSON round trips") {
    Planted p;
    const auto ds = prepare_paradigm(p.out.dataset, p.cfg);
    const auto rep = run_detect(ds, p.cfg);
    const auto back = report_from_json(report_to_json(rep, ds, p.cfg));
    CHECK(back.y_mm == rep.y_mm);
    CHECK(back.y_final == rep.y_final);
    CHECK(back.t == 3);
    CHECK(back.remaining_samples == rep.remaining_samples);

    MemoryProvider mem(p.out.descriptions);
    const auto al = run_pseudolabel(ds, p.cfg, rep, mem);
    const auto pl_back = pl_from_json(pl_to_json(al.pl, ds, p.cfg, al.enhanced), ds);
    REQUIRE(pl_back.size() == al.pl.size());
    for (std::size_t i = 0; i < al.pl.size(); ++i) {
        CHECK(pl_back.records[i].sample == al.pl.records[i].sample);
        CHECK(pl_back.records[i].class_id == al.pl.records[i].class_id);
        CHECK(pl_back.records[i].source == al.pl.records[i].source);
    }
    CHECK(report_to_json(rep, ds, p.cfg).contains("config"));
}

TEST_CASE("auto threshold in a C=45 report") {
    PipelineConfig cfg;
    cfg.synth.n_classes = 45;
    cfg.synth.per_class = 6;
    cfg.synth.test_per_class = 0;
    cfg.synth.dim = 64;
    cfg.synth.min_center_angle_deg = 45;
    const auto out = generate(cfg.synth);
    const auto ds = prepare_paradigm(out.dataset, cfg);
    const auto rep = run_detect(ds, cfg);
    CHECK(rep.t == 5);
    CHECK(report_to_json(rep, ds, cfg)["t"] == 5);
}

TEST_CASE("evaluation output") {
    Planted p;
    p.cfg.train.epochs = 3;
    const auto ds = prepare_paradigm(p.out.dataset, p.cfg);
    const auto rep = run_detect(ds, p.cfg);
    MemoryProvider mem(p.out.descriptions);
    const auto al = run_pseudolabel(ds, p.cfg, rep, mem);
    const auto res = run_train(ds, p.cfg, al.pl);
    const auto ev = run_eval(res.model, ds, p.cfg, &al.pl);
    for (const char* k : {"overall_acc", "per_class_acc", "pred_counts", "pred_count_std", "imbalance_ratio", "cluster_concentration",
                          "confused_groups", "config"})
        CHECK(ev.report.contains(k));
    CHECK(ev.per_class_csv.rfind("class_id,", 0) == 0);
    CHECK(std::count(ev.per_class_csv.begin(), ev.per_class_csv.end(), '\n') == 11);
    CHECK(ev.confidence_csv.rfind("group,", 0) == 0);
}

TEST_CASE("metric log is identical across runs") {
    Planted p;
    p.cfg.train.epochs = 5;
    auto once = [&] {
        const auto ds = prepare_paradigm(p.out.dataset, p.cfg);
        const auto rep = run_detect(ds, p.cfg);
        MemoryProvider mem(p.out.descriptions);
        const auto al = run_pseudolabel(ds, p.cfg, rep, mem);
        return metric_log_jsonl(run_train(ds, p.cfg, al.pl).log);
    };
    const std::string a = once();
    CHECK(a == once());
    CHECK(std::count(a.begin(), a.end(), '\n') == 6);
}
