// SPDX-License-Identifier: Apache-2.0
#include "capforge/pipeline.hpp"

#include "capforge/error.hpp"
#include "capforge/rng.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace capforge {

using nlohmann::json;

namespace {

json class_list(const std::vector<int>& ids, const EmbeddingDataset& ds) {
    json arr = json::array();
    for (int c : ids) arr.push_back({{"id", c}, {"name", ds.class_names[static_cast<std::size_t>(c)]}});
    return arr;
}

std::vector<int> ids_from(const json& arr) {
    std::vector<int> out;
    for (const auto& e : arr) out.push_back(e.is_object() ? e.at("id").get<int>() : e.get<int>());
    return out;
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

EmbeddingDataset prepare_paradigm(const EmbeddingDataset& ds, const PipelineConfig& cfg) {
    EmbeddingDataset out = ds;
    switch (cfg.train.paradigm) {
        case Paradigm::UL:
            out.splits = make_ul_split(ds);
            std::sort(out.splits.train_unlabeled.begin(), out.splits.train_unlabeled.end());
            break;
        case Paradigm::SSL:
            if (ds.splits.train_labeled.empty()) {
                SplitSpec s = make_ssl_split(ds, cfg.ssl_per_class, cfg.train.seed);
                out.splits = s;
            }
            break;
        case Paradigm::TRZSL:
            require(!ds.splits.seen_classes.empty() && !ds.splits.train_labeled.empty(), ErrorKind::InvalidArgument,
                    "config conflict: paradigm trzsl requires a dataset with a seen/unseen class split");
            break;
    }
    validate(out);
    return out;
}

std::vector<int> pseudolabel_classes(const EmbeddingDataset& ds, Paradigm p) {
    if (p == Paradigm::TRZSL) return ds.splits.unseen_classes;
    std::vector<int> all(ds.n_classes);
    std::iota(all.begin(), all.end(), 0);
    return all;
}

std::size_t effective_t(const PipelineConfig& cfg, std::size_t n_classes) {
    return cfg.t == 0 ? default_threshold(n_classes) : cfg.t;
}

MismatchReport run_detect(const EmbeddingDataset& prepared, const PipelineConfig& cfg) {
    DetectOptions opts;
    opts.classes = pseudolabel_classes(prepared, cfg.train.paradigm);
    opts.t = effective_t(cfg, opts.classes.size());
    opts.seed = splitmix64(cfg.train.seed ^ fnv1a("detect"));
    opts.gamma = cfg.train.gamma;
    opts.pool = prepared.splits.train_unlabeled;
    return detect_mismatch(prepared, opts);
}

std::unique_ptr<DescriptionProvider> make_provider(const PipelineConfig& cfg, std::size_t dim) {
    if (cfg.provider == ProviderKind::Mock) return std::make_unique<MockDescriptionProvider>(dim, cfg.train.seed);
    require(!cfg.descriptions.empty(), ErrorKind::InvalidArgument, "file provider needs a descriptions file (--descriptions)");
    return std::make_unique<FileDescriptionProvider>(cfg.descriptions, dim);
}

AlignmentResult run_pseudolabel(const EmbeddingDataset& prepared, const PipelineConfig& cfg, const MismatchReport& report,
                                DescriptionProvider& provider) {
    AlignmentResult out;
    const Matrix remaining = prepared.rows(report.remaining_samples);
    for (int c : report.y_mm) {
        auto cands = provider.fetch(c, prepared.class_names[static_cast<std::size_t>(c)], cfg.n_descriptions);
        const std::uint64_t seed = splitmix64(cfg.train.seed ^ fnv1a("select-description") ^ static_cast<std::uint64_t>(c));
        out.enhanced.emplace(c, select_optimal_description(cands, remaining, seed));
    }
    PseudolabelOptions opts;
    opts.k = cfg.train.k;
    opts.gamma = cfg.train.gamma;
    opts.pool = prepared.splits.train_unlabeled;
    opts.classes = pseudolabel_classes(prepared, cfg.train.paradigm);
    out.pl = build_initial_pl(prepared, report, out.enhanced, opts);
    return out;
}

TrainResult run_train(const EmbeddingDataset& prepared, const PipelineConfig& cfg, const PseudolabelSet& pl) {
    return run_training(prepared, pl, pseudolabel_classes(prepared, cfg.train.paradigm), cfg.train);
}

EvalOutput run_eval(const AdapterModel& model, const EmbeddingDataset& prepared, const PipelineConfig& cfg,
                    const PseudolabelSet* pl) {
    require(model.dim == prepared.dim, ErrorKind::InvalidArgument, "eval: model and dataset dimensions differ");
    EvalOutput out;
    json& r = out.report;
    const AccuracyReport acc = accuracy_report(model, prepared);
    r["overall_acc"] = acc.overall_acc;
    r["per_class_acc"] = acc.per_class_acc;
    r["min_class_acc"] = acc.min_class_acc;
    r["pred_counts"] = acc.pred_counts;
    r["pred_count_std"] = acc.pred_count_std;
    r["imbalance_ratio"] = acc.imbalance_ratio;
    if (acc.harmonic_mean) {
        r["seen_acc"] = *acc.seen_acc;
        r["unseen_acc"] = *acc.unseen_acc;
        r["harmonic_mean"] = *acc.harmonic_mean;
    }

    const auto pool = prepared.train_pool();
    const bool pool_labeled = std::all_of(pool.begin(), pool.end(), [&](std::size_t i) { return prepared.labels[i] != kUnknownLabel; });
    if (pool_labeled && pool.size() >= prepared.n_classes)
        r["cluster_concentration"] = cluster_concentration(prepared, splitmix64(cfg.train.seed ^ fnv1a("concentration")), pool);

    // Class similarity under the deployed model: visual prototypes group the
    // training pool by predicted class.
    const Matrix text_out = text_forward(model, prepared.texts(), false);
    const Predictions pool_pred = predict(model, prepared, pool);
    std::map<int, Matrix> by_class;
    {
        std::vector<Vector> sums(prepared.n_classes, Vector::Zero(static_cast<Eigen::Index>(prepared.dim)));
        std::vector<std::size_t> counts(prepared.n_classes, 0);
        for (std::size_t r2 = 0; r2 < pool.size(); ++r2) {
            const auto c = static_cast<std::size_t>(pool_pred.pred[r2]);
            sums[c] += visual_forward(model, prepared.rows({pool[r2]}).row(0).transpose(), Branch::Inference);
            ++counts[c];
        }
        for (std::size_t c = 0; c < prepared.n_classes; ++c) {
            Matrix m(1, static_cast<Eigen::Index>(prepared.dim));
            m.row(0) = counts[c] && sums[c].norm() > 0.0 ? Vector(sums[c]).transpose() : Vector(text_out.row(static_cast<Eigen::Index>(c)).transpose()).transpose();
            by_class.emplace(static_cast<int>(c), std::move(m));
        }
    }
    const Prototypes protos = class_prototypes(by_class, text_out);
    const Matrix sim = similarity_matrix(protos.visual, protos.text);
    const auto groups = find_confused_groups(sim, cfg.theta_g);

    const auto test = prepared.test_indices();
    const Predictions tp = predict(model, prepared, test);
    std::vector<int> truth;
    for (auto i : test) truth.push_back(prepared.labels[i]);

    json jgroups = json::array();
    std::ostringstream dens;
    dens << "group,bin_lo,bin_hi,correct,incorrect\n";
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const EceResult e = local_ece(tp.pred, tp.confidence, truth, groups[g], cfg.ece_bins);
        const ConfidenceHistogram h = confidence_density(tp.pred, tp.confidence, truth, groups[g], cfg.ece_bins);
        jgroups.push_back({{"classes", class_list(groups[g], prepared)},
                           {"local_ece", e.ece},
                           {"samples", e.samples},
                           {"empty", e.empty},
                           {"histogram", {{"edges", h.edges}, {"correct", h.correct}, {"incorrect", h.incorrect}}}});
        for (std::size_t b = 0; b + 1 < h.edges.size(); ++b)
            dens << g << ',' << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.correct[b] << ',' << h.incorrect[b] << '\n';
    }
    r["confused_groups"] = jgroups;
    r["similarity"] = matrix_json(sim);
    if (pl) r["margin_state"] = margin_to_json(refresh_margin(model, prepared, *pl, cfg.train.margin_scale, cfg.train.tau));
    r["config"] = cfg.to_json();

    std::ostringstream pc;
    pc << "class_id,class_name,support,accuracy,pred_count\n";
    for (std::size_t c = 0; c < prepared.n_classes; ++c)
        pc << c << ',' << prepared.class_names[c] << ',' << acc.class_support[c] << ',' << acc.per_class_acc[c] << ','
           << acc.pred_counts[c] << '\n';
    out.per_class_csv = pc.str();
    out.confidence_csv = dens.str();
    return out;
}

json report_to_json(const MismatchReport& r, const EmbeddingDataset& ds, const PipelineConfig& cfg) {
    json trace = json::array();
    for (const auto& it : r.trace)
        trace.push_back({{"class", it.text_class},
                         {"class_name", ds.class_names[static_cast<std::size_t>(it.text_class)]},
                         {"cluster", it.cluster},
                         {"confidence", it.confidence},
                         {"cap", it.cap},
                         {"removed", it.removed}});
    return {{"t", r.t},
            {"y_final", class_list(r.y_final, ds)},
            {"y_low_t", class_list(r.y_low_t, ds)},
            {"y_mm", class_list(r.y_mm, ds)},
            {"predicted_counts", r.predicted_counts},
            {"remaining_samples", r.remaining_samples},
            {"trace", trace},
            {"config", cfg.to_json()}};
}

MismatchReport report_from_json(const json& j) {
    MismatchReport r;
    try {
        r.t = j.at("t").get<std::size_t>();
        r.y_final = ids_from(j.at("y_final"));
        r.y_low_t = ids_from(j.at("y_low_t"));
        r.y_mm = ids_from(j.at("y_mm"));
        r.predicted_counts = j.at("predicted_counts").get<std::vector<std::size_t>>();
        r.remaining_samples = j.at("remaining_samples").get<std::vector<std::size_t>>();
        for (const auto& t : j.at("trace")) {
            MismatchIteration it;
            it.text_class = t.at("class").get<int>();
            it.cluster = t.at("cluster").get<std::size_t>();
            it.confidence = t.at("confidence").get<double>();
            it.cap = t.at("cap").get<std::size_t>();
            it.removed = t.at("removed").get<std::vector<std::size_t>>();
            r.trace.push_back(std::move(it));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("mismatch report: ") + e.what());
    }
    return r;
}

json pl_to_json(const PseudolabelSet& pl, const EmbeddingDataset& ds, const PipelineConfig& cfg,
                const std::map<int, DescriptionCandidate>& enhanced) {
    json records = json::array();
    for (const auto& r : pl.records)
        records.push_back({{"sample", r.sample},
                           {"class", r.class_id},
                           {"class_name", ds.class_names[static_cast<std::size_t>(r.class_id)]},
                           {"confidence", r.confidence},
                           {"source", to_string(r.source)}});
    json enh = json::array();
    for (const auto& [c, d] : enhanced)
        enh.push_back({{"class", c}, {"class_name", ds.class_names[static_cast<std::size_t>(c)]}, {"text", d.text}});
    return {{"k", pl.k}, {"size", pl.size()}, {"records", records}, {"enhanced", enh}, {"config", cfg.to_json()}};
}

PseudolabelSet pl_from_json(const json& j, const EmbeddingDataset& ds) {
    PseudolabelSet pl;
    try {
        pl.k = j.at("k").get<std::size_t>();
        for (const auto& r : j.at("records")) {
            PseudolabelRecord rec;
            rec.sample = r.at("sample").get<std::size_t>();
            rec.class_id = r.at("class").get<int>();
            rec.confidence = r.at("confidence").get<double>();
            rec.source = parse_pl_source(r.at("source").get<std::string>());
            require(rec.sample < ds.n_samples, ErrorKind::Format, "pseudolabel set: sample index out of range");
            require(rec.class_id >= 0 && static_cast<std::size_t>(rec.class_id) < ds.n_classes, ErrorKind::Format,
                    "pseudolabel set: class out of range");
            pl.records.push_back(rec);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("pseudolabel set: ") + e.what());
    }
    return pl;
}

json epoch_to_json(const EpochStats& st) {
    json j = {{"epoch", st.epoch},
              {"lr", st.lr},
              {"loss_pl", st.loss_pl},
              {"loss_ul", st.loss_ul},
              {"loss_l", st.loss_l},
              {"loss_total", st.loss_total},
              {"steps", st.steps},
              {"ul_kept", st.ul_kept},
              {"ul_seen", st.ul_seen},
              {"pl_size", st.pl_size},
              {"ul_size", st.ul_size},
              {"grown", st.grown},
              {"big_delta", st.big_delta},
              {"pred_counts", st.pred_counts},
              {"pred_count_std", population_std(st.pred_counts)}};
    j["pl_accuracy"] = st.pl_accuracy ? json(*st.pl_accuracy) : json(nullptr);
    j["test_accuracy"] = st.test_accuracy ? json(*st.test_accuracy) : json(nullptr);
    return j;
}

json margin_to_json(const MarginState& m) {
    return {{"similarity", matrix_json(m.similarity)},
            {"sigma", m.sigma},
            {"delta", m.delta},
            {"big_delta", m.big_delta},
            {"scales", m.scales},
            {"margin", matrix_json(m.margin)},
            {"base_scale", m.base_scale},
            {"tau", m.tau}};
}

std::string metric_log_jsonl(const std::vector<EpochStats>& log) {
    std::string out;
    for (const auto& st : log) out += epoch_to_json(st).dump() + '\n';
    return out;
}

}  // namespace capforge
