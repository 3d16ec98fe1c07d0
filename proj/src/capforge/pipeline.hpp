// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/concept_align.hpp"
#include "capforge/config.hpp"
#include "capforge/embedding_store.hpp"
#include "capforge/metrics.hpp"
#include "capforge/mismatch.hpp"
#include "capforge/trainer.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>

namespace capforge {

/// Copy of the dataset with splits arranged for the configured paradigm.
/// UL folds labeled samples back into the unlabeled pool; SSL derives the
/// per-class labeled split when none is declared; TRZSL requires a declared
/// seen/unseen split.
EmbeddingDataset prepare_paradigm(const EmbeddingDataset& ds, const PipelineConfig& cfg);

/// Classes that receive pseudolabels: unseen classes under TRZSL, all otherwise.
std::vector<int> pseudolabel_classes(const EmbeddingDataset& ds, Paradigm p);

std::size_t effective_t(const PipelineConfig& cfg, std::size_t n_classes);

MismatchReport run_detect(const EmbeddingDataset& prepared, const PipelineConfig& cfg);

std::unique_ptr<DescriptionProvider> make_provider(const PipelineConfig& cfg, std::size_t dim);

struct AlignmentResult {
    PseudolabelSet pl;
    std::map<int, DescriptionCandidate> enhanced;
};

AlignmentResult run_pseudolabel(const EmbeddingDataset& prepared, const PipelineConfig& cfg, const MismatchReport& report,
                                DescriptionProvider& provider);

TrainResult run_train(const EmbeddingDataset& prepared, const PipelineConfig& cfg, const PseudolabelSet& pl);

struct EvalOutput {
    nlohmann::json report;
    std::string per_class_csv;
    std::string confidence_csv;
};

/// Accuracy, balance, cluster concentration, confused groups with local ECE
/// and confidence histograms. When `pl` is given the margin state on it is
/// included as well.
EvalOutput run_eval(const AdapterModel& model, const EmbeddingDataset& prepared, const PipelineConfig& cfg,
                    const PseudolabelSet* pl);

// JSON wire formats.
nlohmann::json report_to_json(const MismatchReport& r, const EmbeddingDataset& ds, const PipelineConfig& cfg);
MismatchReport report_from_json(const nlohmann::json& j);
nlohmann::json pl_to_json(const PseudolabelSet& pl, const EmbeddingDataset& ds, const PipelineConfig& cfg,
                          const std::map<int, DescriptionCandidate>& enhanced = {});
PseudolabelSet pl_from_json(const nlohmann::json& j, const EmbeddingDataset& ds);
nlohmann::json epoch_to_json(const EpochStats& st);
nlohmann::json margin_to_json(const MarginState& m);

/// One JSON object per line, one line per epoch (entry 0 is the untrained model).
std::string metric_log_jsonl(const std::vector<EpochStats>& log);

}  // namespace capforge
