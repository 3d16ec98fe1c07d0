// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/adapter_model.hpp"
#include "capforge/concept_align.hpp"
#include "capforge/embedding_store.hpp"
#include "capforge/margin.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace capforge {

// Reference training setup; values marked otherwise are local stand-ins.
namespace defaults {
inline constexpr int kEpochs = 50;            // first epoch is warmup
inline constexpr std::size_t kBatchSize = 32;
inline constexpr double kLearningRate = 0.01;
inline constexpr double kMomentum = 0.9;
inline constexpr double kWeightDecay = 0.1;
inline constexpr double kTau = 0.85;          // 0.5 for the aircraft preset
inline constexpr double kTauAircraft = 0.5;
inline constexpr std::size_t kTopK = 16;      // 6 for the flowers preset
inline constexpr std::size_t kTopKFlowers = 6;
inline constexpr double kMarginScale = 12.0;
inline constexpr int kGrowthEvery = 5;
inline constexpr double kGamma = 100.0;       // CLIP logit scale, not in the table
inline constexpr double kAugNoise = 0.05;     // embedding-level stand-in for random resized crop
inline constexpr std::size_t kQueryTimes = 5;
inline constexpr double kSeenFraction = 0.62;
inline constexpr std::size_t kSslLabelsPerClass = 2;
}  // namespace defaults

struct TrainConfig {
    Paradigm paradigm = Paradigm::UL;
    int epochs = defaults::kEpochs;
    std::size_t batch_size = defaults::kBatchSize;
    double lr = defaults::kLearningRate;
    double momentum = defaults::kMomentum;
    double weight_decay = defaults::kWeightDecay;
    double tau = defaults::kTau;
    std::size_t k = defaults::kTopK;
    double margin_scale = defaults::kMarginScale;
    int growth_every = defaults::kGrowthEvery;
    double gamma = defaults::kGamma;
    double aug_noise = defaults::kAugNoise;
    std::uint64_t seed = 0;
};

struct ConfidentSample {
    std::size_t sample = 0;
    int label = 0;
    double confidence = 0.0;
};

/// Main-branch softmax on clean views; keeps samples whose max probability >= tau.
std::vector<ConfidentSample> fixmatch_pseudolabel(const AdapterModel& model, const Matrix& text_features,
                                                  const EmbeddingDataset& ds, const std::vector<std::size_t>& batch,
                                                  double tau);

/// Learning rate for `step` of `steps_in_epoch` in 0-based `epoch`: linear
/// ramp through the first epoch, cosine annealing afterwards.
double learning_rate(const TrainConfig& cfg, int epoch, std::size_t step, std::size_t steps_in_epoch);

/// Mutable training state: pseudolabeled set, unlabeled pool, labeled set.
struct TrainState {
    PseudolabelSet pl;
    std::vector<std::size_t> unlabeled;       // D_UL, sorted
    std::size_t unlabeled_initial = 0;        // |D_UL_0|
    std::vector<std::size_t> labeled;         // SSL/TRZSL ground-truth set
    std::vector<int> pl_classes;              // classes that receive pseudolabels
};

/// D_UL_0 is the training pool minus labeled samples and minus every sample already in D_PL.
TrainState make_train_state(const EmbeddingDataset& ds, const PseudolabelSet& pl, const std::vector<int>& pl_classes);

/// Rebuilds the margin from the current model on D_PL: prototypes from
/// trunk + main-adapter features, tendency from main-branch predictions.
MarginState refresh_margin(const AdapterModel& model, const EmbeddingDataset& ds, const PseudolabelSet& pl,
                           double base_scale, double tau);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double loss_pl = 0.0;
    double loss_ul = 0.0;
    double loss_l = 0.0;
    double loss_total = 0.0;
    std::size_t steps = 0;
    std::size_t ul_kept = 0;
    std::size_t ul_seen = 0;
    std::size_t pl_size = 0;
    std::size_t ul_size = 0;
    std::size_t grown = 0;
    double big_delta = 0.0;
    std::optional<double> pl_accuracy;
    std::optional<double> test_accuracy;
    std::vector<std::size_t> pred_counts; // inference predictions on the test split
};

/// One pass over D_PL in batches of `batch_size`, each paired with a batch of
/// D_UL and (SSL/TRZSL) a labeled batch. Returns per-epoch loss statistics.
EpochStats train_epoch(AdapterModel& model, ModelGrads& velocity, TrainState& state, const EmbeddingDataset& ds,
                       const MarginState& margin, const TrainConfig& cfg, int epoch);

/// Per class, the remaining D_UL samples the main branch predicts as that class
/// with the top floor(|D_UL_0| / (t * C)) confidences move into D_PL, where
/// t = epochs / growth_every. Returns how many were added.
std::size_t grow_pl(const AdapterModel& model, TrainState& state, const EmbeddingDataset& ds, const TrainConfig& cfg);

struct TrainResult {
    AdapterModel model;
    TrainState state;
    std::vector<EpochStats> log; // entry 0 is the untrained model
    std::vector<MarginState> margins;
};

TrainResult run_training(const EmbeddingDataset& ds, const PseudolabelSet& pl, const std::vector<int>& pl_classes,
                         const TrainConfig& cfg);

/// Inference-branch predictions and max-softmax confidences for the given samples.
struct Predictions {
    std::vector<int> pred;
    std::vector<double> confidence;
    Matrix probs;
};
Predictions predict(const AdapterModel& model, const EmbeddingDataset& ds, const std::vector<std::size_t>& samples,
                    Branch branch = Branch::Inference);

}  // namespace capforge
