// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/embedding_store.hpp"
#include "capforge/mismatch.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace capforge {

struct DescriptionCandidate {
    int class_id = -1;
    std::string text;
    Vector embedding; // unit norm
};

/// The question sent to a language model for one class.
std::string description_prompt(const std::string& class_name);

class DescriptionProvider {
public:
    virtual ~DescriptionProvider() = default;
    virtual std::vector<DescriptionCandidate> fetch(int class_id, const std::string& class_name, std::size_t n) = 0;
};

/// Pre-embedded candidates from a JSON array of {class_name, text, embedding}.
class FileDescriptionProvider final : public DescriptionProvider {
public:
    FileDescriptionProvider(const std::filesystem::path& file, std::size_t dim);
    std::vector<DescriptionCandidate> fetch(int class_id, const std::string& class_name, std::size_t n) override;

private:
    std::map<std::string, std::vector<DescriptionCandidate>> by_class_;
};

/// Deterministic embeddings derived from a hash of (class name, seed). Test use only.
class MockDescriptionProvider final : public DescriptionProvider {
public:
    MockDescriptionProvider(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
    std::vector<DescriptionCandidate> fetch(int class_id, const std::string& class_name, std::size_t n) override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Clusters `remaining` into |candidates| groups and returns the candidate owning
/// the largest entry of the row-softmaxed candidate x centroid cosine matrix.
DescriptionCandidate select_optimal_description(const std::vector<DescriptionCandidate>& candidates,
                                                const Matrix& remaining, std::uint64_t seed);

enum class PlSource { Alignment, TopkConfidence, Growth };
std::string to_string(PlSource s);
PlSource parse_pl_source(const std::string& s);

struct PseudolabelRecord {
    std::size_t sample = 0;
    int class_id = 0;
    double confidence = 0.0;
    PlSource source = PlSource::TopkConfidence;
};

struct PseudolabelSet {
    std::size_t k = 0;
    std::vector<PseudolabelRecord> records;

    std::size_t size() const { return records.size(); }
};

struct PseudolabelOptions {
    std::size_t k = 16;
    double gamma = kDefaultGamma;
    std::vector<std::size_t> pool;  // empty: training pool
    std::vector<int> classes;       // empty: every class
};

/// Top-k per class. Classes in report.y_mm rank the pool by cosine to their
/// enhanced description; the rest take their most confident zero-shot
/// predictions, backfilled by class probability when fewer than k samples
/// are predicted for the class. Classes are handled independently, so a
/// sample may be listed under two classes.
PseudolabelSet build_initial_pl(const EmbeddingDataset& ds, const MismatchReport& report,
                                const std::map<int, DescriptionCandidate>& enhanced, const PseudolabelOptions& opts);

/// Confidence-only top-k for one class (the same rule as non-mismatched classes).
std::vector<std::size_t> topk_by_confidence(const ZeroShot& zs, const std::vector<std::size_t>& pool, int c, std::size_t k);

/// Top-k of the pool by cosine to `direction`.
std::vector<std::size_t> topk_by_similarity(const EmbeddingDataset& ds, const std::vector<std::size_t>& pool,
                                            const Vector& direction, std::size_t k, std::vector<double>* scores = nullptr);

}  // namespace capforge
