// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/embedding_store.hpp"
#include "capforge/linalg.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

namespace testutil {

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("capforge-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

/// Random unit rows.
inline capforge::Matrix random_unit(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    capforge::Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = n(rng);
        m.row(i).normalize();
    }
    return m;
}

/// In-memory dataset from double matrices; no split declared unless given.
inline capforge::EmbeddingDataset make_dataset(const capforge::Matrix& images, const capforge::Matrix& texts,
                                               std::vector<int> labels = {}) {
    capforge::EmbeddingDataset ds;
    ds.n_samples = static_cast<std::size_t>(images.rows());
    ds.n_classes = static_cast<std::size_t>(texts.rows());
    ds.dim = static_cast<std::size_t>(images.cols());
    ds.image_features = capforge::normalize_rows(images).cast<float>();
    ds.text_features = capforge::normalize_rows(texts).cast<float>();
    for (std::size_t c = 0; c < ds.n_classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
    if (labels.empty()) labels.assign(ds.n_samples, capforge::kUnknownLabel);
    ds.labels = std::move(labels);
    return ds;
}

}  // namespace testutil
