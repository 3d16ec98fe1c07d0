// SPDX-License-Identifier: Apache-2.0
#include "capforge/embedding_store.hpp"

#include "capforge/error.hpp"
#include "capforge/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace capforge {

namespace fs = std::filesystem;
using nlohmann::json;

Paradigm parse_paradigm(const std::string& s) {
    std::string l = s;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
    if (l == "ul") return Paradigm::UL;
    if (l == "ssl") return Paradigm::SSL;
    if (l == "trzsl") return Paradigm::TRZSL;
    fail(ErrorKind::InvalidArgument, "unknown paradigm '" + s + "' (expected ul, ssl or trzsl)");
}

std::string to_string(Paradigm p) {
    switch (p) {
        case Paradigm::UL: return "ul";
        case Paradigm::SSL: return "ssl";
        case Paradigm::TRZSL: return "trzsl";
    }
    return "ul";
}

std::size_t ceil_fraction(double f, std::size_t n) {
    double x = f * static_cast<double>(n);
    double r = std::round(x);
    if (std::abs(x - r) < 1e-9) return static_cast<std::size_t>(r);
    return static_cast<std::size_t>(std::ceil(x));
}

bool EmbeddingDataset::has_labels() const {
    return !labels.empty() && std::none_of(labels.begin(), labels.end(), [](int l) { return l == kUnknownLabel; });
}

std::vector<std::size_t> EmbeddingDataset::train_pool() const {
    std::vector<std::size_t> pool;
    if (!splits.train_unlabeled.empty() || !splits.train_labeled.empty()) {
        pool = splits.train_unlabeled;
        pool.insert(pool.end(), splits.train_labeled.begin(), splits.train_labeled.end());
        std::sort(pool.begin(), pool.end());
        return pool;
    }
    std::set<std::size_t> test(splits.test.begin(), splits.test.end());
    for (std::size_t i = 0; i < n_samples; ++i)
        if (!test.count(i)) pool.push_back(i);
    return pool;
}

std::vector<std::size_t> EmbeddingDataset::test_indices() const {
    if (!splits.test.empty()) return splits.test;
    std::vector<std::size_t> all(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) all[i] = i;
    return all;
}

Matrix EmbeddingDataset::rows(const std::vector<std::size_t>& idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t r = 0; r < idx.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = image_features.row(static_cast<Eigen::Index>(idx[r])).cast<double>();
    return out;
}

namespace {

std::uint32_t byteswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void fix_endianness(float* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t u;
            std::memcpy(&u, data + i, 4);
            u = byteswap32(u);
            std::memcpy(data + i, &u, 4);
        }
    }
}

void normalize_in_place(MatrixF& m, const std::string& what) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        double n2 = 0.0;
        for (Eigen::Index c = 0; c < m.cols(); ++c) n2 += static_cast<double>(m(r, c)) * m(r, c);
        require(std::isfinite(n2), ErrorKind::Format, what + ": non-finite value in row " + std::to_string(r));
        require(n2 > 0.0, ErrorKind::Format, what + ": zero-norm row " + std::to_string(r));
        double n = std::sqrt(n2);
        // Rows already unit within float rounding stay bit-identical.
        if (std::abs(n - 1.0) <= 1e-6) continue;
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<float>(m(r, c) / n);
    }
}

std::vector<std::size_t> index_array(const json& j, const char* key, std::size_t n) {
    std::vector<std::size_t> out;
    if (!j.contains(key)) return out;
    require(j.at(key).is_array(), ErrorKind::Format, std::string("malformed split: '") + key + "' is not an array");
    for (const auto& v : j.at(key)) {
        require(v.is_number_integer() && v.get<long long>() >= 0 && static_cast<std::size_t>(v.get<long long>()) < n,
                ErrorKind::Format, std::string("malformed split: '") + key + "' index out of range");
        out.push_back(static_cast<std::size_t>(v.get<long long>()));
    }
    return out;
}

std::vector<int> class_array(const json& j, const char* key, std::size_t c) {
    std::vector<int> out;
    if (!j.contains(key)) return out;
    require(j.at(key).is_array(), ErrorKind::Format, std::string("malformed split: '") + key + "' is not an array");
    for (const auto& v : j.at(key)) {
        require(v.is_number_integer() && v.get<long long>() >= 0 && static_cast<std::size_t>(v.get<long long>()) < c,
                ErrorKind::Format, std::string("malformed split: '") + key + "' class out of range");
        out.push_back(v.get<int>());
    }
    return out;
}

json to_json(const std::vector<std::size_t>& v) { return json(v); }

}  // namespace

MatrixF read_f32(const fs::path& file, std::size_t rows, std::size_t cols) {
    require(fs::exists(file), ErrorKind::MissingFile, "missing file: " + file.string());
    const std::uintmax_t expected = static_cast<std::uintmax_t>(rows) * cols * sizeof(float);
    const std::uintmax_t actual = fs::file_size(file);
    require(actual == expected, ErrorKind::Format,
            "byte-length mismatch: " + file.filename().string() + " has " + std::to_string(actual) + " bytes, expected " +
                std::to_string(expected));
    MatrixF m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::ifstream in(file, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::MissingFile, "cannot open " + file.string());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
    require(static_cast<std::uintmax_t>(in.gcount()) == expected, ErrorKind::Format, "short read: " + file.string());
    fix_endianness(m.data(), rows * cols);
    return m;
}

void write_f32(const fs::path& file, const MatrixF& m) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Runtime, "cannot write " + file.string());
    if constexpr (std::endian::native == std::endian::big) {
        MatrixF copy = m;
        fix_endianness(copy.data(), static_cast<std::size_t>(copy.size()));
        out.write(reinterpret_cast<const char*>(copy.data()), static_cast<std::streamsize>(copy.size() * 4));
    } else {
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 4));
    }
    require(static_cast<bool>(out), ErrorKind::Runtime, "write failed: " + file.string());
}

void validate(const EmbeddingDataset& ds) {
    require(ds.labels.size() == ds.n_samples, ErrorKind::Format, "labels: expected one entry per sample");
    for (int l : ds.labels)
        require(l == kUnknownLabel || (l >= 0 && static_cast<std::size_t>(l) < ds.n_classes), ErrorKind::Format,
                "label out of range: " + std::to_string(l));
    const auto& s = ds.splits;
    std::set<std::size_t> test(s.test.begin(), s.test.end());
    require(test.size() == s.test.size(), ErrorKind::Format, "malformed split: duplicate test index");
    std::set<std::size_t> train;
    for (auto i : s.train_unlabeled) require(train.insert(i).second, ErrorKind::Format, "malformed split: duplicate train index");
    for (auto i : s.train_labeled) require(train.insert(i).second, ErrorKind::Format, "malformed split: train_labeled overlaps train_unlabeled");
    for (auto i : train) require(!test.count(i), ErrorKind::Format, "malformed split: train and test overlap");
    for (auto i : s.train_labeled)
        require(ds.labels[i] != kUnknownLabel, ErrorKind::Format, "malformed split: labeled sample without label");

    if (!s.seen_classes.empty() || !s.unseen_classes.empty()) {
        std::set<int> seen(s.seen_classes.begin(), s.seen_classes.end());
        std::set<int> unseen(s.unseen_classes.begin(), s.unseen_classes.end());
        for (int c : seen) require(!unseen.count(c), ErrorKind::Format, "malformed split: class both seen and unseen");
        require(seen.size() + unseen.size() == ds.n_classes, ErrorKind::Format, "malformed split: seen ∪ unseen must cover every class");
        for (auto i : s.train_labeled)
            require(seen.count(ds.labels[i]), ErrorKind::Format, "malformed split: labeled sample of an unseen class");
    }
}

EmbeddingDataset load_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    require(fs::exists(manifest_path), ErrorKind::MissingFile, "missing file: " + manifest_path.string());
    json m;
    try {
        std::ifstream in(manifest_path);
        m = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("manifest.json: ") + e.what());
    }

    EmbeddingDataset ds;
    try {
        require(m.value("version", 0) == kManifestVersion, ErrorKind::Format, "manifest.json: unsupported version");
        ds.n_samples = m.at("n_samples").get<std::size_t>();
        ds.n_classes = m.at("n_classes").get<std::size_t>();
        ds.dim = m.at("dim").get<std::size_t>();
        require(ds.n_samples > 0 && ds.n_classes > 0 && ds.dim > 0, ErrorKind::Format, "manifest.json: shapes must be positive");
        ds.class_names = m.at("class_names").get<std::vector<std::string>>();
        require(ds.class_names.size() == ds.n_classes, ErrorKind::Format, "manifest.json: class_names length != n_classes");
        if (m.contains("labels")) {
            ds.labels = m.at("labels").get<std::vector<int>>();
        } else {
            ds.labels.assign(ds.n_samples, kUnknownLabel);
        }
        const json& files = m.at("files");
        ds.image_features = read_f32(dir / files.at("image_features").get<std::string>(), ds.n_samples, ds.dim);
        if (files.contains("image_features_aug") && !files.at("image_features_aug").is_null())
            ds.image_features_aug = read_f32(dir / files.at("image_features_aug").get<std::string>(), ds.n_samples, ds.dim);
        ds.text_features = read_f32(dir / files.at("text_features").get<std::string>(), ds.n_classes, ds.dim);

        if (m.contains("splits")) {
            const json& sp = m.at("splits");
            require(sp.is_object(), ErrorKind::Format, "malformed split: 'splits' is not an object");
            ds.splits.train_unlabeled = index_array(sp, "train_unlabeled", ds.n_samples);
            ds.splits.train_labeled = index_array(sp, "train_labeled", ds.n_samples);
            ds.splits.test = index_array(sp, "test", ds.n_samples);
            ds.splits.seen_classes = class_array(sp, "seen_classes", ds.n_classes);
            ds.splits.unseen_classes = class_array(sp, "unseen_classes", ds.n_classes);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("manifest.json: ") + e.what());
    }

    normalize_in_place(ds.image_features, "image_features");
    if (ds.image_features_aug) normalize_in_place(*ds.image_features_aug, "image_features_aug");
    normalize_in_place(ds.text_features, "text_features");
    validate(ds);
    return ds;
}

void save_dataset(const EmbeddingDataset& ds, const fs::path& dir) {
    validate(ds);
    fs::create_directories(dir);
    json files = {{"image_features", "images.f32"}, {"text_features", "text.f32"}};
    write_f32(dir / "images.f32", ds.image_features);
    write_f32(dir / "text.f32", ds.text_features);
    if (ds.image_features_aug) {
        files["image_features_aug"] = "images_aug.f32";
        write_f32(dir / "images_aug.f32", *ds.image_features_aug);
    }
    json splits = json::object();
    const auto& s = ds.splits;
    if (!s.train_unlabeled.empty()) splits["train_unlabeled"] = to_json(s.train_unlabeled);
    if (!s.train_labeled.empty()) splits["train_labeled"] = to_json(s.train_labeled);
    if (!s.test.empty()) splits["test"] = to_json(s.test);
    if (!s.seen_classes.empty()) splits["seen_classes"] = s.seen_classes;
    if (!s.unseen_classes.empty()) splits["unseen_classes"] = s.unseen_classes;

    json m = {{"version", kManifestVersion},
              {"n_samples", ds.n_samples},
              {"n_classes", ds.n_classes},
              {"dim", ds.dim},
              {"class_names", ds.class_names},
              {"labels", ds.labels},
              {"files", files},
              {"splits", splits}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Runtime, "cannot write manifest.json in " + dir.string());
    out << m.dump(2) << '\n';
}

SplitSpec make_ul_split(const EmbeddingDataset& ds) {
    SplitSpec s;
    s.train_unlabeled = ds.train_pool();
    s.test = ds.splits.test;
    return s;
}

SplitSpec make_trzsl_split(const EmbeddingDataset& ds, double seen_fraction, std::uint64_t seed) {
    require(ds.has_labels(), ErrorKind::InvalidArgument, "make_trzsl_split: labels missing");
    require(seen_fraction > 0.0 && seen_fraction < 1.0, ErrorKind::InvalidArgument, "make_trzsl_split: seen_fraction must be in (0, 1)");
    std::vector<int> classes(ds.n_classes);
    for (std::size_t c = 0; c < ds.n_classes; ++c) classes[c] = static_cast<int>(c);
    Rng rng = substream(seed, "trzsl-split");
    shuffle(classes.begin(), classes.end(), rng);
    const std::size_t n_seen = std::min(ceil_fraction(seen_fraction, ds.n_classes), ds.n_classes);

    SplitSpec s;
    s.seen_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_seen));
    s.unseen_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(n_seen), classes.end());
    std::sort(s.seen_classes.begin(), s.seen_classes.end());
    std::sort(s.unseen_classes.begin(), s.unseen_classes.end());
    std::set<int> seen(s.seen_classes.begin(), s.seen_classes.end());
    for (auto i : ds.train_pool()) {
        if (seen.count(ds.labels[i]))
            s.train_labeled.push_back(i);
        else
            s.train_unlabeled.push_back(i);
    }
    s.test = ds.splits.test;
    return s;
}

SplitSpec make_ssl_split(const EmbeddingDataset& ds, std::size_t per_class, std::uint64_t seed) {
    require(ds.has_labels(), ErrorKind::InvalidArgument, "make_ssl_split: labels missing");
    std::vector<std::vector<std::size_t>> by_class(ds.n_classes);
    for (auto i : ds.train_pool()) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    Rng rng = substream(seed, "ssl-split");
    SplitSpec s;
    std::set<std::size_t> labeled;
    for (std::size_t c = 0; c < ds.n_classes; ++c) {
        auto& members = by_class[c];
        require(members.size() >= per_class, ErrorKind::InvalidArgument,
                "make_ssl_split: class " + std::to_string(c) + " has fewer than " + std::to_string(per_class) + " samples");
        shuffle(members.begin(), members.end(), rng);
        labeled.insert(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
    }
    for (auto i : ds.train_pool()) {
        if (labeled.count(i))
            s.train_labeled.push_back(i);
        else
            s.train_unlabeled.push_back(i);
    }
    s.test = ds.splits.test;
    return s;
}

}  // namespace capforge
