// SPDX-License-Identifier: Apache-2.0
#include "capforge/embedding_store.hpp"
#include "capforge/error.hpp"

#include "helpers.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstring>
#include <set>
#include <string>
#include <vector>

using namespace capforge;
using nlohmann::json;

namespace {

void write_floats(const std::filesystem::path& p, const std::vector<float>& v) {
    std::string bytes(v.size() * 4, '\0');
    std::memcpy(bytes.data(), v.data(), bytes.size());
    testutil::spit(p, bytes);
}

json manifest(std::size_t n, std::size_t c, std::size_t d) {
    json names = json::array();
    for (std::size_t i = 0; i < c; ++i) names.push_back("class" + std::to_string(i));
    return {{"version", 1},
            {"n_samples", n},
            {"n_classes", c},
            {"dim", d},
            {"class_names", names},
            {"files", {{"image_features", "images.f32"}, {"text_features", "text.f32"}}}};
}

// N=4, C=2, D=3; the first image row is (3,4,0), deliberately not unit norm.
void write_small(const testutil::TempDir& dir, json m = manifest(4, 2, 3)) {
    write_floats(dir / "images.f32", {3, 4, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
    write_floats(dir / "text.f32", {1, 0, 0, 0, 1, 0});
    testutil::spit(dir / "manifest.json", m.dump());
}

std::string error_of(const std::filesystem::path& dir) {
    try {
        load_dataset(dir);
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("loads shapes and normalizes rows") {
    testutil::TempDir dir;
    write_small(dir);
    const auto ds = load_dataset(dir.path());
    CHECK(ds.n_samples == 4);
    CHECK(ds.image_features.rows() == 4);
    CHECK(ds.image_features(0, 0) == doctest::Approx(0.6f));
    CHECK(ds.image_features(0, 1) == doctest::Approx(0.8f));
    CHECK(ds.image_features(0, 2) == 0.0f);
    CHECK_FALSE(ds.has_labels());
    CHECK(ds.train_pool().size() == 4);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(ds.image_features.row(i).cast<double>().norm() - 1.0) < 1e-5);
}

TEST_CASE("byte-length mismatch") {
    testutil::TempDir dir;
    write_small(dir);
    write_floats(dir / "images.f32", std::vector<float>(9, 1.0f));  // 36 bytes
    CHECK(error_of(dir.path()).find("byte-length mismatch") != std::string::npos);
}

TEST_CASE("missing file") {
    testutil::TempDir dir;
    write_small(dir);
    std::filesystem::remove(dir / "text.f32");
    CHECK(error_of(dir.path()).find("missing file") != std::string::npos);
    testutil::TempDir empty;
    CHECK(error_of(empty.path()).find("missing file") != std::string::npos);
}

TEST_CASE("zero-norm row") {
    testutil::TempDir dir;
    write_small(dir);
    write_floats(dir / "images.f32", {0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(error_of(dir.path()).find("zero-norm row") != std::string::npos);
}

TEST_CASE("label out of range") {
    testutil::TempDir dir;
    auto m = manifest(4, 2, 3);
    m["labels"] = {0, 1, 2, 0};
    write_small(dir, m);
    CHECK(error_of(dir.path()).find("label out of range") != std::string::npos);
}

TEST_CASE("malformed split") {
    testutil::TempDir dir;
    auto m = manifest(4, 2, 3);
    m["labels"] = {0, 1, 0, 1};
    m["splits"] = {{"train_unlabeled", {0, 1, 2}}, {"test", {2, 3}}};  // overlap
    write_small(dir, m);
    CHECK(error_of(dir.path()).find("malformed split") != std::string::npos);

    m["splits"] = {{"train_unlabeled", {0, 1}}, {"test", {2, 7}}};  // index out of range
    write_small(dir, m);
    CHECK(error_of(dir.path()).find("malformed split") != std::string::npos);

    m["splits"] = {{"train_labeled", {0}}, {"train_unlabeled", {1}}, {"test", {2, 3}},
                   {"seen_classes", {1}}, {"unseen_classes", {0}}};  // labeled sample of an unseen class
    write_small(dir, m);
    CHECK(error_of(dir.path()).find("malformed split") != std::string::npos);
}

TEST_CASE("save and load round trip is bit-exact") {
    testutil::TempDir a, b;
    auto ds = testutil::make_dataset(testutil::random_unit(30, 5, 3), testutil::random_unit(3, 5, 4),
                                     std::vector<int>(30, 1));
    ds.image_features_aug = testutil::random_unit(30, 5, 5).cast<float>();
    ds.splits.train_unlabeled = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    ds.splits.test = {20, 21, 22};
    save_dataset(ds, a.path());
    const auto back = load_dataset(a.path());
    CHECK(back.image_features == ds.image_features);
    CHECK(*back.image_features_aug == *ds.image_features_aug);
    CHECK(back.text_features == ds.text_features);
    CHECK(back.labels == ds.labels);
    CHECK(back.splits.test == ds.splits.test);
    save_dataset(back, b.path());
    for (const char* f : {"images.f32", "text.f32", "images_aug.f32", "manifest.json"})
        CHECK(testutil::slurp(a / f) == testutil::slurp(b / f));
}

TEST_CASE("trzsl split sizes") {
    auto ds100 = testutil::make_dataset(testutil::random_unit(200, 4, 1), testutil::random_unit(100, 4, 2));
    for (std::size_t i = 0; i < 200; ++i) ds100.labels[i] = static_cast<int>(i % 100);
    const auto s = make_trzsl_split(ds100, 0.62, 5);
    CHECK(s.seen_classes.size() == 62);
    CHECK(s.unseen_classes.size() == 38);

    auto ds10 = testutil::make_dataset(testutil::random_unit(40, 4, 1), testutil::random_unit(10, 4, 2));
    for (std::size_t i = 0; i < 40; ++i) ds10.labels[i] = static_cast<int>(i % 10);
    const auto s10 = make_trzsl_split(ds10, 0.62, 5);
    CHECK(s10.seen_classes.size() == 7);

    const auto again = make_trzsl_split(ds10, 0.62, 5);
    CHECK(again.seen_classes == s10.seen_classes);

    std::set<int> seen(s10.seen_classes.begin(), s10.seen_classes.end());
    for (int c : s10.unseen_classes) CHECK(seen.count(c) == 0);
    CHECK(seen.size() + s10.unseen_classes.size() == 10);
    for (auto i : s10.train_labeled) CHECK(seen.count(ds10.labels[i]) == 1);
    for (auto i : s10.train_unlabeled) CHECK(seen.count(ds10.labels[i]) == 0);
}

TEST_CASE("ssl split gives exactly the configured labeled count per class") {
    auto ds = testutil::make_dataset(testutil::random_unit(50, 4, 1), testutil::random_unit(5, 4, 2));
    for (std::size_t i = 0; i < 50; ++i) ds.labels[i] = static_cast<int>(i % 5);
    const auto s = make_ssl_split(ds, 2, 9);
    std::vector<int> per(5, 0);
    for (auto i : s.train_labeled) ++per[static_cast<std::size_t>(ds.labels[i])];
    for (int p : per) CHECK(p == 2);
    CHECK(s.train_labeled.size() + s.train_unlabeled.size() == 50);
    CHECK_THROWS_AS(make_ssl_split(ds, 11, 9), Error);
}

TEST_CASE("ceil_fraction avoids floating-point overshoot") {
    CHECK(ceil_fraction(0.62, 100) == 62);
    CHECK(ceil_fraction(0.62, 10) == 7);
    CHECK(ceil_fraction(0.5, 3) == 2);
}
