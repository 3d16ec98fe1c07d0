// SPDX-License-Identifier: Apache-2.0
#include "capforge/error.hpp"
#include "capforge/linalg.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

using namespace capforge;

TEST_CASE("cosine similarity basics") {
    const std::vector<double> x{1, 0}, y{0, 1}, d{1, 1};
    CHECK(cosine_sim(x, x) == doctest::Approx(1.0));
    CHECK(cosine_sim(x, y) == doctest::Approx(0.0));
    CHECK(std::abs(cosine_sim(d, x) - 0.70710678) < 1e-6);
}

TEST_CASE("cosine similarity rejects zero vectors and mismatched sizes") {
    const std::vector<double> z{0, 0}, x{1, 0}, x3{1, 0, 0};
    CHECK_THROWS_AS(cosine_sim(z, x), Error);
    CHECK_THROWS_AS(cosine_sim(x, x3), Error);
}

TEST_CASE("cosine matrix equals pairwise cosine") {
    const Matrix a = testutil::random_unit(5, 4, 1) * 3.0;
    const Matrix b = testutil::random_unit(3, 4, 2);
    const Matrix s = cosine_matrix(a, b);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) {
            const Vector ai = a.row(i).transpose(), bj = b.row(j).transpose();
            CHECK(s(i, j) == doctest::Approx(cosine_sim(ai, bj)).epsilon(1e-12));
        }
}

TEST_CASE("softmax closed forms") {
    Matrix m(3, 2);
    m << 0, 0, std::log(2.0), 0, 1000, 0;
    const Matrix p = row_softmax(m);
    CHECK(p(0, 0) == doctest::Approx(0.5));
    CHECK(p(0, 1) == doctest::Approx(0.5));
    CHECK(std::abs(p(1, 0) - 2.0 / 3.0) < 1e-9);
    CHECK(std::abs(p(1, 1) - 1.0 / 3.0) < 1e-9);
    CHECK(p(2, 0) == doctest::Approx(1.0));
    CHECK(p(2, 1) >= 0.0);
    CHECK(p(2, 1) < 1e-300);
    CHECK(std::isfinite(p(2, 1)));
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
    const Matrix p = row_softmax(testutil::random_unit(6, 5, 3) * 50.0);
    for (int i = 0; i < 6; ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    Vector bad(2);
    bad << std::numeric_limits<double>::quiet_NaN(), 0;
    CHECK_THROWS_AS(softmax(bad), Error);
    bad << std::numeric_limits<double>::infinity(), 0;
    CHECK_THROWS_AS(softmax(bad), Error);
}

TEST_CASE("argmax tie goes to the lower index") {
    const std::vector<double> v{0.2, 0.7, 0.7, 0.1};
    CHECK(argmax(v) == 1);
    const std::vector<double> flat{3, 3, 3};
    CHECK(argmax(flat) == 0);
}

TEST_CASE("normalize_rows yields unit rows and rejects zero rows") {
    Matrix m(2, 3);
    m << 3, 4, 0, 0, 0, 2;
    const Matrix n = normalize_rows(m);
    CHECK(n(0, 0) == doctest::Approx(0.6));
    CHECK(n(0, 1) == doctest::Approx(0.8));
    CHECK(n(1, 2) == doctest::Approx(1.0));
    Matrix z = Matrix::Zero(1, 3);
    CHECK_THROWS_AS(normalize_rows(z), Error);
}
