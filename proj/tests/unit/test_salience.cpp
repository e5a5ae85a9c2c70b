// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "mixkvq/salience.hpp"
#include "test_support.hpp"

using namespace mixkvq;
using mixkvq::testing::random_matrix;
using mixkvq::testing::thrown_code;

TEST_CASE("importance_score is the mean absolute query per channel") {
    const auto acc = accumulate_queries(QueryAccumulator(2), Matrix::from_rows({{1, -2}, {3, -4}}));
    CHECK(importance_score(acc) == std::vector<double>{2.0, 3.0});

    const auto zeros = accumulate_queries(QueryAccumulator(3), Matrix(4, 3, 0.0));
    CHECK(importance_score(zeros) == std::vector<double>{0, 0, 0});

    const auto single = accumulate_queries(QueryAccumulator(2), Matrix::from_rows({{-0.25, 7.5}}));
    CHECK(importance_score(single) == std::vector<double>{0.25, 7.5});

    CHECK(thrown_code([] { importance_score(QueryAccumulator(2)); }) == ErrorCode::EmptyWindow);
}

TEST_CASE("accumulate_queries") {
    const auto two_blocks = accumulate_queries(accumulate_queries(QueryAccumulator(2), Matrix::from_rows({{1, -2}})),
                                               Matrix::from_rows({{3, -4}}));
    const auto one_block = accumulate_queries(QueryAccumulator(2), Matrix::from_rows({{1, -2}, {3, -4}}));
    CHECK(two_blocks == one_block);

    const auto base = accumulate_queries(QueryAccumulator(2), Matrix::from_rows({{1, 1}}));
    CHECK(accumulate_queries(base, Matrix(0, 2)) == base);

    const auto fresh = accumulate_queries(QueryAccumulator(1), Matrix::from_rows({{-5}}));
    CHECK(fresh.abs_sum == std::vector<double>{5.0});
    CHECK(fresh.count == 1);

    CHECK(thrown_code([] { accumulate_queries(QueryAccumulator(2), Matrix(1, 3)); }) == ErrorCode::InvalidInput);
}

TEST_CASE("sensitivity_score examples") {
    const auto s = sensitivity_score(Matrix::from_rows({{0}, {1}, {2}, {3}}), BitWidth::two());
    CHECK(s == std::vector<double>{1.0});
    CHECK(sensitivity_score(Matrix::from_rows({{4}, {4}}), BitWidth::two()) == std::vector<double>{0.0});
    CHECK(sensitivity_score(Matrix::from_rows({{-1}, {1}}), BitWidth::four())[0] == doctest::Approx(2.0 / 15.0));
    CHECK(thrown_code([] { sensitivity_score(Matrix(0, 2), BitWidth::two()); }) == ErrorCode::InvalidInput);
}

TEST_CASE("salience_score is the elementwise product") {
    CHECK(salience_score(std::vector<double>{2, 3}, std::vector<double>{1, 0}) == std::vector<double>{2, 0});
    CHECK(salience_score(std::vector<double>{0, 0}, std::vector<double>{100, 5}) == std::vector<double>{0, 0});
    CHECK(salience_score(std::vector<double>{0.5}, std::vector<double>{2.0 / 15.0})[0] == doctest::Approx(1.0 / 15.0));
    CHECK(thrown_code([] { salience_score(std::vector<double>{1}, std::vector<double>{1, 2}); }) ==
          ErrorCode::InvalidInput);
}

TEST_CASE("assign_precision tiers and boundaries") {
    const auto a = assign_precision(std::vector<double>{1.5, 1.0, 0.5}, Thresholds{1.44, 0.79});
    CHECK(a.tiers == std::vector<Tier>{Tier::FullPrecision, Tier::Mid4Bit, Tier::Low2Bit});

    const auto at_bf16 = assign_precision(std::vector<double>{1.44}, Thresholds{1.44, 0.79});
    CHECK(at_bf16.tiers.front() == Tier::Mid4Bit);
    const auto at_uint4 = assign_precision(std::vector<double>{0.79}, Thresholds{1.44, 0.79});
    CHECK(at_uint4.tiers.front() == Tier::Low2Bit);

    const auto all_full = assign_precision(std::vector<double>{0.0, 3.0, 1e-9}, Thresholds{-1, -1});
    CHECK(all_full.counts() == TierCounts{3, 0, 0});

    CHECK(thrown_code([] { assign_precision(std::vector<double>{1.0}, Thresholds{0.5, 0.9}); }) ==
          ErrorCode::InvalidThresholds);
    CHECK(thrown_code([] { assign_precision(std::vector<double>{1.0}, Thresholds{std::nan(""), 0.0}); }) ==
          ErrorCode::InvalidThresholds);
}

TEST_CASE("aggregate_gqa_importance") {
    QueryAccumulator a(1);
    a.abs_sum = {2};
    a.count = 2;
    QueryAccumulator b(1);
    b.abs_sum = {4};
    b.count = 2;
    const std::vector<QueryAccumulator> heads{a, b};
    const auto merged = aggregate_gqa_importance(heads, 2);
    CHECK(merged.abs_sum == std::vector<double>{6});
    CHECK(merged.count == 4);
    CHECK(importance_score(merged) == std::vector<double>{1.5});

    const std::vector<QueryAccumulator> single{a};
    CHECK(aggregate_gqa_importance(single, 1) == a);

    CHECK(thrown_code([] { aggregate_gqa_importance({}, 0); }) == ErrorCode::InvalidInput);
    CHECK(thrown_code([&] { aggregate_gqa_importance(heads, 3); }) == ErrorCode::InvalidInput);
    QueryAccumulator c(1);
    c.abs_sum = {1};
    c.count = 1;
    const std::vector<QueryAccumulator> uneven{a, c};
    CHECK(thrown_code([&] { aggregate_gqa_importance(uneven, 2); }) == ErrorCode::InvalidInput);
}

TEST_CASE("apply_rope") {
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(rng, 5, 8);

    const std::vector<double> zero(5, 0.0);
    CHECK(apply_rope(x, zero) == x);

    const Matrix unit = Matrix::from_rows({{1.0, 0.0}});
    const std::vector<double> quarter{std::numbers::pi / 2};
    const Matrix r = apply_rope(unit, quarter);
    CHECK(r(0, 0) == doctest::Approx(0.0).epsilon(1e-15).scale(1.0));
    CHECK(r(0, 1) == doctest::Approx(1.0));

    std::vector<double> pos(5);
    std::iota(pos.begin(), pos.end(), 17.0);
    const Matrix y = apply_rope(x, pos);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            const double before = x(i, 2 * j) * x(i, 2 * j) + x(i, 2 * j + 1) * x(i, 2 * j + 1);
            const double after = y(i, 2 * j) * y(i, 2 * j) + y(i, 2 * j + 1) * y(i, 2 * j + 1);
            CHECK(after == doctest::Approx(before).epsilon(1e-12));
        }
    }

    // Channel pair j rotates at theta^(-2j/D): pair 1 of D = 4 turns by pos / 100.
    const Matrix e = Matrix::from_rows({{0, 0, 1, 0}});
    const std::vector<double> hundred{100.0};
    const Matrix ey = apply_rope(e, hundred);
    CHECK(ey(0, 2) == doctest::Approx(std::cos(1.0)));
    CHECK(ey(0, 3) == doctest::Approx(std::sin(1.0)));

    CHECK(thrown_code([] { apply_rope(Matrix(1, 3), std::vector<double>{0.0}); }) == ErrorCode::InvalidInput);
    CHECK(thrown_code([&] { apply_rope(x, std::vector<double>{0.0}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("property: tiers partition the channels") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(32);
        for (auto& x : a) {
            x = u(rng);
        }
        double t1 = u(rng);
        double t2 = u(rng);
        const Thresholds th{std::max(t1, t2), std::min(t1, t2)};
        const auto asg = assign_precision(a, th);
        const auto c = asg.counts();
        CHECK(c.full + c.mid + c.low == a.size());
        for (std::size_t d = 0; d < a.size(); ++d) {
            const bool full = a[d] > th.bf16;
            const bool mid = a[d] > th.uint4 && a[d] <= th.bf16;
            const bool low = a[d] <= th.uint4;
            CHECK(full + mid + low == 1);
            CHECK((asg.tiers[d] == Tier::FullPrecision) == full);
            CHECK((asg.tiers[d] == Tier::Mid4Bit) == mid);
            CHECK((asg.tiers[d] == Tier::Low2Bit) == low);
        }
    }
}

TEST_CASE("property: scaling queries by c scales salience and preserves tiers under scaled thresholds") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix q = random_matrix(rng, 16, 12);
        const Matrix k = random_matrix(rng, 32, 12);
        const double c = std::pow(2.0, static_cast<int>(trial % 7) - 3);  // exact power of two
        Matrix qc = q;
        for (auto& x : qc.data()) {
            x *= c;
        }
        const auto s = compute_salience(accumulate_queries(QueryAccumulator(12), q), k);
        const auto sc = compute_salience(accumulate_queries(QueryAccumulator(12), qc), k);
        for (std::size_t d = 0; d < 12; ++d) {
            CHECK(sc.salience[d] == doctest::Approx(c * s.salience[d]));
        }
        const Thresholds th{1.5, 0.8};
        CHECK(assign_precision(s.salience, th).tiers ==
              assign_precision(sc.salience, Thresholds{c * th.bf16, c * th.uint4}).tiers);
    }
}

TEST_CASE("property: zero query activity means zero salience") {
    std::mt19937_64 rng(8);
    Matrix q = random_matrix(rng, 10, 6);
    for (std::size_t r = 0; r < q.rows(); ++r) {
        q(r, 2) = 0.0;
    }
    Matrix k = random_matrix(rng, 40, 6);
    for (std::size_t r = 0; r < k.rows(); ++r) {
        k(r, 2) *= 1e4;
    }
    const auto s = compute_salience(accumulate_queries(QueryAccumulator(6), q), k);
    CHECK(s.sensitivity[2] > 100.0);
    CHECK(s.salience[2] == 0.0);
}

TEST_CASE("property: any partition of query rows gives the same accumulator") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix q = random_matrix(rng, 40, 8);
        const auto whole = accumulate_queries(QueryAccumulator(8), q);
        QueryAccumulator parts(8);
        std::size_t start = 0;
        std::uniform_int_distribution<std::size_t> step(0, 9);
        while (start < q.rows()) {
            const std::size_t end = std::min(q.rows(), start + step(rng));
            parts = accumulate_queries(parts, q.slice_rows(start, end));
            start = end;
        }
        CHECK(parts == whole);
    }
}

TEST_CASE("pearson") {
    CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
    CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(std::isnan(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3})));
}
