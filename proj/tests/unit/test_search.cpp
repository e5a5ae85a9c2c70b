// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mixkvq/search.hpp"
#include "test_support.hpp"

using namespace mixkvq;
using mixkvq::testing::thrown_code;

namespace {

SearchSpec small_search() {
    SearchSpec s;
    s.range_lo = 0.2;
    s.range_hi = 2.0;
    s.grid_points = 3;
    s.seeds = {1, 2};
    s.instance.channels = 16;
    s.instance.tokens = 40;
    s.instance.scale_outliers = 2;
    s.instance.query_outliers = 2;
    s.steps = 40;
    s.cache.group_size = 4;
    s.cache.residual_len = 8;
    s.cache.sink_len = 4;
    return s;
}

}  // namespace

TEST_CASE("dominance") {
    const ParetoPoint a{0, 0, 2.0, 1.0};
    const ParetoPoint b{0, 0, 3.0, 1.0};
    const ParetoPoint c{0, 0, 2.0, 0.5};
    CHECK(dominates(a, b));
    CHECK_FALSE(dominates(b, a));
    CHECK(dominates(c, a));
    CHECK_FALSE(dominates(a, a));
    const ParetoPoint d{0, 0, 1.0, 5.0};
    CHECK_FALSE(dominates(a, d));
    CHECK_FALSE(dominates(d, a));
}

TEST_CASE("frontier against a brute-force oracle") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> coarse(0, 6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ParetoPoint> pts(30);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            // Coarse coordinates force ties and duplicates.
            pts[i] = {static_cast<double>(i), 0.0, 2.0 + coarse(rng), static_cast<double>(coarse(rng))};
        }
        pts.push_back(pts[3]);
        const auto front = pareto_frontier(pts);
        for (const auto& p : pts) {
            bool beaten = false;
            for (const auto& q : pts) {
                beaten = beaten || (q.b_eff <= p.b_eff && q.fidelity <= p.fidelity &&
                                    (q.b_eff < p.b_eff || q.fidelity < p.fidelity));
            }
            const auto hits = std::count(front.begin(), front.end(), p);
            CHECK(hits == (beaten ? 0 : 1));
        }
        for (std::size_t i = 1; i < front.size(); ++i) {
            CHECK(front[i - 1].b_eff <= front[i].b_eff);
            CHECK(front[i - 1].fidelity >= front[i].fidelity);
        }
    }
}

TEST_CASE("threshold grid") {
    const auto g = threshold_grid(0.1, 2.0, 20);
    CHECK(g.size() == 210);
    for (const auto& t : g) {
        CHECK(t.uint4 <= t.bf16);
        CHECK(t.uint4 >= 0.1);
        CHECK(t.bf16 <= 2.0);
    }
    CHECK(g.front().bf16 == 0.1);
    CHECK(g.back().bf16 == 2.0);
    CHECK(threshold_grid(0.5, 0.5, 1).size() == 1);
    CHECK(thrown_code([] { (void)threshold_grid(1.0, 0.5, 3); }) == ErrorCode::InvalidInput);
    CHECK(thrown_code([] { (void)threshold_grid(0.1, 0.5, 0); }) == ErrorCode::InvalidInput);
}

TEST_CASE("budgeted selection") {
    const std::vector<ParetoPoint> front{{0, 0, 2.0, 9.0}, {0, 0, 3.0, 4.0}, {0, 0, 5.0, 1.0}};
    CHECK(select_under_budget(front, 3.5).b_eff == 3.0);
    CHECK(select_under_budget(front, 3.0).b_eff == 3.0);
    CHECK(select_under_budget(front, 100.0).b_eff == 5.0);
    CHECK(thrown_code([&] { (void)select_under_budget(front, 1.5); }) == ErrorCode::BudgetInfeasible);
    CHECK(thrown_code([&] { (void)select_under_budget({}, 1.5); }) == ErrorCode::InvalidInput);
}

TEST_CASE("pareto search on a small instance") {
    SearchSpec spec = small_search();
    spec.max_b_eff = 12.0;
    const auto r = pareto_search(spec);
    CHECK(r.evaluated.size() == 7);  // 6 grid cells plus the full-precision corner
    for (std::size_t i = 0; i < 6; ++i) {
        const auto& p = r.evaluated[i];
        CHECK(p == evaluate_candidate({p.tau_bf16, p.tau_uint4}, spec));
    }
    const auto& corner = r.evaluated.back();
    CHECK(std::isinf(corner.tau_bf16));
    CHECK(corner.fidelity == 0.0);
    CHECK(std::count(r.frontier.begin(), r.frontier.end(), corner) == 1);
    CHECK(r.frontier == pareto_frontier(r.evaluated));
    REQUIRE(r.selected.has_value());
    CHECK(r.selected->b_eff <= 12.0);

    spec.threads = 1;
    const auto serial = pareto_search(spec);
    CHECK(serial.evaluated == r.evaluated);
    CHECK(serial.frontier == r.frontier);
}

TEST_CASE("search spec validation") {
    SearchSpec spec = small_search();
    spec.seeds.clear();
    CHECK(thrown_code([&] { (void)pareto_search(spec); }) == ErrorCode::InvalidInput);
    spec = small_search();
    spec.steps = 41;
    CHECK(thrown_code([&] { (void)pareto_search(spec); }) == ErrorCode::InvalidInput);
    spec = small_search();
    spec.max_b_eff = 0.5;
    CHECK(thrown_code([&] { (void)pareto_search(spec); }) == ErrorCode::BudgetInfeasible);
    spec = small_search();
    CHECK(thrown_code([&] { (void)evaluate_candidate({0.1, 0.9}, spec); }) == ErrorCode::InvalidThresholds);
}
