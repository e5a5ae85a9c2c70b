// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mixkvq/policy.hpp"
#include "test_support.hpp"

using namespace mixkvq;
using mixkvq::testing::thrown_code;

namespace {

// Sort-based oracle: channel indices ordered by descending score, ties by index.
std::vector<Tier> sort_oracle(const std::vector<double>& score, TierBudget budget) {
    std::vector<std::size_t> idx(score.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return score[a] != score[b] ? score[a] > score[b] : a < b;
    });
    std::vector<Tier> out(score.size(), Tier::Low2Bit);
    for (std::size_t r = 0; r < budget.full + budget.mid; ++r) {
        out[idx[r]] = r < budget.full ? Tier::FullPrecision : Tier::Mid4Bit;
    }
    return out;
}

}  // namespace

TEST_CASE("fixed_uniform_assignment") {
    CHECK(fixed_uniform_assignment(4, BitWidth::two()).tiers == std::vector<Tier>(4, Tier::Low2Bit));
    CHECK(fixed_uniform_assignment(4, BitWidth::four()).tiers == std::vector<Tier>(4, Tier::Mid4Bit));
    CHECK(fixed_uniform_assignment(4, BitWidth::two()).mean_bits() == 2.0);
    CHECK(fixed_uniform_assignment(4, BitWidth::four()).mean_bits() == 4.0);
    CHECK(thrown_code([] { fixed_uniform_assignment(4, BitWidth::full()); }) == ErrorCode::InvalidInput);
}

TEST_CASE("error_only_assignment") {
    const std::vector<double> s{3, 1, 2};
    CHECK(error_only_assignment(s, {1, 1}).tiers == std::vector<Tier>{Tier::FullPrecision, Tier::Low2Bit, Tier::Mid4Bit});
    CHECK(error_only_assignment(s, {1, 1}).tiers == sort_oracle(s, {1, 1}));
    CHECK(error_only_assignment(s, {0, 0}).tiers == std::vector<Tier>(3, Tier::Low2Bit));

    const std::vector<double> flat(5, 0.7);
    CHECK(error_only_assignment(flat, {1, 2}).tiers ==
          std::vector<Tier>{Tier::FullPrecision, Tier::Mid4Bit, Tier::Mid4Bit, Tier::Low2Bit, Tier::Low2Bit});

    CHECK(thrown_code([&] { error_only_assignment(s, {2, 2}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("salience_topk_assignment") {
    const std::vector<double> a{0, 5, 1};
    CHECK(salience_topk_assignment(a, {1, 1}).tiers ==
          std::vector<Tier>{Tier::Low2Bit, Tier::FullPrecision, Tier::Mid4Bit});
    CHECK(salience_topk_assignment(a, {3, 0}).tiers == std::vector<Tier>(3, Tier::FullPrecision));
    const std::vector<double> same{0.2, 0.9, 0.4, 0.4};
    CHECK(salience_topk_assignment(same, {1, 2}) == error_only_assignment(same, {1, 2}));
}

TEST_CASE("property: budgets are met exactly and match the sort oracle") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> coarse(0, 6);  // coarse values force ties
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> score(24);
        for (auto& x : score) {
            x = coarse(rng) * 0.5;
        }
        const TierBudget budget{static_cast<std::size_t>(trial % 5), static_cast<std::size_t>((trial / 5) % 9)};
        const auto a = salience_topk_assignment(score, budget);
        const auto c = a.counts();
        CHECK(c.full == budget.full);
        CHECK(c.mid == budget.mid);
        CHECK(a.tiers == sort_oracle(score, budget));
    }
}

TEST_CASE("property: constant importance makes salience ranking equal error-only ranking") {
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(32);
        for (auto& x : s) {
            x = u(rng);
        }
        const std::vector<double> importance(s.size(), 0.75);
        const auto a = salience_score(importance, s);
        CHECK(salience_topk_assignment(a, {3, 6}) == error_only_assignment(s, {3, 6}));
    }
}

TEST_CASE("assign_for_policy dispatch") {
    ChannelSalience scores;
    scores.importance = {1.0, 0.0, 2.0};
    scores.sensitivity = {0.5, 9.0, 0.1};
    scores.salience = salience_score(scores.importance, scores.sensitivity);  // {0.5, 0, 0.2}
    const Thresholds th{0.4, 0.15};

    CHECK(assign_for_policy(AllocationPolicy::salience(), scores, th).tiers ==
          std::vector<Tier>{Tier::FullPrecision, Tier::Low2Bit, Tier::Mid4Bit});
    CHECK(assign_for_policy(AllocationPolicy::error_only(), scores, th).tiers ==
          std::vector<Tier>{Tier::FullPrecision, Tier::FullPrecision, Tier::Low2Bit});
    CHECK(assign_for_policy(AllocationPolicy::error_only(TierBudget{1, 0}), scores, th).tiers ==
          std::vector<Tier>{Tier::Low2Bit, Tier::FullPrecision, Tier::Low2Bit});
    CHECK(assign_for_policy(AllocationPolicy::fixed_uniform(BitWidth::four()), scores, th).tiers ==
          std::vector<Tier>(3, Tier::Mid4Bit));
    CHECK(assign_for_policy(AllocationPolicy::full_precision(), scores, th).tiers ==
          std::vector<Tier>(3, Tier::FullPrecision));
}

TEST_CASE("policy parsing and labels") {
    CHECK(AllocationPolicy::parse("salience").label() == "salience");
    CHECK(AllocationPolicy::parse("error-only").label() == "error-only");
    CHECK(AllocationPolicy::parse("kv2").label() == "kv2");
    CHECK(AllocationPolicy::parse("kv4").label() == "kv4");
    CHECK(AllocationPolicy::parse("full-precision").label() == "full-precision");
    CHECK(AllocationPolicy::salience(TierBudget{4, 4}).label() == "salience@4/4");
    CHECK(thrown_code([] { AllocationPolicy::parse("kvquant"); }) == ErrorCode::InvalidInput);
}
