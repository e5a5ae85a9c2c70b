// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/policy.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "mixkvq/error.hpp"

namespace mixkvq {

namespace {

PrecisionAssignment rank_topk(std::span<const double> score, TierBudget budget) {
    require(budget.full + budget.mid <= score.size(), ErrorCode::InvalidInput,
            "tier budget exceeds channel count");
    std::vector<std::size_t> order(score.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    PrecisionAssignment out;
    out.tiers.assign(score.size(), Tier::Low2Bit);
    for (std::size_t rank = 0; rank < budget.full + budget.mid; ++rank) {
        out.tiers[order[rank]] = rank < budget.full ? Tier::FullPrecision : Tier::Mid4Bit;
    }
    return out;
}

}  // namespace

AllocationPolicy AllocationPolicy::salience(std::optional<TierBudget> budget) {
    return AllocationPolicy{Kind::Salience, BitWidth::two(), budget};
}

AllocationPolicy AllocationPolicy::error_only(std::optional<TierBudget> budget) {
    return AllocationPolicy{Kind::ErrorOnly, BitWidth::two(), budget};
}

AllocationPolicy AllocationPolicy::fixed_uniform(BitWidth bits) {
    require(bits.quantized(), ErrorCode::InvalidInput, "uniform policy needs 2 or 4 bits");
    return AllocationPolicy{Kind::FixedUniform, bits, std::nullopt};
}

AllocationPolicy AllocationPolicy::full_precision() {
    return AllocationPolicy{Kind::FullPrecision, BitWidth::full(), std::nullopt};
}

AllocationPolicy AllocationPolicy::parse(const std::string& name) {
    if (name == "salience") return salience();
    if (name == "error-only") return error_only();
    if (name == "kv2") return fixed_uniform(BitWidth::two());
    if (name == "kv4") return fixed_uniform(BitWidth::four());
    if (name == "full-precision") return full_precision();
    fail(ErrorCode::InvalidInput, "unknown policy '" + name + "'");
}

std::string AllocationPolicy::label() const {
    std::string base;
    switch (kind) {
    case Kind::Salience: base = "salience"; break;
    case Kind::ErrorOnly: base = "error-only"; break;
    case Kind::FixedUniform: base = "kv" + std::to_string(uniform_bits.bits()); break;
    case Kind::FullPrecision: base = "full-precision"; break;
    }
    if (budget) {
        base += "@" + std::to_string(budget->full) + "/" + std::to_string(budget->mid);
    }
    return base;
}

PrecisionAssignment fixed_uniform_assignment(std::size_t channels, BitWidth bits) {
    require(bits.quantized(), ErrorCode::InvalidInput, "uniform assignment needs 2 or 4 bits");
    PrecisionAssignment out;
    out.tiers.assign(channels, bits == BitWidth::four() ? Tier::Mid4Bit : Tier::Low2Bit);
    return out;
}

PrecisionAssignment error_only_assignment(std::span<const double> sensitivity, TierBudget budget) {
    return rank_topk(sensitivity, budget);
}

PrecisionAssignment salience_topk_assignment(std::span<const double> salience, TierBudget budget) {
    return rank_topk(salience, budget);
}

PrecisionAssignment assign_for_policy(const AllocationPolicy& policy, const ChannelSalience& scores,
                                      Thresholds thresholds) {
    switch (policy.kind) {
    case AllocationPolicy::Kind::Salience:
        return policy.budget ? salience_topk_assignment(scores.salience, *policy.budget)
                             : assign_precision(scores.salience, thresholds);
    case AllocationPolicy::Kind::ErrorOnly:
        return policy.budget ? error_only_assignment(scores.sensitivity, *policy.budget)
                             : assign_precision(scores.sensitivity, thresholds);
    case AllocationPolicy::Kind::FixedUniform:
        return fixed_uniform_assignment(scores.dim(), policy.uniform_bits);
    case AllocationPolicy::Kind::FullPrecision: {
        PrecisionAssignment out;
        out.tiers.assign(scores.dim(), Tier::FullPrecision);
        return out;
    }
    }
    fail(ErrorCode::InvalidInput, "unknown policy kind");
}

}  // namespace mixkvq
