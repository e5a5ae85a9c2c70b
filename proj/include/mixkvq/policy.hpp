// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "mixkvq/quant.hpp"
#include "mixkvq/salience.hpp"

namespace mixkvq {

/// Number of channels per block that get full precision and 4 bits when a
/// policy runs in matched-budget (top-k) mode. Remaining channels get 2 bits.
struct TierBudget {
    std::size_t full = 0;
    std::size_t mid = 0;

    bool operator==(const TierBudget&) const = default;
};

struct AllocationPolicy {
    enum class Kind { Salience, ErrorOnly, FixedUniform, FullPrecision };

    Kind kind = Kind::Salience;
    BitWidth uniform_bits = BitWidth::two();
    std::optional<TierBudget> budget;

    static AllocationPolicy salience(std::optional<TierBudget> budget = std::nullopt);
    static AllocationPolicy error_only(std::optional<TierBudget> budget = std::nullopt);
    static AllocationPolicy fixed_uniform(BitWidth bits);
    static AllocationPolicy full_precision();

    /// Parses "salience", "error-only", "kv2", "kv4" or "full-precision".
    static AllocationPolicy parse(const std::string& name);

    /// Stable identifier used in reports, e.g. "salience", "kv4".
    std::string label() const;

    bool operator==(const AllocationPolicy&) const = default;
};

PrecisionAssignment fixed_uniform_assignment(std::size_t channels, BitWidth bits);

/// Ranks by sensitivity alone: top `full` channels get full precision, the
/// next `mid` get 4 bits. Ties go to the lower channel index.
PrecisionAssignment error_only_assignment(std::span<const double> sensitivity, TierBudget budget);

/// Same ranking rule as error_only_assignment, applied to salience.
PrecisionAssignment salience_topk_assignment(std::span<const double> salience, TierBudget budget);

/// Tier assignment a policy produces for one block. `thresholds` is used by
/// the salience and error-only policies when no budget is set.
PrecisionAssignment assign_for_policy(const AllocationPolicy& policy, const ChannelSalience& scores,
                                      Thresholds thresholds);

}  // namespace mixkvq
