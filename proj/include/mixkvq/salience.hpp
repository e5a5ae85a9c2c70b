// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mixkvq/matrix.hpp"
#include "mixkvq/quant.hpp"

namespace mixkvq {

enum class Tier : std::uint8_t { Low2Bit = 0, Mid4Bit = 1, FullPrecision = 2 };

int tier_bits(Tier tier) noexcept;
BitWidth tier_width(Tier tier) noexcept;
std::string_view to_string(Tier tier) noexcept;

/// Salience cut points. A channel is kept at full precision when A > bf16,
/// stored at 4 bits when uint4 < A <= bf16 and at 2 bits otherwise.
struct Thresholds {
    double bf16 = 1.44;
    double uint4 = 0.79;

    /// Throws InvalidThresholds when uint4 > bf16 or either value is NaN.
    void validate() const;
    bool operator==(const Thresholds&) const = default;
};

struct TierCounts {
    std::size_t full = 0;
    std::size_t mid = 0;
    std::size_t low = 0;

    bool operator==(const TierCounts&) const = default;
};

struct PrecisionAssignment {
    std::vector<Tier> tiers;
    /// Set only for threshold-based assignments.
    std::optional<Thresholds> thresholds;

    TierCounts counts() const noexcept;
    double mean_bits() const noexcept;

    bool operator==(const PrecisionAssignment&) const = default;
};

/// Per-channel running sum of |Q| plus the number of query rows seen.
struct QueryAccumulator {
    std::vector<double> abs_sum;
    std::size_t count = 0;

    QueryAccumulator() = default;
    explicit QueryAccumulator(std::size_t dim) : abs_sum(dim, 0.0) {}

    std::size_t dim() const noexcept { return abs_sum.size(); }
    /// Adds |row| elementwise and bumps the count by one.
    void add_row(std::span<const double> row);
    void reset() noexcept;

    bool operator==(const QueryAccumulator&) const = default;
};

struct ChannelSalience {
    std::vector<double> importance;
    std::vector<double> sensitivity;
    std::vector<double> salience;

    std::size_t dim() const noexcept { return salience.size(); }

    bool operator==(const ChannelSalience&) const = default;
};

/// Mean |Q| per channel. Throws EmptyWindow when nothing was accumulated.
std::vector<double> importance_score(const QueryAccumulator& acc);

/// Row-by-row accumulation, so any split of the same rows into blocks gives
/// a bit-identical accumulator.
QueryAccumulator accumulate_queries(QueryAccumulator acc, const Matrix& q_block);

/// Per-channel quantization step (max - min) / (2^B - 1) over the block's rows.
std::vector<double> sensitivity_score(const Matrix& key_block, BitWidth bits);

std::vector<double> salience_score(std::span<const double> importance, std::span<const double> sensitivity);

/// Importance from `acc`, sensitivity over `key_block` at `bits`, and their product.
ChannelSalience compute_salience(const QueryAccumulator& acc, const Matrix& key_block,
                                 BitWidth bits = BitWidth::two());

PrecisionAssignment assign_precision(std::span<const double> salience, Thresholds thresholds);

/// Merges the accumulators of all query heads sharing one KV head. The merged
/// importance is the mean |Q| over every query row of the group.
QueryAccumulator aggregate_gqa_importance(std::span<const QueryAccumulator> per_head,
                                          std::size_t heads_per_kv_group);

inline constexpr double kDefaultRopeTheta = 10000.0;

/// Rotary embedding: channel pair (2j, 2j+1) of row i is rotated by
/// positions[i] * theta_base^(-2j/D).
Matrix apply_rope(const Matrix& x, std::span<const double> positions, double theta_base = kDefaultRopeTheta);

/// Pearson correlation; NaN when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace mixkvq
