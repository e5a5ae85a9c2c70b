// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mixkvq/attention.hpp"
#include "mixkvq/kv_cache.hpp"
#include "mixkvq/salience.hpp"

namespace mixkvq {

/// One evaluated threshold pair. `fidelity` is the mean Frobenius norm of the
/// pre-softmax score error over the instance set (lower is better).
struct ParetoPoint {
    double tau_bf16 = 0.0;
    double tau_uint4 = 0.0;
    double b_eff = 16.0;
    double fidelity = 0.0;

    bool operator==(const ParetoPoint&) const = default;
};

/// True when `a` is no worse than `b` on both objectives and better on one.
bool dominates(const ParetoPoint& a, const ParetoPoint& b) noexcept;

struct SearchSpec {
    double range_lo = 0.1;
    double range_hi = 2.0;
    std::size_t grid_points = 20;
    std::vector<std::uint64_t> seeds;
    PlantedSpec instance;
    std::size_t steps = 512;
    CacheConfig cache;
    std::optional<double> max_b_eff;
    /// Also evaluates thresholds (-inf, -inf), i.e. every channel at full precision.
    bool include_full_precision_corner = true;
    /// 0 picks the hardware concurrency.
    unsigned threads = 0;

    void validate() const;
};

struct SearchResult {
    std::vector<ParetoPoint> evaluated;
    std::vector<ParetoPoint> frontier;
    std::optional<ParetoPoint> selected;
};

/// Runs the salience policy with the given thresholds over every seed and
/// averages b_eff and fidelity.
ParetoPoint evaluate_candidate(Thresholds thresholds, const SearchSpec& spec);

/// Evenly spaced (bf16, uint4) grid pairs with uint4 <= bf16.
std::vector<Thresholds> threshold_grid(double lo, double hi, std::size_t points);

/// Nondominated subset, deduplicated and sorted by ascending b_eff.
std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points);

SearchResult pareto_search(const SearchSpec& spec);

/// Lowest-fidelity point with b_eff <= max_b_eff; BudgetInfeasible if none.
ParetoPoint select_under_budget(std::span<const ParetoPoint> frontier, double max_b_eff);

}  // namespace mixkvq
