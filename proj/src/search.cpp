// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "mixkvq/error.hpp"

namespace mixkvq {

namespace {

ParetoPoint evaluate_on(Thresholds thresholds, const SearchSpec& spec, const std::vector<DecodeTrace>& traces) {
    thresholds.validate();
    CacheConfig config = spec.cache;
    config.thresholds = thresholds;
    const auto policy = AllocationPolicy::salience();
    ParetoPoint point{thresholds.bf16, thresholds.uint4, 0.0, 0.0};
    for (const DecodeTrace& trace : traces) {
        const FidelityReport r = decode_simulation(trace, config, policy, spec.steps);
        point.b_eff += r.effective_bits;
        point.fidelity += r.e_attn_frobenius;
    }
    point.b_eff /= static_cast<double>(traces.size());
    point.fidelity /= static_cast<double>(traces.size());
    return point;
}

std::vector<DecodeTrace> build_traces(const SearchSpec& spec) {
    std::vector<DecodeTrace> traces;
    traces.reserve(spec.seeds.size());
    for (std::uint64_t seed : spec.seeds) {
        traces.push_back(DecodeTrace::from_instance(generate_planted_instance(spec.instance, seed).instance));
    }
    return traces;
}

}  // namespace

bool dominates(const ParetoPoint& a, const ParetoPoint& b) noexcept {
    return a.fidelity <= b.fidelity && a.b_eff <= b.b_eff && (a.fidelity < b.fidelity || a.b_eff < b.b_eff);
}

void SearchSpec::validate() const {
    require(range_lo <= range_hi, ErrorCode::InvalidInput, "search range is inverted");
    require(grid_points >= 1, ErrorCode::InvalidInput, "search grid is empty");
    require(!seeds.empty(), ErrorCode::InvalidInput, "search needs at least one seed");
    require(steps >= 1 && steps <= instance.tokens, ErrorCode::InvalidInput,
            "steps must be within the instance length");
    instance.validate();
    cache.validate();
}

ParetoPoint evaluate_candidate(Thresholds thresholds, const SearchSpec& spec) {
    spec.validate();
    return evaluate_on(thresholds, spec, build_traces(spec));
}

std::vector<Thresholds> threshold_grid(double lo, double hi, std::size_t points) {
    require(points >= 1, ErrorCode::InvalidInput, "search grid is empty");
    require(lo <= hi, ErrorCode::InvalidInput, "search range is inverted");
    std::vector<double> axis(points);
    for (std::size_t i = 0; i < points; ++i) {
        axis[i] = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    std::vector<Thresholds> grid;
    for (double bf16 : axis) {
        for (double uint4 : axis) {
            if (uint4 <= bf16) {
                grid.push_back(Thresholds{bf16, uint4});
            }
        }
    }
    return grid;
}

std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points) {
    std::vector<ParetoPoint> frontier;
    for (const ParetoPoint& p : points) {
        const bool beaten = std::any_of(points.begin(), points.end(), [&](const ParetoPoint& q) { return dominates(q, p); });
        const bool seen = std::find(frontier.begin(), frontier.end(), p) != frontier.end();
        if (!beaten && !seen) {
            frontier.push_back(p);
        }
    }
    std::sort(frontier.begin(), frontier.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        if (a.b_eff != b.b_eff) return a.b_eff < b.b_eff;
        if (a.fidelity != b.fidelity) return a.fidelity < b.fidelity;
        if (a.tau_bf16 != b.tau_bf16) return a.tau_bf16 < b.tau_bf16;
        return a.tau_uint4 < b.tau_uint4;
    });
    return frontier;
}

SearchResult pareto_search(const SearchSpec& spec) {
    spec.validate();
    std::vector<Thresholds> candidates = threshold_grid(spec.range_lo, spec.range_hi, spec.grid_points);
    if (spec.include_full_precision_corner) {
        constexpr double neg_inf = -std::numeric_limits<double>::infinity();
        candidates.push_back(Thresholds{neg_inf, neg_inf});
    }
    const std::vector<DecodeTrace> traces = build_traces(spec);

    SearchResult result;
    result.evaluated.resize(candidates.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < candidates.size(); i = next++) {
            try {
                result.evaluated[i] = evaluate_on(candidates[i], spec, traces);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                failure = std::current_exception();
            }
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_threads =
        static_cast<unsigned>(std::min<std::size_t>(spec.threads == 0 ? hw : spec.threads, candidates.size()));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n_threads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    result.frontier = pareto_frontier(result.evaluated);
    if (spec.max_b_eff) {
        result.selected = select_under_budget(result.frontier, *spec.max_b_eff);
    }
    return result;
}

ParetoPoint select_under_budget(std::span<const ParetoPoint> frontier, double max_b_eff) {
    require(!frontier.empty(), ErrorCode::InvalidInput, "frontier is empty");
    const ParetoPoint* best = nullptr;
    for (const ParetoPoint& p : frontier) {
        if (p.b_eff <= max_b_eff && (best == nullptr || p.fidelity < best->fidelity)) {
            best = &p;
        }
    }
    require(best != nullptr, ErrorCode::BudgetInfeasible, "no frontier point fits the bit-width budget");
    return *best;
}

}  // namespace mixkvq
