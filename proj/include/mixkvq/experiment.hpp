// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mixkvq/attention.hpp"
#include "mixkvq/error.hpp"
#include "mixkvq/kv_cache.hpp"
#include "mixkvq/policy.hpp"
#include "mixkvq/search.hpp"

namespace mixkvq {

enum class ExperimentMode { Run, Search, Stats };

/// Everything one CLI invocation needs. Loadable from a JSON config file;
/// command-line flags override individual fields.
struct ExperimentConfig {
    ExperimentMode mode = ExperimentMode::Run;
    CacheConfig cache;
    std::string policy = "salience";
    std::vector<std::string> compare;
    std::optional<TierBudget> tier_budget;

    PlantedSpec instance;
    std::optional<std::string> dump_path;
    std::size_t layer = 0;
    std::size_t head = 0;
    bool apply_rope = false;

    std::size_t seeds = 1;
    std::uint64_t seed_base = 0;
    /// 0 replays the whole instance or trace.
    std::size_t steps = 0;

    std::size_t grid = 20;
    double range_lo = 0.1;
    double range_hi = 2.0;
    std::optional<double> max_b_eff;
    unsigned threads = 0;

    std::string out = "mixkvq-out";

    /// Throws InvalidInput / InvalidThresholds on any bad field.
    void validate() const;
};

ExperimentConfig experiment_config_from_json(const std::string& text);
std::string experiment_config_to_json(const ExperimentConfig& config);

struct RunRecord {
    std::string policy_label;
    std::optional<std::uint64_t> seed;
    FidelityReport report;
    double wall_time_ms = 0.0;
};

std::vector<RunRecord> run_policies(const ExperimentConfig& config);

struct ChannelStats {
    std::vector<double> importance;
    std::vector<double> sensitivity;
    std::vector<double> salience;
    std::vector<Tier> tiers;
    double pearson_importance_sensitivity = 0.0;
    double pearson_salience_sensitivity = 0.0;
};

/// Importance over all queries, 2-bit sensitivity over all keys, tiers from
/// `thresholds`. With several query heads their magnitudes are pooled.
ChannelStats channel_stats(const DecodeTrace& trace, Thresholds thresholds);

inline constexpr const char* kRunCsvHeader =
    "policy_label,seed,b_eff,e_attn_frobenius,e_attn_max,output_error_frobenius";
inline constexpr const char* kStatsCsvHeader = "channel,importance,sensitivity,salience,tier";
inline constexpr const char* kFrontierCsvHeader = "b_eff,fidelity,tau_bf16,tau_uint4";
inline constexpr const char* kEvaluationsCsvHeader = "tau_bf16,tau_uint4,b_eff,fidelity,on_frontier";

void write_run_csv(std::ostream& out, const std::vector<RunRecord>& records);
std::string run_json(const std::vector<RunRecord>& records);
void write_stats_csv(std::ostream& out, const ChannelStats& stats);
std::string stats_json(const ChannelStats& stats, Thresholds thresholds);
void write_frontier_csv(std::ostream& out, const std::vector<ParetoPoint>& frontier);
void write_evaluations_csv(std::ostream& out, const SearchResult& result);
std::string search_json(const SearchResult& result);

/// Exit codes of run_experiment.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalidConfig = 2;
inline constexpr int kExitMissingDump = 3;

/// Runs the configured mode, writes report files under `config.out`, and
/// prints a one-line summary to `log`. Failures print one line of the form
/// `error code=<Code> message="<text>"` to `diag` and return a nonzero code.
int run_experiment(const ExperimentConfig& config, std::ostream& log, std::ostream& diag);

/// Maps an error to the CLI exit code.
int exit_code_for(ErrorCode code) noexcept;

}  // namespace mixkvq
