// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mixkvq/dump.hpp"
#include "mixkvq/error.hpp"

namespace mixkvq {

namespace {

using nlohmann::json;

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// JSON has no infinities or NaN; non-finite values are written as strings.
json json_num(double x) {
    if (std::isfinite(x)) {
        return x;
    }
    if (std::isnan(x)) {
        return nullptr;
    }
    return x > 0 ? "inf" : "-inf";
}

std::string mode_name(ExperimentMode m) {
    switch (m) {
    case ExperimentMode::Run: return "run";
    case ExperimentMode::Search: return "search";
    case ExperimentMode::Stats: return "stats";
    }
    return "run";
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    require(j.is_object(), ErrorCode::InvalidInput, where + " must be an object");
    for (const auto& item : j.items()) {
        require(allowed.count(item.key()) != 0, ErrorCode::InvalidInput,
                "unknown key '" + item.key() + "' in " + where);
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot write '" + path.string() + "'");
    return out;
}

DecodeTrace load_trace(const ExperimentConfig& config) {
    if (config.dump_path) {
        return trace_from_dump(read_dump(*config.dump_path), config.layer, config.head);
    }
    return DecodeTrace::from_instance(generate_planted_instance(config.instance, config.seed_base).instance);
}

std::vector<AllocationPolicy> policies_of(const ExperimentConfig& config) {
    std::vector<AllocationPolicy> out;
    out.push_back(AllocationPolicy::parse(config.policy));
    for (const auto& name : config.compare) {
        out.push_back(AllocationPolicy::parse(name));
    }
    for (auto& p : out) {
        if (config.tier_budget &&
            (p.kind == AllocationPolicy::Kind::Salience || p.kind == AllocationPolicy::Kind::ErrorOnly)) {
            p.budget = config.tier_budget;
        }
    }
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    cache.validate();
    policies_of(*this);
    if (tier_budget) {
        require(tier_budget->full + tier_budget->mid <= instance.channels || dump_path.has_value(),
                ErrorCode::InvalidInput, "tier budget exceeds channel count");
    }
    if (!dump_path) {
        instance.validate();
        require(steps <= instance.tokens, ErrorCode::InvalidInput, "steps exceed the planted instance length");
    }
    require(seeds >= 1, ErrorCode::InvalidInput, "seeds must be at least 1");
    require(grid >= 1, ErrorCode::InvalidInput, "grid must be at least 1");
    require(range_lo <= range_hi, ErrorCode::InvalidInput, "range is inverted");
    require(!out.empty(), ErrorCode::InvalidInput, "output path is empty");
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidInput, std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    try {
        check_keys(j,
                   {"mode", "cache", "policy", "compare", "tier_budget", "instance", "dump", "layer", "head",
                    "rope", "seeds", "seed_base", "steps", "grid", "range", "max_b_eff", "threads", "out"},
                   "config");
        if (j.contains("mode")) {
            const auto m = j.at("mode").get<std::string>();
            require(m == "run" || m == "search" || m == "stats", ErrorCode::InvalidInput, "unknown mode '" + m + "'");
            c.mode = m == "run" ? ExperimentMode::Run : m == "search" ? ExperimentMode::Search : ExperimentMode::Stats;
        }
        if (j.contains("cache")) {
            const json& cj = j.at("cache");
            check_keys(cj, {"group_size", "residual_len", "sink_len", "heads_per_kv_group", "thresholds",
                            "value_bits", "importance"},
                       "cache");
            read_opt(cj, "group_size", c.cache.group_size);
            read_opt(cj, "residual_len", c.cache.residual_len);
            read_opt(cj, "sink_len", c.cache.sink_len);
            read_opt(cj, "heads_per_kv_group", c.cache.heads_per_kv_group);
            if (cj.contains("thresholds")) {
                const auto t = cj.at("thresholds").get<std::vector<double>>();
                require(t.size() == 2, ErrorCode::InvalidInput, "thresholds needs two values");
                c.cache.thresholds = Thresholds{t[0], t[1]};
            }
            if (cj.contains("value_bits")) {
                c.cache.value_bits = BitWidth::from_bits(cj.at("value_bits").get<int>());
            }
            if (cj.contains("importance")) {
                const auto w = cj.at("importance").get<std::string>();
                require(w == "running" || w == "block", ErrorCode::InvalidInput, "importance must be running or block");
                c.cache.importance = w == "running" ? ImportanceWindow::Running : ImportanceWindow::Block;
            }
        }
        read_opt(j, "policy", c.policy);
        read_opt(j, "compare", c.compare);
        if (j.contains("tier_budget")) {
            const auto b = j.at("tier_budget").get<std::vector<std::size_t>>();
            require(b.size() == 2, ErrorCode::InvalidInput, "tier_budget needs two counts");
            c.tier_budget = TierBudget{b[0], b[1]};
        }
        if (j.contains("instance")) {
            const json& ij = j.at("instance");
            check_keys(ij, {"channels", "tokens", "scale_outliers", "query_outliers", "overlap", "outlier_gain"},
                       "instance");
            read_opt(ij, "channels", c.instance.channels);
            read_opt(ij, "tokens", c.instance.tokens);
            read_opt(ij, "scale_outliers", c.instance.scale_outliers);
            read_opt(ij, "query_outliers", c.instance.query_outliers);
            read_opt(ij, "overlap", c.instance.overlap);
            read_opt(ij, "outlier_gain", c.instance.outlier_gain);
        }
        if (j.contains("dump")) {
            c.dump_path = j.at("dump").get<std::string>();
        }
        read_opt(j, "layer", c.layer);
        read_opt(j, "head", c.head);
        read_opt(j, "rope", c.apply_rope);
        read_opt(j, "seeds", c.seeds);
        read_opt(j, "seed_base", c.seed_base);
        read_opt(j, "steps", c.steps);
        read_opt(j, "grid", c.grid);
        if (j.contains("range")) {
            const auto r = j.at("range").get<std::vector<double>>();
            require(r.size() == 2, ErrorCode::InvalidInput, "range needs two values");
            c.range_lo = r[0];
            c.range_hi = r[1];
        }
        if (j.contains("max_b_eff")) {
            c.max_b_eff = j.at("max_b_eff").get<double>();
        }
        read_opt(j, "threads", c.threads);
        read_opt(j, "out", c.out);
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidInput, std::string("bad config value: ") + e.what());
    }
    return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
    json j;
    j["mode"] = mode_name(c.mode);
    j["cache"] = {{"group_size", c.cache.group_size},
                  {"residual_len", c.cache.residual_len},
                  {"sink_len", c.cache.sink_len},
                  {"heads_per_kv_group", c.cache.heads_per_kv_group},
                  {"thresholds", {c.cache.thresholds.bf16, c.cache.thresholds.uint4}},
                  {"value_bits", c.cache.value_bits.bits()},
                  {"importance", c.cache.importance == ImportanceWindow::Running ? "running" : "block"}};
    j["policy"] = c.policy;
    j["compare"] = c.compare;
    if (c.tier_budget) {
        j["tier_budget"] = {c.tier_budget->full, c.tier_budget->mid};
    }
    j["instance"] = {{"channels", c.instance.channels},
                     {"tokens", c.instance.tokens},
                     {"scale_outliers", c.instance.scale_outliers},
                     {"query_outliers", c.instance.query_outliers},
                     {"overlap", c.instance.overlap},
                     {"outlier_gain", c.instance.outlier_gain}};
    if (c.dump_path) {
        j["dump"] = *c.dump_path;
    }
    j["layer"] = c.layer;
    j["head"] = c.head;
    j["rope"] = c.apply_rope;
    j["seeds"] = c.seeds;
    j["seed_base"] = c.seed_base;
    j["steps"] = c.steps;
    j["grid"] = c.grid;
    j["range"] = {c.range_lo, c.range_hi};
    if (c.max_b_eff) {
        j["max_b_eff"] = *c.max_b_eff;
    }
    j["threads"] = c.threads;
    j["out"] = c.out;
    return j.dump(2);
}

std::vector<RunRecord> run_policies(const ExperimentConfig& config) {
    config.validate();
    const auto policies = policies_of(config);
    std::vector<RunRecord> records;

    auto run_one = [&](const DecodeTrace& trace, const AllocationPolicy& policy, std::optional<std::uint64_t> seed) {
        CacheConfig cache = config.cache;
        cache.heads_per_kv_group = trace.queries.size();
        const std::size_t steps = config.steps == 0 ? trace.length() : config.steps;
        const auto start = std::chrono::steady_clock::now();
        RunRecord rec;
        rec.report = decode_simulation(trace, cache, policy, steps, DecodeOptions{config.apply_rope});
        rec.wall_time_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        rec.policy_label = rec.report.policy_label;
        rec.seed = seed;
        records.push_back(std::move(rec));
    };

    if (config.dump_path) {
        const DecodeTrace trace = load_trace(config);
        for (const auto& p : policies) {
            run_one(trace, p, std::nullopt);
        }
        return records;
    }
    for (std::size_t i = 0; i < config.seeds; ++i) {
        const std::uint64_t seed = config.seed_base + i;
        const DecodeTrace trace =
            DecodeTrace::from_instance(generate_planted_instance(config.instance, seed).instance);
        for (const auto& p : policies) {
            run_one(trace, p, seed);
        }
    }
    return records;
}

ChannelStats channel_stats(const DecodeTrace& trace, Thresholds thresholds) {
    require(!trace.queries.empty(), ErrorCode::InvalidInput, "trace has no query heads");
    std::vector<QueryAccumulator> heads;
    for (const Matrix& q : trace.queries) {
        heads.push_back(accumulate_queries(QueryAccumulator(trace.keys.cols()), q));
    }
    const QueryAccumulator merged = aggregate_gqa_importance(heads, heads.size());
    const ChannelSalience s = compute_salience(merged, trace.keys, BitWidth::two());

    ChannelStats out;
    out.importance = s.importance;
    out.sensitivity = s.sensitivity;
    out.salience = s.salience;
    out.tiers = assign_precision(s.salience, thresholds).tiers;
    out.pearson_importance_sensitivity = pearson(out.importance, out.sensitivity);
    out.pearson_salience_sensitivity = pearson(out.salience, out.sensitivity);
    return out;
}

void write_run_csv(std::ostream& out, const std::vector<RunRecord>& records) {
    out << kRunCsvHeader << '\n';
    for (const auto& r : records) {
        out << r.policy_label << ',' << (r.seed ? std::to_string(*r.seed) : std::string()) << ','
            << num(r.report.effective_bits) << ',' << num(r.report.e_attn_frobenius) << ','
            << num(r.report.e_attn_max) << ',' << num(r.report.output_error_frobenius) << '\n';
    }
}

std::string run_json(const std::vector<RunRecord>& records) {
    json arr = json::array();
    for (const auto& r : records) {
        arr.push_back({{"policy_label", r.policy_label},
                       {"seed", r.seed ? json(*r.seed) : json(nullptr)},
                       {"b_eff", json_num(r.report.effective_bits)},
                       {"e_attn_frobenius", json_num(r.report.e_attn_frobenius)},
                       {"e_attn_max", json_num(r.report.e_attn_max)},
                       {"output_error_frobenius", json_num(r.report.output_error_frobenius)},
                       {"steps", r.report.steps}});
    }
    return json{{"records", arr}}.dump(2);
}

void write_stats_csv(std::ostream& out, const ChannelStats& stats) {
    out << kStatsCsvHeader << '\n';
    for (std::size_t d = 0; d < stats.salience.size(); ++d) {
        out << d << ',' << num(stats.importance[d]) << ',' << num(stats.sensitivity[d]) << ','
            << num(stats.salience[d]) << ',' << to_string(stats.tiers[d]) << '\n';
    }
}

std::string stats_json(const ChannelStats& stats, Thresholds thresholds) {
    const TierCounts counts = PrecisionAssignment{stats.tiers, thresholds}.counts();
    return json{{"channels", stats.salience.size()},
                {"pearson_importance_sensitivity", json_num(stats.pearson_importance_sensitivity)},
                {"pearson_salience_sensitivity", json_num(stats.pearson_salience_sensitivity)},
                {"thresholds", {json_num(thresholds.bf16), json_num(thresholds.uint4)}},
                {"tier_counts", {{"bf16", counts.full}, {"uint4", counts.mid}, {"uint2", counts.low}}}}
        .dump(2);
}

void write_frontier_csv(std::ostream& out, const std::vector<ParetoPoint>& frontier) {
    out << kFrontierCsvHeader << '\n';
    for (const auto& p : frontier) {
        out << num(p.b_eff) << ',' << num(p.fidelity) << ',' << num(p.tau_bf16) << ',' << num(p.tau_uint4) << '\n';
    }
}

void write_evaluations_csv(std::ostream& out, const SearchResult& result) {
    out << kEvaluationsCsvHeader << '\n';
    for (const auto& p : result.evaluated) {
        const bool on = std::find(result.frontier.begin(), result.frontier.end(), p) != result.frontier.end();
        out << num(p.tau_bf16) << ',' << num(p.tau_uint4) << ',' << num(p.b_eff) << ',' << num(p.fidelity) << ','
            << (on ? 1 : 0) << '\n';
    }
}

std::string search_json(const SearchResult& result) {
    auto point = [](const ParetoPoint& p) {
        return json{{"tau_bf16", json_num(p.tau_bf16)},
                    {"tau_uint4", json_num(p.tau_uint4)},
                    {"b_eff", json_num(p.b_eff)},
                    {"fidelity", json_num(p.fidelity)}};
    };
    json evaluated = json::array();
    for (const auto& p : result.evaluated) {
        evaluated.push_back(point(p));
    }
    json frontier = json::array();
    for (const auto& p : result.frontier) {
        frontier.push_back(point(p));
    }
    return json{{"fidelity_metric", "mean Frobenius norm of pre-softmax score error (proxy objective)"},
                {"evaluated", evaluated},
                {"frontier", frontier},
                {"selected", result.selected ? point(*result.selected) : json(nullptr)}}
        .dump(2);
}

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidInput:
    case ErrorCode::InvalidThresholds:
    case ErrorCode::BudgetInfeasible:
        return kExitInvalidConfig;
    case ErrorCode::IoError:
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::CorruptFile:
        return kExitMissingDump;
    default:
        return kExitFailure;
    }
}

int run_experiment(const ExperimentConfig& config, std::ostream& log, std::ostream& diag) {
    auto report_error = [&](std::string_view code, const std::string& message) {
        std::string flat = message;
        std::replace(flat.begin(), flat.end(), '\n', ' ');
        std::replace(flat.begin(), flat.end(), '"', '\'');
        diag << "error code=" << code << " message=\"" << flat << "\"\n";
    };
    try {
        config.validate();
        if (config.dump_path) {
            require(std::filesystem::exists(*config.dump_path), ErrorCode::IoError,
                    "dump '" + *config.dump_path + "' does not exist");
        }
        const std::filesystem::path dir(config.out);
        std::filesystem::create_directories(dir);

        switch (config.mode) {
        case ExperimentMode::Run: {
            const auto records = run_policies(config);
            auto csv = open_out(dir / "report.csv");
            write_run_csv(csv, records);
            open_out(dir / "report.json") << run_json(records) << '\n';
            auto timing = open_out(dir / "timing.csv");
            timing << "policy_label,seed,wall_time_ms\n";
            for (const auto& r : records) {
                timing << r.policy_label << ',' << (r.seed ? std::to_string(*r.seed) : std::string()) << ','
                       << num(r.wall_time_ms) << '\n';
            }
            log << "run: " << records.size() << " records written to " << (dir / "report.csv").string() << '\n';
            break;
        }
        case ExperimentMode::Search: {
            require(!config.dump_path, ErrorCode::InvalidInput, "search runs on planted instances only");
            SearchSpec spec;
            spec.range_lo = config.range_lo;
            spec.range_hi = config.range_hi;
            spec.grid_points = config.grid;
            for (std::size_t i = 0; i < config.seeds; ++i) {
                spec.seeds.push_back(config.seed_base + i);
            }
            spec.instance = config.instance;
            spec.steps = config.steps == 0 ? config.instance.tokens : config.steps;
            spec.cache = config.cache;
            spec.max_b_eff = config.max_b_eff;
            spec.threads = config.threads;
            const SearchResult result = pareto_search(spec);
            auto ev = open_out(dir / "evaluations.csv");
            write_evaluations_csv(ev, result);
            auto fr = open_out(dir / "frontier.csv");
            write_frontier_csv(fr, result.frontier);
            open_out(dir / "search.json") << search_json(result) << '\n';
            log << "search: " << result.evaluated.size() << " candidates, " << result.frontier.size()
                << " on frontier";
            if (result.selected) {
                log << ", selected tau=(" << num(result.selected->tau_bf16) << ", "
                    << num(result.selected->tau_uint4) << ") b_eff=" << num(result.selected->b_eff)
                    << " fidelity=" << num(result.selected->fidelity);
            }
            log << '\n';
            break;
        }
        case ExperimentMode::Stats: {
            const DecodeTrace trace = load_trace(config);
            const ChannelStats stats = channel_stats(trace, config.cache.thresholds);
            auto csv = open_out(dir / "channel_stats.csv");
            write_stats_csv(csv, stats);
            open_out(dir / "channel_stats.json") << stats_json(stats, config.cache.thresholds) << '\n';
            log << "stats: " << stats.salience.size() << " channels, pearson(I,S)="
                << num(stats.pearson_importance_sensitivity) << '\n';
            break;
        }
        }
        return kExitOk;
    } catch (const Error& e) {
        report_error(to_string(e.code()), e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        report_error("Internal", e.what());
        return kExitFailure;
    }
}

}  // namespace mixkvq
