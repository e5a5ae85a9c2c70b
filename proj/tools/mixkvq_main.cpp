// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line runner: decode simulations, threshold search, channel stats.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixkvq/dump.hpp"
#include "mixkvq/error.hpp"
#include "mixkvq/experiment.hpp"

using namespace mixkvq;

namespace {

std::vector<double> split_numbers(const std::string& text, std::size_t expected, const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            require(used == item.size(), ErrorCode::InvalidInput, "");
        } catch (...) {
            fail(ErrorCode::InvalidInput, flag + " expects numbers, got '" + text + "'");
        }
    }
    require(out.size() == expected, ErrorCode::InvalidInput,
            flag + " expects " + std::to_string(expected) + " comma-separated values");
    return out;
}

std::size_t as_count(double x, const std::string& flag) {
    require(x >= 0 && x == static_cast<double>(static_cast<std::size_t>(x)), ErrorCode::InvalidInput,
            flag + " expects non-negative integers");
    return static_cast<std::size_t>(x);
}

struct Flags {
    std::string config_file;
    std::string thresholds;
    std::string planted;
    std::string range;
    std::string tier_budget;
    std::string importance;
    int value_bits = 0;
};

void add_cache_flags(CLI::App* cmd, ExperimentConfig& cfg, Flags& f) {
    cmd->add_option("--config", f.config_file, "JSON experiment config; flags override its fields");
    cmd->add_option("--thresholds", f.thresholds, "tau_bf16,tau_uint4");
    cmd->add_option("--group-size", cfg.cache.group_size, "tokens or elements per quantization group");
    cmd->add_option("--residual-len", cfg.cache.residual_len, "full-precision residual buffer length");
    cmd->add_option("--sink-len", cfg.cache.sink_len, "leading tokens kept at full precision");
    cmd->add_option("--value-bits", f.value_bits, "value cache bit width (2, 4 or 16)");
    cmd->add_option("--importance", f.importance, "running | block");
    cmd->add_option("--planted", f.planted, "planted instance D,L,ns,nq,ov");
    cmd->add_option("--seeds", cfg.seeds, "number of seeds");
    cmd->add_option("--seed-base", cfg.seed_base, "first seed");
    cmd->add_option("--steps", cfg.steps, "decode steps (0 = whole instance)");
    cmd->add_option("--out", cfg.out, "output directory");
}

// Flags given on the command line win over the config file, so the file is
// loaded first and CLI11 parses again into the loaded struct.
void apply_flags(ExperimentConfig& cfg, const Flags& f) {
    if (!f.thresholds.empty()) {
        const auto t = split_numbers(f.thresholds, 2, "--thresholds");
        cfg.cache.thresholds = Thresholds{t[0], t[1]};
    }
    if (!f.planted.empty()) {
        const auto p = split_numbers(f.planted, 5, "--planted");
        cfg.instance.channels = as_count(p[0], "--planted");
        cfg.instance.tokens = as_count(p[1], "--planted");
        cfg.instance.scale_outliers = as_count(p[2], "--planted");
        cfg.instance.query_outliers = as_count(p[3], "--planted");
        cfg.instance.overlap = as_count(p[4], "--planted");
    }
    if (!f.range.empty()) {
        const auto r = split_numbers(f.range, 2, "--range");
        cfg.range_lo = r[0];
        cfg.range_hi = r[1];
    }
    if (!f.tier_budget.empty()) {
        const auto b = split_numbers(f.tier_budget, 2, "--tier-budget");
        cfg.tier_budget = TierBudget{as_count(b[0], "--tier-budget"), as_count(b[1], "--tier-budget")};
    }
    if (f.value_bits != 0) {
        cfg.cache.value_bits = BitWidth::from_bits(f.value_bits);
    }
    if (!f.importance.empty()) {
        require(f.importance == "running" || f.importance == "block", ErrorCode::InvalidInput,
                "--importance must be running or block");
        cfg.cache.importance = f.importance == "running" ? ImportanceWindow::Running : ImportanceWindow::Block;
    }
}

void diagnose(const Error& e) {
    std::cerr << "error code=" << to_string(e.code()) << " message=\"" << e.what() << "\"\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-precision KV cache quantization experiments"};
    app.require_subcommand(1);

    ExperimentConfig cfg;
    Flags flags;
    std::string dump;
    std::string grid_budget;

    auto* run = app.add_subcommand("run", "decode simulation under one or more allocation policies");
    add_cache_flags(run, cfg, flags);
    run->add_option("--policy", cfg.policy, "salience | error-only | kv2 | kv4 | full-precision");
    run->add_option("--compare", cfg.compare, "additional policies evaluated on the same instances");
    run->add_option("--tier-budget", flags.tier_budget, "matched-budget mode: full,mid channels per block");
    run->add_option("--dump", dump, "tensor dump to replay instead of planted instances");
    run->add_option("--layer", cfg.layer, "dump layer");
    run->add_option("--head", cfg.head, "dump KV head");
    run->add_flag("--rope", cfg.apply_rope, "apply rotary embeddings before caching");

    auto* search = app.add_subcommand("search", "grid search over (tau_bf16, tau_uint4) with Pareto extraction");
    add_cache_flags(search, cfg, flags);
    search->add_option("--grid", cfg.grid, "grid points per threshold axis");
    search->add_option("--range", flags.range, "LO,HI threshold range");
    search->add_option("--budget", grid_budget, "maximum effective bit-width for point selection");
    search->add_option("--threads", cfg.threads, "worker threads (0 = all cores)");

    auto* stats = app.add_subcommand("stats", "per-channel importance / sensitivity / salience table");
    add_cache_flags(stats, cfg, flags);
    stats->add_option("--dump", dump, "tensor dump to analyse");
    stats->add_option("--layer", cfg.layer, "dump layer");
    stats->add_option("--head", cfg.head, "dump KV head");

    std::string dump_out;
    auto* make_dump = app.add_subcommand("make-dump", "write a planted instance as a tensor dump");
    make_dump->add_option("--planted", flags.planted, "planted instance D,L,ns,nq,ov");
    make_dump->add_option("--seed", cfg.seed_base, "generator seed");
    make_dump->add_option("--out", dump_out, "dump file path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error code=InvalidArguments message=\"" << e.what() << "\"\n";
        return kExitInvalidConfig;
    }

    try {
        if (!flags.config_file.empty()) {
            std::ifstream in(flags.config_file);
            require(static_cast<bool>(in), ErrorCode::InvalidInput, "cannot read config '" + flags.config_file + "'");
            std::stringstream text;
            text << in.rdbuf();
            ExperimentConfig loaded = experiment_config_from_json(text.str());
            // Re-parse so explicit flags land on top of the file contents.
            cfg = loaded;
            app.parse(argc, argv);
        }
        apply_flags(cfg, flags);
        if (!dump.empty()) {
            cfg.dump_path = dump;
        }
        if (!grid_budget.empty()) {
            cfg.max_b_eff = split_numbers(grid_budget, 1, "--budget")[0];
        }
    } catch (const Error& e) {
        diagnose(e);
        return exit_code_for(e.code());
    } catch (const CLI::ParseError& e) {
        std::cerr << "error code=InvalidArguments message=\"" << e.what() << "\"\n";
        return kExitInvalidConfig;
    }

    if (*make_dump) {
        try {
            TensorDump out;
            add_trace(out, 0, 0, DecodeTrace::from_instance(generate_planted_instance(cfg.instance, cfg.seed_base).instance));
            write_dump(out, dump_out);
            std::cout << "make-dump: wrote " << dump_out << '\n';
            return kExitOk;
        } catch (const Error& e) {
            diagnose(e);
            return exit_code_for(e.code());
        }
    }

    cfg.mode = *run ? ExperimentMode::Run : *search ? ExperimentMode::Search : ExperimentMode::Stats;
    return run_experiment(cfg, std::cout, std::cerr);
}
