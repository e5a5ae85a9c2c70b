// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/kv_cache.hpp"

#include <algorithm>
#include <string>

#include "mixkvq/error.hpp"

namespace mixkvq {

void CacheConfig::validate() const {
    require(group_size >= 1, ErrorCode::InvalidInput, "group_size must be at least 1");
    require(residual_len >= 1, ErrorCode::InvalidInput, "residual_len must be at least 1");
    require(residual_len % group_size == 0, ErrorCode::InvalidInput,
            "residual_len must be a multiple of group_size");
    require(heads_per_kv_group >= 1, ErrorCode::InvalidInput, "heads_per_kv_group must be at least 1");
    thresholds.validate();
}

const std::vector<double>* OutlierColumns::find(std::size_t channel) const {
    const auto it = std::lower_bound(channels.begin(), channels.end(), channel);
    if (it == channels.end() || *it != channel) {
        return nullptr;
    }
    return &columns[static_cast<std::size_t>(it - channels.begin())];
}

MixKVCache::MixKVCache(CacheConfig config, std::size_t key_dim, std::size_t value_dim, AllocationPolicy policy)
    : config_(config), key_dim_(key_dim), value_dim_(value_dim), policy_(policy) {
    config_.validate();
    require(key_dim_ >= 1 && value_dim_ >= 1, ErrorCode::InvalidInput, "key and value widths must be positive");
    state_.keys.residual = Matrix(0, key_dim_);
    state_.values.residual = Matrix(0, value_dim_);
    state_.running.assign(config_.heads_per_kv_group, QueryAccumulator(key_dim_));
    state_.window.assign(config_.heads_per_kv_group, QueryAccumulator(key_dim_));
}

MixKVCache MixKVCache::from_state(CacheConfig config, std::size_t key_dim, std::size_t value_dim,
                                  AllocationPolicy policy, CacheState state) {
    MixKVCache cache(config, key_dim, value_dim, policy);
    require(state.running.size() == config.heads_per_kv_group && state.window.size() == config.heads_per_kv_group,
            ErrorCode::InvalidInput, "state accumulators do not match heads_per_kv_group");
    require(state.keys.residual.cols() == key_dim && state.values.residual.cols() == value_dim,
            ErrorCode::InvalidInput, "state residual widths do not match");
    require(state.keys.residual.rows() == state.values.residual.rows() &&
                state.flushed_tokens + state.keys.residual.rows() == state.positions.size(),
            ErrorCode::InvalidInput, "state token counts are inconsistent");
    cache.state_ = std::move(state);
    return cache;
}

BitWidth MixKVCache::value_width() const noexcept {
    return policy_.kind == AllocationPolicy::Kind::FullPrecision ? BitWidth::full() : config_.value_bits;
}

void MixKVCache::push_row(std::span<const double> key, std::span<const double> value,
                          std::span<const double> query, std::size_t position) {
    require(key.size() == key_dim_, ErrorCode::InvalidInput, "key row width mismatch");
    require(value.size() == value_dim_, ErrorCode::InvalidInput, "value row width mismatch");
    require(query.size() == key_dim_ * config_.heads_per_kv_group, ErrorCode::InvalidInput,
            "query row must hold heads_per_kv_group heads of key width");
    require(state_.positions.empty() || position > state_.positions.back(), ErrorCode::InvalidInput,
            "positions must be strictly increasing");
    require(state_.keys.residual.rows() < config_.residual_len, ErrorCode::InvalidInput, "residual buffer is full");

    state_.keys.residual.push_row(key);
    state_.values.residual.push_row(value);
    for (std::size_t h = 0; h < config_.heads_per_kv_group; ++h) {
        const auto head = query.subspan(h * key_dim_, key_dim_);
        state_.running[h].add_row(head);
        state_.window[h].add_row(head);
    }
    state_.positions.push_back(position);
}

bool MixKVCache::append_kv(std::span<const double> key, std::span<const double> value,
                           std::span<const double> query, std::size_t position) {
    push_row(key, value, query, position);
    if (state_.keys.residual.rows() == config_.residual_len) {
        flush_block();
        return true;
    }
    return false;
}

void MixKVCache::append_block(const Matrix& keys, const Matrix& values, const Matrix& queries,
                              std::span<const std::size_t> positions) {
    require(state_.keys.residual.rows() == 0, ErrorCode::InvalidInput, "append_block needs an empty residual buffer");
    const std::size_t rows = keys.rows();
    require(rows == config_.residual_len && values.rows() == rows && queries.rows() == rows &&
                positions.size() == rows,
            ErrorCode::InvalidInput, "append_block needs exactly residual_len rows of each input");
    require(keys.cols() == key_dim_ && values.cols() == value_dim_ &&
                queries.cols() == key_dim_ * config_.heads_per_kv_group,
            ErrorCode::InvalidInput, "append_block input widths do not match the cache");
    std::size_t last = state_.positions.empty() ? 0 : state_.positions.back();
    for (std::size_t r = 0; r < rows; ++r) {
        require((state_.positions.empty() && r == 0) || positions[r] > last, ErrorCode::InvalidInput,
                "positions must be strictly increasing");
        last = positions[r];
    }

    for (std::size_t h = 0; h < config_.heads_per_kv_group; ++h) {
        Matrix head(rows, key_dim_);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(queries.row(r).begin() + static_cast<std::ptrdiff_t>(h * key_dim_), key_dim_,
                        head.row(r).begin());
        }
        state_.running[h] = accumulate_queries(std::move(state_.running[h]), head);
        state_.window[h] = accumulate_queries(std::move(state_.window[h]), head);
    }
    state_.keys.residual = keys;
    state_.values.residual = values;
    state_.positions.insert(state_.positions.end(), positions.begin(), positions.end());
    flush_block();
}

void MixKVCache::flush_block() {
    Matrix& residual_k = state_.keys.residual;
    Matrix& residual_v = state_.values.residual;
    const std::size_t rows = residual_k.rows();
    require(rows > 0, ErrorCode::NothingToFlush, "residual buffer is empty");

    const std::size_t first = state_.flushed_tokens;
    const std::size_t sink_rows = first < config_.sink_len ? std::min(config_.sink_len - first, rows) : 0;

    KeyBlock block;
    block.first_token = first;
    block.sink = residual_k.slice_rows(0, sink_rows);
    block.quantized_rows = rows - sink_rows;

    if (block.quantized_rows > 0) {
        const Matrix quant = residual_k.slice_rows(sink_rows, rows);
        const auto& accs = config_.importance == ImportanceWindow::Running ? state_.running : state_.window;
        const QueryAccumulator merged = aggregate_gqa_importance(accs, config_.heads_per_kv_group);
        block.scores = compute_salience(merged, quant, BitWidth::two());
        block.assignment = assign_for_policy(policy_, *block.scores, config_.thresholds);

        block.channel_groups.resize(key_dim_);
        for (std::size_t d = 0; d < key_dim_; ++d) {
            const Tier tier = block.assignment->tiers[d];
            std::vector<double> column = quant.column(d);
            if (tier == Tier::FullPrecision) {
                block.outliers.channels.push_back(d);
                block.outliers.columns.push_back(std::move(column));
                continue;
            }
            for (std::size_t start = 0; start < column.size(); start += config_.group_size) {
                const std::size_t len = std::min(config_.group_size, column.size() - start);
                block.channel_groups[d].push_back(
                    quantize_group(std::span<const double>(column).subspan(start, len), tier_width(tier)));
            }
        }
    }

    const BitWidth vbits = value_width();
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = residual_v.row(r);
        ValueRow stored;
        if (r < sink_rows || !vbits.quantized()) {
            stored.exact.assign(row.begin(), row.end());
        } else {
            for (std::size_t start = 0; start < row.size(); start += config_.group_size) {
                const std::size_t len = std::min(config_.group_size, row.size() - start);
                stored.groups.push_back(quantize_group(row.subspan(start, len), vbits));
            }
        }
        state_.values.rows.push_back(std::move(stored));
    }

    state_.keys.blocks.push_back(std::move(block));
    residual_k.clear_rows();
    residual_v.clear_rows();
    for (auto& acc : state_.window) {
        acc.reset();
    }
    state_.flushed_tokens += rows;
}

Matrix MixKVCache::reconstruct_keys() const {
    Matrix out(token_count(), key_dim_);
    std::size_t t = 0;
    for (const KeyBlock& block : state_.keys.blocks) {
        for (std::size_t r = 0; r < block.sink.rows(); ++r, ++t) {
            std::copy_n(block.sink.row(r).begin(), key_dim_, out.row(t).begin());
        }
        std::vector<double> column(block.quantized_rows);
        for (std::size_t d = 0; d < key_dim_ && block.quantized_rows > 0; ++d) {
            if (const auto* exact = block.outliers.find(d)) {
                column = *exact;
            } else {
                std::size_t offset = 0;
                for (const QuantizedGroup& g : block.channel_groups[d]) {
                    dequantize_group_into(g, std::span<double>(column).subspan(offset, g.size()));
                    offset += g.size();
                }
            }
            for (std::size_t r = 0; r < block.quantized_rows; ++r) {
                out(t + r, d) = column[r];
            }
        }
        t += block.quantized_rows;
    }
    for (std::size_t r = 0; r < state_.keys.residual.rows(); ++r, ++t) {
        std::copy_n(state_.keys.residual.row(r).begin(), key_dim_, out.row(t).begin());
    }
    return out;
}

Matrix MixKVCache::reconstruct_values() const {
    Matrix out(token_count(), value_dim_);
    std::size_t t = 0;
    for (const ValueRow& row : state_.values.rows) {
        auto dst = out.row(t++);
        if (!row.exact.empty()) {
            std::copy(row.exact.begin(), row.exact.end(), dst.begin());
            continue;
        }
        std::size_t offset = 0;
        for (const QuantizedGroup& g : row.groups) {
            dequantize_group_into(g, dst.subspan(offset, g.size()));
            offset += g.size();
        }
    }
    for (std::size_t r = 0; r < state_.values.residual.rows(); ++r, ++t) {
        std::copy_n(state_.values.residual.row(r).begin(), value_dim_, out.row(t).begin());
    }
    return out;
}

double MixKVCache::effective_bitwidth() const {
    require(state_.flushed_tokens > 0, ErrorCode::Undefined, "effective bit-width needs at least one flushed token");
    double bits = 0.0;
    for (const KeyBlock& block : state_.keys.blocks) {
        bits += 16.0 * static_cast<double>(block.sink.rows() * key_dim_);
        if (block.assignment) {
            for (Tier tier : block.assignment->tiers) {
                bits += static_cast<double>(tier_bits(tier)) * static_cast<double>(block.quantized_rows);
            }
        }
    }
    bits += 16.0 * static_cast<double>(state_.keys.residual.rows() * key_dim_);
    return bits / static_cast<double>(token_count() * key_dim_);
}

std::size_t MixKVCache::metadata_pairs() const noexcept {
    std::size_t pairs = 0;
    for (const KeyBlock& block : state_.keys.blocks) {
        for (const auto& groups : block.channel_groups) {
            pairs += groups.size();
        }
    }
    for (const ValueRow& row : state_.values.rows) {
        pairs += row.groups.size();
    }
    return pairs;
}

QueryAccumulator MixKVCache::importance_accumulator() const {
    const auto& accs = config_.importance == ImportanceWindow::Running ? state_.running : state_.window;
    return aggregate_gqa_importance(accs, config_.heads_per_kv_group);
}

std::vector<PrecisionAssignment> MixKVCache::assignment_history() const {
    std::vector<PrecisionAssignment> out;
    for (const KeyBlock& block : state_.keys.blocks) {
        if (block.assignment) {
            out.push_back(*block.assignment);
        }
    }
    return out;
}

}  // namespace mixkvq
