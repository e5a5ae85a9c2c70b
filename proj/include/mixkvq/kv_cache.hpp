// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mixkvq/matrix.hpp"
#include "mixkvq/policy.hpp"
#include "mixkvq/quant.hpp"
#include "mixkvq/salience.hpp"

namespace mixkvq {

/// Which queries feed the importance score at flush time.
enum class ImportanceWindow {
    Running,  // every query since the start of the sequence
    Block,    // only queries appended since the previous flush
};

struct CacheConfig {
    std::size_t group_size = 32;
    std::size_t residual_len = 128;
    std::size_t sink_len = 32;
    std::size_t heads_per_kv_group = 1;
    Thresholds thresholds{};
    BitWidth value_bits = BitWidth::two();
    ImportanceWindow importance = ImportanceWindow::Running;

    /// Throws InvalidInput (or InvalidThresholds) when an invariant is broken.
    void validate() const;

    bool operator==(const CacheConfig&) const = default;
};

/// Full-precision key columns for channels assigned the top tier in one
/// block. Channels are sorted ascending; columns[i] belongs to channels[i].
struct OutlierColumns {
    std::vector<std::size_t> channels;
    std::vector<std::vector<double>> columns;

    const std::vector<double>* find(std::size_t channel) const;

    bool operator==(const OutlierColumns&) const = default;
};

/// One flushed residual block of keys.
///
/// Leading rows that fall inside the attention sink are kept verbatim in
/// `sink`. The remaining `quantized_rows` tokens are stored per channel:
/// either as token-axis groups of `group_size` codes (4- or 2-bit tier), or as
/// an outlier column.
struct KeyBlock {
    std::size_t first_token = 0;
    Matrix sink;
    std::size_t quantized_rows = 0;
    std::optional<ChannelSalience> scores;
    std::optional<PrecisionAssignment> assignment;
    std::vector<std::vector<QuantizedGroup>> channel_groups;
    OutlierColumns outliers;

    std::size_t rows() const noexcept { return sink.rows() + quantized_rows; }

    bool operator==(const KeyBlock&) const = default;
};

struct MixedKeyCache {
    std::vector<KeyBlock> blocks;
    Matrix residual;

    bool operator==(const MixedKeyCache&) const = default;
};

/// A flushed value row: verbatim when `exact` is nonempty, otherwise
/// hidden-axis groups of `group_size` elements quantized within this token.
struct ValueRow {
    std::vector<double> exact;
    std::vector<QuantizedGroup> groups;

    bool operator==(const ValueRow&) const = default;
};

struct TokenValueCache {
    std::vector<ValueRow> rows;
    Matrix residual;

    bool operator==(const TokenValueCache&) const = default;
};

/// Everything a cache accumulates while decoding; enough to restore it.
struct CacheState {
    MixedKeyCache keys;
    TokenValueCache values;
    std::vector<QueryAccumulator> running;
    std::vector<QueryAccumulator> window;
    std::vector<std::size_t> positions;
    std::size_t flushed_tokens = 0;

    bool operator==(const CacheState&) const = default;
};

/// Streaming mixed-precision KV cache for one KV head.
///
/// New rows land in a full-precision residual buffer. When the buffer holds
/// `residual_len` rows it is flushed: key channels are scored, split into
/// tiers by the allocation policy, and packed; value rows are quantized per
/// token. Query rows are accumulated on every append. With GQA the query row
/// carries `heads_per_kv_group` heads back to back.
///
/// Single writer. Const members may run concurrently with each other.
class MixKVCache {
public:
    MixKVCache(CacheConfig config, std::size_t key_dim, std::size_t value_dim,
               AllocationPolicy policy = AllocationPolicy::salience());

    /// Restores a cache from a previously captured state.
    static MixKVCache from_state(CacheConfig config, std::size_t key_dim, std::size_t value_dim,
                                 AllocationPolicy policy, CacheState state);

    /// Returns true when this append triggered a flush.
    bool append_kv(std::span<const double> key, std::span<const double> value, std::span<const double> query,
                   std::size_t position);

    /// Loads exactly `residual_len` rows into an empty residual buffer and
    /// flushes them in one step.
    void append_block(const Matrix& keys, const Matrix& values, const Matrix& queries,
                      std::span<const std::size_t> positions);

    /// Throws NothingToFlush when the residual buffer is empty.
    void flush_block();

    Matrix reconstruct_keys() const;
    Matrix reconstruct_values() const;

    /// Mean stored bits per key element; sink and residual rows count as 16.
    /// Throws Undefined until at least one token was flushed.
    double effective_bitwidth() const;
    /// (zero point, scale) pairs held by key and value groups.
    std::size_t metadata_pairs() const noexcept;

    /// Importance the next flush would use (GQA heads already merged).
    QueryAccumulator importance_accumulator() const;

    std::size_t token_count() const noexcept { return state_.positions.size(); }
    std::size_t flushed_tokens() const noexcept { return state_.flushed_tokens; }
    std::size_t residual_size() const noexcept { return state_.keys.residual.rows(); }
    std::size_t key_dim() const noexcept { return key_dim_; }
    std::size_t value_dim() const noexcept { return value_dim_; }
    const CacheConfig& config() const noexcept { return config_; }
    const AllocationPolicy& policy() const noexcept { return policy_; }
    const CacheState& state() const noexcept { return state_; }
    const MixedKeyCache& keys() const noexcept { return state_.keys; }
    const TokenValueCache& values() const noexcept { return state_.values; }
    std::vector<PrecisionAssignment> assignment_history() const;

    bool operator==(const MixKVCache&) const = default;

private:
    void push_row(std::span<const double> key, std::span<const double> value, std::span<const double> query,
                  std::size_t position);
    BitWidth value_width() const noexcept;

    CacheConfig config_;
    std::size_t key_dim_;
    std::size_t value_dim_;
    AllocationPolicy policy_;
    CacheState state_;
};

}  // namespace mixkvq
