// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/snapshot.hpp"

#include <algorithm>

#include "byte_io.hpp"
#include "mixkvq/error.hpp"

namespace mixkvq {

namespace {

constexpr char kMagic[4] = {'M', 'K', 'V', 'C'};
constexpr std::uint8_t kVersion = 1;

using detail::ByteReader;
using detail::ByteWriter;

void put_vec(ByteWriter& w, const std::vector<double>& v) {
    w.u64(v.size());
    for (double x : v) {
        w.f64(x);
    }
}

std::vector<double> get_vec(ByteReader& r) {
    const auto n = r.u64();
    require(n <= r.remaining() / 8, ErrorCode::CorruptFile, "vector length exceeds snapshot size");
    std::vector<double> v(n);
    for (auto& x : v) {
        x = r.f64();
    }
    return v;
}

void put_matrix(ByteWriter& w, const Matrix& m) {
    w.u64(m.rows());
    w.u64(m.cols());
    for (double x : m.data()) {
        w.f64(x);
    }
}

Matrix get_matrix(ByteReader& r) {
    const auto rows = r.u64();
    const auto cols = r.u64();
    require(cols == 0 || rows <= r.remaining() / 8 / cols, ErrorCode::CorruptFile, "matrix exceeds snapshot size");
    Matrix m(rows, cols);
    for (auto& x : m.data()) {
        x = r.f64();
    }
    return m;
}

BitWidth get_width(ByteReader& r) {
    const int bits = r.u8();
    require(bits == 2 || bits == 4 || bits == 16, ErrorCode::CorruptFile, "invalid bit width in snapshot");
    return BitWidth::from_bits(bits);
}

void put_group(ByteWriter& w, const QuantizedGroup& g) {
    w.u8(static_cast<std::uint8_t>(g.bit_width().bits()));
    w.u64(g.codes.len);
    w.u64(g.codes.bytes.size());
    w.raw(g.codes.bytes);
    w.f64(g.zero_point);
    w.f64(g.scale);
}

QuantizedGroup get_group(ByteReader& r) {
    QuantizedGroup g;
    g.codes.bit_width = get_width(r);
    g.codes.len = r.u64();
    const auto n = r.u64();
    require(n <= r.remaining(), ErrorCode::CorruptFile, "group bytes exceed snapshot size");
    const auto bytes = r.raw(n);
    g.codes.bytes.assign(bytes.begin(), bytes.end());
    g.zero_point = r.f64();
    g.scale = r.f64();
    return g;
}

void put_groups(ByteWriter& w, const std::vector<QuantizedGroup>& groups) {
    w.u64(groups.size());
    for (const auto& g : groups) {
        put_group(w, g);
    }
}

std::vector<QuantizedGroup> get_groups(ByteReader& r) {
    const auto n = r.u64();
    require(n <= r.remaining(), ErrorCode::CorruptFile, "group count exceeds snapshot size");
    std::vector<QuantizedGroup> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        out.push_back(get_group(r));
    }
    return out;
}

void put_accs(ByteWriter& w, const std::vector<QueryAccumulator>& accs) {
    w.u64(accs.size());
    for (const auto& a : accs) {
        put_vec(w, a.abs_sum);
        w.u64(a.count);
    }
}

std::vector<QueryAccumulator> get_accs(ByteReader& r) {
    const auto n = r.u64();
    require(n <= r.remaining(), ErrorCode::CorruptFile, "accumulator count exceeds snapshot size");
    std::vector<QueryAccumulator> out(n);
    for (auto& a : out) {
        a.abs_sum = get_vec(r);
        a.count = r.u64();
    }
    return out;
}

void put_block(ByteWriter& w, const KeyBlock& b) {
    w.u64(b.first_token);
    put_matrix(w, b.sink);
    w.u64(b.quantized_rows);
    w.u8(b.scores.has_value());
    if (b.scores) {
        put_vec(w, b.scores->importance);
        put_vec(w, b.scores->sensitivity);
        put_vec(w, b.scores->salience);
    }
    w.u8(b.assignment.has_value());
    if (b.assignment) {
        w.u64(b.assignment->tiers.size());
        for (Tier t : b.assignment->tiers) {
            w.u8(static_cast<std::uint8_t>(t));
        }
        w.u8(b.assignment->thresholds.has_value());
        if (b.assignment->thresholds) {
            w.f64(b.assignment->thresholds->bf16);
            w.f64(b.assignment->thresholds->uint4);
        }
    }
    w.u64(b.channel_groups.size());
    for (const auto& groups : b.channel_groups) {
        put_groups(w, groups);
    }
    w.u64(b.outliers.channels.size());
    for (std::size_t i = 0; i < b.outliers.channels.size(); ++i) {
        w.u64(b.outliers.channels[i]);
        put_vec(w, b.outliers.columns[i]);
    }
}

KeyBlock get_block(ByteReader& r) {
    KeyBlock b;
    b.first_token = r.u64();
    b.sink = get_matrix(r);
    b.quantized_rows = r.u64();
    if (r.u8() != 0) {
        ChannelSalience s;
        s.importance = get_vec(r);
        s.sensitivity = get_vec(r);
        s.salience = get_vec(r);
        b.scores = std::move(s);
    }
    if (r.u8() != 0) {
        PrecisionAssignment a;
        const auto n = r.u64();
        require(n <= r.remaining(), ErrorCode::CorruptFile, "tier count exceeds snapshot size");
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto t = r.u8();
            require(t <= 2, ErrorCode::CorruptFile, "invalid tier in snapshot");
            a.tiers.push_back(static_cast<Tier>(t));
        }
        if (r.u8() != 0) {
            Thresholds th;
            th.bf16 = r.f64();
            th.uint4 = r.f64();
            a.thresholds = th;
        }
        b.assignment = std::move(a);
    }
    const auto channels = r.u64();
    require(channels <= r.remaining(), ErrorCode::CorruptFile, "channel count exceeds snapshot size");
    for (std::uint64_t d = 0; d < channels; ++d) {
        b.channel_groups.push_back(get_groups(r));
    }
    const auto outliers = r.u64();
    require(outliers <= r.remaining(), ErrorCode::CorruptFile, "outlier count exceeds snapshot size");
    for (std::uint64_t i = 0; i < outliers; ++i) {
        b.outliers.channels.push_back(r.u64());
        b.outliers.columns.push_back(get_vec(r));
    }
    return b;
}

}  // namespace

std::vector<std::uint8_t> encode_cache(const MixKVCache& cache) {
    ByteWriter w;
    for (char c : kMagic) {
        w.u8(static_cast<std::uint8_t>(c));
    }
    w.u8(kVersion);

    const CacheConfig& cfg = cache.config();
    w.u64(cfg.group_size);
    w.u64(cfg.residual_len);
    w.u64(cfg.sink_len);
    w.u64(cfg.heads_per_kv_group);
    w.f64(cfg.thresholds.bf16);
    w.f64(cfg.thresholds.uint4);
    w.u8(static_cast<std::uint8_t>(cfg.value_bits.bits()));
    w.u8(static_cast<std::uint8_t>(cfg.importance));
    w.u64(cache.key_dim());
    w.u64(cache.value_dim());

    const AllocationPolicy& p = cache.policy();
    w.u8(static_cast<std::uint8_t>(p.kind));
    w.u8(static_cast<std::uint8_t>(p.uniform_bits.bits()));
    w.u8(p.budget.has_value());
    w.u64(p.budget ? p.budget->full : 0);
    w.u64(p.budget ? p.budget->mid : 0);

    const CacheState& s = cache.state();
    w.u64(s.keys.blocks.size());
    for (const auto& b : s.keys.blocks) {
        put_block(w, b);
    }
    put_matrix(w, s.keys.residual);
    w.u64(s.values.rows.size());
    for (const auto& row : s.values.rows) {
        put_vec(w, row.exact);
        put_groups(w, row.groups);
    }
    put_matrix(w, s.values.residual);
    put_accs(w, s.running);
    put_accs(w, s.window);
    w.u64(s.positions.size());
    for (auto pos : s.positions) {
        w.u64(pos);
    }
    w.u64(s.flushed_tokens);
    return w.take();
}

MixKVCache decode_cache(std::span<const std::uint8_t> bytes) {
    require(bytes.size() >= 5 && std::equal(bytes.begin(), bytes.begin() + 4, kMagic,
                                            [](std::uint8_t b, char c) { return b == static_cast<std::uint8_t>(c); }),
            ErrorCode::UnsupportedFormat, "not a cache snapshot (bad magic)");
    require(bytes[4] == kVersion, ErrorCode::UnsupportedFormat, "unsupported snapshot version");
    ByteReader r(bytes.subspan(5), ErrorCode::CorruptFile);

    CacheConfig cfg;
    cfg.group_size = r.u64();
    cfg.residual_len = r.u64();
    cfg.sink_len = r.u64();
    cfg.heads_per_kv_group = r.u64();
    cfg.thresholds.bf16 = r.f64();
    cfg.thresholds.uint4 = r.f64();
    cfg.value_bits = get_width(r);
    const auto importance = r.u8();
    require(importance <= 1, ErrorCode::CorruptFile, "invalid importance window in snapshot");
    cfg.importance = static_cast<ImportanceWindow>(importance);
    const auto key_dim = r.u64();
    const auto value_dim = r.u64();

    AllocationPolicy p;
    const auto kind = r.u8();
    require(kind <= 3, ErrorCode::CorruptFile, "invalid policy kind in snapshot");
    p.kind = static_cast<AllocationPolicy::Kind>(kind);
    p.uniform_bits = get_width(r);
    const bool has_budget = r.u8() != 0;
    TierBudget budget{r.u64(), 0};
    budget.mid = r.u64();
    if (has_budget) {
        p.budget = budget;
    }

    CacheState s;
    const auto blocks = r.u64();
    require(blocks <= r.remaining(), ErrorCode::CorruptFile, "block count exceeds snapshot size");
    for (std::uint64_t i = 0; i < blocks; ++i) {
        s.keys.blocks.push_back(get_block(r));
    }
    s.keys.residual = get_matrix(r);
    const auto rows = r.u64();
    require(rows <= r.remaining(), ErrorCode::CorruptFile, "value row count exceeds snapshot size");
    for (std::uint64_t i = 0; i < rows; ++i) {
        ValueRow row;
        row.exact = get_vec(r);
        row.groups = get_groups(r);
        s.values.rows.push_back(std::move(row));
    }
    s.values.residual = get_matrix(r);
    s.running = get_accs(r);
    s.window = get_accs(r);
    const auto n_pos = r.u64();
    require(n_pos <= r.remaining() / 8, ErrorCode::CorruptFile, "position count exceeds snapshot size");
    for (std::uint64_t i = 0; i < n_pos; ++i) {
        s.positions.push_back(r.u64());
    }
    s.flushed_tokens = r.u64();
    require(r.remaining() == 0, ErrorCode::CorruptFile, "trailing bytes in snapshot");

    try {
        return MixKVCache::from_state(cfg, key_dim, value_dim, p, std::move(s));
    } catch (const Error& e) {
        fail(ErrorCode::CorruptFile, std::string("inconsistent snapshot: ") + e.what());
    }
}

void save_cache(const MixKVCache& cache, const std::string& path) { detail::write_file(path, encode_cache(cache)); }

MixKVCache load_cache(const std::string& path) { return decode_cache(detail::read_file(path)); }

}  // namespace mixkvq
