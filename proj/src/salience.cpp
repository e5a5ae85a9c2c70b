// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/salience.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mixkvq/error.hpp"

namespace mixkvq {

int tier_bits(Tier tier) noexcept { return tier_width(tier).bits(); }

BitWidth tier_width(Tier tier) noexcept {
    switch (tier) {
    case Tier::FullPrecision: return BitWidth::full();
    case Tier::Mid4Bit: return BitWidth::four();
    case Tier::Low2Bit: break;
    }
    return BitWidth::two();
}

std::string_view to_string(Tier tier) noexcept {
    switch (tier) {
    case Tier::FullPrecision: return "bf16";
    case Tier::Mid4Bit: return "uint4";
    case Tier::Low2Bit: break;
    }
    return "uint2";
}

void Thresholds::validate() const {
    require(!std::isnan(bf16) && !std::isnan(uint4), ErrorCode::InvalidThresholds, "threshold is NaN");
    require(uint4 <= bf16, ErrorCode::InvalidThresholds, "tau_uint4 must not exceed tau_bf16");
}

TierCounts PrecisionAssignment::counts() const noexcept {
    TierCounts c;
    for (Tier t : tiers) {
        switch (t) {
        case Tier::FullPrecision: ++c.full; break;
        case Tier::Mid4Bit: ++c.mid; break;
        case Tier::Low2Bit: ++c.low; break;
        }
    }
    return c;
}

double PrecisionAssignment::mean_bits() const noexcept {
    if (tiers.empty()) {
        return 0.0;
    }
    const TierCounts c = counts();
    return static_cast<double>(16 * c.full + 4 * c.mid + 2 * c.low) / static_cast<double>(tiers.size());
}

void QueryAccumulator::add_row(std::span<const double> row) {
    require(row.size() == abs_sum.size(), ErrorCode::InvalidInput, "query row width mismatch");
    for (std::size_t d = 0; d < row.size(); ++d) {
        abs_sum[d] += std::abs(row[d]);
    }
    ++count;
}

void QueryAccumulator::reset() noexcept {
    std::fill(abs_sum.begin(), abs_sum.end(), 0.0);
    count = 0;
}

std::vector<double> importance_score(const QueryAccumulator& acc) {
    require(acc.count > 0, ErrorCode::EmptyWindow, "importance needs at least one query row");
    std::vector<double> out(acc.dim());
    const auto n = static_cast<double>(acc.count);
    for (std::size_t d = 0; d < out.size(); ++d) {
        out[d] = acc.abs_sum[d] / n;
    }
    return out;
}

QueryAccumulator accumulate_queries(QueryAccumulator acc, const Matrix& q_block) {
    if (q_block.rows() == 0) {
        return acc;
    }
    require(q_block.cols() == acc.dim(), ErrorCode::InvalidInput, "query block width mismatch");
    for (std::size_t r = 0; r < q_block.rows(); ++r) {
        acc.add_row(q_block.row(r));
    }
    return acc;
}

std::vector<double> sensitivity_score(const Matrix& key_block, BitWidth bits) {
    require(key_block.rows() > 0, ErrorCode::InvalidInput, "sensitivity needs at least one token");
    require(bits.quantized(), ErrorCode::InvalidInput, "sensitivity needs a 2- or 4-bit width");
    const auto levels = static_cast<double>(bits.max_code());
    std::vector<double> out(key_block.cols());
    for (std::size_t d = 0; d < key_block.cols(); ++d) {
        double lo = key_block(0, d);
        double hi = lo;
        for (std::size_t t = 1; t < key_block.rows(); ++t) {
            lo = std::min(lo, key_block(t, d));
            hi = std::max(hi, key_block(t, d));
        }
        out[d] = (hi - lo) / levels;
    }
    return out;
}

std::vector<double> salience_score(std::span<const double> importance, std::span<const double> sensitivity) {
    require(importance.size() == sensitivity.size(), ErrorCode::InvalidInput,
            "importance and sensitivity lengths differ");
    std::vector<double> out(importance.size());
    for (std::size_t d = 0; d < out.size(); ++d) {
        out[d] = importance[d] * sensitivity[d];
    }
    return out;
}

ChannelSalience compute_salience(const QueryAccumulator& acc, const Matrix& key_block, BitWidth bits) {
    require(acc.dim() == key_block.cols(), ErrorCode::InvalidInput, "accumulator and key widths differ");
    ChannelSalience s;
    s.importance = importance_score(acc);
    s.sensitivity = sensitivity_score(key_block, bits);
    s.salience = salience_score(s.importance, s.sensitivity);
    return s;
}

PrecisionAssignment assign_precision(std::span<const double> salience, Thresholds thresholds) {
    thresholds.validate();
    PrecisionAssignment out;
    out.thresholds = thresholds;
    out.tiers.reserve(salience.size());
    for (double a : salience) {
        if (a > thresholds.bf16) {
            out.tiers.push_back(Tier::FullPrecision);
        } else if (a > thresholds.uint4) {
            out.tiers.push_back(Tier::Mid4Bit);
        } else {
            out.tiers.push_back(Tier::Low2Bit);
        }
    }
    return out;
}

QueryAccumulator aggregate_gqa_importance(std::span<const QueryAccumulator> per_head,
                                          std::size_t heads_per_kv_group) {
    require(!per_head.empty(), ErrorCode::InvalidInput, "GQA group has no query heads");
    require(per_head.size() == heads_per_kv_group, ErrorCode::InvalidInput,
            "accumulator count does not match heads_per_kv_group");
    QueryAccumulator merged(per_head.front().dim());
    for (const auto& head : per_head) {
        require(head.dim() == merged.dim(), ErrorCode::InvalidInput, "query heads differ in width");
        require(head.count == per_head.front().count, ErrorCode::InvalidInput, "query heads differ in row count");
        for (std::size_t d = 0; d < merged.dim(); ++d) {
            merged.abs_sum[d] += head.abs_sum[d];
        }
        merged.count += head.count;
    }
    return merged;
}

Matrix apply_rope(const Matrix& x, std::span<const double> positions, double theta_base) {
    require(x.cols() % 2 == 0, ErrorCode::InvalidInput, "rotary embedding needs an even channel count");
    require(positions.size() == x.rows(), ErrorCode::InvalidInput, "one position per row required");
    const std::size_t dim = x.cols();
    Matrix out(x.rows(), dim);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t j = 0; j < dim / 2; ++j) {
            const double inv_freq = std::pow(theta_base, -2.0 * static_cast<double>(j) / static_cast<double>(dim));
            const double angle = positions[r] * inv_freq;
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double a = x(r, 2 * j);
            const double b = x(r, 2 * j + 1);
            out(r, 2 * j) = a * c - b * s;
            out(r, 2 * j + 1) = a * s + b * c;
        }
    }
    return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && !a.empty(), ErrorCode::InvalidInput, "pearson needs equal nonempty inputs");
    const auto n = static_cast<double>(a.size());
    double ma = 0.0;
    double mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace mixkvq
