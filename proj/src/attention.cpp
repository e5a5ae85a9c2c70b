// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mixkvq/error.hpp"

namespace mixkvq {

namespace {

bool all_finite(const Matrix& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

// Softmax over the first `n` entries, in place.
void softmax_prefix(std::vector<double>& x, std::size_t n) {
    const double peak = *std::max_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        x[j] = std::exp(x[j] - peak);
        total += x[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
        x[j] /= total;
    }
}

}  // namespace

double AttentionInstance::scale() const { return 1.0 / std::sqrt(static_cast<double>(keys.cols())); }

void AttentionInstance::validate() const {
    require(keys.cols() >= 1, ErrorCode::InvalidInput, "attention needs at least one channel");
    require(queries.cols() == keys.cols(), ErrorCode::InvalidInput, "query and key widths differ");
    require(values.rows() == keys.rows(), ErrorCode::InvalidInput, "key and value counts differ");
    require(keys.rows() >= 1, ErrorCode::InvalidInput, "attention needs at least one key");
    require(all_finite(queries) && all_finite(keys) && all_finite(values), ErrorCode::InvalidInput,
            "attention inputs must be finite");
}

AttentionResult attention_exact(const AttentionInstance& inst, bool causal) {
    inst.validate();
    const std::size_t lq = inst.queries.rows();
    const std::size_t lk = inst.keys.rows();
    const double scale = inst.scale();
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();

    AttentionResult out{Matrix(lq, lk, neg_inf), Matrix(lq, lk, 0.0), Matrix(lq, inst.values.cols(), 0.0)};
    std::vector<double> row(lk);
    for (std::size_t i = 0; i < lq; ++i) {
        const std::size_t visible = causal ? std::min(i + 1, lk) : lk;
        for (std::size_t j = 0; j < visible; ++j) {
            row[j] = dot(inst.queries.row(i), inst.keys.row(j)) * scale;
            out.logits(i, j) = row[j];
        }
        softmax_prefix(row, visible);
        for (std::size_t j = 0; j < visible; ++j) {
            out.weights(i, j) = row[j];
            for (std::size_t c = 0; c < inst.values.cols(); ++c) {
                out.outputs(i, c) += row[j] * inst.values(j, c);
            }
        }
    }
    return out;
}

Matrix attention_error(const AttentionInstance& inst, const Matrix& k_tilde) {
    require(k_tilde.rows() == inst.keys.rows() && k_tilde.cols() == inst.keys.cols(), ErrorCode::InvalidInput,
            "reconstructed keys must match the key shape");
    require(inst.queries.cols() == inst.keys.cols(), ErrorCode::InvalidInput, "query and key widths differ");
    Matrix diff(inst.keys.rows(), inst.keys.cols());
    for (std::size_t j = 0; j < diff.rows(); ++j) {
        for (std::size_t d = 0; d < diff.cols(); ++d) {
            diff(j, d) = inst.keys(j, d) - k_tilde(j, d);
        }
    }
    Matrix out(inst.queries.rows(), inst.keys.rows());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            out(i, j) = dot(inst.queries.row(i), diff.row(j));
        }
    }
    return out;
}

void PlantedSpec::validate() const {
    require(channels >= 1 && tokens >= 1, ErrorCode::InvalidInput, "planted instance needs channels and tokens");
    require(scale_outliers <= channels && query_outliers <= channels, ErrorCode::InvalidInput,
            "outlier counts exceed channel count");
    require(overlap <= std::min(scale_outliers, query_outliers), ErrorCode::InvalidInput,
            "overlap exceeds an outlier count");
    require(scale_outliers + query_outliers - overlap <= channels, ErrorCode::InvalidInput,
            "outlier sets do not fit in the channel count");
    require(outlier_gain > 0.0 && std::isfinite(outlier_gain), ErrorCode::InvalidInput, "gain must be positive");
}

PlantedInstance generate_planted_instance(const PlantedSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);

    std::vector<std::size_t> perm(spec.channels);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);

    PlantedInstance out;
    out.scale_channels.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(spec.scale_outliers));
    // The first `overlap` scale channels are shared; the rest come from after the scale set.
    out.query_channels.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(spec.overlap));
    const auto rest = perm.begin() + static_cast<std::ptrdiff_t>(spec.scale_outliers);
    out.query_channels.insert(out.query_channels.end(), rest,
                              rest + static_cast<std::ptrdiff_t>(spec.query_outliers - spec.overlap));
    std::sort(out.scale_channels.begin(), out.scale_channels.end());
    std::sort(out.query_channels.begin(), out.query_channels.end());

    std::uniform_real_distribution<double> jitter(0.8, 1.2);
    std::vector<double> key_gain(spec.channels, 1.0);
    std::vector<double> query_gain(spec.channels, 1.0);
    for (std::size_t d : out.scale_channels) {
        key_gain[d] = spec.outlier_gain * jitter(rng);
    }
    for (std::size_t d : out.query_channels) {
        query_gain[d] = spec.outlier_gain * jitter(rng);
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    auto& inst = out.instance;
    inst.queries = Matrix(spec.tokens, spec.channels);
    inst.keys = Matrix(spec.tokens, spec.channels);
    inst.values = Matrix(spec.tokens, spec.channels);
    for (std::size_t t = 0; t < spec.tokens; ++t) {
        for (std::size_t d = 0; d < spec.channels; ++d) {
            inst.queries(t, d) = normal(rng) * query_gain[d];
            inst.keys(t, d) = normal(rng) * key_gain[d];
            inst.values(t, d) = normal(rng);
        }
    }
    return out;
}

DecodeTrace DecodeTrace::from_instance(const AttentionInstance& inst) {
    return DecodeTrace{{inst.queries}, inst.keys, inst.values};
}

std::size_t DecodeTrace::length() const noexcept {
    std::size_t n = std::min(keys.rows(), values.rows());
    for (const Matrix& q : queries) {
        n = std::min(n, q.rows());
    }
    return n;
}

FidelityReport decode_simulation(const DecodeTrace& trace, const CacheConfig& config,
                                 const AllocationPolicy& policy, std::size_t steps, DecodeOptions options) {
    config.validate();
    require(steps >= 1, ErrorCode::InvalidInput, "decode needs at least one step");
    require(trace.queries.size() == config.heads_per_kv_group, ErrorCode::InvalidInput,
            "trace query heads do not match heads_per_kv_group");
    require(trace.length() >= steps, ErrorCode::InvalidInput, "trace is shorter than the requested steps");

    const std::size_t dim = trace.keys.cols();
    const std::size_t vdim = trace.values.cols();
    const std::size_t heads = trace.queries.size();
    for (const Matrix& q : trace.queries) {
        require(q.cols() == dim, ErrorCode::InvalidInput, "query head width differs from key width");
    }

    Matrix keys = trace.keys.slice_rows(0, steps);
    const Matrix values = trace.values.slice_rows(0, steps);
    std::vector<Matrix> queries;
    for (const Matrix& q : trace.queries) {
        queries.push_back(q.slice_rows(0, steps));
    }
    if (options.apply_rope) {
        std::vector<double> pos(steps);
        std::iota(pos.begin(), pos.end(), 0.0);
        keys = apply_rope(keys, pos, options.rope_theta);
        for (Matrix& q : queries) {
            q = apply_rope(q, pos, options.rope_theta);
        }
    }
    require(all_finite(keys) && all_finite(values) &&
                std::all_of(queries.begin(), queries.end(), [](const Matrix& q) { return all_finite(q); }),
            ErrorCode::InvalidInput, "trace contains non-finite values");

    MixKVCache cache(config, dim, vdim, policy);
    Matrix k_tilde(steps, dim);
    Matrix v_tilde(steps, vdim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));

    FidelityReport report;
    report.policy_label = policy.label();
    report.steps = steps;

    double e_sq = 0.0;
    double out_sq = 0.0;
    std::vector<double> q_row(dim * heads);
    std::vector<double> exact_w(steps);
    std::vector<double> quant_w(steps);
    std::size_t synced = 0;

    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t h = 0; h < heads; ++h) {
            std::copy_n(queries[h].row(t).begin(), dim, q_row.begin() + static_cast<std::ptrdiff_t>(h * dim));
        }
        // Unflushed rows are exact; flushed rows are refreshed from the cache.
        std::copy_n(keys.row(t).begin(), dim, k_tilde.row(t).begin());
        std::copy_n(values.row(t).begin(), vdim, v_tilde.row(t).begin());
        if (cache.append_kv(keys.row(t), values.row(t), q_row, t)) {
            const Matrix rk = cache.reconstruct_keys();
            const Matrix rv = cache.reconstruct_values();
            for (std::size_t r = synced; r < cache.flushed_tokens(); ++r) {
                std::copy_n(rk.row(r).begin(), dim, k_tilde.row(r).begin());
                std::copy_n(rv.row(r).begin(), vdim, v_tilde.row(r).begin());
            }
            synced = cache.flushed_tokens();
        }

        const std::size_t visible = t + 1;
        for (std::size_t h = 0; h < heads; ++h) {
            const auto q = queries[h].row(t);
            for (std::size_t j = 0; j < visible; ++j) {
                const double exact = dot(q, keys.row(j));
                const double approx = dot(q, k_tilde.row(j));
                const double err = exact - approx;
                e_sq += err * err;
                report.e_attn_max = std::max(report.e_attn_max, std::abs(err));
                exact_w[j] = exact * scale;
                quant_w[j] = approx * scale;
            }
            softmax_prefix(exact_w, visible);
            softmax_prefix(quant_w, visible);
            for (std::size_t c = 0; c < vdim; ++c) {
                double o_exact = 0.0;
                double o_quant = 0.0;
                for (std::size_t j = 0; j < visible; ++j) {
                    o_exact += exact_w[j] * values(j, c);
                    o_quant += quant_w[j] * v_tilde(j, c);
                }
                out_sq += (o_exact - o_quant) * (o_exact - o_quant);
            }
        }
    }

    report.e_attn_frobenius = std::sqrt(e_sq);
    report.output_error_frobenius = std::sqrt(out_sq);
    report.effective_bits = cache.flushed_tokens() > 0 ? cache.effective_bitwidth() : 16.0;
    return report;
}

FidelityReport decode_simulation(const PlantedSpec& spec, std::uint64_t seed, const CacheConfig& config,
                                 const AllocationPolicy& policy, std::size_t steps) {
    require(steps <= spec.tokens, ErrorCode::InvalidInput, "planted instance is shorter than the requested steps");
    const PlantedInstance planted = generate_planted_instance(spec, seed);
    return decode_simulation(DecodeTrace::from_instance(planted.instance), config, policy, steps);
}

}  // namespace mixkvq
