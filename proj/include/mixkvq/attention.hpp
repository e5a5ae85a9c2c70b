// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mixkvq/kv_cache.hpp"
#include "mixkvq/matrix.hpp"
#include "mixkvq/policy.hpp"

namespace mixkvq {

struct AttentionInstance {
    Matrix queries;  // L_q x D
    Matrix keys;     // L_k x D
    Matrix values;   // L_k x D_v

    /// 1 / sqrt(D).
    double scale() const;
    /// Throws InvalidInput on inconsistent shapes or non-finite entries.
    void validate() const;
};

struct AttentionResult {
    Matrix logits;   // scaled, masked entries are -inf
    Matrix weights;  // softmax over each row
    Matrix outputs;  // weights * V
};

/// softmax(Q K^T / sqrt(D)) V. With `causal`, key j is masked for query i when j > i.
AttentionResult attention_exact(const AttentionInstance& inst, bool causal);

/// Pre-softmax score error Q (K - k_tilde)^T.
Matrix attention_error(const AttentionInstance& inst, const Matrix& k_tilde);

struct FidelityReport {
    std::string policy_label;
    double e_attn_frobenius = 0.0;
    double e_attn_max = 0.0;
    double output_error_frobenius = 0.0;
    double effective_bits = 16.0;
    std::size_t steps = 0;

    bool operator==(const FidelityReport&) const = default;
};

/// Parameters for the synthetic instance generator: Gaussian channels, with
/// `scale_outliers` key channels and `query_outliers` query channels blown up
/// by roughly `outlier_gain`. Exactly `overlap` channels are in both sets.
struct PlantedSpec {
    std::size_t channels = 64;
    std::size_t tokens = 512;
    std::size_t scale_outliers = 4;
    std::size_t query_outliers = 4;
    std::size_t overlap = 0;
    double outlier_gain = 10.0;

    void validate() const;
    bool operator==(const PlantedSpec&) const = default;
};

struct PlantedInstance {
    AttentionInstance instance;
    std::vector<std::size_t> scale_channels;  // sorted
    std::vector<std::size_t> query_channels;  // sorted
};

/// Deterministic for a given (spec, seed).
PlantedInstance generate_planted_instance(const PlantedSpec& spec, std::uint64_t seed);

/// Rows to replay through a cache: one T x D query matrix per query head of
/// the GQA group, plus the shared keys and values.
struct DecodeTrace {
    std::vector<Matrix> queries;
    Matrix keys;
    Matrix values;

    static DecodeTrace from_instance(const AttentionInstance& inst);
    std::size_t length() const noexcept;
};

struct DecodeOptions {
    /// Rotate queries and keys by their position before anything else sees them.
    bool apply_rope = false;
    double rope_theta = kDefaultRopeTheta;
};

/// Replays the first `steps` rows autoregressively: each step appends one
/// (k, v, q) row to a cache under `policy`, then the step's queries attend
/// over all tokens so far through both the exact keys/values and the cache's
/// reconstruction. Error norms are accumulated over every step and head.
FidelityReport decode_simulation(const DecodeTrace& trace, const CacheConfig& config,
                                 const AllocationPolicy& policy, std::size_t steps, DecodeOptions options = {});

/// Same, on a planted instance generated from `seed`.
FidelityReport decode_simulation(const PlantedSpec& spec, std::uint64_t seed, const CacheConfig& config,
                                 const AllocationPolicy& policy, std::size_t steps);

}  // namespace mixkvq
