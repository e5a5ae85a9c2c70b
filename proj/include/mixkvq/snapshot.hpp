// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixkvq/kv_cache.hpp"

namespace mixkvq {

/// Binary snapshot of a cache ("MKVC", u8 version 1, little-endian body).
/// Restoring a snapshot yields a cache that compares equal to the original.
std::vector<std::uint8_t> encode_cache(const MixKVCache& cache);
MixKVCache decode_cache(std::span<const std::uint8_t> bytes);

void save_cache(const MixKVCache& cache, const std::string& path);
MixKVCache load_cache(const std::string& path);

}  // namespace mixkvq
