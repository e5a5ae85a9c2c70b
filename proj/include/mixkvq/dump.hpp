// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixkvq/attention.hpp"
#include "mixkvq/matrix.hpp"

namespace mixkvq {

/// Tensor dump container, all integers little-endian:
///
///   "MKVQ" | u8 version = 1 | u8 dtype = 1 (f32 LE) | u16 reserved = 0 | u32 section count
///   per section: u16 name length | name bytes | u8 rank | u64 dims[rank] | f32 payload, row-major
///
/// Sections are named "L<layer>.H<kv head>.{Q,K,V}". K and V are [T, D]; Q is
/// [T, D] for one query head or [T, heads, D] for a GQA group.
struct TensorSection {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;

    std::uint64_t element_count() const noexcept;
    bool operator==(const TensorSection&) const = default;
};

struct TensorDump {
    static constexpr std::uint8_t kVersion = 1;
    static constexpr std::uint8_t kDtypeF32 = 1;

    std::vector<TensorSection> sections;

    const TensorSection* find(const std::string& name) const;
    bool operator==(const TensorDump&) const = default;
};

std::vector<std::uint8_t> encode_dump(const TensorDump& dump);
/// Throws UnsupportedFormat for a bad magic, version or dtype and
/// CorruptFile for truncated or inconsistent contents.
TensorDump decode_dump(std::span<const std::uint8_t> bytes);

/// Throws IoError when the file cannot be read or written.
TensorDump read_dump(const std::string& path);
void write_dump(const TensorDump& dump, const std::string& path);

std::string section_name(std::size_t layer, std::size_t head, char tensor);

/// Adds the L<layer>.H<head> sections for a trace.
void add_trace(TensorDump& dump, std::size_t layer, std::size_t head, const DecodeTrace& trace);
DecodeTrace trace_from_dump(const TensorDump& dump, std::size_t layer, std::size_t head);

}  // namespace mixkvq
