// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mixkvq {

/// Storage width of a quantized element. Only 2, 4 and 16 exist; 16 is the
/// full-precision pass-through and never goes through the quantizer.
class BitWidth {
public:
    static constexpr BitWidth two() { return BitWidth(2); }
    static constexpr BitWidth four() { return BitWidth(4); }
    static constexpr BitWidth full() { return BitWidth(16); }
    /// Throws InvalidInput for anything other than 2, 4 or 16.
    static BitWidth from_bits(int bits);

    constexpr int bits() const noexcept { return bits_; }
    constexpr bool quantized() const noexcept { return bits_ != 16; }
    /// Largest code, 2^B - 1.
    constexpr std::uint32_t max_code() const noexcept { return (1u << bits_) - 1u; }

    constexpr bool operator==(const BitWidth&) const = default;

private:
    constexpr explicit BitWidth(int bits) : bits_(bits) {}
    int bits_;
};

struct PackedBuffer {
    std::vector<std::uint8_t> bytes;
    BitWidth bit_width = BitWidth::two();
    std::size_t len = 0;

    bool operator==(const PackedBuffer&) const = default;
};

/// One asymmetric quantization group: x ~= code * scale + zero_point.
struct QuantizedGroup {
    PackedBuffer codes;
    double zero_point = 0.0;
    double scale = 0.0;

    BitWidth bit_width() const noexcept { return codes.bit_width; }
    std::size_t size() const noexcept { return codes.len; }

    bool operator==(const QuantizedGroup&) const = default;
};

/// Byte count needed for `len` codes of `bits` each.
std::size_t packed_size(std::size_t len, BitWidth bits) noexcept;

QuantizedGroup quantize_group(std::span<const double> values, BitWidth bits);
std::vector<double> dequantize_group(const QuantizedGroup& group);
/// Writes the dequantized values into `out` (size must equal group.size()).
void dequantize_group_into(const QuantizedGroup& group, std::span<double> out);

/// Packs codes LSB-first: element 0 occupies the lowest-order bits of byte 0,
/// and unused high bits of the final byte are zero.
PackedBuffer pack_codes(std::span<const std::uint8_t> codes, BitWidth bits);
std::vector<std::uint8_t> unpack_codes(const PackedBuffer& buffer);

/// Analytic elementwise bound on |x - dequantize(quantize(x))|: scale / 2.
double quantization_error_bound(const QuantizedGroup& group) noexcept;

}  // namespace mixkvq
