// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mixkvq/error.hpp"

namespace mixkvq {

BitWidth BitWidth::from_bits(int bits) {
    switch (bits) {
    case 2: return two();
    case 4: return four();
    case 16: return full();
    default: fail(ErrorCode::InvalidInput, "unsupported bit width " + std::to_string(bits));
    }
}

std::size_t packed_size(std::size_t len, BitWidth bits) noexcept {
    return (len * static_cast<std::size_t>(bits.bits()) + 7) / 8;
}

QuantizedGroup quantize_group(std::span<const double> values, BitWidth bits) {
    require(!values.empty(), ErrorCode::InvalidInput, "cannot quantize an empty group");
    require(bits.quantized(), ErrorCode::InvalidInput, "quantize_group needs a 2- or 4-bit width");
    double lo = values.front();
    double hi = values.front();
    for (double v : values) {
        require(std::isfinite(v), ErrorCode::InvalidInput, "non-finite value in quantization group");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    const auto max_code = static_cast<double>(bits.max_code());
    QuantizedGroup group;
    group.zero_point = lo;
    group.scale = (hi - lo) / max_code;

    std::vector<std::uint8_t> codes(values.size(), 0);
    if (group.scale > 0.0) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            // std::round is half-away-from-zero; the argument is never negative here.
            const double q = std::round((values[i] - lo) / group.scale);
            codes[i] = static_cast<std::uint8_t>(std::clamp(q, 0.0, max_code));
        }
    } else {
        group.scale = 0.0;
    }
    group.codes = pack_codes(codes, bits);
    return group;
}

void dequantize_group_into(const QuantizedGroup& group, std::span<double> out) {
    require(group.scale >= 0.0 && std::isfinite(group.scale) && std::isfinite(group.zero_point),
            ErrorCode::InvalidInput, "malformed quantization group");
    require(out.size() == group.size(), ErrorCode::InvalidInput, "output span size mismatch");
    const auto codes = unpack_codes(group.codes);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        out[i] = static_cast<double>(codes[i]) * group.scale + group.zero_point;
    }
}

std::vector<double> dequantize_group(const QuantizedGroup& group) {
    std::vector<double> out(group.size());
    dequantize_group_into(group, out);
    return out;
}

PackedBuffer pack_codes(std::span<const std::uint8_t> codes, BitWidth bits) {
    require(bits.quantized(), ErrorCode::InvalidInput, "only 2- and 4-bit codes are packed");
    PackedBuffer buf;
    buf.bit_width = bits;
    buf.len = codes.size();
    buf.bytes.assign(packed_size(codes.size(), bits), 0);

    const auto width = static_cast<std::size_t>(bits.bits());
    const std::size_t per_byte = 8 / width;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        require(codes[i] <= bits.max_code(), ErrorCode::InvalidInput,
                "code " + std::to_string(codes[i]) + " does not fit in " + std::to_string(width) + " bits");
        buf.bytes[i / per_byte] |= static_cast<std::uint8_t>(codes[i] << ((i % per_byte) * width));
    }
    return buf;
}

std::vector<std::uint8_t> unpack_codes(const PackedBuffer& buffer) {
    const BitWidth bits = buffer.bit_width;
    require(bits.quantized(), ErrorCode::CorruptBuffer, "packed buffer has a non-quantized bit width");
    require(buffer.bytes.size() == packed_size(buffer.len, bits), ErrorCode::CorruptBuffer,
            "packed byte length inconsistent with element count");

    const auto width = static_cast<std::size_t>(bits.bits());
    const std::size_t per_byte = 8 / width;
    const auto mask = static_cast<std::uint8_t>(bits.max_code());

    const std::size_t tail = buffer.len % per_byte;
    if (tail != 0) {
        const auto used = static_cast<std::uint8_t>((1u << (tail * width)) - 1u);
        require((buffer.bytes.back() & ~used) == 0, ErrorCode::CorruptBuffer, "nonzero padding bits");
    }

    std::vector<std::uint8_t> codes(buffer.len);
    for (std::size_t i = 0; i < buffer.len; ++i) {
        codes[i] = static_cast<std::uint8_t>((buffer.bytes[i / per_byte] >> ((i % per_byte) * width)) & mask);
    }
    return codes;
}

double quantization_error_bound(const QuantizedGroup& group) noexcept { return group.scale / 2.0; }

}  // namespace mixkvq
