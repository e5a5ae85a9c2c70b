// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/dump.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "byte_io.hpp"
#include "mixkvq/error.hpp"

namespace mixkvq {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::IoError, "cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::IoError, "short write to '" + path + "'");
}

}  // namespace detail

namespace {

constexpr char kMagic[4] = {'M', 'K', 'V', 'Q'};

Matrix to_matrix(const TensorSection& s, std::size_t rows, std::size_t cols, std::size_t offset, std::size_t stride) {
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            m(r, c) = static_cast<double>(s.data[r * stride + offset + c]);
        }
    }
    return m;
}

const TensorSection& section_or_throw(const TensorDump& dump, const std::string& name) {
    const TensorSection* s = dump.find(name);
    require(s != nullptr, ErrorCode::InvalidInput, "dump has no section '" + name + "'");
    return *s;
}

}  // namespace

std::uint64_t TensorSection::element_count() const noexcept {
    std::uint64_t n = 1;
    for (auto d : dims) {
        n *= d;
    }
    return n;
}

const TensorSection* TensorDump::find(const std::string& name) const {
    const auto it = std::find_if(sections.begin(), sections.end(), [&](const auto& s) { return s.name == name; });
    return it == sections.end() ? nullptr : &*it;
}

std::vector<std::uint8_t> encode_dump(const TensorDump& dump) {
    detail::ByteWriter w;
    for (char c : kMagic) {
        w.u8(static_cast<std::uint8_t>(c));
    }
    w.u8(TensorDump::kVersion);
    w.u8(TensorDump::kDtypeF32);
    w.u16(0);
    w.u32(static_cast<std::uint32_t>(dump.sections.size()));
    for (const TensorSection& s : dump.sections) {
        require(s.name.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorCode::InvalidInput,
                "section name too long");
        require(s.dims.size() <= std::numeric_limits<std::uint8_t>::max(), ErrorCode::InvalidInput,
                "section rank too large");
        require(s.element_count() == s.data.size(), ErrorCode::InvalidInput,
                "section '" + s.name + "' payload does not match its dims");
        w.u16(static_cast<std::uint16_t>(s.name.size()));
        w.raw({reinterpret_cast<const std::uint8_t*>(s.name.data()), s.name.size()});
        w.u8(static_cast<std::uint8_t>(s.dims.size()));
        for (auto d : s.dims) {
            w.u64(d);
        }
        for (float x : s.data) {
            w.f32(x);
        }
    }
    return w.take();
}

TensorDump decode_dump(std::span<const std::uint8_t> bytes) {
    require(bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, kMagic,
                                            [](std::uint8_t b, char c) { return b == static_cast<std::uint8_t>(c); }),
            ErrorCode::UnsupportedFormat, "not a tensor dump (bad magic)");
    detail::ByteReader r(bytes.subspan(4), ErrorCode::CorruptFile);
    const auto version = r.u8();
    require(version == TensorDump::kVersion, ErrorCode::UnsupportedFormat,
            "unsupported dump version " + std::to_string(version));
    const auto dtype = r.u8();
    require(dtype == TensorDump::kDtypeF32, ErrorCode::UnsupportedFormat,
            "unsupported dump dtype " + std::to_string(dtype));
    r.u16();
    const auto count = r.u32();

    TensorDump dump;
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorSection s;
        const auto name_len = r.u16();
        const auto name = r.raw(name_len);
        s.name.assign(name.begin(), name.end());
        const auto rank = r.u8();
        std::uint64_t elements = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            const auto d = r.u64();
            require(d == 0 || elements <= r.remaining() / 4 / d, ErrorCode::CorruptFile,
                    "section '" + s.name + "' declares more data than the file holds");
            elements *= d;
            s.dims.push_back(d);
        }
        require(elements * 4 <= r.remaining(), ErrorCode::CorruptFile,
                "section '" + s.name + "' payload is truncated");
        s.data.resize(elements);
        for (auto& x : s.data) {
            x = r.f32();
        }
        dump.sections.push_back(std::move(s));
    }
    require(r.remaining() == 0, ErrorCode::CorruptFile, "trailing bytes after the last section");
    return dump;
}

TensorDump read_dump(const std::string& path) { return decode_dump(detail::read_file(path)); }

void write_dump(const TensorDump& dump, const std::string& path) { detail::write_file(path, encode_dump(dump)); }

std::string section_name(std::size_t layer, std::size_t head, char tensor) {
    return "L" + std::to_string(layer) + ".H" + std::to_string(head) + "." + tensor;
}

void add_trace(TensorDump& dump, std::size_t layer, std::size_t head, const DecodeTrace& trace) {
    require(!trace.queries.empty(), ErrorCode::InvalidInput, "trace has no query heads");
    auto pack = [](const Matrix& m) {
        std::vector<float> out(m.data().size());
        std::transform(m.data().begin(), m.data().end(), out.begin(), [](double x) { return static_cast<float>(x); });
        return out;
    };
    const std::uint64_t t = trace.keys.rows();
    dump.sections.push_back({section_name(layer, head, 'K'), {t, trace.keys.cols()}, pack(trace.keys)});
    dump.sections.push_back({section_name(layer, head, 'V'), {t, trace.values.cols()}, pack(trace.values)});

    TensorSection q{section_name(layer, head, 'Q'), {}, {}};
    const std::uint64_t dim = trace.queries.front().cols();
    const std::uint64_t rows = trace.queries.front().rows();
    if (trace.queries.size() == 1) {
        q.dims = {rows, dim};
        q.data = pack(trace.queries.front());
    } else {
        q.dims = {rows, trace.queries.size(), dim};
        for (std::size_t r = 0; r < rows; ++r) {
            for (const Matrix& head_q : trace.queries) {
                for (double x : head_q.row(r)) {
                    q.data.push_back(static_cast<float>(x));
                }
            }
        }
    }
    dump.sections.push_back(std::move(q));
}

DecodeTrace trace_from_dump(const TensorDump& dump, std::size_t layer, std::size_t head) {
    const TensorSection& k = section_or_throw(dump, section_name(layer, head, 'K'));
    const TensorSection& v = section_or_throw(dump, section_name(layer, head, 'V'));
    const TensorSection& q = section_or_throw(dump, section_name(layer, head, 'Q'));
    require(k.dims.size() == 2 && v.dims.size() == 2, ErrorCode::InvalidInput, "K and V sections must be rank 2");
    require(q.dims.size() == 2 || q.dims.size() == 3, ErrorCode::InvalidInput, "Q section must be rank 2 or 3");

    DecodeTrace trace;
    const auto t = static_cast<std::size_t>(k.dims[0]);
    trace.keys = to_matrix(k, t, static_cast<std::size_t>(k.dims[1]), 0, static_cast<std::size_t>(k.dims[1]));
    trace.values = to_matrix(v, static_cast<std::size_t>(v.dims[0]), static_cast<std::size_t>(v.dims[1]), 0,
                             static_cast<std::size_t>(v.dims[1]));
    const auto qrows = static_cast<std::size_t>(q.dims[0]);
    if (q.dims.size() == 2) {
        const auto dim = static_cast<std::size_t>(q.dims[1]);
        trace.queries.push_back(to_matrix(q, qrows, dim, 0, dim));
    } else {
        const auto heads = static_cast<std::size_t>(q.dims[1]);
        const auto dim = static_cast<std::size_t>(q.dims[2]);
        for (std::size_t h = 0; h < heads; ++h) {
            trace.queries.push_back(to_matrix(q, qrows, dim, h * dim, heads * dim));
        }
    }
    return trace;
}

}  // namespace mixkvq
