// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "mixkvq/attention.hpp"
#include "mixkvq/dump.hpp"
#include "mixkvq/error.hpp"
#include "mixkvq/kv_cache.hpp"
#include "mixkvq/policy.hpp"
#include "mixkvq/quant.hpp"
#include "mixkvq/salience.hpp"
#include "mixkvq/search.hpp"
#include "mixkvq/snapshot.hpp"

namespace py = pybind11;
using namespace mixkvq;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    require(a.ndim() == 2, ErrorCode::InvalidInput, "expected a 2-D array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data().begin());
    return m;
}

Array to_array(const Matrix& m) {
    Array a({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), a.mutable_data());
    return a;
}

std::vector<std::string> tier_names(const PrecisionAssignment& a) {
    std::vector<std::string> out;
    for (Tier t : a.tiers) {
        out.emplace_back(to_string(t));
    }
    return out;
}

AllocationPolicy make_policy(const std::string& name, std::optional<std::pair<std::size_t, std::size_t>> budget) {
    AllocationPolicy p = AllocationPolicy::parse(name);
    if (budget) {
        p.budget = TierBudget{budget->first, budget->second};
    }
    return p;
}

py::dict instance_dict(const AttentionInstance& inst) {
    py::dict d;
    d["queries"] = to_array(inst.queries);
    d["keys"] = to_array(inst.keys);
    d["values"] = to_array(inst.values);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Mixed-precision KV cache quantization core";

    static py::exception<Error> exc(m, "MixKVQError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            exc((std::string(to_string(e.code())) + ": " + e.what()).c_str());
        }
    });

    // quantization core
    m.def(
        "quantize_group",
        [](const std::vector<double>& values, int bits) {
            const QuantizedGroup g = quantize_group(values, BitWidth::from_bits(bits));
            py::dict d;
            d["codes"] = unpack_codes(g.codes);
            d["packed"] = py::bytes(reinterpret_cast<const char*>(g.codes.bytes.data()), g.codes.bytes.size());
            d["zero_point"] = g.zero_point;
            d["scale"] = g.scale;
            d["bits"] = bits;
            return d;
        },
        py::arg("values"), py::arg("bits"));
    m.def(
        "dequantize_group",
        [](const std::vector<std::uint8_t>& codes, double scale, double zero_point, int bits) {
            QuantizedGroup g{pack_codes(codes, BitWidth::from_bits(bits)), zero_point, scale};
            return dequantize_group(g);
        },
        py::arg("codes"), py::arg("scale"), py::arg("zero_point"), py::arg("bits"));
    m.def(
        "pack_codes",
        [](const std::vector<std::uint8_t>& codes, int bits) {
            const PackedBuffer b = pack_codes(codes, BitWidth::from_bits(bits));
            return py::bytes(reinterpret_cast<const char*>(b.bytes.data()), b.bytes.size());
        },
        py::arg("codes"), py::arg("bits"));
    m.def(
        "unpack_codes",
        [](const py::bytes& data, int bits, std::size_t len) {
            const std::string s = data;
            return unpack_codes(PackedBuffer{{s.begin(), s.end()}, BitWidth::from_bits(bits), len});
        },
        py::arg("data"), py::arg("bits"), py::arg("len"));
    m.def(
        "quantization_error_bound", [](double scale) { return quantization_error_bound(QuantizedGroup{{}, 0.0, scale}); },
        py::arg("scale"));

    // salience
    m.def(
        "importance_score",
        [](const Array& q) { return importance_score(accumulate_queries(QueryAccumulator(static_cast<std::size_t>(q.shape(1))), to_matrix(q))); },
        py::arg("queries"));
    m.def(
        "sensitivity_score", [](const Array& k, int bits) { return sensitivity_score(to_matrix(k), BitWidth::from_bits(bits)); },
        py::arg("keys"), py::arg("bits") = 2);
    m.def(
        "salience_score",
        [](const std::vector<double>& i, const std::vector<double>& s) { return salience_score(i, s); },
        py::arg("importance"), py::arg("sensitivity"));
    m.def(
        "assign_precision",
        [](const std::vector<double>& a, double bf16, double uint4) {
            return tier_names(assign_precision(a, Thresholds{bf16, uint4}));
        },
        py::arg("salience"), py::arg("tau_bf16"), py::arg("tau_uint4"));
    m.def(
        "error_only_assignment",
        [](const std::vector<double>& s, std::size_t full, std::size_t mid) {
            return tier_names(error_only_assignment(s, TierBudget{full, mid}));
        },
        py::arg("sensitivity"), py::arg("full"), py::arg("mid"));
    m.def(
        "salience_topk_assignment",
        [](const std::vector<double>& a, std::size_t full, std::size_t mid) {
            return tier_names(salience_topk_assignment(a, TierBudget{full, mid}));
        },
        py::arg("salience"), py::arg("full"), py::arg("mid"));
    m.def(
        "apply_rope",
        [](const Array& x, const std::vector<double>& positions, double theta) {
            return to_array(apply_rope(to_matrix(x), positions, theta));
        },
        py::arg("x"), py::arg("positions"), py::arg("theta_base") = kDefaultRopeTheta);

    // cache
    py::class_<CacheConfig>(m, "CacheConfig")
        .def(py::init<>())
        .def_readwrite("group_size", &CacheConfig::group_size)
        .def_readwrite("residual_len", &CacheConfig::residual_len)
        .def_readwrite("sink_len", &CacheConfig::sink_len)
        .def_readwrite("heads_per_kv_group", &CacheConfig::heads_per_kv_group)
        .def_property(
            "thresholds", [](const CacheConfig& c) { return std::make_pair(c.thresholds.bf16, c.thresholds.uint4); },
            [](CacheConfig& c, std::pair<double, double> t) { c.thresholds = Thresholds{t.first, t.second}; })
        .def_property(
            "value_bits", [](const CacheConfig& c) { return c.value_bits.bits(); },
            [](CacheConfig& c, int bits) { c.value_bits = BitWidth::from_bits(bits); })
        .def("validate", &CacheConfig::validate);

    py::class_<MixKVCache>(m, "MixKVCache")
        .def(py::init([](const CacheConfig& c, std::size_t key_dim, std::size_t value_dim, const std::string& policy,
                         std::optional<std::pair<std::size_t, std::size_t>> budget) {
                 return MixKVCache(c, key_dim, value_dim, make_policy(policy, budget));
             }),
             py::arg("config"), py::arg("key_dim"), py::arg("value_dim"), py::arg("policy") = "salience",
             py::arg("budget") = py::none())
        .def(
            "append_kv",
            [](MixKVCache& c, const std::vector<double>& k, const std::vector<double>& v, const std::vector<double>& q,
               std::size_t position) { return c.append_kv(k, v, q, position); },
            py::arg("key"), py::arg("value"), py::arg("query"), py::arg("position"))
        .def("flush_block", &MixKVCache::flush_block)
        .def("reconstruct_keys", [](const MixKVCache& c) { return to_array(c.reconstruct_keys()); })
        .def("reconstruct_values", [](const MixKVCache& c) { return to_array(c.reconstruct_values()); })
        .def("effective_bitwidth", &MixKVCache::effective_bitwidth)
        .def("assignments", [](const MixKVCache& c) {
            std::vector<std::vector<std::string>> out;
            for (const auto& a : c.assignment_history()) out.push_back(tier_names(a));
            return out;
        })
        .def_property_readonly("token_count", &MixKVCache::token_count)
        .def_property_readonly("flushed_tokens", &MixKVCache::flushed_tokens)
        .def_property_readonly("residual_size", &MixKVCache::residual_size)
        .def("to_bytes", [](const MixKVCache& c) {
            const auto b = encode_cache(c);
            return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
        })
        .def_static("from_bytes", [](const py::bytes& data) {
            const std::string s = data;
            return decode_cache(std::vector<std::uint8_t>(s.begin(), s.end()));
        })
        .def("__eq__", [](const MixKVCache& a, const MixKVCache& b) { return a == b; });

    // attention simulator
    m.def(
        "attention_exact",
        [](const Array& q, const Array& k, const Array& v, bool causal) {
            const AttentionResult r = attention_exact(AttentionInstance{to_matrix(q), to_matrix(k), to_matrix(v)}, causal);
            return py::make_tuple(to_array(r.weights), to_array(r.outputs));
        },
        py::arg("queries"), py::arg("keys"), py::arg("values"), py::arg("causal") = false);
    m.def(
        "attention_error",
        [](const Array& q, const Array& k, const Array& k_tilde) {
            const Matrix keys = to_matrix(k);
            return to_array(attention_error(AttentionInstance{to_matrix(q), keys, keys}, to_matrix(k_tilde)));
        },
        py::arg("queries"), py::arg("keys"), py::arg("k_tilde"));

    py::class_<PlantedSpec>(m, "PlantedSpec")
        .def(py::init([](std::size_t channels, std::size_t tokens, std::size_t ns, std::size_t nq, std::size_t overlap,
                         double gain) { return PlantedSpec{channels, tokens, ns, nq, overlap, gain}; }),
             py::arg("channels") = 64, py::arg("tokens") = 512, py::arg("scale_outliers") = 4,
             py::arg("query_outliers") = 4, py::arg("overlap") = 0, py::arg("outlier_gain") = 10.0)
        .def_readwrite("channels", &PlantedSpec::channels)
        .def_readwrite("tokens", &PlantedSpec::tokens)
        .def_readwrite("scale_outliers", &PlantedSpec::scale_outliers)
        .def_readwrite("query_outliers", &PlantedSpec::query_outliers)
        .def_readwrite("overlap", &PlantedSpec::overlap)
        .def_readwrite("outlier_gain", &PlantedSpec::outlier_gain);

    m.def(
        "generate_planted_instance",
        [](const PlantedSpec& spec, std::uint64_t seed) {
            const PlantedInstance p = generate_planted_instance(spec, seed);
            py::dict d = instance_dict(p.instance);
            d["scale_channels"] = p.scale_channels;
            d["query_channels"] = p.query_channels;
            return d;
        },
        py::arg("spec"), py::arg("seed"));

    py::class_<FidelityReport>(m, "FidelityReport")
        .def_readonly("policy_label", &FidelityReport::policy_label)
        .def_readonly("e_attn_frobenius", &FidelityReport::e_attn_frobenius)
        .def_readonly("e_attn_max", &FidelityReport::e_attn_max)
        .def_readonly("output_error_frobenius", &FidelityReport::output_error_frobenius)
        .def_readonly("effective_bits", &FidelityReport::effective_bits)
        .def_readonly("steps", &FidelityReport::steps)
        .def("__eq__", [](const FidelityReport& a, const FidelityReport& b) { return a == b; });

    m.def(
        "decode_simulation",
        [](const PlantedSpec& spec, std::uint64_t seed, const CacheConfig& config, const std::string& policy,
           std::size_t steps, std::optional<std::pair<std::size_t, std::size_t>> budget) {
            return decode_simulation(spec, seed, config, make_policy(policy, budget), steps);
        },
        py::arg("spec"), py::arg("seed"), py::arg("config"), py::arg("policy") = "salience", py::arg("steps") = 512,
        py::arg("budget") = py::none());

    // search
    py::class_<ParetoPoint>(m, "ParetoPoint")
        .def(py::init([](double b, double u, double be, double f) { return ParetoPoint{b, u, be, f}; }),
             py::arg("tau_bf16"), py::arg("tau_uint4"), py::arg("b_eff"), py::arg("fidelity"))
        .def_readonly("tau_bf16", &ParetoPoint::tau_bf16)
        .def_readonly("tau_uint4", &ParetoPoint::tau_uint4)
        .def_readonly("b_eff", &ParetoPoint::b_eff)
        .def_readonly("fidelity", &ParetoPoint::fidelity)
        .def("__eq__", [](const ParetoPoint& a, const ParetoPoint& b) { return a == b; })
        .def("__repr__", [](const ParetoPoint& p) {
            return "ParetoPoint(b_eff=" + std::to_string(p.b_eff) + ", fidelity=" + std::to_string(p.fidelity) + ")";
        });
    m.def("pareto_frontier", [](const std::vector<ParetoPoint>& pts) { return pareto_frontier(pts); }, py::arg("points"));
    m.def(
        "select_under_budget", [](const std::vector<ParetoPoint>& f, double b) { return select_under_budget(f, b); },
        py::arg("frontier"), py::arg("max_b_eff"));
    m.def(
        "pareto_search",
        [](const PlantedSpec& instance, const std::vector<std::uint64_t>& seeds, const CacheConfig& config,
           std::size_t grid, double lo, double hi, std::size_t steps, std::optional<double> max_b_eff) {
            SearchSpec spec;
            spec.instance = instance;
            spec.seeds = seeds;
            spec.cache = config;
            spec.grid_points = grid;
            spec.range_lo = lo;
            spec.range_hi = hi;
            spec.steps = steps;
            spec.max_b_eff = max_b_eff;
            SearchResult r;
            {
                py::gil_scoped_release release;
                r = pareto_search(spec);
            }
            py::dict d;
            d["evaluated"] = r.evaluated;
            d["frontier"] = r.frontier;
            d["selected"] = r.selected;
            return d;
        },
        py::arg("instance"), py::arg("seeds"), py::arg("config"), py::arg("grid") = 20, py::arg("lo") = 0.1,
        py::arg("hi") = 2.0, py::arg("steps") = 512, py::arg("max_b_eff") = py::none());

    // dumps
    m.def(
        "read_dump",
        [](const std::string& path) {
            const TensorDump dump = read_dump(path);
            py::dict out;
            for (const auto& s : dump.sections) {
                std::vector<py::ssize_t> shape(s.dims.begin(), s.dims.end());
                py::array_t<float> a(shape);
                std::copy(s.data.begin(), s.data.end(), a.mutable_data());
                out[py::str(s.name)] = a;
            }
            return out;
        },
        py::arg("path"));
    m.def(
        "write_dump",
        [](const py::dict& sections, const std::string& path) {
            TensorDump dump;
            for (const auto& item : sections) {
                auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(item.second);
                require(static_cast<bool>(a), ErrorCode::InvalidInput, "section values must be arrays");
                TensorSection s;
                s.name = py::str(item.first);
                for (py::ssize_t i = 0; i < a.ndim(); ++i) s.dims.push_back(static_cast<std::uint64_t>(a.shape(i)));
                s.data.assign(a.data(), a.data() + a.size());
                dump.sections.push_back(std::move(s));
            }
            write_dump(dump, path);
        },
        py::arg("sections"), py::arg("path"));
}
