# Copyright (C) 2026 The mixkvq Authors
# SPDX-License-Identifier: Apache-2.0

"""Mixed-precision KV cache quantization: Python bindings over the C++ core."""

from ._core import (
    CacheConfig,
    FidelityReport,
    MixKVCache,
    MixKVQError,
    ParetoPoint,
    PlantedSpec,
    apply_rope,
    assign_precision,
    attention_error,
    attention_exact,
    decode_simulation,
    dequantize_group,
    error_only_assignment,
    generate_planted_instance,
    importance_score,
    pack_codes,
    pareto_frontier,
    pareto_search,
    quantization_error_bound,
    quantize_group,
    read_dump,
    salience_score,
    salience_topk_assignment,
    select_under_budget,
    sensitivity_score,
    unpack_codes,
    write_dump,
)

__all__ = [name for name in dir() if not name.startswith("_")]
