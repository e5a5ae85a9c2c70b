// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/error.hpp"

namespace mixkvq {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::CorruptBuffer: return "CorruptBuffer";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::InvalidThresholds: return "InvalidThresholds";
    case ErrorCode::NothingToFlush: return "NothingToFlush";
    case ErrorCode::Undefined: return "Undefined";
    case ErrorCode::BudgetInfeasible: return "BudgetInfeasible";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace mixkvq
