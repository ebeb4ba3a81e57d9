#pragma once

#include <string>

#include "adabin/costmodel.hpp"
#include "adabin/model.hpp"

namespace adabin {

/// Human-readable cost table ending with the canonical single-layer row.
std::string bench_text(const ModelCostReport& rep, const OverheadClaims& canonical);
/// JSON lines: one object per layer, one "model" total and one "canonical" row.
std::string bench_json_lines(const ModelCostReport& rep, const OverheadClaims& canonical);

/// JSON document describing every quantizer and Maxout slope of the model.
/// A binary layer whose activation set {beta-alpha, beta+alpha} lies
/// entirely above zero is flagged "all_positive".
std::string inspect_json(Model& model);

}  // namespace adabin
