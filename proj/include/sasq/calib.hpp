#pragma once

#include <span>
#include <vector>

#include "sasq/model.hpp"

namespace sasq {

// PTQ initialization: run calibration batches through the float model,
// derive a per-channel scale per linear input per batch, and average across
// batches (max-of-max behind use_max for comparison).  Deterministic given
// batch order; statistics merge in batch-index order.
ScaleSet calibrate(Model& model, const std::vector<std::vector<int32_t>>& batches,
                   const QuantSpec& spec, bool use_max = false);

// Quantizes every QuantLinear's weights per-channel once (fp_weights keeps
// them float for the fp-weights ablation) and installs the activation spec.
// Idempotent.
void quantize_weights(Model& model, const QuantSpec& spec, bool fp_weights = false);

// Deterministic calibration batch selection: `count` evenly spaced
// non-overlapping windows of max_seq_len tokens.
std::vector<std::vector<int32_t>> calibration_windows(const std::vector<int32_t>& corpus,
                                                      int64_t window, int64_t count);

}  // namespace sasq
