#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sasq/autodiff.hpp"
#include "sasq/tensor.hpp"

namespace sasq {

// ----------------------------------------------------------------- types

enum class Granularity { per_tensor, per_token, per_channel };

std::string granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& name);

// Symmetric N-bit quantization parameters: integer range [qmin, qmax] =
// [-2^(N-1), 2^(N-1)-1], zero-point fixed at 0.
struct QuantSpec {
    int bits = 8;
    Granularity granularity = Granularity::per_channel;
    bool no_round = false;  // ablation: skip the rounding node
    bool no_clamp = false;  // ablation: skip the clamping node
    float scale_floor = 1e-8f;

    int32_t qmin() const { return -(int32_t{1} << (bits - 1)); }
    int32_t qmax() const { return (int32_t{1} << (bits - 1)) - 1; }
    void validate() const;  // bits in [2,16], scale_floor > 0
};

// One scale per slice along the tagged axis: length 1 (per_tensor), rows
// (per_token) or columns (per_channel) of the tensor it quantizes.
struct ScaleVector {
    Granularity granularity = Granularity::per_channel;
    FloatTensor values;  // rank 1, every element >= scale_floor
};

struct QuantizedTensor {
    IntTensor ints;
    ScaleVector scales;
    QuantSpec spec;
};

// ------------------------------------------------------------ operations

// Symmetric absmax scale: max|x| over each slice / qmax, floored at spec.scale_floor.
// x must be rank 2 for per_token/per_channel.
ScaleVector derive_scale(const FloatTensor& x, const QuantSpec& spec);

// ints = clamp(round(x/s), qmin, qmax).  Refuses ablation flags: tensors
// without real round+clamp stay in the float domain (fake_quantize).
QuantizedTensor quantize(const FloatTensor& x, const ScaleVector& s, const QuantSpec& spec);

// Elementwise ints * broadcast scale.
FloatTensor dequantize(const QuantizedTensor& q);

// Differentiable quantize-dequantize: s * ste_clamp(ste_round(v / s)).
// Ablation flags drop the corresponding node.  Product rule + STE gives the
// scale gradient (round(v/s) - v/s) per interior element and qmin/qmax per
// saturated element.  Tape variant supports per_tensor and per_channel
// scales (the trainable cases); per_token exists only in the dynamic
// integer decode path.
autodiff::Variable fake_quantize(autodiff::Tape& tape, autodiff::Variable v,
                                 autodiff::Variable s, const QuantSpec& spec);

// Tape-free twin of fake_quantize. Same per-element float operation
// sequence, so outputs are bit-identical to the tape path (and to
// dequantize(quantize(x)) when no ablation flag is set).
FloatTensor fake_quantize_eval(const FloatTensor& x, const ScaleVector& s, const QuantSpec& spec);

// Per-channel weight quantization done once at model load; weights are
// constants afterwards.
QuantizedTensor quantize_weights_per_channel(const FloatTensor& w, const QuantSpec& spec);
FloatTensor fake_quantize_weights_once(const FloatTensor& w, const QuantSpec& spec);

// ---------------------------------------------------------------- scales

// Ordered, named collection of activation scale vectors (one per linear
// input).  Entries have stable addresses so layers can hold references.
class ScaleSet {
public:
    struct Entry {
        std::string name;
        ScaleVector scale;
    };

    bool contains(const std::string& name) const;
    void add(std::string name, ScaleVector scale);  // duplicate name throws
    ScaleVector& at(const std::string& name);
    const ScaleVector& at(const std::string& name) const;
    ScaleSet clone() const;  // deep copy (entries are pointer-stable, so no copy ctor)

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<std::unique_ptr<Entry>>& entries() const { return entries_; }
    std::vector<std::unique_ptr<Entry>>& entries() { return entries_; }

    std::vector<std::string> names() const;

private:
    std::vector<std::unique_ptr<Entry>> entries_;
};

}  // namespace sasq
