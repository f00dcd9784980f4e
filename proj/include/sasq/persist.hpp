#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sasq/infer.hpp"
#include "sasq/model.hpp"
#include "sasq/train.hpp"

namespace sasq {

// ---------------------------------------------------------- checkpoint file
//
// Little-endian container, format version 1:
//   magic "SASQ" | version u32 | tensor count u32
//   per tensor: name length u16 + UTF-8 bytes | dtype u8 (0=f32, 1=i32) |
//               rank u8 | dims u64 each | payload (numel x 4 bytes)
// Scale-set files use the same container with two extra header fields
// (bits u32, granularity u32) between version and count, and hold one f32
// rank-1 tensor `<layer-path>.s_x` per quantized linear.

inline constexpr uint32_t kPersistVersion = 1;

struct TensorRecord {
    std::string name;
    uint8_t dtype = 0;  // 0 = f32, 1 = i32
    std::vector<int64_t> dims;
    std::vector<float> f32;
    std::vector<int32_t> i32;

    int64_t numel() const;
};

void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> load_checkpoint(const std::string& path);

// Float parameters in for_each_param order.
void save_model(const std::string& path, const Model& model);
// Name- and shape-matched load into an existing float-mode model.
void load_model_weights(const std::string& path, Model& model);

void save_scales(const std::string& path, const ScaleSet& scales, int bits, Granularity g);

struct LoadedScales {
    ScaleSet scales;
    int bits = 8;
    Granularity granularity = Granularity::per_channel;
};

// Validates every scale >= scale_floor; layer-name matching against a model
// happens in Model::attach_scales (which reports the full mismatch list).
LoadedScales load_scales(const std::string& path, float scale_floor);

// ------------------------------------------------------------- run config
//
// Flat UTF-8 `key=value` lines ('#' comments and blank lines allowed).
// Unknown keys are rejected; omitted keys keep their defaults.  echo()
// renders every resolved key for the run log.

struct RunConfig {
    ModelConfig model;
    uint64_t model_seed = 0;
    std::string model_checkpoint;  // empty = random init from model_seed
    TrainConfig train;
    QuantSpec quant;
    int64_t calib_batches = 8;
    bool calib_use_max = false;
    GenConfig gen;
    PretrainConfig pretrain;

    static RunConfig parse(const std::string& text);
    static RunConfig from_file(const std::string& path);
    std::string echo() const;
};

// ----------------------------------------------------------------- corpus

// Byte-level tokenization: byte value b becomes token id b, NUL bytes are
// skipped (id 0 is the reserved EOS).
std::vector<int32_t> load_corpus(const std::string& path);
std::vector<int32_t> tokenize_bytes(const std::string& text);
std::string detokenize_bytes(const std::vector<int32_t>& tokens);

}  // namespace sasq
