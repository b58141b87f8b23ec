#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "xmodal/projection.hpp"

namespace xmodal {

struct Checkpoint {
  ProjectionParams<float> params;
  std::optional<AdamState<float>> optimizer;
};

// Layout (little-endian): "XMMC", u32 version=1, u32 input_dim, u32 n_blocks,
// then per block u32 in, u32 out, f32 dropout, u8 l2norm, out*in f32 weights
// (row-major), out f32 bias. A u8 flag follows; when 1 the optimizer section is
// u64 step, f64 lr, f64 beta1, f64 beta2, f64 epsilon, then f64 moments: for each
// block the first-moment weights and bias, then the same for the second moment.
std::string encode_checkpoint(const ProjectionParams<float>& params, const AdamState<float>* optimizer);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ProjectionParams<float>& params,
                     const AdamState<float>* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xmodal
