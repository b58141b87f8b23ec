#include "xmodal/checkpoint.hpp"

#include <cmath>

#include "byte_io.hpp"
#include "xmodal/atomic_file.hpp"
#include "xmodal/error.hpp"

namespace xmodal {

namespace {

constexpr std::string_view kMagic = "XMMC";
constexpr std::uint32_t kVersion = 1;

void put_tensors(detail::ByteWriter& out, const ParamTensors<double>& t) {
  for (std::size_t k = 0; k < t.weights.size(); ++k) {
    for (double v : t.weights[k].flat()) out.f64(v);
    for (double v : t.biases[k]) out.f64(v);
  }
}

void get_tensors(detail::ByteReader& in, ParamTensors<double>& t) {
  for (std::size_t k = 0; k < t.weights.size(); ++k) {
    for (double& v : t.weights[k].flat()) v = in.f64();
    for (double& v : t.biases[k]) v = in.f64();
  }
}

void check_finite(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, std::string("checkpoint ") + what);
  }
}

}  // namespace

std::string encode_checkpoint(const ProjectionParams<float>& params, const AdamState<float>* optimizer) {
  detail::ByteWriter out;
  out.bytes(kMagic);
  out.u32(kVersion);
  out.u32(static_cast<std::uint32_t>(params.input_dim));
  out.u32(static_cast<std::uint32_t>(params.blocks.size()));
  for (const auto& b : params.blocks) {
    out.u32(static_cast<std::uint32_t>(b.in_dim()));
    out.u32(static_cast<std::uint32_t>(b.out_dim()));
    out.f32(b.dropout_rate);
    out.u8(b.l2norm ? 1 : 0);
    for (float v : b.weight.flat()) out.f32(v);
    for (float v : b.bias) out.f32(v);
  }
  out.u8(optimizer ? 1 : 0);
  if (optimizer) {
    if (!optimizer->first_moment.same_shape(params) || !optimizer->second_moment.same_shape(params)) {
      throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match params");
    }
    out.u64(optimizer->step);
    out.f64(optimizer->learning_rate);
    out.f64(optimizer->beta1);
    out.f64(optimizer->beta2);
    out.f64(optimizer->epsilon);
    put_tensors(out, optimizer->first_moment);
    put_tensors(out, optimizer->second_moment);
  }
  return out.str();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes, ErrorCode::MalformedHeader);
  if (in.bytes(4) != kMagic) throw Error(ErrorCode::MalformedHeader, "bad checkpoint magic");
  if (auto v = in.u32(); v != kVersion) {
    throw Error(ErrorCode::MalformedHeader, "unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.params.input_dim = in.u32();
  const auto n_blocks = in.u32();
  if (ck.params.input_dim == 0 || n_blocks == 0) throw Error(ErrorCode::MalformedHeader, "empty architecture");
  std::size_t expected_in = ck.params.input_dim;
  for (std::uint32_t k = 0; k < n_blocks; ++k) {
    const std::size_t in_dim = in.u32();
    const std::size_t out_dim = in.u32();
    if (in_dim != expected_in || out_dim == 0) {
      throw Error(ErrorCode::DimensionMismatch, "block " + std::to_string(k) + " shape does not chain");
    }
    Block<float> b;
    b.dropout_rate = in.f32();
    if (!(b.dropout_rate >= 0.0f && b.dropout_rate < 1.0f)) {
      throw Error(ErrorCode::MalformedRecord, "dropout rate outside [0,1)");
    }
    const auto flag = in.u8();
    if (flag > 1) throw Error(ErrorCode::MalformedRecord, "bad l2norm flag");
    b.l2norm = flag == 1;
    if (std::uint64_t{in_dim} * out_dim * 4 > in.remaining()) {
      throw Error(ErrorCode::MalformedRecord, "checkpoint truncated in block " + std::to_string(k));
    }
    b.weight = Matrix<float>(out_dim, in_dim);
    for (float& v : b.weight.flat()) v = in.f32();
    b.bias.resize(out_dim);
    for (float& v : b.bias) v = in.f32();
    check_finite(b.weight.flat(), "weights");
    check_finite(b.bias, "bias");
    ck.params.blocks.push_back(std::move(b));
    expected_in = out_dim;
  }
  const auto has_optimizer = in.u8();
  if (has_optimizer > 1) throw Error(ErrorCode::MalformedRecord, "bad optimizer presence flag");
  if (has_optimizer == 1) {
    auto state = AdamState<float>::fresh(ck.params);
    state.step = in.u64();
    state.learning_rate = in.f64();
    state.beta1 = in.f64();
    state.beta2 = in.f64();
    state.epsilon = in.f64();
    get_tensors(in, state.first_moment);
    get_tensors(in, state.second_moment);
    ck.optimizer = std::move(state);
  }
  if (in.remaining() != 0) throw Error(ErrorCode::MalformedRecord, "trailing bytes in checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ProjectionParams<float>& params,
                     const AdamState<float>* optimizer) {
  write_file_atomically(path, encode_checkpoint(params, optimizer));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace xmodal
