#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "xmodal/matrix.hpp"

namespace xmodal {

/// Random stream used for dropout masks and weight init.
using Rng = std::mt19937_64;

enum class Mode { train, eval };

/// Floor applied to every norm that appears in a denominator.
inline constexpr double kNormEpsilon = 1e-12;

/// Architecture of the text projection head: a stack of
/// FC -> dropout -> ReLU -> (optional) row-wise l2-norm blocks.
struct ProjectionConfig {
  std::size_t input_dim = 512;
  std::vector<std::size_t> layer_dims{1024, 2048, 2048};
  std::vector<float> dropout_rates{0.2f, 0.1f, 0.0f};
  std::vector<bool> l2norm_flags{true, true, false};
  std::uint64_t seed = 0;

  /// Throws Error(InvalidConfig).
  void validate() const;
  std::size_t output_dim() const { return layer_dims.empty() ? 0 : layer_dims.back(); }
};

template <typename T>
struct Block {
  Matrix<T> weight;  // out x in
  std::vector<T> bias;
  float dropout_rate = 0.0f;
  bool l2norm = false;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
};

template <typename T>
struct ProjectionParams {
  std::size_t input_dim = 0;
  std::vector<Block<T>> blocks;

  std::size_t output_dim() const { return blocks.empty() ? input_dim : blocks.back().out_dim(); }
  /// The architecture part of the config (seed is not recoverable and left 0).
  ProjectionConfig architecture() const;
  bool all_finite() const;
};

/// Tensors shaped like the weights and biases of a ProjectionParams; used for
/// gradients and for optimizer moments.
template <typename T>
struct ParamTensors {
  std::vector<Matrix<T>> weights;
  std::vector<std::vector<T>> biases;

  template <typename U>
  static ParamTensors zeros_like(const ProjectionParams<U>& params) {
    ParamTensors out;
    for (const auto& b : params.blocks) {
      out.weights.emplace_back(b.weight.rows(), b.weight.cols());
      out.biases.emplace_back(b.bias.size(), T{0});
    }
    return out;
  }

  template <typename U>
  bool same_shape(const ProjectionParams<U>& params) const {
    if (weights.size() != params.blocks.size() || biases.size() != params.blocks.size()) return false;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (weights[k].rows() != params.blocks[k].weight.rows() ||
          weights[k].cols() != params.blocks[k].weight.cols()) {
        return false;
      }
      if (biases[k].size() != params.blocks[k].bias.size()) return false;
    }
    return true;
  }
};

template <typename T>
struct BlockTrace {
  Matrix<T> input;           // n x in
  Matrix<T> pre_activation;  // n x out, Wx + b
  Matrix<T> mask;            // n x out scaled keep mask; empty in eval mode
  Matrix<T> activation;      // n x out, post-ReLU
  std::vector<T> norms;      // per-row ||activation||, only when l2norm
  Matrix<T> output;          // n x out, block output
};

template <typename T>
struct ForwardTrace {
  Mode mode = Mode::eval;
  std::vector<BlockTrace<T>> blocks;
};

template <typename T>
struct ForwardPass {
  Matrix<T> output;
  ForwardTrace<T> trace;
};

template <typename T>
struct Gradients {
  ParamTensors<T> params;
  Matrix<T> input;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a stream seeded by
/// config.seed; biases zero.
template <typename T>
ProjectionParams<T> init_params(const ProjectionConfig& config);

/// In train mode each block draws an inverted-dropout mask from `rng` (blocks
/// with rate 0 draw nothing). Eval mode never touches `rng`.
template <typename T>
ForwardPass<T> forward(const ProjectionParams<T>& params, const Matrix<T>& input, Mode mode, Rng& rng);

/// Eval-mode forward without keeping a trace.
template <typename T>
Matrix<T> project(const ProjectionParams<T>& params, const Matrix<T>& input);

template <typename T>
Gradients<T> backward(const ProjectionParams<T>& params, const ForwardTrace<T>& trace,
                      const Matrix<T>& upstream_grad);

/// Moments are kept in double whatever the parameter type: squared gradients
/// of the ratio loss routinely exceed the float range.
template <typename T>
struct AdamState {
  ParamTensors<double> first_moment;
  ParamTensors<double> second_moment;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState fresh(const ProjectionParams<T>& params);
};

/// One bias-corrected Adam update, in place. Increments state.step.
template <typename T>
void adam_step(AdamState<T>& state, ProjectionParams<T>& params, const ParamTensors<T>& grads);

template <typename To, typename From>
ProjectionParams<To> params_cast(const ProjectionParams<From>& params) {
  ProjectionParams<To> out;
  out.input_dim = params.input_dim;
  for (const auto& b : params.blocks) {
    Block<To> nb;
    nb.weight = matrix_cast<To>(b.weight);
    nb.bias.assign(b.bias.begin(), b.bias.end());
    nb.dropout_rate = b.dropout_rate;
    nb.l2norm = b.l2norm;
    out.blocks.push_back(std::move(nb));
  }
  return out;
}

}  // namespace xmodal
