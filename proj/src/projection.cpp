#include "xmodal/projection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xmodal/error.hpp"

namespace xmodal {

void ProjectionConfig::validate() const {
  if (input_dim == 0) throw Error(ErrorCode::InvalidConfig, "input_dim must be positive");
  if (layer_dims.empty()) throw Error(ErrorCode::InvalidConfig, "at least one block is required");
  if (layer_dims.size() != dropout_rates.size() || layer_dims.size() != l2norm_flags.size()) {
    throw Error(ErrorCode::InvalidConfig, "layer_dims, dropout_rates and l2norm_flags differ in length");
  }
  for (auto d : layer_dims) {
    if (d == 0) throw Error(ErrorCode::InvalidConfig, "layer widths must be positive");
  }
  for (auto p : dropout_rates) {
    if (!(p >= 0.0f && p < 1.0f)) throw Error(ErrorCode::InvalidConfig, "dropout rate outside [0,1)");
  }
}

template <typename T>
ProjectionConfig ProjectionParams<T>::architecture() const {
  ProjectionConfig c;
  c.input_dim = input_dim;
  c.layer_dims.clear();
  c.dropout_rates.clear();
  c.l2norm_flags.clear();
  for (const auto& b : blocks) {
    c.layer_dims.push_back(b.out_dim());
    c.dropout_rates.push_back(b.dropout_rate);
    c.l2norm_flags.push_back(b.l2norm);
  }
  return c;
}

template <typename T>
bool ProjectionParams<T>::all_finite() const {
  for (const auto& b : blocks) {
    for (T v : b.weight.flat()) {
      if (!std::isfinite(v)) return false;
    }
    for (T v : b.bias) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
ProjectionParams<T> init_params(const ProjectionConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ProjectionParams<T> params;
  params.input_dim = config.input_dim;
  std::size_t in = config.input_dim;
  for (std::size_t k = 0; k < config.layer_dims.size(); ++k) {
    const std::size_t out = config.layer_dims[k];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Block<T> b;
    b.weight = Matrix<T>(out, in);
    for (T& w : b.weight.flat()) w = static_cast<T>(dist(rng));
    b.bias.assign(out, T{0});
    b.dropout_rate = config.dropout_rates[k];
    b.l2norm = config.l2norm_flags[k];
    params.blocks.push_back(std::move(b));
    in = out;
  }
  return params;
}

namespace {

// out(i, o) = sum_k x(i, k) * W(o, k) + b(o)
template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Block<T>& block) {
  Matrix<T> z(x.rows(), block.out_dim());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto zi = z.row(i);
    for (std::size_t o = 0; o < block.out_dim(); ++o) {
      auto wo = block.weight.row(o);
      T acc = block.bias[o];
      for (std::size_t k = 0; k < xi.size(); ++k) acc += xi[k] * wo[k];
      zi[o] = acc;
    }
  }
  return z;
}

template <typename T>
void check_input(const ProjectionParams<T>& params, const Matrix<T>& input) {
  if (input.cols() != params.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "input width " + std::to_string(input.cols()) + ", expected " +
                                              std::to_string(params.input_dim));
  }
  for (T v : input.flat()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "non-finite value in projection input");
  }
}

}  // namespace

template <typename T>
ForwardPass<T> forward(const ProjectionParams<T>& params, const Matrix<T>& input, Mode mode, Rng& rng) {
  check_input(params, input);
  ForwardPass<T> pass;
  pass.trace.mode = mode;
  const std::size_t n = input.rows();
  Matrix<T> x = input;
  for (const auto& block : params.blocks) {
    BlockTrace<T> bt;
    bt.pre_activation = affine(x, block);
    Matrix<T> h = bt.pre_activation;
    if (mode == Mode::train && block.dropout_rate > 0.0f) {
      const double p = block.dropout_rate;
      const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      bt.mask = Matrix<T>(n, block.out_dim());
      for (T& m : bt.mask.flat()) m = u01(rng) >= p ? keep_scale : T{0};
      auto hf = h.flat();
      auto mf = bt.mask.flat();
      for (std::size_t j = 0; j < hf.size(); ++j) hf[j] *= mf[j];
    }
    for (T& v : h.flat()) v = std::max(v, T{0});
    bt.activation = h;
    if (block.l2norm) {
      bt.norms.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto row = h.row(i);
        double sq = 0;
        for (T v : row) sq += static_cast<double>(v) * v;
        const double norm = std::sqrt(sq);
        bt.norms[i] = static_cast<T>(norm);
        const double denom = std::max(norm, kNormEpsilon);
        for (T& v : row) v = static_cast<T>(v / denom);
      }
    }
    bt.input = std::move(x);
    bt.output = h;
    x = std::move(h);
    pass.trace.blocks.push_back(std::move(bt));
  }
  pass.output = std::move(x);
  return pass;
}

template <typename T>
Matrix<T> project(const ProjectionParams<T>& params, const Matrix<T>& input) {
  Rng unused(0);
  return forward(params, input, Mode::eval, unused).output;
}

template <typename T>
Gradients<T> backward(const ProjectionParams<T>& params, const ForwardTrace<T>& trace,
                      const Matrix<T>& upstream_grad) {
  if (trace.blocks.size() != params.blocks.size()) {
    throw Error(ErrorCode::TraceMismatch, "trace has " + std::to_string(trace.blocks.size()) +
                                              " blocks, params have " + std::to_string(params.blocks.size()));
  }
  const std::size_t n = trace.blocks.empty() ? upstream_grad.rows() : trace.blocks.front().input.rows();
  for (std::size_t k = 0; k < params.blocks.size(); ++k) {
    const auto& b = params.blocks[k];
    const auto& bt = trace.blocks[k];
    if (bt.input.rows() != n || bt.input.cols() != b.in_dim() || bt.activation.cols() != b.out_dim() ||
        bt.activation.rows() != n || (!bt.mask.empty() && !bt.mask.same_shape(bt.activation)) ||
        (b.l2norm && bt.norms.size() != n)) {
      throw Error(ErrorCode::TraceMismatch, "block " + std::to_string(k) + " trace does not match params");
    }
  }
  if (upstream_grad.rows() != n || upstream_grad.cols() != params.output_dim()) {
    throw Error(ErrorCode::TraceMismatch, "upstream gradient shape does not match forward output");
  }

  Gradients<T> grads;
  grads.params = ParamTensors<T>::zeros_like(params);
  Matrix<T> g = upstream_grad;
  for (std::size_t k = params.blocks.size(); k-- > 0;) {
    const auto& block = params.blocks[k];
    const auto& bt = trace.blocks[k];
    // Through the row-wise l2 normalization.
    if (block.l2norm) {
      for (std::size_t i = 0; i < n; ++i) {
        auto gi = g.row(i);
        auto yi = bt.output.row(i);
        const double norm = bt.norms[i];
        if (norm > kNormEpsilon) {
          double dot = 0;
          for (std::size_t j = 0; j < gi.size(); ++j) dot += static_cast<double>(yi[j]) * gi[j];
          for (std::size_t j = 0; j < gi.size(); ++j) gi[j] = static_cast<T>((gi[j] - yi[j] * dot) / norm);
        } else {
          for (T& v : gi) v = static_cast<T>(v / kNormEpsilon);
        }
      }
    }
    // ReLU gate, then the stored dropout mask.
    {
      auto gf = g.flat();
      auto af = bt.activation.flat();
      for (std::size_t j = 0; j < gf.size(); ++j) {
        if (!(af[j] > T{0})) gf[j] = T{0};
      }
      if (!bt.mask.empty()) {
        auto mf = bt.mask.flat();
        for (std::size_t j = 0; j < gf.size(); ++j) gf[j] *= mf[j];
      }
    }
    auto& gw = grads.params.weights[k];
    auto& gb = grads.params.biases[k];
    Matrix<T> gx(n, block.in_dim());
    for (std::size_t i = 0; i < n; ++i) {
      auto gi = g.row(i);
      auto xi = bt.input.row(i);
      auto gxi = gx.row(i);
      for (std::size_t o = 0; o < block.out_dim(); ++o) {
        const T go = gi[o];
        if (go == T{0}) continue;
        gb[o] += go;
        auto gwo = gw.row(o);
        auto wo = block.weight.row(o);
        for (std::size_t c = 0; c < xi.size(); ++c) {
          gwo[c] += go * xi[c];
          gxi[c] += go * wo[c];
        }
      }
    }
    g = std::move(gx);
  }
  grads.input = std::move(g);
  return grads;
}

template <typename T>
AdamState<T> AdamState<T>::fresh(const ProjectionParams<T>& params) {
  AdamState s;
  s.first_moment = ParamTensors<double>::zeros_like(params);
  s.second_moment = ParamTensors<double>::zeros_like(params);
  return s;
}

namespace {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<double> m, std::span<double> v, double b1,
                 double b2, double step_size, double bias2, double eps) {
  for (std::size_t j = 0; j < param.size(); ++j) {
    const double g = grad[j];
    const double mj = b1 * m[j] + (1.0 - b1) * g;
    const double vj = b2 * v[j] + (1.0 - b2) * g * g;
    m[j] = mj;
    v[j] = vj;
    param[j] = static_cast<T>(param[j] - step_size * mj / (std::sqrt(vj / bias2) + eps));
  }
}

}  // namespace

template <typename T>
void adam_step(AdamState<T>& state, ProjectionParams<T>& params, const ParamTensors<T>& grads) {
  if (!grads.same_shape(params) || !state.first_moment.same_shape(params) ||
      !state.second_moment.same_shape(params)) {
    throw Error(ErrorCode::ShapeMismatch, "adam_step: gradient/moment shapes do not match params");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const double step_size = state.learning_rate / bias1;
  for (std::size_t k = 0; k < params.blocks.size(); ++k) {
    auto& b = params.blocks[k];
    adam_update<T>(b.weight.flat(), grads.weights[k].flat(), state.first_moment.weights[k].flat(),
                   state.second_moment.weights[k].flat(), state.beta1, state.beta2, step_size, bias2,
                   state.epsilon);
    adam_update<T>(b.bias, grads.biases[k], state.first_moment.biases[k], state.second_moment.biases[k],
                   state.beta1, state.beta2, step_size, bias2, state.epsilon);
  }
}

#define XMODAL_INSTANTIATE(T)                                                                         \
  template struct ProjectionParams<T>;                                                                \
  template struct ParamTensors<T>;                                                                    \
  template struct AdamState<T>;                                                                       \
  template ProjectionParams<T> init_params<T>(const ProjectionConfig&);                               \
  template ForwardPass<T> forward<T>(const ProjectionParams<T>&, const Matrix<T>&, Mode, Rng&);       \
  template Matrix<T> project<T>(const ProjectionParams<T>&, const Matrix<T>&);                        \
  template Gradients<T> backward<T>(const ProjectionParams<T>&, const ForwardTrace<T>&,               \
                                    const Matrix<T>&);                                                \
  template void adam_step<T>(AdamState<T>&, ProjectionParams<T>&, const ParamTensors<T>&);

XMODAL_INSTANTIATE(float)
XMODAL_INSTANTIATE(double)

#undef XMODAL_INSTANTIATE

}  // namespace xmodal
