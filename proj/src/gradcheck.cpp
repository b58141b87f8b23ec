#include "xmodal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>

#include "xmodal/losses.hpp"
#include "xmodal/projection.hpp"

namespace xmodal {

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix<double> m(rows, cols);
  for (double& v : m.flat()) v = g(rng);
  return m;
}

double central_difference(double& x, double h, const std::function<double()>& f) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

// Worst error over one tensor. The floor is the larger of two scales: a
// fraction of the tensor's largest analytic entry, and the resolution of the
// central difference itself (roundoff in f divided by 2h), so that entries
// many orders below either are judged on an absolute scale.
double tensor_error(std::span<const double> analytic, std::span<double> point, double h, double tolerance,
                    const std::function<double()>& f) {
  double largest = 0.0;
  for (double a : analytic) largest = std::max(largest, std::abs(a));
  const double resolution = 10.0 * std::numeric_limits<double>::epsilon() * std::abs(f()) / h;
  const double floor = std::max({kGradientFloor * std::max(1.0, largest), resolution / tolerance});
  double worst = 0.0;
  for (std::size_t j = 0; j < point.size(); ++j) {
    worst = std::max(worst, gradient_error(analytic[j], central_difference(point[j], h, f), floor));
  }
  return worst;
}

// Smallest |ReLU input| over the units that survived dropout.
double kink_margin(const ForwardTrace<double>& trace) {
  double margin = 1e300;
  for (const auto& b : trace.blocks) {
    for (std::size_t j = 0; j < b.pre_activation.size(); ++j) {
      const double scale = b.mask.empty() ? 1.0 : b.mask.flat()[j];
      if (scale != 0.0) margin = std::min(margin, std::abs(scale * b.pre_activation.flat()[j]));
    }
  }
  return margin;
}

struct ProjectionTrial {
  ProjectionParams<double> params;
  Matrix<double> input;
  Matrix<double> direction;
  std::uint64_t mask_seed = 0;
};

ProjectionTrial draw_projection_trial(Rng& rng) {
  ProjectionConfig config;
  config.input_dim = pick(rng, 1, 16);
  const std::size_t blocks = pick(rng, 1, 3);
  config.layer_dims.clear();
  config.dropout_rates.clear();
  config.l2norm_flags.clear();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < blocks; ++k) {
    config.layer_dims.push_back(pick(rng, 1, 16));
    config.dropout_rates.push_back(static_cast<float>(0.5 * u(rng)));
    config.l2norm_flags.push_back(u(rng) < 0.5);
  }
  config.seed = rng();
  ProjectionTrial trial;
  trial.params = init_params<double>(config);
  for (auto& b : trial.params.blocks) {
    for (double& v : b.bias) v = 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
  }
  const std::size_t n = pick(rng, 1, 4);
  trial.input = random_matrix(rng, n, config.input_dim);
  trial.direction = random_matrix(rng, n, config.output_dim());
  trial.mask_seed = rng();
  return trial;
}

double projection_trial(Rng& rng, double h, double tol) {
  // A unit within reach of the ReLU kink would make the finite difference
  // straddle it, so such draws are replaced.
  ProjectionTrial trial;
  ForwardPass<double> pass;
  do {
    trial = draw_projection_trial(rng);
    Rng mask_rng(trial.mask_seed);
    pass = forward(trial.params, trial.input, Mode::train, mask_rng);
  } while (kink_margin(pass.trace) < 1e-3);
  auto& [params, input, direction, mask_seed] = trial;

  auto loss = [&] {
    Rng mask_rng(mask_seed);
    auto out = forward(params, input, Mode::train, mask_rng).output;
    double acc = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) acc += out.flat()[j] * direction.flat()[j];
    return acc;
  };
  const auto grads = backward(params, pass.trace, direction);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.blocks.size(); ++k) {
    worst = std::max(worst, tensor_error(grads.params.weights[k].flat(), params.blocks[k].weight.flat(), h, tol, loss));
    worst = std::max(worst, tensor_error(grads.params.biases[k], params.blocks[k].bias, h, tol, loss));
  }
  return std::max(worst, tensor_error(grads.input.flat(), input.flat(), h, tol, loss));
}

TripletBatch<double> random_batch(Rng& rng) {
  const std::size_t n = pick(rng, 1, 4);
  const std::size_t d = pick(rng, 1, 16);
  return {random_matrix(rng, n, d), random_matrix(rng, n, d), random_matrix(rng, n, d), random_matrix(rng, n, d)};
}

double loss_trial(Rng& rng, double h, double tol, LossKind kind) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto batch = random_batch(rng);
  if (kind == LossKind::m3l) {
    // Near-coincident points make the rho-th power ratio so curved that central
    // differences stop being accurate; redraw until all distances are clear.
    auto min_denominator = [&] {
      double lo = 1e300;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        lo = std::min({lo, square_distance(batch.anchor_text.row(i), batch.pos_image.row(i)),
                       square_distance(batch.anchor_text.row(i), batch.neg_image.row(i)),
                       square_distance(batch.anchor_text.row(i), batch.neg_text.row(i))});
      }
      return lo;
    };
    while (min_denominator() < 1e-2) batch = random_batch(rng);
  }
  M3LHyperparams m3l{1.0 + 3.0 * u(rng), u(rng), 0.2 + u(rng)};
  PATRHyperparams patr;
  if (kind == LossKind::patr) {
    // Keep every row clear of the hinge kink.
    double lo = 1e300, hi = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double dn = square_distance(batch.anchor_text.row(i), batch.neg_image.row(i));
      lo = std::min(lo, dn);
      hi = std::max(hi, dn);
    }
    patr.eta = u(rng) < 0.5 ? 0.5 * lo : 2.0 * hi + 1.0;
  }
  auto value = [&] { return kind == LossKind::m3l ? m3l_loss(batch, m3l).loss : patr_loss(batch, patr).loss; };
  const auto r = kind == LossKind::m3l ? m3l_loss(batch, m3l) : patr_loss(batch, patr);
  return std::max(tensor_error(r.grad_anchor.flat(), batch.anchor_text.flat(), h, tol, value),
                  tensor_error(r.grad_neg_text.flat(), batch.neg_text.flat(), h, tol, value));
}

}  // namespace

double gradient_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const GradcheckSuite& s) { return s.failures == 0; });
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  Rng rng(options.seed);
  GradcheckReport report;
  auto run = [&](std::string name, const std::function<double()>& trial) {
    GradcheckSuite suite{std::move(name), options.trials, 0, 0.0};
    for (std::size_t t = 0; t < options.trials; ++t) {
      const double err = trial();
      suite.max_error = std::max(suite.max_error, err);
      if (!(err <= options.tolerance)) ++suite.failures;
    }
    report.suites.push_back(std::move(suite));
  };
  run("projection", [&] { return projection_trial(rng, options.step, options.tolerance); });
  run("m3l", [&] { return loss_trial(rng, options.step, options.tolerance, LossKind::m3l); });
  run("patr", [&] { return loss_trial(rng, options.step, options.tolerance, LossKind::patr); });
  return report;
}

}  // namespace xmodal
