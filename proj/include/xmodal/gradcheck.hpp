#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xmodal {

/// Developer check of the analytic gradients against central finite
/// differences, in double precision, on small random networks and batches.
struct GradcheckOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct GradcheckSuite {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckSuite> suites;  // projection, m3l, patr

  bool passed() const;
};

/// Fraction of the largest analytic entry of a tensor below which its entries
/// are compared on an absolute scale.
inline constexpr double kGradientFloor = 1e-5;

/// |a - n| / max(|a|, |n|, floor): relative error, with a floor for entries
/// that are numerically zero.
double gradient_error(double analytic, double numeric, double floor = 1e-6);

GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace xmodal
