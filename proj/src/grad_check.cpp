#include "unetseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace unetseg {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " max_error=" << max_error << " over " << coordinates
     << " coords, " << inconclusive << " inconclusive (worst input " << worst_input << " index " << worst_index << ": analytic "
     << worst_analytic << " numeric " << worst_numeric << ")";
  return os.str();
}

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = f(inputs);
    tape.backward(loss);
  }
  double base = 0.0;

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  NoGradScope<double> no_grad;
  if (options.detect_kinks) base = f(inputs).item();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double>& x = inputs[i];
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }

    auto values = x.mutable_data();
    for (std::size_t j : coords) {
      const double original = values[j];
      const double step =
          options.scale_step ? options.h * std::max(1.0, std::abs(original)) : options.h;
      values[j] = original + step;
      const double plus = f(inputs).item();
      values[j] = original - step;
      const double minus = f(inputs).item();
      values[j] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[j];
      if (options.detect_kinks) {
        // Central estimates at h, h/2 and h/4 must agree, and the second
        // differences must halve with the step as they do for a smooth
        // function. Each pairwise test misses a kink at one particular
        // offset; the offsets differ between the two pairs.
        const double scale = std::max(std::abs(numeric), 1e-6);
        double previous_slope = numeric;
        double previous_curvature = (plus - 2.0 * base + minus) / step;
        bool kink = false;
        for (double divisor : {2.0, 4.0}) {
          const double s = step / divisor;
          values[j] = original + s;
          const double p = f(inputs).item();
          values[j] = original - s;
          const double m = f(inputs).item();
          values[j] = original;
          const double slope = (p - m) / (2.0 * s);
          const double curvature = (p - 2.0 * base + m) / s;
          kink = kink || !(std::abs(slope - previous_slope) <= options.tolerance * scale) ||
                 !(std::abs(previous_curvature - 2.0 * curvature) <= options.tolerance * scale);
          previous_slope = slope;
          previous_curvature = curvature;
        }
        if (kink) {
          ++report.inconclusive;
          continue;
        }
      }
      const double diff = std::abs(a - numeric);
      double error = std::abs(a) < 1e-6 ? diff : diff / std::abs(a);
      if (!std::isfinite(error)) error = std::numeric_limits<double>::infinity();
      if (report.coordinates == 0 || error > report.max_error) {
        report.max_error = error;
        report.worst_input = i;
        report.worst_index = j;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      ++report.coordinates;
    }
  }
  report.passed = report.max_error < options.tolerance;
  return report;
}

}  // namespace unetseg
