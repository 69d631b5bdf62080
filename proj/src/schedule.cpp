#include "unetseg/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "unetseg/error.hpp"

namespace unetseg {

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "stlr") return ScheduleKind::stlr;
  if (text == "constant") return ScheduleKind::constant;
  throw ConfigError("unknown schedule '" + std::string(text) + "' (stlr|constant)");
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::stlr ? "stlr" : "constant";
}

void ScheduleSpec::validate() const {
  if (total_iterations < 1) throw ConfigError("schedule: total iterations must be >= 1");
  if (!(cut_frac > 0.0 && cut_frac < 1.0)) throw ConfigError("schedule.cut_frac must lie in (0, 1)");
  if (!(ratio > 1.0)) throw ConfigError("schedule.ratio must be > 1");
  if (!(lr_max > 0.0) || !std::isfinite(lr_max)) throw ConfigError("schedule: lr_max must be positive");
}

std::size_t ScheduleSpec::cut() const {
  std::size_t c = static_cast<std::size_t>(std::floor(static_cast<double>(total_iterations) * cut_frac));
  c = std::max<std::size_t>(c, 1);
  if (total_iterations >= 2) c = std::min(c, total_iterations - 1);
  return c;
}

double stlr(std::size_t t, const ScheduleSpec& spec) {
  spec.validate();
  const std::size_t total = spec.total_iterations;
  if (t > total) {
    throw ContractError("stlr: iteration " + std::to_string(t) + " outside [0, " +
                        std::to_string(total) + "]");
  }
  const std::size_t cut = spec.cut();
  double p;
  if (t < cut) {
    p = static_cast<double>(t) / static_cast<double>(cut);
  } else if (total == cut) {
    p = 1.0;
  } else {
    p = 1.0 - static_cast<double>(t - cut) / static_cast<double>(total - cut);
  }
  return spec.lr_max * (1.0 + p * (spec.ratio - 1.0)) / spec.ratio;
}

double scheduled_lr(std::size_t t, const ScheduleSpec& spec) {
  if (spec.kind == ScheduleKind::constant) {
    spec.validate();
    return spec.lr_max;
  }
  return stlr(t, spec);
}

LrSpacing parse_lr_spacing(std::string_view text) {
  if (text == "linear") return LrSpacing::linear;
  if (text == "log") return LrSpacing::log;
  throw ConfigError("unknown lr spacing '" + std::string(text) + "' (linear|log)");
}

std::string_view to_string(LrSpacing spacing) {
  return spacing == LrSpacing::linear ? "linear" : "log";
}

void LrRangeOptions::validate() const {
  if (!(lr_start > 0.0) || !(lr_start < lr_end)) {
    throw ContractError("lr range test needs 0 < lr_start < lr_end");
  }
  if (num_iters < 2) throw ContractError("lr range test needs at least 2 iterations");
  if (!(beta >= 0.0 && beta < 1.0)) throw ContractError("lr range smoothing beta must lie in [0, 1)");
  if (!(divergence_factor > 1.0)) throw ContractError("lr range divergence factor must exceed 1");
}

std::vector<double> lr_range_points(const LrRangeOptions& options) {
  options.validate();
  std::vector<double> lrs(options.num_iters);
  const double last = static_cast<double>(options.num_iters - 1);
  for (std::size_t i = 0; i < options.num_iters; ++i) {
    const double f = static_cast<double>(i) / last;
    lrs[i] = options.spacing == LrSpacing::linear
                 ? options.lr_start + f * (options.lr_end - options.lr_start)
                 : options.lr_start * std::pow(options.lr_end / options.lr_start, f);
  }
  lrs.back() = options.lr_end;
  return lrs;
}

LrCurve lr_range_test(const std::function<double(double)>& step, const LrRangeOptions& options) {
  LrCurve curve;
  curve.beta = options.beta;
  double average = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  for (double lr : lr_range_points(options)) {
    const double loss = step(lr);
    if (!std::isfinite(loss)) break;
    ++i;
    average = options.beta * average + (1.0 - options.beta) * loss;
    const double smoothed = average / (1.0 - std::pow(options.beta, static_cast<double>(i)));
    curve.records.push_back({lr, loss, smoothed});
    best = std::min(best, smoothed);
    if (smoothed > options.divergence_factor * best) break;
  }
  return curve;
}

double pick_lr(const LrCurve& curve) {
  const auto& r = curve.records;
  if (r.size() < 3) {
    throw SelectionError("lr curve has " + std::to_string(r.size()) +
                         " records; at least 3 are needed to pick a learning rate");
  }
  double steepest = 0.0;
  std::size_t best = r.size();
  for (std::size_t i = 0; i + 1 < r.size(); ++i) {
    const double dx = std::log(r[i + 1].lr) - std::log(r[i].lr);
    if (!(dx > 0.0)) throw SelectionError("lr curve is not strictly increasing in lr");
    const double slope = (r[i + 1].smoothed_loss - r[i].smoothed_loss) / dx;
    if (slope < steepest - 1e-9 * std::abs(steepest)) {
      steepest = slope;
      best = i + 1;
    }
  }
  if (best == r.size()) {
    throw SelectionError("loss never decreases over the tested range [" +
                         std::to_string(r.front().lr) + ", " + std::to_string(r.back().lr) +
                         "]; widen the learning-rate range");
  }
  return r[best].lr;
}

void write_lr_curve_csv(const LrCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "lr,raw_loss,smoothed_loss\n";
  for (const auto& r : curve.records) out << r.lr << ',' << r.raw_loss << ',' << r.smoothed_loss << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

LrCurve read_lr_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "lr,raw_loss,smoothed_loss") throw DataError(path.string() + ": unexpected header");
  LrCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    LrRecord r;
    if (!(ls >> r.lr >> r.raw_loss >> r.smoothed_loss)) {
      throw DataError(path.string() + ": malformed row '" + line + "'");
    }
    curve.records.push_back(r);
  }
  return curve;
}

}  // namespace unetseg
