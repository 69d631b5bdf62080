#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string_view>
#include <vector>

namespace unetseg {

enum class ScheduleKind { stlr, constant };

ScheduleKind parse_schedule_kind(std::string_view text);
std::string_view to_string(ScheduleKind kind);

/// Slanted triangular schedule: linear warm-up from lr_max/ratio to lr_max
/// over the first `cut` iterations, then linear decay back to lr_max/ratio
/// at iteration T.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::stlr;
  std::size_t total_iterations = 1;
  double cut_frac = 0.1;
  double ratio = 32.0;
  double lr_max = 1e-3;

  void validate() const;
  /// floor(T * cut_frac), kept within [1, T - 1] when T >= 2.
  std::size_t cut() const;
};

/// Learning rate at iteration t in [0, T].
double stlr(std::size_t t, const ScheduleSpec& spec);

/// Dispatches on spec.kind (constant returns lr_max).
double scheduled_lr(std::size_t t, const ScheduleSpec& spec);

enum class LrSpacing { linear, log };

LrSpacing parse_lr_spacing(std::string_view text);
std::string_view to_string(LrSpacing spacing);

struct LrRangeOptions {
  double lr_start = 1e-5;
  double lr_end = 1e-1;
  std::size_t num_iters = 100;
  LrSpacing spacing = LrSpacing::linear;
  /// Exponential smoothing factor for the recorded loss (bias-corrected).
  double beta = 0.98;
  /// Stop once the smoothed loss exceeds this multiple of the best so far.
  double divergence_factor = 4.0;

  void validate() const;
};

/// The num_iters learning rates visited by the range test, endpoints included.
std::vector<double> lr_range_points(const LrRangeOptions& options);

struct LrRecord {
  double lr = 0.0;
  double raw_loss = 0.0;
  double smoothed_loss = 0.0;
};

struct LrCurve {
  std::vector<LrRecord> records;
  double beta = 0.98;
};

/// Runs `step(lr)` (one mini-batch update, returning its loss) at each
/// scheduled rate and records raw and smoothed losses. Stops early on
/// divergence or a non-finite loss.
LrCurve lr_range_test(const std::function<double(double)>& step, const LrRangeOptions& options);

/// Rate at the right end of the steepest descending segment of the smoothed
/// loss, slopes taken against log(lr) as on the usual log-x plot. Ties go to
/// the smaller rate. Throws SelectionError when the loss never descends.
double pick_lr(const LrCurve& curve);

/// CSV with header lr,raw_loss,smoothed_loss.
void write_lr_curve_csv(const LrCurve& curve, const std::filesystem::path& path);
LrCurve read_lr_curve_csv(const std::filesystem::path& path);

}  // namespace unetseg
