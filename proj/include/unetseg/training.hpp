#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "unetseg/image.hpp"
#include "unetseg/losses.hpp"
#include "unetseg/optim.hpp"
#include "unetseg/preprocess.hpp"
#include "unetseg/schedule.hpp"
#include "unetseg/unet.hpp"

namespace unetseg {

struct HyperParams {
  std::size_t batch_size = 8;
  std::size_t epochs_per_phase = 30;
  LossKind loss = LossKind::bce_with_logits;
  LrRangeOptions lr_range;
  ScheduleKind schedule = ScheduleKind::stlr;
  double cut_frac = 0.1;
  double ratio = 32.0;
  /// Skips the range test and trains every phase at this peak rate.
  std::optional<double> fixed_lr;
  AugmentParams augment;
  AdamOptions adam;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t phase = 0;
  double lr_max = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_dice = 0.0;
  double val_jaccard = 0.0;
};

struct PhaseRecord {
  std::size_t phase = 0;
  nn::FreezePolicy policy = nn::FreezePolicy::unfreeze_all;
  double lr_max = 0.0;
  LrCurve curve;
};

struct ValidationResult {
  double loss = 0.0;
  double dice = 0.0;
  double jaccard = 0.0;
};

template <typename Real>
struct ProcedureResult {
  std::vector<EpochRecord> history;
  std::vector<PhaseRecord> phases;
  /// Weights of the epoch with the highest validation dice (earliest on
  /// ties; the last epoch when there is no validation data).
  typename UNetModel<Real>::Snapshot best;
  std::size_t best_index = 0;

  const EpochRecord& best_record() const { return history.at(best_index); }
};

/// Called after every epoch; used for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch range test on the model, from a copy of `optimizer`. The model
/// (parameters and batch-norm statistics) is restored before returning and
/// `optimizer` is never modified.
template <typename Real>
LrCurve lr_range_test(UNetModel<Real>& model, const std::vector<Sample>& data, const AdamState<Real>& optimizer,
                      const HyperParams& hyper, std::uint64_t stream = 0);

/// Eval-mode loss and mean per-image dice/jaccard at hyper.threshold.
template <typename Real>
ValidationResult validate(UNetModel<Real>& model, const std::vector<Sample>& data, const HyperParams& hyper);

/// Freeze the first layer group, pick a rate with the range test, train
/// with the slanted triangular schedule; then unfreeze everything except
/// batch norm and repeat. A fresh optimizer starts each phase. Leaves the
/// best weights loaded in the model. `first_phase` offsets phase and epoch
/// numbering for chained runs.
template <typename Real>
ProcedureResult<Real> run_training_procedure(UNetModel<Real>& model, const std::vector<Sample>& train,
                                             const std::vector<Sample>& validation, const HyperParams& hyper,
                                             const EpochCallback& on_epoch = {}, std::size_t first_phase = 1,
                                             std::size_t first_epoch = 0);

/// CSV with header epoch,phase,lr_max,train_loss,val_loss,val_dice,val_jaccard.
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

}  // namespace unetseg
