#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unetseg/dataset.hpp"
#include "unetseg/metrics.hpp"
#include "unetseg/training.hpp"
#include "unetseg/unet.hpp"

namespace unetseg {

/// Everything needed to reproduce a checkpoint, stored as archive metadata.
struct CheckpointManifest {
  ModelConfig model;
  std::size_t image_size = 0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> fold;
  std::size_t phase = 0;
  std::size_t epoch = 0;
  double val_dice = 0.0;
  double val_jaccard = 0.0;
  bool color_balance = false;
  /// Echo of the run settings (schedule, optimiser, augmentation, data).
  std::vector<std::pair<std::string, std::string>> settings;

  std::vector<std::pair<std::string, std::string>> to_meta() const;
  /// Throws LoadError naming the missing or malformed key.
  static CheckpointManifest from_meta(const std::vector<std::pair<std::string, std::string>>& meta,
                                      const std::string& source);
};

template <typename Real>
struct Checkpoint {
  CheckpointManifest manifest;
  std::unique_ptr<UNetModel<Real>> model;
};

/// Writes to a temporary sibling and renames, so a failed save leaves no file.
template <typename Real>
void save_checkpoint(const UNetModel<Real>& model, const CheckpointManifest& manifest,
                     const std::filesystem::path& path);

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path);

/// Settings echo written into manifests.
std::vector<std::pair<std::string, std::string>> hyper_entries(const HyperParams& hyper);

struct TrainSpec {
  ModelConfig model;
  HyperParams hyper;
  /// Strictly increasing; each a multiple of the model's downsampling factor.
  std::vector<std::size_t> sizes{32};
  bool color_balance = false;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> encoder_weights;

  /// ConfigError for bad settings, ShapeError for sizes the model cannot take.
  void validate() const;
};

template <typename Real>
struct TrainOutcome {
  Checkpoint<Real> checkpoint;
  /// Concatenated over sizes; phases are numbered 1, 2 at the first size,
  /// 3, 4 at the second, and so on.
  std::vector<EpochRecord> history;
  std::vector<PhaseRecord> phases;
  std::vector<std::size_t> phase_sizes;
};

/// Runs the two-phase procedure at each size in turn, starting every size
/// from the best weights of the previous one. Samples are given at their
/// stored resolution and resized per stage.
template <typename Real>
TrainOutcome<Real> progressive_train(const std::vector<Sample>& train, const std::vector<Sample>& validation,
                                     const TrainSpec& spec, std::optional<std::size_t> fold = {},
                                     const EpochCallback& on_epoch = {});

/// Trains on every fold except `fold` and validates on `fold`. Samples keep
/// their dataset order; ids of the split missing from `samples` raise DataError.
template <typename Real>
TrainOutcome<Real> train_fold(std::size_t fold, const FoldSplit& split, const std::vector<Sample>& samples,
                              const TrainSpec& spec, const EpochCallback& on_epoch = {});

/// Probability map for one image. Extents that are not multiples of the
/// downsampling factor are reflection-padded at the bottom/right and the
/// output is cropped back.
template <typename Real>
Image predict(UNetModel<Real>& model, const Image& image);

/// Mirror padding at the bottom and right edges.
Image pad_reflect(const Image& image, std::size_t height, std::size_t width);
Image crop(const Image& image, std::size_t height, std::size_t width);

struct EnsembleSpec {
  std::vector<std::filesystem::path> members;
  double threshold = 0.5;
  /// Feed images at their own resolution instead of resizing them to each
  /// member's training size (and the map back).
  bool native = false;

  void validate() const;
};

/// Probability-averaging ensemble. Members are ordered by path so the mean
/// does not depend on the order they were listed in.
template <typename Real>
class Ensemble {
 public:
  static Ensemble load(const EnsembleSpec& spec);
  /// Takes ownership of in-memory members; `ids` fix the summation order.
  static Ensemble from_models(std::vector<std::pair<std::string, std::unique_ptr<UNetModel<Real>>>> members,
                              double threshold);

  std::size_t size() const { return members_.size(); }
  double threshold() const { return threshold_; }
  const CheckpointManifest* manifest(std::size_t i) const;

  /// Mean of the members' double-precision probability maps and its
  /// binarisation; a mean within 1e-9 of the threshold counts as lesion.
  std::pair<Image, Mask> predict(const Image& image);

 private:
  struct Member {
    std::string id;
    std::optional<CheckpointManifest> manifest;
    std::unique_ptr<UNetModel<Real>> model;
    std::optional<std::size_t> input_size;
    bool color_balance = false;
  };
  void sort_and_check();

  std::vector<Member> members_;
  double threshold_ = 0.5;
};

/// Scores predictions against ground truth; every truth id must have a
/// prediction and vice versa (DataError listing the mismatched ids).
MetricReport evaluate(const std::vector<std::pair<std::string, Mask>>& predictions,
                      const std::vector<std::pair<std::string, Mask>>& truths, double cut = 0.65);

/// Directory form: `pred_dir` holds <id>.png masks; `truth_dir` is either a
/// dataset root with masks/ or a directory of <id>.png masks.
MetricReport evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir,
                      double cut = 0.65);

template <typename Real>
MetricReport evaluate(Ensemble<Real>& ensemble, const std::vector<Sample>& samples, double cut = 0.65);

}  // namespace unetseg
