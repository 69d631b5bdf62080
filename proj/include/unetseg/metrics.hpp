#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unetseg/image.hpp"

namespace unetseg {

/// |pred & truth| / |pred | truth|; 1.0 when both are empty.
double jaccard(const Mask& pred, const Mask& truth);

/// 2|pred & truth| / (|pred| + |truth|); 1.0 when both are empty.
double dice(const Mask& pred, const Mask& truth);

/// Mean over images of (j if j >= cut else 0).
double threshold_jaccard(std::span<const double> per_image_jaccard, double cut = 0.65);

/// mask = 1 where prob >= threshold (ties go to the lesion).
Mask binarize(const Image& probabilities, double threshold = 0.5);

struct ImageScore {
  std::string id;
  double jaccard = 0.0;
  double dice = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> per_image;
  double dataset_jaccard = 0.0;
  double dataset_threshold_jaccard = 0.0;
  double dataset_dice = 0.0;
  double cut = 0.65;
};

MetricReport make_report(std::vector<ImageScore> scores, double cut = 0.65);

/// `per_image_csv`: image_id,jaccard,dice. `summary_csv`:
/// dataset_jaccard,dataset_threshold_jaccard,cut.
void write_report(const MetricReport& report, const std::filesystem::path& per_image_csv,
                  const std::filesystem::path& summary_csv);

}  // namespace unetseg
