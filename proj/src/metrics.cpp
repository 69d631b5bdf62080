#include "unetseg/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "unetseg/error.hpp"

namespace unetseg {
namespace {

struct Counts {
  std::size_t inter = 0, pred = 0, truth = 0;
};

Counts count(const Mask& pred, const Mask& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("mask shapes differ: " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs " + std::to_string(truth.height) + "x" +
                     std::to_string(truth.width));
  }
  Counts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
    c.inter += (p && t);
    c.pred += p;
    c.truth += t;
  }
  return c;
}

}  // namespace

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

double jaccard(const Mask& pred, const Mask& truth) {
  const Counts c = count(pred, truth);
  const std::size_t uni = c.pred + c.truth - c.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double dice(const Mask& pred, const Mask& truth) {
  const Counts c = count(pred, truth);
  if (c.pred + c.truth == 0) return 1.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.truth);
}

double threshold_jaccard(std::span<const double> per_image_jaccard, double cut) {
  if (per_image_jaccard.empty()) throw ContractError("threshold_jaccard of an empty list");
  double total = 0.0;
  for (double j : per_image_jaccard) {
    if (!(j >= 0.0 && j <= 1.0)) throw ContractError("jaccard value outside [0, 1]");
    total += j >= cut ? j : 0.0;
  }
  return total / static_cast<double>(per_image_jaccard.size());
}

Mask binarize(const Image& probabilities, double threshold) {
  if (probabilities.channels != 1) {
    throw ShapeError("binarize expects a one-channel probability map, got " +
                     std::to_string(probabilities.channels) + " channels");
  }
  Mask m(probabilities.height, probabilities.width);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    m.data[i] = static_cast<double>(probabilities.data[i]) >= threshold ? 1 : 0;
  }
  return m;
}

MetricReport make_report(std::vector<ImageScore> scores, double cut) {
  if (scores.empty()) throw ContractError("metric report needs at least one image");
  MetricReport r;
  r.cut = cut;
  std::vector<double> js;
  double dsum = 0.0;
  for (const auto& s : scores) {
    js.push_back(s.jaccard);
    dsum += s.dice;
  }
  r.dataset_jaccard = std::accumulate(js.begin(), js.end(), 0.0) / static_cast<double>(js.size());
  r.dataset_threshold_jaccard = threshold_jaccard(js, cut);
  r.dataset_dice = dsum / static_cast<double>(scores.size());
  r.per_image = std::move(scores);
  return r;
}

void write_report(const MetricReport& report, const std::filesystem::path& per_image_csv,
                  const std::filesystem::path& summary_csv) {
  std::ofstream rows(per_image_csv);
  if (!rows) throw IoError("cannot write " + per_image_csv.string());
  rows.precision(17);
  rows << "image_id,jaccard,dice\n";
  for (const auto& s : report.per_image) rows << s.id << ',' << s.jaccard << ',' << s.dice << '\n';

  std::ofstream summary(summary_csv);
  if (!summary) throw IoError("cannot write " + summary_csv.string());
  summary.precision(17);
  summary << "dataset_jaccard,dataset_threshold_jaccard,cut\n"
          << report.dataset_jaccard << ',' << report.dataset_threshold_jaccard << ','
          << report.cut << '\n';
}

}  // namespace unetseg
