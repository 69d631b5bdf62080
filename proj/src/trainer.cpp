#include "unetseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "unetseg/error.hpp"
#include "unetseg/log.hpp"
#include "unetseg/png_io.hpp"
#include "unetseg/preprocess.hpp"

namespace unetseg {

namespace {

constexpr const char* kCheckpointKind = "unetseg-checkpoint";
constexpr double kTieTolerance = 1e-9;
const std::set<std::string> kManifestKeys{"kind",        "train.image_size", "train.seed",       "train.fold",
                                          "train.phase", "train.epoch",      "train.val_dice",   "train.val_jaccard",
                                          "data.color_balance"};

std::string real_string(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename Real>
constexpr DType dtype_of() {
  return std::is_same_v<Real, float> ? DType::f32 : DType::f64;
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ", ") + id;
  return out;
}

Mask read_mask_file(const std::filesystem::path& path) {
  const GrayPlane plane = read_png_gray(path);
  Mask m(plane.height, plane.width);
  for (std::size_t i = 0; i < plane.data.size(); ++i) m.data[i] = plane.data[i] >= 128 ? 1 : 0;
  return m;
}

std::map<std::string, std::filesystem::path> png_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.emplace(entry.path().stem().string(), entry.path());
    }
  }
  return files;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> CheckpointManifest::to_meta() const {
  std::vector<std::pair<std::string, std::string>> meta{{"kind", kCheckpointKind}};
  for (const auto& [k, v] : model.to_entries()) meta.emplace_back("model." + k, v);
  meta.emplace_back("train.image_size", std::to_string(image_size));
  meta.emplace_back("train.seed", std::to_string(seed));
  meta.emplace_back("train.fold", fold ? std::to_string(*fold) : "none");
  meta.emplace_back("train.phase", std::to_string(phase));
  meta.emplace_back("train.epoch", std::to_string(epoch));
  meta.emplace_back("train.val_dice", real_string(val_dice));
  meta.emplace_back("train.val_jaccard", real_string(val_jaccard));
  meta.emplace_back("data.color_balance", color_balance ? "true" : "false");
  for (const auto& kv : settings) meta.push_back(kv);
  return meta;
}

CheckpointManifest CheckpointManifest::from_meta(const std::vector<std::pair<std::string, std::string>>& meta,
                                                 const std::string& source) {
  std::map<std::string, std::string> known;
  std::vector<std::pair<std::string, std::string>> model_entries;
  CheckpointManifest m;
  for (const auto& [k, v] : meta) {
    if (k.rfind("model.", 0) == 0) {
      model_entries.emplace_back(k.substr(6), v);
    } else if (kManifestKeys.count(k)) {
      known[k] = v;
    } else {
      m.settings.emplace_back(k, v);
    }
  }
  auto require = [&](const std::string& key) -> const std::string& {
    auto it = known.find(key);
    if (it == known.end()) throw LoadError(source + ": checkpoint manifest lacks '" + key + "'");
    return it->second;
  };
  if (require("kind") != kCheckpointKind) {
    throw LoadError(source + ": archive kind '" + known["kind"] + "' is not a checkpoint");
  }
  auto number = [&](const std::string& key) {
    const std::string& text = require(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw LoadError(source + ": manifest key '" + key + "' has malformed value '" + text + "'");
    }
  };
  auto count = [&](const std::string& key) {
    const std::string& text = require(key);
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
      throw LoadError(source + ": manifest key '" + key + "' has malformed value '" + text + "'");
    }
    return static_cast<std::uint64_t>(std::stoull(text));
  };
  try {
    m.model = ModelConfig::from_entries(model_entries);
  } catch (const ConfigError& e) {
    throw LoadError(source + ": bad model manifest: " + e.what());
  }
  m.image_size = count("train.image_size");
  m.seed = count("train.seed");
  if (require("train.fold") != "none") m.fold = count("train.fold");
  m.phase = count("train.phase");
  m.epoch = count("train.epoch");
  m.val_dice = number("train.val_dice");
  m.val_jaccard = number("train.val_jaccard");
  const std::string& cb = require("data.color_balance");
  if (cb != "true" && cb != "false") throw LoadError(source + ": data.color_balance must be true or false");
  m.color_balance = cb == "true";
  return m;
}

template <typename Real>
void save_checkpoint(const UNetModel<Real>& model, const CheckpointManifest& manifest,
                     const std::filesystem::path& path) {
  Archive archive;
  archive.meta = manifest.to_meta();
  archive.arrays = model.export_arrays(dtype_of<Real>());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  try {
    write_archive(archive, tmp);
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  const Archive archive = read_archive(path);
  Checkpoint<Real> ckpt;
  ckpt.manifest = CheckpointManifest::from_meta(archive.meta, path.string());
  ckpt.model = UNetModel<Real>::build(ckpt.manifest.model, 0);
  try {
    ckpt.model->load_arrays(archive.arrays);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + " (preset " + ckpt.manifest.model.preset + ", size " +
                    std::to_string(ckpt.manifest.image_size) + "): " + e.what());
  }
  return ckpt;
}

std::vector<std::pair<std::string, std::string>> hyper_entries(const HyperParams& h) {
  return {
      {"train.batch_size", std::to_string(h.batch_size)},
      {"train.epochs", std::to_string(h.epochs_per_phase)},
      {"train.loss", std::string(to_string(h.loss))},
      {"train.lr", h.fixed_lr ? real_string(*h.fixed_lr) : "auto"},
      {"train.threshold", real_string(h.threshold)},
      {"schedule.kind", std::string(to_string(h.schedule))},
      {"schedule.cut_frac", real_string(h.cut_frac)},
      {"schedule.ratio", real_string(h.ratio)},
      {"lr_find.start", real_string(h.lr_range.lr_start)},
      {"lr_find.end", real_string(h.lr_range.lr_end)},
      {"lr_find.iters", std::to_string(h.lr_range.num_iters)},
      {"lr_find.spacing", std::string(to_string(h.lr_range.spacing))},
      {"augment.dihedral", h.augment.dihedral ? "true" : "false"},
      {"augment.rotation", h.augment.rotation ? "true" : "false"},
      {"augment.zoom", h.augment.zoom ? "true" : "false"},
      {"augment.lighting", h.augment.lighting ? "true" : "false"},
      {"augment.max_rotation", real_string(h.augment.max_rotation_deg)},
      {"augment.max_zoom", real_string(h.augment.max_zoom)},
      {"augment.brightness", real_string(h.augment.max_brightness)},
      {"augment.contrast", real_string(h.augment.max_contrast)},
  };
}

void TrainSpec::validate() const {
  model.validate();
  hyper.validate();
  if (sizes.empty()) throw ConfigError("train.sizes must list at least one size");
  const std::size_t factor = model.downsampling_factor();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || sizes[i] % factor != 0) {
      throw ShapeError("training size " + std::to_string(sizes[i]) + " is not a positive multiple of " +
                       std::to_string(factor));
    }
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("train.sizes must be strictly increasing");
  }
}

template <typename Real>
TrainOutcome<Real> progressive_train(const std::vector<Sample>& train, const std::vector<Sample>& validation,
                                     const TrainSpec& spec, std::optional<std::size_t> fold,
                                     const EpochCallback& on_epoch) {
  spec.validate();
  auto model = UNetModel<Real>::build(spec.model, spec.seed);
  if (spec.encoder_weights) {
    log::info(import_encoder_weights(*model, *spec.encoder_weights).summary());
  }
  HyperParams hyper = spec.hyper;
  hyper.seed = spec.seed;
  TrainOutcome<Real> outcome;
  EpochRecord best;
  for (std::size_t stage = 0; stage < spec.sizes.size(); ++stage) {
    const std::size_t size = spec.sizes[stage];
    LoadOptions load{size, spec.color_balance};
    std::vector<Sample> train_s, val_s;
    for (const auto& s : train) train_s.push_back(preprocess(s, load));
    for (const auto& s : validation) val_s.push_back(preprocess(s, load));
    log::info("training at " + std::to_string(size) + "x" + std::to_string(size) + " on " +
              std::to_string(train_s.size()) + " images, validating on " + std::to_string(val_s.size()));
    auto result = run_training_procedure(*model, train_s, val_s, hyper, on_epoch, 2 * stage + 1,
                                         outcome.history.size());
    best = result.best_record();
    outcome.history.insert(outcome.history.end(), result.history.begin(), result.history.end());
    for (auto& p : result.phases) {
      outcome.phases.push_back(std::move(p));
      outcome.phase_sizes.push_back(size);
    }
  }
  CheckpointManifest& m = outcome.checkpoint.manifest;
  m.model = spec.model;
  m.image_size = spec.sizes.back();
  m.seed = spec.seed;
  m.fold = fold;
  m.phase = best.phase;
  m.epoch = best.epoch;
  m.val_dice = best.val_dice;
  m.val_jaccard = best.val_jaccard;
  m.color_balance = spec.color_balance;
  m.settings = hyper_entries(spec.hyper);
  outcome.checkpoint.model = std::move(model);
  return outcome;
}

template <typename Real>
TrainOutcome<Real> train_fold(std::size_t fold, const FoldSplit& split, const std::vector<Sample>& samples,
                              const TrainSpec& spec, const EpochCallback& on_epoch) {
  if (fold >= split.k) {
    throw ContractError("fold " + std::to_string(fold) + " out of range for a " + std::to_string(split.k) +
                        "-fold split");
  }
  std::map<std::string, std::size_t> fold_of;
  for (const auto& [id, f] : split.assignment) fold_of.emplace(id, f);
  std::vector<Sample> train, validation;
  for (const auto& s : samples) {
    auto it = fold_of.find(s.id);
    if (it == fold_of.end()) continue;
    (it->second == fold ? validation : train).push_back(s);
    fold_of.erase(it);
  }
  if (!fold_of.empty()) {
    std::vector<std::string> missing;
    for (const auto& [id, f] : fold_of) missing.push_back(id);
    throw DataError("split lists ids absent from the dataset: " + join_ids(missing));
  }
  return progressive_train<Real>(train, validation, spec, fold, on_epoch);
}

Image pad_reflect(const Image& image, std::size_t height, std::size_t width) {
  if (height < image.height || width < image.width) throw ContractError("pad target smaller than image");
  if (height == image.height && width == image.width) return image;
  auto mirror = [](std::size_t i, std::size_t n) {
    if (n == 1) return std::size_t{0};
    const std::size_t period = 2 * (n - 1);
    const std::size_t r = i % period;
    return r < n ? r : period - r;
  };
  Image out(image.channels, height, width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        out.at(c, y, x) = image.at(c, mirror(y, image.height), mirror(x, image.width));
      }
    }
  }
  return out;
}

Image crop(const Image& image, std::size_t height, std::size_t width) {
  if (height > image.height || width > image.width) throw ContractError("crop larger than image");
  Image out(image.channels, height, width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, y, x);
    }
  }
  return out;
}

namespace {

struct ProbabilityMap {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> data;
};

template <typename Real>
ProbabilityMap predict_probabilities(UNetModel<Real>& model, const Image& image) {
  if (image.channels != model.config().input_channels) {
    throw ShapeError("model expects " + std::to_string(model.config().input_channels) + " channels, image has " +
                     std::to_string(image.channels));
  }
  const std::size_t f = model.config().downsampling_factor();
  const std::size_t h = std::max(f, (image.height + f - 1) / f * f);
  const std::size_t w = std::max(f, (image.width + f - 1) / f * f);
  const Image padded = pad_reflect(image, h, w);
  NoGradScope<Real> no_grad;
  const Image* ptr = &padded;
  const Tensor<Real> logits = model.forward(image_batch<Real>(std::span<const Image* const>(&ptr, 1)), nn::Mode::eval);
  ProbabilityMap out{model.config().output_channels, image.height, image.width, {}};
  out.data.reserve(out.channels * image.height * image.width);
  for (std::size_t c = 0; c < out.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        const double z = static_cast<double>(logits.at((c * h + y) * w + x));
        out.data.push_back(1.0 / (1.0 + std::exp(-z)));
      }
    }
  }
  return out;
}

}  // namespace

template <typename Real>
Image predict(UNetModel<Real>& model, const Image& image) {
  const ProbabilityMap p = predict_probabilities(model, image);
  Image out(p.channels, p.height, p.width);
  std::transform(p.data.begin(), p.data.end(), out.data.begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

void EnsembleSpec::validate() const {
  if (members.empty()) throw EnsembleError("an ensemble needs at least one member");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("predict.threshold must lie in (0, 1]");
}

template <typename Real>
Ensemble<Real> Ensemble<Real>::load(const EnsembleSpec& spec) {
  spec.validate();
  Ensemble e;
  e.threshold_ = spec.threshold;
  for (const auto& path : spec.members) {
    auto ckpt = load_checkpoint<Real>(path);
    std::optional<std::size_t> size;
    if (!spec.native && ckpt.manifest.image_size > 0) size = ckpt.manifest.image_size;
    const bool balance = ckpt.manifest.color_balance;
    e.members_.push_back(Member{path.string(), std::move(ckpt.manifest), std::move(ckpt.model), size, balance});
  }
  e.sort_and_check();
  return e;
}

template <typename Real>
Ensemble<Real> Ensemble<Real>::from_models(
    std::vector<std::pair<std::string, std::unique_ptr<UNetModel<Real>>>> members, double threshold) {
  EnsembleSpec probe;
  probe.members.resize(members.size());
  probe.threshold = threshold;
  probe.validate();
  Ensemble e;
  e.threshold_ = threshold;
  for (auto& [id, model] : members) e.members_.push_back(Member{id, std::nullopt, std::move(model), std::nullopt, false});
  e.sort_and_check();
  return e;
}

template <typename Real>
void Ensemble<Real>::sort_and_check() {
  std::stable_sort(members_.begin(), members_.end(), [](const Member& a, const Member& b) { return a.id < b.id; });
  const std::size_t out = members_.front().model->config().output_channels;
  for (const auto& m : members_) {
    if (m.model->config().output_channels != out) {
      throw EnsembleError("member " + m.id + " has " + std::to_string(m.model->config().output_channels) +
                          " output channels, expected " + std::to_string(out));
    }
  }
}

template <typename Real>
const CheckpointManifest* Ensemble<Real>::manifest(std::size_t i) const {
  const auto& m = members_.at(i).manifest;
  return m ? &*m : nullptr;
}

template <typename Real>
std::pair<Image, Mask> Ensemble<Real>::predict(const Image& image) {
  std::vector<double> sum;
  Image mean;
  for (auto& member : members_) {
    ProbabilityMap p;
    const bool resized = member.input_size && (image.height != *member.input_size || image.width != *member.input_size);
    if (resized || member.color_balance) {
      Image input = resized ? resize_bilinear(image, *member.input_size, *member.input_size) : image;
      if (member.color_balance) input = color_balance(input);
      p = predict_probabilities(*member.model, input);
      if (resized) {
        Image small(p.channels, p.height, p.width);
        std::transform(p.data.begin(), p.data.end(), small.data.begin(), [](double v) { return static_cast<float>(v); });
        const Image back = resize_bilinear(small, image.height, image.width);
        p = ProbabilityMap{back.channels, back.height, back.width, std::vector<double>(back.data.begin(), back.data.end())};
      }
    } else {
      p = predict_probabilities(*member.model, image);
    }
    if (sum.empty()) {
      sum.assign(p.data.size(), 0.0);
      mean = Image(p.channels, p.height, p.width);
    } else if (p.channels != mean.channels || p.height != mean.height || p.width != mean.width) {
      throw EnsembleError("member " + member.id + " produced a differently shaped probability map");
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p.data[i];
  }
  if (mean.channels != 1) throw EnsembleError("ensemble masks need single-channel models");
  const double n = static_cast<double>(members_.size());
  Mask mask(mean.height, mean.width);
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double m = sum[i] / n;
    mean.data[i] = static_cast<float>(m);
    mask.data[i] = m >= threshold_ - kTieTolerance ? 1 : 0;
  }
  return {std::move(mean), std::move(mask)};
}

MetricReport evaluate(const std::vector<std::pair<std::string, Mask>>& predictions,
                      const std::vector<std::pair<std::string, Mask>>& truths, double cut) {
  std::map<std::string, const Mask*> pred, truth;
  for (const auto& [id, m] : predictions) pred.emplace(id, &m);
  for (const auto& [id, m] : truths) truth.emplace(id, &m);
  std::vector<std::string> no_pred, no_truth;
  for (const auto& [id, m] : truth) {
    if (!pred.count(id)) no_pred.push_back(id);
  }
  for (const auto& [id, m] : pred) {
    if (!truth.count(id)) no_truth.push_back(id);
  }
  if (!no_pred.empty() || !no_truth.empty()) {
    std::string msg = "prediction and truth ids differ";
    if (!no_pred.empty()) msg += "; missing predictions: " + join_ids(no_pred);
    if (!no_truth.empty()) msg += "; missing truths: " + join_ids(no_truth);
    throw DataError(msg);
  }
  if (truth.empty()) throw DataError("nothing to evaluate");
  std::vector<ImageScore> scores;
  for (const auto& [id, t] : truth) {
    const Mask& p = *pred.at(id);
    if (p.height != t->height || p.width != t->width) {
      throw DataError("image " + id + ": prediction is " + std::to_string(p.height) + "x" + std::to_string(p.width) +
                      ", truth is " + std::to_string(t->height) + "x" + std::to_string(t->width));
    }
    scores.push_back({id, jaccard(p, *t), dice(p, *t)});
  }
  return make_report(std::move(scores), cut);
}

MetricReport evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir, double cut) {
  const auto truth_root = std::filesystem::is_directory(truth_dir / "masks") ? truth_dir / "masks" : truth_dir;
  std::vector<std::pair<std::string, Mask>> preds, truths;
  for (const auto& [id, path] : png_files(pred_dir)) preds.emplace_back(id, read_mask_file(path));
  for (const auto& [id, path] : png_files(truth_root)) truths.emplace_back(id, read_mask_file(path));
  return evaluate(preds, truths, cut);
}

template <typename Real>
MetricReport evaluate(Ensemble<Real>& ensemble, const std::vector<Sample>& samples, double cut) {
  std::vector<std::pair<std::string, Mask>> preds, truths;
  for (const auto& s : samples) {
    preds.emplace_back(s.id, ensemble.predict(s.image).second);
    truths.emplace_back(s.id, s.mask);
  }
  return evaluate(preds, truths, cut);
}

#define UNETSEG_INSTANTIATE_TRAINER(Real)                                                                      \
  template void save_checkpoint(const UNetModel<Real>&, const CheckpointManifest&, const std::filesystem::path&); \
  template Checkpoint<Real> load_checkpoint<Real>(const std::filesystem::path&);                              \
  template TrainOutcome<Real> progressive_train<Real>(const std::vector<Sample>&, const std::vector<Sample>&,   \
                                                      const TrainSpec&, std::optional<std::size_t>,              \
                                                      const EpochCallback&);                                     \
  template TrainOutcome<Real> train_fold<Real>(std::size_t, const FoldSplit&, const std::vector<Sample>&,       \
                                               const TrainSpec&, const EpochCallback&);                         \
  template Image predict(UNetModel<Real>&, const Image&);                                                      \
  template class Ensemble<Real>;                                                                               \
  template MetricReport evaluate(Ensemble<Real>&, const std::vector<Sample>&, double);

UNETSEG_INSTANTIATE_TRAINER(float)
UNETSEG_INSTANTIATE_TRAINER(double)

}  // namespace unetseg
