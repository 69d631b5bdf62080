#include "unetseg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "unetseg/error.hpp"
#include "unetseg/log.hpp"
#include "unetseg/png_io.hpp"
#include "unetseg/preprocess.hpp"

namespace unetseg {

Sample load_sample(const std::string& id, const std::filesystem::path& image_path,
                   const std::filesystem::path& mask_path) {
  Sample s;
  s.id = id;
  s.image = read_png_rgb(image_path);
  if (!std::filesystem::exists(mask_path)) throw DataError("missing mask for image " + id);
  const GrayPlane plane = read_png_gray(mask_path);
  if (plane.height != s.image.height || plane.width != s.image.width) {
    throw DataError("image " + id + ": mask is " + std::to_string(plane.height) + "x" +
                    std::to_string(plane.width) + ", image is " + std::to_string(s.image.height) + "x" +
                    std::to_string(s.image.width));
  }
  s.mask = Mask(plane.height, plane.width);
  std::size_t odd = 0;
  for (std::size_t i = 0; i < plane.data.size(); ++i) {
    const std::uint8_t v = plane.data[i];
    if (v != 0 && v != 255) ++odd;
    s.mask.data[i] = v >= 128 ? 1 : 0;
  }
  if (odd > 0) {
    log::warn("mask " + mask_path.string() + ": " + std::to_string(odd) +
              " pixels are neither 0 nor 255, binarised at 128");
  }
  return s;
}

std::vector<std::string> list_image_ids(const std::filesystem::path& root) {
  const auto dir = root / "images";
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset has no images directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  }
  if (ids.empty()) throw DataError("no PNG images in " + dir.string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

Sample preprocess(const Sample& sample, const LoadOptions& options) {
  Sample s = options.size ? resize(sample, *options.size) : sample;
  if (options.color_balance) s.image = color_balance(s.image);
  return s;
}

std::vector<Sample> load_dataset(const std::filesystem::path& root, const std::vector<std::string>& ids,
                                 const LoadOptions& options) {
  const DatasetLayout layout{root};
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    if (!std::filesystem::exists(layout.mask_path(id))) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw DataError("missing masks for: " + list);
  }
  std::vector<Sample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) {
    samples.push_back(preprocess(load_sample(id, layout.image_path(id), layout.mask_path(id)), options));
  }
  return samples;
}

std::vector<Sample> load_dataset(const std::filesystem::path& root, const LoadOptions& options) {
  return load_dataset(root, list_image_ids(root), options);
}

std::vector<std::string> FoldSplit::validation_ids(std::size_t fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldSplit::training_ids(std::size_t fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment) {
    if (f != fold) out.push_back(id);
  }
  return out;
}

std::size_t FoldSplit::fold_size(std::size_t fold) const {
  return static_cast<std::size_t>(std::count_if(assignment.begin(), assignment.end(),
                                                [fold](const auto& a) { return a.second == fold; }));
}

FoldSplit kfold_split(const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ContractError("k-fold split needs k >= 2, got " + std::to_string(k));
  if (ids.size() < k) {
    throw ContractError("cannot split " + std::to_string(ids.size()) + " ids into " + std::to_string(k) + " folds");
  }
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    throw ContractError("k-fold split ids must be unique");
  }
  std::vector<std::string> order = ids;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  FoldSplit split;
  split.k = k;
  split.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) split.assignment.emplace_back(order[i], i % k);
  return split;
}

void write_split_csv(const FoldSplit& split, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,fold\n";
  for (const auto& [id, fold] : split.assignment) out << id << ',' << fold << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

FoldSplit read_split_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "id,fold") throw DataError(path.string() + ": expected header id,fold");
  FoldSplit split;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw DataError(path.string() + ": malformed row '" + line + "'");
    std::size_t fold = 0;
    try {
      fold = std::stoul(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError(path.string() + ": bad fold in row '" + line + "'");
    }
    split.assignment.emplace_back(line.substr(0, comma), fold);
    split.k = std::max(split.k, fold + 1);
  }
  return split;
}

template <typename Real>
Tensor<Real> image_batch(std::span<const Image* const> images) {
  if (images.empty()) throw ContractError("cannot batch zero images");
  const Image& first = *images.front();
  Tensor<Real> batch({images.size(), first.channels, first.height, first.width});
  auto out = batch.mutable_data();
  const std::size_t per = first.data.size();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = *images[n];
    if (im.channels != first.channels || im.height != first.height || im.width != first.width) {
      throw ShapeError("batch images must share one shape");
    }
    std::copy(im.data.begin(), im.data.end(), out.begin() + static_cast<std::ptrdiff_t>(n * per));
  }
  return batch;
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> make_batch(std::span<const Sample* const> samples) {
  std::vector<const Image*> images;
  for (const Sample* s : samples) images.push_back(&s->image);
  Tensor<Real> x = image_batch<Real>(images);
  const std::size_t plane = samples.front()->mask.data.size();
  Tensor<Real> y({samples.size(), 1, samples.front()->mask.height, samples.front()->mask.width});
  auto out = y.mutable_data();
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Mask& m = samples[n]->mask;
    if (m.data.size() != plane || m.height != samples[n]->image.height) {
      throw ShapeError("sample " + samples[n]->id + ": mask does not match the batch shape");
    }
    for (std::size_t i = 0; i < plane; ++i) out[n * plane + i] = static_cast<Real>(m.data[i]);
  }
  return {std::move(x), std::move(y)};
}

template Tensor<float> image_batch(std::span<const Image* const>);
template Tensor<double> image_batch(std::span<const Image* const>);
template std::pair<Tensor<float>, Tensor<float>> make_batch(std::span<const Sample* const>);
template std::pair<Tensor<double>, Tensor<double>> make_batch(std::span<const Sample* const>);

}  // namespace unetseg
