#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unetseg/image.hpp"

namespace unetseg {

/// Skin-like background with a darker irregular blob as the lesion and
/// optional hair strokes occluding the image (never the mask).
struct SynthOptions {
  std::size_t count = 100;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  double min_area = 0.04;
  double max_area = 0.40;
  double hair_probability = 0.3;

  void validate() const;
};

std::string synth_id(std::size_t index);

/// The index-th sample; independent of count.
Sample synth_sample(std::size_t index, const SynthOptions& options);

/// Writes images/<id>.png and masks/<id>.png under `root`, returns the ids.
std::vector<std::string> synth_generate(const std::filesystem::path& root, const SynthOptions& options);

}  // namespace unetseg
