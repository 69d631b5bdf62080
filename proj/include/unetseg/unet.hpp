#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unetseg/archive.hpp"
#include "unetseg/layers.hpp"

namespace unetseg {

/// Residual encoder + concatenating decoder. The full preset mirrors the
/// ResNet34 backbone (3/4/6/3 blocks); the desk preset is small enough to
/// train on a CPU in minutes.
struct ModelConfig {
  std::string preset = "desk";
  std::size_t input_channels = 3;
  std::size_t output_channels = 1;
  std::size_t stem_channels = 8;
  std::size_t stem_kernel = 3;
  std::size_t stem_stride = 1;
  std::vector<std::size_t> stage_blocks{1, 1, 1, 1};
  std::vector<std::size_t> stage_channels{8, 16, 32, 64};
  std::vector<std::size_t> decoder_channels{32, 16, 8, 8};
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  static ModelConfig desk();
  static ModelConfig full();
  static ModelConfig from_preset(std::string_view name);

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t total_blocks() const;
  /// Input extents must be multiples of this (stem stride x pool x 3 stages).
  std::size_t downsampling_factor() const;

  std::vector<std::pair<std::string, std::string>> to_entries() const;
  /// Reads the keys written by to_entries(); missing keys keep defaults of
  /// the named preset.
  static ModelConfig from_entries(const std::vector<std::pair<std::string, std::string>>& entries);
};

enum class LayerGroupId : std::size_t { encoder_stem = 0, encoder_body = 1, decoder = 2 };

template <typename Real>
class UNetModel {
 public:
  /// Deterministic in `seed`. Returned by pointer: the layer registry refers
  /// to layers inside the model, so a model never moves.
  static std::unique_ptr<UNetModel> build(const ModelConfig& config, std::uint64_t seed);

  UNetModel(const UNetModel&) = delete;
  UNetModel& operator=(const UNetModel&) = delete;

  /// (N, 3, H, W) -> (N, 1, H, W) logits.
  Tensor<Real> forward(const Tensor<Real>& batch, nn::Mode mode);

  const ModelConfig& config() const { return config_; }
  nn::Registry<Real>& registry() { return registry_; }
  const nn::Registry<Real>& registry() const { return registry_; }
  std::size_t tap_count() const { return 4; }
  std::size_t decoder_steps() const { return decoder_.size(); }
  std::size_t parameter_count() const;

  void set_trainable(nn::FreezePolicy policy) { registry_.set_trainable(policy); }

  /// Parameters followed by buffers, in registry order.
  using Snapshot = std::vector<std::vector<Real>>;
  Snapshot snapshot() const;
  void restore(const Snapshot& snapshot);

  bool is_encoder(std::size_t group) const { return group != static_cast<std::size_t>(LayerGroupId::decoder); }

  /// Every parameter and buffer as named arrays.
  std::vector<ArchiveEntry> export_arrays(DType dtype) const;
  /// Requires an exact name/shape match for every parameter and buffer.
  void load_arrays(const std::vector<ArchiveEntry>& arrays);

 private:
  struct DecoderStep {
    nn::ConvBnRelu<Real> first;
    nn::ConvBnRelu<Real> second;
  };

  explicit UNetModel(const ModelConfig& config, std::uint64_t seed);

  ModelConfig config_;
  nn::ConvBnRelu<Real> stem_;
  std::vector<std::vector<nn::ResidualBlock<Real>>> stages_;
  std::vector<DecoderStep> decoder_;
  nn::Conv2d<Real> head_;
  nn::Registry<Real> registry_;
};

struct ImportReport {
  std::vector<std::string> matched;
  /// Archive arrays that do not name an encoder array.
  std::vector<std::string> unmatched;
  /// Encoder arrays the archive did not provide.
  std::vector<std::string> missing;

  std::string summary() const;
};

/// Copies archive arrays whose names and shapes match encoder parameters or
/// buffers. The decoder is never touched. A name match with a different
/// shape raises ImportError before anything is copied.
template <typename Real>
ImportReport import_encoder_weights(UNetModel<Real>& model, const std::filesystem::path& file);

template <typename Real>
ImportReport import_encoder_weights(UNetModel<Real>& model, const Archive& archive);

}  // namespace unetseg
