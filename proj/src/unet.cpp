#include "unetseg/unet.hpp"

#include <charconv>
#include <sstream>

#include "unetseg/error.hpp"

namespace unetseg {
namespace {

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("model." + key + ": expected a non-negative integer, got '" + text + "'");
  }
  return value;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, item));
  return out;
}

double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("model." + key + ": expected a number, got '" + text + "'");
  }
}

}  // namespace

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.preset = "full";
  c.stem_channels = 64;
  c.stem_kernel = 7;
  c.stem_stride = 2;
  c.stage_blocks = {3, 4, 6, 3};
  c.stage_channels = {64, 128, 256, 512};
  c.decoder_channels = {256, 128, 64, 64};
  return c;
}

ModelConfig ModelConfig::from_preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw ConfigError("model.preset: unknown preset '" + std::string(name) + "' (desk|full)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (input_channels == 0) fail("input_channels", "must be positive");
  if (output_channels == 0) fail("output_channels", "must be positive");
  if (stem_channels == 0) fail("stem_channels", "must be positive");
  if (stem_kernel == 0 || stem_kernel % 2 == 0) fail("stem_kernel", "must be a positive odd number");
  if (stem_stride != 1 && stem_stride != 2) fail("stem_stride", "must be 1 or 2");
  if (stage_blocks.size() != 4) fail("stage_blocks", "needs exactly 4 entries");
  if (stage_channels.size() != 4) fail("stage_channels", "needs exactly 4 entries");
  if (decoder_channels.size() != 4) fail("decoder_channels", "needs exactly 4 entries");
  for (std::size_t b : stage_blocks) {
    if (b == 0) fail("stage_blocks", "every stage needs at least one block");
  }
  for (std::size_t c : stage_channels) {
    if (c == 0) fail("stage_channels", "must be positive");
  }
  for (std::size_t c : decoder_channels) {
    if (c == 0) fail("decoder_channels", "must be positive");
  }
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) fail("bn_momentum", "must lie in (0, 1]");
  if (!(bn_eps > 0.0)) fail("bn_eps", "must be positive");
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (std::size_t b : stage_blocks) n += b;
  return n;
}

std::size_t ModelConfig::downsampling_factor() const { return stem_stride * 2 * 8; }

std::vector<std::pair<std::string, std::string>> ModelConfig::to_entries() const {
  auto real = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {
      {"preset", preset},
      {"input_channels", std::to_string(input_channels)},
      {"output_channels", std::to_string(output_channels)},
      {"stem_channels", std::to_string(stem_channels)},
      {"stem_kernel", std::to_string(stem_kernel)},
      {"stem_stride", std::to_string(stem_stride)},
      {"stage_blocks", join(stage_blocks)},
      {"stage_channels", join(stage_channels)},
      {"decoder_channels", join(decoder_channels)},
      {"bn_momentum", real(bn_momentum)},
      {"bn_eps", real(bn_eps)},
  };
}

ModelConfig ModelConfig::from_entries(
    const std::vector<std::pair<std::string, std::string>>& entries) {
  ModelConfig c;
  for (const auto& [key, value] : entries) {
    if (key == "preset") c = from_preset(value);
  }
  for (const auto& [key, value] : entries) {
    if (key == "preset") continue;
    if (key == "input_channels") c.input_channels = parse_size(key, value);
    else if (key == "output_channels") c.output_channels = parse_size(key, value);
    else if (key == "stem_channels") c.stem_channels = parse_size(key, value);
    else if (key == "stem_kernel") c.stem_kernel = parse_size(key, value);
    else if (key == "stem_stride") c.stem_stride = parse_size(key, value);
    else if (key == "stage_blocks") c.stage_blocks = parse_list(key, value);
    else if (key == "stage_channels") c.stage_channels = parse_list(key, value);
    else if (key == "decoder_channels") c.decoder_channels = parse_list(key, value);
    else if (key == "bn_momentum") c.bn_momentum = parse_real(key, value);
    else if (key == "bn_eps") c.bn_eps = parse_real(key, value);
    else throw ConfigError("unknown model key 'model." + key + "'");
  }
  c.validate();
  return c;
}

template <typename Real>
std::unique_ptr<UNetModel<Real>> UNetModel<Real>::build(const ModelConfig& config,
                                                        std::uint64_t seed) {
  config.validate();
  return std::unique_ptr<UNetModel>(new UNetModel(config, seed));
}

template <typename Real>
UNetModel<Real>::UNetModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  nn::Rng rng(seed);
  const ops::BatchNormOptions bn{config.bn_momentum, config.bn_eps, true};

  stem_ = nn::ConvBnRelu<Real>(config.input_channels, config.stem_channels, config.stem_kernel,
                               config.stem_stride, rng, bn);
  std::size_t channels = config.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<nn::ResidualBlock<Real>> blocks;
    for (std::size_t b = 0; b < config.stage_blocks[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      blocks.emplace_back(channels, config.stage_channels[s], stride, rng, bn);
      channels = config.stage_channels[s];
    }
    stages_.push_back(std::move(blocks));
  }

  const std::size_t tap_channels[4] = {config.stage_channels[2], config.stage_channels[1],
                                       config.stage_channels[0], config.stem_channels};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t out = config.decoder_channels[i];
    DecoderStep step{nn::ConvBnRelu<Real>(channels + tap_channels[i], out, 3, 1, rng, bn),
                     nn::ConvBnRelu<Real>(out, out, 3, 1, rng, bn)};
    decoder_.push_back(std::move(step));
    channels = out;
  }
  head_ = nn::Conv2d<Real>(channels, config.output_channels, 1, 1, 0, true, rng);

  // Layers are in place now; register by address.
  const std::size_t g_stem = registry_.add_group("encoder_stem");
  const std::size_t g_body = registry_.add_group("encoder_body");
  const std::size_t g_decoder = registry_.add_group("decoder");
  stem_.register_in(registry_, "stem", g_stem);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].register_in(registry_,
                                "stages." + std::to_string(s) + "." + std::to_string(b),
                                s == 0 ? g_stem : g_body);
    }
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].first.register_in(registry_, "decoder." + std::to_string(i) + ".first", g_decoder);
    decoder_[i].second.register_in(registry_, "decoder." + std::to_string(i) + ".second", g_decoder);
  }
  head_.register_in(registry_, "head", g_decoder);
}

template <typename Real>
Tensor<Real> UNetModel<Real>::forward(const Tensor<Real>& batch, nn::Mode mode) {
  if (batch.rank() != 4 || batch.dim(1) != config_.input_channels) {
    throw ShapeError("unet: expected input N x " + std::to_string(config_.input_channels) +
                     " x H x W, got " + shape_string(batch.shape()));
  }
  const std::size_t factor = config_.downsampling_factor();
  for (std::size_t axis : {2u, 3u}) {
    if (batch.dim(axis) == 0 || batch.dim(axis) % factor != 0) {
      throw ShapeError("unet: input extent " + std::to_string(batch.dim(axis)) +
                       " is not a positive multiple of " + std::to_string(factor));
    }
  }

  Tensor<Real> taps[4];
  Tensor<Real> x = stem_.forward(batch, mode);
  taps[0] = x;
  x = ops::max_pool2d(x, 2);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s]) x = block.forward(x, mode);
    if (s < 3) taps[s + 1] = x;
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = ops::upsample_nearest2x(x);
    x = ops::concat_channels(x, taps[3 - i]);
    x = decoder_[i].first.forward(x, mode);
    x = decoder_[i].second.forward(x, mode);
  }
  if (config_.stem_stride == 2) x = ops::upsample_nearest2x(x);
  return head_.forward(x);
}

template <typename Real>
std::size_t UNetModel<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : registry_.parameters()) n += p.value.numel();
  return n;
}

template <typename Real>
typename UNetModel<Real>::Snapshot UNetModel<Real>::snapshot() const {
  Snapshot s;
  for (const auto& p : registry_.parameters()) s.emplace_back(p.value.data().begin(), p.value.data().end());
  for (const auto& b : registry_.buffers()) s.emplace_back(b.value.data().begin(), b.value.data().end());
  return s;
}

template <typename Real>
void UNetModel<Real>::restore(const Snapshot& snapshot) {
  auto& params = registry_.parameters();
  const auto& buffers = registry_.buffers();
  if (snapshot.size() != params.size() + buffers.size()) {
    throw ContractError("model snapshot has " + std::to_string(snapshot.size()) +
                        " arrays, model has " + std::to_string(params.size() + buffers.size()));
  }
  auto copy_into = [](const std::vector<Real>& src, Tensor<Real> dst) {
    if (src.size() != dst.numel()) throw ContractError("model snapshot size mismatch");
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  };
  for (std::size_t i = 0; i < params.size(); ++i) copy_into(snapshot[i], params[i].value);
  for (std::size_t i = 0; i < buffers.size(); ++i) copy_into(snapshot[params.size() + i], buffers[i].value);
}

template <typename Real>
std::vector<ArchiveEntry> UNetModel<Real>::export_arrays(DType dtype) const {
  std::vector<ArchiveEntry> out;
  auto push = [&](const std::string& name, const Tensor<Real>& t) {
    out.push_back(ArchiveEntry{name, dtype, t.shape(),
                               std::vector<double>(t.data().begin(), t.data().end())});
  };
  for (const auto& p : registry_.parameters()) push(p.name, p.value);
  for (const auto& b : registry_.buffers()) push(b.name, b.value);
  return out;
}

template <typename Real>
void UNetModel<Real>::load_arrays(const std::vector<ArchiveEntry>& arrays) {
  std::vector<std::pair<const ArchiveEntry*, Tensor<Real>>> plan;
  auto find = [&](const std::string& name, const Tensor<Real>& target) {
    for (const auto& e : arrays) {
      if (e.name != name) continue;
      if (e.shape != target.shape()) {
        throw LoadError("array " + name + " has shape " + shape_string(e.shape) +
                        ", model expects " + shape_string(target.shape()));
      }
      plan.emplace_back(&e, target);
      return;
    }
    throw LoadError("array " + name + " missing from archive");
  };
  for (const auto& p : registry_.parameters()) find(p.name, p.value);
  for (const auto& b : registry_.buffers()) find(b.name, b.value);
  for (auto& [entry, target] : plan) {
    auto dst = target.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(entry->values[i]);
  }
}

std::string ImportReport::summary() const {
  std::ostringstream os;
  os << "matched " << matched.size() << " encoder arrays; " << unmatched.size()
     << " archive arrays unmatched; " << missing.size() << " encoder arrays not provided";
  for (const auto& n : unmatched) os << "\n  unmatched: " << n;
  return os.str();
}

template <typename Real>
ImportReport import_encoder_weights(UNetModel<Real>& model, const Archive& archive) {
  struct Target {
    std::string name;
    Tensor<Real> tensor;
  };
  std::vector<Target> encoder;
  for (const auto& p : model.registry().parameters()) {
    if (model.is_encoder(p.group)) encoder.push_back({p.name, p.value});
  }
  for (const auto& b : model.registry().buffers()) {
    if (model.is_encoder(b.group)) encoder.push_back({b.name, b.value});
  }

  ImportReport report;
  std::vector<std::pair<const ArchiveEntry*, Tensor<Real>>> copies;
  for (const auto& entry : archive.arrays) {
    bool found = false;
    for (auto& target : encoder) {
      if (target.name != entry.name) continue;
      found = true;
      if (entry.shape != target.tensor.shape()) {
        throw ImportError("array " + entry.name + " has shape " + shape_string(entry.shape) +
                          " but the encoder expects " + shape_string(target.tensor.shape()));
      }
      copies.emplace_back(&entry, target.tensor);
      report.matched.push_back(entry.name);
    }
    if (!found) report.unmatched.push_back(entry.name);
  }
  for (const auto& target : encoder) {
    if (archive.find(target.name) == nullptr) report.missing.push_back(target.name);
  }
  for (auto& [entry, tensor] : copies) {
    auto dst = tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(entry->values[i]);
  }
  return report;
}

template <typename Real>
ImportReport import_encoder_weights(UNetModel<Real>& model, const std::filesystem::path& file) {
  return import_encoder_weights(model, read_archive(file));
}

template class UNetModel<float>;
template class UNetModel<double>;
template ImportReport import_encoder_weights(UNetModel<float>&, const Archive&);
template ImportReport import_encoder_weights(UNetModel<double>&, const Archive&);
template ImportReport import_encoder_weights(UNetModel<float>&, const std::filesystem::path&);
template ImportReport import_encoder_weights(UNetModel<double>&, const std::filesystem::path&);

}  // namespace unetseg
