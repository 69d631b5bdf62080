#include "unetseg/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "unetseg/error.hpp"

namespace unetseg {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& RunConfig::defaults() {
  static const std::vector<std::pair<std::string, std::string>> table{
      {"model.preset", "desk"},
      {"model.stem_channels", ""},
      {"model.stage_channels", ""},
      {"model.decoder_channels", ""},
      {"model.stage_blocks", ""},
      {"data.root", "data"},
      {"data.val_root", ""},
      {"data.color_balance", "false"},
      {"data.folds", "3"},
      {"data.split_seed", "0"},
      {"data.split_file", ""},
      {"synth.count", "250"},
      {"synth.size", "32"},
      {"synth.seed", "0"},
      {"synth.hair_probability", "0.3"},
      {"train.sizes", "32"},
      {"train.epochs", "30"},
      {"train.batch_size", "8"},
      {"train.loss", "bce"},
      {"train.lr", "auto"},
      {"train.seed", "0"},
      {"train.threshold", "0.5"},
      {"train.encoder_weights", ""},
      {"schedule.kind", "stlr"},
      {"schedule.cut_frac", "0.1"},
      {"schedule.ratio", "32"},
      {"lr_find.start", "1e-05"},
      {"lr_find.end", "0.1"},
      {"lr_find.iters", "100"},
      {"lr_find.spacing", "linear"},
      {"augment.dihedral", "true"},
      {"augment.rotation", "true"},
      {"augment.zoom", "true"},
      {"augment.lighting", "true"},
      {"augment.max_rotation", "44"},
      {"augment.max_zoom", "1.05"},
      {"augment.brightness", "0.05"},
      {"augment.contrast", "0.05"},
      {"output.dir", "runs"},
  };
  return table;
}

RunConfig::RunConfig() : values_(defaults()) {}

bool RunConfig::is_key(std::string_view key) {
  const auto& d = defaults();
  return std::any_of(d.begin(), d.end(), [&](const auto& kv) { return kv.first == key; });
}

std::string RunConfig::env_name(std::string_view key) {
  std::string name = "UNETSEG_";
  for (char c : key) name += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

void RunConfig::set(std::string_view key, std::string value) {
  for (auto& [k, v] : values_) {
    if (k == key) {
      v = trim(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

const std::string& RunConfig::get(std::string_view key) const {
  for (const auto& [k, v] : values_) {
    if (k == key) return v;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::merge_text(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (!is_key(key)) throw ConfigError(source + ":" + std::to_string(number) + ": unknown config key '" + key + "'");
    set(key, body.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  merge_text(buffer.str(), path.string());
}

void RunConfig::merge_environment(const std::function<std::optional<std::string>(const std::string&)>& lookup) {
  for (const auto& [key, value] : defaults()) {
    if (auto v = lookup(env_name(key))) set(key, *v);
  }
}

void RunConfig::merge_environment() {
  merge_environment([](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  });
}

void RunConfig::merge_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (!is_key(key)) throw ConfigError("unknown config key '" + key + "'");
  set(key, std::string(assignment.substr(eq + 1)));
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

double RunConfig::real(std::string_view key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string(key) + ": expected a number, got '" + v + "'");
}

std::uint64_t RunConfig::integer(std::string_view key) const {
  const std::string& v = get(key);
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(std::string(key) + ": integer out of range '" + v + "'");
  }
}

bool RunConfig::flag(std::string_view key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::sizes(std::string_view key) const {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream in(get(key));
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError(std::string(key) + ": expected a comma-separated list of sizes, got '" + get(key) + "'");
    }
    out.push_back(std::stoul(item));
  }
  if (out.empty()) throw ConfigError(std::string(key) + ": list is empty");
  return out;
}

std::optional<std::string> RunConfig::optional_text(std::string_view key) const {
  const std::string& v = get(key);
  if (v.empty()) return std::nullopt;
  return v;
}

ModelConfig RunConfig::model() const {
  std::vector<std::pair<std::string, std::string>> entries{{"preset", get("model.preset")}};
  for (const char* field : {"stem_channels", "stage_channels", "decoder_channels", "stage_blocks"}) {
    if (auto v = optional_text(std::string("model.") + field)) entries.emplace_back(field, *v);
  }
  return ModelConfig::from_entries(entries);
}

HyperParams RunConfig::hyper() const {
  HyperParams h;
  h.batch_size = integer("train.batch_size");
  h.epochs_per_phase = integer("train.epochs");
  h.loss = parse_loss_kind(get("train.loss"));
  if (get("train.lr") != "auto") h.fixed_lr = real("train.lr");
  h.threshold = real("train.threshold");
  h.seed = integer("train.seed");
  h.schedule = parse_schedule_kind(get("schedule.kind"));
  h.cut_frac = real("schedule.cut_frac");
  h.ratio = real("schedule.ratio");
  h.lr_range.lr_start = real("lr_find.start");
  h.lr_range.lr_end = real("lr_find.end");
  h.lr_range.num_iters = integer("lr_find.iters");
  h.lr_range.spacing = parse_lr_spacing(get("lr_find.spacing"));
  h.augment.dihedral = flag("augment.dihedral");
  h.augment.rotation = flag("augment.rotation");
  h.augment.zoom = flag("augment.zoom");
  h.augment.lighting = flag("augment.lighting");
  h.augment.max_rotation_deg = real("augment.max_rotation");
  h.augment.max_zoom = real("augment.max_zoom");
  h.augment.max_brightness = real("augment.brightness");
  h.augment.max_contrast = real("augment.contrast");
  h.validate();
  return h;
}

TrainSpec RunConfig::train_spec() const {
  TrainSpec spec;
  spec.model = model();
  spec.hyper = hyper();
  spec.sizes = sizes("train.sizes");
  spec.color_balance = flag("data.color_balance");
  spec.seed = integer("train.seed");
  if (auto w = optional_text("train.encoder_weights")) spec.encoder_weights = *w;
  spec.validate();
  return spec;
}

SynthOptions RunConfig::synth() const {
  SynthOptions o;
  o.count = integer("synth.count");
  o.size = integer("synth.size");
  o.seed = integer("synth.seed");
  o.hair_probability = real("synth.hair_probability");
  o.validate();
  return o;
}

}  // namespace unetseg
