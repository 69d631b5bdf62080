// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; the exit code is non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "unetseg/dataset.hpp"
#include "unetseg/error.hpp"
#include "unetseg/grad_check.hpp"
#include "unetseg/log.hpp"
#include "unetseg/losses.hpp"
#include "unetseg/metrics.hpp"
#include "unetseg/ops.hpp"
#include "unetseg/png_io.hpp"
#include "unetseg/schedule.hpp"
#include "unetseg/synth.hpp"
#include "unetseg/trainer.hpp"

using namespace unetseg;
using unetseg::testing::random_tensor;
using unetseg::testing::TempDir;
using unetseg::testing::weighted_sum;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* format, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, format, a);
  return buf;
}

// Shared workspace and datasets, built on first use.

TempDir& workspace() {
  static TempDir dir("acceptance");
  return dir;
}

constexpr std::size_t kTrain = 250;
constexpr std::size_t kVal = 50;
constexpr std::uint64_t kDataSeed = 7;
constexpr std::uint64_t kModelSeed = 1;

struct DataSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

DataSplit make_data(std::size_t size) {
  SynthOptions o;
  o.count = kTrain + kVal;
  o.size = size;
  o.seed = kDataSeed;
  const fs::path root = workspace() / ("synth" + std::to_string(size));
  const auto ids = synth_generate(root, o);
  auto all = load_dataset(root, ids, LoadOptions{});
  DataSplit d;
  d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + kTrain));
  d.val.assign(std::make_move_iterator(all.begin() + kTrain), std::make_move_iterator(all.end()));
  return d;
}

const DataSplit& data32() {
  static const DataSplit d = make_data(32);
  return d;
}

const DataSplit& data64() {
  static const DataSplit d = make_data(64);
  return d;
}

TrainSpec desk_spec(std::vector<std::size_t> sizes) {
  TrainSpec spec;
  spec.model = ModelConfig::desk();
  spec.sizes = std::move(sizes);
  spec.seed = kModelSeed;
  return spec;
}

fs::path save(TrainOutcome<float>& outcome, const std::string& name) {
  const fs::path path = workspace() / (name + ".ckpt");
  save_checkpoint(*outcome.checkpoint.model, outcome.checkpoint.manifest, path);
  return path;
}

MetricReport score(const std::vector<fs::path>& members, const std::vector<Sample>& samples) {
  EnsembleSpec spec;
  spec.members = members;
  auto ensemble = Ensemble<float>::load(spec);
  return evaluate(ensemble, samples, 0.65);
}

struct Run {
  std::vector<EpochRecord> history;
  MetricReport report;
  double seconds = 0.0;
};

Run train_desk32(const std::string& name) {
  const auto start = std::chrono::steady_clock::now();
  auto outcome = progressive_train<float>(data32().train, data32().val, desk_spec({32}));
  Run r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.history = outcome.history;
  r.report = score({save(outcome, name)}, data32().val);
  return r;
}

const Run& first_desk_run() {
  static const Run r = train_desk32("desk32_a");
  return r;
}

// 1. Gradient correctness.

Verdict criterion_gradients() {
  constexpr int kSeeds = 20;
  Verdict v;
  std::map<std::string, double> worst;
  std::size_t inconclusive = 0, checked = 0;
  auto record = [&](const std::string& name, const GradCheckReport& r, double tol) {
    worst[name] = std::max(worst[name], r.max_error);
    inconclusive += r.inconclusive;
    checked += r.coordinates;
    if (!r.passed || !(r.max_error < tol)) {
      v.pass = false;
      v.detail += " " + name + ":" + r.summary();
    }
  };
  GradCheckOptions strict;
  GradCheckOptions bn_train;
  bn_train.tolerance = 1e-3;

  for (int s = 0; s < kSeeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    auto a = random_tensor(Shape{2, 3, 4, 4}, seed);
    auto b = random_tensor(Shape{2, 3, 4, 4}, seed + 100);
    auto bias = random_tensor(Shape{3}, seed + 200);
    auto ws = [&](const Tensor<double>& t) { return weighted_sum(t, seed); };
    record("add", grad_check([&](const auto& in) { return ws(ops::add(in[0], in[1])); }, {a, b}, strict), 1e-4);
    record("add_bcast", grad_check([&](const auto& in) { return ws(ops::add(in[0], in[1])); }, {a, bias}, strict),
           1e-4);
    record("mul", grad_check([&](const auto& in) { return ws(ops::mul(in[0], in[1])); }, {a, b}, strict), 1e-4);
    record("sum", grad_check([&](const auto& in) { return ops::sum(ops::mul(in[0], in[0])); }, {a}, strict), 1e-4);
    record("relu", grad_check([&](const auto& in) { return ws(ops::relu(in[0])); }, {a}, strict), 1e-4);
    record("sigmoid", grad_check([&](const auto& in) { return ws(ops::sigmoid(in[0])); }, {a}, strict), 1e-4);

    auto x = random_tensor(Shape{2, 3, 5, 5}, seed + 1);
    auto w = random_tensor(Shape{4, 3, 3, 3}, seed + 2);
    auto cb = random_tensor(Shape{4}, seed + 3);
    record("conv2d", grad_check([&](const auto& in) { return ws(ops::conv2d(in[0], in[1], in[2], {1, 1})); },
                                {x, w, cb}, strict),
           1e-4);
    auto w1 = random_tensor(Shape{3, 3, 1, 1}, seed + 4);
    record("conv2d_strided",
           grad_check([&](const auto& in) { return ws(ops::conv2d(in[0], in[1], Tensor<double>(), {2, 0})); },
                      {x, w1}, strict),
           1e-4);

    auto p = random_tensor(Shape{1, 2, 4, 4}, seed + 5);
    record("max_pool2d", grad_check([&](const auto& in) { return ws(ops::max_pool2d(in[0], 2)); }, {p}, strict),
           1e-4);
    record("upsample", grad_check([&](const auto& in) { return ws(ops::upsample_nearest2x(in[0])); }, {p}, strict),
           1e-4);
    auto q = random_tensor(Shape{1, 1, 4, 4}, seed + 6);
    record("concat", grad_check([&](const auto& in) { return ws(ops::concat_channels(in[0], in[1])); }, {p, q},
                                strict),
           1e-4);

    auto bx = random_tensor(Shape{4, 2, 3, 3}, seed + 7, -2, 2);
    auto gamma = random_tensor(Shape{2}, seed + 8, 0.5, 1.5);
    auto beta = random_tensor(Shape{2}, seed + 9);
    ops::BatchNormState<double> state(2);
    record("batch_norm_train",
           grad_check(
               [&](const auto& in) {
                 return ws(ops::batch_norm2d(in[0], in[1], in[2], state, ops::BatchNormMode::train));
               },
               {bx, gamma, beta}, bn_train),
           1e-3);
    record("batch_norm_eval",
           grad_check(
               [&](const auto& in) {
                 return ws(ops::batch_norm2d(in[0], in[1], in[2], state, ops::BatchNormMode::eval));
               },
               {bx, gamma, beta}, strict),
           1e-4);

    auto z = random_tensor(Shape{2, 1, 4, 4}, seed + 10, -4, 4);
    Tensor<double> t(Shape{2, 1, 4, 4});
    for (std::size_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] = (i * 5 + seed) % 3 == 0;
    record("bce_with_logits", grad_check([&](const auto& in) { return bce_with_logits(in[0], t); }, {z}, strict),
           1e-4);
    record("soft_jaccard", grad_check([&](const auto& in) { return soft_jaccard_loss(in[0], t); }, {z}, strict),
           1e-4);

    // Full desk U-Net with BCE. Every parameter tensor and the input are
    // probed at a seeded sample of coordinates.
    auto model = UNetModel<double>::build(ModelConfig::desk(), seed);
    auto img = random_tensor(Shape{2, 3, 16, 16}, seed + 11, 0, 1);
    Tensor<double> target(Shape{2, 1, 16, 16});
    for (std::size_t i = 0; i < target.numel(); ++i) target.mutable_data()[i] = (i * 7 + seed) % 3 == 0;
    std::vector<Tensor<double>> inputs{img};
    for (const auto& param : model->registry().parameters()) inputs.push_back(param.value);
    GradCheckOptions net;
    net.max_coords_per_input = 2;
    net.scale_step = true;
    net.seed = seed;
    net.h = 1e-5;
    net.detect_kinks = true;
    record("unet_bce_eval",
           grad_check([&](const auto& in) { return bce_with_logits(model->forward(in[0], nn::Mode::eval), target); },
                      inputs, net),
           1e-4);
    // Batch statistics couple every pixel, so far more relu kinks sit near
    // any point; a shorter step keeps them outside the stencil.
    GradCheckOptions net_train = net;
    net_train.tolerance = 1e-3;
    net_train.h = 1e-7;
    record("unet_bce_train",
           grad_check([&](const auto& in) { return bce_with_logits(model->forward(in[0], nn::Mode::train), target); },
                      inputs, net_train),
           1e-3);
  }
  if (inconclusive * 10 > checked) {
    v.pass = false;
    v.detail += " too many inconclusive coordinates";
  }
  std::ostringstream s;
  s << kSeeds << " seeds, " << checked << " coordinates (" << inconclusive << " at kinks); worst:";
  for (const auto& [name, err] : worst) s << " " << name << "=" << fmt("%.1e", err);
  v.detail = s.str() + v.detail;
  return v;
}

// 2. Metrics against a counting oracle.

Verdict criterion_metrics() {
  std::mt19937_64 rng(2024);
  std::size_t both_empty = 0, mismatches = 0;
  std::vector<double> oracle_js;
  std::vector<double> lib_js;
  for (int n = 0; n < 1000; ++n) {
    const std::size_t h = 1 + rng() % 16, w = 1 + rng() % 16;
    const int mode = static_cast<int>(rng() % 5);
    const double density = std::uniform_real_distribution<double>(0, 1)(rng);
    Mask p(h, w), t(h, w);
    if (mode != 0) {
      for (auto& v : p.data) v = std::uniform_real_distribution<double>(0, 1)(rng) < density;
      for (auto& v : t.data) v = std::uniform_real_distribution<double>(0, 1)(rng) < density;
    }
    if (mode == 1) t = p;
    std::size_t inter = 0, uni = 0, np = 0, nt = 0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const bool a = p.at(y, x) != 0, b = t.at(y, x) != 0;
        inter += a && b;
        uni += a || b;
        np += a;
        nt += b;
      }
    }
    both_empty += uni == 0;
    const double oj = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    const double od = np + nt == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
    const double j = jaccard(p, t), d = dice(p, t);
    mismatches += (j != oj) + (d != od);
    oracle_js.push_back(oj);
    lib_js.push_back(j);
  }
  for (double cut : {0.0, 0.3, 0.65, 0.9, 1.0}) {
    double total = 0.0;
    for (double j : oracle_js) total += j >= cut ? j : 0.0;
    mismatches += threshold_jaccard(lib_js, cut) != total / static_cast<double>(oracle_js.size());
  }
  Verdict v;
  v.pass = mismatches == 0 && both_empty > 0;
  v.detail = "1000 pairs (" + std::to_string(both_empty) + " both empty), 5 cuts, " + std::to_string(mismatches) +
             " mismatches";
  return v;
}

// 3. Schedule identities.

Verdict criterion_schedule() {
  std::mt19937_64 rng(99);
  std::size_t failures = 0;
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    ScheduleSpec spec;
    spec.total_iterations = 2 + rng() % 5000;
    spec.cut_frac = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
    spec.ratio = std::uniform_real_distribution<double>(1.0, 100.0)(rng);
    spec.lr_max = std::exp(std::uniform_real_distribution<double>(std::log(1e-5), 0.0)(rng));
    const double lo = spec.lr_max / spec.ratio;
    const std::size_t T = spec.total_iterations;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
    const double e = std::max({rel(stlr(0, spec), lo), rel(stlr(spec.cut(), spec), spec.lr_max), rel(stlr(T, spec), lo)});
    worst = std::max(worst, e);
    failures += e > 1e-12;
    for (std::size_t t = 0; t <= T; ++t) {
      const double lr = stlr(t, spec);
      failures += !(lr >= lo * (1 - 1e-12) && lr <= spec.lr_max * (1 + 1e-12));
    }
  }
  Verdict v;
  v.pass = failures == 0;
  v.detail = "100 configs, worst endpoint relative error " + fmt("%.1e", worst) + ", " + std::to_string(failures) +
             " violations";
  return v;
}

// 4. LR picker.

Verdict criterion_pick_lr() {
  LrCurve curve;
  for (auto [lr, loss] : {std::pair{0.001, 1.0}, {0.01, 0.8}, {0.1, 0.2}, {1.0, 0.9}}) {
    curve.records.push_back({lr, loss, loss});
  }
  const double picked = pick_lr(curve);
  LrCurve rising;
  for (int i = 0; i < 6; ++i) {
    const double loss = 0.5 + 0.1 * i;
    rising.records.push_back({std::pow(10.0, -5 + i), loss, loss});
  }
  bool raised = false;
  std::string message;
  try {
    pick_lr(rising);
  } catch (const SelectionError& e) {
    raised = true;
    message = e.what();
  }
  Verdict v;
  v.pass = picked == 0.1 && raised;
  v.detail = "example curve -> " + fmt("%g", picked) + "; monotone curve -> " +
             (raised ? "SelectionError (" + message + ")" : "no error");
  return v;
}

// 5. End-to-end training at 32x32.

Verdict criterion_end_to_end() {
  const Run& r = first_desk_run();
  Verdict v;
  v.pass = r.history.size() == 60 && r.report.dataset_jaccard >= 0.80 && r.report.dataset_threshold_jaccard >= 0.75;
  v.detail = std::to_string(kTrain) + "/" + std::to_string(kVal) + " synthetic images, " +
             std::to_string(r.history.size()) + " epochs in " + fmt("%.0f s", r.seconds) +
             ": jaccard " + fmt("%.4f", r.report.dataset_jaccard) + " (>= 0.80), threshold jaccard " +
             fmt("%.4f", r.report.dataset_threshold_jaccard) + " (>= 0.75)";
  return v;
}

// 6. Progressive resizing.

Verdict criterion_progressive() {
  const auto start = std::chrono::steady_clock::now();
  auto only32 = progressive_train<float>(data64().train, data64().val, desk_spec({32}));
  auto progressive = progressive_train<float>(data64().train, data64().val, desk_spec({32, 64}));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double j32 = score({save(only32, "only32")}, data64().val).dataset_jaccard;
  const double jprog = score({save(progressive, "progressive")}, data64().val).dataset_jaccard;
  Verdict v;
  v.pass = jprog >= j32 - 0.05 && progressive.history.size() == 120;
  v.detail = "validation jaccard at 64 px: [32,64] " + fmt("%.4f", jprog) + " vs 32-only " + fmt("%.4f", j32) +
             " (margin 0.05), both runs " + fmt("%.0f s", seconds);
  return v;
}

// 7. Three-fold ensemble.

Verdict criterion_ensemble() {
  const auto& d = data32();
  std::vector<std::string> ids;
  for (const auto& s : d.train) ids.push_back(s.id);
  const FoldSplit split = kfold_split(ids, 3, 0);
  std::vector<fs::path> members;
  std::vector<double> singles;
  for (std::size_t f = 0; f < 3; ++f) {
    auto outcome = train_fold<float>(f, split, d.train, desk_spec({32}));
    members.push_back(save(outcome, "fold" + std::to_string(f)));
    singles.push_back(score({members.back()}, d.val).dataset_jaccard);
  }
  const double ens = score(members, d.val).dataset_jaccard;
  const double lowest = *std::min_element(singles.begin(), singles.end());
  Verdict v;
  v.pass = ens >= lowest;
  v.detail = "ensemble jaccard " + fmt("%.4f", ens) + " vs folds " + fmt("%.4f", singles[0]) + " " +
             fmt("%.4f", singles[1]) + " " + fmt("%.4f", singles[2]) + " (min " + fmt("%.4f", lowest) + ")";
  return v;
}

// 8. Fully convolutional contract.

Verdict criterion_fully_convolutional() {
  auto model = UNetModel<float>::build(ModelConfig::desk(), 3);
  Verdict v;
  std::ostringstream s;
  s << "downsampling factor " << ModelConfig::desk().downsampling_factor() << ";";
  std::mt19937_64 rng(5);
  for (std::size_t size : {32, 48, 64, 40, 50}) {
    Image img(3, size, size);
    for (auto& x : img.data) x = std::uniform_real_distribution<float>(0, 1)(rng);
    const Image out = predict(*model, img);
    bool ok = out.channels == 1 && out.height == size && out.width == size;
    for (float x : out.data) ok = ok && std::isfinite(x) && x >= 0.0f && x <= 1.0f;
    v.pass = v.pass && ok;
    s << " " << size << (ok ? " ok" : " FAILED");
  }
  Image wide(3, 40, 72);
  for (auto& x : wide.data) x = std::uniform_real_distribution<float>(0, 1)(rng);
  const Image out = predict(*model, wide);
  const bool ok = out.height == 40 && out.width == 72;
  v.pass = v.pass && ok;
  s << " 40x72" << (ok ? " ok" : " FAILED");
  v.detail = s.str();
  return v;
}

// 9. Serialization and reproducibility.

Verdict criterion_serialization() {
  Verdict v;
  std::ostringstream s;

  auto model = UNetModel<float>::build(ModelConfig::desk(), 4);
  auto batch = random_tensor<float>(Shape{2, 3, 32, 32}, 8, 0, 1);
  for (int i = 0; i < 3; ++i) model->forward(random_tensor<float>(Shape{4, 3, 32, 32}, 20 + i, 0, 1), nn::Mode::train);
  CheckpointManifest manifest;
  manifest.model = ModelConfig::desk();
  manifest.image_size = 32;
  const fs::path path = workspace() / "roundtrip.ckpt";
  save_checkpoint(*model, manifest, path);
  auto loaded = load_checkpoint<float>(path);
  const auto before = model->forward(batch, nn::Mode::eval);
  const auto after = loaded.model->forward(batch, nn::Mode::eval);
  const bool ckpt_ok = before.shape() == after.shape() &&
                       std::memcmp(before.data().data(), after.data().data(), before.numel() * sizeof(float)) == 0;
  s << "checkpoint forward " << (ckpt_ok ? "bit-identical" : "DIFFERS");

  std::mt19937_64 rng(11);
  bool png_ok = true;
  for (int n = 0; n < 50; ++n) {
    Mask m(1 + rng() % 64, 1 + rng() % 64);
    for (auto& x : m.data) x = rng() % 2;
    const fs::path p = workspace() / "mask.png";
    write_png_mask(m, p);
    const GrayPlane g = read_png_gray(p);
    png_ok = png_ok && g.height == m.height && g.width == m.width;
    for (std::size_t i = 0; png_ok && i < m.data.size(); ++i) png_ok = g.data[i] == m.data[i] * 255;
  }
  s << "; 50 mask PNGs " << (png_ok ? "bit-exact" : "DIFFER");

  const Run& a = first_desk_run();
  const Run b = train_desk32("desk32_b");
  double worst = a.history.size() == b.history.size() ? 0.0 : INFINITY;
  auto rel = [](double x, double y) {
    if (std::isnan(x) && std::isnan(y)) return 0.0;
    return std::abs(x - y) / std::max(1e-12, std::max(std::abs(x), std::abs(y)));
  };
  for (std::size_t i = 0; i < std::min(a.history.size(), b.history.size()); ++i) {
    const auto &x = a.history[i], &y = b.history[i];
    worst = std::max({worst, rel(x.lr_max, y.lr_max), rel(x.train_loss, y.train_loss), rel(x.val_loss, y.val_loss),
                      rel(x.val_dice, y.val_dice), rel(x.val_jaccard, y.val_jaccard)});
  }
  const bool runs_ok = worst <= 1e-6;
  s << "; two identical runs, max relative history difference " << fmt("%.1e", worst);
  v.pass = ckpt_ok && png_ok && runs_ok;
  v.detail = s.str();
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", criterion_gradients},
      {"metric oracle equivalence", criterion_metrics},
      {"schedule identities", criterion_schedule},
      {"lr picker", criterion_pick_lr},
      {"end-to-end desk training", criterion_end_to_end},
      {"progressive resizing", criterion_progressive},
      {"three-fold ensemble", criterion_ensemble},
      {"fully convolutional", criterion_fully_convolutional},
      {"serialization", criterion_serialization},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  log::set_verbose(false);

  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !v.pass;
    std::printf("%s criterion %zu (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                v.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
