#include "unetseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "unetseg/config.hpp"
#include "unetseg/dataset.hpp"
#include "unetseg/error.hpp"
#include "unetseg/log.hpp"
#include "unetseg/png_io.hpp"
#include "unetseg/svg.hpp"
#include "unetseg/synth.hpp"
#include "unetseg/trainer.hpp"

namespace unetseg::cli {

namespace {

namespace fs = std::filesystem;

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
  bool dump = false;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", file, "key=value run configuration file");
    cmd.add_option("--set", overrides, "override one key (key=value), repeatable");
    cmd.add_flag("--dump-config", dump, "print the resolved configuration and exit");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!file.empty()) cfg.merge_file(file);
    cfg.merge_environment();
    for (const auto& o : overrides) cfg.merge_assignment(o);
    return cfg;
  }
};

fs::path image_dir(const fs::path& dir) {
  return fs::is_directory(dir / "images") ? dir / "images" : dir;
}

std::vector<std::pair<std::string, fs::path>> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.emplace_back(entry.path().stem().string(), entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no PNG images in " + dir.string());
  return files;
}

void write_lr_outputs(const LrCurve& curve, const fs::path& csv, const std::optional<fs::path>& svg,
                      const std::string& title) {
  write_lr_curve_csv(curve, csv);
  if (!svg) return;
  Series raw{"raw loss", {}}, smooth{"smoothed loss", {}};
  for (const auto& r : curve.records) {
    raw.points.emplace_back(r.lr, r.raw_loss);
    smooth.points.emplace_back(r.lr, r.smoothed_loss);
  }
  write_line_chart({raw, smooth}, {title, "learning rate", "loss", true}, *svg);
}

void write_loss_chart(const std::vector<EpochRecord>& history, const fs::path& svg) {
  Series train{"train loss", {}}, val{"validation loss", {}}, dice{"validation dice", {}};
  for (const auto& r : history) {
    train.points.emplace_back(static_cast<double>(r.epoch), r.train_loss);
    val.points.emplace_back(static_cast<double>(r.epoch), r.val_loss);
    dice.points.emplace_back(static_cast<double>(r.epoch), r.val_dice);
  }
  write_line_chart({train, val, dice}, {"Training history", "epoch", "loss / dice", false}, svg);
}

FoldSplit resolve_split(const RunConfig& cfg, const std::vector<std::string>& ids) {
  if (auto file = cfg.optional_text("data.split_file")) return read_split_csv(*file);
  return kfold_split(ids, cfg.integer("data.folds"), cfg.integer("data.split_seed"));
}

int cmd_synth(std::ostream& out, const SynthOptions& o, const std::string& dir, bool force) {
  o.validate();
  const std::size_t size = o.size;
  const fs::path root(dir);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw ConfigError("output directory " + root.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(root / "images");
    fs::remove_all(root / "masks");
  }
  const auto ids = synth_generate(root, o);
  double area = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    area += static_cast<double>(synth_sample(i, o).mask.count()) / static_cast<double>(size * size);
  }
  out << "wrote " << ids.size() << " image/mask pairs (" << size << "x" << size << ", seed " << o.seed << ") to "
      << root.string() << "; mean lesion area " << fixed(100.0 * area / static_cast<double>(ids.size()), 1)
      << "%\n";
  return 0;
}

int cmd_lr_find(std::ostream& out, const RunConfig& cfg, std::optional<std::size_t> fold, std::size_t phase,
                std::optional<std::size_t> size_flag, const std::string& csv, const std::string& svg) {
  const TrainSpec spec = cfg.train_spec();
  if (phase != 1 && phase != 2) throw ConfigError("--phase must be 1 or 2");
  const std::size_t size = size_flag.value_or(spec.sizes.front());
  TrainSpec checked = spec;
  checked.sizes = {size};
  checked.validate();

  const fs::path root = cfg.text("data.root");
  std::vector<std::string> ids = list_image_ids(root);
  if (!cfg.optional_text("data.val_root")) {
    const FoldSplit split = resolve_split(cfg, ids);
    const std::size_t f = fold.value_or(0);
    if (f >= split.k) throw ConfigError("--fold " + std::to_string(f) + " out of range for k=" + std::to_string(split.k));
    ids = split.training_ids(f);
  }
  const auto data = load_dataset(root, ids, LoadOptions{size, spec.color_balance});
  auto model = UNetModel<float>::build(spec.model, spec.seed);
  if (spec.encoder_weights) out << import_encoder_weights(*model, *spec.encoder_weights).summary() << "\n";
  model->set_trainable(phase == 1 ? nn::FreezePolicy::freeze_first_group
                                  : nn::FreezePolicy::unfreeze_all_except_batchnorm);
  AdamState<float> optimizer(model->registry().parameters(), spec.hyper.adam);
  HyperParams hyper = spec.hyper;
  hyper.seed = spec.seed;
  const LrCurve curve = lr_range_test(*model, data, optimizer, hyper, phase);
  write_lr_outputs(curve, csv, svg.empty() ? std::nullopt : std::optional<fs::path>(svg),
                   "Learning rate range test (phase " + std::to_string(phase) + ")");
  out << "recorded " << curve.records.size() << " iterations to " << csv << "\n";
  const double lr = pick_lr(read_lr_curve_csv(csv));
  out << "picked lr: " << general(lr) << "\n";
  return 0;
}

int cmd_train(std::ostream& out, RunConfig cfg, std::optional<std::size_t> fold, bool all_folds, bool progressive,
              const std::string& out_dir) {
  if (!out_dir.empty()) cfg.set("output.dir", out_dir);
  TrainSpec spec = cfg.train_spec();
  if (!progressive) spec.sizes = {spec.sizes.back()};
  const fs::path run_dir = cfg.text("output.dir");
  const fs::path root = cfg.text("data.root");
  const auto samples = load_dataset(root);
  fs::create_directories(run_dir);
  {
    std::ofstream dump(run_dir / "config.txt");
    dump << cfg.dump();
    if (!dump) throw IoError("cannot write " + (run_dir / "config.txt").string());
  }

  auto progress = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " phase " << r.phase << " lr_max " << general(r.lr_max) << " train_loss "
        << fixed(r.train_loss) << " val_loss " << fixed(r.val_loss) << " val_dice " << fixed(r.val_dice)
        << " val_jaccard " << fixed(r.val_jaccard) << "\n";
    out.flush();
  };

  auto finish = [&](TrainOutcome<float>& outcome, const fs::path& dir, const std::string& label) {
    fs::create_directories(dir);
    const fs::path ckpt = dir / "checkpoint.ckpt";
    save_checkpoint(*outcome.checkpoint.model, outcome.checkpoint.manifest, ckpt);
    write_history_csv(outcome.history, dir / "history.csv");
    write_loss_chart(outcome.history, dir / "loss.svg");
    for (std::size_t i = 0; i < outcome.phases.size(); ++i) {
      const auto& p = outcome.phases[i];
      if (p.curve.records.empty()) continue;
      const std::string stem = "lr_phase" + std::to_string(p.phase);
      write_lr_outputs(p.curve, dir / (stem + ".csv"), dir / (stem + ".svg"),
                       "Learning rate range test (phase " + std::to_string(p.phase) + ", size " +
                           std::to_string(outcome.phase_sizes[i]) + ")");
    }
    const auto& m = outcome.checkpoint.manifest;
    out << label << ": best epoch " << m.epoch << " (phase " << m.phase << ") val_dice " << fixed(m.val_dice)
        << " val_jaccard " << fixed(m.val_jaccard) << " -> " << ckpt.string() << "\n";
  };

  if (auto val_root = cfg.optional_text("data.val_root")) {
    if (fold || all_folds) throw ConfigError("--fold/--all-folds need folds; unset data.val_root");
    const auto validation = load_dataset(*val_root);
    auto outcome = progressive_train<float>(samples, validation, spec, std::nullopt, progress);
    finish(outcome, run_dir / "full", "full");
    return 0;
  }

  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const FoldSplit split = resolve_split(cfg, ids);
  write_split_csv(split, run_dir / "split.csv");
  std::vector<std::size_t> folds;
  if (all_folds) {
    for (std::size_t f = 0; f < split.k; ++f) folds.push_back(f);
  } else {
    folds.push_back(fold.value_or(0));
  }
  for (std::size_t f : folds) {
    if (f >= split.k) throw ConfigError("--fold " + std::to_string(f) + " out of range for k=" + std::to_string(split.k));
    out << "fold " << f << ": " << split.training_ids(f).size() << " training, " << split.fold_size(f)
        << " validation images\n";
    auto outcome = train_fold<float>(f, split, samples, spec, progress);
    finish(outcome, run_dir / ("fold" + std::to_string(f)), "fold " + std::to_string(f));
  }
  return 0;
}

int cmd_predict(std::ostream& out, const std::string& checkpoint, const std::string& ensemble,
                const std::string& images, const std::string& out_dir, double threshold, const std::string& prob_dir,
                bool native) {
  if (checkpoint.empty() == ensemble.empty()) throw ConfigError("pass exactly one of --checkpoint and --ensemble");
  EnsembleSpec spec;
  spec.threshold = threshold;
  spec.native = native;
  if (!checkpoint.empty()) {
    spec.members.emplace_back(checkpoint);
  } else {
    std::stringstream list(ensemble);
    std::string item;
    while (std::getline(list, item, ',')) {
      if (!item.empty()) spec.members.emplace_back(item);
    }
  }
  auto model = Ensemble<float>::load(spec);
  const auto files = list_pngs(image_dir(images));
  for (const auto& [id, path] : files) {
    const auto [prob, mask] = model.predict(read_png_rgb(path));
    write_png_mask(mask, fs::path(out_dir) / (id + ".png"));
    if (!prob_dir.empty()) write_png_probability(prob, fs::path(prob_dir) / (id + ".png"));
  }
  out << "wrote " << files.size() << " masks to " << out_dir << " (" << model.size() << " member"
      << (model.size() == 1 ? "" : "s") << ", threshold " << general(threshold) << ")\n";
  return 0;
}

int cmd_evaluate(std::ostream& out, const std::string& pred, const std::string& truth, double cut,
                 const std::string& report, std::string summary) {
  if (!(cut >= 0.0 && cut <= 1.0)) throw ConfigError("--cut must lie in [0, 1]");
  const MetricReport r = evaluate(fs::path(pred), fs::path(truth), cut);
  if (summary.empty()) {
    fs::path p(report);
    summary = (p.parent_path() / (p.stem().string() + "_summary.csv")).string();
  }
  write_report(r, report, summary);
  out << "images=" << r.per_image.size() << " jaccard=" << fixed(r.dataset_jaccard)
      << " threshold_jaccard=" << fixed(r.dataset_threshold_jaccard) << " dice=" << fixed(r.dataset_dice)
      << " cut=" << general(cut) << "\n";
  return 0;
}

int cmd_schedule(std::ostream& out, const ScheduleSpec& spec, const std::string& csv, const std::string& svg) {
  spec.validate();
  Series series{"learning rate", {}};
  {
    if (fs::path(csv).has_parent_path()) fs::create_directories(fs::path(csv).parent_path());
    std::ofstream file(csv);
    if (!file) throw IoError("cannot write " + csv);
    file.precision(17);
    file << "iteration,lr\n";
    for (std::size_t t = 0; t <= spec.total_iterations; ++t) {
      const double lr = scheduled_lr(t, spec);
      file << t << ',' << lr << '\n';
      series.points.emplace_back(static_cast<double>(t), lr);
    }
    if (!file) throw IoError("failed writing " + csv);
  }
  if (!svg.empty()) write_line_chart({series}, {"Slanted triangular schedule", "iteration", "learning rate", false}, svg);
  out << "wrote " << spec.total_iterations + 1 << " schedule points to " << csv << " (peak at iteration "
      << spec.cut() << ")\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"U-Net lesion segmentation: synthetic data, learning-rate finding, training, prediction and evaluation"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "print progress details");

  ConfigArgs synth_cfg;
  std::optional<std::size_t> synth_n, synth_size;
  std::optional<std::uint64_t> synth_seed;
  std::optional<double> synth_hair;
  std::string synth_out;
  bool synth_force = false;
  auto* synth = app.add_subcommand("synth", "generate a synthetic lesion dataset");
  synth_cfg.attach(*synth);
  synth->add_option("--n", synth_n, "number of image/mask pairs (synth.count)");
  synth->add_option("--size", synth_size, "image side in pixels (synth.size)");
  synth->add_option("--seed", synth_seed, "generator seed (synth.seed)");
  synth->add_option("--hair-prob", synth_hair, "probability of hair strokes per image (synth.hair_probability)");
  synth->add_option("--out", synth_out, "output dataset directory (default: data.root)");
  synth->add_flag("--force", synth_force, "overwrite a non-empty output directory");

  ConfigArgs lr_cfg;
  std::optional<std::size_t> lr_fold, lr_size;
  std::size_t lr_phase = 1;
  std::string lr_csv, lr_svg;
  auto* lr_find = app.add_subcommand("lr-find", "run the learning-rate range test");
  lr_cfg.attach(*lr_find);
  lr_find->add_option("--fold", lr_fold, "fold whose training part is used");
  lr_find->add_option("--phase", lr_phase, "1: first group frozen, 2: all but batch norm trainable");
  lr_find->add_option("--size", lr_size, "image size (default: first of train.sizes)");
  lr_find->add_option("--out", lr_csv, "curve CSV");
  lr_find->add_option("--svg", lr_svg, "curve chart");

  ConfigArgs train_cfg;
  std::optional<std::size_t> train_fold_index;
  bool all_folds = false, progressive = false;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train one fold or all folds");
  train_cfg.attach(*train);
  auto* fold_opt = train->add_option("--fold", train_fold_index, "fold to train");
  train->add_flag("--all-folds", all_folds, "train every fold")->excludes(fold_opt);
  train->add_flag("--progressive", progressive, "train at every size in train.sizes in turn");
  train->add_option("--out", train_out, "run directory (overrides output.dir)");

  std::string pred_ckpt, pred_ensemble, pred_images, pred_out, pred_prob;
  double pred_threshold = 0.5;
  bool pred_native = false;
  auto* predict = app.add_subcommand("predict", "write binary masks for a directory of images");
  auto* ckpt_opt = predict->add_option("--checkpoint", pred_ckpt, "single model checkpoint");
  predict->add_option("--ensemble", pred_ensemble, "comma-separated checkpoints")->excludes(ckpt_opt);
  predict->add_option("--images", pred_images, "image directory or dataset root")->required();
  predict->add_option("--out", pred_out, "mask output directory")->required();
  predict->add_option("--threshold", pred_threshold, "probability threshold (ties go to the lesion)");
  predict->add_option("--prob-out", pred_prob, "also write 16-bit probability maps here");
  predict->add_flag("--native", pred_native, "do not resize images to the training size");

  std::string eval_pred, eval_truth, eval_out, eval_summary;
  double eval_cut = 0.65;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score predicted masks against ground truth");
  evaluate_cmd->add_option("--pred", eval_pred, "predicted mask directory")->required();
  evaluate_cmd->add_option("--truth", eval_truth, "ground-truth mask directory or dataset root")->required();
  evaluate_cmd->add_option("--cut", eval_cut, "threshold Jaccard cut");
  evaluate_cmd->add_option("--out", eval_out, "per-image report CSV")->required();
  evaluate_cmd->add_option("--summary", eval_summary, "summary CSV (default: <out>_summary.csv)");

  ScheduleSpec sched;
  sched.total_iterations = 1000;
  sched.lr_max = 0.01;
  std::string sched_csv, sched_svg;
  auto* schedule = app.add_subcommand("schedule", "tabulate the slanted triangular learning-rate schedule");
  schedule->add_option("--iterations", sched.total_iterations, "total iterations T");
  schedule->add_option("--lr-max", sched.lr_max, "peak learning rate");
  schedule->add_option("--cut-frac", sched.cut_frac, "fraction of iterations spent warming up");
  schedule->add_option("--ratio", sched.ratio, "peak to floor ratio");
  schedule->add_option("--out", sched_csv, "schedule CSV")->required();
  schedule->add_option("--svg", sched_svg, "schedule chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::config);
  }

  log::set_verbose(verbose);
  try {
    if (synth->parsed()) {
      RunConfig cfg = synth_cfg.resolve();
      if (synth_n) cfg.set("synth.count", std::to_string(*synth_n));
      if (synth_size) cfg.set("synth.size", std::to_string(*synth_size));
      if (synth_seed) cfg.set("synth.seed", std::to_string(*synth_seed));
      if (synth_hair) cfg.set("synth.hair_probability", general(*synth_hair));
      if (!synth_out.empty()) cfg.set("data.root", synth_out);
      if (synth_cfg.dump) {
        out << cfg.dump();
        return 0;
      }
      return cmd_synth(out, cfg.synth(), cfg.text("data.root"), synth_force);
    }
    if (lr_find->parsed()) {
      const RunConfig cfg = lr_cfg.resolve();
      if (lr_cfg.dump) {
        out << cfg.dump();
        return 0;
      }
      if (lr_csv.empty()) throw ConfigError("lr-find needs --out");
      return cmd_lr_find(out, cfg, lr_fold, lr_phase, lr_size, lr_csv, lr_svg);
    }
    if (train->parsed()) {
      RunConfig cfg = train_cfg.resolve();
      if (!train_out.empty()) cfg.set("output.dir", train_out);
      if (train_cfg.dump) {
        out << cfg.dump();
        return 0;
      }
      return cmd_train(out, cfg, train_fold_index, all_folds, progressive, "");
    }
    if (predict->parsed()) {
      return cmd_predict(out, pred_ckpt, pred_ensemble, pred_images, pred_out, pred_threshold, pred_prob, pred_native);
    }
    if (evaluate_cmd->parsed()) return cmd_evaluate(out, eval_pred, eval_truth, eval_cut, eval_out, eval_summary);
    if (schedule->parsed()) return cmd_schedule(out, sched, sched_csv, sched_svg);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::io);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace unetseg::cli
