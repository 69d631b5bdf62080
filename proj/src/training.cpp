#include "unetseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "unetseg/dataset.hpp"
#include "unetseg/error.hpp"
#include "unetseg/log.hpp"
#include "unetseg/metrics.hpp"
#include "unetseg/ops.hpp"

namespace unetseg {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return augmentation_seed(seed, "stream", a * 1000003u + b);
}

/// Augmented, shuffled mini-batches for one pass over the data.
std::vector<std::vector<Sample>> epoch_batches(const std::vector<Sample>& data, const HyperParams& hyper,
                                               std::uint64_t stream, std::uint64_t epoch) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(stream_seed(hyper.seed, stream, epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }
  const std::size_t bs = std::min(hyper.batch_size, data.size());
  const std::size_t count = data.size() / bs;
  std::vector<std::vector<Sample>> batches(count);
  const std::uint64_t aug_epoch = stream * 100000u + epoch;
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t i = 0; i < bs; ++i) {
      const Sample& s = data[order[b * bs + i]];
      batches[b].push_back(augment(s, hyper.augment, augmentation_seed(hyper.seed, s.id, aug_epoch)));
    }
  }
  return batches;
}

template <typename Real>
double train_step(UNetModel<Real>& model, const std::vector<Sample>& batch, AdamState<Real>& optimizer,
                  const HyperParams& hyper, double lr) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  auto [x, y] = make_batch<Real>(ptrs);
  model.registry().zero_grad();
  Tape<Real> tape;
  Tensor<Real> loss;
  {
    TapeScope<Real> scope(tape);
    loss = segmentation_loss(hyper.loss, model.forward(x, nn::Mode::train), y);
  }
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) return value;
  backward(tape, loss);
  adam_step(model.registry().parameters(), optimizer, lr);
  return value;
}

std::size_t iterations_per_epoch(std::size_t n, std::size_t batch_size) {
  return n / std::min(batch_size, n);
}

}  // namespace

void HyperParams::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (epochs_per_phase == 0) throw ConfigError("train.epochs must be positive");
  if (!(cut_frac > 0.0 && cut_frac < 1.0)) throw ConfigError("schedule.cut_frac must lie in (0, 1)");
  if (!(ratio > 1.0)) throw ConfigError("schedule.ratio must be > 1");
  if (fixed_lr && !(*fixed_lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("predict.threshold must lie in (0, 1]");
  try {
    lr_range.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("lr_find: ") + e.what());
  }
  augment.validate();
}

template <typename Real>
LrCurve lr_range_test(UNetModel<Real>& model, const std::vector<Sample>& data, const AdamState<Real>& optimizer,
                      const HyperParams& hyper, std::uint64_t stream) {
  if (data.empty()) throw ContractError("lr range test needs a non-empty dataset");
  const auto saved = model.snapshot();
  AdamState<Real> scratch = optimizer;
  std::vector<std::vector<Sample>> batches;
  std::size_t next = 0, pass = 0;
  LrCurve curve;
  try {
    curve = lr_range_test(
        [&](double lr) {
          if (next == batches.size()) {
            batches = epoch_batches(data, hyper, 1000 + stream, pass++);
            next = 0;
          }
          return train_step(model, batches[next++], scratch, hyper, lr);
        },
        hyper.lr_range);
  } catch (...) {
    model.restore(saved);
    model.registry().zero_grad();
    throw;
  }
  model.restore(saved);
  model.registry().zero_grad();
  return curve;
}

template <typename Real>
ValidationResult validate(UNetModel<Real>& model, const std::vector<Sample>& data, const HyperParams& hyper) {
  ValidationResult r;
  if (data.empty()) {
    r.loss = r.dice = r.jaccard = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  NoGradScope<Real> no_grad;
  const std::size_t bs = std::max<std::size_t>(hyper.batch_size, 1);
  double loss_sum = 0.0, dice_sum = 0.0, jaccard_sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += bs) {
    const std::size_t end = std::min(start + bs, data.size());
    std::vector<const Sample*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&data[i]);
    auto [x, y] = make_batch<Real>(ptrs);
    const Tensor<Real> logits = model.forward(x, nn::Mode::eval);
    loss_sum += static_cast<double>(segmentation_loss(hyper.loss, logits, y).item()) * static_cast<double>(end - start);
    const std::size_t plane = data[start].mask.data.size();
    for (std::size_t i = start; i < end; ++i) {
      Image prob(1, data[i].mask.height, data[i].mask.width);
      for (std::size_t p = 0; p < plane; ++p) {
        const double z = static_cast<double>(logits.at((i - start) * plane + p));
        prob.data[p] = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
      }
      const Mask pred = binarize(prob, hyper.threshold);
      dice_sum += dice(pred, data[i].mask);
      jaccard_sum += jaccard(pred, data[i].mask);
    }
  }
  const double n = static_cast<double>(data.size());
  r.loss = loss_sum / n;
  r.dice = dice_sum / n;
  r.jaccard = jaccard_sum / n;
  return r;
}

template <typename Real>
ProcedureResult<Real> run_training_procedure(UNetModel<Real>& model, const std::vector<Sample>& train,
                                             const std::vector<Sample>& validation, const HyperParams& hyper,
                                             const EpochCallback& on_epoch, std::size_t first_phase,
                                             std::size_t first_epoch) {
  hyper.validate();
  if (train.empty()) throw ContractError("training needs a non-empty training set");
  ProcedureResult<Real> result;
  double best_dice = -std::numeric_limits<double>::infinity();
  const std::size_t per_epoch = iterations_per_epoch(train.size(), hyper.batch_size);
  const nn::FreezePolicy policies[] = {nn::FreezePolicy::freeze_first_group,
                                       nn::FreezePolicy::unfreeze_all_except_batchnorm};
  std::size_t epoch = first_epoch;
  for (std::size_t p = 0; p < 2; ++p) {
    const std::size_t phase = first_phase + p;
    model.set_trainable(policies[p]);
    AdamState<Real> optimizer(model.registry().parameters(), hyper.adam);
    PhaseRecord record{phase, policies[p], 0.0, {}};
    if (hyper.fixed_lr) {
      record.lr_max = *hyper.fixed_lr;
    } else {
      record.curve = lr_range_test(model, train, optimizer, hyper, phase);
      record.lr_max = pick_lr(record.curve);
    }
    log::info("phase " + std::to_string(phase) + " (" + std::string(nn::to_string(policies[p])) +
              "): lr_max " + std::to_string(record.lr_max));

    ScheduleSpec spec;
    spec.kind = hyper.schedule;
    spec.total_iterations = hyper.epochs_per_phase * per_epoch;
    spec.cut_frac = hyper.cut_frac;
    spec.ratio = hyper.ratio;
    spec.lr_max = record.lr_max;
    std::size_t t = 0;
    for (std::size_t e = 0; e < hyper.epochs_per_phase; ++e, ++epoch) {
      double loss_sum = 0.0;
      std::size_t steps = 0;
      for (const auto& batch : epoch_batches(train, hyper, phase, e)) {
        const double lr = scheduled_lr(t, spec);
        const std::string where = "epoch " + std::to_string(epoch) + " (phase " + std::to_string(phase) +
                                  ", iteration " + std::to_string(t) + ", lr " + std::to_string(lr) + ")";
        double loss = 0.0;
        try {
          loss = train_step(model, batch, optimizer, hyper, lr);
        } catch (const TrainingError& e) {
          throw TrainingError(std::string(e.what()) + " in " + where);
        }
        if (!std::isfinite(loss)) throw TrainingError("non-finite loss in " + where);
        loss_sum += loss;
        ++steps;
        ++t;
      }
      const ValidationResult v = validate(model, validation, hyper);
      EpochRecord rec{epoch, phase, record.lr_max, loss_sum / static_cast<double>(steps), v.loss, v.dice, v.jaccard};
      result.history.push_back(rec);
      const bool last = p == 1 && e + 1 == hyper.epochs_per_phase;
      if (validation.empty() ? last : v.dice > best_dice) {
        best_dice = v.dice;
        result.best = model.snapshot();
        result.best_index = result.history.size() - 1;
      }
      if (on_epoch) on_epoch(rec);
    }
    result.phases.push_back(std::move(record));
  }
  model.restore(result.best);
  model.registry().zero_grad();
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,phase,lr_max,train_loss,val_loss,val_dice,val_jaccard\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.phase << ',' << r.lr_max << ',' << r.train_loss << ',' << r.val_loss << ','
        << r.val_dice << ',' << r.val_jaccard << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,phase,lr_max,train_loss,val_loss,val_dice,val_jaccard") {
    throw DataError(path.string() + ": unexpected history header");
  }
  std::vector<EpochRecord> history;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    EpochRecord r;
    std::string fields[5];
    if (!(ls >> r.epoch >> r.phase >> fields[0] >> fields[1] >> fields[2] >> fields[3] >> fields[4])) {
      throw DataError(path.string() + ": malformed history row");
    }
    double* targets[] = {&r.lr_max, &r.train_loss, &r.val_loss, &r.val_dice, &r.val_jaccard};
    for (int i = 0; i < 5; ++i) *targets[i] = std::stod(fields[i]);
    history.push_back(r);
  }
  return history;
}

template LrCurve lr_range_test(UNetModel<float>&, const std::vector<Sample>&, const AdamState<float>&,
                               const HyperParams&, std::uint64_t);
template LrCurve lr_range_test(UNetModel<double>&, const std::vector<Sample>&, const AdamState<double>&,
                               const HyperParams&, std::uint64_t);
template ValidationResult validate(UNetModel<float>&, const std::vector<Sample>&, const HyperParams&);
template ValidationResult validate(UNetModel<double>&, const std::vector<Sample>&, const HyperParams&);
template ProcedureResult<float> run_training_procedure(UNetModel<float>&, const std::vector<Sample>&,
                                                       const std::vector<Sample>&, const HyperParams&,
                                                       const EpochCallback&, std::size_t, std::size_t);
template ProcedureResult<double> run_training_procedure(UNetModel<double>&, const std::vector<Sample>&,
                                                        const std::vector<Sample>&, const HyperParams&,
                                                        const EpochCallback&, std::size_t, std::size_t);

}  // namespace unetseg
