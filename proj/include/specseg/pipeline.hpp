#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specseg/checkpoint.hpp"
#include "specseg/dataset.hpp"
#include "specseg/metrics.hpp"
#include "specseg/objectives.hpp"
#include "specseg/optim.hpp"
#include "specseg/stopping.hpp"

namespace specseg {

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Cfl: return "cfl";
    case LossKind::Cbce: return "cbce";
    case LossKind::Rfl: return "rfl";
    case LossKind::Rbce: return "rbce";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "cfl") return LossKind::Cfl;
  if (s == "cbce") return LossKind::Cbce;
  if (s == "rfl") return LossKind::Rfl;
  if (s == "rbce") return LossKind::Rbce;
  fail(ErrorCode::ConfigInvalid, "loss must be one of cfl, cbce, rfl, rbce; got '" + s + "'");
}

struct TrainConfig {
  std::size_t batch_size = 64;
  double lr_initial = 1e-3;
  double lr_reduced = 1e-4;
  std::size_t lr_patience = 3;
  std::size_t stop_patience = 3;
  double min_delta = kDefaultMinDelta;
  double gamma = 1.0;
  double alpha = 3.0;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::Cfl;
  Mode mode = Mode::Complex;
  bool shift_augment = true;  // random frequency shift of each training example

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::ConfigInvalid, m); };
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (lr_patience < 1 || stop_patience < 1) bad("patience values must be >= 1");
    if (!(lr_initial >= 0.0) || !(lr_reduced >= 0.0)) bad("learning rates must be >= 0");
    if (!(gamma >= 0.0) || !(alpha > 0.0)) bad("need gamma >= 0 and alpha > 0");
    if (!(min_delta >= 0.0)) bad("min_delta must be >= 0");
    const bool complex_loss = loss == LossKind::Cfl || loss == LossKind::Cbce;
    if (complex_loss != (mode == Mode::Complex))
      bad("loss " + to_string(loss) + " does not fit " + to_string(mode) + " mode");
  }
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ciou = 0.0;
  double val_acc05 = 0.0;
  double seconds = 0.0;
  double lr = 0.0;
};

inline constexpr const char* kEpochCsvHeader = "epoch,train_loss,val_loss,val_ciou,val_acc05,seconds";

inline std::string epoch_csv_row(const EpochReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.3f", r.epoch, r.train_loss, r.val_loss, r.val_ciou,
                r.val_acc05, r.seconds);
  return buf;
}

inline std::string epoch_csv(std::span<const EpochReport> reports) {
  std::string out = std::string(kEpochCsvHeader) + "\n";
  for (const auto& r : reports) out += epoch_csv_row(r) + "\n";
  return out;
}

inline std::vector<EpochReport> parse_epoch_csv(const std::string& text) {
  std::vector<EpochReport> out;
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos || text.substr(0, pos) != kEpochCsvHeader)
    fail(ErrorCode::CorruptRecord, "epoch report CSV lacks the expected header");
  while (++pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    const std::string line = text.substr(pos, end - pos);
    if (line.empty()) break;
    EpochReport r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.train_loss, &r.val_loss, &r.val_ciou,
                    &r.val_acc05, &r.seconds) != 6)
      fail(ErrorCode::CorruptRecord, "bad epoch report row: " + line);
    out.push_back(r);
    if (end == std::string::npos) break;
    pos = end;
  }
  return out;
}

// ---- data preparation -----------------------------------------------------

/// Spectra and targets of a record set, computed once.
template <Real R>
struct PreparedSplit {
  std::vector<SpectrumFrame<R>> spectra;
  std::vector<OccupancyMask> targets;
  std::vector<std::vector<Segment>> truths;
  std::vector<double> snr_db;

  std::size_t size() const { return spectra.size(); }
};

template <Real R>
SpectrumFrame<R> spectrum_of(const IQFrame<float>& f) {
  std::vector<std::complex<R>> s(f.length());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::complex<R>(f.samples[i]);
  return fft(make_frame(std::move(s), f.sample_rate_hz, f.center_freq_hz));
}

template <Real R>
PreparedSplit<R> prepare(std::span<const SampleRecord> records) {
  PreparedSplit<R> p;
  for (const auto& r : records) {
    p.spectra.push_back(spectrum_of<R>(r.frame));
    p.truths.push_back(r.segments());
    p.targets.push_back(occupancy_from_segments(p.truths.back(), r.length()));
    p.snr_db.push_back(r.snr_db);
  }
  return p;
}

/// Batch index ranges: consecutive chunks of batch_size, with a trailing
/// single-sample chunk folded into its predecessor (batch norm needs >= 2).
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
  if (out.size() >= 2 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

/// Rolls a training example by a random whole number of bins. Spectrum and
/// occupancy move together and no labeled run wraps past the band edge; a
/// circular roll of the DFT is an exact retuning of the receiver by k bins.
template <Real R>
void random_shift(SpectrumFrame<R>& s, OccupancyMask& target, std::span<const Segment> truth, Rng& rng) {
  const std::size_t L = s.length();
  long lo = truth.empty() ? 0 : -static_cast<long>(L), hi = static_cast<long>(L) - 1;
  for (const auto& seg : truth) {
    lo = std::max(lo, -static_cast<long>(seg.f_b));
    hi = std::min(hi, static_cast<long>(L - 1 - seg.f_e));
  }
  const long k = lo + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  const std::size_t shift = static_cast<std::size_t>((k % static_cast<long>(L) + static_cast<long>(L))) % L;
  if (shift == 0) return;
  auto roll = [&](auto&& v) { std::rotate(v.begin(), v.end() - static_cast<std::ptrdiff_t>(shift), v.end()); };
  roll(s.coeffs.values());
  roll(target.o_x);
  roll(target.o_y);
}

// ---- loss over a batch ----------------------------------------------------

struct BatchLoss {
  double loss = 0.0;  // mean over samples of the per-sample sum over bins
  std::vector<OutputGrad> grads;
};

inline BatchLoss batch_loss(std::span<const PredictedSpectrum> preds, std::span<const OccupancyMask> targets,
                            const TrainConfig& cfg, bool with_grads) {
  BatchLoss out;
  const double inv = 1.0 / static_cast<double>(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    LossResult r;
    switch (cfg.loss) {
      case LossKind::Cfl: r = cfl(preds[i], targets[i], cfg.gamma, cfg.alpha); break;
      case LossKind::Cbce: r = cbce(preds[i], targets[i]); break;
      case LossKind::Rfl: r = rfl(preds[i].p_x, targets[i].o_x, cfg.gamma, cfg.alpha); break;
      case LossKind::Rbce: r = rbce(preds[i].p_x, targets[i].o_x); break;
    }
    out.loss += r.loss * inv;
    if (with_grads) {
      for (auto& g : r.d_px) g *= inv;
      for (auto& g : r.d_py) g *= inv;
      if (r.d_py.empty()) r.d_py.assign(r.d_px.size(), 0.0);
      out.grads.push_back({std::move(r.d_px), std::move(r.d_py)});
    }
  }
  return out;
}

// ---- validation -----------------------------------------------------------

struct ValidationResult {
  double loss = 0.0;
  double ciou = 0.0;
  double acc05 = 0.0;
};

/// Eval-mode predictions for a split, in order; one forward per sample batch.
template <Real R>
std::vector<PredictedSpectrum> predict(Model<R>& model, const PreparedSplit<R>& data, std::size_t batch_size = 64) {
  std::vector<PredictedSpectrum> out;
  out.reserve(data.size());
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const std::size_t e = std::min(data.size(), b + batch_size);
    auto p = model.forward(std::span(data.spectra).subspan(b, e - b), BnMode::Eval);
    for (auto& x : p) out.push_back(std::move(x));
  }
  return out;
}

template <Real R>
ValidationResult validate(Model<R>& model, const PreparedSplit<R>& data, const TrainConfig& cfg) {
  const auto preds = predict(model, data, cfg.batch_size);
  ValidationResult v;
  v.loss = batch_loss(preds, data.targets, cfg, false).loss;
  std::vector<std::vector<Segment>> segs;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    v.ciou += ciou_score(data.targets[i], preds[i], 0.5);
    segs.push_back(predicted_segments(preds[i], 0.5));
  }
  v.ciou /= static_cast<double>(preds.size());
  v.acc05 = detection_metrics(segs, data.truths, 0.5).accuracy;
  return v;
}

// ---- training -------------------------------------------------------------

struct TrainResult {
  Bytes best_checkpoint;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::vector<EpochReport> reports;
};

using EpochCallback = std::function<void(const EpochReport&)>;

inline bool better_epoch(const EpochReport& a, const EpochReport& best) {
  return a.val_acc05 > best.val_acc05 || (a.val_acc05 == best.val_acc05 && a.val_loss < best.val_loss);
}

/// Runs the training loop on an existing model. The returned checkpoint holds
/// the epoch with the best validation accuracy@0.5 (ties: lower loss).
template <Real R>
TrainResult train_model(Model<R>& model, const PreparedSplit<R>& train, const PreparedSplit<R>& val,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  require(model.mode() == cfg.mode, ErrorCode::ModeMismatch,
          "model is " + to_string(model.mode()) + "-mode but training config asks for " + to_string(cfg.mode));
  if (train.size() < 2) fail(ErrorCode::DatasetEmpty, "training split needs at least 2 samples");
  if (val.size() == 0) fail(ErrorCode::DatasetEmpty, "validation split is empty");

  TrainResult result;
  result.best_checkpoint = serialize_checkpoint(model, 0);
  Adam<R> opt({cfg.lr_initial});
  std::vector<ValidationPoint> history;
  std::optional<std::size_t> lr_reduced_after;
  std::vector<std::size_t> order(train.size());
  std::vector<SpectrumFrame<R>> batch;
  std::vector<OccupancyMask> batch_targets;
  EpochReport best;
  best.val_acc05 = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(splitmix64(cfg.seed) ^ epoch);
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& [b, e] : batch_ranges(order.size(), cfg.batch_size)) {
      batch.clear();
      batch_targets.clear();
      for (std::size_t i = b; i < e; ++i) {
        batch.push_back(train.spectra[order[i]]);
        batch_targets.push_back(train.targets[order[i]]);
        if (cfg.shift_augment) random_shift(batch.back(), batch_targets.back(), train.truths[order[i]], rng);
      }
      const auto preds = model.forward(batch, BnMode::Train);
      auto bl = batch_loss(preds, batch_targets, cfg, true);
      model.zero_grad();
      model.backward(bl.grads);
      opt.step(model);
      loss_sum += bl.loss * static_cast<double>(e - b);
      seen += e - b;
    }

    const auto v = validate(model, val, cfg);
    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = loss_sum / static_cast<double>(seen);
    rep.val_loss = v.loss;
    rep.val_ciou = v.ciou;
    rep.val_acc05 = v.acc05;
    rep.lr = opt.lr();
    rep.seconds = std::round(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() * 1e3) / 1e3;
    result.reports.push_back(rep);
    if (better_epoch(rep, best)) {
      best = rep;
      result.best_epoch = epoch;
      result.best_checkpoint = serialize_checkpoint(
          model, epoch, {{"val_loss", v.loss}, {"val_ciou", v.ciou}, {"val_acc05", v.acc05}});
    }
    if (on_epoch) on_epoch(rep);

    history.push_back({v.loss, v.ciou});
    const auto d = schedule_decision(history, cfg.lr_patience, cfg.stop_patience, cfg.min_delta, lr_reduced_after);
    if (d == StopDecision::ReduceLr) {
      opt.set_lr(cfg.lr_reduced);
      lr_reduced_after = epoch;
    } else if (d == StopDecision::Stop) {
      break;
    }
  }
  return result;
}

template <Real R>
TrainResult train(std::span<const SampleRecord> train_records, std::span<const SampleRecord> val_records,
                  const ModelConfig& model_cfg, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (model_cfg.mode != cfg.mode)
    fail(ErrorCode::ConfigInvalid, "model mode " + to_string(model_cfg.mode) + " differs from training mode " +
                                       to_string(cfg.mode));
  Model<R> model(model_cfg);
  if (cfg.max_epochs == 0) return {serialize_checkpoint(model, 0), 0, {}};
  if (train_records.empty()) fail(ErrorCode::DatasetEmpty, "training split is empty");
  if (val_records.empty()) fail(ErrorCode::DatasetEmpty, "validation split is empty");
  for (const auto* set : {&train_records, &val_records})
    for (const auto& r : *set)
      require(r.length() == model_cfg.input_bins, ErrorCode::ConfigInvalid,
              "dataset frames have " + std::to_string(r.length()) + " samples, model expects " +
                  std::to_string(model_cfg.input_bins));
  const auto tr = prepare<R>(train_records);
  const auto va = prepare<R>(val_records);
  return train_model(model, tr, va, cfg, on_epoch);
}

template <Real R>
TrainResult train(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}) {
  const auto tr = data.load("train");
  const auto va = data.load("val");
  return train<R>(tr, va, model_cfg, cfg, on_epoch);
}

/// Continues training a stored model on new data under the same rules.
template <Real R>
TrainResult fine_tune(std::span<const std::uint8_t> checkpoint, std::span<const SampleRecord> train_records,
                      std::span<const SampleRecord> val_records, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {}) {
  cfg.validate();
  auto loaded = deserialize_checkpoint<R>(checkpoint, cfg.mode);
  if (train_records.empty() || val_records.empty()) fail(ErrorCode::DatasetEmpty, "fine-tuning needs train and val");
  const auto tr = prepare<R>(train_records);
  const auto va = prepare<R>(val_records);
  return train_model(loaded.model, tr, va, cfg, on_epoch);
}

// ---- evaluation -----------------------------------------------------------

struct MetricRow {
  std::optional<long> snr_db;  // absent for the dataset-wide row
  double accuracy = 0.0;       // at IoU 0.5
  double mean_iou = 0.0;
  double recall05 = 0.0;
  double recall09 = 0.0;
  std::size_t n_samples = 0;
};

struct MetricTable {
  std::vector<MetricRow> rows;  // ascending SNR
  MetricRow overall;
};

/// Groups samples by SNR rounded to the nearest integer dB and averages the
/// per-sample metrics within each group and over the whole set.
inline MetricTable metric_table(std::span<const std::vector<Segment>> preds,
                                std::span<const std::vector<Segment>> truths, std::span<const double> snr_db) {
  require(preds.size() == truths.size() && preds.size() == snr_db.size(), ErrorCode::ShapeMismatch,
          "metric_table inputs differ in length");
  std::map<long, MetricRow> groups;
  MetricTable t;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto m5 = sample_detection_metrics(preds[i], truths[i], 0.5);
    const auto m9 = sample_detection_metrics(preds[i], truths[i], 0.9);
    const long key = std::lround(snr_db[i]);
    for (MetricRow* row : {&groups[key], &t.overall}) {
      row->accuracy += m5.accuracy;
      row->mean_iou += m5.mean_iou;
      row->recall05 += m5.recall;
      row->recall09 += m9.recall;
      ++row->n_samples;
    }
  }
  auto finish = [](MetricRow& r) {
    if (r.n_samples == 0) return;
    const double n = static_cast<double>(r.n_samples);
    r.accuracy /= n;
    r.mean_iou /= n;
    r.recall05 /= n;
    r.recall09 /= n;
  };
  for (auto& [snr, row] : groups) {
    row.snr_db = snr;
    finish(row);
    t.rows.push_back(row);
  }
  finish(t.overall);
  return t;
}

inline std::string metric_csv(const MetricTable& t) {
  std::string out = "snr_db,accuracy,mean_iou,recall05,recall09,n_samples\n";
  auto row = [&out](const MetricRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%zu\n", r.accuracy, r.mean_iou, r.recall05, r.recall09,
                  r.n_samples);
    out += (r.snr_db ? std::to_string(*r.snr_db) : std::string("mean")) + buf;
  };
  for (const auto& r : t.rows) row(r);
  row(t.overall);
  return out;
}

inline nlohmann::json metric_json(const MetricTable& t) {
  auto row = [](const MetricRow& r) {
    nlohmann::json j = {{"accuracy", r.accuracy}, {"mean_iou", r.mean_iou}, {"recall05", r.recall05},
                        {"recall09", r.recall09}, {"n_samples", r.n_samples}};
    j["snr_db"] = r.snr_db ? nlohmann::json(*r.snr_db) : nlohmann::json("mean");
    return j;
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) rows.push_back(row(r));
  return {{"per_snr", rows}, {"overall", row(t.overall)}};
}

/// Model predictions binarized at 0.5 and scored per SNR.
template <Real R>
MetricTable evaluate(Model<R>& model, std::span<const SampleRecord> records, std::size_t batch_size = 64) {
  if (records.empty()) fail(ErrorCode::DatasetEmpty, "evaluation split is empty");
  const auto data = prepare<R>(records);
  const auto preds = predict(model, data, batch_size);
  std::vector<std::vector<Segment>> segs;
  for (const auto& p : preds) segs.push_back(predicted_segments(p, 0.5));
  return metric_table(segs, data.truths, data.snr_db);
}

template <Real R>
MetricTable evaluate(Model<R>& model, const Dataset& data, const std::string& split = "test") {
  const std::size_t idx = split_index(split);
  if (data.manifest().splits[idx].count() == 0) fail(ErrorCode::SplitMissing, "split '" + split + "' is empty");
  const auto recs = data.load(split);
  return evaluate(model, recs);
}

// ---- timing ---------------------------------------------------------------

struct TimingReport {
  std::optional<std::size_t> epochs_to_target;
  double avg_epoch_seconds = 0.0;
  double total_seconds = 0.0;
};

inline TimingReport timing_report(std::span<const EpochReport> reports, double target_accuracy) {
  TimingReport t;
  for (const auto& r : reports) {
    t.total_seconds += r.seconds;
    if (!t.epochs_to_target && r.val_acc05 >= target_accuracy) t.epochs_to_target = r.epoch;
  }
  if (!reports.empty()) t.avg_epoch_seconds = t.total_seconds / static_cast<double>(reports.size());
  return t;
}

}  // namespace specseg
