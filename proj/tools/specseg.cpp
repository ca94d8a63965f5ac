// specseg command-line tool: dataset generation, training, evaluation,
// detection and reporting.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "specseg/lad.hpp"
#include "specseg/pipeline.hpp"

using namespace specseg;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kIoError = 3, kDataError = 4 };

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::TauOutOfRange:
    case ErrorCode::PlacementInfeasible:
    case ErrorCode::UnsupportedModulation: return kConfigError;
    case ErrorCode::Io:
    case ErrorCode::DiskWrite: return kIoError;
    case ErrorCode::CorruptRecord:
    case ErrorCode::CorruptBlob:
    case ErrorCode::VersionMismatch:
    case ErrorCode::FormatVersionMismatch:
    case ErrorCode::ModeMismatch:
    case ErrorCode::SplitMissing:
    case ErrorCode::DatasetEmpty:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::NonPowerOfTwoLength:
    case ErrorCode::LengthNotDivisible: return kDataError;
    default: return kFailure;
  }
}

enum class Format { Json, Csv };

// ---- config files ---------------------------------------------------------

enum class Kind { Number, Integer, Boolean, String, Array, Object };

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Number: return "a number";
    case Kind::Integer: return "a non-negative integer";
    case Kind::Boolean: return "a boolean";
    case Kind::String: return "a string";
    case Kind::Array: return "an array";
    case Kind::Object: return "an object";
  }
  return "?";
}

bool has_kind(const json& v, Kind k) {
  switch (k) {
    case Kind::Number: return v.is_number();
    case Kind::Integer: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case Kind::Boolean: return v.is_boolean();
    case Kind::String: return v.is_string();
    case Kind::Array: return v.is_array();
    case Kind::Object: return v.is_object();
  }
  return false;
}

/// Rejects unknown keys and mistyped values; `where` names the section.
void check_schema(const json& j, const std::map<std::string, Kind>& schema, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::ConfigInvalid, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = schema.find(key);
    if (it == schema.end()) fail(ErrorCode::ConfigInvalid, where + ": unknown key '" + key + "'");
    if (!has_kind(value, it->second))
      fail(ErrorCode::ConfigInvalid, where + ": '" + key + "' must be " + kind_name(it->second));
  }
}

json read_json(const std::string& path) {
  const Bytes b = read_file(path);
  try {
    return json::parse(b.begin(), b.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigInvalid, path + ": " + e.what());
  }
}

template <typename T>
T pair_value(const json& j, const std::string& key, std::size_t i) {
  if (j.size() != 2) fail(ErrorCode::ConfigInvalid, "'" + key + "' must be a [min, max] pair");
  try {
    return j.at(i).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigInvalid, "'" + key + "' holds a value of the wrong type");
  }
}

template <typename T>
T typed(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::ConfigInvalid, "'" + key + "' holds a value of the wrong type");
  }
}

DatasetConfig dataset_config(const json& j) {
  check_schema(j,
               {{"count", Kind::Integer},
                {"L", Kind::Integer},
                {"snr_db", Kind::Array},
                {"signals", Kind::Array},
                {"split_fractions", Kind::Array},
                {"seed", Kind::Integer},
                {"sample_rate_hz", Kind::Number},
                {"bandwidths_hz", Kind::Array},
                {"guard_hz", Kind::Number},
                {"modulations", Kind::Array},
                {"rrc_rolloff", Kind::Number},
                {"rrc_span_symbols", Kind::Integer},
                {"gmsk_bt", Kind::Number}},
               "generate config");
  DatasetConfig c;
  if (j.contains("count")) c.count = j["count"].get<std::size_t>();
  if (j.contains("L")) c.L = j["L"].get<std::size_t>();
  if (j.contains("snr_db")) {
    c.snr_min_db = pair_value<double>(j["snr_db"], "snr_db", 0);
    c.snr_max_db = pair_value<double>(j["snr_db"], "snr_db", 1);
  }
  if (j.contains("signals")) {
    c.signals_min = pair_value<std::size_t>(j["signals"], "signals", 0);
    c.signals_max = pair_value<std::size_t>(j["signals"], "signals", 1);
  }
  if (j.contains("split_fractions")) {
    if (j["split_fractions"].size() != 3) fail(ErrorCode::ConfigInvalid, "'split_fractions' needs three entries");
    c.split_fractions = typed<std::array<double, 3>>(j["split_fractions"], "split_fractions");
  }
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("sample_rate_hz")) c.compose.sample_rate_hz = j["sample_rate_hz"].get<double>();
  if (j.contains("bandwidths_hz")) c.compose.bandwidths_hz = typed<std::vector<double>>(j["bandwidths_hz"], "bandwidths_hz");
  if (j.contains("guard_hz")) c.compose.guard_hz = j["guard_hz"].get<double>();
  if (j.contains("modulations")) {
    c.compose.modulations.clear();
    for (const auto& m : j["modulations"]) c.compose.modulations.push_back(parse_modulation(typed<std::string>(m, "modulations")));
  }
  if (j.contains("rrc_rolloff")) c.compose.shaping.rrc_rolloff = j["rrc_rolloff"].get<double>();
  if (j.contains("rrc_span_symbols")) c.compose.shaping.rrc_span = j["rrc_span_symbols"].get<std::size_t>();
  if (j.contains("gmsk_bt")) c.compose.shaping.gmsk_bt = j["gmsk_bt"].get<double>();
  c.validate();
  return c;
}

struct TrainSetup {
  TrainConfig train;
  ModelConfig model;
  Precision precision = Precision::Single;
};

TrainSetup train_setup(const json& j, std::size_t L, std::optional<std::uint64_t> seed_override) {
  check_schema(j,
               {{"mode", Kind::String},
                {"precision", Kind::String},
                {"loss", Kind::String},
                {"batch_size", Kind::Integer},
                {"lr_initial", Kind::Number},
                {"lr_reduced", Kind::Number},
                {"lr_patience", Kind::Integer},
                {"stop_patience", Kind::Integer},
                {"min_delta", Kind::Number},
                {"gamma", Kind::Number},
                {"alpha", Kind::Number},
                {"max_epochs", Kind::Integer},
                {"seed", Kind::Integer},
                {"shift_augment", Kind::Boolean},
                {"model", Kind::Object}},
               "train config");
  TrainSetup s;
  auto& t = s.train;
  if (j.contains("mode")) t.mode = parse_mode(j["mode"].get<std::string>());
  t.loss = t.mode == Mode::Complex ? LossKind::Cfl : LossKind::Rfl;
  if (j.contains("loss")) t.loss = parse_loss(j["loss"].get<std::string>());
  if (j.contains("precision")) s.precision = parse_precision(j["precision"].get<std::string>());
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("lr_initial")) t.lr_initial = j["lr_initial"].get<double>();
  if (j.contains("lr_reduced")) t.lr_reduced = j["lr_reduced"].get<double>();
  if (j.contains("lr_patience")) t.lr_patience = j["lr_patience"].get<std::size_t>();
  if (j.contains("stop_patience")) t.stop_patience = j["stop_patience"].get<std::size_t>();
  if (j.contains("min_delta")) t.min_delta = j["min_delta"].get<double>();
  if (j.contains("gamma")) t.gamma = j["gamma"].get<double>();
  if (j.contains("alpha")) t.alpha = j["alpha"].get<double>();
  if (j.contains("max_epochs")) t.max_epochs = j["max_epochs"].get<std::size_t>();
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("shift_augment")) t.shift_augment = j["shift_augment"].get<bool>();
  if (seed_override) t.seed = *seed_override;
  t.validate();

  s.model = ModelConfig::for_bins(L, t.mode, t.seed);
  if (j.contains("model")) {
    const json& m = j["model"];
    check_schema(m,
                 {{"preset", Kind::String},
                  {"stem", Kind::Array},
                  {"stage_channels", Kind::Array},
                  {"blocks_per_stage", Kind::Integer},
                  {"head_pool_len", Kind::Integer}},
                 "train config model");
    if (m.contains("preset")) {
      const auto p = m["preset"].get<std::string>();
      if (p == "miniature") s.model = ModelConfig::miniature(t.mode, t.seed);
      else if (p != "default") fail(ErrorCode::ConfigInvalid, "unknown model preset '" + p + "'");
      if (s.model.input_bins != L)
        fail(ErrorCode::ConfigInvalid, "preset '" + p + "' expects L = " + std::to_string(s.model.input_bins));
    }
    if (m.contains("stem")) {
      s.model.stem.clear();
      for (const auto& layer : m["stem"]) {
        check_schema(layer, {{"kernel", Kind::Integer}, {"stride", Kind::Integer}, {"channels", Kind::Integer}},
                     "stem layer");
        s.model.stem.push_back({layer.value("kernel", std::size_t{3}), layer.value("stride", std::size_t{1}),
                                layer.value("channels", std::size_t{16})});
      }
    }
    if (m.contains("stage_channels"))
      s.model.stage_channels = typed<std::vector<std::size_t>>(m["stage_channels"], "stage_channels");
    if (m.contains("blocks_per_stage")) s.model.blocks_per_stage = m["blocks_per_stage"].get<std::size_t>();
    if (m.contains("head_pool_len")) s.model.head_pool_len = m["head_pool_len"].get<std::size_t>();
  }
  s.model.validate();
  return s;
}

// ---- output helpers -------------------------------------------------------

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return {b.begin(), b.end()};
}

void emit_table(const MetricTable& t, Format f) {
  if (f == Format::Csv) std::cout << metric_csv(t);
  else std::cout << metric_json(t).dump(2) << "\n";
}

json segments_json(std::span<const Segment> segs, std::size_t L, double fs, double center_hz) {
  const double df = fs / static_cast<double>(L);
  const double half = static_cast<double>(L / 2);
  json out = json::array();
  for (const auto& s : segs) {
    out.push_back({{"f_b", s.f_b},
                   {"f_e", s.f_e},
                   {"f_lo_hz", center_hz + (static_cast<double>(s.f_b) - half - 0.5) * df},
                   {"f_hi_hz", center_hz + (static_cast<double>(s.f_e) - half + 0.5) * df}});
  }
  return out;
}

/// Raw interleaved little-endian float32 I/Q, split into frames of L samples.
std::vector<IQFrame<float>> read_iq(const std::string& path, std::size_t L, double fs, double center_hz) {
  const Bytes b = read_file(path);
  const std::size_t n = b.size() / 8;
  if (b.size() % 8 != 0 || n == 0 || n % L != 0)
    fail(ErrorCode::ShapeMismatch, path + " holds " + std::to_string(b.size()) +
                                       " bytes; expected a positive multiple of L = " + std::to_string(L) +
                                       " complex float32 samples");
  std::vector<IQFrame<float>> frames;
  for (std::size_t f = 0; f < n / L; ++f) {
    std::vector<std::complex<float>> s(L);
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t off = (f * L + i) * 8;
      s[i] = {get_le<float>(b, off), get_le<float>(b, off + 4)};
    }
    frames.push_back(make_frame(std::move(s), fs, center_hz));
  }
  return frames;
}

// ---- subcommands ------------------------------------------------------------

int cmd_generate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed, Format f) {
  auto cfg = dataset_config(read_json(config));
  if (seed) cfg.seed = *seed;
  const auto m = generate_dataset(out, cfg);
  if (f == Format::Csv) {
    std::cout << "split,count,bytes\n";
    for (std::size_t i = 0; i < 3; ++i)
      std::cout << kSplitNames[i] << "," << m.splits[i].count() << "," << m.splits[i].bytes << "\n";
  } else {
    json summary = {{"directory", out}, {"count", m.count()}, {"L", cfg.L}, {"seed", cfg.seed}};
    for (std::size_t i = 0; i < 3; ++i) summary["splits"][kSplitNames[i]] = m.splits[i].count();
    std::cout << summary.dump(2) << "\n";
  }
  std::cerr << "generated " << m.count() << " samples (L=" << cfg.L << ") in " << out << "\n";
  return kOk;
}

template <Real R>
TrainResult run_training(const Dataset& data, const TrainSetup& s, const std::string& init) {
  auto progress = [](const EpochReport& r) {
    std::fprintf(stderr, "epoch %zu  train %.4f  val %.4f  ciou %.4f  acc@0.5 %.4f  (%.1f s)\n", r.epoch, r.train_loss,
                 r.val_loss, r.val_ciou, r.val_acc05, r.seconds);
  };
  if (init.empty()) return train<R>(data, s.model, s.train, progress);
  const auto tr = data.load("train");
  const auto va = data.load("val");
  return fine_tune<R>(read_file(init), tr, va, s.train, progress);
}

int cmd_train(const std::string& data_dir, const std::string& config, const std::string& out, const std::string& init,
              std::optional<std::uint64_t> seed, Format f) {
  const Dataset data(data_dir);
  const json j = config.empty() ? json::object() : read_json(config);
  const auto setup = train_setup(j, data.manifest().config.L, seed);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) fail(ErrorCode::DiskWrite, "cannot create " + out + ": " + ec.message());

  const auto result = setup.precision == Precision::Single ? run_training<float>(data, setup, init)
                                                           : run_training<double>(data, setup, init);
  const std::filesystem::path dir(out);
  write_file(dir / "best.ckpt", result.best_checkpoint);
  write_text(dir / "epochs.csv", epoch_csv(result.reports));
  const auto timing = timing_report(result.reports, 0.0);
  json summary = {{"mode", to_string(setup.train.mode)},
                  {"precision", to_string(setup.precision)},
                  {"loss", to_string(setup.train.loss)},
                  {"seed", setup.train.seed},
                  {"epochs", result.reports.size()},
                  {"best_epoch", result.best_epoch},
                  {"avg_epoch_seconds", timing.avg_epoch_seconds},
                  {"total_seconds", timing.total_seconds},
                  {"checkpoint", (dir / "best.ckpt").string()}};
  if (result.best_epoch > 0) {
    const auto& b = result.reports[result.best_epoch - 1];
    summary["best_val_acc05"] = b.val_acc05;
    summary["best_val_loss"] = b.val_loss;
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  if (f == Format::Csv) std::cout << epoch_csv(result.reports);
  else std::cout << summary.dump(2) << "\n";
  std::cerr << "best epoch " << result.best_epoch << " of " << result.reports.size() << "; wrote " << out << "\n";
  return kOk;
}

template <Real R>
MetricTable eval_checkpoint(const Bytes& ckpt, const Dataset& data, const std::string& split) {
  auto loaded = deserialize_checkpoint<R>(ckpt);
  if (loaded.header.config.input_bins != data.manifest().config.L)
    fail(ErrorCode::ShapeMismatch, "checkpoint expects L = " + std::to_string(loaded.header.config.input_bins) +
                                       ", dataset has L = " + std::to_string(data.manifest().config.L));
  return evaluate(loaded.model, data, split);
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             const std::string& out, Format f) {
  const Bytes ckpt = read_file(ckpt_path);
  const auto header = read_checkpoint_header(ckpt);
  const Dataset data(data_dir);
  const auto table = header.precision == Precision::Single ? eval_checkpoint<float>(ckpt, data, split)
                                                           : eval_checkpoint<double>(ckpt, data, split);
  if (!out.empty()) {
    json j = metric_json(table);
    j["mode"] = to_string(header.mode());
    j["split"] = split;
    write_text(out, j.dump(2) + "\n");
  }
  emit_table(table, f);
  std::fprintf(stderr, "%s split: accuracy@0.5 %.4f, mean IoU %.4f over %zu samples\n", split.c_str(),
               table.overall.accuracy, table.overall.mean_iou, table.overall.n_samples);
  return kOk;
}

template <Real R>
std::vector<std::vector<Segment>> detect_frames(const Bytes& ckpt, const std::vector<IQFrame<float>>& frames) {
  auto loaded = deserialize_checkpoint<R>(ckpt);
  std::vector<SpectrumFrame<R>> spectra;
  for (const auto& fr : frames) spectra.push_back(spectrum_of<R>(fr));
  std::vector<std::vector<Segment>> out;
  // Batch norm runs on frozen statistics, so a single frame is fine.
  for (const auto& p : loaded.model.forward(spectra, BnMode::Eval)) out.push_back(predicted_segments(p, 0.5));
  return out;
}

int cmd_detect(const std::string& ckpt_path, const std::string& iq_path, double fs, double center_hz, Format f) {
  const Bytes ckpt = read_file(ckpt_path);
  const auto header = read_checkpoint_header(ckpt);
  const std::size_t L = header.config.input_bins;
  const auto frames = read_iq(iq_path, L, fs, center_hz);
  const auto segs =
      header.precision == Precision::Single ? detect_frames<float>(ckpt, frames) : detect_frames<double>(ckpt, frames);
  if (f == Format::Csv) {
    std::cout << "frame,f_b,f_e,f_lo_hz,f_hi_hz\n";
    for (std::size_t i = 0; i < segs.size(); ++i)
      for (const auto& s : segments_json(segs[i], L, fs, center_hz))
        std::cout << i << "," << s["f_b"] << "," << s["f_e"] << "," << s["f_lo_hz"] << "," << s["f_hi_hz"] << "\n";
  } else {
    json j = {{"L", L}, {"sample_rate_hz", fs}, {"center_hz", center_hz}, {"frames", json::array()}};
    for (std::size_t i = 0; i < segs.size(); ++i)
      j["frames"].push_back({{"frame", i}, {"segments", segments_json(segs[i], L, fs, center_hz)}});
    std::cout << j.dump(2) << "\n";
  }
  std::size_t total = 0;
  for (const auto& s : segs) total += s.size();
  std::cerr << total << " segment(s) in " << segs.size() << " frame(s)\n";
  return kOk;
}

int cmd_lad(const std::string& data_dir, const std::string& iq_path, const std::string& split, const LadConfig& cfg,
            double fs, double center_hz, std::size_t iq_bins, Format f) {
  cfg.validate();
  if (!iq_path.empty()) {
    const auto frames = read_iq(iq_path, iq_bins, fs, center_hz);
    json j = {{"L", iq_bins}, {"frames", json::array()}};
    for (std::size_t i = 0; i < frames.size(); ++i)
      j["frames"].push_back(
          {{"frame", i}, {"segments", segments_json(lad_detect(spectrum_of<double>(frames[i]), cfg), iq_bins, fs, center_hz)}});
    std::cout << j.dump(2) << "\n";
    return kOk;
  }
  const Dataset data(data_dir);
  if (data.split_size(split) == 0) fail(ErrorCode::SplitMissing, "split '" + split + "' is empty");
  std::vector<std::vector<Segment>> preds, truths;
  std::vector<double> snr;
  data.for_each(split, [&](SampleRecord&& r) {
    preds.push_back(lad_detect(spectrum_of<double>(r.frame), cfg));
    truths.push_back(r.segments());
    snr.push_back(r.snr_db);
  });
  const auto table = metric_table(preds, truths, snr);
  emit_table(table, f);
  std::fprintf(stderr, "LAD on %s: accuracy@0.5 %.4f over %zu samples\n", split.c_str(), table.overall.accuracy,
               table.overall.n_samples);
  return kOk;
}

struct RunInfo {
  std::string dir;
  std::string mode;
  std::vector<EpochReport> reports;
  json metrics;  // from eval --out, when present
};

int cmd_report(const std::vector<std::string>& runs, std::optional<double> target, bool per_snr, bool curves,
               Format f) {
  std::vector<RunInfo> infos;
  for (const auto& d : runs) {
    const std::filesystem::path dir(d);
    RunInfo r;
    r.dir = d;
    json summary;
    try {
      summary = json::parse(read_text(dir / "summary.json"));
      r.mode = summary.at("mode").get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::CorruptRecord, (dir / "summary.json").string() + ": " + e.what());
    }
    r.reports = parse_epoch_csv(read_text(dir / "epochs.csv"));
    if (std::filesystem::exists(dir / "metrics.json")) {
      try {
        r.metrics = json::parse(read_text(dir / "metrics.json"));
      } catch (const json::exception& e) {
        fail(ErrorCode::CorruptRecord, (dir / "metrics.json").string() + ": " + e.what());
      }
    }
    infos.push_back(std::move(r));
  }
  // Default target: the best validation accuracy every run reaches.
  double tgt = 1.0;
  for (const auto& r : infos) {
    double best = 0.0;
    for (const auto& e : r.reports) best = std::max(best, e.val_acc05);
    tgt = std::min(tgt, best);
  }
  if (target) tgt = *target;

  if (per_snr) {
    std::cout << "run,mode,snr_db,accuracy,mean_iou,recall05,recall09,n_samples\n";
    for (const auto& r : infos) {
      if (r.metrics.is_null()) continue;
      for (const auto& row : r.metrics.at("per_snr"))
        std::cout << r.dir << "," << r.mode << "," << row["snr_db"] << "," << row["accuracy"] << "," << row["mean_iou"]
                  << "," << row["recall05"] << "," << row["recall09"] << "," << row["n_samples"] << "\n";
    }
    return kOk;
  }
  if (curves) {
    std::cout << "run,mode,epoch,train_loss,val_loss,val_ciou,val_acc05\n";
    for (const auto& r : infos)
      for (const auto& e : r.reports)
        std::printf("%s,%s,%zu,%.10g,%.10g,%.10g,%.10g\n", r.dir.c_str(), r.mode.c_str(), e.epoch, e.train_loss,
                    e.val_loss, e.val_ciou, e.val_acc05);
    return kOk;
  }
  json out = {{"target_acc05", tgt}, {"runs", json::array()}};
  if (f == Format::Csv)
    std::cout << "run,mode,epochs,epochs_to_target,best_val_acc05,avg_epoch_seconds,total_seconds,test_accuracy\n";
  for (const auto& r : infos) {
    const auto t = timing_report(r.reports, tgt);
    double best = 0.0;
    for (const auto& e : r.reports) best = std::max(best, e.val_acc05);
    const json test_acc = r.metrics.is_null() ? json(nullptr) : r.metrics.at("overall").at("accuracy");
    if (f == Format::Csv) {
      std::printf("%s,%s,%zu,%s,%.6f,%.3f,%.3f,%s\n", r.dir.c_str(), r.mode.c_str(), r.reports.size(),
                  t.epochs_to_target ? std::to_string(*t.epochs_to_target).c_str() : "", best, t.avg_epoch_seconds,
                  t.total_seconds, test_acc.is_null() ? "" : test_acc.dump().c_str());
    } else {
      out["runs"].push_back({{"run", r.dir},
                             {"mode", r.mode},
                             {"epochs", r.reports.size()},
                             {"epochs_to_target", t.epochs_to_target ? json(*t.epochs_to_target) : json(nullptr)},
                             {"best_val_acc05", best},
                             {"avg_epoch_seconds", t.avg_epoch_seconds},
                             {"total_seconds", t.total_seconds},
                             {"test_accuracy", test_acc}});
    }
  }
  if (f == Format::Json) std::cout << out.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specseg: complex-valued spectrum segmentation toolkit"};
  app.require_subcommand(1);
  std::string format = "json";
  app.add_option("--format", format, "Output format for stdout")->check(CLI::IsMember({"json", "csv"}));

  std::string config, out, data, ckpt, iq, init, split = "test";
  std::optional<std::uint64_t> seed;
  double fs = 20e6, center_hz = 0.0;

  auto* gen = app.add_subcommand("generate", "Synthesize a labeled dataset");
  gen->add_option("--config", config, "JSON dataset config")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the config seed");

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--config", config, "JSON training config (defaults if omitted)");
  tr->add_option("--out", out, "Run directory for checkpoint and reports")->required();
  tr->add_option("--init", init, "Checkpoint to fine-tune instead of a fresh model");
  tr->add_option("--seed", seed, "Override the config seed");

  auto* ev = app.add_subcommand("eval", "Per-SNR metrics of a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", out, "Also write the metric table as JSON here");

  auto* det = app.add_subcommand("detect", "Segment raw IQ with a trained model");
  det->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  det->add_option("--iq", iq, "Interleaved little-endian float32 I/Q file")->required();
  det->add_option("--sample-rate", fs, "Sample rate in Hz");
  det->add_option("--center-hz", center_hz, "Receiver center frequency in Hz");

  LadConfig lad_cfg;
  std::size_t iq_bins = 1024;
  auto* lad = app.add_subcommand("lad", "Double-threshold energy detection baseline");
  auto* lad_data = lad->add_option("--data", data, "Dataset directory to score");
  lad->add_option("--iq", iq, "Raw IQ file to segment instead")->excludes(lad_data);
  lad->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
  lad->add_option("--lower", lad_cfg.lower_factor, "Lower threshold factor over the noise floor");
  lad->add_option("--upper", lad_cfg.upper_factor, "Upper threshold factor over the noise floor");
  lad->add_option("--min-run", lad_cfg.min_run, "Shortest accepted run of bins");
  lad->add_option("--bins", iq_bins, "Frame length for --iq");
  lad->add_option("--sample-rate", fs, "Sample rate in Hz for --iq");
  lad->add_option("--center-hz", center_hz, "Receiver center frequency in Hz for --iq");

  std::vector<std::string> runs;
  std::optional<double> target;
  bool per_snr = false, curves = false;
  auto* rep = app.add_subcommand("report", "Compare training runs");
  rep->add_option("--runs", runs, "Run directories written by train")->required();
  rep->add_option("--target", target, "Validation accuracy target for epochs-to-target");
  auto* snr_flag = rep->add_flag("--per-snr", per_snr, "Per-SNR test metrics (CSV) from each run's metrics.json");
  rep->add_flag("--curves", curves, "Per-epoch validation curves (CSV)")->excludes(snr_flag);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  const Format f = format == "csv" ? Format::Csv : Format::Json;

  try {
    if (*gen) return cmd_generate(config, out, seed, f);
    if (*tr) return cmd_train(data, config, out, init, seed, f);
    if (*ev) return cmd_eval(ckpt, data, split, out, f);
    if (*det) return cmd_detect(ckpt, iq, fs, center_hz, f);
    if (*lad) {
      if (data.empty() && iq.empty()) {
        std::cerr << "lad: one of --data or --iq is required\n";
        return kConfigError;
      }
      return cmd_lad(data, iq, split, lad_cfg, fs, center_hz, iq_bins, f);
    }
    if (*rep) return cmd_report(runs, target, per_snr, curves, f);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
