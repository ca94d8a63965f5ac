// Acceptance runner. Each criterion prints one PASS/FAIL line with the
// measured values and the tolerance it was held to; the exit status is
// non-zero if any selected criterion fails.
//
//   acceptance                  run every criterion
//   acceptance --criterion 5    run one
//   acceptance --work DIR       where datasets and training runs go

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>

#include <CLI11.hpp>

#include "../gradcheck.hpp"
#include "../lad_trials.hpp"
#include "../oracles.hpp"
#include "specseg/pipeline.hpp"

using namespace specseg;
using namespace specseg::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1: gradients ----------------------------------------------------------

constexpr std::size_t kGradSeeds = 10;
constexpr double kLayerGradTol = 1e-4;
constexpr double kLossGradTol = 1e-6;
constexpr double kGradBudgetSeconds = 60.0;

Outcome gradients() {
  const auto t0 = Clock::now();
  using Cd = std::complex<double>;
  struct Check {
    const char* name;
    std::function<double(std::uint64_t)> err;
    double tol;
  };
  const std::vector<Check> checks = {
      {"cconv1d", conv1d_grad_error<Cd>, kLayerGradTol},
      {"clinear", linear_grad_error<Cd>, kLayerGradTol},
      {"cbatchnorm/train", [](std::uint64_t s) { return batchnorm_grad_error<Cd>(s); }, kLayerGradTol},
      {"cbatchnorm/eval", [](std::uint64_t s) { return batchnorm_grad_error<Cd>(s, BnMode::Eval); }, kLayerGradTol},
      {"crelu", relu_grad_error<Cd>, kLayerGradTol},
      {"csigmoid", sigmoid_grad_error<Cd>, kLayerGradTol},
      {"cavgpool", avgpool_grad_error<Cd>, kLayerGradTol},
      {"conv1d(real)", conv1d_grad_error<double>, kLayerGradTol},
      {"linear(real)", linear_grad_error<double>, kLayerGradTol},
      {"batchnorm(real)", [](std::uint64_t s) { return batchnorm_grad_error<double>(s); }, kLayerGradTol},
      {"cfl", [](std::uint64_t s) { return cfl_grad_error(s); }, kLossGradTol},
      {"cbce", cbce_grad_error, kLossGradTol},
      {"rfl", [](std::uint64_t s) { return rfl_grad_error(s); }, kLossGradTol},
  };
  bool ok = true;
  std::string worst_name;
  double worst_ratio = 0.0;
  for (const auto& c : checks) {
    for (std::uint64_t s = 0; s < kGradSeeds; ++s) {
      const double e = c.err(s);
      if (!(e < c.tol)) {
        ok = false;
        std::fprintf(stderr, "  %s seed %llu: relative error %.3e >= %.0e\n", c.name,
                     static_cast<unsigned long long>(s), e, c.tol);
      }
      if (e / c.tol > worst_ratio) {
        worst_ratio = e / c.tol;
        worst_name = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kGradBudgetSeconds;
  return {ok, fmt("%zu checks x %zu seeds, worst %s at %.2g of its tolerance (layers < %.0e, losses < %.0e), %.1f s "
                  "(< %.0f s)",
                  checks.size(), kGradSeeds, worst_name.c_str(), worst_ratio, kLayerGradTol, kLossGradTol, secs,
                  kGradBudgetSeconds)};
}

// ---- 2: oracle equivalence ------------------------------------------------------

constexpr double kFftTol = 1e-9;
constexpr double kAssignTol = 1e-12;
constexpr std::size_t kAssignTrials = 500;
constexpr double kConvTol = 1e-10;

Outcome oracles() {
  bool ok = true;
  double fft_worst = 0.0;
  for (std::size_t L : {8u, 64u, 1024u}) {
    Rng rng(L);
    std::vector<std::complex<double>> x(L);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    const auto f = make_frame(std::move(x));
    const auto a = fft(f);
    const auto b = dft(f);
    for (std::size_t i = 0; i < L; ++i) fft_worst = std::max(fft_worst, std::abs(a.coeffs[i] - b.coeffs[i]));
  }
  ok = ok && fft_worst < kFftTol;

  // Every shape from 1x1 to 4x4 gets the same share of trials.
  Rng rng(2024);
  double assign_worst = 0.0;
  for (std::size_t t = 0; t < kAssignTrials; ++t) {
    IoUMatrix C;
    C.rows = 1 + t % 4;
    C.cols = 1 + (t / 4) % 4;
    for (std::size_t k = 0; k < C.rows * C.cols; ++k) C.c.push_back(rng.below(3) == 0 ? 0.0 : rng.uniform());
    assign_worst = std::max(assign_worst, std::abs(optimal_assignment(C).total - brute_force_best(C)));
  }
  ok = ok && assign_worst < kAssignTol;

  double conv_worst = 0.0;
  Rng crng(11);
  for (auto [stride, pad, k] : {std::tuple{1u, 0u, 1u}, {1u, 1u, 3u}, {2u, 3u, 7u}, {2u, 1u, 3u}}) {
    auto x = random_tensor<Cd>({2, 3, 20}, crng);
    ConvParams<Cd> p{random_tensor<Cd>({5, 3, k}, crng), random_tensor<Cd>({5}, crng), stride, pad};
    const auto y = conv1d_forward(x, p);
    const auto ref = conv_mac_oracle(x, p);
    if (y.shape() != ref.shape()) {
      ok = false;
      continue;
    }
    for (std::size_t i = 0; i < y.size(); ++i) conv_worst = std::max(conv_worst, std::abs(y[i] - ref[i]));
  }
  ok = ok && conv_worst < kConvTol;
  return {ok, fmt("fft vs direct DFT max |err| %.2e (< %.0e, L = 8, 64, 1024); assignment vs exhaustive %.2e over %zu "
                  "trials up to 4x4 (< %.0e); cconv1d vs MAC %.2e (< %.0e)",
                  fft_worst, kFftTol, assign_worst, kAssignTrials, kAssignTol, conv_worst, kConvTol)};
}

// ---- 3: loss identities ------------------------------------------------------

constexpr double kLossIdentityTol = 1e-12;

Outcome loss_identities() {
  Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    PredictedSpectrum p{random_probs(rng, 64), random_probs(rng, 64)};
    const OccupancyMask o{random_bits(rng, 64), random_bits(rng, 64)};
    worst = std::max(worst, std::abs(cfl(p, o, 0.0, 1.0).loss - cbce(p, o).loss));
  }
  const double worked = cfl({{0.5}, {0.5}}, {{1}, {1}}, 1.0, 3.0).loss;
  const double anchor = 1.5 * std::numbers::ln2;
  const bool ok = worst <= kLossIdentityTol && std::abs(worked - anchor) <= kLossIdentityTol;
  return {ok, fmt("|cfl(0,1) - cbce| max %.2e over 20 random masks; worked value %.15f vs (3/2) ln 2 = %.15f "
                  "(tolerance %.0e)",
                  worst, worked, anchor, kLossIdentityTol)};
}

// ---- 4: metric anchors -------------------------------------------------------

Outcome metric_anchors() {
  const double r = riou({0, 9}, {5, 14});
  const double c = ciou(BoxZ{0, 1, 0, 1}, BoxZ{1, 2, 1, 2});
  const double r1 = riou({0, 9}, {0, 9});
  const double c1 = ciou(BoxZ{0, 1, 0, 1}, BoxZ{0, 1, 0, 1});
  const bool ok = r == 1.0 / 3.0 && c == 1.0 / 7.0 && r1 == 1.0 && c1 == 1.0;
  return {ok, fmt("riou((0,9),(5,14)) = %.17g, ciou(half-overlap squares) = %.17g, identical inputs %g / %g "
                  "(exact equality)",
                  r, c, r1, c1)};
}

// ---- 5: desk-scale training -------------------------------------------------

constexpr std::size_t kDeskCount = 4000;
constexpr std::size_t kDeskBins = 1024;
constexpr std::uint64_t kDeskDataSeed = 2024;
constexpr std::size_t kDeskMaxEpochs = 30;
constexpr double kDeskTargetAccuracy = 0.90;
constexpr double kDeskBudgetSeconds = 3600.0;

DatasetConfig desk_dataset() {
  DatasetConfig c;
  c.count = kDeskCount;
  c.L = kDeskBins;
  c.snr_min_db = 0.0;
  c.snr_max_db = 10.0;
  c.signals_min = 1;
  c.signals_max = 3;
  c.seed = kDeskDataSeed;
  return c;
}

const Dataset& desk_data(const fs::path& work) {
  static std::optional<Dataset> data;
  if (!data) {
    const auto dir = work / "desk_dataset";
    if (!fs::exists(dir / "manifest.json")) generate_dataset(dir, desk_dataset());
    data.emplace(dir);
    if (!(data->manifest().config.seed == kDeskDataSeed && data->manifest().count() == kDeskCount)) {
      fs::remove_all(dir);
      generate_dataset(dir, desk_dataset());
      data.emplace(dir);
    }
  }
  return *data;
}

TrainConfig desk_train(Mode mode, std::uint64_t seed, std::size_t max_epochs) {
  TrainConfig t;
  t.mode = mode;
  t.loss = mode == Mode::Complex ? LossKind::Cfl : LossKind::Rfl;
  t.seed = seed;
  t.max_epochs = max_epochs;
  return t;
}

/// Trains one desk run and leaves it in `dir` in the layout `specseg report` reads.
TrainResult desk_run(const Dataset& data, Mode mode, std::uint64_t seed, std::size_t max_epochs, const fs::path& dir) {
  const auto cfg = desk_train(mode, seed, max_epochs);
  const auto tag = to_string(mode) + " seed " + std::to_string(seed);
  auto progress = [&](const EpochReport& r) {
    std::fprintf(stderr, "  [%s] epoch %zu train %.3f val %.3f acc@0.5 %.4f (%.0f s)\n", tag.c_str(), r.epoch,
                 r.train_loss, r.val_loss, r.val_acc05, r.seconds);
  };
  auto result = train<float>(data, ModelConfig::for_bins(data.manifest().config.L, mode, seed), cfg, progress);
  fs::create_directories(dir);
  write_file(dir / "best.ckpt", result.best_checkpoint);
  const std::string csv = epoch_csv(result.reports);
  std::ofstream(dir / "epochs.csv") << csv;
  nlohmann::json summary = {{"mode", to_string(mode)},     {"precision", "float32"},
                            {"loss", to_string(cfg.loss)}, {"seed", seed},
                            {"epochs", result.reports.size()}, {"best_epoch", result.best_epoch}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
  return result;
}

Outcome desk_training(const fs::path& work) {
  const auto t0 = Clock::now();
  const Dataset& data = desk_data(work);
  const auto run = desk_run(data, Mode::Complex, 1, kDeskMaxEpochs, work / "runs" / "desk_complex_1");
  auto loaded = deserialize_checkpoint<float>(run.best_checkpoint);
  const auto table = evaluate(loaded.model, data, "test");
  std::ofstream(work / "runs" / "desk_complex_1" / "metrics.json") << metric_json(table).dump(2) << "\n";
  const double secs = seconds_since(t0);
  std::fprintf(stderr, "%s", metric_csv(table).c_str());
  const double acc = table.overall.accuracy;
  const bool ok = acc >= kDeskTargetAccuracy && run.reports.size() <= kDeskMaxEpochs && secs <= kDeskBudgetSeconds;
  return {ok, fmt("test accuracy@IoU0.5 %.4f (>= %.2f), best epoch %zu of %zu run (<= %zu), %.0f s (<= %.0f s)", acc,
                  kDeskTargetAccuracy, run.best_epoch, run.reports.size(), kDeskMaxEpochs, secs, kDeskBudgetSeconds)};
}

// ---- 6: complex vs real convergence ----------------------------------------

constexpr std::array<std::uint64_t, 3> kConvergenceSeeds = {1, 2, 3};
constexpr std::size_t kConvergenceEpochs = 10;

Outcome convergence(const fs::path& work) {
  const Dataset& data = desk_data(work);
  std::size_t wins = 0;
  std::string rows;
  std::printf("run,mode,seed,epochs,best_val_acc05,target_acc05,epochs_to_target\n");
  for (auto seed : kConvergenceSeeds) {
    const auto real = desk_run(data, Mode::Real, seed, kConvergenceEpochs,
                               work / "runs" / ("conv_real_" + std::to_string(seed)));
    const auto cplx = desk_run(data, Mode::Complex, seed, kConvergenceEpochs,
                               work / "runs" / ("conv_complex_" + std::to_string(seed)));
    double target = 0.0;
    for (const auto& r : real.reports) target = std::max(target, r.val_acc05);
    const auto tr = timing_report(real.reports, target);
    const auto tc = timing_report(cplx.reports, target);
    const bool win = tc.epochs_to_target && tr.epochs_to_target && *tc.epochs_to_target <= *tr.epochs_to_target;
    wins += win ? 1 : 0;
    for (const auto& [name, res, t] : {std::tuple{"real", &real, &tr}, std::tuple{"complex", &cplx, &tc}}) {
      double best = 0.0;
      for (const auto& r : res->reports) best = std::max(best, r.val_acc05);
      std::printf("conv_%s_%llu,%s,%llu,%zu,%.6f,%.6f,%s\n", name, static_cast<unsigned long long>(seed), name,
                  static_cast<unsigned long long>(seed), res->reports.size(), best, target,
                  t->epochs_to_target ? std::to_string(*t->epochs_to_target).c_str() : "");
    }
    rows += fmt(" seed %llu: complex %s vs real %s;", static_cast<unsigned long long>(seed),
                tc.epochs_to_target ? std::to_string(*tc.epochs_to_target).c_str() : "never",
                tr.epochs_to_target ? std::to_string(*tr.epochs_to_target).c_str() : "never");
  }
  const bool ok = wins * 2 > kConvergenceSeeds.size();
  return {ok, fmt("epochs to the real model's best val accuracy,%s complex no later in %zu of %zu seeds (majority), "
                  "%zu-epoch budget each",
                  rows.c_str(), wins, kConvergenceSeeds.size(), kConvergenceEpochs)};
}

// ---- 7: LAD sanity -----------------------------------------------------------

constexpr std::size_t kToneTrials = 100;
constexpr double kToneSnrDb = 20.0;
constexpr std::size_t kNoiseTrials = 1000;

Outcome lad_sanity() {
  const std::size_t hits = lad_tone_hits(kToneTrials, kToneSnrDb, TonePlacement::HalfBin);
  const double zero_rate = lad_noise_zero_rate(kNoiseTrials);
  const bool ok = hits == kToneTrials && std::abs(zero_rate - kLadNoiseZeroRate) <= kLadRateTolerance;
  return {ok, fmt("+%.0f dB tone found within +/-2 bins in %zu/%zu trials (need all); noise-only frames with no "
                  "segment %.3f vs calibrated %.3f (+/- %.3f)",
                  kToneSnrDb, hits, kToneTrials, zero_rate, kLadNoiseZeroRate, kLadRateTolerance)};
}

// ---- 8: determinism ------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = "cd '" + dir.string() + "' && '" SPECSEG_CLI_PATH "' " + args + " >/dev/null 2>>cli.log";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool same_files(const fs::path& a, const fs::path& b, const std::vector<std::string>& names) {
  for (const auto& n : names)
    if (read_file(a / n) != read_file(b / n)) return false;
  return true;
}

Outcome determinism(const fs::path& work) {
  const auto dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "gen.json")
      << R"({"count": 200, "L": 256, "snr_db": [0, 10], "signals": [1, 3], "seed": 77})";
  std::ofstream(dir / "train.json")
      << R"({"mode": "complex", "precision": "float64", "batch_size": 16, "max_epochs": 2, "seed": 5,)"
      << R"( "model": {"preset": "miniature"}})";
  bool ok = true;
  for (const char* name : {"a", "b"}) {
    ok = ok && run_cli(std::string("generate --config gen.json --out ds_") + name, dir) == 0;
    ok = ok && run_cli(std::string("train --data ds_a --config train.json --out run_") + name, dir) == 0;
  }
  if (!ok) return {false, "specseg generate/train exited with an error, see " + (dir / "cli.log").string()};
  const bool data_same = same_files(dir / "ds_a", dir / "ds_b", {"manifest.json", "train.bin", "val.bin", "test.bin"});
  const bool ckpt_same = same_files(dir / "run_a", dir / "run_b", {"best.ckpt"});
  const auto bytes = read_file(dir / "ds_a" / "train.bin").size() + read_file(dir / "run_a" / "best.ckpt").size();
  return {data_same && ckpt_same,
          fmt("two consecutive generate runs: dataset bytes %s; two float64 train runs: checkpoint bytes %s "
              "(%zu bytes compared)",
              data_same ? "identical" : "DIFFER", ckpt_same ? "identical" : "DIFFER", bytes)};
}

// ---- 9: format round trips ---------------------------------------------------------

std::optional<ErrorCode> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

Outcome round_trips(const fs::path& work) {
  const auto dir = work / "roundtrip";
  fs::remove_all(dir);
  DatasetConfig cfg;
  cfg.count = 50;
  cfg.L = 256;
  cfg.seed = 9;
  generate_dataset(dir / "a", cfg);
  {
    const Dataset d(dir / "a");
    std::vector<SampleRecord> all;
    for (const char* s : kSplitNames)
      for (auto& r : d.load(s)) all.push_back(std::move(r));
    write_dataset(dir / "b", d.manifest().config, all);
  }
  const bool data_same = same_files(dir / "a", dir / "b", {"manifest.json", "train.bin", "val.bin", "test.bin"});

  Model<double> m(ModelConfig::miniature(Mode::Complex, 3));
  const Bytes blob = serialize_checkpoint(m, 4, {{"val_acc05", 0.5}});
  auto back = deserialize_checkpoint<double>(blob);
  const bool ckpt_same = serialize_checkpoint(back.model, back.header.epoch, back.header.metrics) == blob;

  std::vector<std::string> wrong;
  auto expect = [&](const char* what, ErrorCode want, const std::function<void()>& f) {
    if (code_of(f) != want) wrong.push_back(what);
  };
  auto corrupt_copy = [&](const char* name, const std::function<void(Bytes&)>& edit) {
    fs::remove_all(dir / name);
    fs::copy(dir / "a", dir / name);
    Bytes b = read_file(dir / name / "train.bin");
    edit(b);
    write_file(dir / name / "train.bin", b);
    return dir / name;
  };
  const auto flipped = corrupt_copy("flip", [](Bytes& b) { b[b.size() / 2] ^= 0x10; });
  expect("dataset bit flip", ErrorCode::CorruptRecord, [&] { Dataset(flipped).load("train"); });
  const auto cut = corrupt_copy("cut", [](Bytes& b) { b.resize(b.size() - 7); });
  expect("dataset truncation", ErrorCode::CorruptRecord, [&] { Dataset(cut).load("train"); });
  const auto magic = corrupt_copy("magic", [](Bytes& b) { b[0] = 'X'; });
  expect("dataset magic", ErrorCode::CorruptRecord, [&] { Dataset(magic).load("train"); });
  {
    fs::remove_all(dir / "ver");
    fs::copy(dir / "a", dir / "ver");
    auto j = nlohmann::json::parse(std::ifstream(dir / "ver" / "manifest.json"));
    j["version"] = 2;
    std::ofstream(dir / "ver" / "manifest.json") << j.dump();
    expect("dataset version", ErrorCode::VersionMismatch, [&] { Dataset{dir / "ver"}; });
  }
  expect("unknown split", ErrorCode::SplitMissing, [&] { Dataset(dir / "a").load("holdout"); });

  Bytes bad = blob;
  bad[bad.size() / 2] ^= 0x01;
  expect("checkpoint bit flip", ErrorCode::CorruptBlob, [&] { deserialize_checkpoint<double>(bad); });
  expect("checkpoint truncation", ErrorCode::CorruptBlob,
         [&] { deserialize_checkpoint<double>(std::span(blob).first(blob.size() - 9)); });
  bad = blob;
  bad[0] = 'X';
  expect("checkpoint magic", ErrorCode::CorruptBlob, [&] { deserialize_checkpoint<double>(bad); });
  bad = blob;
  bad[4] = '2';
  expect("checkpoint format version", ErrorCode::FormatVersionMismatch, [&] { deserialize_checkpoint<double>(bad); });
  expect("checkpoint mode", ErrorCode::ModeMismatch, [&] { deserialize_checkpoint<double>(blob, Mode::Real); });

  // The CLI maps these to the data-format exit code.
  write_file(dir / "flip.ckpt", [&] {
    Bytes b = blob;
    b[b.size() / 2] ^= 0x01;
    return b;
  }());
  const int rc = run_cli("eval --ckpt flip.ckpt --data a", dir);
  if (rc != 4) wrong.push_back("CLI exit code " + std::to_string(rc));

  std::string wrong_list;
  for (const auto& w : wrong) wrong_list += " " + w + ";";
  return {data_same && ckpt_same && wrong.empty(),
          fmt("dataset write-read-write bytes %s; checkpoint %s; 10 corruption cases + CLI exit code: %s",
              data_same ? "identical" : "DIFFER", ckpt_same ? "identical" : "DIFFER",
              wrong.empty() ? "all rejected with the documented codes" : ("wrong code for" + wrong_list).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specseg acceptance criteria"};
  std::vector<int> selected;
  std::string work = "acceptance_work";
  app.add_option("--criterion", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--work", work, "Directory for generated datasets and training runs");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  fs::create_directories(work);
  const fs::path wd = fs::absolute(work);

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient correctness", gradients}},
      {2, {"oracle equivalence", oracles}},
      {3, {"loss identities", loss_identities}},
      {4, {"metric anchors", metric_anchors}},
      {5, {"desk-scale training", [&] { return desk_training(wd); }}},
      {6, {"complex vs real convergence", [&] { return convergence(wd); }}},
      {7, {"LAD sanity", lad_sanity}},
      {8, {"determinism", [&] { return determinism(wd); }}},
      {9, {"format round trips", [&] { return round_trips(wd); }}},
  };
  int failures = 0;
  for (int n : selected) {
    const auto& [name, fn] = criteria.at(n);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d (%s): %s: %s\n", n, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
