#include <gtest/gtest.h>

#include <unistd.h>

#include <numbers>

#include "specseg/pipeline.hpp"

using namespace specseg;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no specseg::Error thrown";
  return ErrorCode::Io;
}

// High-SNR single wide signals on 256 bins: easy enough for the miniature
// network to make visible progress in a few epochs.
std::vector<SampleRecord> easy_records(std::size_t n, std::uint64_t seed) {
  DatasetConfig c;
  c.count = n;
  c.L = 256;
  c.snr_min_db = 10.0;
  c.snr_max_db = 10.0;
  c.signals_min = 1;
  c.signals_max = 1;
  c.compose.bandwidths_hz = {1e6, 2e6};
  c.seed = seed;
  return generate_records(c, 0, n);
}

TrainConfig small_train(Mode mode = Mode::Complex) {
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = 3;
  t.seed = 5;
  t.mode = mode;
  t.loss = mode == Mode::Complex ? LossKind::Cfl : LossKind::Rfl;
  return t;
}

std::vector<std::string> rows_without_seconds(const std::vector<EpochReport>& reports) {
  std::vector<std::string> out;
  for (auto r : reports) {
    r.seconds = 0.0;
    out.push_back(epoch_csv_row(r));
  }
  return out;
}

struct Splits {
  std::vector<SampleRecord> train = easy_records(16, 1);
  std::vector<SampleRecord> val = easy_records(6, 2);
};

const Splits& splits() {
  static const Splits s;
  return s;
}

}  // namespace

TEST(BatchRanges, ChunksAndMergesTrailingSingleton) {
  using R = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(batch_ranges(130, 64), (R{{0, 64}, {64, 128}, {128, 130}}));
  EXPECT_EQ(batch_ranges(129, 64), (R{{0, 64}, {64, 129}}));
  EXPECT_EQ(batch_ranges(64, 64), (R{{0, 64}}));
  EXPECT_EQ(batch_ranges(5, 64), (R{{0, 5}}));
}

TEST(TrainConfig, RejectsBadSettings) {
  TrainConfig t;
  t.batch_size = 0;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::ConfigInvalid);
  t = TrainConfig{};
  t.stop_patience = 0;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::ConfigInvalid);
  t = TrainConfig{};
  t.mode = Mode::Real;  // complex focal loss in real mode
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::ConfigInvalid);
  EXPECT_EQ(parse_loss("rbce"), LossKind::Rbce);
  EXPECT_EQ(code_of([] { parse_loss("mse"); }), ErrorCode::ConfigInvalid);
}

TEST(Train, ZeroEpochsReturnsTheInitialModel) {
  const auto mc = ModelConfig::miniature(Mode::Complex, 3);
  auto tc = small_train();
  tc.max_epochs = 0;
  const auto r = train<float>({}, {}, mc, tc);
  EXPECT_TRUE(r.reports.empty());
  EXPECT_EQ(r.best_epoch, 0u);
  Model<float> fresh(mc);
  EXPECT_EQ(r.best_checkpoint, serialize_checkpoint(fresh, 0));
}

TEST(Train, EmptyOrMismatchedInputsAreRejected) {
  const auto mc = ModelConfig::miniature(Mode::Complex, 3);
  const auto& s = splits();
  EXPECT_EQ(code_of([&] { train<float>({}, s.val, mc, small_train()); }), ErrorCode::DatasetEmpty);
  EXPECT_EQ(code_of([&] { train<float>(s.train, {}, mc, small_train()); }), ErrorCode::DatasetEmpty);
  EXPECT_EQ(code_of([&] { train<float>(s.train, s.val, mc, small_train(Mode::Real)); }), ErrorCode::ConfigInvalid);
  const auto wrong_length = ModelConfig::for_bins(512, Mode::Complex, 3);
  EXPECT_EQ(code_of([&] { train<float>(s.train, s.val, wrong_length, small_train()); }), ErrorCode::ConfigInvalid);
}

TEST(Train, LossFallsOverTheFirstEpochs) {
  for (Mode mode : {Mode::Complex, Mode::Real}) {
    const auto& s = splits();
    // Fixed inputs, so each epoch sees the same data and the loss must fall.
    auto cfg = small_train(mode);
    cfg.shift_augment = false;
    const auto r = train<float>(s.train, s.val, ModelConfig::miniature(mode, 7), cfg);
    ASSERT_EQ(r.reports.size(), 3u);
    EXPECT_LT(r.reports[1].train_loss, r.reports[0].train_loss) << to_string(mode);
    EXPECT_LT(r.reports[2].train_loss, r.reports[1].train_loss) << to_string(mode);
    for (const auto& rep : r.reports) {
      EXPECT_GE(rep.val_acc05, 0.0);
      EXPECT_LE(rep.val_acc05, 1.0);
      EXPECT_GE(rep.seconds, 0.0);
      EXPECT_DOUBLE_EQ(rep.lr, 1e-3);
    }
  }
}

TEST(Train, SameSeedGivesIdenticalReportsAndCheckpoints) {
  const auto& s = splits();
  const auto mc = ModelConfig::miniature(Mode::Complex, 9);
  const auto a = train<double>(s.train, s.val, mc, small_train());
  const auto b = train<double>(s.train, s.val, mc, small_train());
  EXPECT_EQ(rows_without_seconds(a.reports), rows_without_seconds(b.reports));
  EXPECT_EQ(a.best_checkpoint, b.best_checkpoint);
  auto other = small_train();
  other.seed = 6;
  const auto c = train<double>(s.train, s.val, mc, other);
  EXPECT_NE(rows_without_seconds(a.reports), rows_without_seconds(c.reports));
}

TEST(Train, BestCheckpointHoldsTheBestEpoch) {
  const auto& s = splits();
  const auto r = train<float>(s.train, s.val, ModelConfig::miniature(Mode::Complex, 7), small_train());
  ASSERT_GE(r.best_epoch, 1u);
  const auto& best = r.reports[r.best_epoch - 1];
  for (const auto& rep : r.reports) EXPECT_FALSE(better_epoch(rep, best)) << "epoch " << rep.epoch;
  auto loaded = deserialize_checkpoint<float>(r.best_checkpoint);
  EXPECT_EQ(loaded.header.epoch, r.best_epoch);
  // Re-validating the stored model reproduces the recorded metrics.
  const auto v = validate(loaded.model, prepare<float>(s.val), small_train());
  EXPECT_DOUBLE_EQ(v.acc05, best.val_acc05);
  EXPECT_DOUBLE_EQ(v.loss, best.val_loss);
}

TEST(Train, ValidationDoesNotTouchTheModel) {
  Model<float> m(ModelConfig::miniature(Mode::Complex, 2));
  m.forward(prepare<float>(splits().train).spectra, BnMode::Train);
  const auto before = serialize_checkpoint(m);
  validate(m, prepare<float>(splits().val), small_train());
  EXPECT_EQ(serialize_checkpoint(m), before);
}

TEST(FineTune, ZeroLearningRateKeepsParameters) {
  const auto& s = splits();
  const auto base = train<float>(s.train, s.val, ModelConfig::miniature(Mode::Complex, 7), small_train());
  auto tc = small_train();
  tc.lr_initial = 0.0;
  tc.lr_reduced = 0.0;
  tc.max_epochs = 1;
  const auto ft = fine_tune<float>(base.best_checkpoint, s.train, s.val, tc);
  auto a = deserialize_checkpoint<float>(base.best_checkpoint);
  auto b = deserialize_checkpoint<float>(ft.best_checkpoint);
  std::vector<float> pa, pb;
  a.model.for_each_real_param([&](const std::string&, std::span<float> v, std::span<float>) { pa.insert(pa.end(), v.begin(), v.end()); });
  b.model.for_each_real_param([&](const std::string&, std::span<float> v, std::span<float>) { pb.insert(pb.end(), v.begin(), v.end()); });
  EXPECT_EQ(pa, pb);
}

TEST(FineTune, SameDataDoesNotRaiseValidationLoss) {
  const auto& s = splits();
  const auto base = train<float>(s.train, s.val, ModelConfig::miniature(Mode::Complex, 7), small_train());
  const double start = base.reports[base.best_epoch - 1].val_loss;
  const auto ft = fine_tune<float>(base.best_checkpoint, s.train, s.val, small_train());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : ft.reports) best = std::min(best, r.val_loss);
  EXPECT_LE(best, start + small_train().min_delta);
}

TEST(FineTune, ModeMismatchIsRefused) {
  Model<float> real(ModelConfig::miniature(Mode::Real, 1));
  const auto ckpt = serialize_checkpoint(real);
  const auto& s = splits();
  EXPECT_EQ(code_of([&] { fine_tune<float>(ckpt, s.train, s.val, small_train(Mode::Complex)); }),
            ErrorCode::ModeMismatch);
}

TEST(MetricTable, PerfectAndEmptyPredictors) {
  std::vector<std::vector<Segment>> truths{{{10, 20}}, {{5, 9}, {40, 60}}, {{100, 130}}};
  const std::vector<double> snr{0.2, 0.4, 3.0};
  const auto perfect = metric_table(truths, truths, snr);
  for (const auto* r : {&perfect.overall, &perfect.rows[0], &perfect.rows[1]}) {
    EXPECT_EQ(r->accuracy, 1.0);
    EXPECT_EQ(r->mean_iou, 1.0);
    EXPECT_EQ(r->recall05, 1.0);
    EXPECT_EQ(r->recall09, 1.0);
  }
  ASSERT_EQ(perfect.rows.size(), 2u);
  EXPECT_EQ(*perfect.rows[0].snr_db, 0);
  EXPECT_EQ(perfect.rows[0].n_samples, 2u);
  EXPECT_EQ(*perfect.rows[1].snr_db, 3);
  const std::vector<std::vector<Segment>> none(3);
  const auto empty = metric_table(none, truths, snr);
  EXPECT_EQ(empty.overall.accuracy, 0.0);
  EXPECT_EQ(empty.overall.recall05, 0.0);
}

TEST(MetricTable, MatchesPerSampleRecomputation) {
  Rng rng(4);
  std::vector<std::vector<Segment>> preds(200), truths(200);
  std::vector<double> snr(200);
  for (std::size_t i = 0; i < 200; ++i) {
    for (auto* v : {&preds[i], &truths[i]}) {
      std::size_t pos = rng.below(20);
      const std::size_t n = rng.below(4);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t len = 1 + rng.below(30);
        v->push_back({pos, pos + len});
        pos += len + 2 + rng.below(40);
      }
    }
    snr[i] = rng.uniform(0.0, 10.0);
  }
  const auto t = metric_table(preds, truths, snr);
  const auto d5 = detection_metrics(preds, truths, 0.5);
  const auto d9 = detection_metrics(preds, truths, 0.9);
  EXPECT_NEAR(t.overall.accuracy, d5.accuracy, 1e-12);
  EXPECT_NEAR(t.overall.mean_iou, d5.mean_iou, 1e-12);
  EXPECT_NEAR(t.overall.recall05, d5.recall, 1e-12);
  EXPECT_NEAR(t.overall.recall09, d9.recall, 1e-12);
  std::size_t n = 0;
  for (const auto& r : t.rows) n += r.n_samples;
  EXPECT_EQ(n, 200u);
}

TEST(MetricTable, CsvLayout) {
  const std::vector<std::vector<Segment>> truths{{{10, 20}}};
  const auto csv = metric_csv(metric_table(truths, truths, std::vector<double>{-3.4}));
  EXPECT_EQ(csv,
            "snr_db,accuracy,mean_iou,recall05,recall09,n_samples\n"
            "-3,1.000000,1.000000,1.000000,1.000000,1\n"
            "mean,1.000000,1.000000,1.000000,1.000000,1\n");
}

TEST(Evaluate, EmptySplitIsMissing) {
  DatasetConfig c;
  c.count = 10;
  c.L = 256;
  c.signals_max = 1;
  c.split_fractions = {0.8, 0.2, 0.0};
  const auto dir = std::filesystem::temp_directory_path() / ("specseg_eval_" + std::to_string(::getpid()));
  generate_dataset(dir, c);
  Dataset ds(dir);
  Model<float> m(ModelConfig::miniature());
  EXPECT_EQ(code_of([&] { evaluate(m, ds, "test"); }), ErrorCode::SplitMissing);
  EXPECT_EQ(evaluate(m, ds, "val").overall.n_samples, 2u);
  std::filesystem::remove_all(dir);
}

TEST(EpochCsv, RoundTrips) {
  std::vector<EpochReport> reps{{1, 0.5, 0.25, 0.1, 0.3, 12.345, 1e-3}, {2, 0.125, 1.0 / 3.0, 0.2, 0.4, 11.0, 1e-3}};
  const auto text = epoch_csv(reps);
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,train_loss,val_loss,val_ciou,val_acc05,seconds");
  const auto back = parse_epoch_csv(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].val_loss, 1.0 / 3.0);
  EXPECT_EQ(back[0].seconds, 12.345);
}

TEST(TimingReport, EpochsToTarget) {
  std::vector<EpochReport> reps(3);
  const double acc[] = {0.5, 0.9, 0.95};
  const double sec[] = {10.0, 20.0, 33.0};
  for (std::size_t i = 0; i < 3; ++i) {
    reps[i].epoch = i + 1;
    reps[i].val_acc05 = acc[i];
    reps[i].seconds = sec[i];
  }
  const auto t = timing_report(reps, 0.9);
  ASSERT_TRUE(t.epochs_to_target.has_value());
  EXPECT_EQ(*t.epochs_to_target, 2u);
  EXPECT_DOUBLE_EQ(t.avg_epoch_seconds, 21.0);
  EXPECT_DOUBLE_EQ(t.total_seconds, 63.0);
  EXPECT_FALSE(timing_report(reps, 0.99).epochs_to_target.has_value());
}

TEST(RandomShift, IsAFrequencyTranslationThatKeepsSegmentsInside) {
  const auto recs = easy_records(4, 11);
  const auto data = prepare<double>(recs);
  const std::size_t L = recs[0].length();
  bool saw_up = false, saw_down = false;
  for (std::uint64_t draw = 0; draw < 40; ++draw) {
    const std::size_t i = draw % recs.size();
    auto s = data.spectra[i];
    auto target = data.targets[i];
    Rng rng(100 + draw);
    random_shift(s, target, data.truths[i], rng);

    // Recover the shift from the mask, then check the spectrum against the
    // DFT of the time-domain signal mixed up by k bins.
    const auto before = data.truths[i];
    const auto after = extract_segments(target.o_x);
    ASSERT_EQ(after.size(), before.size());
    const long k = static_cast<long>(after[0].f_b) - static_cast<long>(before[0].f_b);
    for (std::size_t j = 0; j < before.size(); ++j) {
      EXPECT_EQ(static_cast<long>(after[j].f_b) - static_cast<long>(before[j].f_b), k);
      EXPECT_EQ(after[j].f_e - after[j].f_b, before[j].f_e - before[j].f_b);
    }
    EXPECT_EQ(target.o_x, target.o_y);
    saw_up |= k > 0;
    saw_down |= k < 0;

    std::vector<std::complex<double>> mixed(L);
    for (std::size_t n = 0; n < L; ++n)
      mixed[n] = std::complex<double>(recs[i].frame.samples[n]) *
                 std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(n) /
                                     static_cast<double>(L));
    const auto ref = dft(make_frame(std::move(mixed)));
    for (std::size_t f = 0; f < L; ++f) EXPECT_NEAR(std::abs(s.coeffs[f] - ref.coeffs[f]), 0.0, 1e-9);
  }
  EXPECT_TRUE(saw_up);
  EXPECT_TRUE(saw_down);
}

TEST(RandomShift, EmptyFrameStillMoves) {
  std::vector<std::complex<double>> x(16);
  x[0] = 1.0;  // flat spectrum
  x[1] = {0.0, 1.0};
  auto s = fft(make_frame(std::move(x)));
  const auto orig = s;
  OccupancyMask m{std::vector<std::uint8_t>(16, 0), std::vector<std::uint8_t>(16, 0)};
  bool moved = false;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto t = orig;
    Rng rng(seed);
    random_shift(t, m, {}, rng);
    moved |= t.coeffs.values()[0] != orig.coeffs.values()[0];
  }
  EXPECT_TRUE(moved);
}
