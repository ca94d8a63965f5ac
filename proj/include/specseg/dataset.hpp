#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "specseg/io.hpp"
#include "specseg/siggen.hpp"

namespace specseg {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

struct DatasetConfig {
  std::size_t count = 1000;
  std::size_t L = 1024;
  double snr_min_db = -20.0;
  double snr_max_db = 10.0;
  std::size_t signals_min = 1;
  std::size_t signals_max = 10;
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  ComposeConfig compose{};

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::ConfigInvalid, m); };
    if (count == 0) bad("count must be positive");
    if (!is_power_of_two(L) || L < 64 || L > 65536) bad("L must be a power of two in [64, 65536]");
    if (!(snr_min_db <= snr_max_db)) bad("snr range must satisfy min <= max");
    if (signals_min < 1 || signals_max > 10 || signals_min > signals_max) bad("signal count range must lie in [1, 10]");
    double sum = 0.0;
    for (double f : split_fractions) {
      if (f < 0.0) bad("split fractions must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) bad("split fractions must sum to 1");
    if (compose.sample_rate_hz <= 0.0 || compose.guard_hz < 0.0) bad("sample rate and guard band must be positive");
    for (double bw : compose.bandwidths_hz)
      if (bw <= 0.0 || bw >= compose.sample_rate_hz) bad("bandwidths must lie in (0, fs)");
    if (compose.bandwidths_hz.empty() || compose.modulations.empty()) bad("need bandwidth and modulation choices");
  }

  /// Contiguous index ranges [begin, end) of train, val, test.
  std::array<std::size_t, 4> split_bounds() const {
    const auto n_train = static_cast<std::size_t>(std::llround(split_fractions[0] * static_cast<double>(count)));
    const auto n_val = static_cast<std::size_t>(std::llround(split_fractions[1] * static_cast<double>(count)));
    const std::size_t a = std::min(n_train, count);
    const std::size_t b = std::min(a + n_val, count);
    return {0, a, b, count};
  }
};

/// Per-record seed derived from the master seed and the record index.
constexpr std::uint64_t record_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x5851f42d4c957f2dULL));
}

/// Draws record `index`: signal count and SNR uniformly over the configured
/// ranges, then composes the sample.
inline SampleRecord generate_record(const DatasetConfig& cfg, std::size_t index) {
  const std::uint64_t seed = record_seed(cfg.seed, index);
  Rng rng(seed);
  const std::size_t n = cfg.signals_min + rng.below(cfg.signals_max - cfg.signals_min + 1);
  const double snr = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
  SampleRecord rec = compose_sample(n, snr, cfg.L, rng, cfg.compose);
  rec.seed = seed;
  return rec;
}

// ---- record encoding -------------------------------------------------------

inline constexpr char kSplitMagic[8] = {'C', 'M', 'S', 'D', 'S', 'E', 'T', '1'};

inline void encode_record(Bytes& out, const SampleRecord& r) {
  const std::size_t start = out.size();
  put_le(out, r.seed);
  put_le(out, r.snr_db);
  put_le(out, static_cast<std::uint32_t>(r.length()));
  put_le(out, static_cast<std::uint32_t>(r.labels.size()));
  for (const auto& l : r.labels) {
    put_le(out, static_cast<std::uint32_t>(l.bins.f_b));
    put_le(out, static_cast<std::uint32_t>(l.bins.f_e));
    put_le(out, static_cast<std::uint32_t>(l.modulation));
    put_le(out, l.center_offset_hz);
    put_le(out, l.bandwidth_hz);
  }
  for (const auto& v : r.frame.samples.values()) {
    put_le(out, v.real());
    put_le(out, v.imag());
  }
  put_le(out, crc32_of(std::span<const std::uint8_t>(out).subspan(start)));
}

inline std::size_t encoded_record_size(std::size_t L, std::size_t n_labels) {
  return 8 + 8 + 4 + 4 + n_labels * 28 + L * 8 + 4;
}

/// Decodes the record at `offset`; returns the offset just past it.
inline std::size_t decode_record(std::span<const std::uint8_t> in, std::size_t offset, double sample_rate_hz,
                                 SampleRecord& r) {
  auto need = [&](std::size_t n) {
    if (offset + n > in.size()) fail(ErrorCode::CorruptRecord, "record at byte " + std::to_string(offset) + " truncated");
  };
  need(24);
  const auto L = get_le<std::uint32_t>(in, offset + 16);
  const auto n_labels = get_le<std::uint32_t>(in, offset + 20);
  if (L == 0 || L > (1u << 24) || n_labels > 64)
    fail(ErrorCode::CorruptRecord, "record at byte " + std::to_string(offset) + " has an implausible header");
  const std::size_t size = encoded_record_size(L, n_labels);
  need(size);
  const auto body = in.subspan(offset, size - 4);
  if (crc32_of(body) != get_le<std::uint32_t>(in, offset + size - 4))
    fail(ErrorCode::CorruptRecord, "record at byte " + std::to_string(offset) + " fails its checksum");

  r.seed = get_le<std::uint64_t>(in, offset);
  r.snr_db = get_le<double>(in, offset + 8);
  std::size_t p = offset + 24;
  r.labels.resize(n_labels);
  for (auto& l : r.labels) {
    l.bins.f_b = get_le<std::uint32_t>(in, p);
    l.bins.f_e = get_le<std::uint32_t>(in, p + 4);
    try {
      l.modulation = modulation_from_tag(get_le<std::uint32_t>(in, p + 8));
    } catch (const Error& e) {
      fail(ErrorCode::CorruptRecord, e.what());
    }
    l.center_offset_hz = get_le<double>(in, p + 12);
    l.bandwidth_hz = get_le<double>(in, p + 20);
    if (l.bins.f_b > l.bins.f_e || l.bins.f_e >= L) fail(ErrorCode::CorruptRecord, "label outside the spectrum");
    p += 28;
  }
  std::vector<std::complex<float>> s(L);
  for (auto& v : s) {
    v = {get_le<float>(in, p), get_le<float>(in, p + 4)};
    p += 8;
  }
  r.frame = make_frame(std::move(s), sample_rate_hz, 0.0);
  return offset + size;
}

// ---- manifest --------------------------------------------------------------

struct SplitInfo {
  std::string file;
  std::vector<std::uint64_t> offsets;
  std::uint64_t bytes = 0;

  std::size_t count() const { return offsets.size(); }
};

struct DatasetManifest {
  std::uint32_t version = kDatasetVersion;
  DatasetConfig config;
  std::array<SplitInfo, 3> splits;

  std::size_t count() const { return splits[0].count() + splits[1].count() + splits[2].count(); }
};

inline std::size_t split_index(const std::string& name) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i)
    if (name == kSplitNames[i]) return i;
  fail(ErrorCode::SplitMissing, "unknown split '" + name + "' (expected train, val or test)");
}

inline nlohmann::json manifest_json(const DatasetManifest& m) {
  const auto& c = m.config;
  std::vector<std::string> mods;
  for (auto mod : c.compose.modulations) mods.push_back(to_string(mod));
  nlohmann::json splits = nlohmann::json::object();
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = m.splits[i];
    splits[kSplitNames[i]] = {{"file", s.file}, {"count", s.count()}, {"bytes", s.bytes}, {"offsets", s.offsets}};
  }
  return {{"format", "specseg-dataset"},
          {"version", m.version},
          {"count", m.count()},
          {"L", c.L},
          {"sample_rate_hz", c.compose.sample_rate_hz},
          {"snr_db", {c.snr_min_db, c.snr_max_db}},
          {"signals", {c.signals_min, c.signals_max}},
          {"bandwidths_hz", c.compose.bandwidths_hz},
          {"guard_hz", c.compose.guard_hz},
          {"modulations", mods},
          {"rrc_rolloff", c.compose.shaping.rrc_rolloff},
          {"rrc_span_symbols", c.compose.shaping.rrc_span},
          {"gmsk_bt", c.compose.shaping.gmsk_bt},
          {"split_fractions", c.split_fractions},
          {"seed", c.seed},
          {"label_mapping",
           "centered bins: bin k covers frequency (k - L/2) * fs / L relative to the receiver center; a signal "
           "occupying [f_lo, f_hi] is labelled [ceil(f_lo / df) + L/2, floor(f_hi / df) + L/2]"},
          {"splits", splits}};
}

inline DatasetManifest parse_manifest(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    if (j.at("format").get<std::string>() != "specseg-dataset")
      fail(ErrorCode::VersionMismatch, "not a specseg dataset manifest");
    m.version = j.at("version").get<std::uint32_t>();
    if (m.version != kDatasetVersion)
      fail(ErrorCode::VersionMismatch, "dataset version " + std::to_string(m.version) + ", reader supports " +
                                           std::to_string(kDatasetVersion));
    auto& c = m.config;
    c.L = j.at("L").get<std::size_t>();
    c.compose.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    c.snr_min_db = j.at("snr_db").at(0).get<double>();
    c.snr_max_db = j.at("snr_db").at(1).get<double>();
    c.signals_min = j.at("signals").at(0).get<std::size_t>();
    c.signals_max = j.at("signals").at(1).get<std::size_t>();
    c.compose.bandwidths_hz = j.at("bandwidths_hz").get<std::vector<double>>();
    c.compose.guard_hz = j.at("guard_hz").get<double>();
    c.compose.modulations.clear();
    for (const auto& s : j.at("modulations")) c.compose.modulations.push_back(parse_modulation(s.get<std::string>()));
    c.compose.shaping.rrc_rolloff = j.at("rrc_rolloff").get<double>();
    c.compose.shaping.rrc_span = j.at("rrc_span_symbols").get<std::size_t>();
    c.compose.shaping.gmsk_bt = j.at("gmsk_bt").get<double>();
    c.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& s = j.at("splits").at(kSplitNames[i]);
      m.splits[i].file = s.at("file").get<std::string>();
      m.splits[i].offsets = s.at("offsets").get<std::vector<std::uint64_t>>();
      m.splits[i].bytes = s.at("bytes").get<std::uint64_t>();
      if (s.at("count").get<std::size_t>() != m.splits[i].offsets.size())
        fail(ErrorCode::CorruptRecord, std::string("manifest count disagrees with offsets for ") + kSplitNames[i]);
    }
    c.count = m.count();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptRecord, std::string("manifest: ") + e.what());
  }
  return m;
}

/// Worker count: SPECSEG_THREADS if set (>= 1), else the hardware count.
inline std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SPECSEG_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

/// Generates records [begin, end) in parallel. Each record depends only on its
/// own seed, so the result does not depend on the thread count.
inline std::vector<SampleRecord> generate_records(const DatasetConfig& cfg, std::size_t begin, std::size_t end) {
  std::vector<SampleRecord> out(end - begin);
  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(1, out.size()));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < out.size(); i += threads) out[i] = generate_record(cfg, begin + i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Encodes one split file; fills the offsets and size of `info`.
inline Bytes encode_split(std::span<const SampleRecord> records, SplitInfo& info) {
  Bytes out(std::begin(kSplitMagic), std::end(kSplitMagic));
  info.offsets.clear();
  for (const auto& r : records) {
    info.offsets.push_back(out.size());
    encode_record(out, r);
  }
  info.bytes = out.size();
  return out;
}

/// Writes manifest.json and the three split files into `dir`.
inline DatasetManifest write_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg,
                                     std::span<const SampleRecord> records) {
  cfg.validate();
  require(records.size() == cfg.count, ErrorCode::ConfigInvalid, "record count differs from config");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::DiskWrite, "cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.config = cfg;
  const auto b = cfg.split_bounds();
  for (std::size_t i = 0; i < 3; ++i) {
    m.splits[i].file = std::string(kSplitNames[i]) + ".bin";
    const Bytes bytes = encode_split(records.subspan(b[i], b[i + 1] - b[i]), m.splits[i]);
    write_file(dir / m.splits[i].file, bytes);
  }
  const std::string text = manifest_json(m).dump(2) + "\n";
  write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return m;
}

inline DatasetManifest generate_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg) {
  cfg.validate();
  const auto records = generate_records(cfg, 0, cfg.count);
  return write_dataset(dir, cfg, records);
}

/// Reader over a dataset directory. Splits are loaded whole; a desk-scale
/// split of a few thousand frames is tens of megabytes.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path dir) : dir_(std::move(dir)) {
    const Bytes text = read_file(dir_ / "manifest.json");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::CorruptRecord, std::string("manifest.json: ") + e.what());
    }
    manifest_ = parse_manifest(j);
  }

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& directory() const { return dir_; }
  std::size_t split_size(const std::string& split) const { return manifest_.splits[split_index(split)].count(); }

  std::vector<SampleRecord> load(const std::string& split) const {
    std::vector<SampleRecord> out;
    for_each(split, [&](SampleRecord&& r) { out.push_back(std::move(r)); });
    return out;
  }

  /// Streams the records of a split in stored order.
  template <typename F>
  void for_each(const std::string& split, F&& f) const {
    const auto& info = manifest_.splits[split_index(split)];
    const Bytes bytes = read_file(dir_ / info.file);
    if (bytes.size() < sizeof(kSplitMagic) || !std::equal(std::begin(kSplitMagic), std::end(kSplitMagic), bytes.begin()))
      fail(ErrorCode::CorruptRecord, info.file + ": bad magic");
    if (bytes.size() != info.bytes)
      fail(ErrorCode::CorruptRecord, info.file + " is " + std::to_string(bytes.size()) + " bytes, manifest says " +
                                         std::to_string(info.bytes));
    std::size_t off = sizeof(kSplitMagic);
    for (std::uint64_t expected : info.offsets) {
      if (off != expected) fail(ErrorCode::CorruptRecord, info.file + ": record offset mismatch");
      SampleRecord r;
      off = decode_record(bytes, off, manifest_.config.compose.sample_rate_hz, r);
      if (r.length() != manifest_.config.L) fail(ErrorCode::CorruptRecord, info.file + ": record length differs from L");
      f(std::move(r));
    }
    if (off != bytes.size()) fail(ErrorCode::CorruptRecord, info.file + ": trailing bytes after last record");
  }

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
};

}  // namespace specseg
