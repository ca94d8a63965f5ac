#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "specseg/io.hpp"
#include "specseg/model.hpp"

namespace specseg {

//  "CMSN1" | u32 header_len | header JSON | parameter blob | buffer blob | u32 CRC32
//  The CRC covers every preceding byte. See docs/FORMATS.md.
inline constexpr char kCheckpointMagic[5] = {'C', 'M', 'S', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  ModelConfig config;
  Precision precision = Precision::Single;
  std::size_t epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
  std::size_t parameter_scalars = 0;
  std::size_t buffer_scalars = 0;

  Mode mode() const { return config.mode; }
  std::size_t scalar_width() const { return precision == Precision::Single ? 4 : 8; }
};

inline std::string to_string(Precision p) { return p == Precision::Single ? "float32" : "float64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::Single;
  if (s == "float64") return Precision::Double;
  fail(ErrorCode::FormatVersionMismatch, "unknown precision '" + s + "'");
}

inline nlohmann::json header_json(const CheckpointHeader& h) {
  return {{"format_version", kCheckpointVersion}, {"config", h.config},
          {"mode", to_string(h.config.mode)},      {"precision", to_string(h.precision)},
          {"epoch", h.epoch},                      {"metrics", h.metrics},
          {"parameter_scalars", h.parameter_scalars}, {"buffer_scalars", h.buffer_scalars}};
}

namespace detail {

struct ParsedCheckpoint {
  CheckpointHeader header;
  std::size_t blob_offset = 0;
};

inline ParsedCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t magic_len = sizeof(kCheckpointMagic);
  require(bytes.size() >= magic_len + 8, ErrorCode::CorruptBlob, "checkpoint too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    fail(ErrorCode::CorruptBlob, "not a checkpoint file (bad magic)");
  if (bytes[4] != static_cast<std::uint8_t>(kCheckpointMagic[4]))
    fail(ErrorCode::FormatVersionMismatch, "unsupported checkpoint magic version");
  const std::size_t body = bytes.size() - 4;
  if (crc32_of(bytes.first(body)) != get_le<std::uint32_t>(bytes, body))
    fail(ErrorCode::CorruptBlob, "checkpoint checksum mismatch");

  const auto hlen = get_le<std::uint32_t>(bytes, magic_len);
  const std::size_t hstart = magic_len + 4;
  require(hstart + hlen <= body, ErrorCode::CorruptBlob, "checkpoint header overruns file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(hstart),
                              bytes.begin() + static_cast<std::ptrdiff_t>(hstart + hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptBlob, std::string("checkpoint header: ") + e.what());
  }
  ParsedCheckpoint out;
  try {
    if (j.at("format_version").get<std::uint32_t>() != kCheckpointVersion)
      fail(ErrorCode::FormatVersionMismatch, "checkpoint format version " + j.at("format_version").dump());
    auto& h = out.header;
    h.config = j.at("config").get<ModelConfig>();
    h.precision = parse_precision(j.at("precision").get<std::string>());
    h.epoch = j.at("epoch").get<std::size_t>();
    h.metrics = j.at("metrics");
    h.parameter_scalars = j.at("parameter_scalars").get<std::size_t>();
    h.buffer_scalars = j.at("buffer_scalars").get<std::size_t>();
    if (parse_mode(j.at("mode").get<std::string>()) != h.config.mode)
      fail(ErrorCode::CorruptBlob, "checkpoint mode tag disagrees with its config");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptBlob, std::string("checkpoint header: ") + e.what());
  }
  out.blob_offset = hstart + hlen;
  const auto& h = out.header;
  const std::size_t expect = (h.parameter_scalars + h.buffer_scalars) * h.scalar_width();
  require(body - out.blob_offset == expect, ErrorCode::CorruptBlob,
          "checkpoint blob has " + std::to_string(body - out.blob_offset) + " bytes, header declares " +
              std::to_string(expect));
  return out;
}

}  // namespace detail

/// Reads only the header, e.g. to pick the precision to load with.
inline CheckpointHeader read_checkpoint_header(std::span<const std::uint8_t> bytes) {
  return detail::parse_checkpoint(bytes).header;
}

template <Real R>
Bytes serialize_checkpoint(Model<R>& model, std::size_t epoch = 0,
                           const nlohmann::json& metrics = nlohmann::json::object()) {
  CheckpointHeader h{model.config(), precision_of<R>(), epoch, metrics, model.parameter_scalars(),
                     model.buffer_scalars()};
  const std::string header = header_json(h).dump();
  Bytes out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + (h.parameter_scalars + h.buffer_scalars) * sizeof(R) + 4);
  auto append = [&out](std::span<const R> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size_bytes());
  };
  model.for_each_real_param([&](const std::string&, std::span<R> v, std::span<R>) { append(v); });
  model.for_each_buffer([&](std::span<R> v) { append(v); });
  put_le(out, crc32_of(out));
  return out;
}

template <Real R>
struct LoadedCheckpoint {
  CheckpointHeader header;
  Model<R> model;
};

/// Rebuilds the model and restores parameters and running statistics.
/// `expected_mode`, when given, must match the stored mode (ModeMismatch).
template <Real R>
LoadedCheckpoint<R> deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                           std::optional<Mode> expected_mode = std::nullopt) {
  auto parsed = detail::parse_checkpoint(bytes);
  const auto& h = parsed.header;
  if (expected_mode && *expected_mode != h.mode())
    fail(ErrorCode::ModeMismatch, "checkpoint holds a " + to_string(h.mode()) + "-mode model, expected " +
                                      to_string(*expected_mode));
  if (h.precision != precision_of<R>())
    fail(ErrorCode::FormatVersionMismatch, "checkpoint precision is " + to_string(h.precision));
  try {
    h.config.validate();
  } catch (const Error& e) {
    fail(ErrorCode::CorruptBlob, std::string("checkpoint config: ") + e.what());
  }
  LoadedCheckpoint<R> out{h, Model<R>(h.config)};
  require(out.model.parameter_scalars() == h.parameter_scalars && out.model.buffer_scalars() == h.buffer_scalars,
          ErrorCode::CorruptBlob, "checkpoint scalar counts do not match its config");
  std::size_t off = parsed.blob_offset;
  auto take = [&](std::span<R> v) {
    std::memcpy(v.data(), bytes.data() + off, v.size_bytes());
    off += v.size_bytes();
  };
  out.model.for_each_real_param([&](const std::string&, std::span<R> v, std::span<R>) { take(v); });
  out.model.for_each_buffer(take);
  return out;
}

template <Real R>
void save_checkpoint(const std::filesystem::path& path, Model<R>& model, std::size_t epoch = 0,
                     const nlohmann::json& metrics = nlohmann::json::object()) {
  write_file(path, serialize_checkpoint(model, epoch, metrics));
}

template <Real R>
LoadedCheckpoint<R> load_checkpoint(const std::filesystem::path& path,
                                    std::optional<Mode> expected_mode = std::nullopt) {
  return deserialize_checkpoint<R>(read_file(path), expected_mode);
}

}  // namespace specseg
