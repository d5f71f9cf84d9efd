#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "drbert/error.hpp"
#include "drbert/model.hpp"
#include "json.hpp"

namespace drbert {

// Layout:
//   8 bytes   magic "DRBERT01"
//   u64 LE    header length
//   header    UTF-8 JSON {format_version, config, tensors:[{name, shape, dtype, offset}]}
//   payload   little-endian f64 tensors, offsets relative to payload start
//   u32 LE    CRC32 of the payload
inline constexpr std::string_view kCheckpointMagic = "DRBERT01";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

/// Serialized bytes of a model; save_checkpoint() writes exactly these.
inline std::string checkpoint_bytes(const Model& model) {
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;
  for (const auto& p : model.parameters()) {
    const Tensor& t = p.var->value;
    manifest.push_back({{"name", p.name}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", payload.size()}});
    for (double v : t.data()) detail::put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion}, {"config", model.config()}, {"tensors", manifest}};
  std::string head = header.dump();

  std::string out(kCheckpointMagic);
  detail::put_u64(out, head.size());
  out += head;
  out += payload;
  std::uint32_t crc = detail::crc32_of(payload);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((crc >> (8 * i)) & 0xFF));
  return out;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::string bytes = checkpoint_bytes(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: write failed for " + path);
}

namespace detail {

inline Model parse_checkpoint_impl(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(Kind::kNotACheckpoint, "checkpoint: not a checkpoint (bad magic header)");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = kCheckpointMagic.size();
  if (bytes.size() < pos + 8) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated before header length");
  std::uint64_t head_len = detail::get_u64(raw + pos);
  pos += 8;
  if (head_len > bytes.size() - pos) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, head_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: unreadable header: ") + e.what());
  }
  pos += head_len;

  int version = header.value("format_version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersionMismatch, "checkpoint: format version " + std::to_string(version) +
                                                      ", expected " + std::to_string(kCheckpointVersion));
  }

  ModelConfig cfg;
  try {
    cfg = header.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: bad config: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: bad config: ") + e.what());
  }

  const auto& tensors = header.at("tensors");
  std::set<std::size_t> layer_groups;
  for (const auto& t : tensors) {
    const std::string name = t.at("name").get<std::string>();
    if (name.rfind("layers.", 0) == 0) layer_groups.insert(std::stoul(name.substr(7, name.find('.', 7) - 7)));
  }
  if (layer_groups.size() != cfg.n_layers) {
    throw CheckpointError(Kind::kLayerCountMismatch, "checkpoint: config has n_layers=" + std::to_string(cfg.n_layers) +
                                                         " but file holds " + std::to_string(layer_groups.size()) +
                                                         " layer groups");
  }

  Model model(cfg, 0);
  const auto& params = model.parameters();
  if (tensors.size() != params.size()) {
    throw CheckpointError(Kind::kShapeMismatch, "checkpoint: file holds " + std::to_string(tensors.size()) +
                                                    " tensors, config implies " + std::to_string(params.size()));
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    const std::string name = t.at("name").get<std::string>();
    Shape shape = t.at("shape").get<Shape>();
    if (name != params[i].name || shape != params[i].var->value.shape() || t.value("dtype", "") != "f64") {
      throw CheckpointError(Kind::kShapeMismatch, "checkpoint: tensor '" + name + "' " + shape_str(shape) +
                                                      " does not match expected '" + params[i].name + "' " +
                                                      shape_str(params[i].var->value.shape()));
    }
  }

  std::size_t payload_len = 0;
  for (const auto& p : params) payload_len += p.var->value.size() * 8;
  if (bytes.size() < pos + payload_len + 4) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated payload");
  std::string_view payload = bytes.substr(pos, payload_len);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(raw[pos + payload_len + i]) << (8 * i);
  if (stored != detail::crc32_of(payload)) throw CheckpointError(Kind::kCorrupt, "checkpoint: payload CRC mismatch");

  std::vector<Tensor> values;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    const std::string name = t.at("name").get<std::string>();
    Shape shape = t.at("shape").get<Shape>();
    std::size_t offset = t.at("offset").get<std::size_t>();
    std::size_t n = shape_numel(shape);
    if (offset + n * 8 > payload_len) throw CheckpointError(Kind::kTruncated, "checkpoint: tensor '" + name + "' overruns payload");
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      data[k] = std::bit_cast<double>(detail::get_u64(raw + pos + offset + 8 * k));
    }
    values.emplace_back(shape, std::move(data));
  }
  model.assign(values);
  return model;
}

}  // namespace detail

inline Model parse_checkpoint(std::string_view bytes) {
  try {
    return detail::parse_checkpoint_impl(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt, std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt, std::string("checkpoint: invalid config: ") + e.what());
  } catch (const std::logic_error& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt, std::string("checkpoint: malformed header: ") + e.what());
  }
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace drbert
