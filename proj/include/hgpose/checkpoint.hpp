#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgpose/model.hpp"

namespace hgpose {

using json = nlohmann::json;

inline json to_json(const ModelConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"input_hw", {c.input_height, c.input_width}},
              {"encoder_channels", c.encoder_channels},
              {"encoder_block_counts", c.encoder_block_counts},
              {"decoder_channels", c.decoder_channels},
              {"final_conv_channels", c.final_conv_channels},
              {"regressor_hidden", c.regressor_hidden},
              {"dropout_prob", c.dropout_prob},
              {"width_multiplier", c.width_multiplier}};
}

/// Missing keys keep their defaults, so partial configs are accepted.
inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("input_hw")) {
      c.input_height = j.at("input_hw").at(0).get<std::size_t>();
      c.input_width = j.at("input_hw").at(1).get<std::size_t>();
    }
    if (j.contains("encoder_channels")) c.encoder_channels = j.at("encoder_channels").get<std::vector<std::size_t>>();
    if (j.contains("encoder_block_counts"))
      c.encoder_block_counts = j.at("encoder_block_counts").get<std::vector<std::size_t>>();
    if (j.contains("decoder_channels")) c.decoder_channels = j.at("decoder_channels").get<std::vector<std::size_t>>();
    if (j.contains("final_conv_channels")) c.final_conv_channels = j.at("final_conv_channels").get<std::size_t>();
    if (j.contains("regressor_hidden")) c.regressor_hidden = j.at("regressor_hidden").get<std::size_t>();
    if (j.contains("dropout_prob")) c.dropout_prob = j.at("dropout_prob").get<double>();
    if (j.contains("width_multiplier")) c.width_multiplier = j.at("width_multiplier").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// File layout: u64 LE header length N | N bytes of JSON header | f32 LE
// payload, tensors contiguous in header order. byte_offset counts from the
// start of the payload.

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParameterStore<float> tensors;
  json extra = json::object();  // header keys other than format_version/config/tensors
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                             std::uint32_t(p[3]) << 24;
  return std::bit_cast<float>(bits);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IO, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::IO, "read failed for " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IO, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IO, "write failed for " + path.string());
}

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const ModelConfig& config, const ParameterStore<T>& tensors,
                              const json& extra = json::object()) {
  json header = extra;
  header["format_version"] = kCheckpointFormatVersion;
  header["config"] = to_json(config);
  json list = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : tensors.entries()) {
    const std::uint64_t len = 4 * e.tensor.size();
    list.push_back({{"name", e.name}, {"dtype", "f32"}, {"shape", e.tensor.shape()}, {"byte_offset", offset},
                    {"byte_length", len}});
    offset += len;
  }
  header["tensors"] = std::move(list);
  const std::string text = header.dump();
  std::string out;
  out.reserve(8 + text.size() + offset);
  detail::put_u64_le(out, text.size());
  out += text;
  for (const auto& e : tensors.entries())
    for (T v : e.tensor.values()) detail::put_f32_le(out, static_cast<float>(v));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  auto corrupt = [](const std::string& m) { fail(ErrorCode::CorruptCheckpoint, m); };
  if (bytes.size() < 8) corrupt("file shorter than the length prefix");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= std::uint64_t(static_cast<unsigned char>(bytes[i])) << (8 * i);
  if (n > bytes.size() - 8) corrupt("header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  } catch (const json::exception& e) {
    corrupt(std::string("header is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  const std::size_t payload = 8 + n;
  try {
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion) corrupt("unsupported format_version");
    ck.config = model_config_from_json(header.at("config"));
    std::uint64_t expected_offset = 0;
    for (const auto& t : header.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32") corrupt("unsupported dtype");
      const Shape shape = t.at("shape").get<Shape>();
      const auto off = t.at("byte_offset").get<std::uint64_t>();
      const auto len = t.at("byte_length").get<std::uint64_t>();
      if (len != 4 * shape_size(shape)) corrupt("byte_length disagrees with shape for " + t.at("name").get<std::string>());
      if (off != expected_offset) corrupt("tensors are not contiguous");
      if (payload + off + len > bytes.size()) corrupt("payload truncated");
      Tensor<float> tensor(shape);
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + payload + off);
      for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = detail::get_f32_le(p + 4 * i);
      ck.tensors.add(t.at("name").get<std::string>(), std::move(tensor));
      expected_offset += len;
    }
    if (payload + expected_offset != bytes.size()) corrupt("trailing bytes after payload");
  } catch (const json::exception& e) {
    corrupt(std::string("malformed header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptCheckpoint) throw;
    corrupt(e.what());
  }
  for (auto& [k, v] : header.items())
    if (k != "format_version" && k != "config" && k != "tensors") ck.extra[k] = v;
  return ck;
}

template <typename T>
void save_checkpoint(const HourglassNet<T>& model, const std::filesystem::path& path, const json& extra = json::object()) {
  detail::write_file(path, encode_checkpoint(model.config(), model.export_parameters(), extra));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

/// Builds a model from a checkpoint file. Extra tensors (e.g. optimizer
/// moments) are ignored.
template <typename T>
HourglassNet<T> load_model(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  HourglassNet<T> model(ck.config);
  model.import_parameters(ck.tensors);
  return model;
}

}  // namespace hgpose
