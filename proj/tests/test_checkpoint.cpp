#include <cstring>
#include <functional>

#include <gtest/gtest.h>

#include "hgpose/checkpoint.hpp"
#include "hgpose/gradcheck.hpp"
#include "oracles.hpp"

using namespace hgpose;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IO;
}

// Writer built directly from the documented layout.
std::string handmade(const nlohmann::json& header, const std::vector<float>& payload) {
  const std::string text = header.dump();
  std::string out(8, '\0');
  std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
  out += text;
  for (float f : payload) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  return out;
}

nlohmann::json tiny_header() {
  return {{"format_version", 1},
          {"config", {{"variant", "concat"}, {"input_hw", {32, 32}}, {"width_multiplier", 0.125}}},
          {"tensors",
           {{{"name", "a"}, {"dtype", "f32"}, {"shape", {2, 2}}, {"byte_offset", 0}, {"byte_length", 16}},
            {{"name", "b"}, {"dtype", "f32"}, {"shape", {1}}, {"byte_offset", 16}, {"byte_length", 4}}}},
          {"note", "kept"}};
}

}  // namespace

TEST(Checkpoint, ReadsIndependentlyWrittenFile) {
  const Checkpoint ck = decode_checkpoint(handmade(tiny_header(), {1.5f, -2.0f, 0.25f, 3e-8f, 7.0f}));
  EXPECT_EQ(ck.config.variant, NetworkVariant::Concat);
  EXPECT_EQ(ck.config.input_height, 32u);
  EXPECT_EQ(ck.config.width_multiplier, 0.125);
  ASSERT_EQ(ck.tensors.size(), 2u);
  EXPECT_EQ(ck.tensors.find("a")->shape(), (Shape{2, 2}));
  EXPECT_EQ((*ck.tensors.find("a"))[3], 3e-8f);
  EXPECT_EQ((*ck.tensors.find("b"))[0], 7.0f);
  EXPECT_EQ(ck.extra.at("note"), "kept");
}

TEST(Checkpoint, EncodeMatchesIndependentWriterLayout) {
  ParameterStore<float> store;
  Tensor<float> a({2, 2});
  a[0] = 1.5f;
  a[1] = -2.0f;
  a[2] = 0.25f;
  a[3] = 3e-8f;
  Tensor<float> b({1});
  b[0] = 7.0f;
  store.add("a", a);
  store.add("b", b);
  ModelConfig cfg = tiny_model_config(NetworkVariant::Concat);
  const std::string bytes = encode_checkpoint(cfg, store, {{"note", "kept"}});
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= std::uint64_t(static_cast<unsigned char>(bytes[i])) << (8 * i);
  const auto header = nlohmann::json::parse(bytes.substr(8, n));
  EXPECT_EQ(header.at("tensors").at(1).at("byte_offset"), 16);
  EXPECT_EQ(bytes.size(), 8 + n + 20);
  float last;
  std::memcpy(&last, bytes.data() + bytes.size() - 4, 4);
  EXPECT_EQ(last, 7.0f);
}

TEST(Checkpoint, ModelRoundTripIsExact) {
  testutil::TempDir tmp;
  HourglassNet<float> net(tiny_model_config(NetworkVariant::Sum));
  init_parameters(net, 4);
  save_checkpoint(net, tmp / "m.hgp", {{"preprocess", {{"crop", 32}}}});
  const HourglassNet<float> back = load_model<float>(tmp / "m.hgp");
  EXPECT_TRUE(back.config() == net.config());
  EXPECT_TRUE(back.export_parameters() == net.export_parameters());
  EXPECT_EQ(load_checkpoint(tmp / "m.hgp").extra.at("preprocess").at("crop"), 32);
  Tensor<float> x({1, 3, 32, 32}, 0.3f);
  EXPECT_EQ(back.forward_eval(x).t, net.forward_eval(x).t);
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const std::string good = handmade(tiny_header(), {1, 2, 3, 4, 5});
  for (std::size_t len = 0; len < good.size(); ++len)
    ASSERT_EQ(code_of([&] { decode_checkpoint(good.substr(0, len)); }), ErrorCode::CorruptCheckpoint) << len;
}

TEST(Checkpoint, CorruptionsAreRejected) {
  const std::vector<float> payload{1, 2, 3, 4, 5};
  EXPECT_EQ(code_of([&] { decode_checkpoint(handmade(tiny_header(), payload) + "x"); }), ErrorCode::CorruptCheckpoint);
  auto h = tiny_header();
  h["tensors"][0]["byte_length"] = 12;
  EXPECT_EQ(code_of([&] { decode_checkpoint(handmade(h, payload)); }), ErrorCode::CorruptCheckpoint);
  h = tiny_header();
  h["tensors"][1]["byte_offset"] = 20;
  EXPECT_EQ(code_of([&] { decode_checkpoint(handmade(h, payload)); }), ErrorCode::CorruptCheckpoint);
  h = tiny_header();
  h["tensors"][0]["dtype"] = "f64";
  EXPECT_EQ(code_of([&] { decode_checkpoint(handmade(h, payload)); }), ErrorCode::CorruptCheckpoint);
  h = tiny_header();
  h["format_version"] = 2;
  EXPECT_EQ(code_of([&] { decode_checkpoint(handmade(h, payload)); }), ErrorCode::CorruptCheckpoint);
  h = tiny_header();
  h["config"]["input_hw"] = {33, 32};
  EXPECT_EQ(code_of([&] { decode_checkpoint(handmade(h, payload)); }), ErrorCode::CorruptCheckpoint);
  h = tiny_header();
  h.erase("tensors");
  EXPECT_EQ(code_of([&] { decode_checkpoint(handmade(h, payload)); }), ErrorCode::CorruptCheckpoint);

  std::string garbled = handmade(tiny_header(), payload);
  garbled[8] = '#';
  EXPECT_EQ(code_of([&] { decode_checkpoint(garbled); }), ErrorCode::CorruptCheckpoint);
  std::string huge = handmade(tiny_header(), payload);
  huge[7] = '\x7f';
  EXPECT_EQ(code_of([&] { decode_checkpoint(huge); }), ErrorCode::CorruptCheckpoint);
}

TEST(Checkpoint, MissingFileAndMissingTensors) {
  testutil::TempDir tmp;
  EXPECT_EQ(code_of([&] { load_checkpoint(tmp / "none.hgp"); }), ErrorCode::IO);
  detail::write_file(tmp / "partial.hgp", handmade(tiny_header(), {1, 2, 3, 4, 5}));
  EXPECT_EQ(code_of([&] { load_model<float>(tmp / "partial.hgp"); }), ErrorCode::ShapeMismatch);
}
