#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hgpose/geometry.hpp"
#include "hgpose/layers.hpp"
#include "hgpose/tensor.hpp"

namespace hgpose {

/// How encoder skip maps are merged into the decoder. Concat is the
/// Hourglass-Pose network, Sum is HourglassSum-Pose.
enum class NetworkVariant { Concat, Sum };

inline const char* to_string(NetworkVariant v) { return v == NetworkVariant::Concat ? "concat" : "sum"; }

inline NetworkVariant parse_variant(const std::string& s) {
  if (s == "concat") return NetworkVariant::Concat;
  if (s == "sum") return NetworkVariant::Sum;
  fail(ErrorCode::InvalidConfig, "unknown variant '" + s + "' (expected concat or sum)");
}

struct ModelConfig {
  NetworkVariant variant = NetworkVariant::Sum;
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::vector<std::size_t> encoder_channels{64, 64, 128, 256, 512};  // stem, then one per residual stage
  std::vector<std::size_t> encoder_block_counts{3, 4, 6, 3};
  std::vector<std::size_t> decoder_channels{256, 128, 64};
  std::size_t final_conv_channels = 32;
  std::size_t regressor_hidden = 2048;
  double dropout_prob = 0.5;
  double width_multiplier = 1.0;

  bool operator==(const ModelConfig&) const = default;

  /// Channel count after the width multiplier, rounded up.
  std::size_t scaled(std::size_t channels) const {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(channels) * width_multiplier - 1e-9));
  }
  std::size_t stem_channels() const { return scaled(encoder_channels[0]); }
  std::size_t stage_channels(std::size_t stage) const { return scaled(encoder_channels[stage + 1]); }
  std::size_t upconv_channels(std::size_t i) const { return scaled(decoder_channels[i]); }
  std::size_t final_channels() const { return scaled(final_conv_channels); }
  std::size_t hidden_width() const { return scaled(regressor_hidden); }
  std::size_t decoder_height() const { return input_height / 4; }
  std::size_t decoder_width() const { return input_width / 4; }
  std::size_t flatten_width() const { return final_channels() * decoder_height() * decoder_width(); }

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::InvalidConfig, m); };
    if (input_height == 0 || input_width == 0 || input_height % 32 || input_width % 32)
      bad("input size must be a positive multiple of 32");
    if (encoder_channels.size() != 5) bad("encoder_channels needs 5 entries (stem + 4 stages)");
    if (encoder_block_counts.size() != 4) bad("encoder_block_counts needs 4 entries");
    if (decoder_channels.size() != 3) bad("decoder_channels needs 3 entries");
    for (auto c : encoder_channels)
      if (c == 0) bad("zero encoder channel count");
    for (auto c : encoder_block_counts)
      if (c == 0) bad("zero residual block count");
    for (auto c : decoder_channels)
      if (c == 0) bad("zero decoder channel count");
    if (final_conv_channels == 0) bad("final_conv_channels must be positive");
    if (regressor_hidden == 0) bad("regressor_hidden must be positive");
    if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) bad("dropout_prob must lie in [0, 1)");
    if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) bad("width_multiplier must lie in (0, 1]");
    if (variant == NetworkVariant::Sum)
      for (std::size_t i = 0; i < 3; ++i)
        if (upconv_channels(i) != stage_channels(2 - i))
          bad("sum aggregation needs decoder channels equal to the mirrored encoder stage");
  }
};

/// Raw network output for a batch: q_raw is [N,4] (not normalized), t is [N,3].
template <typename T>
struct NetworkOutput {
  Tensor<T> q_raw;
  Tensor<T> t;
};

struct PosePrediction {
  Quaternion q_raw;
  Translation t;
};

template <typename T>
std::vector<PosePrediction> to_predictions(const NetworkOutput<T>& out) {
  std::vector<PosePrediction> preds(out.q_raw.dim(0));
  for (std::size_t n = 0; n < preds.size(); ++n) {
    preds[n].q_raw = {double(out.q_raw.at(n, 0)), double(out.q_raw.at(n, 1)), double(out.q_raw.at(n, 2)),
                      double(out.q_raw.at(n, 3))};
    preds[n].t = {double(out.t.at(n, 0)), double(out.t.at(n, 1)), double(out.t.at(n, 2))};
  }
  return preds;
}

/// Optional record of every named stage output during an eval pass.
struct ActivationTrace {
  std::vector<std::pair<std::string, Shape>> shapes;
  bool all_finite = true;

  template <typename T>
  void record(const std::string& name, const Tensor<T>& t) {
    shapes.emplace_back(name, t.shape());
    all_finite = all_finite && t.all_finite();
  }
  const Shape* find(const std::string& name) const {
    for (const auto& [n, s] : shapes)
      if (n == name) return &s;
    return nullptr;
  }
};

template <typename T>
void trace(ActivationTrace* tr, const std::string& name, const Tensor<T>& t) {
  if (tr) tr->record(name, t);
}

// ---------------------------------------------------------------------------
// Skip aggregation

template <typename T>
Tensor<T> aggregate_skip(const Tensor<T>& decoder_fm, const Tensor<T>& encoder_fm, NetworkVariant variant) {
  const Shape& a = decoder_fm.shape();
  const Shape& b = encoder_fm.shape();
  if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3])
    fail(ErrorCode::ShapeMismatch, "skip " + shape_string(b) + " does not fit decoder map " + shape_string(a));
  if (variant == NetworkVariant::Sum) {
    if (a[1] != b[1]) fail(ErrorCode::ShapeMismatch, "sum aggregation needs equal channel counts");
    Tensor<T> out = decoder_fm;
    out += encoder_fm;
    return out;
  }
  const std::size_t plane = a[2] * a[3];
  Tensor<T> out({a[0], a[1] + b[1], a[2], a[3]});
  for (std::size_t n = 0; n < a[0]; ++n) {
    std::copy_n(decoder_fm.data() + n * a[1] * plane, a[1] * plane, out.data() + n * (a[1] + b[1]) * plane);
    std::copy_n(encoder_fm.data() + n * b[1] * plane, b[1] * plane, out.data() + (n * (a[1] + b[1]) + a[1]) * plane);
  }
  return out;
}

/// Splits the gradient of an aggregated map into (decoder part, encoder part).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> aggregate_skip_backward(const Tensor<T>& g, std::size_t decoder_channels,
                                                        NetworkVariant variant) {
  if (variant == NetworkVariant::Sum) return {g, g};
  const Shape& s = g.shape();
  const std::size_t enc_ch = s[1] - decoder_channels, plane = s[2] * s[3];
  Tensor<T> gd({s[0], decoder_channels, s[2], s[3]});
  Tensor<T> ge({s[0], enc_ch, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n) {
    std::copy_n(g.data() + n * s[1] * plane, decoder_channels * plane, gd.data() + n * decoder_channels * plane);
    std::copy_n(g.data() + (n * s[1] + decoder_channels) * plane, enc_ch * plane, ge.data() + n * enc_ch * plane);
  }
  return {std::move(gd), std::move(ge)};
}

// ---------------------------------------------------------------------------
// Encoder: 34-layer residual network without its pooling/classifier head.

template <typename T>
class BasicBlock {
 public:
  BasicBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride)
      : conv1_(in_ch, out_ch, 3, stride, 1, false), bn1_(out_ch),
        conv2_(out_ch, out_ch, 3, 1, 1, false), bn2_(out_ch) {
    if (stride != 1 || in_ch != out_ch) {
      down_conv_.emplace(in_ch, out_ch, 1, stride, 0, false);
      down_bn_.emplace(out_ch);
    }
  }

  Tensor<T> forward_eval(const Tensor<T>& x) const {
    Tensor<T> y = bn2_.forward_eval(conv2_.forward_eval(relu1_.forward_eval(bn1_.forward_eval(conv1_.forward_eval(x)))));
    y += down_conv_ ? down_bn_->forward_eval(down_conv_->forward_eval(x)) : x;
    return relu2_.forward_eval(y);
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    Tensor<T> y = bn2_.forward_train(conv2_.forward_train(relu1_.forward_train(bn1_.forward_train(conv1_.forward_train(x)))));
    y += down_conv_ ? down_bn_->forward_train(down_conv_->forward_train(x)) : x;
    return relu2_.forward_train(y);
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const Tensor<T> g = relu2_.backward(gy);
    Tensor<T> gx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
    gx += down_conv_ ? down_conv_->backward(down_bn_->backward(g)) : g;
    return gx;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    visit_impl(*this, p, f);
  }
  template <typename F>
  void visit(const std::string& p, F&& f) const {
    visit_impl(*this, p, f);
  }

  void hash_pattern(std::uint64_t& h) const {
    relu1_.hash_pattern(h);
    relu2_.hash_pattern(h);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& p, F& f) {
    s.conv1_.visit(p + ".conv1", f);
    s.bn1_.visit(p + ".bn1", f);
    s.conv2_.visit(p + ".conv2", f);
    s.bn2_.visit(p + ".bn2", f);
    if (s.down_conv_) {
      s.down_conv_->visit(p + ".downsample.conv", f);
      s.down_bn_->visit(p + ".downsample.bn", f);
    }
  }

  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  ReLU<T> relu1_;
  Conv2d<T> conv2_;
  BatchNorm<T> bn2_;
  std::optional<Conv2d<T>> down_conv_;
  std::optional<BatchNorm<T>> down_bn_;
  ReLU<T> relu2_;
};

/// Outputs of the four residual stages, finest first.
template <typename T>
using StageOutputs = std::array<Tensor<T>, 4>;

template <typename T>
class Encoder {
 public:
  explicit Encoder(const ModelConfig& cfg)
      : conv1_(3, cfg.stem_channels(), 7, 2, 3, false), bn1_(cfg.stem_channels()), pool_(3, 2, 1) {
    std::size_t in = cfg.stem_channels();
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t out = cfg.stage_channels(s);
      for (std::size_t b = 0; b < cfg.encoder_block_counts[s]; ++b) {
        stages_[s].emplace_back(in, out, (b == 0 && s > 0) ? 2 : 1);
        in = out;
      }
    }
  }

  StageOutputs<T> forward_eval(const Tensor<T>& x, ActivationTrace* tr = nullptr) const {
    Tensor<T> h = conv1_.forward_eval(x);
    trace(tr, "encoder.conv", h);
    h = pool_.forward_eval(relu_.forward_eval(bn1_.forward_eval(h)));
    trace(tr, "encoder.pool", h);
    StageOutputs<T> out;
    for (std::size_t s = 0; s < 4; ++s) {
      for (const auto& block : stages_[s]) h = block.forward_eval(h);
      trace(tr, "encoder.resblock" + std::to_string(s + 1), h);
      out[s] = h;
    }
    return out;
  }

  StageOutputs<T> forward_train(const Tensor<T>& x) {
    Tensor<T> h = pool_.forward_train(relu_.forward_train(bn1_.forward_train(conv1_.forward_train(x))));
    StageOutputs<T> out;
    for (std::size_t s = 0; s < 4; ++s) {
      for (auto& block : stages_[s]) h = block.forward_train(h);
      out[s] = h;
    }
    return out;
  }

  /// grads[s] is the total gradient arriving at stage s's output from
  /// outside the encoder (skip connections and, for stage 4, the decoder).
  Tensor<T> backward(StageOutputs<T> grads) {
    Tensor<T> g = std::move(grads[3]);
    for (std::size_t s = 4; s-- > 0;) {
      if (s < 3 && !grads[s].empty()) g += grads[s];
      for (auto it = stages_[s].rbegin(); it != stages_[s].rend(); ++it) g = it->backward(g);
    }
    return conv1_.backward(bn1_.backward(relu_.backward(pool_.backward(g))));
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    visit_impl(*this, p, f);
  }
  template <typename F>
  void visit(const std::string& p, F&& f) const {
    visit_impl(*this, p, f);
  }

  void hash_pattern(std::uint64_t& h) const {
    relu_.hash_pattern(h);
    pool_.hash_pattern(h);
    for (const auto& stage : stages_)
      for (const auto& b : stage) b.hash_pattern(h);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& p, F& f) {
    s.conv1_.visit(p + ".conv1", f);
    s.bn1_.visit(p + ".bn1", f);
    for (std::size_t st = 0; st < 4; ++st)
      for (std::size_t b = 0; b < s.stages_[st].size(); ++b)
        s.stages_[st][b].visit(p + ".resblock" + std::to_string(st + 1) + "." + std::to_string(b), f);
  }

  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  ReLU<T> relu_;
  MaxPool2d<T> pool_;
  std::array<std::vector<BasicBlock<T>>, 4> stages_;
};

// ---------------------------------------------------------------------------
// Decoder

/// Conv -> ReLU -> BatchNorm, optionally preceded by stride-2 zero insertion
/// (the up-convolution).
template <typename T>
class DecoderBlock {
 public:
  DecoderBlock(std::size_t in_ch, std::size_t out_ch, bool upsample)
      : upsample_(upsample),
        conv_(in_ch, out_ch, upsample ? 4 : 3, 1, upsample ? 2 : 1, true, upsample ? LayerType::UpConv : LayerType::Conv),
        bn_(out_ch) {}

  std::size_t out_channels() const { return conv_.out_channels(); }

  Tensor<T> forward_eval(const Tensor<T>& x) const {
    return bn_.forward_eval(relu_.forward_eval(conv_.forward_eval(upsample_ ? zero_insert(x) : x)));
  }
  Tensor<T> forward_train(const Tensor<T>& x) {
    return bn_.forward_train(relu_.forward_train(conv_.forward_train(upsample_ ? zero_insert(x) : x)));
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = conv_.backward(relu_.backward(bn_.backward(gy)));
    return upsample_ ? zero_insert_backward(g) : g;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    conv_.visit(p + ".conv", f);
    bn_.visit(p + ".bn", f);
  }
  template <typename F>
  void visit(const std::string& p, F&& f) const {
    conv_.visit(p + ".conv", f);
    bn_.visit(p + ".bn", f);
  }
  void hash_pattern(std::uint64_t& h) const { relu_.hash_pattern(h); }

 private:
  bool upsample_;
  Conv2d<T> conv_;
  ReLU<T> relu_;
  BatchNorm<T> bn_;
};

/// Skip maps for UpConv1..3 in that order (encoder stages 3, 2, 1). A null
/// entry skips aggregation at that level.
template <typename T>
using DecoderSkips = std::array<const Tensor<T>*, 3>;

template <typename T>
class Decoder {
 public:
  explicit Decoder(const ModelConfig& cfg) : variant_(cfg.variant) {
    std::size_t in = cfg.stage_channels(3);
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t out = cfg.upconv_channels(i);
      ups_.emplace_back(in, out, true);
      const std::size_t skip = cfg.stage_channels(2 - i);
      in = variant_ == NetworkVariant::Concat ? out + skip : out;
    }
    final_.emplace_back(in, cfg.final_channels(), false);
  }

  NetworkVariant variant() const { return variant_; }

  Tensor<T> forward_eval(const Tensor<T>& bottom, const DecoderSkips<T>& skips, ActivationTrace* tr = nullptr) const {
    Tensor<T> h = bottom;
    for (std::size_t i = 0; i < 3; ++i) {
      h = ups_[i].forward_eval(h);
      trace(tr, "decoder.upconv" + std::to_string(i + 1), h);
      if (skips[i]) {
        h = aggregate_skip(h, *skips[i], variant_);
        trace(tr, "decoder.skip" + std::to_string(i + 1), h);
      }
    }
    h = final_[0].forward_eval(h);
    trace(tr, "decoder.conv", h);
    return h;
  }

  Tensor<T> forward_train(const Tensor<T>& bottom, const DecoderSkips<T>& skips) {
    Tensor<T> h = bottom;
    for (std::size_t i = 0; i < 3; ++i) {
      h = ups_[i].forward_train(h);
      had_skip_[i] = skips[i] != nullptr;
      if (skips[i]) h = aggregate_skip(h, *skips[i], variant_);
    }
    return final_[0].forward_train(h);
  }

  /// Returns {gradient for the bottom input, gradients for skips 1..3}.
  std::pair<Tensor<T>, std::array<Tensor<T>, 3>> backward(const Tensor<T>& gy) {
    std::array<Tensor<T>, 3> skip_grads;
    Tensor<T> g = final_[0].backward(gy);
    for (std::size_t i = 3; i-- > 0;) {
      if (had_skip_[i]) {
        auto [gd, ge] = aggregate_skip_backward(g, ups_[i].out_channels(), variant_);
        skip_grads[i] = std::move(ge);
        g = std::move(gd);
      }
      g = ups_[i].backward(g);
    }
    return {std::move(g), std::move(skip_grads)};
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    for (std::size_t i = 0; i < 3; ++i) ups_[i].visit(p + ".upconv" + std::to_string(i + 1), f);
    final_[0].visit(p + ".conv", f);
  }
  template <typename F>
  void visit(const std::string& p, F&& f) const {
    for (std::size_t i = 0; i < 3; ++i) ups_[i].visit(p + ".upconv" + std::to_string(i + 1), f);
    final_[0].visit(p + ".conv", f);
  }
  void hash_pattern(std::uint64_t& h) const {
    for (const auto& u : ups_) u.hash_pattern(h);
    final_[0].hash_pattern(h);
  }

 private:
  NetworkVariant variant_;
  std::vector<DecoderBlock<T>> ups_;
  std::vector<DecoderBlock<T>> final_;
  std::array<bool, 3> had_skip_{};
};

// ---------------------------------------------------------------------------
// Regressor

template <typename T>
class Regressor {
 public:
  explicit Regressor(const ModelConfig& cfg)
      : fc_(cfg.flatten_width(), cfg.hidden_width()), bn_(cfg.hidden_width()), dropout_(cfg.dropout_prob),
        fc_q_(cfg.hidden_width(), 4), fc_t_(cfg.hidden_width(), 3) {}

  NetworkOutput<T> forward_eval(const Tensor<T>& features, ActivationTrace* tr = nullptr) const {
    Tensor<T> h = fc_.forward_eval(flatten(features));
    trace(tr, "regressor.fc", h);
    h = dropout_.forward_eval(relu_.forward_eval(bn_.forward_eval(h)));
    NetworkOutput<T> out{fc_q_.forward_eval(h), fc_t_.forward_eval(h)};
    trace(tr, "regressor.fc_q", out.q_raw);
    trace(tr, "regressor.fc_t", out.t);
    return out;
  }

  NetworkOutput<T> forward_train(const Tensor<T>& features, std::mt19937_64& rng) {
    input_shape_ = features.shape();
    Tensor<T> h = dropout_.forward_train(relu_.forward_train(bn_.forward_train(fc_.forward_train(flatten(features)))), rng);
    return {fc_q_.forward_train(h), fc_t_.forward_train(h)};
  }

  Tensor<T> backward(const Tensor<T>& grad_q, const Tensor<T>& grad_t) {
    Tensor<T> g = fc_q_.backward(grad_q);
    g += fc_t_.backward(grad_t);
    return fc_.backward(bn_.backward(relu_.backward(dropout_.backward(g)))).reshaped(input_shape_);
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    visit_impl(*this, p, f);
  }
  template <typename F>
  void visit(const std::string& p, F&& f) const {
    visit_impl(*this, p, f);
  }
  void hash_pattern(std::uint64_t& h) const { relu_.hash_pattern(h); }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& p, F& f) {
    s.fc_.visit(p + ".fc", f);
    s.bn_.visit(p + ".bn", f);
    s.fc_q_.visit(p + ".fc_q", f);
    s.fc_t_.visit(p + ".fc_t", f);
  }

  static Tensor<T> flatten(const Tensor<T>& x) { return x.reshaped({x.dim(0), x.size() / x.dim(0)}); }

  Linear<T> fc_;
  BatchNorm<T> bn_;
  ReLU<T> relu_;
  Dropout<T> dropout_;
  Linear<T> fc_q_, fc_t_;
  Shape input_shape_;
};

template <typename T>
Encoder<T> build_encoder(const ModelConfig& cfg) {
  cfg.validate();
  return Encoder<T>(cfg);
}
template <typename T>
Decoder<T> build_decoder(const ModelConfig& cfg) {
  cfg.validate();
  return Decoder<T>(cfg);
}
template <typename T>
Regressor<T> build_regressor(const ModelConfig& cfg) {
  cfg.validate();
  return Regressor<T>(cfg);
}

// ---------------------------------------------------------------------------
// Parameter store

/// Named tensors in a fixed order: trainable parameters and batch-norm
/// running statistics alike.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool operator==(const Entry&) const = default;
  };

  void add(std::string name, Tensor<T> tensor) {
    if (index_.count(name)) fail(ErrorCode::InvalidConfig, "duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor)});
  }

  const Tensor<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
  }
  Tensor<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  bool operator==(const ParameterStore& o) const { return entries_ == o.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Full network

enum class Mode { Train, Eval };

template <typename T>
class HourglassNet {
 public:
  explicit HourglassNet(ModelConfig cfg)
      : cfg_((cfg.validate(), std::move(cfg))), encoder_(cfg_), decoder_(cfg_), regressor_(cfg_) {}

  const ModelConfig& config() const { return cfg_; }
  bool initialized() const { return initialized_; }
  void mark_initialized() { initialized_ = true; }

  NetworkOutput<T> forward_eval(const Tensor<T>& images, ActivationTrace* tr = nullptr) const {
    check_input(images);
    const StageOutputs<T> st = encoder_.forward_eval(images, tr);
    const Tensor<T> dec = decoder_.forward_eval(st[3], {&st[2], &st[1], &st[0]}, tr);
    return regressor_.forward_eval(dec, tr);
  }

  /// Training-mode pass: batch statistics, dropout drawn from rng, and
  /// activations cached for backward(). Updates running statistics.
  NetworkOutput<T> forward_train(const Tensor<T>& images, std::mt19937_64& rng) {
    check_input(images);
    stages_ = encoder_.forward_train(images);
    const Tensor<T> dec = decoder_.forward_train(stages_[3], {&stages_[2], &stages_[1], &stages_[0]});
    return regressor_.forward_train(dec, rng);
  }

  NetworkOutput<T> forward(const Tensor<T>& images, Mode mode, std::mt19937_64* rng = nullptr) {
    if (mode == Mode::Eval) return forward_eval(images);
    if (!rng) fail(ErrorCode::InvalidConfig, "training-mode forward needs a random generator");
    return forward_train(images, *rng);
  }

  /// Accumulates parameter gradients for the last forward_train call.
  void backward(const Tensor<T>& grad_q, const Tensor<T>& grad_t) {
    auto [g_bottom, g_skips] = decoder_.backward(regressor_.backward(grad_q, grad_t));
    encoder_.backward({std::move(g_skips[2]), std::move(g_skips[1]), std::move(g_skips[0]), std::move(g_bottom)});
  }

  void zero_grad() {
    visit([](const std::string&, Parameter<T>& p) { p.zero_grad(); });
  }

  /// See BatchNorm::set_frozen.
  void set_batchnorm_frozen(bool frozen) {
    struct {
      bool value;
      void operator()(const std::string&, Parameter<T>&) const {}
      void operator()(BatchNorm<T>& bn) const { bn.set_frozen(value); }
    } v{frozen};
    visit(v);
  }

  template <typename F>
  void visit(F&& f) {
    encoder_.visit("encoder", f);
    decoder_.visit("decoder", f);
    regressor_.visit("regressor", f);
  }
  template <typename F>
  void visit(F&& f) const {
    encoder_.visit("encoder", f);
    decoder_.visit("decoder", f);
    regressor_.visit("regressor", f);
  }

  ParameterStore<T> export_parameters() const {
    ParameterStore<T> store;
    visit([&](const std::string& name, const Parameter<T>& p) { store.add(name, p.value); });
    return store;
  }

  /// Copies every tensor of the model from `store` (converting precision).
  template <typename U>
  void import_parameters(const ParameterStore<U>& store) {
    visit([&](const std::string& name, Parameter<T>& p) {
      const Tensor<U>* src = store.find(name);
      if (!src) fail(ErrorCode::ShapeMismatch, "missing tensor " + name);
      if (src->shape() != p.value.shape())
        fail(ErrorCode::ShapeMismatch, name + ": " + shape_string(src->shape()) + " vs " + shape_string(p.value.shape()));
      p.value = src->template cast<T>();
    });
    initialized_ = true;
  }

  /// Hash of ReLU on/off states and max-pool selections of the last
  /// training pass; equal hashes mean the same piecewise-linear region.
  std::uint64_t activation_signature() const {
    std::uint64_t h = 0;
    encoder_.hash_pattern(h);
    decoder_.hash_pattern(h);
    regressor_.hash_pattern(h);
    return h;
  }

  const Encoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  const Regressor<T>& regressor() const { return regressor_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (!initialized_) fail(ErrorCode::UninitializedModel, "parameters were never initialized or loaded");
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.input_height || x.dim(3) != cfg_.input_width)
      fail(ErrorCode::ShapeMismatch, "expected [N,3," + std::to_string(cfg_.input_height) + "," +
                                         std::to_string(cfg_.input_width) + "], got " + shape_string(x.shape()));
    if (x.dim(0) == 0) fail(ErrorCode::ShapeMismatch, "empty batch");
  }

  ModelConfig cfg_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
  Regressor<T> regressor_;
  StageOutputs<T> stages_;
  bool initialized_ = false;
};

// ---------------------------------------------------------------------------
// Initialization and counting

/// 53-bit uniform draw in [0, 1); identical on every standard library.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Weights ~ U(-b, b) with b = sqrt(6 / (fan_in + fan_out)); biases and
/// shifts zero; scales one; running statistics (0, 1). Encoder tensors are
/// then overwritten from `pretrained` when given.
template <typename T, typename U = T>
void init_parameters(HourglassNet<T>& model, const ParameterStore<U>* pretrained, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  model.visit([&](const std::string&, Parameter<T>& p) {
    switch (p.kind) {
      case ParamKind::Weight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in + p.fan_out));
        for (auto& v : p.value.values()) v = static_cast<T>(bound * (2.0 * uniform01(rng) - 1.0));
        break;
      }
      case ParamKind::NormScale:
      case ParamKind::RunningVar: p.value.fill(T(1)); break;
      default: p.value.fill(T(0)); break;
    }
  });
  if (pretrained) {
    model.visit([&](const std::string& name, Parameter<T>& p) {
      if (name.rfind("encoder.", 0) != 0) return;
      const Tensor<U>* src = pretrained->find(name);
      if (!src) fail(ErrorCode::ShapeMismatch, "pretrained store lacks " + name);
      if (src->shape() != p.value.shape())
        fail(ErrorCode::ShapeMismatch, name + ": pretrained " + shape_string(src->shape()) + " vs model " +
                                           shape_string(p.value.shape()));
      p.value = src->template cast<T>();
    });
  }
  model.mark_initialized();
}

template <typename T>
void init_parameters(HourglassNet<T>& model, std::uint64_t seed) {
  init_parameters<T, T>(model, nullptr, seed);
}

/// Number of trainable scalars whose name starts with `prefix`.
template <typename T>
std::size_t count_parameters(const HourglassNet<T>& model, const std::string& prefix = "") {
  std::size_t n = 0;
  model.visit([&](const std::string& name, const Parameter<T>& p) {
    if (is_trainable(p.kind) && name.rfind(prefix, 0) == 0) n += p.value.size();
  });
  return n;
}

}  // namespace hgpose
