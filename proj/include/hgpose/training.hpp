#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgpose/checkpoint.hpp"
#include "hgpose/data.hpp"
#include "hgpose/evaluation.hpp"
#include "hgpose/loss.hpp"
#include "hgpose/model.hpp"

namespace hgpose {

struct LrStage {
  double learning_rate = 1e-3;
  std::size_t epochs = 0;
  bool operator==(const LrStage&) const = default;
};

struct TrainConfig {
  std::vector<LrStage> lr_stages{{1e-3, 50}, {1e-4, 40}, {1e-5, 30}};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_epsilon = 1e-8;
  double weight_decay = 1e-5;
  std::size_t batch_size = 40;
  double loss_beta = 3.0;
  double dropout_prob = 0.5;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 10;  // epochs; 0 writes only the final checkpoint

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::InvalidConfig, m); };
    if (lr_stages.empty()) bad("at least one learning-rate stage is required");
    for (const auto& s : lr_stages)
      if (!(s.learning_rate >= 0.0)) bad("learning rates must be non-negative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      bad("Adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) bad("adam_epsilon must be positive");
    if (!(weight_decay >= 0.0)) bad("weight_decay must be non-negative");
    if (batch_size == 0) bad("batch_size must be at least 1");
    if (!(loss_beta > 0.0)) bad("loss_beta must be positive");
    if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) bad("dropout_prob must lie in [0, 1)");
  }
};

inline std::size_t total_epochs(const TrainConfig& c) {
  std::size_t n = 0;
  for (const auto& s : c.lr_stages) n += s.epochs;
  return n;
}

/// Piecewise-constant schedule over the stages.
inline double lr_at(const TrainConfig& c, std::size_t epoch) {
  std::size_t end = 0;
  for (const auto& s : c.lr_stages) {
    end += s.epochs;
    if (epoch < end) return s.learning_rate;
  }
  fail(ErrorCode::OutOfRange, "epoch " + std::to_string(epoch) + " is past the schedule (" + std::to_string(end) + ")");
}

/// First `budget` epochs of the schedule.
inline TrainConfig truncate_schedule(TrainConfig c, std::size_t budget) {
  std::vector<LrStage> stages;
  std::size_t left = budget;
  for (const auto& s : c.lr_stages) {
    if (left == 0) break;
    stages.push_back({s.learning_rate, std::min(left, s.epochs)});
    left -= stages.back().epochs;
  }
  c.lr_stages = std::move(stages);
  return c;
}

inline json to_json(const TrainConfig& c) {
  json stages = json::array();
  for (const auto& s : c.lr_stages) stages.push_back({s.learning_rate, s.epochs});
  return json{{"lr_stages", stages},       {"adam_beta1", c.adam_beta1},     {"adam_beta2", c.adam_beta2},
              {"adam_epsilon", c.adam_epsilon}, {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
              {"loss_beta", c.loss_beta},   {"dropout_prob", c.dropout_prob}, {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    if (j.contains("lr_stages")) {
      c.lr_stages.clear();
      for (const auto& s : j.at("lr_stages")) c.lr_stages.push_back({s.at(0).get<double>(), s.at(1).get<std::size_t>()});
    }
    if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1").get<double>();
    if (j.contains("adam_beta2")) c.adam_beta2 = j.at("adam_beta2").get<double>();
    if (j.contains("adam_epsilon")) c.adam_epsilon = j.at("adam_epsilon").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("loss_beta")) c.loss_beta = j.at("loss_beta").get<double>();
    if (j.contains("dropout_prob")) c.dropout_prob = j.at("dropout_prob").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json to_json(const PreprocessConfig& p) {
  return json{{"rescale_short_side", p.rescale_short_side}, {"crop", p.crop}};
}

inline PreprocessConfig preprocess_config_from_json(const json& j) {
  PreprocessConfig p;
  try {
    if (j.contains("rescale_short_side")) p.rescale_short_side = j.at("rescale_short_side").get<std::size_t>();
    if (j.contains("crop")) p.crop = j.at("crop").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("preprocess config: ") + e.what());
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Adam with classical (coupled) L2 weight decay

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// One bias-corrected Adam update of a flat parameter block. `step` is the
/// 1-based update count. Decay, when enabled, is added to the gradient
/// before the moments.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                 double lr, const AdamHyper& h, bool decay) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    fail(ErrorCode::ShapeMismatch, "Adam buffers disagree in size");
  if (step == 0) fail(ErrorCode::OutOfRange, "Adam step counter starts at 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  const double wd = decay ? h.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]) + wd * static_cast<double>(param[i]);
    const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + h.epsilon));
  }
}

/// Optimizer moments for every trainable tensor of a model, in visit order.
template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamHyper h) : hyper_(h) {}

  std::uint64_t step_count() const { return step_; }

  void step(HourglassNet<T>& model, double lr) {
    ++step_;
    std::size_t k = 0;
    model.visit([&](const std::string&, Parameter<T>& p) {
      if (!is_trainable(p.kind)) return;
      if (k == m_.size()) {
        m_.emplace_back(p.value.shape());
        v_.emplace_back(p.value.shape());
      }
      const Tensor<T>& g = p.ensure_grad();
      adam_update<T>(p.value.values(), g.values(), m_[k].values(), v_[k].values(), step_, lr, hyper_, is_decayed(p.kind));
      ++k;
    });
  }

  /// Moments as named tensors ("optim.m.<param>", "optim.v.<param>").
  void export_state(const HourglassNet<T>& model, ParameterStore<T>& store) const {
    std::size_t k = 0;
    model.visit([&](const std::string& name, const Parameter<T>& p) {
      if (!is_trainable(p.kind)) return;
      store.add("optim.m." + name, k < m_.size() ? m_[k] : Tensor<T>(p.value.shape()));
      store.add("optim.v." + name, k < v_.size() ? v_[k] : Tensor<T>(p.value.shape()));
      ++k;
    });
  }

  template <typename U>
  void import_state(const HourglassNet<T>& model, const ParameterStore<U>& store, std::uint64_t step) {
    m_.clear();
    v_.clear();
    model.visit([&](const std::string& name, const Parameter<T>& p) {
      if (!is_trainable(p.kind)) return;
      const Tensor<U>* m = store.find("optim.m." + name);
      const Tensor<U>* v = store.find("optim.v." + name);
      if (!m || !v || m->shape() != p.value.shape() || v->shape() != p.value.shape())
        fail(ErrorCode::CorruptCheckpoint, "optimizer state missing or misshapen for " + name);
      m_.push_back(m->template cast<T>());
      v_.push_back(v->template cast<T>());
    });
    step_ = step;
  }

 private:
  AdamHyper hyper_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  std::size_t epoch = 0;  // 0-based
  std::uint64_t step = 0;  // optimizer steps completed at the end of the epoch
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_t = 0.0;
  double loss_q = 0.0;
};

struct TrainState {
  std::size_t epoch = 0;   // epochs completed
  std::uint64_t step = 0;  // optimizer steps completed
  std::vector<EpochLog> history;
  std::optional<std::pair<double, double>> best_validation;  // (median t, median q deg)
};

struct FitOptions {
  PreprocessConfig preprocess{};
  std::optional<std::filesystem::path> run_dir;       // log.csv and ckpt-<epoch>.hgp go here
  std::optional<std::filesystem::path> resume_from;   // training checkpoint to continue from
  std::function<void(const EpochLog&)> on_epoch;
  ImageLoader* loader = nullptr;
};

/// Independent generator for one purpose at one optimizer step.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), purpose};
  return std::mt19937_64(seq);
}

inline constexpr std::uint32_t kCropStream = 0x43524f50;
inline constexpr std::uint32_t kDropoutStream = 0x44524f50;

namespace detail {

inline void append_log(const std::filesystem::path& path, const EpochLog& e, bool header) {
  std::ofstream out(path, std::ios::binary | (header ? std::ios::trunc : std::ios::app));
  if (!out) fail(ErrorCode::IO, "cannot write " + path.string());
  if (header) out << "epoch,step,lr,loss_total,loss_t,loss_q\n";
  out << e.epoch << ',' << e.step << ',' << format_g6(e.lr) << ',' << format_g6(e.loss_total) << ','
      << format_g6(e.loss_t) << ',' << format_g6(e.loss_q) << '\n';
}

template <typename T>
void save_training_checkpoint(const std::filesystem::path& path, const HourglassNet<T>& model,
                              const AdamOptimizer<T>& opt, const TrainState& st, const TrainConfig& tc,
                              const PreprocessConfig& pre) {
  ParameterStore<T> store = model.export_parameters();
  opt.export_state(model, store);
  const json extra{{"train_state", {{"epoch", st.epoch}, {"step", st.step}}},
                   {"train_config", to_json(tc)},
                   {"preprocess", to_json(pre)}};
  detail::write_file(path, encode_checkpoint(model.config(), store, extra));
}

}  // namespace detail

inline std::string checkpoint_name(std::size_t epoch) { return "ckpt-" + std::to_string(epoch) + ".hgp"; }

/// Minimizes the batch-mean pose loss with Adam over the staged schedule.
/// The whole run is a function of the configuration and seed: batch order
/// comes from (seed, epoch), crops and dropout from (seed, step).
template <typename T>
TrainState fit(HourglassNet<T>& model, const std::vector<FrameRecord>& train, const SceneStats& stats,
               const TrainConfig& tc, const FitOptions& opts = {}) {
  tc.validate();
  if (train.empty()) fail(ErrorCode::EmptySet, "empty training split");
  PreprocessConfig pre = opts.preprocess;
  pre.mode = CropMode::TrainRandom;
  pre.validate();
  if (pre.crop != model.config().input_height || pre.crop != model.config().input_width)
    fail(ErrorCode::InvalidConfig, "crop size must equal the model input size");

  ImageLoader local_loader;
  ImageLoader& loader = opts.loader ? *opts.loader : local_loader;
  AdamOptimizer<T> opt({tc.adam_beta1, tc.adam_beta2, tc.adam_epsilon, tc.weight_decay});
  TrainState st;
  if (opts.resume_from) {
    const Checkpoint ck = load_checkpoint(*opts.resume_from);
    if (!(ck.config == model.config())) fail(ErrorCode::CorruptCheckpoint, "checkpoint model config differs");
    model.import_parameters(ck.tensors);
    const auto& ts = ck.extra.value("train_state", json::object());
    st.epoch = ts.value("epoch", std::size_t{0});
    st.step = ts.value("step", std::uint64_t{0});
    opt.import_state(model, ck.tensors, st.step);
  }
  if (!model.initialized()) fail(ErrorCode::UninitializedModel, "initialize the model before training");

  const std::size_t n_epochs = total_epochs(tc);
  const LossParams loss_params{tc.loss_beta};
  std::vector<Pose> targets;
  for (std::size_t epoch = st.epoch; epoch < n_epochs; ++epoch) {
    const double lr = lr_at(tc, epoch);
    EpochLog log{epoch, 0, lr, 0.0, 0.0, 0.0};
    for (const auto& batch : epoch_batches(train.size(), tc.batch_size, tc.seed, epoch)) {
      auto crop_rng = step_rng(tc.seed, st.step, kCropStream);
      auto drop_rng = step_rng(tc.seed, st.step, kDropoutStream);
      Tensor<T> images({batch.size(), 3, pre.crop, pre.crop});
      targets.clear();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        preprocess_into(loader.load(train[batch[i]].image_path), stats, pre, &crop_rng, images, i);
        targets.push_back(train[batch[i]].pose);
      }
      model.zero_grad();
      const NetworkOutput<T> out = model.forward_train(images, drop_rng);
      const BatchLossGradient<T> loss = batch_pose_loss_grad(out, std::span<const Pose>(targets), loss_params);
      if (!std::isfinite(loss.value.total))
        fail(ErrorCode::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(st.step));
      model.backward(loss.grad_q, loss.grad_t);
      opt.step(model, lr);
      ++st.step;
      const double w = static_cast<double>(batch.size()) / static_cast<double>(train.size());
      log.loss_total += w * loss.value.total;
      log.loss_t += w * loss.value.translation_term;
      log.loss_q += w * loss.value.orientation_term;
    }
    log.step = st.step;
    st.epoch = epoch + 1;
    st.history.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
    if (opts.run_dir) {
      detail::append_log(*opts.run_dir / "log.csv", log, epoch == 0 || !std::filesystem::exists(*opts.run_dir / "log.csv"));
      if ((tc.checkpoint_every && st.epoch % tc.checkpoint_every == 0) || st.epoch == n_epochs)
        detail::save_training_checkpoint(*opts.run_dir / checkpoint_name(st.epoch), model, opt, st, tc, opts.preprocess);
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Beta grid search

struct BetaCandidate {
  double beta = 1.0;
  double median_t_m = 0.0;
  double median_q_deg = 0.0;
  double score = 0.0;  // median_t_m + median orientation error in radians
};

struct BetaSearchResult {
  double best_beta = 1.0;
  std::vector<BetaCandidate> candidates;  // in the order given
};

/// Last 10% of the training split (by frame order, at least one frame) is
/// held out for validation.
inline std::pair<std::vector<FrameRecord>, std::vector<FrameRecord>> holdout_split(const std::vector<FrameRecord>& train) {
  if (train.size() < 2) fail(ErrorCode::EmptySet, "need at least two training frames for a validation hold-out");
  const std::size_t n_val = std::max<std::size_t>(1, (train.size() + 9) / 10);
  const auto cut = train.begin() + static_cast<std::ptrdiff_t>(train.size() - n_val);
  return {{train.begin(), cut}, {cut, train.end()}};
}

/// Trains `budget_epochs` per candidate from the same initialization and
/// keeps the beta with the lowest validation score; ties go to the smaller
/// beta.
template <typename T>
BetaSearchResult beta_grid_search(const ModelConfig& model_cfg, const std::vector<FrameRecord>& train,
                                  const SceneStats& stats, const std::vector<double>& candidate_betas,
                                  std::size_t budget_epochs, const TrainConfig& base, const PreprocessConfig& pre,
                                  const ParameterStore<float>* pretrained = nullptr,
                                  const std::function<void(const BetaCandidate&)>& on_candidate = {}) {
  if (candidate_betas.empty()) fail(ErrorCode::EmptyInput, "no beta candidates");
  const auto [fit_part, val_part] = holdout_split(train);
  ImageLoader loader;
  BetaSearchResult res;
  std::optional<std::size_t> best;
  for (double beta : candidate_betas) {
    TrainConfig tc = truncate_schedule(base, budget_epochs);
    tc.loss_beta = beta;
    tc.checkpoint_every = 0;
    tc.validate();
    ModelConfig mc = model_cfg;
    mc.dropout_prob = tc.dropout_prob;
    HourglassNet<T> model(mc);
    init_parameters<T, float>(model, pretrained, tc.seed);
    FitOptions fo;
    fo.preprocess = pre;
    fo.loader = &loader;
    fit(model, fit_part, stats, tc, fo);
    const FrameErrors e = evaluate(model, val_part, stats, pre, loader);
    BetaCandidate c{beta, median(e.translation_error_m), median(e.orientation_error_deg), 0.0};
    c.score = c.median_t_m + c.median_q_deg * std::numbers::pi / 180.0;
    res.candidates.push_back(c);
    if (on_candidate) on_candidate(c);
    const auto& cur = res.candidates.back();
    if (!best || cur.score < res.candidates[*best].score ||
        (cur.score == res.candidates[*best].score && cur.beta < res.candidates[*best].beta))
      best = res.candidates.size() - 1;
  }
  res.best_beta = res.candidates[*best].beta;
  return res;
}

}  // namespace hgpose
