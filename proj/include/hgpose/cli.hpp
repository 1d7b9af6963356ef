#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hgpose/checkpoint.hpp"
#include "hgpose/data.hpp"
#include "hgpose/evaluation.hpp"
#include "hgpose/model.hpp"
#include "hgpose/selftest.hpp"
#include "hgpose/training.hpp"

namespace hgpose {

/// Everything a run needs besides the data: `{"model": …, "train": …,
/// "preprocess": …}`. Missing sections keep their defaults.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PreprocessConfig preprocess;
};

inline json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"preprocess", to_json(c.preprocess)}};
}

inline RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, "run config must be a JSON object");
  RunConfig c;
  c.model = model_config_from_json(j.value("model", json::object()));
  c.train = train_config_from_json(j.value("train", json::object()));
  c.preprocess = preprocess_config_from_json(j.value("preprocess", json::object()));
  c.model.dropout_prob = c.train.dropout_prob;
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open config " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::InvalidConfig, path.string() + " is not valid JSON");
  return run_config_from_json(j);
}

/// 1 usage or configuration, 2 data, 3 numerical.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::OutOfRange:
    case ErrorCode::UnsortedEdges: return 1;
    case ErrorCode::ZeroNorm:
    case ErrorCode::NotUnit:
    case ErrorCode::ZeroNormPrediction:
    case ErrorCode::NonUnitTarget:
    case ErrorCode::NonFiniteLoss: return 3;
    default: return 2;
  }
}

namespace detail {

inline std::string scene_name(const std::filesystem::path& scene_dir) {
  const auto p = scene_dir.lexically_normal();
  return (p.filename().empty() ? p.parent_path() : p).filename().string();
}

inline void require_scene_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::LayoutError, "scene directory not found: " + dir.string());
}

inline void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IO, "cannot create " + dir.string() + ": " + ec.message());
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IO, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct CommonRunFlags {
  std::string config;
  std::string variant;
  std::optional<double> beta;
  std::optional<std::uint64_t> seed;
};

inline void add_run_flags(CLI::App* cmd, CommonRunFlags& f) {
  cmd->add_option("--config", f.config, "run config JSON (model/train/preprocess)");
  cmd->add_option("--variant", f.variant, "skip aggregation")->check(CLI::IsMember({"concat", "sum"}));
  cmd->add_option("--beta", f.beta, "loss scale factor");
  cmd->add_option("--seed", f.seed, "random seed");
}

inline RunConfig resolve_run_config(const CommonRunFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.variant.empty()) c.model.variant = parse_variant(f.variant);
  if (f.beta) c.train.loss_beta = *f.beta;
  if (f.seed) c.train.seed = *f.seed;
  c.model.dropout_prob = c.train.dropout_prob;
  c.model.validate();
  c.train.validate();
  c.preprocess.validate();
  return c;
}

inline std::optional<ParameterStore<float>> load_pretrained(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_checkpoint(path).tensors;
}

}  // namespace detail

/// Entry point of the `hgpose` tool. Diagnostics go to `err`, progress to
/// `out`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  CLI::App app{"Hourglass camera pose regression: data, training, evaluation"};
  app.require_subcommand(1);

  // fixture
  auto* fixture = app.add_subcommand("fixture", "write a synthetic scene in the 7-Scenes layout");
  std::string fx_out;
  std::size_t fx_seqs = 2, fx_frames = 16, fx_h = 48, fx_w = 64;
  std::uint64_t fx_seed = 0;
  fixture->add_option("--out", fx_out, "scene directory to create")->required();
  fixture->add_option("--sequences", fx_seqs, "number of sequences (first half train)");
  fixture->add_option("--frames", fx_frames, "frames per sequence");
  fixture->add_option("--height", fx_h, "image height");
  fixture->add_option("--width", fx_w, "image width");
  fixture->add_option("--seed", fx_seed, "random seed");

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "compute and cache per-channel scene statistics");
  std::string st_scene, st_config;
  std::optional<std::size_t> st_rescale;
  stats_cmd->add_option("--scene-dir", st_scene, "scene directory")->required();
  stats_cmd->add_option("--config", st_config, "run config JSON");
  stats_cmd->add_option("--rescale", st_rescale, "short side after rescaling");

  // train
  auto* train = app.add_subcommand("train", "fit a model on a scene's training split");
  std::string tr_scene, tr_out, tr_resume, tr_pretrained;
  detail::CommonRunFlags tr_flags;
  train->add_option("--scene-dir", tr_scene, "scene directory")->required();
  train->add_option("--out", tr_out, "run directory")->required();
  train->add_option("--resume", tr_resume, "training checkpoint to continue from");
  train->add_option("--pretrained", tr_pretrained, "checkpoint holding encoder.* tensors");
  detail::add_run_flags(train, tr_flags);

  // beta-search
  auto* bsearch = app.add_subcommand("beta-search", "grid search over the loss scale factor");
  std::string bs_scene, bs_out, bs_pretrained;
  std::vector<double> bs_betas{1, 3, 5, 10};
  std::size_t bs_budget = 10;
  detail::CommonRunFlags bs_flags;
  bsearch->add_option("--scene-dir", bs_scene, "scene directory")->required();
  bsearch->add_option("--betas", bs_betas, "candidate values")->delimiter(',');
  bsearch->add_option("--budget-epochs", bs_budget, "epochs per candidate");
  bsearch->add_option("--out", bs_out, "CSV report path");
  bsearch->add_option("--pretrained", bs_pretrained, "checkpoint holding encoder.* tensors");
  detail::add_run_flags(bsearch, bs_flags);

  // eval
  auto* eval = app.add_subcommand("eval", "per-frame errors and medians on the test split");
  std::string ev_scene, ev_ckpt, ev_out, ev_config;
  bool ev_dump = false;
  eval->add_option("--scene-dir", ev_scene, "scene directory")->required();
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  eval->add_option("--out", ev_out, "output directory")->required();
  eval->add_option("--config", ev_config, "run config JSON; preprocess section overrides the checkpoint's");
  eval->add_flag("--dump-predictions", ev_dump, "also write raw network outputs");

  // report
  auto* report = app.add_subcommand("report", "merge per-scene errors into summary and histogram CSVs");
  std::vector<std::string> rp_inputs;
  std::string rp_out, rp_t_edges = kDefaultTranslationEdges, rp_q_edges = kDefaultOrientationEdges;
  report->add_option("--inputs", rp_inputs, "errors or summary CSVs")->required();
  report->add_option("--out", rp_out, "output directory")->required();
  report->add_option("--t-edges", rp_t_edges, "translation bin edges start:stop:step (m)");
  report->add_option("--q-edges", rp_q_edges, "orientation bin edges start:stop:step (deg)");

  auto* selftest = app.add_subcommand("selftest", "run the built-in property checks");
  std::size_t sf_samples = 40;
  selftest->add_option("--gradient-samples", sf_samples, "parameters checked per layer type");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*fixture) {
      generate_fixture_scene(fx_out, fx_seqs, fx_frames, fx_h, fx_w, fx_seed);
      out << "wrote " << fx_seqs << " x " << fx_frames << " frames to " << fx_out << "\n";
    } else if (*stats_cmd) {
      detail::require_scene_dir(st_scene);
      std::size_t rescale = st_config.empty() ? PreprocessConfig{}.rescale_short_side
                                              : load_run_config(st_config).preprocess.rescale_short_side;
      if (st_rescale) rescale = *st_rescale;
      const SceneSplit split = scan_scene_dir(st_scene);
      const SceneStats s = compute_scene_stats(split.train, rescale);
      save_scene_stats(stats_cache_path(st_scene), detail::scene_name(st_scene), s, rescale);
      out << "mean " << format_g6(s.mean[0]) << ' ' << format_g6(s.mean[1]) << ' ' << format_g6(s.mean[2]) << "  std "
          << format_g6(s.std[0]) << ' ' << format_g6(s.std[1]) << ' ' << format_g6(s.std[2]) << "\n";
    } else if (*train) {
      const RunConfig rc = detail::resolve_run_config(tr_flags);
      detail::require_scene_dir(tr_scene);
      const SceneSplit split = scan_scene_dir(tr_scene);
      ImageLoader loader;
      const SceneStats stats = scene_stats_cached(tr_scene, split, rc.preprocess.rescale_short_side, &loader);
      detail::make_dir(tr_out);
      json cfg = to_json(rc);
      cfg["scene"] = detail::scene_name(tr_scene);
      detail::write_json(fs::path(tr_out) / "config.json", cfg);

      HourglassNet<float> model(rc.model);
      const auto pretrained = detail::load_pretrained(tr_pretrained);
      init_parameters<float, float>(model, pretrained ? &*pretrained : nullptr, rc.train.seed);
      FitOptions fo;
      fo.preprocess = rc.preprocess;
      fo.run_dir = fs::path(tr_out);
      fo.loader = &loader;
      if (!tr_resume.empty()) fo.resume_from = fs::path(tr_resume);
      fo.on_epoch = [&](const EpochLog& e) {
        out << "epoch " << e.epoch + 1 << "/" << total_epochs(rc.train) << " lr " << format_g6(e.lr) << " loss "
            << format_g6(e.loss_total) << " (t " << format_g6(e.loss_t) << ", q " << format_g6(e.loss_q) << ")\n";
      };
      const TrainState st = fit(model, split.train, stats, rc.train, fo);
      out << "finished " << st.epoch << " epochs, " << st.step << " steps\n";
    } else if (*bsearch) {
      const RunConfig rc = detail::resolve_run_config(bs_flags);
      detail::require_scene_dir(bs_scene);
      const SceneSplit split = scan_scene_dir(bs_scene);
      const SceneStats stats = scene_stats_cached(bs_scene, split, rc.preprocess.rescale_short_side);
      const auto pretrained = detail::load_pretrained(bs_pretrained);
      const BetaSearchResult res = beta_grid_search<float>(
          rc.model, split.train, stats, bs_betas, bs_budget, rc.train, rc.preprocess,
          pretrained ? &*pretrained : nullptr, [&](const BetaCandidate& c) {
            out << "beta " << format_g6(c.beta) << ": median " << format_g6(c.median_t_m) << " m, "
                << format_g6(c.median_q_deg) << " deg, score " << format_g6(c.score) << "\n";
          });
      if (!bs_out.empty()) {
        if (fs::path(bs_out).has_parent_path()) detail::make_dir(fs::path(bs_out).parent_path());
        auto csv = detail::open_csv(bs_out);
        csv << "beta,median_t_m,median_q_deg,score\n";
        for (const auto& c : res.candidates)
          csv << format_g6(c.beta) << ',' << format_g6(c.median_t_m) << ',' << format_g6(c.median_q_deg) << ','
              << format_g6(c.score) << '\n';
      }
      out << "best beta " << format_g6(res.best_beta) << "\n";
    } else if (*eval) {
      detail::require_scene_dir(ev_scene);
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      PreprocessConfig pre = ck.extra.contains("preprocess") ? preprocess_config_from_json(ck.extra.at("preprocess"))
                                                             : PreprocessConfig{};
      if (!ev_config.empty()) pre = load_run_config(ev_config).preprocess;
      HourglassNet<float> model(ck.config);
      model.import_parameters(ck.tensors);
      const SceneSplit split = scan_scene_dir(ev_scene);
      ImageLoader loader(0);
      const SceneStats stats = scene_stats_cached(ev_scene, split, pre.rescale_short_side);
      std::vector<PosePrediction> raw;
      FrameErrors errs = evaluate(model, split.test, stats, pre, loader, ev_dump ? &raw : nullptr);
      errs.scene = detail::scene_name(ev_scene);
      detail::make_dir(ev_out);
      write_errors_csv(fs::path(ev_out) / (errs.scene + "_errors.csv"), errs);
      const EvalSummary summary = summarize({errs});
      write_summary_csv(fs::path(ev_out) / (errs.scene + "_summary.csv"), summary);
      if (ev_dump) write_predictions_csv(fs::path(ev_out) / (errs.scene + "_predictions.csv"), split.test, raw);
      out << errs.scene << ": " << errs.size() << " frames, median " << format_g6(summary.average_t_m) << " m, "
          << format_g6(summary.average_q_deg) << " deg\n";
    } else if (*report) {
      const auto t_edges = parse_edges(rp_t_edges);
      const auto q_edges = parse_edges(rp_q_edges);
      check_edges(t_edges);
      check_edges(q_edges);
      detail::make_dir(rp_out);
      std::vector<SceneSummary> scenes;
      for (const auto& in : rp_inputs) {
        std::ifstream probe(in);
        std::string header;
        if (!probe || !std::getline(probe, header)) fail(ErrorCode::IO, "cannot read " + in);
        if (header.rfind("scene,n_frames,", 0) == 0) {
          for (auto& s : read_summary_csv(in).first) scenes.push_back(s);
          continue;
        }
        const FrameErrors e = read_errors_csv(in);
        scenes.push_back(summarize_scene(e));
        const fs::path base = fs::path(rp_out) / e.scene;
        write_histogram_csv(base.string() + "_t_cdf.csv", t_edges, cumulative_histogram(e.translation_error_m, t_edges).cdf);
        write_histogram_csv(base.string() + "_q_cdf.csv", q_edges, cumulative_histogram(e.orientation_error_deg, q_edges).cdf);
        write_histogram_csv(base.string() + "_t_hist.csv", t_edges, plain_histogram(e.translation_error_m, t_edges));
        write_histogram_csv(base.string() + "_q_hist.csv", q_edges, plain_histogram(e.orientation_error_deg, q_edges));
      }
      const EvalSummary summary = summarize_scenes(scenes);
      write_summary_csv(fs::path(rp_out) / "summary.csv", summary);
      for (const auto& s : summary.scenes)
        out << s.scene << ' ' << s.n_frames << ' ' << format_g6(s.median_t_m) << " m " << format_g6(s.median_q_deg) << " deg\n";
      out << "AVERAGE " << format_g6(summary.average_t_m) << " m " << format_g6(summary.average_q_deg) << " deg\n";
    } else if (*selftest) {
      bool all = true;
      for (const auto& r : run_selftest(sf_samples)) {
        out << (r.ok ? "ok   " : "FAIL ") << r.name << ": " << r.detail << "\n";
        all = all && r.ok;
      }
      if (!all) {
        err << "selftest failed\n";
        return 3;
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace hgpose
