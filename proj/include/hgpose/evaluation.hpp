#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hgpose/checkpoint.hpp"
#include "hgpose/data.hpp"
#include "hgpose/geometry.hpp"
#include "hgpose/model.hpp"

namespace hgpose {

/// Per-frame pose errors of one scene's test split, in frame order.
struct FrameErrors {
  std::string scene;
  std::vector<std::string> sequence;
  std::vector<int> frame_index;
  std::vector<double> translation_error_m;
  std::vector<double> orientation_error_deg;

  std::size_t size() const { return translation_error_m.size(); }
  void push(std::string seq, int idx, double t_err, double q_err) {
    sequence.push_back(std::move(seq));
    frame_index.push_back(idx);
    translation_error_m.push_back(t_err);
    orientation_error_deg.push_back(q_err);
  }
};

struct SceneSummary {
  std::string scene;
  std::size_t n_frames = 0;
  double median_t_m = 0.0;
  double median_q_deg = 0.0;
};

struct EvalSummary {
  std::vector<SceneSummary> scenes;
  double average_t_m = 0.0;   // unweighted mean of per-scene medians
  double average_q_deg = 0.0;
};

struct CumulativeHistogram {
  std::vector<double> bin_edges;
  std::vector<double> cdf;  // fraction of errors <= edge
};

// ---------------------------------------------------------------------------

/// Test-mode evaluation: center crop, eval-mode forward, quaternion
/// normalization, then per-frame errors against ground truth. Raw network
/// outputs are appended to `raw` when given.
template <typename T>
FrameErrors evaluate(const HourglassNet<T>& model, const std::vector<FrameRecord>& records, const SceneStats& stats,
                     PreprocessConfig pre, ImageLoader& loader, std::vector<PosePrediction>* raw = nullptr,
                     std::size_t batch_size = 8) {
  if (records.empty()) fail(ErrorCode::EmptySet, "no frames to evaluate");
  pre.mode = CropMode::TestCenter;
  FrameErrors errs;
  errs.scene = records.front().scene;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, records.size() - start);
    Tensor<T> batch({n, 3, pre.crop, pre.crop});
    for (std::size_t i = 0; i < n; ++i) preprocess_into(loader.load(records[start + i].image_path), stats, pre, nullptr, batch, i);
    const std::vector<PosePrediction> preds = to_predictions(model.forward_eval(batch));
    for (std::size_t i = 0; i < n; ++i) {
      const FrameRecord& rec = records[start + i];
      try {
        const Quaternion q = quat_normalize(preds[i].q_raw);
        errs.push(rec.sequence, rec.frame_index, translation_error_m(preds[i].t, rec.pose.t),
                  angular_error_deg(q, rec.pose.q));
      } catch (const Error& e) {
        throw Error(e.code(), rec.sequence + "/frame " + std::to_string(rec.frame_index) + ": " + e.what());
      }
      if (raw) raw->push_back(preds[i]);
    }
  }
  return errs;
}

template <typename T = float>
FrameErrors evaluate(const std::filesystem::path& checkpoint, const std::vector<FrameRecord>& records,
                     const SceneStats& stats, const PreprocessConfig& pre) {
  const HourglassNet<T> model = load_model<T>(checkpoint);
  ImageLoader loader(0);
  return evaluate(model, records, stats, pre, loader);
}

/// Order-statistic median; mean of the two middle values for even counts.
inline double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::EmptyInput, "median of nothing");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline SceneSummary summarize_scene(const FrameErrors& e) {
  return {e.scene, e.size(), median(e.translation_error_m), median(e.orientation_error_deg)};
}

inline EvalSummary summarize_scenes(std::vector<SceneSummary> scenes) {
  if (scenes.empty()) fail(ErrorCode::EmptyInput, "no scenes to summarize");
  EvalSummary s;
  s.scenes = std::move(scenes);
  for (const auto& sc : s.scenes) {
    s.average_t_m += sc.median_t_m;
    s.average_q_deg += sc.median_q_deg;
  }
  s.average_t_m /= static_cast<double>(s.scenes.size());
  s.average_q_deg /= static_cast<double>(s.scenes.size());
  return s;
}

inline EvalSummary summarize(const std::vector<FrameErrors>& per_scene) {
  std::vector<SceneSummary> scenes;
  for (const auto& e : per_scene) scenes.push_back(summarize_scene(e));
  return summarize_scenes(std::move(scenes));
}

inline void check_edges(const std::vector<double>& edges) {
  if (edges.empty()) fail(ErrorCode::UnsortedEdges, "no bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) fail(ErrorCode::UnsortedEdges, "bin edges must be strictly ascending");
}

inline CumulativeHistogram cumulative_histogram(const std::vector<double>& errors, const std::vector<double>& edges) {
  if (errors.empty()) fail(ErrorCode::EmptyInput, "no errors");
  check_edges(edges);
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  CumulativeHistogram h{edges, {}};
  for (double e : edges) {
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), e) - sorted.begin();
    h.cdf.push_back(static_cast<double>(count) / static_cast<double>(sorted.size()));
  }
  return h;
}

/// Fractions per right-open bin [edge_i, edge_{i+1}); the last entry is the
/// overflow bin [edge_last, inf). Values below the first edge count toward
/// the first bin, so the result has one entry per edge and sums to 1.
inline std::vector<double> plain_histogram(const std::vector<double>& errors, const std::vector<double>& edges) {
  if (errors.empty()) fail(ErrorCode::EmptyInput, "no errors");
  check_edges(edges);
  std::vector<double> frac(edges.size(), 0.0);
  for (double e : errors) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), e);
    const std::size_t bin = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
    frac[bin] += 1.0;
  }
  for (auto& f : frac) f /= static_cast<double>(errors.size());
  return frac;
}

/// Inclusive arithmetic range "start:stop:step".
inline std::vector<double> parse_edges(const std::string& spec) {
  double start = 0, stop = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(spec);
  if (!(in >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0) || stop < start)
    fail(ErrorCode::InvalidConfig, "bin edges must look like start:stop:step, got '" + spec + "'");
  std::vector<double> edges;
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) edges.push_back(start + static_cast<double>(i) * step);
  return edges;
}

inline const char* kDefaultTranslationEdges = "0:1:0.05";
inline const char* kDefaultOrientationEdges = "0:40:2";

// ---------------------------------------------------------------------------
// CSV

inline std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IO, "cannot write " + path.string());
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::IO, where + ": not a number '" + s + "'");
  }
}

}  // namespace detail

inline void write_errors_csv(const std::filesystem::path& path, const FrameErrors& e) {
  auto out = detail::open_csv(path);
  out << "scene,sequence,frame_index,t_err_m,q_err_deg\n";
  for (std::size_t i = 0; i < e.size(); ++i)
    out << e.scene << ',' << e.sequence[i] << ',' << e.frame_index[i] << ',' << format_g6(e.translation_error_m[i])
        << ',' << format_g6(e.orientation_error_deg[i]) << '\n';
  if (!out) fail(ErrorCode::IO, "write failed for " + path.string());
}

inline FrameErrors read_errors_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IO, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "scene,sequence,frame_index,t_err_m,q_err_deg")
    fail(ErrorCode::IO, path.string() + ": unexpected header");
  FrameErrors e;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(row);
    if (cells.size() != 5) fail(ErrorCode::IO, where + ": expected 5 columns");
    if (e.scene.empty()) e.scene = cells[0];
    else if (e.scene != cells[0]) fail(ErrorCode::IO, where + ": mixed scenes in one errors file");
    e.push(cells[1], static_cast<int>(detail::parse_double(cells[2], where)), detail::parse_double(cells[3], where),
           detail::parse_double(cells[4], where));
  }
  if (e.size() == 0) fail(ErrorCode::EmptyInput, path.string() + ": no rows");
  return e;
}

inline void write_summary_csv(const std::filesystem::path& path, const EvalSummary& s) {
  auto out = detail::open_csv(path);
  out << "scene,n_frames,median_t_m,median_q_deg\n";
  std::size_t total = 0;
  for (const auto& sc : s.scenes) {
    out << sc.scene << ',' << sc.n_frames << ',' << format_g6(sc.median_t_m) << ',' << format_g6(sc.median_q_deg) << '\n';
    total += sc.n_frames;
  }
  out << "AVERAGE," << total << ',' << format_g6(s.average_t_m) << ',' << format_g6(s.average_q_deg) << '\n';
  if (!out) fail(ErrorCode::IO, "write failed for " + path.string());
}

/// Per-scene rows of a summary file; the AVERAGE row is returned separately.
inline std::pair<std::vector<SceneSummary>, SceneSummary> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IO, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "scene,n_frames,median_t_m,median_q_deg")
    fail(ErrorCode::IO, path.string() + ": unexpected header");
  std::vector<SceneSummary> rows;
  SceneSummary avg;
  bool have_avg = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != 4) fail(ErrorCode::IO, path.string() + ": expected 4 columns");
    SceneSummary s{c[0], static_cast<std::size_t>(detail::parse_double(c[1], path.string())),
                   detail::parse_double(c[2], path.string()), detail::parse_double(c[3], path.string())};
    if (s.scene == "AVERAGE") avg = s, have_avg = true;
    else rows.push_back(s);
  }
  if (!have_avg) fail(ErrorCode::IO, path.string() + ": missing AVERAGE row");
  return {rows, avg};
}

inline void write_histogram_csv(const std::filesystem::path& path, const std::vector<double>& edges,
                                const std::vector<double>& values) {
  auto out = detail::open_csv(path);
  out << "edge,value\n";
  for (std::size_t i = 0; i < edges.size(); ++i) out << format_g6(edges[i]) << ',' << format_g6(values[i]) << '\n';
  if (!out) fail(ErrorCode::IO, "write failed for " + path.string());
}

inline void write_predictions_csv(const std::filesystem::path& path, const std::vector<FrameRecord>& records,
                                  const std::vector<PosePrediction>& preds) {
  auto out = detail::open_csv(path);
  out << "sequence,frame_index,qw,qx,qy,qz,tx,ty,tz\n";
  char buf[256];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", p.q_raw.w, p.q_raw.x, p.q_raw.y,
                  p.q_raw.z, p.t.x, p.t.y, p.t.z);
    out << records[i].sequence << ',' << records[i].frame_index << ',' << buf << '\n';
  }
}

}  // namespace hgpose
