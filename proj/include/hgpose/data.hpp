#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgpose/geometry.hpp"
#include "hgpose/image.hpp"
#include "hgpose/tensor.hpp"

namespace hgpose {

namespace fs = std::filesystem;

struct FrameRecord {
  fs::path image_path;
  Pose pose;
  std::string scene;
  std::string sequence;  // canonical "seq-NN"
  int frame_index = 0;
};

struct SceneSplit {
  std::vector<FrameRecord> train;
  std::vector<FrameRecord> test;
};

/// Per-channel intensity statistics of a scene's training images, in [0, 1]
/// intensity units.
struct SceneStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

enum class CropMode { TrainRandom, TestCenter };

struct PreprocessConfig {
  std::size_t rescale_short_side = 256;
  std::size_t crop = 224;
  CropMode mode = CropMode::TestCenter;

  void validate() const {
    if (crop == 0 || rescale_short_side == 0 || crop > rescale_short_side)
      fail(ErrorCode::InvalidConfig, "crop must be positive and no larger than the rescaled short side");
  }
};

// ---------------------------------------------------------------------------
// Layout and pose files

/// "sequence3", "seq-03" and "seq3" all name directory "seq-03".
inline std::string canonical_sequence_name(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  std::string digits;
  for (std::size_t i = s.size(); i-- > 0 && std::isdigit(static_cast<unsigned char>(s[i]));) digits.insert(digits.begin(), s[i]);
  if (digits.empty() || !(s.rfind("sequence", 0) == 0 || s.rfind("seq", 0) == 0))
    fail(ErrorCode::LayoutError, "unrecognized sequence name '" + s + "'");
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq-%02d", std::stoi(digits));
  return buf;
}

inline std::vector<std::string> read_split_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::LayoutError, "missing split file " + path.string());
  std::vector<std::string> seqs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    seqs.push_back(canonical_sequence_name(line));
  }
  return seqs;
}

inline Pose read_pose_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::PoseParseError, "cannot open " + path.string());
  HomogeneousMatrix m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(in >> m(r, c))) fail(ErrorCode::PoseParseError, path.string() + ": expected 16 numbers");
  std::string rest;
  if (in >> rest) fail(ErrorCode::PoseParseError, path.string() + ": trailing content");
  try {
    return homogeneous_to_pose(m);
  } catch (const Error& e) {
    fail(ErrorCode::PoseParseError, path.string() + ": " + e.what());
  }
}

inline void write_pose_file(const fs::path& path, const Pose& pose) {
  const HomogeneousMatrix m = pose_to_homogeneous(pose);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IO, "cannot write " + path.string());
  char buf[64];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      std::snprintf(buf, sizeof buf, "%.10e", m(r, c));
      out << (c ? "\t" : "") << buf;
    }
    out << '\n';
  }
}

inline std::vector<FrameRecord> scan_sequence(const fs::path& scene_dir, const std::string& scene,
                                              const std::string& sequence) {
  const fs::path dir = scene_dir / sequence;
  if (!fs::is_directory(dir)) fail(ErrorCode::LayoutError, "missing sequence directory " + dir.string());
  std::vector<FrameRecord> frames;
  const std::string suffix = ".color.png";
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("frame-", 0) != 0 || name.size() <= suffix.size() + 6 ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const std::string stem = name.substr(0, name.size() - suffix.size());
    FrameRecord rec;
    rec.image_path = entry.path();
    rec.scene = scene;
    rec.sequence = sequence;
    try {
      rec.frame_index = std::stoi(stem.substr(6));
    } catch (const std::exception&) {
      fail(ErrorCode::LayoutError, "bad frame file name " + name);
    }
    rec.pose = read_pose_file(dir / (stem + ".pose.txt"));
    frames.push_back(std::move(rec));
  }
  std::sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; });
  return frames;
}

/// Reads `root/scene_name` in the 7-Scenes layout. Frames are ordered by
/// (sequence, frame index).
inline SceneSplit scan_scene(const fs::path& root, const std::string& scene_name) {
  const fs::path dir = root / scene_name;
  if (!fs::is_directory(dir)) fail(ErrorCode::LayoutError, "scene directory " + dir.string() + " does not exist");
  auto load = [&](const char* split_file) {
    std::vector<std::string> seqs = read_split_file(dir / split_file);
    std::sort(seqs.begin(), seqs.end());
    std::vector<FrameRecord> out;
    for (const auto& s : seqs) {
      auto frames = scan_sequence(dir, scene_name, s);
      out.insert(out.end(), std::make_move_iterator(frames.begin()), std::make_move_iterator(frames.end()));
    }
    return out;
  };
  SceneSplit split{load("TrainSplit.txt"), load("TestSplit.txt")};
  for (const auto& a : split.train)
    for (const auto& b : split.test)
      if (a.sequence == b.sequence && a.frame_index == b.frame_index)
        fail(ErrorCode::LayoutError, "sequence " + a.sequence + " appears in both splits");
  return split;
}

inline SceneSplit scan_scene_dir(const fs::path& scene_dir) {
  const fs::path clean = scene_dir.lexically_normal();
  const fs::path p = clean.filename().empty() ? clean.parent_path() : clean;
  return scan_scene(p.parent_path().empty() ? fs::path(".") : p.parent_path(), p.filename().string());
}

// ---------------------------------------------------------------------------
// Image access

/// Decoded frames, optionally memoized up to a byte budget.
class ImageLoader {
 public:
  explicit ImageLoader(std::size_t cache_budget_bytes = std::size_t{256} << 20) : budget_(cache_budget_bytes) {}

  Image load(const fs::path& path) {
    if (auto it = cache_.find(path.string()); it != cache_.end()) return to_float(it->second);
    RgbImage8 img = read_png(path);
    Image out = to_float(img);
    if (used_ + img.pixels.size() <= budget_) {
      used_ += img.pixels.size();
      cache_.emplace(path.string(), std::move(img));
    }
    return out;
  }

 private:
  std::size_t budget_;
  std::size_t used_ = 0;
  std::map<std::string, RgbImage8> cache_;
};

// ---------------------------------------------------------------------------
// Statistics

/// Mean and population standard deviation per channel over every pixel of
/// the rescaled training images.
inline SceneStats compute_scene_stats(const std::vector<FrameRecord>& train_records, std::size_t rescale_short_side,
                                      ImageLoader* loader = nullptr) {
  if (train_records.empty()) fail(ErrorCode::EmptySet, "no training frames");
  ImageLoader local(0);
  ImageLoader& ld = loader ? *loader : local;
  std::array<double, 3> sum{}, sq{};
  double count = 0;
  for (const auto& rec : train_records) {
    const Image img = rescale_short_side_image(ld.load(rec.image_path), rescale_short_side);
    for (std::size_t i = 0; i < img.height * img.width; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = img.data[i * 3 + c];
        sum[c] += v;
        sq[c] += v * v;
      }
    count += static_cast<double>(img.height * img.width);
  }
  SceneStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / count;
    s.std[c] = std::sqrt(std::max(0.0, sq[c] / count - s.mean[c] * s.mean[c]));
    if (!(s.std[c] > 1e-9)) fail(ErrorCode::ZeroVariance, "channel " + std::to_string(c) + " is constant");
  }
  return s;
}

inline fs::path stats_cache_path(const fs::path& scene_dir) {
  const fs::path p = scene_dir.lexically_normal();
  const fs::path dir = p.filename().empty() ? p.parent_path() : p;
  return dir.parent_path() / (dir.filename().string() + ".stats.json");
}

inline void save_scene_stats(const fs::path& path, const std::string& scene, const SceneStats& s,
                             std::size_t rescale_short_side) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IO, "cannot write " + path.string());
  out << nlohmann::json{{"scene", scene}, {"mean", s.mean}, {"std", s.std}, {"rescale_short_side", rescale_short_side}}
             .dump(2)
      << '\n';
}

inline SceneStats load_scene_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IO, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    SceneStats s{j.at("mean").get<std::array<double, 3>>(), j.at("std").get<std::array<double, 3>>()};
    for (double v : s.std)
      if (!(v > 0.0)) fail(ErrorCode::ZeroVariance, "cached std must be positive");
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IO, path.string() + ": " + e.what());
  }
}

/// Cached statistics when the cache was computed at the same rescale size,
/// otherwise computed from the training split and written to the cache.
inline SceneStats scene_stats_cached(const fs::path& scene_dir, const SceneSplit& split, std::size_t rescale_short_side,
                                     ImageLoader* loader = nullptr) {
  const fs::path cache = stats_cache_path(scene_dir);
  if (fs::exists(cache)) {
    std::ifstream in(cache);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("rescale_short_side", std::size_t{0}) == rescale_short_side)
      return load_scene_stats(cache);
  }
  const SceneStats s = compute_scene_stats(split.train, rescale_short_side, loader);
  const std::string scene = split.train.empty() ? std::string() : split.train.front().scene;
  save_scene_stats(cache, scene, s, rescale_short_side);
  return s;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct CropOffsets {
  std::size_t row = 0;
  std::size_t col = 0;
};

/// Test mode centers the crop (floor); train mode draws each offset
/// uniformly from every valid position.
inline CropOffsets crop_offsets(std::size_t h, std::size_t w, const PreprocessConfig& cfg, std::mt19937_64* rng) {
  if (h < cfg.crop || w < cfg.crop)
    fail(ErrorCode::TooSmall, "rescaled image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than crop");
  if (cfg.mode == CropMode::TestCenter) return {(h - cfg.crop) / 2, (w - cfg.crop) / 2};
  if (!rng) fail(ErrorCode::InvalidConfig, "random crop needs a generator");
  std::uniform_int_distribution<std::size_t> rows(0, h - cfg.crop), cols(0, w - cfg.crop);
  const std::size_t r = rows(*rng);
  return {r, cols(*rng)};
}

/// Rescale, normalize, crop; writes sample `index` of a [N,3,crop,crop]
/// batch tensor.
template <typename T>
void preprocess_into(const Image& image, const SceneStats& stats, const PreprocessConfig& cfg, std::mt19937_64* rng,
                     Tensor<T>& batch, std::size_t index) {
  cfg.validate();
  if (image.height == 0 || image.width == 0) fail(ErrorCode::TooSmall, "empty image");
  const Image scaled = rescale_short_side_image(image, cfg.rescale_short_side);
  const CropOffsets off = crop_offsets(scaled.height, scaled.width, cfg, rng);
  const std::size_t k = cfg.crop;
  for (std::size_t c = 0; c < 3; ++c) {
    const double inv = 1.0 / stats.std[c];
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t col = 0; col < k; ++col)
        batch.at(index, c, r, col) = static_cast<T>((scaled.at(off.row + r, off.col + col, c) - stats.mean[c]) * inv);
  }
}

template <typename T = float>
Tensor<T> preprocess(const Image& image, const SceneStats& stats, const PreprocessConfig& cfg,
                     std::mt19937_64* rng = nullptr) {
  Tensor<T> out({1, 3, cfg.crop, cfg.crop});
  preprocess_into(image, stats, cfg, rng, out, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Batching

/// Shuffled index batches for one epoch; the permutation depends only on
/// (seed, epoch) and the final short batch is kept. A single leftover sample
/// joins the previous batch, since batch statistics of one sample are
/// degenerate.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_records, std::size_t batch_size,
                                                           std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) fail(ErrorCode::InvalidConfig, "batch_size must be at least 1");
  std::vector<std::size_t> order(n_records);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5348u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n_records; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n_records, i + batch_size)));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace detail {

inline Pose random_fixture_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal;
  double ax = normal(rng), ay = normal(rng), az = normal(rng);
  const double n = std::sqrt(ax * ax + ay * ay + az * az) + 1e-12;
  const double angle = std::uniform_real_distribution<double>(0.0, std::numbers::pi / 3)(rng);
  const double s = std::sin(angle / 2) / n;
  Pose p;
  p.q = canonical_sign(quat_normalize({std::cos(angle / 2), ax * s, ay * s, az * s}));
  p.t = {unit(rng), unit(rng), unit(rng)};
  return p;
}

/// Background color ramps encode translation, a checkered quad encodes
/// orientation through its color, position and size.
inline RgbImage8 render_fixture_image(const Pose& p, std::size_t h, std::size_t w) {
  RgbImage8 img{h, w, std::vector<std::uint8_t>(h * w * 3)};
  const double t[3] = {p.t.x, p.t.y, p.t.z};
  const double q[3] = {p.q.x, p.q.y, p.q.z};
  const double phi = std::atan2(p.q.y, p.q.x);
  const double cy = 0.5 + 0.3 * p.q.y, cx = 0.5 + 0.3 * p.q.x;
  const double half = 0.18 + 0.1 * p.q.z;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(h);
      const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(w);
      const double ramp = (u - 0.5) * std::cos(phi) + (v - 0.5) * std::sin(phi);
      const bool in_quad = std::abs(u - cx) < half && std::abs(v - cy) < half;
      const bool checker = (static_cast<int>(std::floor(u * 12)) + static_cast<int>(std::floor(v * 12))) % 2 == 0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double val = 0.5 + 0.25 * t[ch] + 0.2 * ramp * (1.0 + t[(ch + 1) % 3]);
        if (in_quad) val = 0.5 + 0.8 * q[ch] + (checker ? 0.08 : -0.08);
        img.pixels[(r * w + c) * 3 + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
      }
    }
  return img;
}

}  // namespace detail

/// Writes a synthetic scene in the 7-Scenes layout at `out_dir`. The first
/// ceil(n/2) sequences form the training split, the rest the test split.
inline void generate_fixture_scene(const fs::path& out_dir, std::size_t n_sequences, std::size_t frames_per_seq,
                                   std::size_t image_h, std::size_t image_w, std::uint64_t seed) {
  if (n_sequences == 0 || frames_per_seq == 0 || image_h == 0 || image_w == 0)
    fail(ErrorCode::InvalidConfig, "fixture needs at least one sequence, frame and pixel");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::IO, "cannot create " + out_dir.string() + ": " + ec.message());
  std::mt19937_64 rng(seed);
  const std::size_t n_train = (n_sequences + 1) / 2;
  std::ofstream train(out_dir / "TrainSplit.txt", std::ios::trunc), test(out_dir / "TestSplit.txt", std::ios::trunc);
  if (!train || !test) fail(ErrorCode::IO, "cannot write split files in " + out_dir.string());
  for (std::size_t s = 0; s < n_sequences; ++s) {
    (s < n_train ? train : test) << "sequence" << (s + 1) << '\n';
    const fs::path seq_dir = out_dir / canonical_sequence_name("sequence" + std::to_string(s + 1));
    fs::create_directories(seq_dir, ec);
    if (ec) fail(ErrorCode::IO, "cannot create " + seq_dir.string());
    for (std::size_t f = 0; f < frames_per_seq; ++f) {
      const Pose pose = detail::random_fixture_pose(rng);
      char stem[32];
      std::snprintf(stem, sizeof stem, "frame-%06zu", f);
      write_png(seq_dir / (std::string(stem) + ".color.png"), detail::render_fixture_image(pose, image_h, image_w));
      write_pose_file(seq_dir / (std::string(stem) + ".pose.txt"), pose);
    }
  }
}

}  // namespace hgpose
