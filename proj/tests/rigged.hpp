#pragma once

// Helpers for evaluation tests: a network whose heads emit a fixed pose, and
// a fixture whose frames all share that pose.

#include "hgpose/checkpoint.hpp"
#include "hgpose/data.hpp"
#include "hgpose/gradcheck.hpp"

namespace rigged {

/// Every weight zero, heads' biases set to `pose`; outputs are exactly the
/// bias values for any input.
inline hgpose::HourglassNet<float> constant_pose_model(const hgpose::ModelConfig& cfg, const hgpose::Pose& pose) {
  using namespace hgpose;
  HourglassNet<float> net(cfg);
  init_parameters(net, 0);
  net.visit([](const std::string&, Parameter<float>& p) {
    p.value.fill(p.kind == ParamKind::RunningVar ? 1.0f : 0.0f);
  });
  ParameterStore<float> store = net.export_parameters();
  Tensor<float>& q = *store.find("regressor.fc_q.bias");
  q[0] = static_cast<float>(pose.q.w);
  q[1] = static_cast<float>(pose.q.x);
  q[2] = static_cast<float>(pose.q.y);
  q[3] = static_cast<float>(pose.q.z);
  Tensor<float>& t = *store.find("regressor.fc_t.bias");
  t[0] = static_cast<float>(pose.t.x);
  t[1] = static_cast<float>(pose.t.y);
  t[2] = static_cast<float>(pose.t.z);
  net.import_parameters(store);
  return net;
}

/// Pose exactly representable in single precision.
inline hgpose::Pose representable_pose() { return {{0.5, 0.5, 0.5, 0.5}, {0.25, -0.5, 1.0}}; }

/// Overwrites every pose file of a fixture scene with `pose`.
inline void flatten_poses(const std::filesystem::path& scene_dir, const hgpose::Pose& pose) {
  for (const auto& e : std::filesystem::recursive_directory_iterator(scene_dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 9 && name.compare(name.size() - 9, 9, ".pose.txt") == 0) hgpose::write_pose_file(e.path(), pose);
  }
}

}  // namespace rigged
