#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "ragc/agent.hpp"
#include "ragc/detect.hpp"
#include "ragc/radar.hpp"
#include "ragc/scene.hpp"

namespace ragc {

struct EnvConfig {
  ChirpParams chirp;
  double power_min_db = 0.0;
  double power_max_db = 30.0;
  double noise_power_dbm = -80.0;
  Window window = Window::hann;
  CfarParams cfar;
  ClusterParams cluster;
  double nms_iou = 0.5;
  double match_iou = 0.5;
  /// Match detections to truth regardless of the predicted class.
  bool class_agnostic = true;
  StateNormalization normalization;
  int episode_length = 100;
  bool reward_on_next_state = false;
  std::uint64_t noise_seed = 7;

  void validate() const;
};

struct PowerAction {
  double action = 0.0;      // clipped to [-1, 1]
  double normalized = 0.0;  // a' = (a + 1) / 2
  PowerSetting power;
};

/// a' = (a + 1) / 2, P_c = P_min + a' (P_max - P_min), linear in dB.
PowerAction action_to_power(double action, double power_min_db, double power_max_db);

struct StepInfo {
  double f1 = 1.0;
  double power_db = 0.0;
  int num_targets = 0;
  int frame_index = 0;
  std::vector<BBox> detections;
};

struct StepResult {
  StatePtr next_state;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual StatePtr reset() = 0;
  /// Reset for the given global episode number; schedules that depend on
  /// the episode count (round-robin scenes) stay reproducible on resume.
  virtual StatePtr reset_for_episode(std::int64_t episode) {
    (void)episode;
    return reset();
  }
  virtual StepResult step(double action) = 0;
  virtual int episode_length() const = 0;
};

/// Scene playback, power-conditioned rendering, detector scoring and the
/// F1 - a' reward.
class RadarEnv final : public Environment {
 public:
  RadarEnv(EnvConfig config, std::vector<std::shared_ptr<const Scene>> scenes,
           std::shared_ptr<const Detector> detector = nullptr);

  /// Next scene in round-robin order.
  StatePtr reset() override;
  StatePtr reset(std::size_t scene_index);
  StatePtr reset_for_episode(std::int64_t episode) override;
  StepResult step(double action) override;
  int episode_length() const override { return config_.episode_length; }

  std::size_t num_scenes() const { return scenes_.size(); }
  std::size_t scene_index() const { return scene_index_; }
  int frame_index() const { return frame_; }
  const EnvConfig& config() const { return config_; }
  const Detector& detector() const { return *detector_; }

  /// Renders frame `frame` of scene `scene` at `power_db`; the noise draw
  /// depends only on (noise seed, scene, frame).
  RangeDopplerImage render(std::size_t scene, int frame, double power_db) const;
  RadarFrame render_raw(std::size_t scene, int frame, double power_db) const;
  const std::vector<GroundTruthBox>& truth(std::size_t scene, int frame) const;

 private:
  StatePtr render_current(int frame, double power_db);

  EnvConfig config_;
  std::vector<std::shared_ptr<const Scene>> scenes_;
  std::shared_ptr<const Detector> detector_;
  std::size_t next_scene_ = 0;
  std::size_t scene_index_ = 0;
  int frame_ = 0;
  bool active_ = false;
  RangeDopplerImage current_image_;
};

struct FrameRecord {
  int frame = 0;
  double power_db = 0.0;
  double f1 = 0.0;
  double reward = 0.0;
  int num_targets = 0;
  int num_detections = 0;
};

void write_episode_trace(std::span<const FrameRecord> records, std::ostream& out);

struct FixedPowerRollout {
  std::vector<EvaluatedFrame> frames;
  std::vector<double> f1;
};

/// Plays `episode_length` frames of a scene at constant power.
FixedPowerRollout rollout_fixed_power(const RadarEnv& env, std::size_t scene_index, double power_db);

/// Stub environment where detection is a pure power threshold:
/// F1(s_t) = 1 if the previous a' >= threshold else 0. The state image is
/// filled with the previous a'.
class SanityEnv final : public Environment {
 public:
  SanityEnv(int height, int width, int episode_length = 100, double threshold = 0.5);

  StatePtr reset() override;
  StepResult step(double action) override;
  int episode_length() const override { return episode_length_; }

 private:
  StatePtr make_state(double previous_normalized) const;

  int height_;
  int width_;
  int episode_length_;
  double threshold_;
  double previous_ = 0.5;
  int t_ = 0;
  bool active_ = false;
};

}  // namespace ragc
