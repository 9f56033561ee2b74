#include "ragc/env.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "csv.hpp"

namespace ragc {

void EnvConfig::validate() const {
  chirp.validate();
  cfar.validate();
  if (!(power_min_db < power_max_db)) throw ConfigError("env: power_min_db must be below power_max_db");
  if (episode_length < 1) throw ConfigError("env: episode_length must be at least 1");
  if (!std::isfinite(noise_power_dbm)) throw ConfigError("env: noise_power_dbm must be finite");
  if (!(normalization.clip_low_db < normalization.clip_high_db))
    throw ConfigError("env: state clip_low_db must be below clip_high_db");
  if (normalization.out_height < 1 || normalization.out_width < 1 ||
      normalization.out_height > chirp.samples_per_sweep || normalization.out_width > chirp.num_pulses)
    throw ConfigError("env: state size must lie within the range-Doppler image size");
}

PowerAction action_to_power(double action, double power_min_db, double power_max_db) {
  PowerAction out;
  out.action = std::clamp(std::isfinite(action) ? action : 0.0, -1.0, 1.0);
  out.normalized = (out.action + 1.0) / 2.0;
  out.power.power_db = power_min_db + out.normalized * (power_max_db - power_min_db);
  return out;
}

RadarEnv::RadarEnv(EnvConfig config, std::vector<std::shared_ptr<const Scene>> scenes,
                   std::shared_ptr<const Detector> detector)
    : config_(std::move(config)), scenes_(std::move(scenes)), detector_(std::move(detector)) {
  config_.validate();
  if (scenes_.empty()) throw DataError("env: no scenes available");
  for (std::size_t i = 0; i < scenes_.size(); ++i) {
    if (!scenes_[i]) throw DataError("env: null scene");
    if (static_cast<int>(scenes_[i]->frames.size()) < config_.episode_length)
      throw DataError("env: scene " + std::to_string(i) + " has " + std::to_string(scenes_[i]->frames.size()) +
                      " frames, fewer than episode_length " + std::to_string(config_.episode_length));
    if (scenes_[i]->labels.size() != scenes_[i]->frames.size())
      throw DataError("env: scene " + std::to_string(i) + " label count does not match frame count");
  }
  if (!detector_) detector_ = std::make_shared<CfarDetector>(config_.cfar, config_.cluster, config_.nms_iou);
}

RadarFrame RadarEnv::render_raw(std::size_t scene, int frame, double power_db) const {
  const Scene& s = *scenes_.at(scene);
  const auto scatterers = s.frames.at(static_cast<std::size_t>(frame)).scatterers();
  return synth_baseband(scatterers, config_.chirp, PowerSetting{power_db}, config_.noise_power_dbm,
                        derive_seed(config_.noise_seed, scene, static_cast<std::uint64_t>(frame)));
}

RangeDopplerImage RadarEnv::render(std::size_t scene, int frame, double power_db) const {
  return range_doppler_map(render_raw(scene, frame, power_db), config_.window);
}

const std::vector<GroundTruthBox>& RadarEnv::truth(std::size_t scene, int frame) const {
  return scenes_.at(scene)->labels.at(static_cast<std::size_t>(frame));
}

StatePtr RadarEnv::render_current(int frame, double power_db) {
  current_image_ = render(scene_index_, frame, power_db);
  return std::make_shared<const StateImage>(normalize_state(current_image_, config_.normalization));
}

StatePtr RadarEnv::reset() {
  const std::size_t idx = next_scene_;
  next_scene_ = (next_scene_ + 1) % scenes_.size();
  return reset(idx);
}

StatePtr RadarEnv::reset(std::size_t scene_index) {
  if (scene_index >= scenes_.size()) throw DataError("env: scene index out of range");
  scene_index_ = scene_index;
  frame_ = 0;
  active_ = true;
  return render_current(0, 0.5 * (config_.power_min_db + config_.power_max_db));
}

StatePtr RadarEnv::reset_for_episode(std::int64_t episode) {
  const auto n = static_cast<std::int64_t>(scenes_.size());
  next_scene_ = static_cast<std::size_t>((episode + 1) % n);
  return reset(static_cast<std::size_t>(episode % n));
}

StepResult RadarEnv::step(double action) {
  if (!active_) throw RuntimeError("env: step called before reset or after the episode ended");
  const PowerAction pa = action_to_power(action, config_.power_min_db, config_.power_max_db);
  const int last_frame = static_cast<int>(scenes_[scene_index_]->frames.size()) - 1;

  StepResult result;
  auto score = [&](int frame) {
    const auto& gt = truth(scene_index_, frame);
    result.info.detections = detector_->detect(current_image_);
    result.info.f1 = f1_score(result.info.detections, gt, config_.match_iou, config_.class_agnostic).f1;
    result.info.num_targets = static_cast<int>(gt.size());
    result.info.frame_index = frame;
  };

  if (!config_.reward_on_next_state) score(frame_);
  ++frame_;
  // The final transition re-renders the last frame when the scene has no successor.
  const int render_frame = std::min(frame_, last_frame);
  result.next_state = render_current(render_frame, pa.power.power_db);
  if (config_.reward_on_next_state) score(render_frame);

  result.reward = result.info.f1 - pa.normalized;
  result.info.power_db = pa.power.power_db;
  result.done = frame_ >= config_.episode_length;
  if (result.done) active_ = false;
  return result;
}

void write_episode_trace(std::span<const FrameRecord> records, std::ostream& out) {
  out << "frame,power_db,f1,reward,num_targets,num_detections\n";
  for (const FrameRecord& r : records)
    out << r.frame << ',' << csv::num(r.power_db) << ',' << csv::num(r.f1) << ',' << csv::num(r.reward) << ','
        << r.num_targets << ',' << r.num_detections << '\n';
}

FixedPowerRollout rollout_fixed_power(const RadarEnv& env, std::size_t scene_index, double power_db) {
  const EnvConfig& cfg = env.config();
  if (!(power_db >= cfg.power_min_db && power_db <= cfg.power_max_db))
    throw RuntimeError("rollout: power outside the configured range");
  FixedPowerRollout out;
  for (int t = 0; t < cfg.episode_length; ++t) {
    const RangeDopplerImage image = env.render(scene_index, t, power_db);
    EvaluatedFrame frame{env.detector().detect(image), env.truth(scene_index, t)};
    out.f1.push_back(f1_score(frame.detections, frame.truth, cfg.match_iou, cfg.class_agnostic).f1);
    out.frames.push_back(std::move(frame));
  }
  return out;
}

SanityEnv::SanityEnv(int height, int width, int episode_length, double threshold)
    : height_(height), width_(width), episode_length_(episode_length), threshold_(threshold) {
  if (height < 1 || width < 1 || episode_length < 1) throw ConfigError("sanity env: bad dimensions");
}

StatePtr SanityEnv::make_state(double previous_normalized) const {
  return std::make_shared<const StateImage>(
      StateImage::Constant(height_, width_, static_cast<float>(previous_normalized)));
}

StatePtr SanityEnv::reset() {
  previous_ = 0.5;
  t_ = 0;
  active_ = true;
  return make_state(previous_);
}

StepResult SanityEnv::step(double action) {
  if (!active_) throw RuntimeError("sanity env: step called before reset or after the episode ended");
  const PowerAction pa = action_to_power(action, 0.0, 1.0);
  StepResult r;
  r.info.f1 = previous_ >= threshold_ ? 1.0 : 0.0;
  r.info.power_db = pa.power.power_db;
  r.info.frame_index = t_;
  r.reward = r.info.f1 - pa.normalized;
  previous_ = pa.normalized;
  r.next_state = make_state(previous_);
  ++t_;
  r.done = t_ >= episode_length_;
  if (r.done) active_ = false;
  return r;
}

}  // namespace ragc
