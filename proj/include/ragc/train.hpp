#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "ragc/agent.hpp"
#include "ragc/detect.hpp"
#include "ragc/env.hpp"

namespace ragc {

struct TrainLogRow {
  std::int64_t step = 0;
  std::int64_t episode = 0;
  double reward = 0.0;
  double f1 = 0.0;
  double action_norm = 0.0;
  double power_db = 0.0;
  /// NaN before the first update.
  double critic_loss = 0.0;
  double actor_objective = 0.0;
};

void write_train_log_header(std::ostream& out);
void write_train_log_row(const TrainLogRow& row, std::ostream& out);

struct EpisodeSummary {
  std::int64_t episode = 0;
  int steps = 0;
  double total_reward = 0.0;
  double mean_f1 = 0.0;
  double mean_action_norm = 0.0;
};

/// One episode of interaction: uniform actions during warmup, then the
/// exploring policy, with one agent update per step once the agent is ready.
EpisodeSummary train_episode(DdpgAgent& agent, Environment& env, std::int64_t episode,
                             const std::function<void(const TrainLogRow&)>& log = {});

using Policy = std::function<double(const StateImage&)>;

/// Greedy actor policy (no exploration noise).
Policy greedy_policy(DdpgAgent& agent);
/// Uniform actions in [-1, 1] from a seeded stream.
Policy random_policy(std::uint64_t seed);

/// One frame rendered during policy evaluation with the power chosen on
/// the previous step. Frame 0 (rendered at the reset power) is excluded.
struct PowerSample {
  std::size_t scene = 0;
  int frame = 0;
  int num_targets = 0;
  double power_db = 0.0;
};

struct SceneEvaluation {
  std::vector<EvaluatedFrame> frames;
  std::vector<double> f1;
  std::vector<double> rewards;
  std::vector<double> action_norms;
  double mean_action_norm = 0.0;
  double mean_power_db = 0.0;
};

struct PolicyEvaluation {
  std::vector<SceneEvaluation> scenes;
  std::vector<PowerSample> power_samples;
};

/// Plays every scene of the environment once, in order, under `policy`.
PolicyEvaluation evaluate_policy(RadarEnv& env, const Policy& policy);

/// Average ranks, ties share their mean rank.
std::vector<double> average_ranks(std::span<const double> values);
/// Spearman rank correlation; NaN when either input is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct PowerByTargets {
  int num_targets = 0;
  int frames = 0;
  double mean_power_db = 0.0;
};

/// Mean chosen power per target count, ascending in the count.
std::vector<PowerByTargets> power_by_target_count(std::span<const PowerSample> samples);

struct TrendSummary {
  double spearman_rho = 0.0;
  double global_mean_power_db = 0.0;
  /// NaN when there are no zero-target frames.
  double zero_target_mean_power_db = 0.0;
  int zero_target_frames = 0;
  int frames = 0;
};

TrendSummary power_trend(std::span<const PowerSample> samples);

struct FixedPowerComparison {
  double adaptive_map = 0.0;
  double fixed_map = 0.0;
  double delta = 0.0;
  std::vector<double> fixed_power_db;
};

/// Replays each scene at the power matching its mean adaptive action and
/// compares the pooled mAP of both runs.
FixedPowerComparison compare_fixed_power(const RadarEnv& env, const PolicyEvaluation& adaptive);

}  // namespace ragc
