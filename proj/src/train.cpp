#include "ragc/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "csv.hpp"

namespace ragc {

void write_train_log_header(std::ostream& out) {
  out << "step,episode,reward,f1,action_norm,power_db,critic_loss,actor_objective\n";
}

void write_train_log_row(const TrainLogRow& r, std::ostream& out) {
  out << r.step << ',' << r.episode << ',' << csv::num(r.reward) << ',' << csv::num(r.f1) << ','
      << csv::num(r.action_norm) << ',' << csv::num(r.power_db) << ',' << csv::num(r.critic_loss) << ','
      << csv::num(r.actor_objective) << '\n';
}

EpisodeSummary train_episode(DdpgAgent& agent, Environment& env, std::int64_t episode,
                             const std::function<void(const TrainLogRow&)>& log) {
  EpisodeSummary summary;
  summary.episode = episode;
  StatePtr state = env.reset_for_episode(episode);
  bool done = false;
  while (!done) {
    const bool warm = agent.steps() < agent.config().warmup_steps;
    const double action = warm ? agent.random_action() : agent.act(*state, true);
    StepResult r = env.step(action);
    agent.remember({state, static_cast<float>(action), static_cast<float>(r.reward), r.next_state, r.done});
    agent.count_step();

    TrainLogRow row;
    row.step = agent.steps();
    row.episode = episode;
    row.reward = r.reward;
    row.f1 = r.info.f1;
    row.action_norm = (action + 1.0) / 2.0;
    row.power_db = r.info.power_db;
    row.critic_loss = std::numeric_limits<double>::quiet_NaN();
    row.actor_objective = std::numeric_limits<double>::quiet_NaN();
    if (agent.ready()) {
      const UpdateStats stats = agent.update();
      row.critic_loss = stats.critic_loss;
      row.actor_objective = stats.actor_objective;
    }
    if (log) log(row);

    summary.total_reward += r.reward;
    summary.mean_f1 += r.info.f1;
    summary.mean_action_norm += row.action_norm;
    ++summary.steps;
    state = std::move(r.next_state);
    done = r.done;
  }
  agent.end_episode();
  summary.mean_f1 /= summary.steps;
  summary.mean_action_norm /= summary.steps;
  return summary;
}

Policy greedy_policy(DdpgAgent& agent) {
  return [&agent](const StateImage& s) { return agent.act(s, false); };
}

Policy random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](const StateImage&) { return std::uniform_real_distribution<double>(-1.0, 1.0)(*rng); };
}

PolicyEvaluation evaluate_policy(RadarEnv& env, const Policy& policy) {
  PolicyEvaluation out;
  const EnvConfig& cfg = env.config();
  for (std::size_t s = 0; s < env.num_scenes(); ++s) {
    SceneEvaluation scene;
    StatePtr state = env.reset(s);
    bool done = false;
    while (!done) {
      const double action = policy(*state);
      const int frame = env.frame_index();
      StepResult r = env.step(action);
      scene.frames.push_back({r.info.detections, env.truth(s, frame)});
      scene.f1.push_back(r.info.f1);
      scene.rewards.push_back(r.reward);
      const PowerAction pa = action_to_power(action, cfg.power_min_db, cfg.power_max_db);
      scene.action_norms.push_back(pa.normalized);
      if (!r.done) {
        const int next = env.frame_index();
        out.power_samples.push_back({s, next, static_cast<int>(env.truth(s, next).size()), pa.power.power_db});
      }
      state = std::move(r.next_state);
      done = r.done;
    }
    scene.mean_action_norm =
        std::accumulate(scene.action_norms.begin(), scene.action_norms.end(), 0.0) / scene.action_norms.size();
    scene.mean_power_db = cfg.power_min_db + scene.mean_action_norm * (cfg.power_max_db - cfg.power_min_db);
    out.scenes.push_back(std::move(scene));
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw RuntimeError("spearman: length mismatch");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::vector<PowerByTargets> power_by_target_count(std::span<const PowerSample> samples) {
  std::map<int, PowerByTargets> groups;
  for (const PowerSample& s : samples) {
    PowerByTargets& g = groups[s.num_targets];
    g.num_targets = s.num_targets;
    ++g.frames;
    g.mean_power_db += s.power_db;
  }
  std::vector<PowerByTargets> out;
  for (auto& [k, g] : groups) {
    g.mean_power_db /= g.frames;
    out.push_back(g);
  }
  return out;
}

TrendSummary power_trend(std::span<const PowerSample> samples) {
  TrendSummary t;
  t.zero_target_mean_power_db = std::numeric_limits<double>::quiet_NaN();
  t.spearman_rho = std::numeric_limits<double>::quiet_NaN();
  if (samples.empty()) return t;
  std::vector<double> counts, powers;
  double zero_sum = 0.0;
  for (const PowerSample& s : samples) {
    counts.push_back(s.num_targets);
    powers.push_back(s.power_db);
    if (s.num_targets == 0) {
      zero_sum += s.power_db;
      ++t.zero_target_frames;
    }
  }
  t.frames = static_cast<int>(samples.size());
  t.spearman_rho = spearman(counts, powers);
  t.global_mean_power_db = std::accumulate(powers.begin(), powers.end(), 0.0) / t.frames;
  if (t.zero_target_frames > 0) t.zero_target_mean_power_db = zero_sum / t.zero_target_frames;
  return t;
}

FixedPowerComparison compare_fixed_power(const RadarEnv& env, const PolicyEvaluation& adaptive) {
  const EnvConfig& cfg = env.config();
  FixedPowerComparison out;
  std::vector<EvaluatedFrame> adaptive_frames, fixed_frames;
  for (std::size_t s = 0; s < adaptive.scenes.size(); ++s) {
    const SceneEvaluation& scene = adaptive.scenes[s];
    adaptive_frames.insert(adaptive_frames.end(), scene.frames.begin(), scene.frames.end());
    const double power = std::clamp(scene.mean_power_db, cfg.power_min_db, cfg.power_max_db);
    out.fixed_power_db.push_back(power);
    FixedPowerRollout fixed = rollout_fixed_power(env, s, power);
    fixed_frames.insert(fixed_frames.end(), std::make_move_iterator(fixed.frames.begin()),
                        std::make_move_iterator(fixed.frames.end()));
  }
  out.adaptive_map = mean_average_precision(adaptive_frames, cfg.match_iou, cfg.class_agnostic).map;
  out.fixed_map = mean_average_precision(fixed_frames, cfg.match_iou, cfg.class_agnostic).map;
  out.delta = out.adaptive_map - out.fixed_map;
  return out;
}

}  // namespace ragc
