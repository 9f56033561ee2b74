#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ragc/agent.hpp"
#include "ragc/env.hpp"
#include "ragc/scene.hpp"
#include "ragc/train.hpp"

namespace ragc {

enum class Split : std::uint8_t { train_rl = 0, train_detector = 1, test = 2 };

std::string_view split_name(Split s);

struct ExperimentConfig {
  ChirpParams chirp;
  SceneConfig scene;
  AgentConfig agent;
  /// Detector settings live in env.cfar / env.cluster; env.chirp mirrors `chirp`.
  EnvConfig env;

  std::uint64_t seed = 1;
  int train_rl_scenes = 24;
  int train_detector_scenes = 24;
  int test_scenes = 8;
  int label_margin_bins = 1;
  int episodes = 300;
  int checkpoint_every = 10;
  int anchors_k = 6;
  std::filesystem::path output_dir = "runs/desk";

  void validate() const;
  /// 100 + 100 + 20 scenes.
  void apply_paper_scale();

  std::filesystem::path data_dir() const { return output_dir / "data"; }
  std::filesystem::path train_dir() const { return output_dir / "train"; }
  std::filesystem::path eval_dir() const { return output_dir / "eval"; }
};

/// Parses TOML sections [chirp], [scene], [cfar], [agent], [env], [experiment].
/// Unknown keys are rejected. Throws ConfigError.
ExperimentConfig parse_config(std::string_view toml_text, std::string_view source = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text of every setting that shapes the generated dataset.
std::string dataset_fingerprint(const ExperimentConfig& cfg);
/// Hex FNV-1a of dataset_fingerprint.
std::string dataset_hash(const ExperimentConfig& cfg);

std::uint64_t scene_seed(const ExperimentConfig& cfg, Split split, int index);

// generate

struct GenerateReport {
  std::string config_hash;
  int scenes_written = 0;
};

/// Writes <data>/<split>/scene_NNN.csv + labels_NNN.csv and manifest.json.
/// Refuses a non-empty directory unless `force`.
GenerateReport generate_dataset(const ExperimentConfig& cfg, const std::filesystem::path& data_dir, bool force);

/// Loads one split after checking the manifest hash against `cfg`.
std::vector<std::shared_ptr<const Scene>> load_split(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                                                     Split split);

// train

struct TrainReport {
  std::int64_t episodes_done = 0;
  std::int64_t steps = 0;
  bool resumed = false;
  double last_episode_reward = 0.0;
};

/// DDPG over the train-RL split. Writes train_log.csv, checkpoints to
/// <train>/checkpoint every `checkpoint_every` episodes and the final
/// networks to <train>/final. An existing checkpoint is resumed.
TrainReport run_training(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                         const std::filesystem::path& train_dir, std::ostream* progress = nullptr);

// eval

struct EvalReport {
  std::string policy;
  FixedPowerComparison comparison;
  TrendSummary trend;
  std::vector<PowerByTargets> power_table;
  std::vector<double> scene_mean_power_db;
  double mean_reward = 0.0;
  double mean_f1 = 0.0;
};

/// Adaptive policy on the test split vs matched fixed power. `checkpoint`
/// empty selects the random policy. Writes report.json, power_vs_targets.csv
/// and frames.csv into `eval_dir`.
EvalReport run_evaluation(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                          const std::optional<std::filesystem::path>& checkpoint, const std::filesystem::path& eval_dir);

// detect

struct DetectReport {
  int frames = 0;
  int detections = 0;
};

/// Renders a scene of `split` at fixed power, writes detections.csv and,
/// when `dump_cubes`, one radar cube per frame.
DetectReport run_detect(const ExperimentConfig& cfg, const std::filesystem::path& data_dir, Split split,
                        int scene_index, double power_db, const std::filesystem::path& out_dir, bool dump_cubes);

/// Runs the detector on externally supplied radar cubes, one frame each.
DetectReport run_detect_cubes(const ExperimentConfig& cfg, const std::vector<std::filesystem::path>& cubes,
                              const std::filesystem::path& out_dir);

// anchors

/// k-means anchors over every ground-truth box of the detector training
/// split; writes anchors.csv.
std::vector<Anchor> run_anchors(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_file);

}  // namespace ragc
