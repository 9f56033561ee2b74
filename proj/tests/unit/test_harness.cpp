#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ragc/harness.hpp"

using namespace ragc;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTiny = R"(
[scene]
num_frames = 6
pedestrians = [0, 1]
vehicles = 1

[env]
episode_length = 6
state_height = 16
state_width = 16

[agent]
warmup_steps = 8
batch_size = 4
replay_capacity = 100

[experiment]
seed = 5
train_rl_scenes = 1
train_detector_scenes = 2
test_scenes = 1
episodes = 4
checkpoint_every = 2
anchors_k = 1
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("ragc_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig c = parse_config(kTiny);
  EXPECT_EQ(c.scene.num_frames, 6);
  EXPECT_EQ(c.scene.pedestrians.min, 0);
  EXPECT_EQ(c.scene.pedestrians.max, 1);
  EXPECT_EQ(c.scene.vehicles.min, 1);
  EXPECT_EQ(c.scene.vehicles.max, 1);
  EXPECT_EQ(c.agent.actor.input_height, 16);
  EXPECT_EQ(c.agent.critic.input_width, 16);
  EXPECT_EQ(c.env.chirp.num_pulses, 128);
  EXPECT_EQ(c.agent.gamma, 0.99);
  EXPECT_EQ(c.seed, 5u);

  ExperimentConfig p = parse_config("[experiment]\npaper_scale = true\n");
  EXPECT_EQ(p.train_rl_scenes, 100);
  EXPECT_EQ(p.test_scenes, 20);
  EXPECT_EQ(parse_config("[agent]\nnetworks = \"reference\"\n").agent.actor.conv_channels,
            nn::ActorSpec::reference().conv_channels);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[scene]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[nonsense]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[scene]\nnum_frames = \"many\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[env]\npower_min_db = 30.0\npower_max_db = 10.0\n"), ConfigError);
  EXPECT_THROW(parse_config("[env]\nwindow = \"kaiser\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[agent]\ngamma = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("[scene\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/ragc.toml"), ConfigError);
}

TEST(Stats, AverageRanksAndSpearman) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
  EXPECT_NEAR(spearman(x, y), 0.8, 1e-12);
  const std::vector<double> rev{4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, rev), -1.0, 1e-12);
  // Ties: scipy.stats.spearmanr gives 0.8651809126974003.
  const std::vector<double> a{0, 0, 1, 1, 2}, b{1, 2, 2, 3, 5};
  EXPECT_NEAR(spearman(a, b), 0.8651809126974003, 1e-12);
  const std::vector<double> flat{2, 2, 2, 2};
  EXPECT_TRUE(std::isnan(spearman(x, flat)));
}

TEST(Stats, PowerTrendTable) {
  const std::vector<PowerSample> s{{0, 1, 0, 2.0}, {0, 2, 1, 10.0}, {0, 3, 2, 20.0}, {1, 1, 0, 4.0}, {1, 2, 2, 24.0}};
  const auto table = power_by_target_count(s);
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[0].num_targets, 0);
  EXPECT_EQ(table[0].frames, 2);
  EXPECT_DOUBLE_EQ(table[0].mean_power_db, 3.0);
  EXPECT_DOUBLE_EQ(table[2].mean_power_db, 22.0);
  const TrendSummary t = power_trend(s);
  EXPECT_EQ(t.frames, 5);
  EXPECT_EQ(t.zero_target_frames, 2);
  EXPECT_DOUBLE_EQ(t.global_mean_power_db, 12.0);
  EXPECT_DOUBLE_EQ(t.zero_target_mean_power_db, 3.0);
  EXPECT_GT(t.spearman_rho, 0.9);
}

TEST(Generate, DeterministicAndGuarded) {
  TempDir a("gen_a"), b("gen_b");
  const ExperimentConfig c = parse_config(kTiny);
  const GenerateReport ra = generate_dataset(c, a.path() / "data", false);
  generate_dataset(c, b.path() / "data", false);
  EXPECT_EQ(ra.scenes_written, 4);
  EXPECT_EQ(ra.config_hash, dataset_hash(c));
  for (const char* f : {"manifest.json", "train_rl/scene_000.csv", "test/labels_000.csv", "train_detector/scene_001.csv"})
    EXPECT_EQ(slurp(a.path() / "data" / f), slurp(b.path() / "data" / f)) << f;
  EXPECT_THROW(generate_dataset(c, a.path() / "data", false), DataError);
  EXPECT_NO_THROW(generate_dataset(c, a.path() / "data", true));

  ExperimentConfig other = c;
  other.seed = 6;
  EXPECT_NE(dataset_hash(other), dataset_hash(c));
  EXPECT_THROW(load_split(other, a.path() / "data", Split::test), DataError);
  const auto scenes = load_split(c, a.path() / "data", Split::train_detector);
  ASSERT_EQ(scenes.size(), 2u);
  EXPECT_EQ(scenes[0]->frames.size(), 6u);
  EXPECT_NE(scene_seed(c, Split::test, 0), scene_seed(c, Split::train_rl, 0));
}

TEST(Train, DeterministicAndResumable) {
  TempDir root("train");
  const ExperimentConfig c = parse_config(kTiny);
  const fs::path data = root.path() / "data";
  generate_dataset(c, data, false);

  const TrainReport full = run_training(c, data, root.path() / "full");
  EXPECT_EQ(full.episodes_done, 4);
  EXPECT_EQ(full.steps, 24);
  run_training(c, data, root.path() / "again");
  EXPECT_EQ(slurp(root.path() / "full/train_log.csv"), slurp(root.path() / "again/train_log.csv"));
  EXPECT_EQ(slurp(root.path() / "full/final/actor.rgnp"), slurp(root.path() / "again/final/actor.rgnp"));

  // Interrupted after two episodes with a partially written log.
  ExperimentConfig half = c;
  half.episodes = 2;
  run_training(half, data, root.path() / "resumed");
  std::ofstream(root.path() / "resumed/train_log.csv", std::ios::app) << "999,9,0,0,0,0,0,0\n";
  const TrainReport resumed = run_training(c, data, root.path() / "resumed");
  EXPECT_TRUE(resumed.resumed);
  EXPECT_EQ(resumed.steps, 24);
  EXPECT_EQ(slurp(root.path() / "full/train_log.csv"), slurp(root.path() / "resumed/train_log.csv"));
  EXPECT_EQ(slurp(root.path() / "full/final/critic.rgnp"), slurp(root.path() / "resumed/final/critic.rgnp"));

  std::istringstream log(slurp(root.path() / "full/train_log.csv"));
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "step,episode,reward,f1,action_norm,power_db,critic_loss,actor_objective");

  ExperimentConfig changed = c;
  changed.agent.tau = 0.01;
  EXPECT_THROW(run_training(changed, data, root.path() / "full"), DataError);
}

TEST(Eval, ReportsAreReproducible) {
  TempDir root("eval");
  const ExperimentConfig c = parse_config(kTiny);
  const fs::path data = root.path() / "data";
  generate_dataset(c, data, false);
  run_training(c, data, root.path() / "train");
  const fs::path ckpt = root.path() / "train/final";
  const EvalReport a = run_evaluation(c, data, ckpt, root.path() / "a");
  run_evaluation(c, data, ckpt, root.path() / "b");
  EXPECT_EQ(a.policy, "agent");
  for (const char* f : {"report.json", "frames.csv", "power_vs_targets.csv"})
    EXPECT_EQ(slurp(root.path() / "a" / f), slurp(root.path() / "b" / f)) << f;
  EXPECT_EQ(a.scene_mean_power_db.size(), 1u);
  EXPECT_GE(a.comparison.adaptive_map, 0.0);
  EXPECT_LE(a.comparison.adaptive_map, 1.0);
  EXPECT_DOUBLE_EQ(a.comparison.delta, a.comparison.adaptive_map - a.comparison.fixed_map);
  const EvalReport r = run_evaluation(c, data, std::nullopt, root.path() / "r");
  EXPECT_EQ(r.policy, "random");
  EXPECT_EQ(r.trend.frames, 5);
}

TEST(Detect, WritesDetectionsAndCubes) {
  TempDir root("detect");
  const ExperimentConfig c = parse_config(kTiny);
  const fs::path data = root.path() / "data";
  generate_dataset(c, data, false);
  const DetectReport d = run_detect(c, data, Split::test, 0, 30.0, root.path() / "out", true);
  EXPECT_EQ(d.frames, 6);
  EXPECT_TRUE(fs::exists(root.path() / "out/detections.csv"));
  const DetectReport again =
      run_detect_cubes(c, {root.path() / "out/frame_000.rgc", root.path() / "out/frame_001.rgc"}, root.path() / "cubes");
  EXPECT_EQ(again.frames, 2);
  EXPECT_THROW(run_detect(c, data, Split::test, 5, 30.0, root.path() / "bad", false), DataError);

  const auto anchors = run_anchors(c, data, root.path() / "anchors.csv");
  EXPECT_EQ(anchors.size(), 1u);
  EXPECT_TRUE(fs::exists(root.path() / "anchors.csv"));
}
