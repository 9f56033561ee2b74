#include "ragc/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <toml.hpp>

#include "csv.hpp"

namespace ragc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train_rl: return "train_rl";
    case Split::train_detector: return "train_detector";
    case Split::test: return "test";
  }
  return "?";
}

namespace {

constexpr Split kSplits[] = {Split::train_rl, Split::train_detector, Split::test};

int split_size(const ExperimentConfig& cfg, Split s) {
  switch (s) {
    case Split::train_rl: return cfg.train_rl_scenes;
    case Split::train_detector: return cfg.train_detector_scenes;
    case Split::test: return cfg.test_scenes;
  }
  return 0;
}

// Reads typed keys from one TOML table and rejects keys nobody asked for.
class Section {
 public:
  Section(const toml::table& root, std::string name) : name_(std::move(name)) {
    if (const toml::node* n = root.get(name_)) {
      table_ = n->as_table();
      if (!table_) throw ConfigError("[" + name_ + "] must be a table");
    }
  }

  void get(const char* key, double& out) {
    if (const toml::node* n = find(key)) {
      if (auto v = n->value<double>()) out = *v;
      else fail(key, "a number");
    }
  }
  void get(const char* key, int& out) {
    if (const toml::node* n = find(key)) {
      if (auto v = n->as_integer()) out = static_cast<int>(v->get());
      else fail(key, "an integer");
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const toml::node* n = find(key)) {
      auto v = n->as_integer();
      if (!v || v->get() < 0) fail(key, "a non-negative integer");
      out = static_cast<std::uint64_t>(v->get());
    }
  }
  void get(const char* key, bool& out) {
    if (const toml::node* n = find(key)) {
      if (auto v = n->as_boolean()) out = v->get();
      else fail(key, "a boolean");
    }
  }
  void get(const char* key, std::string& out) {
    if (const toml::node* n = find(key)) {
      if (auto v = n->as_string()) out = v->get();
      else fail(key, "a string");
    }
  }
  void get(const char* key, std::vector<int>& out) {
    if (const toml::node* n = find(key)) {
      const toml::array* arr = n->as_array();
      if (!arr) fail(key, "an integer array");
      out.clear();
      for (const toml::node& e : *arr) {
        auto v = e.as_integer();
        if (!v) fail(key, "an integer array");
        out.push_back(static_cast<int>(v->get()));
      }
    }
  }
  void get(const char* key, CountRange& out) {
    if (const toml::node* n = find(key)) {
      if (auto v = n->as_integer()) {
        out.min = out.max = static_cast<int>(v->get());
        return;
      }
      std::vector<int> pair;
      get_seen(key, pair);
      if (pair.size() != 2) fail(key, "an integer or a [min, max] pair");
      out = {pair[0], pair[1]};
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_)
      if (!seen_.count(std::string(k.str()))) throw ConfigError("[" + name_ + "] unknown key '" + std::string(k.str()) + "'");
  }

 private:
  const toml::node* find(const char* key) {
    if (!table_) return nullptr;
    seen_.insert(key);
    return table_->get(key);
  }
  void get_seen(const char* key, std::vector<int>& out) {
    const toml::array* arr = table_->get(key)->as_array();
    if (!arr) return;
    for (const toml::node& e : *arr)
      if (auto v = e.as_integer()) out.push_back(static_cast<int>(v->get()));
  }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("[" + name_ + "] " + key + " must be " + what);
  }

  std::string name_;
  const toml::table* table_ = nullptr;
  std::set<std::string> seen_;
};

Window parse_window(const std::string& s) {
  if (s == "hann") return Window::hann;
  if (s == "rectangular") return Window::rectangular;
  throw ConfigError("[env] window must be \"hann\" or \"rectangular\"");
}

std::string window_name(Window w) { return w == Window::hann ? "hann" : "rectangular"; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

// Settings that change training or evaluation results, on top of the dataset.
std::string run_fingerprint(const ExperimentConfig& c) {
  std::ostringstream o;
  const AgentConfig& a = c.agent;
  const EnvConfig& e = c.env;
  o << dataset_fingerprint(c) << "agent " << fmt(a.gamma) << ' ' << fmt(a.tau) << ' ' << a.batch_size << ' '
    << a.replay_capacity << ' ' << a.warmup_steps << ' ' << fmt(a.actor_learning_rate) << ' '
    << fmt(a.critic_learning_rate) << ' ' << fmt(a.noise_decay) << ' ' << fmt(a.ou.theta) << ' ' << fmt(a.ou.mu)
    << ' ' << fmt(a.ou.sigma) << ' ' << fmt(a.ou.dt) << " actor " << join(a.actor.conv_channels) << ' '
    << a.actor.dense_units << " critic " << join(a.critic.conv_channels) << ' ' << a.critic.branch_units << ' '
    << join(a.critic.head_units) << "\nenv " << fmt(e.power_min_db) << ' ' << fmt(e.power_max_db) << ' '
    << fmt(e.noise_power_dbm) << ' ' << window_name(e.window) << ' ' << e.cfar.guard_range << ' '
    << e.cfar.guard_doppler << ' ' << e.cfar.train_range << ' ' << e.cfar.train_doppler << ' '
    << fmt(e.cfar.false_alarm_rate) << ' ' << e.cluster.min_cluster_bins << ' ' << e.cluster.clutter_halfwidth << ' '
    << fmt(e.cluster.core_db) << ' ' << fmt(e.cluster.plateau_db) << ' ' << e.cluster.box_margin << ' '
    << e.cluster.pedestrian_max_range_extent << ' ' << e.cluster.pedestrian_max_doppler_extent << ' '
    << fmt(e.cluster.score_span_db) << ' ' << fmt(e.cluster.min_peak_db) << ' '
    << fmt(e.nms_iou) << ' ' << fmt(e.match_iou) << ' ' << e.class_agnostic
    << ' ' << e.episode_length << ' ' << e.reward_on_next_state << ' ' << e.noise_seed << ' '
    << fmt(e.normalization.clip_low_db) << ' ' << fmt(e.normalization.clip_high_db) << ' '
    << e.normalization.out_height << ' ' << e.normalization.out_width << '\n';
  return o.str();
}

std::uint64_t agent_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, 100); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw RuntimeError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}

std::string scene_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", index);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  chirp.validate();
  scene.validate();
  agent.validate();
  env.validate();
  if (train_rl_scenes < 1 || test_scenes < 1 || train_detector_scenes < 0)
    throw ConfigError("[experiment] scene counts must be positive");
  if (label_margin_bins < 0) throw ConfigError("[scene] label_margin_bins must be >= 0");
  if (episodes < 0 || checkpoint_every < 1) throw ConfigError("[experiment] episodes >= 0 and checkpoint_every >= 1");
  if (anchors_k < 1) throw ConfigError("[experiment] anchors_k must be >= 1");
  if (scene.num_frames < env.episode_length)
    throw ConfigError("[env] episode_length exceeds [scene] num_frames");
  if (agent.actor.input_height != env.normalization.out_height || agent.actor.input_width != env.normalization.out_width)
    throw ConfigError("actor input size must match the state size");
}

void ExperimentConfig::apply_paper_scale() {
  train_rl_scenes = 100;
  train_detector_scenes = 100;
  test_scenes = 20;
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ": " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(msg.str());
  }
  static const std::set<std::string> known{"chirp", "scene", "cfar", "agent", "env", "experiment"};
  for (const auto& [k, v] : root)
    if (!known.count(std::string(k.str()))) throw ConfigError("unknown section [" + std::string(k.str()) + "]");

  ExperimentConfig c;
  {
    Section s(root, "chirp");
    s.get("carrier_freq_hz", c.chirp.carrier_freq_hz);
    s.get("bandwidth_hz", c.chirp.bandwidth_hz);
    s.get("sweep_duration_s", c.chirp.sweep_duration_s);
    s.get("pulse_repetition_interval_s", c.chirp.pulse_repetition_interval_s);
    s.get("num_pulses", c.chirp.num_pulses);
    s.get("samples_per_sweep", c.chirp.samples_per_sweep);
    s.finish();
  }
  {
    Section s(root, "scene");
    SceneConfig& sc = c.scene;
    s.get("num_frames", sc.num_frames);
    s.get("frame_rate_hz", sc.frame_rate_hz);
    s.get("pedestrians", sc.pedestrians);
    s.get("vehicles", sc.vehicles);
    s.get("clutter_points", sc.clutter_points);
    s.get("fov_x_min_m", sc.fov_x_min_m);
    s.get("fov_x_max_m", sc.fov_x_max_m);
    s.get("fov_y_min_m", sc.fov_y_min_m);
    s.get("fov_y_max_m", sc.fov_y_max_m);
    s.get("pedestrian_max_speed_mps", sc.pedestrian_max_speed_mps);
    s.get("vehicle_min_speed_mps", sc.vehicle_min_speed_mps);
    s.get("vehicle_max_speed_mps", sc.vehicle_max_speed_mps);
    s.get("vehicle_scatterers", sc.vehicle_scatterers);
    s.get("vehicle_length_m", sc.vehicle_length_m);
    s.get("vehicle_width_m", sc.vehicle_width_m);
    s.get("micro_doppler_std_mps", sc.micro_doppler_std_mps);
    s.get("clutter_rayleigh_scale", sc.clutter_rayleigh_scale);
    s.get("nakagami_m", sc.nakagami_m);
    s.get("nakagami_omega", sc.nakagami_omega);
    s.get("vehicle_front_m2", sc.vehicle_pattern.front_m2);
    s.get("vehicle_side_m2", sc.vehicle_pattern.side_m2);
    s.get("vehicle_back_m2", sc.vehicle_pattern.back_m2);
    s.get("vehicle_front_width_deg", sc.vehicle_pattern.front_width_deg);
    s.get("vehicle_side_width_deg", sc.vehicle_pattern.side_width_deg);
    s.get("vehicle_back_width_deg", sc.vehicle_pattern.back_width_deg);
    s.get("vehicle_floor_m2", sc.vehicle_pattern.floor_m2);
    s.get("label_margin_bins", c.label_margin_bins);
    s.finish();
  }
  {
    Section s(root, "cfar");
    CfarParams& p = c.env.cfar;
    ClusterParams& q = c.env.cluster;
    s.get("guard_range", p.guard_range);
    s.get("guard_doppler", p.guard_doppler);
    s.get("train_range", p.train_range);
    s.get("train_doppler", p.train_doppler);
    s.get("false_alarm_rate", p.false_alarm_rate);
    s.get("min_cluster_bins", q.min_cluster_bins);
    s.get("clutter_halfwidth", q.clutter_halfwidth);
    s.get("core_db", q.core_db);
    s.get("plateau_db", q.plateau_db);
    s.get("box_margin", q.box_margin);
    s.get("pedestrian_max_range_extent", q.pedestrian_max_range_extent);
    s.get("pedestrian_max_doppler_extent", q.pedestrian_max_doppler_extent);
    s.get("score_span_db", q.score_span_db);
    s.get("min_peak_db", q.min_peak_db);
    s.get("nms_iou", c.env.nms_iou);
    s.finish();
  }
  {
    Section s(root, "env");
    EnvConfig& e = c.env;
    std::string window = window_name(e.window);
    s.get("power_min_db", e.power_min_db);
    s.get("power_max_db", e.power_max_db);
    s.get("noise_power_dbm", e.noise_power_dbm);
    s.get("window", window);
    e.window = parse_window(window);
    s.get("match_iou", e.match_iou);
    s.get("class_agnostic", e.class_agnostic);
    s.get("episode_length", e.episode_length);
    s.get("reward_on_next_state", e.reward_on_next_state);
    s.get("noise_seed", e.noise_seed);
    s.get("state_clip_low_db", e.normalization.clip_low_db);
    s.get("state_clip_high_db", e.normalization.clip_high_db);
    s.get("state_height", e.normalization.out_height);
    s.get("state_width", e.normalization.out_width);
    s.finish();
  }
  {
    Section s(root, "agent");
    AgentConfig& a = c.agent;
    std::string nets = "desk";
    s.get("networks", nets);
    if (nets == "reference") {
      a.actor = nn::ActorSpec::reference();
      a.critic = nn::CriticSpec::reference();
    } else if (nets != "desk") {
      throw ConfigError("[agent] networks must be \"desk\" or \"reference\"");
    }
    s.get("gamma", a.gamma);
    s.get("tau", a.tau);
    s.get("batch_size", a.batch_size);
    s.get("replay_capacity", a.replay_capacity);
    s.get("warmup_steps", a.warmup_steps);
    s.get("actor_learning_rate", a.actor_learning_rate);
    s.get("critic_learning_rate", a.critic_learning_rate);
    s.get("noise_decay", a.noise_decay);
    s.get("ou_theta", a.ou.theta);
    s.get("ou_mu", a.ou.mu);
    s.get("ou_sigma", a.ou.sigma);
    s.get("ou_dt", a.ou.dt);
    s.get("actor_conv_channels", a.actor.conv_channels);
    s.get("actor_dense_units", a.actor.dense_units);
    s.get("critic_conv_channels", a.critic.conv_channels);
    s.get("critic_branch_units", a.critic.branch_units);
    s.get("critic_head_units", a.critic.head_units);
    s.finish();
  }
  {
    Section s(root, "experiment");
    bool paper_scale = false;
    std::string out = c.output_dir.string();
    s.get("seed", c.seed);
    s.get("train_rl_scenes", c.train_rl_scenes);
    s.get("train_detector_scenes", c.train_detector_scenes);
    s.get("test_scenes", c.test_scenes);
    s.get("episodes", c.episodes);
    s.get("checkpoint_every", c.checkpoint_every);
    s.get("anchors_k", c.anchors_k);
    s.get("output_dir", out);
    s.get("paper_scale", paper_scale);
    s.finish();
    c.output_dir = out;
    if (paper_scale) c.apply_paper_scale();
  }
  c.env.chirp = c.chirp;
  c.agent.actor.input_height = c.agent.critic.input_height = c.env.normalization.out_height;
  c.agent.actor.input_width = c.agent.critic.input_width = c.env.normalization.out_width;
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string dataset_fingerprint(const ExperimentConfig& c) {
  std::ostringstream o;
  const ChirpParams& ch = c.chirp;
  const SceneConfig& s = c.scene;
  const VehicleRcsPattern& v = s.vehicle_pattern;
  o << "chirp " << fmt(ch.carrier_freq_hz) << ' ' << fmt(ch.bandwidth_hz) << ' ' << fmt(ch.sweep_duration_s) << ' '
    << fmt(ch.pulse_repetition_interval_s) << ' ' << ch.num_pulses << ' ' << ch.samples_per_sweep << "\nscene "
    << s.num_frames << ' ' << fmt(s.frame_rate_hz) << ' ' << s.pedestrians.min << ' ' << s.pedestrians.max << ' '
    << s.vehicles.min << ' ' << s.vehicles.max << ' ' << s.clutter_points.min << ' ' << s.clutter_points.max << ' '
    << fmt(s.fov_x_min_m) << ' ' << fmt(s.fov_x_max_m) << ' ' << fmt(s.fov_y_min_m) << ' ' << fmt(s.fov_y_max_m)
    << ' ' << fmt(s.pedestrian_max_speed_mps) << ' ' << fmt(s.vehicle_min_speed_mps) << ' '
    << fmt(s.vehicle_max_speed_mps) << ' ' << s.vehicle_scatterers << ' ' << fmt(s.vehicle_length_m) << ' '
    << fmt(s.vehicle_width_m) << ' ' << fmt(s.micro_doppler_std_mps) << ' ' << fmt(s.clutter_rayleigh_scale) << ' '
    << fmt(s.nakagami_m) << ' ' << fmt(s.nakagami_omega) << ' ' << fmt(v.front_m2) << ' ' << fmt(v.side_m2) << ' '
    << fmt(v.back_m2) << ' ' << fmt(v.front_width_deg) << ' ' << fmt(v.side_width_deg) << ' '
    << fmt(v.back_width_deg) << ' ' << fmt(v.floor_m2) << " margin " << c.label_margin_bins << "\nsplits " << c.seed
    << ' ' << c.train_rl_scenes << ' ' << c.train_detector_scenes << ' ' << c.test_scenes << '\n';
  return o.str();
}

std::string dataset_hash(const ExperimentConfig& cfg) { return hex(fnv1a(dataset_fingerprint(cfg))); }

std::uint64_t scene_seed(const ExperimentConfig& cfg, Split split, int index) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(index));
}

// generate

GenerateReport generate_dataset(const ExperimentConfig& cfg, const fs::path& data_dir, bool force) {
  if (fs::exists(data_dir) && !fs::is_empty(data_dir)) {
    if (!force) throw DataError(data_dir.string() + " is not empty; pass --force to overwrite");
    for (Split s : kSplits) fs::remove_all(data_dir / split_name(s));
    fs::remove(data_dir / "manifest.json");
  }
  GenerateReport report;
  report.config_hash = dataset_hash(cfg);
  json manifest;
  manifest["config_hash"] = report.config_hash;
  manifest["seed"] = cfg.seed;
  manifest["num_frames"] = cfg.scene.num_frames;
  for (Split split : kSplits) {
    const fs::path dir = data_dir / split_name(split);
    fs::create_directories(dir);
    json entries = json::array();
    for (int i = 0; i < split_size(cfg, split); ++i) {
      SceneConfig sc = cfg.scene;
      sc.rng_seed = scene_seed(cfg, split, i);
      const Scene scene = generate_scene(sc, cfg.chirp, cfg.label_margin_bins);
      const std::string stem = scene_stem(i);
      write_scene_files(scene, dir / ("scene_" + stem + ".csv"), dir / ("labels_" + stem + ".csv"));
      entries.push_back({{"index", i},
                         {"seed", sc.rng_seed},
                         {"scene", std::string(split_name(split)) + "/scene_" + stem + ".csv"},
                         {"labels", std::string(split_name(split)) + "/labels_" + stem + ".csv"}});
      ++report.scenes_written;
    }
    manifest["splits"][std::string(split_name(split))] = entries;
  }
  write_text(data_dir / "manifest.json", manifest.dump(2) + "\n");
  return report;
}

std::vector<std::shared_ptr<const Scene>> load_split(const ExperimentConfig& cfg, const fs::path& data_dir,
                                                     Split split) {
  const json manifest = read_json(data_dir / "manifest.json");
  const std::string expected = dataset_hash(cfg);
  if (manifest.value("config_hash", std::string()) != expected)
    throw DataError("dataset in " + data_dir.string() + " was generated from a different config (hash " +
                    manifest.value("config_hash", std::string("?")) + ", expected " + expected + ")");
  std::vector<std::shared_ptr<const Scene>> scenes;
  for (const json& e : manifest.at("splits").at(std::string(split_name(split)))) {
    scenes.push_back(std::make_shared<const Scene>(read_scene_files(data_dir / e.at("scene").get<std::string>(),
                                                                    data_dir / e.at("labels").get<std::string>(),
                                                                    cfg.scene.num_frames)));
  }
  if (scenes.empty()) throw DataError("split " + std::string(split_name(split)) + " is empty");
  return scenes;
}

// train

namespace {

void save_networks(DdpgAgent& agent, const fs::path& dir) {
  fs::create_directories(dir);
  nn::save_params(agent.actor(), dir / "actor.rgnp");
  nn::save_params(agent.critic(), dir / "critic.rgnp");
  nn::save_params(agent.target_actor(), dir / "target_actor.rgnp");
  nn::save_params(agent.target_critic(), dir / "target_critic.rgnp");
}

// Keeps only rows logged up to `steps`, dropping anything written after
// the last checkpoint.
void truncate_log(const fs::path& log, std::int64_t steps) {
  std::ifstream in(log);
  if (!in) throw DataError("missing training log " + log.string());
  std::string line, kept;
  std::getline(in, line);
  kept = line + "\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (std::stoll(line.substr(0, comma)) > steps) break;
    kept += line + "\n";
  }
  in.close();
  write_text(log, kept);
}

}  // namespace

TrainReport run_training(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& train_dir,
                         std::ostream* progress) {
  RadarEnv env(cfg.env, load_split(cfg, data_dir, Split::train_rl));
  DdpgAgent agent(cfg.agent, agent_seed(cfg));
  const std::string fingerprint = hex(fnv1a(run_fingerprint(cfg)));
  const fs::path checkpoint = train_dir / "checkpoint";
  const fs::path log_path = train_dir / "train_log.csv";
  fs::create_directories(train_dir);

  TrainReport report;
  if (fs::exists(checkpoint / "progress.json")) {
    const json p = read_json(checkpoint / "progress.json");
    if (p.value("run_hash", std::string()) != fingerprint)
      throw DataError("checkpoint in " + checkpoint.string() + " belongs to a different config");
    agent.load(checkpoint);
    report.episodes_done = p.at("episodes").get<std::int64_t>();
    report.resumed = true;
    truncate_log(log_path, agent.steps());
  } else {
    std::ofstream log(log_path);
    write_train_log_header(log);
  }

  std::ofstream log(log_path, std::ios::app);
  auto write_row = [&](const TrainLogRow& row) { write_train_log_row(row, log); };
  for (std::int64_t ep = report.episodes_done; ep < cfg.episodes; ++ep) {
    const EpisodeSummary s = train_episode(agent, env, ep, write_row);
    report.last_episode_reward = s.total_reward;
    report.episodes_done = ep + 1;
    if (progress)
      *progress << "episode " << ep + 1 << "/" << cfg.episodes << " reward " << s.total_reward << " mean_f1 "
                << s.mean_f1 << " mean_action " << s.mean_action_norm << std::endl;
    if ((ep + 1) % cfg.checkpoint_every == 0 || ep + 1 == cfg.episodes) {
      log.flush();
      const fs::path staging = train_dir / "checkpoint.tmp";
      fs::remove_all(staging);
      agent.save(staging);
      write_text(staging / "progress.json",
                 json{{"episodes", report.episodes_done}, {"steps", agent.steps()}, {"run_hash", fingerprint}}.dump(2) +
                     "\n");
      fs::remove_all(checkpoint);
      fs::rename(staging, checkpoint);
    }
  }
  log.flush();
  save_networks(agent, train_dir / "final");
  write_text(train_dir / "final" / "progress.json",
             json{{"episodes", report.episodes_done}, {"steps", agent.steps()}, {"run_hash", fingerprint}, {"final", true}}
                     .dump(2) +
                 "\n");
  report.steps = agent.steps();
  return report;
}

// eval

EvalReport run_evaluation(const ExperimentConfig& cfg, const fs::path& data_dir,
                          const std::optional<fs::path>& checkpoint, const fs::path& eval_dir) {
  RadarEnv env(cfg.env, load_split(cfg, data_dir, Split::test));
  std::unique_ptr<DdpgAgent> agent;
  Policy policy;
  EvalReport report;
  if (checkpoint) {
    agent = std::make_unique<DdpgAgent>(cfg.agent, agent_seed(cfg));
    nn::load_params(agent->actor(), *checkpoint / "actor.rgnp");
    policy = greedy_policy(*agent);
    report.policy = "agent";
  } else {
    policy = random_policy(derive_seed(cfg.seed, 200));
    report.policy = "random";
  }

  const PolicyEvaluation pe = evaluate_policy(env, policy);
  report.comparison = compare_fixed_power(env, pe);
  report.trend = power_trend(pe.power_samples);
  report.power_table = power_by_target_count(pe.power_samples);
  double reward = 0.0, f1 = 0.0;
  std::size_t n = 0;
  for (const SceneEvaluation& s : pe.scenes) {
    report.scene_mean_power_db.push_back(s.mean_power_db);
    for (std::size_t i = 0; i < s.rewards.size(); ++i, ++n) {
      reward += s.rewards[i];
      f1 += s.f1[i];
    }
  }
  report.mean_reward = reward / static_cast<double>(n);
  report.mean_f1 = f1 / static_cast<double>(n);

  fs::create_directories(eval_dir);
  auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j;
  j["policy"] = report.policy;
  j["dataset_hash"] = dataset_hash(cfg);
  j["adaptive_map"] = report.comparison.adaptive_map;
  j["fixed_map"] = report.comparison.fixed_map;
  j["map_delta"] = report.comparison.delta;
  j["spearman_rho"] = finite_or_null(report.trend.spearman_rho);
  j["global_mean_power_db"] = report.trend.global_mean_power_db;
  j["zero_target_mean_power_db"] = finite_or_null(report.trend.zero_target_mean_power_db);
  j["zero_target_frames"] = report.trend.zero_target_frames;
  j["frames"] = report.trend.frames;
  j["mean_reward"] = report.mean_reward;
  j["mean_f1"] = report.mean_f1;
  j["scene_mean_power_db"] = report.scene_mean_power_db;
  j["fixed_power_db"] = report.comparison.fixed_power_db;
  write_text(eval_dir / "report.json", j.dump(2) + "\n");

  std::ostringstream table;
  table << "num_targets,frames,mean_power_db\n";
  for (const PowerByTargets& g : report.power_table)
    table << g.num_targets << ',' << g.frames << ',' << csv::num(g.mean_power_db) << '\n';
  write_text(eval_dir / "power_vs_targets.csv", table.str());

  std::ostringstream frames;
  frames << "scene,frame,num_targets,power_db\n";
  for (const PowerSample& p : pe.power_samples)
    frames << p.scene << ',' << p.frame << ',' << p.num_targets << ',' << csv::num(p.power_db) << '\n';
  write_text(eval_dir / "frames.csv", frames.str());
  return report;
}

// detect

DetectReport run_detect(const ExperimentConfig& cfg, const fs::path& data_dir, Split split, int scene_index,
                        double power_db, const fs::path& out_dir, bool dump_cubes) {
  RadarEnv env(cfg.env, load_split(cfg, data_dir, split));
  if (scene_index < 0 || static_cast<std::size_t>(scene_index) >= env.num_scenes())
    throw DataError("scene index " + std::to_string(scene_index) + " outside the split");
  if (!(power_db >= cfg.env.power_min_db && power_db <= cfg.env.power_max_db))
    throw ConfigError("power outside the configured range");
  fs::create_directories(out_dir);
  const auto s = static_cast<std::size_t>(scene_index);
  std::vector<DetectionSet> sets;
  DetectReport report;
  for (int f = 0; f < cfg.scene.num_frames; ++f) {
    const RadarFrame raw = env.render_raw(s, f, power_db);
    if (dump_cubes) write_radar_cube(raw, out_dir / ("frame_" + scene_stem(f) + ".rgc"));
    sets.push_back({f, env.detector().detect(range_doppler_map(raw, cfg.env.window))});
    report.detections += static_cast<int>(sets.back().boxes.size());
    ++report.frames;
  }
  std::ofstream out(out_dir / "detections.csv");
  write_detections_csv(sets, out);
  if (!out) throw RuntimeError("cannot write detections in " + out_dir.string());
  return report;
}

DetectReport run_detect_cubes(const ExperimentConfig& cfg, const std::vector<fs::path>& cubes, const fs::path& out_dir) {
  const CfarDetector detector(cfg.env.cfar, cfg.env.cluster, cfg.env.nms_iou);
  fs::create_directories(out_dir);
  std::vector<DetectionSet> sets;
  DetectReport report;
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    const RadarFrame raw = read_radar_cube(cubes[i]);
    sets.push_back({static_cast<int>(i), detector.detect(range_doppler_map(raw, cfg.env.window))});
    report.detections += static_cast<int>(sets.back().boxes.size());
    ++report.frames;
  }
  std::ofstream out(out_dir / "detections.csv");
  write_detections_csv(sets, out);
  if (!out) throw RuntimeError("cannot write detections in " + out_dir.string());
  return report;
}

// anchors

std::vector<Anchor> run_anchors(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& out_file) {
  std::vector<Anchor> boxes;
  for (const auto& scene : load_split(cfg, data_dir, Split::train_detector))
    for (const auto& frame : scene->labels)
      for (const GroundTruthBox& b : frame)
        boxes.push_back({static_cast<double>(b.doppler_bin_max - b.doppler_bin_min + 1),
                         static_cast<double>(b.range_bin_max - b.range_bin_min + 1)});
  if (boxes.empty()) throw DataError("no ground-truth boxes in the detector training split");
  const auto anchors = kmeans_anchors(boxes, cfg.anchors_k, derive_seed(cfg.seed, 300));
  if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
  std::ofstream out(out_file);
  write_anchors(anchors, out);
  if (!out) throw RuntimeError("cannot write " + out_file.string());
  return anchors;
}

}  // namespace ragc
