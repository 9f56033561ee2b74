#include <malloc.h>

#include <CLI11.hpp>
#include <iostream>

#include "ragc/harness.hpp"

namespace fs = std::filesystem;
using namespace ragc;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool paper_scale = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "TOML experiment config")->required();
  cmd->add_option("--seed", c.seed, "Override [experiment] seed");
  cmd->add_flag("--force", c.force, "Overwrite existing output");
  cmd->add_flag("--paper-scale", c.paper_scale, "100 + 100 + 20 scenes");
  cmd->add_option("--out", c.out, "Override [experiment] output_dir");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.paper_scale) cfg.apply_paper_scale();
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

Split parse_split(const std::string& s) {
  for (Split v : {Split::train_rl, Split::train_detector, Split::test})
    if (s == split_name(v)) return v;
  throw ConfigError("unknown split '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  // Large per-layer buffers otherwise hit mmap/munmap on every update.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Radar power control with reinforcement learning"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("generate", "Generate the scene dataset");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "Train the agent (resumes from the last checkpoint)");
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "Evaluate adaptive vs matched fixed power");
  add_common(eval, common);
  std::string checkpoint, policy = "agent";
  eval->add_option("--checkpoint", checkpoint, "Directory with actor.rgnp (default <out>/train/final)");
  eval->add_option("--policy", policy, "agent or random")->check(CLI::IsMember({"agent", "random"}));

  auto* detect = app.add_subcommand("detect", "Dump detections and radar cubes at fixed power");
  add_common(detect, common);
  std::string split = "test";
  int scene = 0;
  double power_db = 30.0;
  bool cubes = false;
  std::vector<std::string> inputs;
  detect->add_option("--split", split, "train_rl, train_detector or test");
  detect->add_option("--scene", scene, "Scene index within the split");
  detect->add_option("--power", power_db, "Transmit power in dBm");
  detect->add_flag("--cubes", cubes, "Also write one radar cube per frame");
  detect->add_option("--input", inputs, "External radar cube files instead of a generated scene");

  auto* anchors = app.add_subcommand("anchors", "k-means anchor boxes over detector training labels");
  add_common(anchors, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = resolve(common);
    if (*gen) {
      const GenerateReport r = generate_dataset(cfg, cfg.data_dir(), common.force);
      std::cout << "wrote " << r.scenes_written << " scenes to " << cfg.data_dir() << " (config hash "
                << r.config_hash << ")\n";
    } else if (*train) {
      if (common.force) fs::remove_all(cfg.train_dir());
      const TrainReport r = run_training(cfg, cfg.data_dir(), cfg.train_dir(), &std::cout);
      std::cout << (r.resumed ? "resumed; " : "") << r.episodes_done << " episodes, " << r.steps << " steps\n";
    } else if (*eval) {
      std::optional<fs::path> ckpt;
      if (policy == "agent") ckpt = checkpoint.empty() ? cfg.train_dir() / "final" : fs::path(checkpoint);
      const fs::path dir = cfg.eval_dir() / policy;
      const EvalReport r = run_evaluation(cfg, cfg.data_dir(), ckpt, dir);
      std::cout << "policy " << r.policy << "\nadaptive mAP " << r.comparison.adaptive_map << "\nfixed mAP "
                << r.comparison.fixed_map << "\ndelta " << r.comparison.delta << "\nspearman rho "
                << r.trend.spearman_rho << "\nmean power " << r.trend.global_mean_power_db << " dBm\nzero-target power "
                << r.trend.zero_target_mean_power_db << " dBm\nnum_targets,frames,mean_power_db\n";
      for (const PowerByTargets& g : r.power_table)
        std::cout << g.num_targets << ',' << g.frames << ',' << g.mean_power_db << '\n';
      std::cout << "report in " << dir << '\n';
    } else if (*detect) {
      const fs::path dir = cfg.output_dir / "detect";
      DetectReport r;
      if (!inputs.empty()) {
        r = run_detect_cubes(cfg, std::vector<fs::path>(inputs.begin(), inputs.end()), dir);
      } else {
        r = run_detect(cfg, cfg.data_dir(), parse_split(split), scene, power_db, dir, cubes);
      }
      std::cout << r.detections << " detections over " << r.frames << " frames in " << dir << '\n';
    } else if (*anchors) {
      const fs::path file = cfg.output_dir / "anchors.csv";
      for (const Anchor& a : run_anchors(cfg, cfg.data_dir(), file))
        std::cout << a.width << " x " << a.height << '\n';
      std::cout << "anchors in " << file << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
