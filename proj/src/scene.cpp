#include "ragc/scene.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "csv.hpp"

namespace ragc {

double sample_clutter_rcs(double scale_b, Rng& rng) {
  if (!(scale_b > 0.0)) throw std::domain_error("Rayleigh scale must be positive");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  // Inverse CDF; 1 - u lies in (0, 1].
  const double a = scale_b * std::sqrt(-2.0 * std::log(1.0 - uniform(rng)));
  return a * a;
}

double sample_pedestrian_rcs(double m, double omega, Rng& rng) {
  if (!(m >= 0.5) || !(omega > 0.0)) throw std::domain_error("Nakagami requires m >= 0.5 and omega > 0");
  std::gamma_distribution<double> gamma(m, omega / m);
  double g = gamma(rng);
  // Support is (0, inf); a zero gamma draw is a floating-point underflow.
  while (!(g > 0.0)) g = gamma(rng);
  return std::sqrt(g);
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = kPi * x;
  return std::sin(px) / px;
}

double vehicle_rcs_pattern(double orientation_rad, const VehicleRcsPattern& params) {
  double deg = std::fmod(orientation_rad * 180.0 / kPi, 360.0);
  if (deg < 0.0) deg += 360.0;
  struct Lobe {
    double center, amplitude, width;
  };
  const Lobe lobes[] = {{0.0, params.front_m2, params.front_width_deg},
                        {90.0, params.side_m2, params.side_width_deg},
                        {180.0, params.back_m2, params.back_width_deg},
                        {270.0, params.side_m2, params.side_width_deg}};
  double total = 0.0;
  for (const Lobe& lobe : lobes) {
    double d = std::fmod(deg - lobe.center + 540.0, 360.0) - 180.0;  // (-180, 180]
    if (d == -180.0) d = 180.0;
    total += lobe.amplitude * sinc(d / lobe.width);
  }
  return std::max(params.floor_m2, total);
}

std::vector<double> assign_vehicle_scatterer_rcs(double mean_rcs_m2, int num_scatterers, Rng& rng, bool with_noise) {
  if (num_scatterers < 1) throw std::domain_error("vehicle needs at least one scatterer");
  std::vector<double> out(static_cast<std::size_t>(num_scatterers));
  const double share = mean_rcs_m2 / num_scatterers;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (double& v : out) {
    // r ~ Rayleigh(1): r^2 / E[r^2] = -ln(U), a unit-mean exponential.
    const double unit = with_noise ? -std::log(1.0 - uniform(rng)) : 1.0;
    v = share * unit;
  }
  return out;
}

void SceneConfig::validate() const {
  if (num_frames < 1) throw ConfigError("scene: num_frames must be >= 1");
  if (!(frame_rate_hz > 0.0)) throw ConfigError("scene: frame_rate_hz must be positive");
  for (const CountRange* r : {&pedestrians, &vehicles, &clutter_points})
    if (r->min < 0 || r->max < r->min) throw ConfigError("scene: object counts must satisfy 0 <= min <= max");
  if (!(fov_x_min_m < fov_x_max_m) || !(fov_y_min_m < fov_y_max_m) || !(fov_y_min_m > 0.0))
    throw ConfigError("scene: invalid field of view");
  if (pedestrian_max_speed_mps < 0.0 || pedestrian_max_speed_mps > 3.0)
    throw ConfigError("scene: pedestrian speed must be within [0, 3] m/s");
  if (vehicle_min_speed_mps < 0.0 || vehicle_max_speed_mps < vehicle_min_speed_mps || vehicle_max_speed_mps > 20.0)
    throw ConfigError("scene: vehicle speed must be within [0, 20] m/s");
  if (vehicle_scatterers < 1) throw ConfigError("scene: vehicles need at least one scatterer");
  if (micro_doppler_std_mps < 0.0) throw ConfigError("scene: micro-Doppler std must be >= 0");
  if (!(clutter_rayleigh_scale > 0.0)) throw ConfigError("scene: clutter Rayleigh scale must be positive");
  if (!(nakagami_m >= 0.5) || !(nakagami_omega > 0.0)) throw ConfigError("scene: invalid Nakagami parameters");
}

Scatterer ScenePoint::scatterer() const {
  Scatterer s;
  s.range_m = position.norm();
  s.radial_velocity_mps = s.range_m > 0.0 ? position.dot(velocity) / s.range_m : 0.0;
  s.rcs_m2 = rcs_m2;
  s.object_class = object_class;
  s.object_id = object_id;
  return s;
}

std::vector<Scatterer> PointCloudFrame::scatterers() const {
  std::vector<Scatterer> out;
  out.reserve(points.size());
  for (const ScenePoint& p : points) out.push_back(p.scatterer());
  return out;
}

std::vector<GroundTruthBox> ground_truth_boxes(const PointCloudFrame& frame, const ChirpParams& chirp,
                                               int margin_bins) {
  std::map<int, GroundTruthBox> boxes;
  for (const ScenePoint& p : frame.points) {
    if (p.object_class == ObjectClass::clutter) continue;
    const Scatterer s = p.scatterer();
    if (!within_unambiguous(s, chirp)) continue;
    const int r = chirp.range_bin(s.range_m);
    const int d = chirp.doppler_bin(s.radial_velocity_mps);
    auto [it, fresh] = boxes.try_emplace(p.object_id, GroundTruthBox{r, r, d, d, p.object_class, p.object_id});
    if (!fresh) {
      GroundTruthBox& b = it->second;
      b.range_bin_min = std::min(b.range_bin_min, r);
      b.range_bin_max = std::max(b.range_bin_max, r);
      b.doppler_bin_min = std::min(b.doppler_bin_min, d);
      b.doppler_bin_max = std::max(b.doppler_bin_max, d);
    }
  }
  const int rmax = chirp.samples_per_sweep - 1;
  const int dmax = chirp.num_pulses - 1;
  std::vector<GroundTruthBox> out;
  out.reserve(boxes.size());
  for (auto& [id, b] : boxes) {
    b.range_bin_min = std::clamp(b.range_bin_min - margin_bins, 0, rmax);
    b.range_bin_max = std::clamp(b.range_bin_max + margin_bins, 0, rmax);
    b.doppler_bin_min = std::clamp(b.doppler_bin_min - margin_bins, 0, dmax);
    b.doppler_bin_max = std::clamp(b.doppler_bin_max + margin_bins, 0, dmax);
    out.push_back(b);
  }
  return out;
}

namespace {

bool inside_fov(const Eigen::Vector2d& p, const SceneConfig& c) {
  return p.x() >= c.fov_x_min_m && p.x() <= c.fov_x_max_m && p.y() >= c.fov_y_min_m && p.y() <= c.fov_y_max_m;
}

Eigen::Vector2d heading_vector(double heading_rad) { return {std::sin(heading_rad), std::cos(heading_rad)}; }

Eigen::Vector2d body_to_world(const Eigen::Vector2d& offset, double heading_rad) {
  // offset = (along heading, across heading)
  const Eigen::Vector2d along = heading_vector(heading_rad);
  const Eigen::Vector2d across(along.y(), -along.x());
  return offset.x() * along + offset.y() * across;
}

void check_fov_against_chirp(const SceneConfig& c, const ChirpParams& chirp) {
  const double far_x = std::max(std::abs(c.fov_x_min_m), std::abs(c.fov_x_max_m));
  const double reach = std::hypot(far_x, c.fov_y_max_m) + c.vehicle_length_m;
  if (reach >= chirp.max_range_m()) throw ConfigError("scene: field of view exceeds the unambiguous range");
  const double fastest = std::max(c.vehicle_max_speed_mps, c.pedestrian_max_speed_mps + 6.0 * c.micro_doppler_std_mps);
  if (fastest >= chirp.max_velocity_mps())
    throw ConfigError("scene: object speeds exceed the unambiguous velocity");
}

}  // namespace

Scene generate_scene(const SceneConfig& config, const ChirpParams& chirp, int margin_bins) {
  config.validate();
  chirp.validate();
  check_fov_against_chirp(config, chirp);

  Rng rng(config.rng_seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto count = [&rng](CountRange r) { return std::uniform_int_distribution<int>(r.min, r.max)(rng); };
  auto random_position = [&] {
    return Eigen::Vector2d(uniform(config.fov_x_min_m, config.fov_x_max_m),
                           uniform(config.fov_y_min_m, config.fov_y_max_m));
  };

  const int n_ped = count(config.pedestrians);
  const int n_veh = count(config.vehicles);
  const int n_clt = count(config.clutter_points);

  Scene scene;
  int next_id = 1;
  for (int i = 0; i < n_ped; ++i) {
    ObjectTrack t;
    t.object_id = next_id++;
    t.object_class = ObjectClass::pedestrian;
    t.initial_position = random_position();
    t.orientation_rad = uniform(0.0, 2.0 * kPi);
    t.velocity = uniform(0.0, config.pedestrian_max_speed_mps) * heading_vector(t.orientation_rad);
    t.num_scatterers = 1;
    t.body_offsets = {Eigen::Vector2d::Zero()};
    scene.tracks.push_back(std::move(t));
  }
  for (int i = 0; i < n_veh; ++i) {
    ObjectTrack t;
    t.object_id = next_id++;
    t.object_class = ObjectClass::vehicle;
    t.initial_position = random_position();
    t.orientation_rad = uniform(0.0, 2.0 * kPi);
    t.velocity =
        uniform(config.vehicle_min_speed_mps, config.vehicle_max_speed_mps) * heading_vector(t.orientation_rad);
    t.num_scatterers = config.vehicle_scatterers;
    for (int k = 0; k < t.num_scatterers; ++k)
      t.body_offsets.emplace_back(uniform(-config.vehicle_length_m / 2, config.vehicle_length_m / 2),
                                  uniform(-config.vehicle_width_m / 2, config.vehicle_width_m / 2));
    scene.tracks.push_back(std::move(t));
  }
  std::vector<Eigen::Vector2d> clutter(static_cast<std::size_t>(n_clt));
  for (auto& p : clutter) p = random_position();

  std::normal_distribution<double> jitter(0.0, 1.0);
  scene.frames.reserve(static_cast<std::size_t>(config.num_frames));
  for (int k = 0; k < config.num_frames; ++k) {
    PointCloudFrame frame;
    frame.frame_index = k;
    const double t = k / config.frame_rate_hz;
    for (ObjectTrack& track : scene.tracks) {
      const Eigen::Vector2d center = track.initial_position + track.velocity * t;
      if (track.exited || !inside_fov(center, config)) {
        track.exited = true;
        continue;
      }
      if (track.object_class == ObjectClass::pedestrian) {
        const Eigen::Vector2d los = center.normalized();
        const double spread = config.micro_doppler_std_mps * jitter(rng);
        frame.points.push_back({track.object_id, track.object_class, center, track.velocity + spread * los,
                                sample_pedestrian_rcs(config.nakagami_m, config.nakagami_omega, rng)});
      } else {
        // Aspect 0 = front facing the radar.
        const double los_angle = std::atan2(center.x(), center.y());
        const double aspect = track.orientation_rad - los_angle - kPi;
        const double mean_rcs = vehicle_rcs_pattern(aspect, config.vehicle_pattern);
        const std::vector<double> rcs = assign_vehicle_scatterer_rcs(mean_rcs, track.num_scatterers, rng);
        for (int s = 0; s < track.num_scatterers; ++s) {
          const Eigen::Vector2d pos =
              center + body_to_world(track.body_offsets[static_cast<std::size_t>(s)], track.orientation_rad);
          frame.points.push_back({track.object_id, track.object_class, pos, track.velocity,
                                  rcs[static_cast<std::size_t>(s)]});
        }
      }
    }
    for (const Eigen::Vector2d& p : clutter)
      frame.points.push_back(
          {0, ObjectClass::clutter, p, Eigen::Vector2d::Zero(), sample_clutter_rcs(config.clutter_rayleigh_scale, rng)});
    scene.labels.push_back(ground_truth_boxes(frame, chirp, margin_bins));
    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

// CSV

void write_scene_csv(const Scene& scene, std::ostream& out) {
  out << "frame,object_id,class,pos_x_m,pos_y_m,vel_x_mps,vel_y_mps,rcs_m2\n";
  for (const PointCloudFrame& f : scene.frames) {
    for (const ScenePoint& p : f.points) {
      out << f.frame_index << ',' << p.object_id << ',' << class_tag(p.object_class) << ',' << csv::num(p.position.x())
          << ',' << csv::num(p.position.y()) << ',' << csv::num(p.velocity.x()) << ',' << csv::num(p.velocity.y())
          << ',' << csv::num(p.rcs_m2) << '\n';
    }
  }
}

void write_labels_csv(const Scene& scene, std::ostream& out) {
  out << "frame,object_id,class,rbin_min,rbin_max,dbin_min,dbin_max\n";
  for (std::size_t k = 0; k < scene.labels.size(); ++k) {
    for (const GroundTruthBox& b : scene.labels[k]) {
      out << k << ',' << b.object_id << ',' << class_tag(b.object_class) << ',' << b.range_bin_min << ','
          << b.range_bin_max << ',' << b.doppler_bin_min << ',' << b.doppler_bin_max << '\n';
    }
  }
}

void write_scene_files(const Scene& scene, const std::filesystem::path& scene_csv,
                       const std::filesystem::path& label_csv) {
  std::ofstream s(scene_csv);
  std::ofstream l(label_csv);
  if (!s || !l) throw RuntimeError("cannot write scene files under " + scene_csv.parent_path().string());
  write_scene_csv(scene, s);
  write_labels_csv(scene, l);
}

std::vector<PointCloudFrame> read_scene_csv(std::istream& in) {
  csv::Reader reader(in, {"frame", "object_id", "class", "pos_x_m", "pos_y_m", "vel_x_mps", "vel_y_mps", "rcs_m2"});
  std::vector<PointCloudFrame> frames;
  std::vector<std::string_view> row;
  while (reader.next(row)) {
    const int k = csv::to_int(row[0]);
    if (k < 0) throw DataError("scene csv: negative frame index");
    if (static_cast<std::size_t>(k) >= frames.size()) {
      const std::size_t old = frames.size();
      frames.resize(static_cast<std::size_t>(k) + 1);
      for (std::size_t i = old; i < frames.size(); ++i) frames[i].frame_index = static_cast<int>(i);
    }
    ScenePoint p;
    p.object_id = csv::to_int(row[1]);
    p.object_class = class_from_tag(row[2]);
    p.position = {csv::to_double(row[3]), csv::to_double(row[4])};
    p.velocity = {csv::to_double(row[5]), csv::to_double(row[6])};
    p.rcs_m2 = csv::to_double(row[7]);
    frames[static_cast<std::size_t>(k)].points.push_back(p);
  }
  return frames;
}

std::vector<std::vector<GroundTruthBox>> read_labels_csv(std::istream& in) {
  csv::Reader reader(in, {"frame", "object_id", "class", "rbin_min", "rbin_max", "dbin_min", "dbin_max"});
  std::vector<std::vector<GroundTruthBox>> labels;
  std::vector<std::string_view> row;
  while (reader.next(row)) {
    const int k = csv::to_int(row[0]);
    if (k < 0) throw DataError("label csv: negative frame index");
    if (static_cast<std::size_t>(k) >= labels.size()) labels.resize(static_cast<std::size_t>(k) + 1);
    GroundTruthBox b;
    b.object_id = csv::to_int(row[1]);
    b.object_class = class_from_tag(row[2]);
    b.range_bin_min = csv::to_int(row[3]);
    b.range_bin_max = csv::to_int(row[4]);
    b.doppler_bin_min = csv::to_int(row[5]);
    b.doppler_bin_max = csv::to_int(row[6]);
    if (b.range_bin_min > b.range_bin_max || b.doppler_bin_min > b.doppler_bin_max)
      throw DataError("label csv: inverted box");
    labels[static_cast<std::size_t>(k)].push_back(b);
  }
  return labels;
}

Scene read_scene_files(const std::filesystem::path& scene_csv, const std::filesystem::path& label_csv,
                       int num_frames) {
  std::ifstream s(scene_csv);
  if (!s) throw DataError("missing scene file " + scene_csv.string());
  std::ifstream l(label_csv);
  if (!l) throw DataError("missing label file " + label_csv.string());
  Scene scene;
  scene.frames = read_scene_csv(s);
  scene.labels = read_labels_csv(l);
  const std::size_t n = std::max({scene.frames.size(), scene.labels.size(), static_cast<std::size_t>(num_frames)});
  const std::size_t old = scene.frames.size();
  scene.frames.resize(n);
  for (std::size_t i = old; i < n; ++i) scene.frames[i].frame_index = static_cast<int>(i);
  scene.labels.resize(n);
  return scene;
}

}  // namespace ragc
