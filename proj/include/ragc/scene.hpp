#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <vector>

#include "ragc/radar.hpp"

namespace ragc {

using Rng = std::mt19937_64;

// Cross-section models.

/// Rayleigh(b) amplitude, returned as power-domain cross-section a^2.
double sample_clutter_rcs(double scale_b, Rng& rng);

/// Nakagami(m, omega) draw via sqrt(Gamma(m, omega/m)), used directly as RCS.
double sample_pedestrian_rcs(double m, double omega, Rng& rng);

/// Four-lobe sinc pattern over aspect angle. Lobes sit at 0, 90, 180, 270 deg.
struct VehicleRcsPattern {
  double front_m2 = 10.0;
  double side_m2 = 20.0;
  double back_m2 = 10.0;
  double front_width_deg = 60.0;
  double side_width_deg = 20.0;
  double back_width_deg = 60.0;
  double floor_m2 = 0.5;
};

/// sin(pi x) / (pi x)
double sinc(double x);

double vehicle_rcs_pattern(double orientation_rad, const VehicleRcsPattern& params);

/// Splits a vehicle's mean cross-section over M scatterers with unit-mean
/// Rayleigh-power noise. `with_noise = false` is a test hook.
std::vector<double> assign_vehicle_scatterer_rcs(double mean_rcs_m2, int num_scatterers, Rng& rng,
                                                 bool with_noise = true);

// Scene generation.

struct CountRange {
  int min = 0;
  int max = 0;
};

struct SceneConfig {
  int num_frames = 100;
  double frame_rate_hz = 20.0;
  CountRange pedestrians{0, 1};
  CountRange vehicles{0, 1};
  CountRange clutter_points{200, 200};
  /// Field of view: x across boresight, y along boresight (radar at origin).
  double fov_x_min_m = -40.0;
  double fov_x_max_m = 40.0;
  double fov_y_min_m = 20.0;
  double fov_y_max_m = 100.0;
  double pedestrian_max_speed_mps = 3.0;
  double vehicle_min_speed_mps = 3.0;
  double vehicle_max_speed_mps = 20.0;
  int vehicle_scatterers = 8;
  double vehicle_length_m = 4.5;
  double vehicle_width_m = 1.8;
  double micro_doppler_std_mps = 0.5;
  double clutter_rayleigh_scale = 0.3;
  double nakagami_m = 1.0;
  double nakagami_omega = 0.5;
  VehicleRcsPattern vehicle_pattern;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

struct ObjectTrack {
  int object_id = 0;
  ObjectClass object_class = ObjectClass::pedestrian;
  Eigen::Vector2d initial_position = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  /// Heading relative to boresight (vehicles).
  double orientation_rad = 0.0;
  int num_scatterers = 1;
  /// Body-frame offsets (along-heading, across-heading), one per scatterer.
  std::vector<Eigen::Vector2d> body_offsets;
  bool exited = false;
};

struct ScenePoint {
  int object_id = 0;
  ObjectClass object_class = ObjectClass::clutter;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  double rcs_m2 = 0.0;

  /// Range and radial velocity seen from the origin.
  Scatterer scatterer() const;
};

struct PointCloudFrame {
  int frame_index = 0;
  std::vector<ScenePoint> points;

  std::vector<Scatterer> scatterers() const;
};

struct GroundTruthBox {
  int range_bin_min = 0;
  int range_bin_max = 0;
  int doppler_bin_min = 0;
  int doppler_bin_max = 0;
  ObjectClass object_class = ObjectClass::pedestrian;
  int object_id = 0;
};

struct Scene {
  std::vector<PointCloudFrame> frames;
  std::vector<std::vector<GroundTruthBox>> labels;
  std::vector<ObjectTrack> tracks;
};

std::vector<GroundTruthBox> ground_truth_boxes(const PointCloudFrame& frame, const ChirpParams& chirp,
                                               int margin_bins = 1);

Scene generate_scene(const SceneConfig& config, const ChirpParams& chirp = {}, int margin_bins = 1);

// CSV interchange.

void write_scene_csv(const Scene& scene, std::ostream& out);
void write_labels_csv(const Scene& scene, std::ostream& out);
void write_scene_files(const Scene& scene, const std::filesystem::path& scene_csv, const std::filesystem::path& label_csv);

/// Reads a scene CSV (frames) and its label CSV. Frames missing from the
/// CSV (no scatterers) are materialized empty up to `num_frames` when given.
Scene read_scene_files(const std::filesystem::path& scene_csv, const std::filesystem::path& label_csv,
                       int num_frames = 0);
std::vector<PointCloudFrame> read_scene_csv(std::istream& in);
std::vector<std::vector<GroundTruthBox>> read_labels_csv(std::istream& in);

}  // namespace ragc
