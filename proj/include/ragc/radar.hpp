#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ragc/common.hpp"

namespace ragc {

/// FMCW burst parameters. Defaults give 1 m range bins over 256 m and
/// +-24.35 m/s unambiguous radial velocity at 77 GHz.
struct ChirpParams {
  double carrier_freq_hz = 77e9;
  double bandwidth_hz = 150e6;
  double sweep_duration_s = 25.6e-6;
  double pulse_repetition_interval_s = 40e-6;
  int num_pulses = 128;
  int samples_per_sweep = 256;

  double sample_rate_hz() const { return samples_per_sweep / sweep_duration_s; }
  double sweep_rate_hz_per_s() const { return bandwidth_hz / sweep_duration_s; }
  double wavelength_m() const { return kSpeedOfLight / carrier_freq_hz; }
  double range_bin_m() const;
  double max_range_m() const;
  double max_velocity_mps() const;
  double doppler_bin_hz() const;
  double velocity_bin_mps() const;
  int zero_doppler_col() const { return num_pulses / 2; }

  /// Analytic (unrounded) image row of a scatterer at range R.
  double range_bin_exact(double range_m) const;
  /// Analytic (unrounded) image column offset from zero Doppler.
  double doppler_offset_exact(double radial_velocity_mps) const;
  int range_bin(double range_m) const;
  int doppler_bin(double radial_velocity_mps) const;

  /// Throws ConfigError when an invariant is broken.
  void validate() const;
};

struct Scatterer {
  double range_m = 0.0;
  /// Positive means receding (negative Doppler).
  double radial_velocity_mps = 0.0;
  double rcs_m2 = 0.0;
  ObjectClass object_class = ObjectClass::clutter;
  int object_id = 0;
};

bool within_unambiguous(const Scatterer& s, const ChirpParams& chirp);

/// Transmit power term in dBmW.
struct PowerSetting {
  double power_db = 15.0;
  double watts() const { return dbm_to_watts(power_db); }
};

enum class Window : std::uint8_t { rectangular, hann };

struct RadarFrame {
  /// N fast-time rows x P slow-time columns.
  Eigen::MatrixXcd samples;
  ChirpParams chirp;
  PowerSetting power;
  double noise_power_dbm = -90.0;
};

struct RangeDopplerImage {
  /// N x P, zero Doppler at column P/2.
  Eigen::MatrixXd magnitude_db;
  double range_bin_size_m = 0.0;
  double doppler_bin_size_hz = 0.0;
  double noise_floor_db = 0.0;

  Eigen::Index rows() const { return magnitude_db.rows(); }
  Eigen::Index cols() const { return magnitude_db.cols(); }
  /// |.|^2 of every pixel.
  Eigen::MatrixXd linear_power() const;
};

/// Radar range equation with the antenna terms folded into P_c:
/// P_R = P_c * lambda^2 * sigma / R^4.
double received_power(const PowerSetting& power, double rcs_m2, double range_m, const ChirpParams& chirp);

/// Stretch-processed baseband of point scatterers plus circular white
/// Gaussian noise of `noise_power_dbm` per sample.
RadarFrame synth_baseband(std::span<const Scatterer> scatterers, const ChirpParams& chirp, const PowerSetting& power,
                          double noise_power_dbm, std::uint64_t rng_seed);

/// Noise-free variant; identical to synth_baseband without the noise term.
RadarFrame synth_noiseless(std::span<const Scatterer> scatterers, const ChirpParams& chirp, const PowerSetting& power);

RangeDopplerImage range_doppler_map(const RadarFrame& frame, Window window = Window::rectangular);

struct StateNormalization {
  double clip_low_db = -95.0;
  double clip_high_db = -35.0;
  int out_height = 64;
  int out_width = 64;
};

/// Row-major (out_height x out_width) image with values in [0, 1].
using StateImage = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

StateImage normalize_state(const RangeDopplerImage& image, const StateNormalization& norm);

// Radar cube binary container ("RAGC").

inline constexpr std::uint16_t kRadarCubeVersion = 1;

void write_radar_cube(const RadarFrame& frame, const std::filesystem::path& path);
void write_radar_cube(const RadarFrame& frame, std::ostream& out);
RadarFrame read_radar_cube(const std::filesystem::path& path);
RadarFrame read_radar_cube(std::istream& in);

}  // namespace ragc
