#include "ragc/radar.hpp"

#include <unsupported/Eigen/FFT>

#include <fstream>
#include <random>

#include "binary_io.hpp"

namespace ragc {

double ChirpParams::range_bin_m() const {
  // One FFT bin of beat frequency (f_s/N) expressed as range.
  return kSpeedOfLight * sample_rate_hz() / (2.0 * sweep_rate_hz_per_s() * samples_per_sweep);
}

double ChirpParams::max_range_m() const { return sample_rate_hz() * kSpeedOfLight / (2.0 * sweep_rate_hz_per_s()); }

double ChirpParams::max_velocity_mps() const {
  return kSpeedOfLight / (4.0 * carrier_freq_hz * pulse_repetition_interval_s);
}

double ChirpParams::doppler_bin_hz() const { return 1.0 / (pulse_repetition_interval_s * num_pulses); }

double ChirpParams::velocity_bin_mps() const { return doppler_bin_hz() * wavelength_m() / 2.0; }

double ChirpParams::range_bin_exact(double range_m) const {
  return 2.0 * sweep_rate_hz_per_s() * range_m / kSpeedOfLight * samples_per_sweep / sample_rate_hz();
}

double ChirpParams::doppler_offset_exact(double radial_velocity_mps) const {
  return -2.0 * radial_velocity_mps * carrier_freq_hz / kSpeedOfLight * pulse_repetition_interval_s * num_pulses;
}

int ChirpParams::range_bin(double range_m) const { return static_cast<int>(std::lround(range_bin_exact(range_m))); }

int ChirpParams::doppler_bin(double radial_velocity_mps) const {
  return zero_doppler_col() + static_cast<int>(std::lround(doppler_offset_exact(radial_velocity_mps)));
}

void ChirpParams::validate() const {
  if (!(carrier_freq_hz > 0.0)) throw ConfigError("chirp: carrier frequency must be positive");
  if (!(bandwidth_hz > 0.0)) throw ConfigError("chirp: bandwidth must be positive");
  if (!(sweep_duration_s > 0.0)) throw ConfigError("chirp: sweep duration must be positive");
  if (!(sweep_duration_s < pulse_repetition_interval_s))
    throw ConfigError("chirp: sweep duration must be shorter than the pulse repetition interval");
  if (num_pulses < 2) throw ConfigError("chirp: need at least 2 pulses");
  if (samples_per_sweep < 2) throw ConfigError("chirp: need at least 2 samples per sweep");
}

bool within_unambiguous(const Scatterer& s, const ChirpParams& chirp) {
  return s.range_m > 0.0 && s.range_m < chirp.max_range_m() &&
         std::abs(s.radial_velocity_mps) < chirp.max_velocity_mps();
}

Eigen::MatrixXd RangeDopplerImage::linear_power() const {
  return (magnitude_db.array() * (std::log(10.0) / 10.0)).exp().matrix();
}

double received_power(const PowerSetting& power, double rcs_m2, double range_m, const ChirpParams& chirp) {
  if (!(range_m > 0.0)) throw std::domain_error("received_power: range must be positive");
  const double lambda = chirp.wavelength_m();
  const double r2 = range_m * range_m;
  return power.watts() * lambda * lambda * rcs_m2 / (r2 * r2);
}

namespace {

void check_scatterer(const Scatterer& s, const ChirpParams& chirp) {
  if (!(s.range_m > 0.0)) throw std::domain_error("scatterer at zero range");
  if (!(s.rcs_m2 >= 0.0)) throw std::domain_error("scatterer with negative cross-section");
  if (!within_unambiguous(s, chirp)) throw std::domain_error("scatterer outside unambiguous range/velocity");
}

Eigen::MatrixXcd synthesize(std::span<const Scatterer> scatterers, const ChirpParams& chirp, const PowerSetting& power) {
  chirp.validate();
  const Eigen::Index n_fast = chirp.samples_per_sweep;
  const Eigen::Index n_slow = chirp.num_pulses;
  const auto k = static_cast<Eigen::Index>(scatterers.size());
  if (k == 0) return Eigen::MatrixXcd::Zero(n_fast, n_slow);

  const double fc = chirp.carrier_freq_hz;
  const double alpha = chirp.sweep_rate_hz_per_s();
  const double dt_fast = 1.0 / chirp.sample_rate_hz();
  const double pri = chirp.pulse_repetition_interval_s;
  constexpr double two_pi = 2.0 * kPi;

  // The phase phi1 + phi2 + phi3 at t = pT + n/f_s separates into a
  // fast-time and a slow-time factor, so the frame is sum_k u_k w_k^T.
  Eigen::MatrixXcd fast(n_fast, k);
  Eigen::MatrixXcd slow(n_slow, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Scatterer& s = scatterers[static_cast<std::size_t>(i)];
    check_scatterer(s, chirp);
    const double amplitude = std::sqrt(received_power(power, s.rcs_m2, s.range_m, chirp));
    const double delay = 2.0 * s.range_m / kSpeedOfLight;
    const double doppler = fc * 2.0 * s.radial_velocity_mps / kSpeedOfLight;
    const double phi1 = std::fmod(-two_pi * fc * delay, two_pi);
    for (Eigen::Index n = 0; n < n_fast; ++n) {
      const double tau = static_cast<double>(n) * dt_fast;
      fast(n, i) = std::polar(1.0, -two_pi * doppler * tau - two_pi * alpha * tau * delay);
    }
    const std::complex<double> gain = std::polar(amplitude, phi1);
    for (Eigen::Index p = 0; p < n_slow; ++p) {
      slow(p, i) = gain * std::polar(1.0, std::fmod(-two_pi * doppler * static_cast<double>(p) * pri, two_pi));
    }
  }
  Eigen::MatrixXcd out(n_fast, n_slow);
  out.noalias() = fast * slow.transpose();
  return out;
}

}  // namespace

RadarFrame synth_noiseless(std::span<const Scatterer> scatterers, const ChirpParams& chirp, const PowerSetting& power) {
  return RadarFrame{synthesize(scatterers, chirp, power), chirp, power, -std::numeric_limits<double>::infinity()};
}

RadarFrame synth_baseband(std::span<const Scatterer> scatterers, const ChirpParams& chirp, const PowerSetting& power,
                          double noise_power_dbm, std::uint64_t rng_seed) {
  RadarFrame frame{synthesize(scatterers, chirp, power), chirp, power, noise_power_dbm};
  const double sigma = std::sqrt(dbm_to_watts(noise_power_dbm) / 2.0);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Column-major walk: pulse by pulse, sample by sample.
  for (Eigen::Index p = 0; p < frame.samples.cols(); ++p) {
    for (Eigen::Index n = 0; n < frame.samples.rows(); ++n) {
      const double re = normal(rng);
      const double im = normal(rng);
      frame.samples(n, p) += std::complex<double>(sigma * re, sigma * im);
    }
  }
  return frame;
}

namespace {

Eigen::VectorXd window_coeffs(Eigen::Index n, Window window) {
  if (window == Window::rectangular) return Eigen::VectorXd::Ones(n);
  // Periodic Hann: an on-bin tone occupies exactly three bins.
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / n);
  return w;
}

}  // namespace

RangeDopplerImage range_doppler_map(const RadarFrame& frame, Window window) {
  const Eigen::Index n_fast = frame.samples.rows();
  const Eigen::Index n_slow = frame.samples.cols();
  if (n_fast != frame.chirp.samples_per_sweep || n_slow != frame.chirp.num_pulses)
    throw DataError("radar frame dimensions do not match chirp parameters");

  const Eigen::VectorXd w_fast = window_coeffs(n_fast, window);
  const Eigen::VectorXd w_slow = window_coeffs(n_slow, window);

  Eigen::FFT<double> fft;
  Eigen::MatrixXcd spectrum(n_fast, n_slow);
  {
    std::vector<std::complex<double>> in(static_cast<std::size_t>(n_fast)), out;
    for (Eigen::Index p = 0; p < n_slow; ++p) {
      for (Eigen::Index n = 0; n < n_fast; ++n)
        in[static_cast<std::size_t>(n)] = frame.samples(n, p) * (w_fast(n) * w_slow(p));
      fft.fwd(out, in);
      for (Eigen::Index n = 0; n < n_fast; ++n) spectrum(n, p) = out[static_cast<std::size_t>(n)];
    }
  }
  {
    std::vector<std::complex<double>> in(static_cast<std::size_t>(n_slow)), out;
    for (Eigen::Index n = 0; n < n_fast; ++n) {
      for (Eigen::Index p = 0; p < n_slow; ++p) in[static_cast<std::size_t>(p)] = spectrum(n, p);
      fft.fwd(out, in);
      for (Eigen::Index p = 0; p < n_slow; ++p) spectrum(n, p) = out[static_cast<std::size_t>(p)];
    }
  }

  RangeDopplerImage image;
  image.magnitude_db.resize(n_fast, n_slow);
  const Eigen::Index center = n_slow / 2;
  for (Eigen::Index col = 0; col < n_slow; ++col) {
    const Eigen::Index src_col = ((col - center) % n_slow + n_slow) % n_slow;
    for (Eigen::Index row = 0; row < n_fast; ++row) {
      // Beat tones sit at negative fast-time frequency: range bin k <-> FFT bin -k.
      const Eigen::Index src_row = (n_fast - row) % n_fast;
      image.magnitude_db(row, col) = 20.0 * std::log10(std::abs(spectrum(src_row, src_col)) + 1e-30);
    }
  }
  image.range_bin_size_m = frame.chirp.range_bin_m();
  image.doppler_bin_size_hz = frame.chirp.doppler_bin_hz();
  const double noise_gain = w_fast.squaredNorm() * w_slow.squaredNorm();
  image.noise_floor_db = 10.0 * std::log10(dbm_to_watts(frame.noise_power_dbm) * noise_gain + 1e-300);
  return image;
}

StateImage normalize_state(const RangeDopplerImage& image, const StateNormalization& norm) {
  if (!(norm.clip_low_db < norm.clip_high_db)) throw ConfigError("state normalization: clip_low must be below clip_high");
  if (norm.out_height < 1 || norm.out_width < 1 || image.rows() % norm.out_height != 0 ||
      image.cols() % norm.out_width != 0)
    throw ConfigError("state normalization: output size must divide the image size evenly");
  const Eigen::Index bh = image.rows() / norm.out_height;
  const Eigen::Index bw = image.cols() / norm.out_width;
  const double span = norm.clip_high_db - norm.clip_low_db;
  const Eigen::ArrayXXd mapped =
      (image.magnitude_db.array().max(norm.clip_low_db).min(norm.clip_high_db) - norm.clip_low_db) / span;
  StateImage out(norm.out_height, norm.out_width);
  for (Eigen::Index r = 0; r < norm.out_height; ++r)
    for (Eigen::Index c = 0; c < norm.out_width; ++c)
      out(r, c) = static_cast<float>(mapped.block(r * bh, c * bw, bh, bw).mean());
  return out;
}

void write_radar_cube(const RadarFrame& frame, std::ostream& out) {
  io::put_magic(out, "RAGC");
  io::put_u16(out, kRadarCubeVersion);
  io::put_u32(out, static_cast<std::uint32_t>(frame.samples.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(frame.samples.cols()));
  io::put_f64(out, frame.chirp.carrier_freq_hz);
  io::put_f64(out, frame.chirp.bandwidth_hz);
  io::put_f64(out, frame.chirp.sweep_duration_s);
  io::put_f64(out, frame.chirp.pulse_repetition_interval_s);
  io::put_f64(out, frame.power.power_db);
  io::put_f64(out, frame.noise_power_dbm);
  for (Eigen::Index p = 0; p < frame.samples.cols(); ++p) {
    for (Eigen::Index n = 0; n < frame.samples.rows(); ++n) {
      io::put_f32(out, static_cast<float>(frame.samples(n, p).real()));
      io::put_f32(out, static_cast<float>(frame.samples(n, p).imag()));
    }
  }
  if (!out) throw RuntimeError("failed writing radar cube");
}

void write_radar_cube(const RadarFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  write_radar_cube(frame, out);
}

RadarFrame read_radar_cube(std::istream& in) {
  io::expect_magic(in, "RAGC", "radar cube");
  const std::uint16_t version = io::get_u16(in);
  if (version != kRadarCubeVersion) throw DataError("radar cube: unsupported version " + std::to_string(version));
  RadarFrame frame;
  const std::uint32_t n_fast = io::get_u32(in);
  const std::uint32_t n_slow = io::get_u32(in);
  frame.chirp.samples_per_sweep = static_cast<int>(n_fast);
  frame.chirp.num_pulses = static_cast<int>(n_slow);
  frame.chirp.carrier_freq_hz = io::get_f64(in);
  frame.chirp.bandwidth_hz = io::get_f64(in);
  frame.chirp.sweep_duration_s = io::get_f64(in);
  frame.chirp.pulse_repetition_interval_s = io::get_f64(in);
  frame.power.power_db = io::get_f64(in);
  frame.noise_power_dbm = io::get_f64(in);
  try {
    frame.chirp.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("radar cube header: ") + e.what());
  }
  frame.samples.resize(n_fast, n_slow);
  for (std::uint32_t p = 0; p < n_slow; ++p) {
    for (std::uint32_t n = 0; n < n_fast; ++n) {
      const float re = io::get_f32(in);
      const float im = io::get_f32(in);
      frame.samples(n, p) = {re, im};
    }
  }
  return frame;
}

RadarFrame read_radar_cube(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open radar cube " + path.string());
  return read_radar_cube(in);
}

}  // namespace ragc
