#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ragc/radar.hpp"
#include "ragc/scene.hpp"

namespace ragc {

/// Axis-aligned box on inclusive (range row, Doppler column) bin coordinates.
struct BBox {
  int r_min = 0;
  int r_max = 0;
  int d_min = 0;
  int d_max = 0;
  double score = 1.0;
  ObjectClass object_class = ObjectClass::vehicle;

  int area() const { return (r_max - r_min + 1) * (d_max - d_min + 1); }
  bool operator==(const BBox&) const = default;
};

BBox to_bbox(const GroundTruthBox& gt, double score = 1.0);

double iou(const BBox& a, const BBox& b);

/// Strict total order used wherever results must not depend on input order:
/// score descending, then r_min, d_min, r_max, d_max, class ascending.
bool ranks_before(const BBox& a, const BBox& b);

/// Greedy same-class suppression of boxes with IOU > threshold.
std::vector<BBox> nms(std::vector<BBox> boxes, double iou_threshold = 0.5);

struct CfarParams {
  int guard_range = 2;
  int guard_doppler = 2;
  int train_range = 4;
  int train_doppler = 4;
  double false_alarm_rate = 1e-6;

  void validate() const;
  /// alpha = N * (P_fa^(-1/N) - 1)
  double threshold_factor(int num_training_cells) const;
};

using DetectionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Cell-averaging CFAR on linear power. Edge cells use the truncated ring.
DetectionMask ca_cfar(const Eigen::MatrixXd& linear_power, const CfarParams& params);
DetectionMask ca_cfar(const RangeDopplerImage& image, const CfarParams& params);

struct ClusterParams {
  int min_cluster_bins = 1;
  /// Components confined to zero Doppler +- this many columns are clutter.
  int clutter_halfwidth = 1;
  /// The box spans local maxima within `core_db` of the component peak and
  /// every cell within `plateau_db` of it.
  double core_db = 20.0;
  double plateau_db = 3.0;
  /// Growth of the core box, matching the ground-truth label margin.
  int box_margin = 1;
  /// Core extents (before growth) at or below these are pedestrians.
  int pedestrian_max_range_extent = 2;
  int pedestrian_max_doppler_extent = 2;
  double score_span_db = 60.0;
  /// Components whose peak is less than this far above the noise floor are dropped.
  double min_peak_db = 15.0;
};

std::vector<BBox> cluster_detections(const DetectionMask& mask, const RangeDopplerImage& image,
                                     const ClusterParams& params = {});

/// Replaces the zero-Doppler columns (+- halfwidth) with a per-row noise
/// estimate so stationary clutter does not bias CFAR training cells.
Eigen::MatrixXd notch_zero_doppler(const Eigen::MatrixXd& linear_power, int halfwidth);

struct F1Result {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  double f1 = 1.0;
};

/// F1 = 2TP / (2TP + FP + FN); 1.0 when there is neither truth nor detection.
F1Result f1_score(std::span<const BBox> detections, std::span<const GroundTruthBox> truth,
                  double iou_threshold = 0.5, bool class_agnostic = false);

struct EvaluatedFrame {
  std::vector<BBox> detections;
  std::vector<GroundTruthBox> truth;
};

struct MapResult {
  double map = 0.0;
  /// Indexed by ObjectClass (pedestrian, vehicle); NaN when the class has no truth.
  std::array<double, 2> class_ap{};
  int classes_counted = 0;
};

/// All-point interpolated AP per class, averaged over classes with truth.
MapResult mean_average_precision(std::span<const EvaluatedFrame> frames, double iou_threshold = 0.5,
                                 bool class_agnostic = false);

struct Anchor {
  double width = 0.0;
  double height = 0.0;
  bool operator==(const Anchor&) const = default;
};

/// 1 - IOU of two co-centered boxes.
double anchor_distance(const Anchor& a, const Anchor& b);

/// k-means with 1 - IOU distance and k-means++ seeding. `distance_trace`
/// receives the total assignment distance after every iteration. Output is
/// sorted by area ascending.
std::vector<Anchor> kmeans_anchors(std::span<const Anchor> boxes, int k, std::uint64_t seed,
                                   std::vector<double>* distance_trace = nullptr, int max_iterations = 100);

/// Downstream detector contract consumed by the environment.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<BBox> detect(const RangeDopplerImage& image) const = 0;
};

/// Reference detector: zero-Doppler notch, CA-CFAR, connected components, NMS.
class CfarDetector final : public Detector {
 public:
  CfarDetector() = default;
  CfarDetector(CfarParams cfar, ClusterParams cluster, double nms_threshold = 0.5)
      : cfar_(cfar), cluster_(cluster), nms_threshold_(nms_threshold) {}

  std::vector<BBox> detect(const RangeDopplerImage& image) const override;

  const CfarParams& cfar() const { return cfar_; }

 private:
  CfarParams cfar_;
  ClusterParams cluster_;
  double nms_threshold_ = 0.5;
};

struct DetectionSet {
  int frame_index = 0;
  std::vector<BBox> boxes;
};

void write_detections_csv(std::span<const DetectionSet> sets, std::ostream& out);
std::vector<DetectionSet> read_detections_csv(std::istream& in);
void write_anchors(std::span<const Anchor> anchors, std::ostream& out);

}  // namespace ragc
