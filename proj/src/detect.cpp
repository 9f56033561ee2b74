#include "ragc/detect.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <tuple>

#include "csv.hpp"

namespace ragc {

BBox to_bbox(const GroundTruthBox& gt, double score) {
  return {gt.range_bin_min, gt.range_bin_max, gt.doppler_bin_min, gt.doppler_bin_max, score, gt.object_class};
}

double iou(const BBox& a, const BBox& b) {
  const int ir = std::min(a.r_max, b.r_max) - std::max(a.r_min, b.r_min) + 1;
  const int id = std::min(a.d_max, b.d_max) - std::max(a.d_min, b.d_min) + 1;
  if (ir <= 0 || id <= 0) return 0.0;
  const double inter = static_cast<double>(ir) * id;
  return inter / (a.area() + b.area() - inter);
}

bool ranks_before(const BBox& a, const BBox& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.r_min, a.d_min, a.r_max, a.d_max, a.object_class) <
         std::tie(b.r_min, b.d_min, b.r_max, b.d_max, b.object_class);
}

std::vector<BBox> nms(std::vector<BBox> boxes, double iou_threshold) {
  std::sort(boxes.begin(), boxes.end(), ranks_before);
  std::vector<BBox> kept;
  std::vector<bool> suppressed(boxes.size(), false);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(boxes[i]);
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (!suppressed[j] && boxes[j].object_class == boxes[i].object_class && iou(boxes[i], boxes[j]) > iou_threshold)
        suppressed[j] = true;
    }
  }
  return kept;
}

void CfarParams::validate() const {
  if (guard_range < 0 || guard_doppler < 0) throw ConfigError("cfar: guard cells must be >= 0");
  if (train_range < 1 || train_doppler < 1) throw ConfigError("cfar: training cells must be >= 1");
  if (!(false_alarm_rate > 0.0 && false_alarm_rate < 1.0)) throw ConfigError("cfar: P_fa must lie in (0, 1)");
}

double CfarParams::threshold_factor(int n) const {
  return n * (std::pow(false_alarm_rate, -1.0 / n) - 1.0);
}

namespace {

// Sum over a (2*hr+1) x (2*hc+1) window clipped to the image, by direct
// separable summation (no running differences, so no cancellation).
Eigen::MatrixXd box_sum(const Eigen::MatrixXd& x, int hr, int hc) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  Eigen::MatrixXd horizontal(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, c - hc);
    const Eigen::Index hi = std::min<Eigen::Index>(cols - 1, c + hc);
    horizontal.col(c) = x.middleCols(lo, hi - lo + 1).rowwise().sum();
  }
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, r - hr);
    const Eigen::Index hi = std::min<Eigen::Index>(rows - 1, r + hr);
    out.row(r) = horizontal.middleRows(lo, hi - lo + 1).colwise().sum();
  }
  return out;
}

Eigen::Index clipped_extent(Eigen::Index i, int half, Eigen::Index size) {
  return std::min<Eigen::Index>(size - 1, i + half) - std::max<Eigen::Index>(0, i - half) + 1;
}

}  // namespace

DetectionMask ca_cfar(const Eigen::MatrixXd& power, const CfarParams& params) {
  params.validate();
  const int hr = params.guard_range + params.train_range;
  const int hc = params.guard_doppler + params.train_doppler;
  if (2 * hr + 1 > power.rows() || 2 * hc + 1 > power.cols())
    throw ConfigError("cfar: window larger than the image");

  const Eigen::MatrixXd outer = box_sum(power, hr, hc);
  const Eigen::MatrixXd inner = box_sum(power, params.guard_range, params.guard_doppler);

  std::vector<double> alpha_cache(static_cast<std::size_t>((2 * hr + 1) * (2 * hc + 1) + 1), -1.0);
  DetectionMask mask(power.rows(), power.cols());
  for (Eigen::Index c = 0; c < power.cols(); ++c) {
    const Eigen::Index oc = clipped_extent(c, hc, power.cols());
    const Eigen::Index gc = clipped_extent(c, params.guard_doppler, power.cols());
    for (Eigen::Index r = 0; r < power.rows(); ++r) {
      const Eigen::Index n_train =
          clipped_extent(r, hr, power.rows()) * oc - clipped_extent(r, params.guard_range, power.rows()) * gc;
      if (n_train <= 0) {
        mask(r, c) = false;
        continue;
      }
      double& alpha = alpha_cache[static_cast<std::size_t>(n_train)];
      if (alpha < 0.0) alpha = params.threshold_factor(static_cast<int>(n_train));
      const double mean = (outer(r, c) - inner(r, c)) / static_cast<double>(n_train);
      mask(r, c) = power(r, c) > alpha * mean;
    }
  }
  return mask;
}

DetectionMask ca_cfar(const RangeDopplerImage& image, const CfarParams& params) {
  return ca_cfar(image.linear_power(), params);
}

std::vector<BBox> cluster_detections(const DetectionMask& mask, const RangeDopplerImage& image,
                                     const ClusterParams& params) {
  if (mask.rows() != image.rows() || mask.cols() != image.cols())
    throw DataError("cluster_detections: mask and image dimensions differ");
  const Eigen::Index rows = mask.rows();
  const Eigen::Index cols = mask.cols();
  const int zero_col = static_cast<int>(cols / 2);

  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> seen = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows, cols, false);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
  std::vector<BBox> out;
  auto is_local_max = [&](Eigen::Index r, Eigen::Index c) {
    const double v = image.magnitude_db(r, c);
    for (Eigen::Index rr = std::max<Eigen::Index>(r - 1, 0); rr <= std::min(r + 1, rows - 1); ++rr)
      for (Eigen::Index cc = std::max<Eigen::Index>(c - 1, 0); cc <= std::min(c + 1, cols - 1); ++cc)
        if (image.magnitude_db(rr, cc) > v) return false;
    return true;
  };
  // Column-major scan keeps output order deterministic.
  for (Eigen::Index c0 = 0; c0 < cols; ++c0) {
    for (Eigen::Index r0 = 0; r0 < rows; ++r0) {
      if (!mask(r0, c0) || seen(r0, c0)) continue;
      BBox extent{static_cast<int>(r0), static_cast<int>(r0), static_cast<int>(c0), static_cast<int>(c0), 0.0,
                  ObjectClass::vehicle};
      double peak_db = -std::numeric_limits<double>::infinity();
      std::pair<Eigen::Index, Eigen::Index> peak_cell{r0, c0};
      cells.clear();
      stack.assign(1, {r0, c0});
      seen(r0, c0) = true;
      while (!stack.empty()) {
        const auto [r, c] = stack.back();
        stack.pop_back();
        cells.emplace_back(r, c);
        if (image.magnitude_db(r, c) > peak_db) {
          peak_db = image.magnitude_db(r, c);
          peak_cell = {r, c};
        }
        extent.r_min = std::min(extent.r_min, static_cast<int>(r));
        extent.r_max = std::max(extent.r_max, static_cast<int>(r));
        extent.d_min = std::min(extent.d_min, static_cast<int>(c));
        extent.d_max = std::max(extent.d_max, static_cast<int>(c));
        for (Eigen::Index dr = -1; dr <= 1; ++dr) {
          for (Eigen::Index dc = -1; dc <= 1; ++dc) {
            const Eigen::Index rr = r + dr;
            const Eigen::Index cc = c + dc;
            if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
            if (mask(rr, cc) && !seen(rr, cc)) {
              seen(rr, cc) = true;
              stack.emplace_back(rr, cc);
            }
          }
        }
      }
      if (static_cast<int>(cells.size()) < params.min_cluster_bins) continue;
      if (peak_db - image.noise_floor_db < params.min_peak_db) continue;
      if (extent.d_min >= zero_col - params.clutter_halfwidth && extent.d_max <= zero_col + params.clutter_halfwidth)
        continue;

      // Box around the component's strong local maxima, grown by the label margin.
      BBox box{static_cast<int>(peak_cell.first), static_cast<int>(peak_cell.first),
               static_cast<int>(peak_cell.second), static_cast<int>(peak_cell.second), 0.0, ObjectClass::vehicle};
      for (const auto& [r, c] : cells) {
        const double v = image.magnitude_db(r, c);
        const bool plateau = v >= peak_db - params.plateau_db;
        if (!plateau && (v < peak_db - params.core_db || !is_local_max(r, c))) continue;
        box.r_min = std::min(box.r_min, static_cast<int>(r));
        box.r_max = std::max(box.r_max, static_cast<int>(r));
        box.d_min = std::min(box.d_min, static_cast<int>(c));
        box.d_max = std::max(box.d_max, static_cast<int>(c));
      }
      const bool small = (box.r_max - box.r_min + 1) <= params.pedestrian_max_range_extent &&
                         (box.d_max - box.d_min + 1) <= params.pedestrian_max_doppler_extent;
      box.object_class = small ? ObjectClass::pedestrian : ObjectClass::vehicle;
      box.r_min = std::max(0, box.r_min - params.box_margin);
      box.r_max = std::min(static_cast<int>(rows) - 1, box.r_max + params.box_margin);
      box.d_min = std::max(0, box.d_min - params.box_margin);
      box.d_max = std::min(static_cast<int>(cols) - 1, box.d_max + params.box_margin);
      box.score = std::clamp((peak_db - image.noise_floor_db) / params.score_span_db, 0.0, 1.0);
      out.push_back(box);
    }
  }
  return out;
}

F1Result f1_score(std::span<const BBox> detections, std::span<const GroundTruthBox> truth, double iou_threshold,
                  bool class_agnostic) {
  std::vector<BBox> ranked(detections.begin(), detections.end());
  std::sort(ranked.begin(), ranked.end(), ranks_before);
  std::vector<bool> matched(truth.size(), false);
  F1Result res;
  for (const BBox& det : ranked) {
    double best = -1.0;
    std::size_t best_idx = truth.size();
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (matched[g]) continue;
      if (!class_agnostic && truth[g].object_class != det.object_class) continue;
      const double v = iou(det, to_bbox(truth[g]));
      if (v >= iou_threshold && v > best) {
        best = v;
        best_idx = g;
      }
    }
    if (best_idx < truth.size()) {
      matched[best_idx] = true;
      ++res.true_positives;
    } else {
      ++res.false_positives;
    }
  }
  res.false_negatives = static_cast<int>(truth.size()) - res.true_positives;
  const int denom = 2 * res.true_positives + res.false_positives + res.false_negatives;
  res.f1 = denom == 0 ? 1.0 : 2.0 * res.true_positives / denom;
  return res;
}

namespace {

struct RankedDetection {
  BBox box;
  std::size_t frame;
};

double average_precision(std::vector<RankedDetection> dets, std::span<const EvaluatedFrame> frames, int n_truth,
                         std::optional<ObjectClass> cls, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), [](const RankedDetection& a, const RankedDetection& b) {
    if (a.box.score != b.box.score) return a.box.score > b.box.score;
    if (a.frame != b.frame) return a.frame < b.frame;
    return ranks_before(a.box, b.box);
  });
  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(frames[f].truth.size(), false);

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const RankedDetection& d : dets) {
    const auto& truth = frames[d.frame].truth;
    double best = -1.0;
    std::size_t best_idx = truth.size();
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (cls && truth[g].object_class != *cls) continue;
      const double v = iou(d.box, to_bbox(truth[g]));
      if (v > best) {
        best = v;
        best_idx = g;
      }
    }
    if (best_idx < truth.size() && best >= iou_threshold && !used[d.frame][best_idx]) {
      used[d.frame][best_idx] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / n_truth);
  }
  // Monotone precision envelope, then area under the step curve.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

MapResult mean_average_precision(std::span<const EvaluatedFrame> frames, double iou_threshold, bool class_agnostic) {
  MapResult res;
  res.class_ap.fill(std::numeric_limits<double>::quiet_NaN());
  auto collect = [&](std::optional<ObjectClass> cls, int& n_truth) {
    std::vector<RankedDetection> dets;
    n_truth = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (const GroundTruthBox& g : frames[f].truth)
        if (!cls || g.object_class == *cls) ++n_truth;
      for (const BBox& b : frames[f].detections)
        if (!cls || b.object_class == *cls) dets.push_back({b, f});
    }
    return dets;
  };
  if (class_agnostic) {
    int n_truth = 0;
    auto dets = collect(std::nullopt, n_truth);
    if (n_truth > 0) {
      res.map = average_precision(std::move(dets), frames, n_truth, std::nullopt, iou_threshold);
      res.classes_counted = 1;
    }
    return res;
  }
  double sum = 0.0;
  for (ObjectClass cls : {ObjectClass::pedestrian, ObjectClass::vehicle}) {
    int n_truth = 0;
    auto dets = collect(cls, n_truth);
    if (n_truth == 0) continue;
    const double ap = average_precision(std::move(dets), frames, n_truth, cls, iou_threshold);
    res.class_ap[static_cast<std::size_t>(cls)] = ap;
    sum += ap;
    ++res.classes_counted;
  }
  res.map = res.classes_counted > 0 ? sum / res.classes_counted : 0.0;
  return res;
}

double anchor_distance(const Anchor& a, const Anchor& b) {
  const double inter = std::min(a.width, b.width) * std::min(a.height, b.height);
  const double uni = a.width * a.height + b.width * b.height - inter;
  return uni > 0.0 ? 1.0 - inter / uni : 0.0;
}

std::vector<Anchor> kmeans_anchors(std::span<const Anchor> boxes, int k, std::uint64_t seed,
                                   std::vector<double>* distance_trace, int max_iterations) {
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (distance_trace) distance_trace->clear();
  std::vector<Anchor> distinct(boxes.begin(), boxes.end());
  std::sort(distinct.begin(), distinct.end(),
            [](const Anchor& a, const Anchor& b) { return std::tie(a.width, a.height) < std::tie(b.width, b.height); });
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<int>(distinct.size()) < k)
    throw DataError("kmeans: " + std::to_string(distinct.size()) + " distinct boxes, fewer than k = " + std::to_string(k));

  std::mt19937_64 rng(seed);
  std::vector<Anchor> centroids;
  centroids.push_back(boxes[std::uniform_int_distribution<std::size_t>(0, boxes.size() - 1)(rng)]);
  std::vector<double> weight(boxes.size());
  while (static_cast<int>(centroids.size()) < k) {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (const Anchor& c : centroids) d = std::min(d, anchor_distance(boxes[i], c));
      // Exact duplicates of a centroid must never be picked again.
      const bool taken = std::find(centroids.begin(), centroids.end(), boxes[i]) != centroids.end();
      weight[i] = taken ? 0.0 : d * d;
    }
    if (std::accumulate(weight.begin(), weight.end(), 0.0) <= 0.0) {
      for (std::size_t i = 0; i < boxes.size(); ++i)
        weight[i] = std::find(centroids.begin(), centroids.end(), boxes[i]) == centroids.end() ? 1.0 : 0.0;
    }
    std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
    centroids.push_back(boxes[pick(rng)]);
  }

  std::vector<int> assignment(boxes.size(), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double total = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      int best = 0;
      double best_d = anchor_distance(boxes[i], centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = anchor_distance(boxes[i], centroids[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      total += best_d;
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (distance_trace) distance_trace->push_back(total);
    if (!changed) break;
    std::vector<Anchor> sums(static_cast<std::size_t>(k));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      auto c = static_cast<std::size_t>(assignment[i]);
      sums[c].width += boxes[i].width;
      sums[c].height += boxes[i].height;
      ++counts[c];
    }
    for (std::size_t c = 0; c < centroids.size(); ++c)
      if (counts[c] > 0) centroids[c] = {sums[c].width / counts[c], sums[c].height / counts[c]};
  }
  std::sort(centroids.begin(), centroids.end(), [](const Anchor& a, const Anchor& b) {
    return std::make_tuple(a.width * a.height, a.width) < std::make_tuple(b.width * b.height, b.width);
  });
  return centroids;
}

Eigen::MatrixXd notch_zero_doppler(const Eigen::MatrixXd& power, int halfwidth) {
  if (halfwidth < 0) return power;
  const Eigen::Index cols = power.cols();
  const Eigen::Index zero = cols / 2;
  const Eigen::Index lo = std::max<Eigen::Index>(0, zero - halfwidth);
  const Eigen::Index hi = std::min<Eigen::Index>(cols - 1, zero + halfwidth);
  if (hi - lo + 1 >= cols) throw ConfigError("clutter notch covers the whole Doppler axis");
  Eigen::MatrixXd out = power;
  std::vector<double> rest;
  rest.reserve(static_cast<std::size_t>(cols));
  for (Eigen::Index r = 0; r < power.rows(); ++r) {
    rest.clear();
    for (Eigen::Index c = 0; c < cols; ++c)
      if (c < lo || c > hi) rest.push_back(power(r, c));
    auto mid = rest.begin() + static_cast<std::ptrdiff_t>(rest.size() / 2);
    std::nth_element(rest.begin(), mid, rest.end());
    // Median of exponentially distributed power is ln 2 times its mean.
    const double level = *mid / std::log(2.0);
    for (Eigen::Index c = lo; c <= hi; ++c) out(r, c) = level;
  }
  return out;
}

std::vector<BBox> CfarDetector::detect(const RangeDopplerImage& image) const {
  DetectionMask mask = ca_cfar(notch_zero_doppler(image.linear_power(), cluster_.clutter_halfwidth), cfar_);
  const Eigen::Index zero = image.cols() / 2;
  for (Eigen::Index c = std::max<Eigen::Index>(0, zero - cluster_.clutter_halfwidth);
       c <= std::min<Eigen::Index>(image.cols() - 1, zero + cluster_.clutter_halfwidth); ++c)
    mask.col(c).setConstant(false);
  return nms(cluster_detections(mask, image, cluster_), nms_threshold_);
}

void write_detections_csv(std::span<const DetectionSet> sets, std::ostream& out) {
  out << "frame,class,score,rbin_min,rbin_max,dbin_min,dbin_max\n";
  for (const DetectionSet& s : sets)
    for (const BBox& b : s.boxes)
      out << s.frame_index << ',' << class_tag(b.object_class) << ',' << csv::num(b.score) << ',' << b.r_min << ','
          << b.r_max << ',' << b.d_min << ',' << b.d_max << '\n';
}

std::vector<DetectionSet> read_detections_csv(std::istream& in) {
  csv::Reader reader(in, {"frame", "class", "score", "rbin_min", "rbin_max", "dbin_min", "dbin_max"});
  std::vector<DetectionSet> sets;
  std::vector<std::string_view> row;
  while (reader.next(row)) {
    const int frame = csv::to_int(row[0]);
    if (sets.empty() || sets.back().frame_index != frame) sets.push_back({frame, {}});
    BBox b{csv::to_int(row[3]), csv::to_int(row[4]), csv::to_int(row[5]), csv::to_int(row[6]),
           csv::to_double(row[2]), class_from_tag(row[1])};
    sets.back().boxes.push_back(b);
  }
  return sets;
}

void write_anchors(std::span<const Anchor> anchors, std::ostream& out) {
  for (const Anchor& a : anchors) out << csv::num(a.width) << ' ' << csv::num(a.height) << '\n';
}

}  // namespace ragc
