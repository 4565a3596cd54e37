#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lidar_sim/conv_net.hpp"
#include "lidar_sim/frames.hpp"
#include "lidar_sim/lut_model.hpp"
#include "lidar_sim/scene.hpp"

namespace lidar_sim {

/// Echo-occurrence probabilities P(k | yaw bin, leading class), k = 0..3,
/// plus per-distance-bin distributions of the chosen sample's offset from
/// its cluster minimum.
class EchoOccurrenceHist {
 public:
  static constexpr int kCounts = kMaxEchoes + 1;

  EchoOccurrenceHist() = default;
  EchoOccurrenceHist(std::vector<double> yaw_edges, std::vector<double> distance_edges,
                     std::vector<double> offset_edges);

  /// 5 deg yaw bins over the FOV, 5 m distance bins, 0.05 m offset bins up
  /// to 2 m (larger offsets land in the last bin).
  static EchoOccurrenceHist with_default_bins(const SensorSpec& spec);

  const std::vector<double>& yaw_edges() const { return yaw_edges_; }
  const std::vector<double>& distance_edges() const { return distance_edges_; }
  const std::vector<double>& offset_edges() const { return offset_edges_; }
  int yaw_bins() const { return static_cast<int>(yaw_edges_.size()) - 1; }
  int distance_bins() const { return static_cast<int>(distance_edges_.size()) - 1; }
  int offset_bins() const { return static_cast<int>(offset_edges_.size()) - 1; }

  /// Yaw bin of an azimuth in degrees; clamps to the outer bins.
  int yaw_bin(double yaw) const;
  int distance_bin(double distance) const;
  int offset_bin(double offset) const;

  std::array<double, kCounts> occurrence(int yaw_bin, ClassLabel cls) const;
  void set_occurrence(int yaw_bin, ClassLabel cls, std::array<double, kCounts> p, double rays);
  /// Number of rays that went into the (yaw bin, class) cell.
  double support(int yaw_bin, ClassLabel cls) const;

  double offset_prior(int distance_bin, int offset_bin) const;
  std::span<const double> offset_distribution(int distance_bin) const;
  void set_offset_distribution(int distance_bin, std::span<const double> p);

  friend bool operator==(const EchoOccurrenceHist&, const EchoOccurrenceHist&) = default;

 private:
  std::size_t cell(int yaw_bin, ClassLabel cls) const;

  std::vector<double> yaw_edges_;
  std::vector<double> distance_edges_;
  std::vector<double> offset_edges_;
  std::vector<double> occurrence_;  // [yaw][class][k]
  std::vector<double> support_;     // [yaw][class]
  std::vector<double> offsets_;     // [distance][offset]
};

/// Counts echo multiplicities per (yaw bin, leading class) and chosen-sample
/// offsets per distance bin; empty cells become uniform. Offset masses use
/// add-one smoothing. Throws DataError on empty input or mismatched ids.
EchoOccurrenceHist fit_echo_hist(std::span<const LabeledFrame> truth, const SensorSpec& spec,
                                 double gap = kClusterGap);

enum class SelectionMode { Argmax, Sample };

struct SelectionConfig {
  double gap = kClusterGap;
  SelectionMode mode = SelectionMode::Argmax;
  std::uint64_t seed = 0;
  /// Lower bound on the EPW likelihood std, ns.
  double min_epw_sigma = 0.25;

  void validate() const;
};

/// Dense ray with one predicted EPW per sample.
struct PredictedRay {
  int layer = 0;
  int azimuth_index = 0;
  double yaw = 0.0;  // deg
  std::span<const DenseSample> samples;
  std::span<const double> predicted_epw;
};

/// Clusters the ray, picks the echo count (argmax or a draw from P(k),
/// capped by the cluster count), keeps the nearest k clusters and emits the
/// best-scoring sample of each: offset prior x Gaussian EPW likelihood
/// under the lut bin. A null lut makes the likelihood uniform. rng is
/// required in Sample mode.
std::vector<ScanPoint> select_echoes(const PredictedRay& ray, const EchoOccurrenceHist& hist,
                                     const EpwLut* lut, const SelectionConfig& config,
                                     Rng* rng = nullptr);

/// Independent stream per ray, stable under any scheduling order.
Rng ray_rng(std::uint64_t seed, std::uint64_t frame_id, int layer, int azimuth_index);

enum class Backend { Net, Lut };

struct SensorModel {
  SensorSpec spec;
  Backend backend = Backend::Lut;
  std::vector<EpwNetwork> nets;  // per echo, for Backend::Net
  EpwLut lut;                    // EPW source for Backend::Lut and likelihood for both
  EchoOccurrenceHist hist;
};

/// Per-sample EPW predictions of a frame, aligned with frame.samples.
std::vector<double> predict_sample_epw(const SensorModel& model, const DenseFrame& frame,
                                       double gap = kClusterGap);

/// Full two-stage pipeline: EPW prediction then per-ray selection.
ScanFrame apply_model(const DenseFrame& frame, const SensorModel& model,
                      const SelectionConfig& config);

void write_echo_hist(std::ostream& os, const EchoOccurrenceHist& hist);
EchoOccurrenceHist read_echo_hist(std::istream& is);
void save_echo_hist(const std::string& path, const EchoOccurrenceHist& hist);
EchoOccurrenceHist load_echo_hist(const std::string& path);

}  // namespace lidar_sim
