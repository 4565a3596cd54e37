#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lidar_sim/frames.hpp"
#include "lidar_sim/rng.hpp"
#include "lidar_sim/sensor_spec.hpp"
#include "lidar_sim/types.hpp"

namespace lidar_sim {

/// Bin layout of the EPW table. The last bin of each axis is closed on the
/// right so that max_range and the FOV edge are covered.
struct LutBins {
  std::vector<double> distance_edges;  // m
  std::vector<double> yaw_edges;       // deg
  bool per_class = true;
  bool per_echo = true;
  /// Adds the layer index as a fourth axis (inclination).
  bool per_layer = false;
  int n_layers = 16;

  /// 0..max_range step 5 m, FOV step 5 deg (last bin shortened if needed).
  static LutBins defaults(const SensorSpec& spec, double distance_step = 5.0,
                          double yaw_step = 5.0);

  int distance_bins() const { return static_cast<int>(distance_edges.size()) - 1; }
  int yaw_bins() const { return static_cast<int>(yaw_edges.size()) - 1; }
  int class_slots() const { return per_class ? kNumClasses : 1; }
  int echo_slots() const { return per_echo ? kMaxEchoes : 1; }
  int layer_slots() const { return per_layer ? n_layers : 1; }

  /// Throws ConfigError on fewer than 2 edges or non-ascending edges.
  void validate() const;

  friend bool operator==(const LutBins&, const LutBins&) = default;
};

/// Bin index of x over ascending edges, or -1 outside [front, back].
int find_bin(std::span<const double> edges, double x);

/// Streaming count/mean/M2 for one bin.
struct BinStats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x);
  /// Chan et al. parallel combination.
  void merge(const BinStats& other);
  /// Population variance M2/count; empty for count < 2.
  std::optional<double> variance() const;

  friend bool operator==(const BinStats&, const BinStats&) = default;
};

class EpwLut {
 public:
  EpwLut() = default;
  explicit EpwLut(LutBins bins);

  const LutBins& bins() const { return bins_; }
  const std::vector<BinStats>& stats() const { return stats_; }

  /// Throws RangeError outside the bin coverage.
  std::size_t index_of(ClassLabel cls, int echo, int layer, double distance, double yaw) const;
  std::size_t flat_index(int cls_slot, int echo_slot, int layer_slot, int dbin, int ybin) const;

  void add(ClassLabel cls, int echo, int layer, double distance, double yaw, double epw);
  BinStats& at(std::size_t i) { return stats_[i]; }
  const BinStats& at(std::size_t i) const { return stats_[i]; }

  /// Associative merge of a lut fitted on another shard (same bins).
  void merge(const EpwLut& other);

  bool empty() const;

  friend bool operator==(const EpwLut&, const EpwLut&) = default;

 private:
  LutBins bins_;
  std::vector<BinStats> stats_;
};

/// Single pass over every point of the trace. Throws DataError on an empty
/// trace. Points outside the bin coverage are skipped.
EpwLut fit_lut(std::span<const ScanFrame> trace, const LutBins& bins, const SensorSpec& spec);

enum class QueryMode { Mean, Sample };

/// Bin mean (Mean) or a Gaussian draw clipped at 0 (Sample). Empty bins
/// return nullopt. Throws RangeError outside coverage.
std::optional<double> query_lut(const EpwLut& lut, ClassLabel cls, int echo, double distance,
                                double yaw, QueryMode mode = QueryMode::Mean, Rng* rng = nullptr,
                                int layer = 0);

/// Statistics of the bin addressed by the query, falling back to the
/// nearest non-empty distance bin of the same class/echo/layer/yaw (the
/// nearer-to-sensor bin wins ties). nullptr if that row is empty.
const BinStats* lookup_with_fallback(const EpwLut& lut, ClassLabel cls, int echo, double distance,
                                     double yaw, int layer = 0);

/// query_lut with the distance-axis fallback applied.
std::optional<double> query_lut_fallback(const EpwLut& lut, ClassLabel cls, int echo,
                                         double distance, double yaw,
                                         QueryMode mode = QueryMode::Mean, Rng* rng = nullptr,
                                         int layer = 0);

/// CSV summary, one row per non-empty bin:
/// class,echo,layer,distance_lo,distance_hi,yaw_lo,yaw_hi,count,mean,std
std::string lut_report(const EpwLut& lut);

void write_lut(std::ostream& os, const EpwLut& lut);
EpwLut read_lut(std::istream& is);
void save_lut(const std::string& path, const EpwLut& lut);
EpwLut load_lut(const std::string& path);

}  // namespace lidar_sim
