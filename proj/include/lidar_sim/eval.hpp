#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lidar_sim/frames.hpp"
#include "lidar_sim/sensor_spec.hpp"
#include "lidar_sim/types.hpp"

namespace lidar_sim {

/// Fixed-edge histogram. Values outside the edges are counted in the outer
/// bins.
struct Histogram1D {
  std::vector<double> edges;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  explicit Histogram1D(std::vector<double> edges = {});

  void add(double x);
  int bins() const { return static_cast<int>(counts.size()); }
  double center(int i) const { return 0.5 * (edges[i] + edges[i + 1]); }
  /// Normalized masses; all zero when total == 0.
  std::vector<double> masses() const;

  friend bool operator==(const Histogram1D&, const Histogram1D&) = default;
};

/// 0..50 ns, 0.5 ns bins.
std::vector<double> default_epw_edges();
/// -25..25 ns, 0.5 ns bins.
std::vector<double> default_error_edges();

/// Wasserstein-1 between two normalized histograms with identical edges,
/// mass placed at bin centers. Throws DataError if either is empty and
/// DimensionError if the edges differ.
double wasserstein1(const Histogram1D& a, const Histogram1D& b);
/// Sum of bin-wise minimum masses, in [0, 1].
double histogram_intersection(const Histogram1D& a, const Histogram1D& b);

struct ErrorStats {
  std::size_t matched = 0;
  std::size_t unmatched_reference = 0;
  std::size_t unmatched_predicted = 0;
  double mean_abs_error = 0.0;  // ns
  double mse = 0.0;             // ns^2
  Histogram1D error_histogram{default_error_edges()};  // predicted - reference
};

/// Compares points sharing a (frame, layer, az, echo) key. Throws DataError
/// when no key is shared.
ErrorStats epw_error_stats(std::span<const ScanFrame> reference, std::span<const ScanFrame> predicted);

struct DistributionComparison {
  Histogram1D reference{default_epw_edges()};
  Histogram1D predicted{default_epw_edges()};
  /// Both unset when either side has no strictly positive EPW.
  std::optional<double> wasserstein;
  std::optional<double> intersection;

  bool empty() const { return !wasserstein.has_value(); }
};

/// Histograms of strictly positive EPWs and their distances.
DistributionComparison nonzero_epw_distributions(std::span<const ScanFrame> a,
                                                 std::span<const ScanFrame> b);

struct ClassKpi {
  ClassLabel cls = ClassLabel::None;
  std::size_t matched = 0;
  std::optional<double> mse;  // over matched points whose reference class is cls
  DistributionComparison distribution;
};

/// One row per class present in either trace, ascending class code.
std::vector<ClassKpi> class_kpi(std::span<const ScanFrame> a, std::span<const ScanFrame> b);

struct OrientedBox {
  Vec3 center;
  double yaw = 0.0;  // rad
  Vec3 half_extents{1.0, 1.0, 1.0};

  void validate() const;
};

/// Inverse-rotates into the box frame; faces count as inside.
bool contains(const OrientedBox& box, Vec3 p);

struct BoxPair {
  OrientedBox reference;
  OrientedBox predicted;
};

struct BoxKpi {
  std::size_t reference_points = 0;
  std::size_t predicted_points = 0;
  DistributionComparison distribution;
};

/// Points are placed in the sensor frame (scan_point_position) and selected
/// by each side's box.
std::vector<BoxKpi> box_kpi(std::span<const ScanFrame> a, std::span<const ScanFrame> b,
                            std::span<const BoxPair> boxes, const SensorSpec& spec);

struct KpiReport {
  ErrorStats error;
  DistributionComparison overall;
  std::vector<ClassKpi> classes;
  std::vector<BoxKpi> boxes;
};

KpiReport full_report(std::span<const ScanFrame> reference, std::span<const ScanFrame> predicted,
                      std::span<const BoxPair> boxes, const SensorSpec& spec);

/// Stable key order; doubles in shortest round-trip form.
std::string report_to_json(const KpiReport& report);
/// family,key,metric,value
std::string report_to_csv(const KpiReport& report);
/// "center count" lines, gnuplot-compatible.
std::string histogram_to_gnuplot(const Histogram1D& h);

/// [{"reference":{"center":[x,y,z],"yaw":r,"half_extents":[..]},"predicted":{...}}]
std::vector<BoxPair> parse_box_pairs(const std::string& json_text);

}  // namespace lidar_sim
