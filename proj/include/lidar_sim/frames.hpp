#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lidar_sim/sensor_spec.hpp"
#include "lidar_sim/types.hpp"

namespace lidar_sim {

/// One sub-ray hit of the simulated beam footprint.
struct DenseSample {
  int layer = 0;
  int azimuth_index = 0;
  int sub_ray = 0;
  double distance = 0.0;  // m
  ClassLabel cls = ClassLabel::None;
  double incidence_cos = 1.0;
  double true_epw = 0.0;  // ns

  friend bool operator==(const DenseSample&, const DenseSample&) = default;
};

/// Ideal simulator output. Samples are grouped by ray in (layer, azimuth)
/// order and sorted by (distance, sub_ray) within a ray.
struct DenseFrame {
  std::uint64_t frame_id = 0;
  std::vector<DenseSample> samples;

  friend bool operator==(const DenseFrame&, const DenseFrame&) = default;
};

struct ScanPoint {
  int layer = 0;
  int azimuth_index = 0;
  int echo = 0;
  double distance = 0.0;  // m
  double epw = 0.0;       // ns
  ClassLabel cls = ClassLabel::None;

  friend bool operator==(const ScanPoint&, const ScanPoint&) = default;
};

struct ScanFrame {
  std::uint64_t frame_id = 0;
  std::vector<ScanPoint> points;

  friend bool operator==(const ScanFrame&, const ScanFrame&) = default;
};

/// Contiguous run of samples that share one (layer, azimuth) ray.
struct RaySpan {
  int layer = 0;
  int azimuth_index = 0;
  std::span<const DenseSample> samples;
};

/// Splits a frame's sample list into per-ray spans. Assumes grouping.
std::vector<RaySpan> split_rays(const DenseFrame& frame);

/// Sorts into canonical order: (layer, azimuth, distance, sub_ray).
void sort_canonical(DenseFrame& frame);
/// Sorts into canonical order: (layer, azimuth, echo).
void sort_canonical(ScanFrame& frame);

/// Throws DataError if the grouping, ordering or value ranges are violated.
void validate(const DenseFrame& frame, const SensorSpec& spec);
/// Throws DataError on duplicate keys, non-prefix echo sets or
/// non-increasing echo distances.
void validate(const ScanFrame& frame, const SensorSpec& spec);

}  // namespace lidar_sim
