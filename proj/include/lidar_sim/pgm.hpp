#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lidar_sim/frames.hpp"
#include "lidar_sim/sensor_spec.hpp"

namespace lidar_sim {

enum class ChannelKind : std::uint8_t { Distance = 0, Class = 1, Epw = 2 };

/// channels x rows x cols grid, channel-major then row-major.
struct PolarGridMap {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<ChannelKind> semantics;
  std::vector<double> data;

  PolarGridMap() = default;
  PolarGridMap(std::vector<ChannelKind> kinds, int rows, int cols);

  std::size_t index(int ch, int r, int c) const {
    return (static_cast<std::size_t>(ch) * rows + r) * cols + c;
  }
  double& at(int ch, int r, int c) { return data[index(ch, r, c)]; }
  double at(int ch, int r, int c) const { return data[index(ch, r, c)]; }

  /// Index of the first channel with the given semantics, or -1.
  int channel_of(ChannelKind kind) const;

  /// Throws DimensionError if the shape does not match the spec grid.
  void expect_dims(const SensorSpec& spec) const;

  friend bool operator==(const PolarGridMap&, const PolarGridMap&) = default;
};

/// Two-channel (Distance, Class) map of one echo of a scan frame.
/// Throws DataError on a duplicate (layer, azimuth, echo) key.
PolarGridMap encode(const ScanFrame& frame, const SensorSpec& spec, int echo);

/// One-channel Epw map of one echo of a scan frame.
PolarGridMap encode_epw(const ScanFrame& frame, const SensorSpec& spec, int echo);

/// Network input for one echo: clusters every ray, then writes the chosen
/// cluster's minimum distance and majority class (ties to the lower code).
PolarGridMap encode_dense(const DenseFrame& frame, const SensorSpec& spec, int echo,
                          double gap = 0.5);

/// One point per nonzero-distance cell, in row-major cell order.
/// Throws DataError on negative distance or EPW cells.
std::vector<ScanPoint> decode(const PolarGridMap& distance_class, const PolarGridMap& epw,
                              const SensorSpec& spec, int echo);

void write_pgm(std::ostream& os, const PolarGridMap& pgm);
PolarGridMap read_pgm(std::istream& is);
void write_pgm(const std::string& path, const PolarGridMap& pgm);
PolarGridMap read_pgm(const std::string& path);

}  // namespace lidar_sim
