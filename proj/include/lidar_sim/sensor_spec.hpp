#pragma once

#include <string>
#include <utility>

namespace lidar_sim {

/// Angular geometry of the scanner. Angles in degrees, range in meters.
/// Azimuth grows counter-clockwise (towards +y); altitude grows upwards.
struct SensorSpec {
  int n_layers = 16;
  double v_min = -5.0;
  double v_max = 5.0;
  double v_res = 0.625;
  double h_min = -72.5;
  double h_max = 72.5;
  double h_res = 0.125;
  int max_echoes = 3;
  double max_range = 150.0;

  /// The 16 x 1160 production geometry.
  static SensorSpec full() { return {}; }
  /// Same vertical geometry with a 0.625 deg azimuth step (16 x 232).
  static SensorSpec desk() {
    SensorSpec s;
    s.h_res = 0.625;
    return s;
  }

  int rows() const { return n_layers; }
  /// Number of azimuth bins; only meaningful after validate().
  int cols() const;

  /// Throws ConfigError unless the layer count tiles the vertical FOV, the
  /// azimuth step tiles the horizontal FOV, and max_echoes == 3.
  void validate() const;

  friend bool operator==(const SensorSpec&, const SensorSpec&) = default;
};

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(Cell, Cell) = default;
};

struct Angles {
  double azimuth = 0.0;
  double altitude = 0.0;
};

/// Half-open binning: azimuth in [h_min, h_max), altitude in [v_min, v_max).
/// Row 0 is the topmost layer. Throws RangeError outside the FOV.
Cell angle_to_cell(const SensorSpec& spec, double azimuth, double altitude);

/// Bin-center angles of a cell. Throws RangeError for out-of-grid indices.
Angles cell_to_angle(const SensorSpec& spec, int row, int col);

std::string sensor_spec_to_json(const SensorSpec& spec);
/// Parses the JSON object written by sensor_spec_to_json and validates it.
SensorSpec sensor_spec_from_json(const std::string& text);
SensorSpec load_sensor_spec(const std::string& path);

}  // namespace lidar_sim
