#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "lidar_sim/frames.hpp"
#include "lidar_sim/pgm.hpp"
#include "lidar_sim/rng.hpp"
#include "lidar_sim/sensor_spec.hpp"

namespace lidar_sim::test {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lidar_sim_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Random valid scan frame: each chosen ray gets a prefix of 1..3 echoes
/// with strictly increasing distances.
inline ScanFrame random_scan_frame(const SensorSpec& spec, Rng& rng, std::uint64_t id, int rays) {
  std::uniform_int_distribution<int> row(0, spec.rows() - 1), col(0, spec.cols() - 1), k(1, 3), cls(0, 5);
  std::uniform_real_distribution<double> d(0.5, 40.0), step(0.6, 30.0), epw(0.0, 50.0);
  ScanFrame f;
  f.frame_id = id;
  std::vector<bool> used(static_cast<std::size_t>(spec.rows()) * spec.cols(), false);
  for (int i = 0; i < rays; ++i) {
    const int r = row(rng), c = col(rng);
    if (used[static_cast<std::size_t>(r) * spec.cols() + c]) continue;
    used[static_cast<std::size_t>(r) * spec.cols() + c] = true;
    double dist = d(rng);
    const int n = k(rng);
    for (int e = 0; e < n; ++e) {
      f.points.push_back({r, c, e, dist, epw(rng), class_from_code(cls(rng))});
      dist += step(rng);
    }
  }
  sort_canonical(f);
  return f;
}

/// Decodes every echo layer of the frame's own encoding.
inline ScanFrame decode_all(const ScanFrame& f, const SensorSpec& spec) {
  ScanFrame out{f.frame_id, {}};
  for (int e = 0; e < kMaxEchoes; ++e) {
    const auto pts = decode(encode(f, spec, e), encode_epw(f, spec, e), spec, e);
    out.points.insert(out.points.end(), pts.begin(), pts.end());
  }
  sort_canonical(out);
  return out;
}

}  // namespace lidar_sim::test
