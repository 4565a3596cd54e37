#include "lidar_sim/frames.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "lidar_sim/error.hpp"

namespace lidar_sim {

std::vector<RaySpan> split_rays(const DenseFrame& frame) {
  std::vector<RaySpan> rays;
  const auto& s = frame.samples;
  std::size_t begin = 0;
  while (begin < s.size()) {
    std::size_t end = begin + 1;
    while (end < s.size() && s[end].layer == s[begin].layer &&
           s[end].azimuth_index == s[begin].azimuth_index) {
      ++end;
    }
    rays.push_back({s[begin].layer, s[begin].azimuth_index,
                    std::span<const DenseSample>(s.data() + begin, end - begin)});
    begin = end;
  }
  return rays;
}

void sort_canonical(DenseFrame& frame) {
  std::stable_sort(frame.samples.begin(), frame.samples.end(),
                   [](const DenseSample& a, const DenseSample& b) {
                     return std::tie(a.layer, a.azimuth_index, a.distance, a.sub_ray) <
                            std::tie(b.layer, b.azimuth_index, b.distance, b.sub_ray);
                   });
}

void sort_canonical(ScanFrame& frame) {
  std::stable_sort(frame.points.begin(), frame.points.end(),
                   [](const ScanPoint& a, const ScanPoint& b) {
                     return std::tie(a.layer, a.azimuth_index, a.echo) <
                            std::tie(b.layer, b.azimuth_index, b.echo);
                   });
}

void validate(const DenseFrame& frame, const SensorSpec& spec) {
  std::set<std::pair<int, int>> seen;
  for (const auto& ray : split_rays(frame)) {
    if (!seen.emplace(ray.layer, ray.azimuth_index).second) {
      throw DataError("dense frame: samples of one ray are not contiguous");
    }
    if (ray.layer < 0 || ray.layer >= spec.rows() || ray.azimuth_index < 0 ||
        ray.azimuth_index >= spec.cols()) {
      throw DataError("dense frame: ray index outside sensor grid");
    }
    for (std::size_t i = 0; i < ray.samples.size(); ++i) {
      const auto& s = ray.samples[i];
      if (!(s.distance > 0.0 && s.distance <= spec.max_range)) {
        throw DataError("dense frame: distance outside (0, max_range]");
      }
      if (!(s.incidence_cos >= 0.0 && s.incidence_cos <= 1.0)) {
        throw DataError("dense frame: incidence_cos outside [0, 1]");
      }
      if (!(s.true_epw >= 0.0)) throw DataError("dense frame: negative EPW");
      if (i > 0) {
        const auto& p = ray.samples[i - 1];
        if (std::tie(p.distance, p.sub_ray) >= std::tie(s.distance, s.sub_ray)) {
          throw DataError("dense frame: ray samples not sorted by (distance, sub_ray)");
        }
      }
    }
  }
}

void validate(const ScanFrame& frame, const SensorSpec& spec) {
  ScanFrame sorted = frame;
  sort_canonical(sorted);
  const auto& pts = sorted.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    if (p.layer < 0 || p.layer >= spec.rows() || p.azimuth_index < 0 ||
        p.azimuth_index >= spec.cols()) {
      throw DataError("scan frame: point index outside sensor grid");
    }
    if (p.echo < 0 || p.echo >= spec.max_echoes) throw DataError("scan frame: bad echo index");
    if (!(p.distance > 0.0) || !(p.epw >= 0.0)) throw DataError("scan frame: bad distance/EPW");
    const bool same_ray = i > 0 && pts[i - 1].layer == p.layer &&
                          pts[i - 1].azimuth_index == p.azimuth_index;
    if (!same_ray) {
      if (p.echo != 0) throw DataError("scan frame: echoes of a ray are not a prefix");
      continue;
    }
    const auto& q = pts[i - 1];
    if (q.echo == p.echo) throw DataError("scan frame: duplicate (layer, az, echo)");
    if (p.echo != q.echo + 1) throw DataError("scan frame: echoes of a ray are not a prefix");
    if (!(p.distance > q.distance)) throw DataError("scan frame: echo distances not increasing");
  }
}

}  // namespace lidar_sim
