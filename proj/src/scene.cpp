#include "lidar_sim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "lidar_sim/error.hpp"

namespace lidar_sim {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kHitEpsilon = 1e-9;

struct Hit {
  double distance = std::numeric_limits<double>::infinity();
  ClassLabel cls = ClassLabel::None;
  double incidence_cos = 0.0;
  double reflectivity = 0.0;
};

Vec3 normalized(Vec3 v) { return (1.0 / std::sqrt(dot(v, v))) * v; }

// Ray/box slab test in the box frame. The ray origin is outside the box.
std::optional<Hit> intersect_box(Vec3 origin, Vec3 dir, const SceneObject& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const Vec3 rel = origin - box.center;
  const double o[3] = {c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z};
  const double d[3] = {c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z};
  const double h[3] = {box.half_extents.x, box.half_extents.y, box.half_extents.z};

  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int entry_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < -h[a] || o[a] > h[a]) return std::nullopt;
      continue;
    }
    double t0 = (-h[a] - o[a]) / d[a];
    double t1 = (h[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      entry_axis = a;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (entry_axis < 0 || t_near <= kHitEpsilon) return std::nullopt;
  return Hit{t_near, box.cls, std::min(1.0, std::abs(d[entry_axis])), box.reflectivity};
}

Hit trace(const Scene& scene, Vec3 origin, Vec3 dir) {
  Hit best;
  if (scene.has_ground && dir.z < 0.0) {
    const double t = (scene.ground_z - origin.z) / dir.z;
    if (t > kHitEpsilon) {
      best = {t, ClassLabel::None, std::min(1.0, -dir.z), scene.ground_reflectivity};
    }
  }
  for (const auto& obj : scene.objects) {
    if (auto hit = intersect_box(origin, dir, obj); hit && hit->distance < best.distance) {
      best = *hit;
    }
  }
  return best;
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

SceneConfig SceneConfig::road() {
  SceneConfig c;
  c.counts[class_code(ClassLabel::Car)] = {2, 6};
  c.counts[class_code(ClassLabel::Truck)] = {0, 2};
  c.counts[class_code(ClassLabel::Pedestrian)] = {0, 4};
  c.counts[class_code(ClassLabel::Motorbike)] = {0, 2};
  c.counts[class_code(ClassLabel::HighReflective)] = {0, 3};
  return c;
}

SceneConfig SceneConfig::empty() { return SceneConfig{}; }

void SceneConfig::validate() const {
  for (const auto& r : counts) {
    if (r.min < 0 || r.max < 0) throw ConfigError("negative object count");
    if (r.min > r.max) throw ConfigError("inverted object count range");
  }
  if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigError("inverted placement bounds");
  if (min_range < 0.0) throw ConfigError("negative min_range");
  if (!(sensor_height > 0.0)) throw ConfigError("sensor_height must be positive");
  if (reflectivity_jitter < 0.0 || size_jitter < 0.0 || size_jitter >= 1.0) {
    throw ConfigError("jitter out of range");
  }
  const double far = std::max({std::hypot(x_min, y_min), std::hypot(x_min, y_max),
                               std::hypot(x_max, y_min), std::hypot(x_max, y_max)});
  if (far <= min_range) throw ConfigError("placement bounds lie entirely within min_range");
}

double nominal_reflectivity(ClassLabel cls) {
  switch (cls) {
    case ClassLabel::None: return 0.5;
    case ClassLabel::Car: return 0.7;
    case ClassLabel::Truck: return 0.6;
    case ClassLabel::Pedestrian: return 0.5;
    case ClassLabel::Motorbike: return 0.6;
    case ClassLabel::HighReflective: return 0.8;
  }
  return 0.5;
}

Vec3 nominal_half_extents(ClassLabel cls) {
  switch (cls) {
    case ClassLabel::None: return {1.0, 1.0, 1.0};
    case ClassLabel::Car: return {2.2, 0.9, 0.75};
    case ClassLabel::Truck: return {4.5, 1.25, 1.6};
    case ClassLabel::Pedestrian: return {0.3, 0.3, 0.9};
    case ClassLabel::Motorbike: return {1.0, 0.4, 0.7};
    case ClassLabel::HighReflective: return {0.1, 0.5, 1.2};
  }
  return {1.0, 1.0, 1.0};
}

Scene build_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  Scene scene;
  scene.ground_z = config.ground_z;
  scene.sensor_z = config.ground_z + config.sensor_height;
  scene.rng_seed = seed;
  Rng rng(derive_seed({seed, 0x5ce4e}));

  struct Footprint {
    double x, y, radius;
  };
  std::vector<Footprint> placed;

  for (auto cls : kAllClasses) {
    if (cls == ClassLabel::None) continue;
    const auto range = config.counts[class_code(cls)];
    const int n = std::uniform_int_distribution<int>(range.min, range.max)(rng);
    for (int i = 0; i < n; ++i) {
      SceneObject obj;
      obj.cls = cls;
      const Vec3 nominal = nominal_half_extents(cls);
      const double j = config.size_jitter;
      obj.half_extents = {nominal.x * (1.0 + uniform(rng, -j, j)),
                          nominal.y * (1.0 + uniform(rng, -j, j)),
                          nominal.z * (1.0 + uniform(rng, -j, j))};
      const double radius = std::hypot(obj.half_extents.x, obj.half_extents.y);
      const double clearance = config.min_range + radius;

      double x = 0.0, y = 0.0;
      constexpr int kMaxTries = 200;
      for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        x = uniform(rng, config.x_min, config.x_max);
        y = uniform(rng, config.y_min, config.y_max);
        if (std::hypot(x, y) < clearance) continue;
        const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const Footprint& f) {
          return std::hypot(f.x - x, f.y - y) < f.radius + radius;
        });
        if (!overlaps) break;
      }
      // Crowded configs may end with an overlapping candidate; the sensor
      // clearance is enforced regardless.
      if (const double r = std::hypot(x, y); r < clearance) {
        const double scale = r > 0.0 ? clearance / r : 0.0;
        x = r > 0.0 ? x * scale : clearance;
        y = r > 0.0 ? y * scale : 0.0;
      }
      obj.center = {x, y, config.ground_z + obj.half_extents.z};
      obj.yaw = config.orientation == Orientation::FacingSensor
                    ? std::atan2(y, x)
                    : uniform(rng, -std::numbers::pi, std::numbers::pi);
      const double rj = config.reflectivity_jitter;
      obj.reflectivity =
          std::clamp(nominal_reflectivity(cls) + (rj > 0.0 ? uniform(rng, -rj, rj) : 0.0), 0.0, 1.0);
      placed.push_back({x, y, radius});
      scene.objects.push_back(obj);
    }
  }
  return scene;
}

double reference_epw(ClassLabel cls, double distance, double incidence_cos, double reflectivity,
                     Rng* rng, double sigma) {
  if (!(distance > 0.0)) throw DomainError("reference_epw: distance must be > 0");
  if (!(incidence_cos >= 0.0 && incidence_cos <= 1.0)) {
    throw DomainError("reference_epw: incidence_cos outside [0, 1]");
  }
  double epw = kEpwBase[class_code(cls)] * reflectivity * incidence_cos *
               std::exp(-kEpwAttenuation * distance);
  if (rng != nullptr && sigma > 0.0) epw += std::normal_distribution<double>(0.0, sigma)(*rng);
  return std::clamp(epw, 0.0, kEpwCeiling);
}

Vec3 beam_direction(double azimuth_deg, double altitude_deg) {
  const double az = azimuth_deg * kDegToRad;
  const double alt = altitude_deg * kDegToRad;
  return {std::cos(alt) * std::cos(az), std::cos(alt) * std::sin(az), std::sin(alt)};
}

DenseFrame cast_rays(const Scene& scene, const SensorSpec& spec, const BeamFootprint& footprint,
                     std::uint64_t seed, double noise_sigma) {
  spec.validate();
  if (footprint.sub_rays < 1 || footprint.half_angle_deg < 0.0) {
    throw ConfigError("invalid beam footprint");
  }
  const int k = footprint.half_angle_deg == 0.0 ? 1 : footprint.sub_rays;
  const double theta = footprint.half_angle_deg * kDegToRad;
  const Vec3 origin{0.0, 0.0, scene.sensor_z};
  Rng rng(derive_seed({seed, 0xca57}));
  Rng* noise = noise_sigma > 0.0 ? &rng : nullptr;

  DenseFrame frame;
  std::vector<DenseSample> ray;
  for (int row = 0; row < spec.rows(); ++row) {
    for (int col = 0; col < spec.cols(); ++col) {
      const Angles a = cell_to_angle(spec, row, col);
      const double az = a.azimuth * kDegToRad;
      const double alt = a.altitude * kDegToRad;
      const Vec3 axis = beam_direction(a.azimuth, a.altitude);
      const Vec3 up{-std::sin(alt) * std::cos(az), -std::sin(alt) * std::sin(az), std::cos(alt)};
      const Vec3 right{-std::sin(az), std::cos(az), 0.0};

      ray.clear();
      for (int sub = 0; sub < k; ++sub) {
        Vec3 dir = axis;
        if (sub > 0) {
          const double phi = 2.0 * std::numbers::pi * (sub - 1) / (k - 1);
          dir = normalized(std::cos(theta) * axis +
                           std::sin(theta) * (std::cos(phi) * up + std::sin(phi) * right));
        }
        const Hit hit = trace(scene, origin, dir);
        if (!(hit.distance <= spec.max_range)) continue;
        DenseSample s;
        s.layer = row;
        s.azimuth_index = col;
        s.sub_ray = sub;
        s.distance = hit.distance;
        s.cls = hit.cls;
        s.incidence_cos = hit.incidence_cos;
        s.true_epw = reference_epw(hit.cls, hit.distance, hit.incidence_cos, hit.reflectivity,
                                   noise, noise_sigma);
        ray.push_back(s);
      }
      std::sort(ray.begin(), ray.end(), [](const DenseSample& x, const DenseSample& y) {
        return x.distance < y.distance || (x.distance == y.distance && x.sub_ray < y.sub_ray);
      });
      frame.samples.insert(frame.samples.end(), ray.begin(), ray.end());
    }
  }
  return frame;
}

std::vector<Cluster> cluster_ray(std::span<const DenseSample> ray, double gap) {
  std::vector<Cluster> clusters;
  if (ray.empty()) return clusters;
  std::size_t begin = 0;
  for (std::size_t i = 1; i < ray.size(); ++i) {
    if (ray[i].distance - ray[i - 1].distance > gap) {
      clusters.push_back({begin, i});
      begin = i;
    }
  }
  clusters.push_back({begin, ray.size()});
  return clusters;
}

ClassLabel majority_class(std::span<const DenseSample> ray, Cluster cluster) {
  std::array<int, kNumClasses> votes{};
  for (std::size_t i = cluster.begin; i < cluster.end; ++i) ++votes[class_code(ray[i].cls)];
  // max_element returns the first maximum, i.e. the lowest code on ties.
  return static_cast<ClassLabel>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

ScanFrame truth_scan(const DenseFrame& frame, double gap) {
  ScanFrame scan;
  scan.frame_id = frame.frame_id;
  for (const auto& ray : split_rays(frame)) {
    const auto clusters = cluster_ray(ray.samples, gap);
    const int n = std::min<int>(static_cast<int>(clusters.size()), kMaxEchoes);
    for (int e = 0; e < n; ++e) {
      const auto& cl = clusters[e];
      double sum = 0.0;
      for (std::size_t i = cl.begin; i < cl.end; ++i) sum += ray.samples[i].true_epw;
      scan.points.push_back({ray.layer, ray.azimuth_index, e, ray.samples[cl.begin].distance,
                             sum / static_cast<double>(cl.end - cl.begin),
                             majority_class(ray.samples, cl)});
    }
  }
  return scan;
}

Dataset make_dataset(const SceneConfig& config, const SensorSpec& spec, int n_train, int n_val,
                     std::uint64_t seed, const BeamFootprint& footprint, double noise_sigma) {
  if (n_train < 1 || n_val < 1) throw ConfigError("dataset counts must be >= 1");
  Dataset ds;
  const int total = n_train + n_val;
  for (int i = 0; i < total; ++i) {
    const std::uint64_t frame_seed = derive_seed({seed, static_cast<std::uint64_t>(i)});
    const Scene scene = build_scene(config, frame_seed);
    LabeledFrame lf;
    lf.dense = cast_rays(scene, spec, footprint, derive_seed({frame_seed, 1}), noise_sigma);
    lf.dense.frame_id = static_cast<std::uint64_t>(i);
    lf.truth = truth_scan(lf.dense);
    (i < n_train ? ds.train : ds.val).push_back(std::move(lf));
  }
  return ds;
}

Vec3 scan_point_position(const SensorSpec& spec, const ScanPoint& p) {
  const Angles a = cell_to_angle(spec, p.layer, p.azimuth_index);
  return p.distance * beam_direction(a.azimuth, a.altitude);
}

}  // namespace lidar_sim
