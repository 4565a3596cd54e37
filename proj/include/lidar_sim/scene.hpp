#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lidar_sim/frames.hpp"
#include "lidar_sim/rng.hpp"
#include "lidar_sim/sensor_spec.hpp"
#include "lidar_sim/types.hpp"

namespace lidar_sim {

// Reference EPW oracle constants (ns, 1/m).
inline constexpr std::array<double, kNumClasses> kEpwBase = {8.0, 12.0, 16.0, 6.0, 7.0, 25.0};
inline constexpr double kEpwAttenuation = 0.005;
inline constexpr double kEpwNoiseSigma = 0.5;
inline constexpr double kEpwCeiling = 50.0;
inline constexpr double kClusterGap = 0.5;

/// Yaw-rotated box. half_extents are along the box's local axes.
struct SceneObject {
  ClassLabel cls = ClassLabel::Car;
  Vec3 center;
  double yaw = 0.0;  // rad
  Vec3 half_extents{1.0, 1.0, 1.0};
  double reflectivity = 0.5;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

/// The sensor sits at (0, 0, sensor_z); the ground plane is z = ground_z.
struct Scene {
  std::vector<SceneObject> objects;
  double ground_z = 0.0;
  bool has_ground = true;
  double ground_reflectivity = 0.5;
  double sensor_z = 1.8;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct CountRange {
  int min = 0;
  int max = 0;
};

enum class Orientation { Random, FacingSensor };

struct SceneConfig {
  /// Indexed by class code; the None entry is ignored.
  std::array<CountRange, kNumClasses> counts{};
  double x_min = 5.0;
  double x_max = 60.0;
  double y_min = -25.0;
  double y_max = 25.0;
  /// Objects keep at least this horizontal distance from the sensor.
  double min_range = 4.0;
  double ground_z = 0.0;
  double sensor_height = 1.8;
  Orientation orientation = Orientation::Random;
  /// Uniform jitter around the per-class nominal reflectivity.
  double reflectivity_jitter = 0.05;
  /// Relative jitter on per-class nominal box sizes.
  double size_jitter = 0.1;

  /// A mixed road scene (cars, trucks, pedestrians, bikes, signs).
  static SceneConfig road();
  /// No objects at all.
  static SceneConfig empty();

  void validate() const;
};

double nominal_reflectivity(ClassLabel cls);
Vec3 nominal_half_extents(ClassLabel cls);

/// Deterministic in (config, seed). Throws ConfigError on invalid config.
Scene build_scene(const SceneConfig& config, std::uint64_t seed);

/// K sub-rays: one along the beam axis and K-1 evenly spaced on a cone of
/// the given half-angle. A zero half-angle collapses to the central ray.
struct BeamFootprint {
  double half_angle_deg = 0.2;
  int sub_rays = 5;
};

/// E_base(class) * reflectivity * incidence_cos * exp(-alpha d) (+ noise),
/// clipped to [0, 50] ns. Noise is drawn only when rng is non-null.
/// Throws DomainError on distance <= 0 or incidence_cos outside [0, 1].
double reference_epw(ClassLabel cls, double distance, double incidence_cos, double reflectivity,
                     Rng* rng = nullptr, double sigma = kEpwNoiseSigma);

/// Casts every (layer, azimuth) beam of the spec against the scene.
/// noise_sigma <= 0 disables EPW noise.
DenseFrame cast_rays(const Scene& scene, const SensorSpec& spec, const BeamFootprint& footprint,
                     std::uint64_t seed, double noise_sigma = kEpwNoiseSigma);

/// Unit direction of a (azimuth, altitude) pair in degrees, sensor frame.
Vec3 beam_direction(double azimuth_deg, double altitude_deg);

/// Half-open range of sample indices forming one distance cluster.
struct Cluster {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Splits a sorted ray profile wherever consecutive distances differ by
/// more than gap.
std::vector<Cluster> cluster_ray(std::span<const DenseSample> ray, double gap = kClusterGap);

/// Most frequent class in the cluster; ties go to the lower class code.
ClassLabel majority_class(std::span<const DenseSample> ray, Cluster cluster);

/// Reference echo rule: the nearest up-to-3 clusters of each ray become
/// echoes with distance = cluster minimum and EPW = mean true_epw.
ScanFrame truth_scan(const DenseFrame& frame, double gap = kClusterGap);

struct LabeledFrame {
  DenseFrame dense;
  ScanFrame truth;
};

struct Dataset {
  std::vector<LabeledFrame> train;
  std::vector<LabeledFrame> val;
};

/// Generates n_train + n_val independent frames. Frame ids are 0..n-1 with
/// the validation frames following the training frames.
Dataset make_dataset(const SceneConfig& config, const SensorSpec& spec, int n_train, int n_val,
                     std::uint64_t seed, const BeamFootprint& footprint = {},
                     double noise_sigma = kEpwNoiseSigma);

/// Cartesian position of a return in the sensor frame.
Vec3 scan_point_position(const SensorSpec& spec, const ScanPoint& p);

}  // namespace lidar_sim
