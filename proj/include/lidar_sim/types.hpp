#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "lidar_sim/error.hpp"

namespace lidar_sim {

/// Annotated object class. Integer codes are stable and used on disk.
enum class ClassLabel : std::uint8_t {
  None = 0,
  Car = 1,
  Truck = 2,
  Pedestrian = 3,
  Motorbike = 4,
  HighReflective = 5,
};

inline constexpr int kNumClasses = 6;
inline constexpr int kMaxEchoes = 3;

inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::None,       ClassLabel::Car,       ClassLabel::Truck,
    ClassLabel::Pedestrian, ClassLabel::Motorbike, ClassLabel::HighReflective};

constexpr int class_code(ClassLabel c) { return static_cast<int>(c); }

/// Throws DataError for codes outside 0..5.
constexpr ClassLabel class_from_code(long long code) {
  if (code < 0 || code >= kNumClasses) {
    throw DataError("class code out of range: " + std::to_string(code));
  }
  return static_cast<ClassLabel>(code);
}

constexpr std::string_view class_name(ClassLabel c) {
  switch (c) {
    case ClassLabel::None: return "None";
    case ClassLabel::Car: return "Car";
    case ClassLabel::Truck: return "Truck";
    case ClassLabel::Pedestrian: return "Pedestrian";
    case ClassLabel::Motorbike: return "Motorbike";
    case ClassLabel::HighReflective: return "HighReflective";
  }
  return "?";
}

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

}  // namespace lidar_sim
