#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lidar_sim/conv_net.hpp"
#include "lidar_sim/echo_select.hpp"

namespace lidar_sim {

inline constexpr const char* kSpecFile = "spec.json";
inline constexpr const char* kLutFile = "epw.lut";
inline constexpr const char* kHistFile = "echo.ehst";

/// "<variant>.e<echo>.epwm"
std::string checkpoint_name(Variant v, int echo);

/// Spec resolution: explicit path, else <dir>/spec.json, else the default
/// full-resolution spec.
SensorSpec resolve_spec(const std::string& explicit_path, const std::string& dir);

/// Loads LUT, echo histogram and, for the net backend, the per-echo
/// checkpoints. Without a variant the first one present in kAllVariants
/// order is used.
SensorModel load_sensor_model(const std::string& model_dir, const SensorSpec& spec, Backend backend,
                              std::optional<Variant> variant);

/// Frames are processed in parallel (LIDAR_SIM_THREADS, default hardware
/// concurrency); output order and content do not depend on the thread count.
std::vector<ScanFrame> apply_model_all(const std::vector<DenseFrame>& frames, const SensorModel& model,
                                       const SelectionConfig& config);

/// Exit codes: 0 ok, 1 usage, 2 data or format, 3 runtime.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace lidar_sim
