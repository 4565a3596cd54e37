#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lidar_sim/frames.hpp"

namespace lidar_sim {

/// One JSON object per ray group:
/// {"frame":u64,"layer":u8,"az":u16,"samples":[{"sub","d","cls","inc","epw"}]}
void write_dense_jsonl(std::ostream& os, const std::vector<DenseFrame>& frames);
/// Frames are returned in order of first appearance.
std::vector<DenseFrame> read_dense_jsonl(std::istream& is);

/// Header `frame,echo,layer,az,distance_m,epw_ns,cls`, six fractional digits.
void write_scan_csv(std::ostream& os, const std::vector<ScanFrame>& frames);
std::vector<ScanFrame> read_scan_csv(std::istream& is);

std::string format_fixed6(double v);

std::vector<DenseFrame> load_dense_jsonl(const std::string& path);
void save_dense_jsonl(const std::string& path, const std::vector<DenseFrame>& frames);
std::vector<ScanFrame> load_scan_csv(const std::string& path);
void save_scan_csv(const std::string& path, const std::vector<ScanFrame>& frames);

}  // namespace lidar_sim
