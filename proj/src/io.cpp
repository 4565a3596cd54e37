#include "lidar_sim/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "lidar_sim/error.hpp"

namespace lidar_sim {
namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
T parse_number(const std::string& field, const char* what) {
  T value{};
  const auto* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, value);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw FormatError(std::string("scan CSV: bad ") + what + " field '" + field + "'");
  }
  return value;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_dense_jsonl(std::ostream& os, const std::vector<DenseFrame>& frames) {
  for (const auto& frame : frames) {
    for (const auto& ray : split_rays(frame)) {
      ordered_json j;
      j["frame"] = frame.frame_id;
      j["layer"] = ray.layer;
      j["az"] = ray.azimuth_index;
      auto samples = ordered_json::array();
      for (const auto& s : ray.samples) {
        ordered_json js;
        js["sub"] = s.sub_ray;
        js["d"] = s.distance;
        js["cls"] = class_code(s.cls);
        js["inc"] = s.incidence_cos;
        js["epw"] = s.true_epw;
        samples.push_back(std::move(js));
      }
      j["samples"] = std::move(samples);
      os << j.dump() << '\n';
    }
  }
}

std::vector<DenseFrame> read_dense_jsonl(std::istream& is) {
  std::vector<DenseFrame> frames;
  std::map<std::uint64_t, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto frame_id = j.at("frame").get<std::uint64_t>();
      const int layer = j.at("layer").get<int>();
      const int az = j.at("az").get<int>();
      auto [it, inserted] = index.emplace(frame_id, frames.size());
      if (inserted) frames.push_back(DenseFrame{frame_id, {}});
      auto& frame = frames[it->second];
      for (const auto& js : j.at("samples")) {
        DenseSample s;
        s.layer = layer;
        s.azimuth_index = az;
        s.sub_ray = js.at("sub").get<int>();
        s.distance = js.at("d").get<double>();
        s.cls = class_from_code(js.at("cls").get<long long>());
        s.incidence_cos = js.value("inc", 1.0);
        s.true_epw = js.value("epw", 0.0);
        frame.samples.push_back(s);
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("dense JSONL line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw FormatError("dense JSONL line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return frames;
}

std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_scan_csv(std::ostream& os, const std::vector<ScanFrame>& frames) {
  os << "frame,echo,layer,az,distance_m,epw_ns,cls\n";
  for (const auto& f : frames) {
    for (const auto& p : f.points) {
      os << f.frame_id << ',' << p.echo << ',' << p.layer << ',' << p.azimuth_index << ','
         << format_fixed6(p.distance) << ',' << format_fixed6(p.epw) << ',' << class_code(p.cls)
         << '\n';
    }
  }
}

std::vector<ScanFrame> read_scan_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "frame,echo,layer,az,distance_m,epw_ns,cls") {
    throw FormatError("scan CSV: missing or wrong header");
  }
  std::vector<ScanFrame> frames;
  std::map<std::uint64_t, std::size_t> index;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) throw FormatError("scan CSV: expected 7 fields: " + line);
    const auto frame_id = parse_number<std::uint64_t>(f[0], "frame");
    ScanPoint p;
    p.echo = parse_number<int>(f[1], "echo");
    p.layer = parse_number<int>(f[2], "layer");
    p.azimuth_index = parse_number<int>(f[3], "az");
    p.distance = parse_number<double>(f[4], "distance");
    p.epw = parse_number<double>(f[5], "epw");
    const auto code = parse_number<int>(f[6], "cls");
    if (code < 0 || code >= kNumClasses) throw FormatError("scan CSV: class code out of range");
    p.cls = static_cast<ClassLabel>(code);
    auto [it, inserted] = index.emplace(frame_id, frames.size());
    if (inserted) frames.push_back(ScanFrame{frame_id, {}});
    frames[it->second].points.push_back(p);
  }
  return frames;
}

std::vector<DenseFrame> load_dense_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open: " + path);
  return read_dense_jsonl(is);
}

void save_dense_jsonl(const std::string& path, const std::vector<DenseFrame>& frames) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_dense_jsonl(os, frames);
}

std::vector<ScanFrame> load_scan_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open: " + path);
  return read_scan_csv(is);
}

void save_scan_csv(const std::string& path, const std::vector<ScanFrame>& frames) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_scan_csv(os, frames);
}

}  // namespace lidar_sim
