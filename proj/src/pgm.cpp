#include "lidar_sim/pgm.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "lidar_sim/binary_io.hpp"
#include "lidar_sim/error.hpp"
#include "lidar_sim/scene.hpp"

namespace lidar_sim {
namespace {

constexpr std::uint32_t kPgmVersion = 1;
// Guards reads against absurd headers before allocating.
constexpr std::uint64_t kMaxCells = 1ull << 30;

void check_echo(const SensorSpec& spec, int echo) {
  if (echo < 0 || echo >= spec.max_echoes) throw RangeError("echo index out of range");
}

void check_point(const SensorSpec& spec, const ScanPoint& p) {
  if (p.layer < 0 || p.layer >= spec.rows() || p.azimuth_index < 0 ||
      p.azimuth_index >= spec.cols()) {
    throw DataError("scan point outside sensor grid");
  }
}

}  // namespace

PolarGridMap::PolarGridMap(std::vector<ChannelKind> kinds, int rows_, int cols_)
    : channels(static_cast<int>(kinds.size())),
      rows(rows_),
      cols(cols_),
      semantics(std::move(kinds)),
      data(static_cast<std::size_t>(channels) * rows_ * cols_, 0.0) {}

int PolarGridMap::channel_of(ChannelKind kind) const {
  for (int c = 0; c < channels; ++c) {
    if (semantics[c] == kind) return c;
  }
  return -1;
}

void PolarGridMap::expect_dims(const SensorSpec& spec) const {
  if (rows != spec.rows() || cols != spec.cols()) {
    throw DimensionError("PGM is " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", sensor grid is " + std::to_string(spec.rows()) + "x" +
                         std::to_string(spec.cols()));
  }
  if (data.size() != static_cast<std::size_t>(channels) * rows * cols ||
      semantics.size() != static_cast<std::size_t>(channels)) {
    throw DimensionError("PGM payload does not match its header");
  }
}

PolarGridMap encode(const ScanFrame& frame, const SensorSpec& spec, int echo) {
  check_echo(spec, echo);
  PolarGridMap pgm({ChannelKind::Distance, ChannelKind::Class}, spec.rows(), spec.cols());
  std::vector<bool> filled(static_cast<std::size_t>(spec.rows()) * spec.cols(), false);
  for (const auto& p : frame.points) {
    if (p.echo != echo) continue;
    check_point(spec, p);
    const auto cell = static_cast<std::size_t>(p.layer) * spec.cols() + p.azimuth_index;
    if (filled[cell]) throw DataError("duplicate scan point for (layer, az, echo)");
    filled[cell] = true;
    pgm.at(0, p.layer, p.azimuth_index) = p.distance;
    pgm.at(1, p.layer, p.azimuth_index) = class_code(p.cls);
  }
  return pgm;
}

PolarGridMap encode_epw(const ScanFrame& frame, const SensorSpec& spec, int echo) {
  check_echo(spec, echo);
  PolarGridMap pgm({ChannelKind::Epw}, spec.rows(), spec.cols());
  std::vector<bool> filled(static_cast<std::size_t>(spec.rows()) * spec.cols(), false);
  for (const auto& p : frame.points) {
    if (p.echo != echo) continue;
    check_point(spec, p);
    const auto cell = static_cast<std::size_t>(p.layer) * spec.cols() + p.azimuth_index;
    if (filled[cell]) throw DataError("duplicate scan point for (layer, az, echo)");
    filled[cell] = true;
    pgm.at(0, p.layer, p.azimuth_index) = p.epw;
  }
  return pgm;
}

PolarGridMap encode_dense(const DenseFrame& frame, const SensorSpec& spec, int echo,
                          double gap) {
  check_echo(spec, echo);
  PolarGridMap pgm({ChannelKind::Distance, ChannelKind::Class}, spec.rows(), spec.cols());
  for (const auto& ray : split_rays(frame)) {
    if (ray.layer < 0 || ray.layer >= spec.rows() || ray.azimuth_index < 0 ||
        ray.azimuth_index >= spec.cols()) {
      throw DataError("dense ray outside sensor grid");
    }
    const auto clusters = cluster_ray(ray.samples, gap);
    if (static_cast<int>(clusters.size()) <= echo) continue;
    const auto& cl = clusters[echo];
    pgm.at(0, ray.layer, ray.azimuth_index) = ray.samples[cl.begin].distance;
    pgm.at(1, ray.layer, ray.azimuth_index) = class_code(majority_class(ray.samples, cl));
  }
  return pgm;
}

std::vector<ScanPoint> decode(const PolarGridMap& distance_class, const PolarGridMap& epw,
                              const SensorSpec& spec, int echo) {
  check_echo(spec, echo);
  distance_class.expect_dims(spec);
  epw.expect_dims(spec);
  const int dch = distance_class.channel_of(ChannelKind::Distance);
  const int cch = distance_class.channel_of(ChannelKind::Class);
  const int ech = epw.channel_of(ChannelKind::Epw);
  if (dch < 0 || cch < 0 || ech < 0) throw DimensionError("decode: missing channel");

  std::vector<ScanPoint> points;
  for (int r = 0; r < spec.rows(); ++r) {
    for (int c = 0; c < spec.cols(); ++c) {
      const double d = distance_class.at(dch, r, c);
      const double e = epw.at(ech, r, c);
      if (d < 0.0 || e < 0.0) throw DataError("decode: negative distance or EPW cell");
      if (d == 0.0) continue;
      const double code = distance_class.at(cch, r, c);
      if (code != std::floor(code)) throw DataError("decode: non-integer class cell");
      points.push_back({r, c, echo, d, e, class_from_code(static_cast<long long>(code))});
    }
  }
  return points;
}

void write_pgm(std::ostream& os, const PolarGridMap& pgm) {
  if (pgm.data.size() != static_cast<std::size_t>(pgm.channels) * pgm.rows * pgm.cols ||
      pgm.semantics.size() != static_cast<std::size_t>(pgm.channels)) {
    throw DimensionError("write_pgm: payload does not match dimensions");
  }
  binary::write_magic(os, "PGM1");
  binary::write<std::uint32_t>(os, kPgmVersion);
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(pgm.channels));
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(pgm.rows));
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(pgm.cols));
  for (auto kind : pgm.semantics) binary::write<std::uint8_t>(os, static_cast<std::uint8_t>(kind));
  for (double v : pgm.data) binary::write<float>(os, static_cast<float>(v));
}

PolarGridMap read_pgm(std::istream& is) {
  binary::expect_magic(is, "PGM1");
  binary::expect_version(is, kPgmVersion);
  const auto channels = binary::read<std::uint32_t>(is);
  const auto rows = binary::read<std::uint32_t>(is);
  const auto cols = binary::read<std::uint32_t>(is);
  const std::uint64_t cells = std::uint64_t{channels} * rows * cols;
  if (channels == 0 || rows == 0 || cols == 0 || channels > 255 || cells > kMaxCells ||
      rows > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
      cols > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
    throw FormatError("PGM dimensions overflow");
  }
  std::vector<ChannelKind> kinds;
  for (std::uint32_t c = 0; c < channels; ++c) {
    const auto tag = binary::read<std::uint8_t>(is);
    if (tag > 2) throw FormatError("unknown PGM channel tag");
    kinds.push_back(static_cast<ChannelKind>(tag));
  }
  PolarGridMap pgm(std::move(kinds), static_cast<int>(rows), static_cast<int>(cols));
  for (auto& v : pgm.data) v = binary::read<float>(is);
  binary::expect_end(is);
  return pgm;
}

void write_pgm(const std::string& path, const PolarGridMap& pgm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_pgm(os, pgm);
}

PolarGridMap read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return read_pgm(is);
}

}  // namespace lidar_sim
