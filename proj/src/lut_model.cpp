#include "lidar_sim/lut_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lidar_sim/binary_io.hpp"
#include "lidar_sim/error.hpp"
#include "lidar_sim/io.hpp"

namespace lidar_sim {
namespace {

constexpr std::uint32_t kLutVersion = 1;

std::vector<double> make_edges(double lo, double hi, double step) {
  std::vector<double> edges;
  const int n = static_cast<int>(std::ceil((hi - lo) / step - 1e-9));
  for (int i = 0; i < n; ++i) edges.push_back(lo + i * step);
  edges.push_back(hi);
  return edges;
}

void write_edges(std::ostream& os, const std::vector<double>& edges) {
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(edges.size()));
  for (double e : edges) binary::write<double>(os, e);
}

std::vector<double> read_edges(std::istream& is) {
  const auto n = binary::read<std::uint32_t>(is);
  if (n < 2 || n > (1u << 20)) throw FormatError("LUT: bad edge count");
  std::vector<double> edges(n);
  for (auto& e : edges) e = binary::read<double>(is);
  return edges;
}

}  // namespace

LutBins LutBins::defaults(const SensorSpec& spec, double distance_step, double yaw_step) {
  LutBins b;
  b.distance_edges = make_edges(0.0, spec.max_range, distance_step);
  b.yaw_edges = make_edges(spec.h_min, spec.h_max, yaw_step);
  b.n_layers = spec.n_layers;
  return b;
}

void LutBins::validate() const {
  for (const auto* edges : {&distance_edges, &yaw_edges}) {
    if (edges->size() < 2) throw ConfigError("LUT bins need at least two edges");
    for (std::size_t i = 1; i < edges->size(); ++i) {
      if (!((*edges)[i] > (*edges)[i - 1])) throw ConfigError("LUT edges must strictly ascend");
    }
  }
  if (per_layer && n_layers < 1) throw ConfigError("LUT n_layers must be positive");
}

int find_bin(std::span<const double> edges, double x) {
  if (edges.size() < 2 || !(x >= edges.front() && x <= edges.back())) return -1;
  const auto it = std::upper_bound(edges.begin(), edges.end(), x);
  const int bin = static_cast<int>(it - edges.begin()) - 1;
  return std::min(bin, static_cast<int>(edges.size()) - 2);
}

void BinStats::add(double x) {
  ++count;
  const double delta = x - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (x - mean);
}

void BinStats::merge(const BinStats& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  const double n_a = static_cast<double>(count);
  const double n_b = static_cast<double>(other.count);
  const double n = n_a + n_b;
  const double delta = other.mean - mean;
  mean += delta * n_b / n;
  m2 += other.m2 + delta * delta * n_a * n_b / n;
  count += other.count;
}

std::optional<double> BinStats::variance() const {
  if (count < 2) return std::nullopt;
  return m2 / static_cast<double>(count);
}

EpwLut::EpwLut(LutBins bins) : bins_(std::move(bins)) {
  bins_.validate();
  stats_.resize(static_cast<std::size_t>(bins_.class_slots()) * bins_.echo_slots() *
                bins_.layer_slots() * bins_.distance_bins() * bins_.yaw_bins());
}

std::size_t EpwLut::flat_index(int cls_slot, int echo_slot, int layer_slot, int dbin,
                               int ybin) const {
  std::size_t i = static_cast<std::size_t>(cls_slot);
  i = i * bins_.echo_slots() + echo_slot;
  i = i * bins_.layer_slots() + layer_slot;
  i = i * bins_.distance_bins() + dbin;
  return i * bins_.yaw_bins() + ybin;
}

std::size_t EpwLut::index_of(ClassLabel cls, int echo, int layer, double distance,
                             double yaw) const {
  if (echo < 0 || echo >= kMaxEchoes) throw RangeError("LUT: echo out of range");
  const int dbin = find_bin(bins_.distance_edges, distance);
  const int ybin = find_bin(bins_.yaw_edges, yaw);
  if (dbin < 0) throw RangeError("LUT: distance outside bin coverage");
  if (ybin < 0) throw RangeError("LUT: yaw outside bin coverage");
  int layer_slot = 0;
  if (bins_.per_layer) {
    if (layer < 0 || layer >= bins_.n_layers) throw RangeError("LUT: layer out of range");
    layer_slot = layer;
  }
  return flat_index(bins_.per_class ? class_code(cls) : 0, bins_.per_echo ? echo : 0, layer_slot,
                    dbin, ybin);
}

void EpwLut::add(ClassLabel cls, int echo, int layer, double distance, double yaw, double epw) {
  stats_[index_of(cls, echo, layer, distance, yaw)].add(epw);
}

void EpwLut::merge(const EpwLut& other) {
  if (!(bins_ == other.bins_)) throw DataError("LUT merge: bin layouts differ");
  for (std::size_t i = 0; i < stats_.size(); ++i) stats_[i].merge(other.stats_[i]);
}

bool EpwLut::empty() const {
  return std::all_of(stats_.begin(), stats_.end(), [](const BinStats& s) { return s.count == 0; });
}

EpwLut fit_lut(std::span<const ScanFrame> trace, const LutBins& bins, const SensorSpec& spec) {
  const bool any = std::any_of(trace.begin(), trace.end(),
                               [](const ScanFrame& f) { return !f.points.empty(); });
  if (!any) throw DataError("fit_lut: empty trace");
  EpwLut lut(bins);
  for (const auto& frame : trace) {
    for (const auto& p : frame.points) {
      const double yaw = cell_to_angle(spec, p.layer, p.azimuth_index).azimuth;
      if (find_bin(bins.distance_edges, p.distance) < 0 || find_bin(bins.yaw_edges, yaw) < 0) {
        continue;
      }
      lut.add(p.cls, p.echo, p.layer, p.distance, yaw, p.epw);
    }
  }
  return lut;
}

namespace {

std::optional<double> evaluate(const BinStats& s, QueryMode mode, Rng* rng) {
  if (s.count == 0) return std::nullopt;
  if (mode == QueryMode::Mean) return s.mean;
  if (rng == nullptr) throw DomainError("query_lut: Sample mode requires an RNG");
  const double sd = std::sqrt(s.variance().value_or(0.0));
  if (sd == 0.0) return std::max(0.0, s.mean);
  return std::max(0.0, std::normal_distribution<double>(s.mean, sd)(*rng));
}

}  // namespace

std::optional<double> query_lut(const EpwLut& lut, ClassLabel cls, int echo, double distance,
                                double yaw, QueryMode mode, Rng* rng, int layer) {
  return evaluate(lut.at(lut.index_of(cls, echo, layer, distance, yaw)), mode, rng);
}

const BinStats* lookup_with_fallback(const EpwLut& lut, ClassLabel cls, int echo, double distance,
                                     double yaw, int layer) {
  const std::size_t direct = lut.index_of(cls, echo, layer, distance, yaw);
  if (lut.at(direct).count > 0) return &lut.at(direct);
  const auto& b = lut.bins();
  const int dbin = find_bin(b.distance_edges, distance);
  const int ybin = find_bin(b.yaw_edges, yaw);
  const int cs = b.per_class ? class_code(cls) : 0;
  const int es = b.per_echo ? echo : 0;
  const int ls = b.per_layer ? layer : 0;
  for (int offset = 1; offset < b.distance_bins(); ++offset) {
    for (int candidate : {dbin - offset, dbin + offset}) {
      if (candidate < 0 || candidate >= b.distance_bins()) continue;
      const auto& s = lut.at(lut.flat_index(cs, es, ls, candidate, ybin));
      if (s.count > 0) return &s;
    }
  }
  return nullptr;
}

std::optional<double> query_lut_fallback(const EpwLut& lut, ClassLabel cls, int echo,
                                         double distance, double yaw, QueryMode mode, Rng* rng,
                                         int layer) {
  const BinStats* s = lookup_with_fallback(lut, cls, echo, distance, yaw, layer);
  if (s == nullptr) return std::nullopt;
  return evaluate(*s, mode, rng);
}

std::string lut_report(const EpwLut& lut) {
  std::ostringstream os;
  os << "class,echo,layer,distance_lo,distance_hi,yaw_lo,yaw_hi,count,mean,std\n";
  const auto& b = lut.bins();
  for (int c = 0; c < b.class_slots(); ++c)
    for (int e = 0; e < b.echo_slots(); ++e)
      for (int l = 0; l < b.layer_slots(); ++l)
        for (int d = 0; d < b.distance_bins(); ++d)
          for (int y = 0; y < b.yaw_bins(); ++y) {
            const auto& s = lut.at(lut.flat_index(c, e, l, d, y));
            if (s.count == 0) continue;
            os << (b.per_class ? std::string(class_name(static_cast<ClassLabel>(c))) : "*") << ','
               << (b.per_echo ? std::to_string(e) : "*") << ','
               << (b.per_layer ? std::to_string(l) : "*") << ','
               << format_fixed6(b.distance_edges[d]) << ',' << format_fixed6(b.distance_edges[d + 1])
               << ',' << format_fixed6(b.yaw_edges[y]) << ',' << format_fixed6(b.yaw_edges[y + 1])
               << ',' << s.count << ',' << format_fixed6(s.mean) << ',';
            if (auto v = s.variance()) os << format_fixed6(std::sqrt(*v));
            os << '\n';
          }
  return os.str();
}

void write_lut(std::ostream& os, const EpwLut& lut) {
  const auto& b = lut.bins();
  binary::write_magic(os, "LUT1");
  binary::write<std::uint32_t>(os, kLutVersion);
  write_edges(os, b.distance_edges);
  write_edges(os, b.yaw_edges);
  binary::write<std::uint8_t>(os, b.per_class);
  binary::write<std::uint8_t>(os, b.per_echo);
  binary::write<std::uint8_t>(os, b.per_layer);
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(b.n_layers));
  for (const auto& s : lut.stats()) {
    binary::write<std::uint64_t>(os, s.count);
    binary::write<double>(os, s.mean);
    binary::write<double>(os, s.m2);
  }
}

EpwLut read_lut(std::istream& is) {
  binary::expect_magic(is, "LUT1");
  binary::expect_version(is, kLutVersion);
  LutBins b;
  b.distance_edges = read_edges(is);
  b.yaw_edges = read_edges(is);
  b.per_class = binary::read<std::uint8_t>(is) != 0;
  b.per_echo = binary::read<std::uint8_t>(is) != 0;
  b.per_layer = binary::read<std::uint8_t>(is) != 0;
  b.n_layers = static_cast<int>(binary::read<std::uint32_t>(is));
  if (b.n_layers < 1 || b.n_layers > 4096) throw FormatError("LUT: bad layer count");
  try {
    b.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("LUT: ") + e.what());
  }
  EpwLut lut(b);
  for (std::size_t i = 0; i < lut.stats().size(); ++i) {
    auto& s = lut.at(i);
    s.count = binary::read<std::uint64_t>(is);
    s.mean = binary::read<double>(is);
    s.m2 = binary::read<double>(is);
  }
  binary::expect_end(is);
  return lut;
}

void save_lut(const std::string& path, const EpwLut& lut) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_lut(os, lut);
}

EpwLut load_lut(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return read_lut(is);
}

}  // namespace lidar_sim
