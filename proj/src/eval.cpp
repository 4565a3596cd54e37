#include "lidar_sim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <tuple>

#include "lidar_sim/error.hpp"
#include "lidar_sim/io.hpp"
#include "lidar_sim/scene.hpp"

namespace lidar_sim {
namespace {

using ordered_json = nlohmann::ordered_json;
using Key = std::tuple<std::uint64_t, int, int, int>;

std::vector<double> edges_range(double lo, double hi, double step) {
  std::vector<double> e;
  const int n = static_cast<int>(std::lround((hi - lo) / step));
  for (int i = 0; i <= n; ++i) e.push_back(lo + i * step);
  return e;
}

std::map<Key, const ScanPoint*> index_points(std::span<const ScanFrame> trace) {
  std::map<Key, const ScanPoint*> m;
  for (const auto& f : trace) {
    for (const auto& p : f.points) {
      if (!m.emplace(Key{f.frame_id, p.layer, p.azimuth_index, p.echo}, &p).second) {
        throw DataError("duplicate scan point key in trace");
      }
    }
  }
  return m;
}

template <typename Pred>
DistributionComparison compare_filtered(std::span<const ScanFrame> a, std::span<const ScanFrame> b,
                                        Pred keep) {
  DistributionComparison d;
  for (const auto& f : a)
    for (const auto& p : f.points)
      if (p.epw > 0.0 && keep(p)) d.reference.add(p.epw);
  for (const auto& f : b)
    for (const auto& p : f.points)
      if (p.epw > 0.0 && keep(p)) d.predicted.add(p.epw);
  if (d.reference.total > 0 && d.predicted.total > 0) {
    d.wasserstein = wasserstein1(d.reference, d.predicted);
    d.intersection = histogram_intersection(d.reference, d.predicted);
  }
  return d;
}

ordered_json optional_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json distribution_json(const DistributionComparison& d) {
  ordered_json j;
  j["empty"] = d.empty();
  j["wasserstein_ns"] = optional_number(d.wasserstein);
  j["intersection"] = optional_number(d.intersection);
  j["reference_count"] = d.reference.total;
  j["predicted_count"] = d.predicted.total;
  return j;
}

Vec3 parse_vec3(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

OrientedBox parse_box(const nlohmann::json& j) {
  OrientedBox b;
  b.center = parse_vec3(j.at("center"));
  b.yaw = j.value("yaw", 0.0);
  b.half_extents = parse_vec3(j.at("half_extents"));
  b.validate();
  return b;
}

}  // namespace

Histogram1D::Histogram1D(std::vector<double> e) : edges(std::move(e)) {
  if (!edges.empty()) {
    if (edges.size() < 2) throw ConfigError("histogram needs at least two edges");
    for (std::size_t i = 1; i < edges.size(); ++i) {
      if (!(edges[i] > edges[i - 1])) throw ConfigError("histogram edges must ascend");
    }
    counts.assign(edges.size() - 1, 0);
  }
}

void Histogram1D::add(double x) {
  const auto it = std::upper_bound(edges.begin(), edges.end(), x);
  const int bin = std::clamp(static_cast<int>(it - edges.begin()) - 1, 0, bins() - 1);
  ++counts[bin];
  ++total;
}

std::vector<double> Histogram1D::masses() const {
  std::vector<double> m(counts.size(), 0.0);
  if (total == 0) return m;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    m[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return m;
}

std::vector<double> default_epw_edges() { return edges_range(0.0, 50.0, 0.5); }
std::vector<double> default_error_edges() { return edges_range(-25.0, 25.0, 0.5); }

double wasserstein1(const Histogram1D& a, const Histogram1D& b) {
  if (a.edges != b.edges) throw DimensionError("wasserstein1: histogram edges differ");
  if (a.total == 0 || b.total == 0) throw DataError("wasserstein1: empty histogram");
  const auto pa = a.masses();
  const auto pb = b.masses();
  double cdf_a = 0.0, cdf_b = 0.0, w = 0.0;
  for (int i = 0; i + 1 < a.bins(); ++i) {
    cdf_a += pa[i];
    cdf_b += pb[i];
    w += std::abs(cdf_a - cdf_b) * (a.center(i + 1) - a.center(i));
  }
  return w;
}

double histogram_intersection(const Histogram1D& a, const Histogram1D& b) {
  if (a.edges != b.edges) throw DimensionError("histogram_intersection: edges differ");
  const auto pa = a.masses();
  const auto pb = b.masses();
  // sum(min) == 1 - sum|a - b| / 2 for normalised masses; this form is exact
  // on identical histograms.
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) s += std::abs(pa[i] - pb[i]);
  return std::clamp(1.0 - 0.5 * s, 0.0, 1.0);
}

ErrorStats epw_error_stats(std::span<const ScanFrame> reference, std::span<const ScanFrame> predicted) {
  const auto ref = index_points(reference);
  const auto pred = index_points(predicted);
  ErrorStats s;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& [key, rp] : ref) {
    const auto it = pred.find(key);
    if (it == pred.end()) {
      ++s.unmatched_reference;
      continue;
    }
    const double e = it->second->epw - rp->epw;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    s.error_histogram.add(e);
    ++s.matched;
  }
  if (s.matched == 0) throw DataError("epw_error_stats: traces share no point keys");
  s.unmatched_predicted = pred.size() - s.matched;
  s.mean_abs_error = abs_sum / static_cast<double>(s.matched);
  s.mse = sq_sum / static_cast<double>(s.matched);
  return s;
}

DistributionComparison nonzero_epw_distributions(std::span<const ScanFrame> a,
                                                 std::span<const ScanFrame> b) {
  return compare_filtered(a, b, [](const ScanPoint&) { return true; });
}

std::vector<ClassKpi> class_kpi(std::span<const ScanFrame> a, std::span<const ScanFrame> b) {
  std::array<bool, kNumClasses> present{};
  for (const auto* trace : {&a, &b})
    for (const auto& f : *trace)
      for (const auto& p : f.points) present[class_code(p.cls)] = true;

  const auto ia = index_points(a);
  const auto ib = index_points(b);
  std::vector<ClassKpi> rows;
  for (auto cls : kAllClasses) {
    if (!present[class_code(cls)]) continue;
    ClassKpi row;
    row.cls = cls;
    double sq = 0.0;
    for (const auto& [key, pa] : ia) {
      if (pa->cls != cls) continue;
      const auto it = ib.find(key);
      if (it == ib.end()) continue;
      const double e = it->second->epw - pa->epw;
      sq += e * e;
      ++row.matched;
    }
    if (row.matched > 0) row.mse = sq / static_cast<double>(row.matched);
    row.distribution = compare_filtered(a, b, [cls](const ScanPoint& p) { return p.cls == cls; });
    rows.push_back(std::move(row));
  }
  return rows;
}

void OrientedBox::validate() const {
  if (!(half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0)) {
    throw ConfigError("oriented box half extents must be positive");
  }
}

bool contains(const OrientedBox& box, Vec3 p) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Vec3 r = p - box.center;
  const double lx = c * r.x + s * r.y;
  const double ly = -s * r.x + c * r.y;
  return std::abs(lx) <= box.half_extents.x && std::abs(ly) <= box.half_extents.y &&
         std::abs(r.z) <= box.half_extents.z;
}

std::vector<BoxKpi> box_kpi(std::span<const ScanFrame> a, std::span<const ScanFrame> b,
                            std::span<const BoxPair> boxes, const SensorSpec& spec) {
  std::vector<BoxKpi> rows;
  for (const auto& pair : boxes) {
    pair.reference.validate();
    pair.predicted.validate();
    BoxKpi row;
    auto in_box = [&spec](const OrientedBox& box) {
      return [&spec, &box](const ScanPoint& p) { return contains(box, scan_point_position(spec, p)); };
    };
    const auto ka = in_box(pair.reference);
    const auto kb = in_box(pair.predicted);
    for (const auto& f : a)
      for (const auto& p : f.points)
        if (ka(p)) {
          ++row.reference_points;
          if (p.epw > 0.0) row.distribution.reference.add(p.epw);
        }
    for (const auto& f : b)
      for (const auto& p : f.points)
        if (kb(p)) {
          ++row.predicted_points;
          if (p.epw > 0.0) row.distribution.predicted.add(p.epw);
        }
    const auto& d = row.distribution;
    if (d.reference.total > 0 && d.predicted.total > 0) {
      row.distribution.wasserstein = wasserstein1(d.reference, d.predicted);
      row.distribution.intersection = histogram_intersection(d.reference, d.predicted);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

KpiReport full_report(std::span<const ScanFrame> reference, std::span<const ScanFrame> predicted,
                      std::span<const BoxPair> boxes, const SensorSpec& spec) {
  KpiReport r;
  r.error = epw_error_stats(reference, predicted);
  r.overall = nonzero_epw_distributions(reference, predicted);
  r.classes = class_kpi(reference, predicted);
  r.boxes = box_kpi(reference, predicted, boxes, spec);
  return r;
}

std::string report_to_json(const KpiReport& r) {
  ordered_json j;
  ordered_json err;
  err["matched"] = r.error.matched;
  err["unmatched_reference"] = r.error.unmatched_reference;
  err["unmatched_predicted"] = r.error.unmatched_predicted;
  err["mean_abs_error_ns"] = r.error.mean_abs_error;
  err["mse_ns2"] = r.error.mse;
  j["error_stats"] = std::move(err);

  ordered_json hist;
  hist["edges"] = r.error.error_histogram.edges;
  hist["counts"] = r.error.error_histogram.counts;
  j["error_histogram"] = std::move(hist);

  j["overall_distribution"] = distribution_json(r.overall);

  auto classes = ordered_json::array();
  for (const auto& c : r.classes) {
    ordered_json row;
    row["class"] = std::string(class_name(c.cls));
    row["matched"] = c.matched;
    row["mse_ns2"] = optional_number(c.mse);
    row["distribution"] = distribution_json(c.distribution);
    classes.push_back(std::move(row));
  }
  j["class_to_class"] = std::move(classes);

  auto boxes = ordered_json::array();
  for (std::size_t i = 0; i < r.boxes.size(); ++i) {
    ordered_json row;
    row["pair"] = i;
    row["reference_points"] = r.boxes[i].reference_points;
    row["predicted_points"] = r.boxes[i].predicted_points;
    row["distribution"] = distribution_json(r.boxes[i].distribution);
    boxes.push_back(std::move(row));
  }
  j["box_to_box"] = std::move(boxes);
  return j.dump(2) + "\n";
}

std::string report_to_csv(const KpiReport& r) {
  std::ostringstream os;
  os << "family,key,metric,value\n";
  auto num = [](const std::optional<double>& v) { return v ? format_fixed6(*v) : std::string(); };
  os << "error_stats,all,matched," << r.error.matched << '\n';
  os << "error_stats,all,mean_abs_error_ns," << format_fixed6(r.error.mean_abs_error) << '\n';
  os << "error_stats,all,mse_ns2," << format_fixed6(r.error.mse) << '\n';
  const auto& h = r.error.error_histogram;
  for (int i = 0; i < h.bins(); ++i) {
    os << "error_histogram," << format_fixed6(h.center(i)) << ",count," << h.counts[i] << '\n';
  }
  os << "overall_distribution,all,wasserstein_ns," << num(r.overall.wasserstein) << '\n';
  os << "overall_distribution,all,intersection," << num(r.overall.intersection) << '\n';
  for (const auto& c : r.classes) {
    const std::string name(class_name(c.cls));
    os << "class_to_class," << name << ",mse_ns2," << num(c.mse) << '\n';
    os << "class_to_class," << name << ",wasserstein_ns," << num(c.distribution.wasserstein) << '\n';
    os << "class_to_class," << name << ",intersection," << num(c.distribution.intersection) << '\n';
  }
  for (std::size_t i = 0; i < r.boxes.size(); ++i) {
    os << "box_to_box," << i << ",wasserstein_ns," << num(r.boxes[i].distribution.wasserstein) << '\n';
    os << "box_to_box," << i << ",intersection," << num(r.boxes[i].distribution.intersection) << '\n';
  }
  return os.str();
}

std::string histogram_to_gnuplot(const Histogram1D& h) {
  std::ostringstream os;
  for (int i = 0; i < h.bins(); ++i) os << format_fixed6(h.center(i)) << ' ' << h.counts[i] << '\n';
  return os.str();
}

std::vector<BoxPair> parse_box_pairs(const std::string& json_text) {
  std::vector<BoxPair> pairs;
  try {
    const auto j = nlohmann::json::parse(json_text);
    for (const auto& item : j) {
      pairs.push_back({parse_box(item.at("reference")), parse_box(item.at("predicted"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("boxes JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("boxes JSON: ") + e.what());
  }
  return pairs;
}

}  // namespace lidar_sim
