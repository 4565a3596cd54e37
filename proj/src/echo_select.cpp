#include "lidar_sim/echo_select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "lidar_sim/binary_io.hpp"
#include "lidar_sim/error.hpp"

namespace lidar_sim {
namespace {

constexpr std::uint32_t kHistVersion = 1;

std::vector<double> linspace_edges(double lo, double hi, double step) {
  std::vector<double> e;
  const int n = static_cast<int>(std::ceil((hi - lo) / step - 1e-9));
  for (int i = 0; i < n; ++i) e.push_back(lo + i * step);
  e.push_back(hi);
  return e;
}

int clamped_bin(const std::vector<double>& edges, double x) {
  const auto it = std::upper_bound(edges.begin(), edges.end(), x);
  const int bin = static_cast<int>(it - edges.begin()) - 1;
  return std::clamp(bin, 0, static_cast<int>(edges.size()) - 2);
}

void write_edges(std::ostream& os, const std::vector<double>& edges) {
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(edges.size()));
  for (double e : edges) binary::write<double>(os, e);
}

std::vector<double> read_edges(std::istream& is) {
  const auto n = binary::read<std::uint32_t>(is);
  if (n < 2 || n > (1u << 20)) throw FormatError("EHST: bad edge count");
  std::vector<double> e(n);
  for (auto& x : e) x = binary::read<double>(is);
  for (std::size_t i = 1; i < e.size(); ++i) {
    if (!(e[i] > e[i - 1])) throw FormatError("EHST: edges not ascending");
  }
  return e;
}

}  // namespace

EchoOccurrenceHist::EchoOccurrenceHist(std::vector<double> yaw_edges,
                                       std::vector<double> distance_edges,
                                       std::vector<double> offset_edges)
    : yaw_edges_(std::move(yaw_edges)),
      distance_edges_(std::move(distance_edges)),
      offset_edges_(std::move(offset_edges)) {
  for (const auto* e : {&yaw_edges_, &distance_edges_, &offset_edges_}) {
    if (e->size() < 2) throw ConfigError("histogram needs at least two edges");
    for (std::size_t i = 1; i < e->size(); ++i) {
      if (!((*e)[i] > (*e)[i - 1])) throw ConfigError("histogram edges must ascend");
    }
  }
  occurrence_.assign(static_cast<std::size_t>(yaw_bins()) * kNumClasses * kCounts, 1.0 / kCounts);
  support_.assign(static_cast<std::size_t>(yaw_bins()) * kNumClasses, 0.0);
  offsets_.assign(static_cast<std::size_t>(distance_bins()) * offset_bins(), 1.0 / offset_bins());
}

EchoOccurrenceHist EchoOccurrenceHist::with_default_bins(const SensorSpec& spec) {
  return EchoOccurrenceHist(linspace_edges(spec.h_min, spec.h_max, 5.0),
                            linspace_edges(0.0, spec.max_range, 5.0),
                            linspace_edges(0.0, 2.0, 0.05));
}

int EchoOccurrenceHist::yaw_bin(double yaw) const { return clamped_bin(yaw_edges_, yaw); }
int EchoOccurrenceHist::distance_bin(double d) const { return clamped_bin(distance_edges_, d); }
int EchoOccurrenceHist::offset_bin(double o) const { return clamped_bin(offset_edges_, o); }

std::size_t EchoOccurrenceHist::cell(int yaw_bin, ClassLabel cls) const {
  if (yaw_bin < 0 || yaw_bin >= yaw_bins()) throw RangeError("yaw bin out of range");
  return static_cast<std::size_t>(yaw_bin) * kNumClasses + class_code(cls);
}

std::array<double, EchoOccurrenceHist::kCounts> EchoOccurrenceHist::occurrence(
    int yaw_bin, ClassLabel cls) const {
  std::array<double, kCounts> p{};
  const std::size_t base = cell(yaw_bin, cls) * kCounts;
  std::copy_n(occurrence_.begin() + static_cast<std::ptrdiff_t>(base), kCounts, p.begin());
  return p;
}

void EchoOccurrenceHist::set_occurrence(int yaw_bin, ClassLabel cls, std::array<double, kCounts> p,
                                        double rays) {
  const std::size_t c = cell(yaw_bin, cls);
  std::copy(p.begin(), p.end(), occurrence_.begin() + static_cast<std::ptrdiff_t>(c * kCounts));
  support_[c] = rays;
}

double EchoOccurrenceHist::support(int yaw_bin, ClassLabel cls) const {
  return support_[cell(yaw_bin, cls)];
}

double EchoOccurrenceHist::offset_prior(int distance_bin, int offset_bin) const {
  return offsets_[static_cast<std::size_t>(distance_bin) * offset_bins() + offset_bin];
}

std::span<const double> EchoOccurrenceHist::offset_distribution(int distance_bin) const {
  return {offsets_.data() + static_cast<std::size_t>(distance_bin) * offset_bins(),
          static_cast<std::size_t>(offset_bins())};
}

void EchoOccurrenceHist::set_offset_distribution(int distance_bin, std::span<const double> p) {
  if (p.size() != static_cast<std::size_t>(offset_bins())) throw DimensionError("offset bins");
  std::copy(p.begin(), p.end(),
            offsets_.begin() + static_cast<std::ptrdiff_t>(distance_bin) * offset_bins());
}

EchoOccurrenceHist fit_echo_hist(std::span<const LabeledFrame> truth, const SensorSpec& spec,
                                 double gap) {
  if (truth.empty()) throw DataError("fit_echo_hist: empty input");
  EchoOccurrenceHist hist = EchoOccurrenceHist::with_default_bins(spec);
  constexpr int K = EchoOccurrenceHist::kCounts;
  std::vector<std::array<double, K>> counts(static_cast<std::size_t>(hist.yaw_bins()) * kNumClasses);
  std::vector<std::vector<double>> offsets(hist.distance_bins(),
                                           std::vector<double>(hist.offset_bins(), 0.0));
  std::size_t rays_seen = 0;

  for (const auto& lf : truth) {
    if (lf.dense.frame_id != lf.truth.frame_id) throw DataError("fit_echo_hist: frame ids differ");
    std::map<std::pair<int, int>, std::vector<const ScanPoint*>> by_ray;
    for (const auto& p : lf.truth.points) by_ray[{p.layer, p.azimuth_index}].push_back(&p);

    for (const auto& ray : split_rays(lf.dense)) {
      const auto clusters = cluster_ray(ray.samples, gap);
      if (clusters.empty()) continue;
      ++rays_seen;
      const double yaw = cell_to_angle(spec, ray.layer, ray.azimuth_index).azimuth;
      const ClassLabel lead = majority_class(ray.samples, clusters.front());
      const auto it = by_ray.find({ray.layer, ray.azimuth_index});
      const int k = it == by_ray.end() ? 0 : std::min<int>(static_cast<int>(it->second.size()), kMaxEchoes);
      counts[static_cast<std::size_t>(hist.yaw_bin(yaw)) * kNumClasses + class_code(lead)][k] += 1.0;
      if (it == by_ray.end()) continue;
      for (const ScanPoint* p : it->second) {
        if (p->echo < 0 || p->echo >= static_cast<int>(clusters.size())) continue;
        const double dmin = ray.samples[clusters[p->echo].begin].distance;
        const double offset = std::max(0.0, p->distance - dmin);
        offsets[hist.distance_bin(dmin)][hist.offset_bin(offset)] += 1.0;
      }
    }
  }
  if (rays_seen == 0) throw DataError("fit_echo_hist: no dense rays");

  for (int y = 0; y < hist.yaw_bins(); ++y) {
    for (auto cls : kAllClasses) {
      const auto& c = counts[static_cast<std::size_t>(y) * kNumClasses + class_code(cls)];
      double total = 0.0;
      for (double v : c) total += v;
      std::array<double, K> p;
      for (int k = 0; k < K; ++k) p[k] = total > 0.0 ? c[k] / total : 1.0 / K;
      hist.set_occurrence(y, cls, p, total);
    }
  }
  for (int d = 0; d < hist.distance_bins(); ++d) {
    double total = 0.0;
    for (double v : offsets[d]) total += v + 1.0;
    std::vector<double> p(hist.offset_bins());
    for (int o = 0; o < hist.offset_bins(); ++o) p[o] = (offsets[d][o] + 1.0) / total;
    hist.set_offset_distribution(d, p);
  }
  return hist;
}

void SelectionConfig::validate() const {
  if (!(gap > 0.0)) throw ConfigError("cluster gap must be > 0");
  if (!(min_epw_sigma > 0.0)) throw ConfigError("min_epw_sigma must be > 0");
}

Rng ray_rng(std::uint64_t seed, std::uint64_t frame_id, int layer, int azimuth_index) {
  return Rng(derive_seed({seed, frame_id, static_cast<std::uint64_t>(layer),
                          static_cast<std::uint64_t>(azimuth_index)}));
}

std::vector<ScanPoint> select_echoes(const PredictedRay& ray, const EchoOccurrenceHist& hist,
                                     const EpwLut* lut, const SelectionConfig& config, Rng* rng) {
  config.validate();
  if (ray.samples.size() != ray.predicted_epw.size()) {
    throw DimensionError("select_echoes: one predicted EPW per sample required");
  }
  std::vector<ScanPoint> out;
  const auto clusters = cluster_ray(ray.samples, config.gap);
  if (clusters.empty()) return out;
  if (config.mode == SelectionMode::Sample && rng == nullptr) {
    throw DomainError("select_echoes: Sample mode requires an RNG");
  }

  constexpr int K = EchoOccurrenceHist::kCounts;
  const int cap = std::min<int>(static_cast<int>(clusters.size()), kMaxEchoes);
  const int ybin = hist.yaw_bin(ray.yaw);
  const ClassLabel lead = majority_class(ray.samples, clusters.front());
  std::array<double, K> p = hist.occurrence(ybin, lead);
  if (hist.support(ybin, lead) == 0.0) {
    for (int k = 0; k < K; ++k) p[k] = k <= cap ? 1.0 / (cap + 1) : 0.0;
  }

  int k = 0;
  if (config.mode == SelectionMode::Sample) {
    std::discrete_distribution<int> dist(p.begin(), p.end());
    k = dist(*rng);
  } else {
    for (int j = 1; j < K; ++j) {
      if (p[j] >= p[k]) k = j;  // ties go to more echoes
    }
  }
  k = std::min(k, cap);

  std::vector<double> log_score;
  for (int e = 0; e < k; ++e) {
    const Cluster& cl = clusters[e];
    const double dmin = ray.samples[cl.begin].distance;
    const int dbin = hist.distance_bin(dmin);
    log_score.assign(cl.end - cl.begin, 0.0);
    for (std::size_t i = cl.begin; i < cl.end; ++i) {
      const auto& s = ray.samples[i];
      double ls = std::log(hist.offset_prior(dbin, hist.offset_bin(s.distance - dmin)));
      if (lut != nullptr) {
        const BinStats* st = nullptr;
        try {
          st = lookup_with_fallback(*lut, s.cls, e, s.distance, ray.yaw, ray.layer);
        } catch (const RangeError&) {
          st = nullptr;
        }
        if (st != nullptr) {
          const double sd = std::max(config.min_epw_sigma, std::sqrt(st->variance().value_or(0.0)));
          const double z = (ray.predicted_epw[i] - st->mean) / sd;
          ls += -0.5 * z * z - std::log(sd);
        }
      }
      log_score[i - cl.begin] = ls;
    }
    std::size_t pick = 0;
    if (config.mode == SelectionMode::Sample) {
      const double mx = *std::max_element(log_score.begin(), log_score.end());
      std::vector<double> w(log_score.size());
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp(log_score[j] - mx);
      std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
      pick = dist(*rng);
    } else {
      pick = static_cast<std::size_t>(std::max_element(log_score.begin(), log_score.end()) -
                                      log_score.begin());
    }
    const std::size_t idx = cl.begin + pick;
    out.push_back({ray.layer, ray.azimuth_index, e, ray.samples[idx].distance,
                   ray.predicted_epw[idx], majority_class(ray.samples, cl)});
  }
  return out;
}

std::vector<double> predict_sample_epw(const SensorModel& model, const DenseFrame& frame,
                                       double gap) {
  std::vector<double> epw(frame.samples.size(), 0.0);
  if (frame.samples.empty()) return epw;
  std::map<std::tuple<int, int, int>, double> cell_epw;
  if (model.backend == Backend::Net) {
    const ScanFrame pf = predict_frame(model.nets, frame, model.spec, gap);
    for (const auto& p : pf.points) cell_epw[{p.layer, p.azimuth_index, p.echo}] = p.epw;
  }
  std::size_t offset = 0;
  for (const auto& ray : split_rays(frame)) {
    const double yaw = cell_to_angle(model.spec, ray.layer, ray.azimuth_index).azimuth;
    const auto clusters = cluster_ray(ray.samples, gap);
    for (int e = 0; e < std::min<int>(static_cast<int>(clusters.size()), kMaxEchoes); ++e) {
      for (std::size_t i = clusters[e].begin; i < clusters[e].end; ++i) {
        const auto& s = ray.samples[i];
        double v = 0.0;
        if (model.backend == Backend::Net) {
          const auto it = cell_epw.find({ray.layer, ray.azimuth_index, e});
          v = it == cell_epw.end() ? 0.0 : it->second;
        } else {
          v = query_lut_fallback(model.lut, s.cls, e, s.distance, yaw, QueryMode::Mean, nullptr,
                                 ray.layer)
                  .value_or(0.0);
        }
        epw[offset + i] = v;
      }
    }
    offset += ray.samples.size();
  }
  return epw;
}

ScanFrame apply_model(const DenseFrame& frame, const SensorModel& model,
                      const SelectionConfig& config) {
  config.validate();
  ScanFrame out;
  out.frame_id = frame.frame_id;
  if (frame.samples.empty()) return out;
  if (model.backend == Backend::Net && model.nets.empty()) {
    throw ConfigError("apply_model: net backend without networks");
  }
  const std::vector<double> epw = predict_sample_epw(model, frame, config.gap);
  const EpwLut* lut = model.lut.stats().empty() ? nullptr : &model.lut;
  std::size_t offset = 0;
  for (const auto& ray : split_rays(frame)) {
    PredictedRay pr;
    pr.layer = ray.layer;
    pr.azimuth_index = ray.azimuth_index;
    pr.yaw = cell_to_angle(model.spec, ray.layer, ray.azimuth_index).azimuth;
    pr.samples = ray.samples;
    pr.predicted_epw = std::span<const double>(epw.data() + offset, ray.samples.size());
    offset += ray.samples.size();
    std::vector<ScanPoint> pts;
    if (config.mode == SelectionMode::Sample) {
      Rng rng = ray_rng(config.seed, frame.frame_id, ray.layer, ray.azimuth_index);
      pts = select_echoes(pr, model.hist, lut, config, &rng);
    } else {
      pts = select_echoes(pr, model.hist, lut, config);
    }
    out.points.insert(out.points.end(), pts.begin(), pts.end());
  }
  return out;
}

void write_echo_hist(std::ostream& os, const EchoOccurrenceHist& hist) {
  binary::write_magic(os, "EHST");
  binary::write<std::uint32_t>(os, kHistVersion);
  write_edges(os, hist.yaw_edges());
  write_edges(os, hist.distance_edges());
  write_edges(os, hist.offset_edges());
  for (int y = 0; y < hist.yaw_bins(); ++y)
    for (auto cls : kAllClasses) {
      for (double p : hist.occurrence(y, cls)) binary::write<double>(os, p);
      binary::write<double>(os, hist.support(y, cls));
    }
  for (int d = 0; d < hist.distance_bins(); ++d)
    for (double p : hist.offset_distribution(d)) binary::write<double>(os, p);
}

EchoOccurrenceHist read_echo_hist(std::istream& is) {
  binary::expect_magic(is, "EHST");
  binary::expect_version(is, kHistVersion);
  auto yaw = read_edges(is);
  auto dist = read_edges(is);
  auto off = read_edges(is);
  EchoOccurrenceHist hist(std::move(yaw), std::move(dist), std::move(off));
  for (int y = 0; y < hist.yaw_bins(); ++y)
    for (auto cls : kAllClasses) {
      std::array<double, EchoOccurrenceHist::kCounts> p;
      for (auto& v : p) v = binary::read<double>(is);
      const double support = binary::read<double>(is);
      hist.set_occurrence(y, cls, p, support);
    }
  std::vector<double> p(hist.offset_bins());
  for (int d = 0; d < hist.distance_bins(); ++d) {
    for (auto& v : p) v = binary::read<double>(is);
    hist.set_offset_distribution(d, p);
  }
  binary::expect_end(is);
  return hist;
}

void save_echo_hist(const std::string& path, const EchoOccurrenceHist& hist) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_echo_hist(os, hist);
}

EchoOccurrenceHist load_echo_hist(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return read_echo_hist(is);
}

}  // namespace lidar_sim
