#include "lidar_sim/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <system_error>
#include <thread>

#include "lidar_sim/error.hpp"
#include "lidar_sim/eval.hpp"
#include "lidar_sim/io.hpp"
#include "lidar_sim/lut_model.hpp"
#include "lidar_sim/rng.hpp"
#include "lidar_sim/service.hpp"

namespace lidar_sim {
namespace fs = std::filesystem;

namespace {

std::atomic<WireServer*> g_server{nullptr};

extern "C" void on_stop_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  os << text;
  if (!os) throw FormatError("write failed: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory " + dir + ": " + ec.message());
}

unsigned thread_count() {
  if (const char* env = std::getenv("LIDAR_SIM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<LabeledFrame> load_labeled(const std::string& dir, const std::string& split) {
  auto dense = load_dense_jsonl(path_in(dir, split + ".dense.jsonl"));
  const auto truth = load_scan_csv(path_in(dir, split + ".scan.csv"));
  std::map<std::uint64_t, std::size_t> index;
  std::vector<LabeledFrame> frames;
  for (auto& d : dense) {
    sort_canonical(d);
    index[d.frame_id] = frames.size();
    frames.push_back({std::move(d), ScanFrame{}});
  }
  for (auto& f : frames) f.truth.frame_id = f.dense.frame_id;
  for (const auto& t : truth) {
    const auto it = index.find(t.frame_id);
    if (it == index.end()) throw DataError(split + ": scan frame " + std::to_string(t.frame_id) + " has no dense frame");
    frames[it->second].truth = t;
  }
  return frames;
}

Backend parse_backend(const std::string& s) { return s == "lut" ? Backend::Lut : Backend::Net; }
SelectionMode parse_mode(const std::string& s) { return s == "sample" ? SelectionMode::Sample : SelectionMode::Argmax; }

std::optional<Variant> optional_variant(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_variant(s);
}

struct Flags {
  int frames = 0;
  std::string out;
  std::vector<std::string> in;
  std::string spec;
  std::string variant;
  int epochs = 0;
  int batch = 0;
  double lr = 0.0;
  double lambda = -1.0;
  int patience = -1;
  std::uint64_t seed = 0;
  std::string backend = "net";
  std::string mode = "argmax";
  int port = 7878;
  std::string ref, pred, boxes;
};

const std::vector<std::string> kVariantNames = {"unet", "unet-lf", "tiny", "tiny-lf", "cae", "cae-lf"};

int cmd_gen_data(const Flags& f, std::ostream& out) {
  const SensorSpec spec = resolve_spec(f.spec, "");
  const int n_val = std::max(1, f.frames / 4);
  const auto data = make_dataset(SceneConfig::road(), spec, f.frames, n_val, f.seed);
  ensure_dir(f.out);
  auto save_split = [&](const std::vector<LabeledFrame>& frames, const std::string& split) {
    std::vector<DenseFrame> dense;
    std::vector<ScanFrame> truth;
    for (const auto& lf : frames) {
      dense.push_back(lf.dense);
      truth.push_back(lf.truth);
    }
    save_dense_jsonl(path_in(f.out, split + ".dense.jsonl"), dense);
    save_scan_csv(path_in(f.out, split + ".scan.csv"), truth);
  };
  save_split(data.train, "train");
  save_split(data.val, "val");
  write_text(path_in(f.out, kSpecFile), sensor_spec_to_json(spec));
  out << "wrote " << f.frames << " train and " << n_val << " val frames to " << f.out << '\n';
  return 0;
}

int cmd_fit_lut(const Flags& f, std::ostream& out) {
  const std::string& data_dir = f.in.at(0);
  const SensorSpec spec = resolve_spec(f.spec, data_dir);
  const auto frames = load_labeled(data_dir, "train");
  std::vector<ScanFrame> truth;
  for (const auto& lf : frames) truth.push_back(lf.truth);
  const EpwLut lut = fit_lut(truth, LutBins::defaults(spec), spec);
  const EchoOccurrenceHist hist = fit_echo_hist(frames, spec);
  ensure_dir(f.out);
  save_lut(path_in(f.out, kLutFile), lut);
  save_echo_hist(path_in(f.out, kHistFile), hist);
  write_text(path_in(f.out, kSpecFile), sensor_spec_to_json(spec));
  write_text(path_in(f.out, "epw_lut.csv"), lut_report(lut));
  out << "fitted LUT on " << truth.size() << " frames into " << f.out << '\n';
  return 0;
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream& err) {
  const std::string& data_dir = f.in.at(0);
  const SensorSpec spec = resolve_spec(f.spec, data_dir);
  const Variant variant = parse_variant(f.variant.empty() ? "unet" : f.variant);
  TrainConfig cfg;
  if (f.epochs > 0) cfg.max_epochs = f.epochs;
  if (f.batch > 0) cfg.batch_size = f.batch;
  if (f.lr > 0.0) cfg.learning_rate = f.lr;
  cfg.lambda = f.lambda >= 0.0 ? f.lambda : cfg.lambda;
  if (f.patience >= 0) {
    cfg.early_stop_patience = f.patience;
  } else {
    cfg.early_stop_patience = std::min(cfg.early_stop_patience, cfg.max_epochs - 1);
  }
  cfg.validate();

  const auto train_frames = load_labeled(data_dir, "train");
  auto val_frames = load_labeled(data_dir, "val");
  if (val_frames.empty()) val_frames = train_frames;
  ensure_dir(f.out);
  for (int e = 0; e < kMaxEchoes; ++e) {
    const auto train_set = make_training_set(train_frames, spec, e);
    const auto val_set = make_training_set(val_frames, spec, e);
    TrainConfig echo_cfg = cfg;
    echo_cfg.seed = derive_seed({f.seed, static_cast<std::uint64_t>(e)});
    EpwNetwork net = build_network(variant, 16, derive_seed({f.seed, static_cast<std::uint64_t>(e), 0x6e6574}));
    const auto result = train(std::move(net), train_set, val_set, echo_cfg, [&](int epoch, double loss, double l1) {
      err << variant_name(variant) << " e" << e << " epoch " << epoch << " loss " << loss << " val_l1 " << l1 << '\n';
    });
    save_checkpoint(path_in(f.out, checkpoint_name(variant, e)), result.net);
    out << variant_name(variant) << " e" << e << ": best epoch " << result.best_epoch << ", val L1 "
        << result.initial_val_l1 << " -> "
        << (result.best_epoch >= 0 ? result.history.val_l1[result.best_epoch] : result.initial_val_l1) << '\n';
  }
  if (!fs::exists(path_in(f.out, kSpecFile))) write_text(path_in(f.out, kSpecFile), sensor_spec_to_json(spec));
  return 0;
}

SelectionConfig selection_from(const Flags& f) {
  SelectionConfig cfg;
  cfg.mode = parse_mode(f.mode);
  cfg.seed = f.seed;
  return cfg;
}

int cmd_infer(const Flags& f, std::ostream& out) {
  if (f.in.size() != 2) throw ConfigError("infer: --in takes <dense.jsonl> <model dir>");
  if (f.out.empty()) throw ConfigError("infer: --out is required");
  const SensorSpec spec = resolve_spec(f.spec, f.in[1]);
  const SensorModel model = load_sensor_model(f.in[1], spec, parse_backend(f.backend), optional_variant(f.variant));
  auto frames = load_dense_jsonl(f.in[0]);
  for (auto& fr : frames) {
    sort_canonical(fr);
    validate(fr, spec);
  }
  const auto scans = apply_model_all(frames, model, selection_from(f));
  save_scan_csv(f.out, scans);
  out << "inferred " << scans.size() << " frames into " << f.out << '\n';
  return 0;
}

int cmd_evaluate(const Flags& f, std::ostream& out) {
  const auto ref = load_scan_csv(f.ref);
  const auto pred = load_scan_csv(f.pred);
  std::vector<BoxPair> boxes;
  if (!f.boxes.empty()) {
    std::ifstream is(f.boxes);
    if (!is) throw FormatError("cannot open: " + f.boxes);
    std::stringstream ss;
    ss << is.rdbuf();
    boxes = parse_box_pairs(ss.str());
  }
  const SensorSpec spec = resolve_spec(f.spec, "");
  const KpiReport report = full_report(ref, pred, boxes, spec);
  const std::string json = report_to_json(report);
  if (f.out.empty()) {
    out << json;
    return 0;
  }
  if (const auto parent = fs::path(f.out).parent_path(); !parent.empty()) ensure_dir(parent.string());
  write_text(f.out + ".json", json);
  write_text(f.out + ".csv", report_to_csv(report));
  write_text(f.out + ".error_hist.dat", histogram_to_gnuplot(report.error.error_histogram));
  write_text(f.out + ".epw_ref.dat", histogram_to_gnuplot(report.overall.reference));
  write_text(f.out + ".epw_pred.dat", histogram_to_gnuplot(report.overall.predicted));
  out << "mean abs error " << format_fixed6(report.error.mean_abs_error) << " ns, MSE "
      << format_fixed6(report.error.mse) << " ns^2\n";
  return 0;
}

int cmd_bench(const Flags& f, std::ostream& out) {
  if (f.in.size() != 2) throw ConfigError("bench: --in takes <data dir> <model dir>");
  const SensorSpec spec = resolve_spec(f.spec, f.in[1]);
  std::vector<Variant> variants;
  if (!f.variant.empty()) {
    variants.push_back(parse_variant(f.variant));
  } else {
    for (auto v : kAllVariants)
      if (fs::exists(path_in(f.in[1], checkpoint_name(v, 0)))) variants.push_back(v);
  }
  if (variants.empty()) throw DataError("bench: no checkpoints in " + f.in[1]);
  const auto val_frames = load_labeled(f.in[0], "val");
  const auto val_set = make_training_set(val_frames, spec, 0);
  std::ostringstream metrics;
  metrics << "variant,parameters,mse_ns2,accuracy_pct\n";
  out << "variant,parameters,mse_ns2,accuracy_pct,latency_ms\n";
  for (auto v : variants) {
    const EpwNetwork net = load_checkpoint(path_in(f.in[1], checkpoint_name(v, 0)));
    const BenchRow row = bench_network(net, val_set, spec.n_layers, spec.cols(), 7);
    const std::string common = std::string(variant_name(v)) + ',' + std::to_string(net.parameter_count()) + ',' +
                               format_fixed6(row.mse) + ',' + format_fixed6(row.accuracy);
    metrics << common << '\n';
    out << common << ',' << format_fixed6(row.latency_ms) << '\n';
  }
  if (!f.out.empty()) write_text(f.out, metrics.str());
  return 0;
}

int cmd_serve(const Flags& f, std::ostream& out, std::ostream& err) {
  const SensorSpec spec = resolve_spec(f.spec, f.in.at(0));
  const SensorModel model = load_sensor_model(f.in[0], spec, parse_backend(f.backend), optional_variant(f.variant));
  std::unique_ptr<WireServer> server;
  try {
    server = std::make_unique<WireServer>(model, selection_from(f), f.port);
  } catch (const std::system_error& e) {
    err << "serve: cannot listen on port " << f.port << ": " << e.what() << '\n';
    return 3;
  }
  g_server.store(server.get());
  struct sigaction sa{};
  sa.sa_handler = on_stop_signal;
  sigemptyset(&sa.sa_mask);
  struct sigaction old_int{}, old_term{};
  sigaction(SIGINT, &sa, &old_int);
  sigaction(SIGTERM, &sa, &old_term);
  out << "listening " << server->port() << std::endl;
  server->run();
  sigaction(SIGINT, &old_int, nullptr);
  sigaction(SIGTERM, &old_term, nullptr);
  g_server.store(nullptr);
  out << "stopped" << std::endl;
  return 0;
}

}  // namespace

std::string checkpoint_name(Variant v, int echo) {
  return std::string(variant_name(v)) + ".e" + std::to_string(echo) + ".epwm";
}

SensorSpec resolve_spec(const std::string& explicit_path, const std::string& dir) {
  if (!explicit_path.empty()) return load_sensor_spec(explicit_path);
  if (!dir.empty() && fs::exists(path_in(dir, kSpecFile))) return load_sensor_spec(path_in(dir, kSpecFile));
  return SensorSpec{};
}

SensorModel load_sensor_model(const std::string& model_dir, const SensorSpec& spec, Backend backend,
                              std::optional<Variant> variant) {
  SensorModel model;
  model.spec = spec;
  model.backend = backend;
  model.lut = load_lut(path_in(model_dir, kLutFile));
  model.hist = load_echo_hist(path_in(model_dir, kHistFile));
  if (backend == Backend::Net) {
    if (!variant) {
      for (auto v : kAllVariants) {
        if (fs::exists(path_in(model_dir, checkpoint_name(v, 0)))) {
          variant = v;
          break;
        }
      }
      if (!variant) throw DataError("no network checkpoints in " + model_dir);
    }
    for (int e = 0; e < kMaxEchoes; ++e) {
      const auto path = path_in(model_dir, checkpoint_name(*variant, e));
      if (!fs::exists(path)) {
        if (e == 0) throw DataError("missing checkpoint " + path);
        break;
      }
      model.nets.push_back(load_checkpoint(path));
    }
  }
  return model;
}

std::vector<ScanFrame> apply_model_all(const std::vector<DenseFrame>& frames, const SensorModel& model,
                                       const SelectionConfig& config) {
  std::vector<ScanFrame> out(frames.size());
  const unsigned n_threads = std::min<unsigned>(thread_count(), std::max<std::size_t>(1, frames.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < frames.size();) {
      try {
        out[i] = apply_model(frames[i], model, config);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LiDAR sensor model: data generation, EPW models, echo selection and KPIs", "lidar_sim"};
  app.require_subcommand(1, 1);
  Flags f;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", f.seed, "RNG seed")->capture_default_str(); };
  auto add_spec = [&](CLI::App* c) { c->add_option("--spec", f.spec, "sensor-spec JSON"); };
  auto add_model_flags = [&](CLI::App* c) {
    c->add_option("--backend", f.backend, "EPW backend")->check(CLI::IsMember({"net", "lut"}))->capture_default_str();
    c->add_option("--mode", f.mode, "echo selection")->check(CLI::IsMember({"argmax", "sample"}))->capture_default_str();
    c->add_option("--variant", f.variant, "network variant")->check(CLI::IsMember(kVariantNames));
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labelled dataset");
  gen->add_option("--frames", f.frames, "training frames")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", f.out, "output directory")->required();
  add_spec(gen);
  add_seed(gen);

  auto* fit = app.add_subcommand("fit-lut", "fit the EPW lookup table and echo histogram");
  fit->add_option("--in", f.in, "data directory")->required()->expected(1);
  fit->add_option("--out", f.out, "model directory")->required();
  add_spec(fit);

  auto* tr = app.add_subcommand("train", "train per-echo EPW networks");
  tr->add_option("--in", f.in, "data directory")->required()->expected(1);
  tr->add_option("--out", f.out, "model directory")->required();
  tr->add_option("--variant", f.variant, "network variant")->check(CLI::IsMember(kVariantNames))->default_str("unet");
  tr->add_option("--epochs", f.epochs, "max epochs")->check(CLI::PositiveNumber);
  tr->add_option("--batch", f.batch, "batch size")->check(CLI::PositiveNumber);
  tr->add_option("--lr", f.lr, "learning rate")->check(CLI::PositiveNumber);
  f.lambda = -1.0;
  tr->add_option("--lambda", f.lambda, "L2 coefficient")->check(CLI::NonNegativeNumber);
  tr->add_option("--patience", f.patience, "early-stop patience")->check(CLI::NonNegativeNumber);
  add_spec(tr);
  add_seed(tr);

  auto* inf = app.add_subcommand("infer", "apply the sensor model to dense frames");
  inf->add_option("--in", f.in, "<dense.jsonl> <model dir>")->required()->expected(2);
  inf->add_option("--out", f.out, "scan CSV")->required();
  add_model_flags(inf);
  add_spec(inf);
  add_seed(inf);

  auto* ev = app.add_subcommand("evaluate", "compare two scan traces");
  ev->add_option("--ref", f.ref, "reference scan CSV")->required();
  ev->add_option("--pred", f.pred, "predicted scan CSV")->required();
  ev->add_option("--boxes", f.boxes, "oriented box pairs JSON");
  ev->add_option("--out", f.out, "output prefix");
  add_spec(ev);

  auto* bn = app.add_subcommand("bench", "benchmark trained variants");
  bn->add_option("--in", f.in, "<data dir> <model dir>")->required()->expected(2);
  bn->add_option("--variant", f.variant, "network variant")->check(CLI::IsMember(kVariantNames));
  bn->add_option("--out", f.out, "metrics CSV");
  add_spec(bn);
  add_seed(bn);

  auto* sv = app.add_subcommand("serve", "newline-delimited JSON TCP service");
  sv->add_option("--in", f.in, "model directory")->required()->expected(1);
  sv->add_option("--port", f.port, "TCP port (0 = ephemeral)")->check(CLI::Range(0, 65535))->capture_default_str();
  add_model_flags(sv);
  add_spec(sv);
  add_seed(sv);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(f, out);
    if (*fit) return cmd_fit_lut(f, out);
    if (*tr) return cmd_train(f, out, err);
    if (*inf) return cmd_infer(f, out);
    if (*ev) return cmd_evaluate(f, out);
    if (*bn) return cmd_bench(f, out);
    if (*sv) return cmd_serve(f, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace lidar_sim
