#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lidar_sim/frames.hpp"
#include "lidar_sim/pgm.hpp"
#include "lidar_sim/scene.hpp"

namespace lidar_sim {

enum class Variant : std::uint8_t { Unet = 0, UnetLF = 1, TinyUnet = 2, TinyUnetLF = 3, Cae = 4, CaeLF = 5 };

inline constexpr std::array<Variant, 6> kAllVariants = {
    Variant::Unet, Variant::UnetLF, Variant::TinyUnet, Variant::TinyUnetLF, Variant::Cae, Variant::CaeLF};

/// CLI spelling: unet, unet-lf, tiny, tiny-lf, cae, cae-lf.
std::string_view variant_name(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(std::string_view name);
bool is_light(Variant v);

/// Dense c x h x w activation buffer, row-major within a channel.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

  std::size_t size() const { return v.size(); }
  double* channel(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
  const double* channel(int ch) const { return v.data() + static_cast<std::size_t>(ch) * h * w; }
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class LayerKind : std::uint8_t { Conv, TransposeConv };

/// Weights are laid out [out][in][kh][kw] for both kinds. Conv layers are
/// stride 1 with "same" zero padding; transpose convs are 2x2 stride 2.
struct ConvLayer {
  LayerKind kind = LayerKind::Conv;
  int out_ch = 0;
  int in_ch = 0;
  int kh = 0;
  int kw = 0;
  bool relu = true;
  std::vector<double> weights;
  std::vector<double> biases;

  int stride() const { return kind == LayerKind::Conv ? 1 : 2; }
  int pad() const { return kind == LayerKind::Conv ? (kh - 1) / 2 : 0; }
  std::size_t parameter_count() const { return weights.size() + biases.size(); }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Block structure of a variant.
struct Architecture {
  int convs_per_block = 2;
  bool skips = true;
  /// Unet-family decoders refine with convs after each up-sampling and the
  /// encoder ends in a bottleneck block; the autoencoder has neither.
  bool unet_blocks = true;
  std::array<int, 4> channels{};  // three encoder levels + bottleneck
};

/// LF variants use base_channels / 2 (at least 1).
Architecture architecture(Variant v, int base_channels);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_l1;

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct EpwNetwork {
  Variant variant = Variant::Unet;
  int base_channels = 16;
  std::vector<ConvLayer> layers;
  TrainHistory history;

  std::size_t parameter_count() const;
  /// Sum of squared conv weights (biases excluded).
  double squared_weight_norm() const;

  friend bool operator==(const EpwNetwork&, const EpwNetwork&) = default;
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases. Deterministic in
/// the seed. Throws ConfigError for base_channels < 1.
EpwNetwork build_network(Variant v, int base_channels, std::uint64_t seed);

struct ForwardOptions {
  /// Zeroes the deepest encoder activation; used to probe skip wiring.
  bool ablate_bottleneck = false;
};

/// Throws DimensionError unless input is (2, h, w) with h, w divisible by 8.
Tensor forward(const EpwNetwork& net, const Tensor& input, ForwardOptions options = {});

/// Scales a (Distance, Class) map into network input: distance / max_range,
/// class code / 5.
Tensor to_network_input(const PolarGridMap& pgm, double max_range);

/// Runs the network on a raw (Distance, Class) map; returns a 1-channel Epw
/// map with the raw (unmasked) network output.
PolarGridMap forward(const EpwNetwork& net, const PolarGridMap& input, double max_range);

/// Mean squared error over all cells plus (lambda / 2) * sum of squared
/// conv weights. Throws DimensionError on shape mismatch.
double loss(const Tensor& pred, const Tensor& target, const EpwNetwork& net, double lambda);

/// Per-layer gradients, same layout as the parameters.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static Gradients zeros_like(const EpwNetwork& net);
  void scale(double s);
  void add(const Gradients& other);
};

struct BackwardResult {
  double loss = 0.0;
  Tensor prediction;
  Gradients grads;
};

/// Exact reverse-mode gradient of loss(forward(input), target, lambda).
BackwardResult backward(const EpwNetwork& net, const Tensor& input, const Tensor& target,
                        double lambda);

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 1e-5;
  int max_epochs = 350;
  double lambda = 1e-4;
  int early_stop_patience = 20;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless all values are positive (patience may be 0)
  /// and patience < max_epochs.
  void validate() const;
};

/// One training pair: scaled network input and EPW target map (1 channel).
struct TrainSample {
  Tensor input;
  Tensor target;
};

/// encode_dense(echo) as input, truth EPW of the same echo as target.
std::vector<TrainSample> make_training_set(std::span<const LabeledFrame> frames,
                                           const SensorSpec& spec, int echo);

/// Network output clipped at 0 and masked to 0 wherever the input distance
/// channel is 0.
Tensor masked_prediction(const EpwNetwork& net, const Tensor& input);

/// Mean absolute error of masked predictions over all cells of all samples.
double validation_l1(const EpwNetwork& net, std::span<const TrainSample> samples);

/// Mean absolute error restricted to cells with nonzero input distance.
double nonzero_cell_mae(const EpwNetwork& net, std::span<const TrainSample> samples);

struct TrainResult {
  EpwNetwork net;  // parameters of the best validation epoch
  TrainHistory history;
  int best_epoch = -1;
  double initial_val_l1 = 0.0;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_l1)>;

/// Plain mini-batch SGD with seeded shuffling and early stopping on the
/// validation L1. Throws DataError on an empty dataset, DimensionError on
/// mismatched sample shapes.
TrainResult train(EpwNetwork net, std::span<const TrainSample> dataset,
                  std::span<const TrainSample> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Per-echo EPW inference. nets[e] serves echo e; if fewer than three
/// networks are given the last one serves the remaining echoes.
ScanFrame predict_frame(std::span<const EpwNetwork> nets, const DenseFrame& frame,
                        const SensorSpec& spec, double gap = kClusterGap);

struct BenchRow {
  Variant variant = Variant::Unet;
  double mse = 0.0;       // ns^2
  double accuracy = 0.0;  // percent of cells within tau
  double latency_ms = 0.0;
};

/// Fraction of cells with |pred - target| <= tau, in percent.
double accuracy_percent(const Tensor& pred, const Tensor& target, double tau);

/// Validation MSE / accuracy on masked predictions plus the median latency
/// of a forward pass on a (2, rows, cols) input.
BenchRow bench_network(const EpwNetwork& net, std::span<const TrainSample> val, int rows, int cols,
                       int repetitions, double tau = 1.0);

void write_checkpoint(std::ostream& os, const EpwNetwork& net);
EpwNetwork read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const EpwNetwork& net);
EpwNetwork load_checkpoint(const std::string& path);

}  // namespace lidar_sim
