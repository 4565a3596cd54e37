#include "lidar_sim/conv_net.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "lidar_sim/binary_io.hpp"
#include "lidar_sim/error.hpp"
#include "lidar_sim/rng.hpp"

namespace lidar_sim {
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

enum class OpKind { Conv, Pool, Save, Concat, Ablate };

struct Op {
  OpKind kind;
  int arg;  // layer index for Conv, level for Save/Concat
};

struct Plan {
  std::vector<ConvLayer> layers;  // parameters left empty
  std::vector<Op> ops;
};

Plan make_plan(const Architecture& a) {
  Plan p;
  auto conv = [&p](LayerKind kind, int in, int out, int k, bool relu) {
    ConvLayer l;
    l.kind = kind;
    l.in_ch = in;
    l.out_ch = out;
    l.kh = l.kw = k;
    l.relu = relu;
    p.ops.push_back({OpKind::Conv, static_cast<int>(p.layers.size())});
    p.layers.push_back(std::move(l));
  };
  int ch = 2;
  for (int level = 0; level < 3; ++level) {
    for (int k = 0; k < a.convs_per_block; ++k) {
      conv(LayerKind::Conv, ch, a.channels[level], 3, true);
      ch = a.channels[level];
    }
    if (a.skips) p.ops.push_back({OpKind::Save, level});
    p.ops.push_back({OpKind::Pool, 0});
  }
  if (a.unet_blocks) {
    for (int k = 0; k < a.convs_per_block; ++k) {
      conv(LayerKind::Conv, ch, a.channels[3], 3, true);
      ch = a.channels[3];
    }
  }
  p.ops.push_back({OpKind::Ablate, 0});
  for (int level = 2; level >= 0; --level) {
    conv(LayerKind::TransposeConv, ch, a.channels[level], 2, true);
    ch = a.channels[level];
    if (a.skips) {
      p.ops.push_back({OpKind::Concat, level});
      ch *= 2;
    }
    if (a.unet_blocks) {
      for (int k = 0; k < a.convs_per_block; ++k) {
        conv(LayerKind::Conv, ch, a.channels[level], 3, true);
        ch = a.channels[level];
      }
    }
  }
  conv(LayerKind::Conv, ch, 1, 1, false);
  return p;
}

// ---- kernels --------------------------------------------------------------

void conv_forward(const ConvLayer& L, const Tensor& in, Tensor& out) {
  const int H = in.h, W = in.w, K = L.kh, P = L.pad();
  out = Tensor(L.out_ch, H, W);
  for (int o = 0; o < L.out_ch; ++o) {
    double* op = out.channel(o);
    std::fill(op, op + static_cast<std::size_t>(H) * W, L.biases[o]);
    for (int i = 0; i < L.in_ch; ++i) {
      const double* ip = in.channel(i);
      const double* wk = L.weights.data() + (static_cast<std::size_t>(o) * L.in_ch + i) * K * K;
      for (int ky = 0; ky < K; ++ky) {
        const int dy = ky - P;
        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
        for (int kx = 0; kx < K; ++kx) {
          const int dx = kx - P;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          const double w = wk[ky * K + kx];
          for (int y = y0; y < y1; ++y) {
            double* orow = op + static_cast<std::size_t>(y) * W;
            const double* irow = ip + static_cast<std::size_t>(y + dy) * W + dx;
            for (int x = x0; x < x1; ++x) orow[x] += w * irow[x];
          }
        }
      }
    }
  }
}

// gz: gradient w.r.t. the pre-activation output.
void conv_backward(const ConvLayer& L, const Tensor& in, const Tensor& gz, Tensor& gin,
                   std::vector<double>& gw, std::vector<double>& gb) {
  const int H = in.h, W = in.w, K = L.kh, P = L.pad();
  gin = Tensor(L.in_ch, H, W);
  for (int o = 0; o < L.out_ch; ++o) {
    const double* gp = gz.channel(o);
    gb[o] += std::accumulate(gp, gp + static_cast<std::size_t>(H) * W, 0.0);
    for (int i = 0; i < L.in_ch; ++i) {
      const double* ip = in.channel(i);
      double* gip = gin.channel(i);
      const std::size_t base = (static_cast<std::size_t>(o) * L.in_ch + i) * K * K;
      const double* wk = L.weights.data() + base;
      double* gwk = gw.data() + base;
      for (int ky = 0; ky < K; ++ky) {
        const int dy = ky - P;
        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
        for (int kx = 0; kx < K; ++kx) {
          const int dx = kx - P;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          const double w = wk[ky * K + kx];
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = gp + static_cast<std::size_t>(y) * W;
            const double* irow = ip + static_cast<std::size_t>(y + dy) * W + dx;
            double* girow = gip + static_cast<std::size_t>(y + dy) * W + dx;
            for (int x = x0; x < x1; ++x) {
              acc += grow[x] * irow[x];
              girow[x] += w * grow[x];
            }
          }
          gwk[ky * K + kx] += acc;
        }
      }
    }
  }
}

void tconv_forward(const ConvLayer& L, const Tensor& in, Tensor& out) {
  const int H = in.h, W = in.w, OW = 2 * W;
  out = Tensor(L.out_ch, 2 * H, OW);
  for (int o = 0; o < L.out_ch; ++o) {
    double* op = out.channel(o);
    std::fill(op, op + static_cast<std::size_t>(4) * H * W, L.biases[o]);
    for (int i = 0; i < L.in_ch; ++i) {
      const double* ip = in.channel(i);
      const double* wk = L.weights.data() + (static_cast<std::size_t>(o) * L.in_ch + i) * 4;
      for (int y = 0; y < H; ++y) {
        const double* irow = ip + static_cast<std::size_t>(y) * W;
        for (int dy = 0; dy < 2; ++dy) {
          double* orow = op + static_cast<std::size_t>(2 * y + dy) * OW;
          const double w0 = wk[dy * 2], w1 = wk[dy * 2 + 1];
          for (int x = 0; x < W; ++x) {
            orow[2 * x] += w0 * irow[x];
            orow[2 * x + 1] += w1 * irow[x];
          }
        }
      }
    }
  }
}

void tconv_backward(const ConvLayer& L, const Tensor& in, const Tensor& gz, Tensor& gin,
                    std::vector<double>& gw, std::vector<double>& gb) {
  const int H = in.h, W = in.w, OW = 2 * W;
  gin = Tensor(L.in_ch, H, W);
  for (int o = 0; o < L.out_ch; ++o) {
    const double* gp = gz.channel(o);
    gb[o] += std::accumulate(gp, gp + static_cast<std::size_t>(4) * H * W, 0.0);
    for (int i = 0; i < L.in_ch; ++i) {
      const double* ip = in.channel(i);
      double* gip = gin.channel(i);
      const std::size_t base = (static_cast<std::size_t>(o) * L.in_ch + i) * 4;
      const double* wk = L.weights.data() + base;
      double* gwk = gw.data() + base;
      for (int dy = 0; dy < 2; ++dy) {
        const double w0 = wk[dy * 2], w1 = wk[dy * 2 + 1];
        double a0 = 0.0, a1 = 0.0;
        for (int y = 0; y < H; ++y) {
          const double* irow = ip + static_cast<std::size_t>(y) * W;
          double* girow = gip + static_cast<std::size_t>(y) * W;
          const double* grow = gp + static_cast<std::size_t>(2 * y + dy) * OW;
          for (int x = 0; x < W; ++x) {
            a0 += grow[2 * x] * irow[x];
            a1 += grow[2 * x + 1] * irow[x];
            girow[x] += w0 * grow[2 * x] + w1 * grow[2 * x + 1];
          }
        }
        gwk[dy * 2] += a0;
        gwk[dy * 2 + 1] += a1;
      }
    }
  }
}

void pool_forward(const Tensor& in, Tensor& out, std::vector<std::uint32_t>& argmax) {
  const int OH = in.h / 2, OW = in.w / 2;
  out = Tensor(in.c, OH, OW);
  argmax.resize(out.size());
  std::size_t k = 0;
  for (int c = 0; c < in.c; ++c) {
    for (int y = 0; y < OH; ++y) {
      for (int x = 0; x < OW; ++x, ++k) {
        std::size_t best = (static_cast<std::size_t>(c) * in.h + 2 * y) * in.w + 2 * x;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(c) * in.h + 2 * y + dy) * in.w + 2 * x + dx;
            if (in.v[idx] > in.v[best]) best = idx;
          }
        }
        out.v[k] = in.v[best];
        argmax[k] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

struct Trace {
  std::vector<Tensor> acts;  // acts[i] is the input of op i; back() is the output
  std::vector<std::vector<std::uint32_t>> argmax;
  std::array<Tensor, 3> skips;
};

void check_input(const Tensor& input) {
  if (input.c != 2) throw DimensionError("network input must have 2 channels");
  if (input.h <= 0 || input.w <= 0 || input.h % 8 != 0 || input.w % 8 != 0) {
    throw DimensionError("network input rows and cols must be positive multiples of 8");
  }
  if (input.v.size() != static_cast<std::size_t>(input.c) * input.h * input.w) {
    throw DimensionError("network input payload does not match its shape");
  }
}

const std::vector<Op>& ops_for(const EpwNetwork& net) {
  // One plan per (variant, base) pair is cheap to rebuild; cache the last.
  thread_local Variant cached_variant{};
  thread_local int cached_base = -1;
  thread_local std::vector<Op> cached_ops;
  if (cached_base != net.base_channels || cached_variant != net.variant) {
    cached_ops = make_plan(architecture(net.variant, net.base_channels)).ops;
    cached_variant = net.variant;
    cached_base = net.base_channels;
  }
  return cached_ops;
}

void run_forward(const EpwNetwork& net, const Tensor& input, ForwardOptions options, Trace& t) {
  check_input(input);
  const auto& ops = ops_for(net);
  t.acts.resize(ops.size() + 1);
  t.argmax.resize(ops.size());
  t.acts[0] = input;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const Op& op = ops[i];
    const Tensor& x = t.acts[i];
    Tensor& y = t.acts[i + 1];
    switch (op.kind) {
      case OpKind::Conv: {
        const ConvLayer& L = net.layers[op.arg];
        if (L.kind == LayerKind::Conv) conv_forward(L, x, y);
        else tconv_forward(L, x, y);
        if (L.relu) {
          for (auto& v : y.v) v = v > 0.0 ? v : 0.0;
        }
        break;
      }
      case OpKind::Pool: pool_forward(x, y, t.argmax[i]); break;
      case OpKind::Save:
        t.skips[op.arg] = x;
        y = x;
        break;
      case OpKind::Concat: {
        const Tensor& s = t.skips[op.arg];
        y = Tensor(s.c + x.c, x.h, x.w);
        std::copy(s.v.begin(), s.v.end(), y.v.begin());
        std::copy(x.v.begin(), x.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(s.v.size()));
        break;
      }
      case OpKind::Ablate:
        y = x;
        if (options.ablate_bottleneck) std::fill(y.v.begin(), y.v.end(), 0.0);
        break;
    }
  }
}

Gradients run_backward(const EpwNetwork& net, const Trace& t, Tensor grad) {
  const auto& ops = ops_for(net);
  Gradients g = Gradients::zeros_like(net);
  std::array<Tensor, 3> skip_grads;
  Tensor gin;
  for (std::size_t n = ops.size(); n-- > 0;) {
    const Op& op = ops[n];
    switch (op.kind) {
      case OpKind::Conv: {
        const ConvLayer& L = net.layers[op.arg];
        if (L.relu) {
          const auto& out = t.acts[n + 1].v;
          for (std::size_t k = 0; k < grad.v.size(); ++k) {
            if (!(out[k] > 0.0)) grad.v[k] = 0.0;
          }
        }
        if (L.kind == LayerKind::Conv) {
          conv_backward(L, t.acts[n], grad, gin, g.weights[op.arg], g.biases[op.arg]);
        } else {
          tconv_backward(L, t.acts[n], grad, gin, g.weights[op.arg], g.biases[op.arg]);
        }
        grad = std::move(gin);
        break;
      }
      case OpKind::Pool: {
        const Tensor& x = t.acts[n];
        Tensor gx(x.c, x.h, x.w);
        const auto& idx = t.argmax[n];
        for (std::size_t k = 0; k < idx.size(); ++k) gx.v[idx[k]] += grad.v[k];
        grad = std::move(gx);
        break;
      }
      case OpKind::Save: {
        const Tensor& sg = skip_grads[op.arg];
        for (std::size_t k = 0; k < grad.v.size(); ++k) grad.v[k] += sg.v[k];
        break;
      }
      case OpKind::Concat: {
        const Tensor& x = t.acts[n];
        const int sc = grad.c - x.c;
        Tensor& sg = skip_grads[op.arg];
        sg = Tensor(sc, x.h, x.w);
        std::copy(grad.v.begin(), grad.v.begin() + static_cast<std::ptrdiff_t>(sg.v.size()), sg.v.begin());
        Tensor gx(x.c, x.h, x.w);
        std::copy(grad.v.begin() + static_cast<std::ptrdiff_t>(sg.v.size()), grad.v.end(), gx.v.begin());
        grad = std::move(gx);
        break;
      }
      case OpKind::Ablate: break;
    }
  }
  return g;
}

void check_same_shape(const Tensor& a, const Tensor& b) {
  if (a.c != b.c || a.h != b.h || a.w != b.w || a.v.size() != b.v.size()) {
    throw DimensionError("tensor shapes differ");
  }
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Unet: return "unet";
    case Variant::UnetLF: return "unet-lf";
    case Variant::TinyUnet: return "tiny";
    case Variant::TinyUnetLF: return "tiny-lf";
    case Variant::Cae: return "cae";
    case Variant::CaeLF: return "cae-lf";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant: " + std::string(name));
}

bool is_light(Variant v) {
  return v == Variant::UnetLF || v == Variant::TinyUnetLF || v == Variant::CaeLF;
}

Architecture architecture(Variant v, int base_channels) {
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  Architecture a;
  const int b = is_light(v) ? std::max(1, base_channels / 2) : base_channels;
  a.channels = {b, 2 * b, 4 * b, 8 * b};
  switch (v) {
    case Variant::Unet:
    case Variant::UnetLF: break;
    case Variant::TinyUnet:
    case Variant::TinyUnetLF: a.convs_per_block = 1; break;
    case Variant::Cae:
    case Variant::CaeLF:
      a.convs_per_block = 1;
      a.skips = false;
      a.unet_blocks = false;
      break;
  }
  return a;
}

std::size_t EpwNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

double EpwNetwork::squared_weight_norm() const {
  double s = 0.0;
  for (const auto& l : layers)
    for (double w : l.weights) s += w * w;
  return s;
}

EpwNetwork build_network(Variant v, int base_channels, std::uint64_t seed) {
  EpwNetwork net;
  net.variant = v;
  net.base_channels = base_channels;
  net.layers = make_plan(architecture(v, base_channels)).layers;
  Rng rng(derive_seed({seed, 0x1417}));
  for (auto& l : net.layers) {
    const int fan_in = l.kind == LayerKind::Conv ? l.in_ch * l.kh * l.kw : l.in_ch;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    l.weights.resize(static_cast<std::size_t>(l.out_ch) * l.in_ch * l.kh * l.kw);
    for (auto& w : l.weights) w = dist(rng);
    l.biases.assign(l.out_ch, 0.0);
  }
  return net;
}

Tensor forward(const EpwNetwork& net, const Tensor& input, ForwardOptions options) {
  Trace t;
  run_forward(net, input, options, t);
  return std::move(t.acts.back());
}

Tensor to_network_input(const PolarGridMap& pgm, double max_range) {
  const int dch = pgm.channel_of(ChannelKind::Distance);
  const int cch = pgm.channel_of(ChannelKind::Class);
  if (dch < 0 || cch < 0) throw DimensionError("network input needs Distance and Class channels");
  Tensor t(2, pgm.rows, pgm.cols);
  for (int r = 0; r < pgm.rows; ++r) {
    for (int c = 0; c < pgm.cols; ++c) {
      t.at(0, r, c) = pgm.at(dch, r, c) / max_range;
      t.at(1, r, c) = pgm.at(cch, r, c) / 5.0;
    }
  }
  return t;
}

PolarGridMap forward(const EpwNetwork& net, const PolarGridMap& input, double max_range) {
  const Tensor out = forward(net, to_network_input(input, max_range));
  PolarGridMap pgm({ChannelKind::Epw}, out.h, out.w);
  pgm.data = out.v;
  return pgm;
}

double loss(const Tensor& pred, const Tensor& target, const EpwNetwork& net, double lambda) {
  check_same_shape(pred, target);
  double sq = 0.0;
  for (std::size_t k = 0; k < pred.v.size(); ++k) {
    const double d = target.v[k] - pred.v[k];
    sq += d * d;
  }
  return sq / static_cast<double>(pred.v.size()) + 0.5 * lambda * net.squared_weight_norm();
}

Gradients Gradients::zeros_like(const EpwNetwork& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.weights.emplace_back(l.weights.size(), 0.0);
    g.biases.emplace_back(l.biases.size(), 0.0);
  }
  return g;
}

void Gradients::scale(double s) {
  for (auto& w : weights)
    for (auto& x : w) x *= s;
  for (auto& b : biases)
    for (auto& x : b) x *= s;
}

void Gradients::add(const Gradients& other) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (std::size_t k = 0; k < weights[l].size(); ++k) weights[l][k] += other.weights[l][k];
    for (std::size_t k = 0; k < biases[l].size(); ++k) biases[l][k] += other.biases[l][k];
  }
}

BackwardResult backward(const EpwNetwork& net, const Tensor& input, const Tensor& target,
                        double lambda) {
  Trace t;
  run_forward(net, input, {}, t);
  const Tensor& pred = t.acts.back();
  check_same_shape(pred, target);
  BackwardResult r;
  r.loss = loss(pred, target, net, lambda);
  Tensor grad(pred.c, pred.h, pred.w);
  const double scale = 2.0 / static_cast<double>(pred.v.size());
  for (std::size_t k = 0; k < pred.v.size(); ++k) grad.v[k] = scale * (pred.v[k] - target.v[k]);
  r.grads = run_backward(net, t, std::move(grad));
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& w = net.layers[l].weights;
    for (std::size_t k = 0; k < w.size(); ++k) r.grads.weights[l][k] += lambda * w[k];
  }
  r.prediction = pred;
  return r;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (early_stop_patience < 0 || early_stop_patience >= max_epochs) {
    throw ConfigError("early_stop_patience must be in [0, max_epochs)");
  }
}

std::vector<TrainSample> make_training_set(std::span<const LabeledFrame> frames,
                                           const SensorSpec& spec, int echo) {
  std::vector<TrainSample> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    TrainSample s;
    s.input = to_network_input(encode_dense(f.dense, spec, echo), spec.max_range);
    const PolarGridMap epw = encode_epw(f.truth, spec, echo);
    s.target = Tensor(1, epw.rows, epw.cols);
    s.target.v = epw.data;
    out.push_back(std::move(s));
  }
  return out;
}

Tensor masked_prediction(const EpwNetwork& net, const Tensor& input) {
  Tensor out = forward(net, input);
  const double* dist = input.channel(0);
  for (std::size_t k = 0; k < out.v.size(); ++k) {
    out.v[k] = dist[k] > 0.0 ? std::max(0.0, out.v[k]) : 0.0;
  }
  return out;
}

double validation_l1(const EpwNetwork& net, std::span<const TrainSample> samples) {
  if (samples.empty()) throw DataError("validation set is empty");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    const Tensor p = masked_prediction(net, s.input);
    check_same_shape(p, s.target);
    for (std::size_t k = 0; k < p.v.size(); ++k) sum += std::abs(p.v[k] - s.target.v[k]);
    n += p.v.size();
  }
  return sum / static_cast<double>(n);
}

double nonzero_cell_mae(const EpwNetwork& net, std::span<const TrainSample> samples) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    const Tensor p = masked_prediction(net, s.input);
    const double* dist = s.input.channel(0);
    for (std::size_t k = 0; k < p.v.size(); ++k) {
      if (dist[k] > 0.0) {
        sum += std::abs(p.v[k] - s.target.v[k]);
        ++n;
      }
    }
  }
  if (n == 0) throw DataError("no nonzero cells");
  return sum / static_cast<double>(n);
}

TrainResult train(EpwNetwork net, std::span<const TrainSample> dataset,
                  std::span<const TrainSample> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");
  for (const auto* set : {&dataset, &val_set}) {
    for (const auto& s : *set) {
      check_same_shape(s.input, dataset.front().input);
      check_same_shape(s.target, dataset.front().target);
    }
  }

  TrainResult result;
  result.initial_val_l1 = validation_l1(net, val_set);
  result.net = net;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed({config.seed, 0x7a1e}));

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Gradients acc = Gradients::zeros_like(net);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = dataset[order[k]];
        BackwardResult r = backward(net, s.input, s.target, config.lambda);
        epoch_loss += r.loss;
        acc.add(r.grads);
      }
      const double step = config.learning_rate / static_cast<double>(end - start);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& L = net.layers[l];
        for (std::size_t k = 0; k < L.weights.size(); ++k) L.weights[k] -= step * acc.weights[l][k];
        for (std::size_t k = 0; k < L.biases.size(); ++k) L.biases[k] -= step * acc.biases[l][k];
      }
    }
    epoch_loss /= static_cast<double>(dataset.size());
    const double val = validation_l1(net, val_set);
    net.history.train_loss.push_back(epoch_loss);
    net.history.val_l1.push_back(val);
    if (on_epoch) on_epoch(epoch, epoch_loss, val);

    if (val < best) {
      best = val;
      since_best = 0;
      result.best_epoch = epoch;
      result.net = net;
    } else if (++since_best > config.early_stop_patience) {
      break;
    }
  }
  result.history = net.history;
  result.net.history = net.history;
  return result;
}

ScanFrame predict_frame(std::span<const EpwNetwork> nets, const DenseFrame& frame,
                        const SensorSpec& spec, double gap) {
  if (nets.empty()) throw ConfigError("predict_frame: no networks");
  ScanFrame out;
  out.frame_id = frame.frame_id;
  if (frame.samples.empty()) return out;
  for (int echo = 0; echo < spec.max_echoes; ++echo) {
    const PolarGridMap in = encode_dense(frame, spec, echo, gap);
    const int dch = in.channel_of(ChannelKind::Distance);
    const bool any = std::any_of(in.data.begin() + static_cast<std::ptrdiff_t>(dch) * in.rows * in.cols,
                                 in.data.begin() + static_cast<std::ptrdiff_t>(dch + 1) * in.rows * in.cols,
                                 [](double d) { return d > 0.0; });
    if (!any) continue;
    const auto& net = nets[std::min<std::size_t>(echo, nets.size() - 1)];
    const Tensor pred = masked_prediction(net, to_network_input(in, spec.max_range));
    PolarGridMap epw({ChannelKind::Epw}, in.rows, in.cols);
    epw.data = pred.v;
    auto pts = decode(in, epw, spec, echo);
    out.points.insert(out.points.end(), pts.begin(), pts.end());
  }
  sort_canonical(out);
  return out;
}

double accuracy_percent(const Tensor& pred, const Tensor& target, double tau) {
  check_same_shape(pred, target);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < pred.v.size(); ++k) {
    if (std::abs(pred.v[k] - target.v[k]) <= tau) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.v.size());
}

BenchRow bench_network(const EpwNetwork& net, std::span<const TrainSample> val, int rows, int cols,
                       int repetitions, double tau) {
  BenchRow row;
  row.variant = net.variant;
  if (!val.empty()) {
    double sq = 0.0, acc = 0.0;
    std::size_t n = 0;
    for (const auto& s : val) {
      const Tensor p = masked_prediction(net, s.input);
      for (std::size_t k = 0; k < p.v.size(); ++k) {
        const double d = p.v[k] - s.target.v[k];
        sq += d * d;
      }
      n += p.v.size();
      acc += accuracy_percent(p, s.target, tau);
    }
    row.mse = sq / static_cast<double>(n);
    row.accuracy = acc / static_cast<double>(val.size());
  }
  Tensor input(2, rows, cols);
  if (!val.empty() && val.front().input.h == rows && val.front().input.w == cols) {
    input = val.front().input;
  }
  std::vector<double> times;
  for (int r = 0; r < std::max(1, repetitions); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor out = forward(net, input);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
  row.latency_ms = times[times.size() / 2];
  return row;
}

void write_checkpoint(std::ostream& os, const EpwNetwork& net) {
  binary::write_magic(os, "EPWM");
  binary::write<std::uint32_t>(os, kCheckpointVersion);
  binary::write<std::uint8_t>(os, static_cast<std::uint8_t>(net.variant));
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(net.base_channels));
  for (const auto& l : net.layers) {
    binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.out_ch));
    binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.in_ch));
    binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.kh));
    binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.kw));
    for (double w : l.weights) binary::write<double>(os, w);
    for (double b : l.biases) binary::write<double>(os, b);
  }
  const auto& h = net.history;
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(h.train_loss.size()));
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    binary::write<double>(os, h.train_loss[e]);
    binary::write<double>(os, h.val_l1[e]);
  }
}

EpwNetwork read_checkpoint(std::istream& is) {
  binary::expect_magic(is, "EPWM");
  binary::expect_version(is, kCheckpointVersion);
  const auto variant_id = binary::read<std::uint8_t>(is);
  if (variant_id >= kAllVariants.size()) throw FormatError("checkpoint: unknown variant id");
  const auto base = binary::read<std::uint32_t>(is);
  if (base < 1 || base > 4096) throw FormatError("checkpoint: bad base channel count");
  EpwNetwork net;
  net.variant = static_cast<Variant>(variant_id);
  net.base_channels = static_cast<int>(base);
  net.layers = make_plan(architecture(net.variant, net.base_channels)).layers;
  for (auto& l : net.layers) {
    const std::uint32_t dims[4] = {binary::read<std::uint32_t>(is), binary::read<std::uint32_t>(is),
                                   binary::read<std::uint32_t>(is), binary::read<std::uint32_t>(is)};
    if (dims[0] != static_cast<std::uint32_t>(l.out_ch) || dims[1] != static_cast<std::uint32_t>(l.in_ch) ||
        dims[2] != static_cast<std::uint32_t>(l.kh) || dims[3] != static_cast<std::uint32_t>(l.kw)) {
      throw FormatError("checkpoint: layer shape does not match variant");
    }
    l.weights.resize(static_cast<std::size_t>(l.out_ch) * l.in_ch * l.kh * l.kw);
    for (auto& w : l.weights) w = binary::read<double>(is);
    l.biases.resize(l.out_ch);
    for (auto& b : l.biases) b = binary::read<double>(is);
  }
  const auto epochs = binary::read<std::uint32_t>(is);
  if (epochs > 1000000) throw FormatError("checkpoint: bad epoch count");
  for (std::uint32_t e = 0; e < epochs; ++e) {
    net.history.train_loss.push_back(binary::read<double>(is));
    net.history.val_l1.push_back(binary::read<double>(is));
  }
  binary::expect_end(is);
  return net;
}

void save_checkpoint(const std::string& path, const EpwNetwork& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  write_checkpoint(os, net);
}

EpwNetwork load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace lidar_sim
