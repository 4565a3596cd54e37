#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "grad_check.hpp"
#include "lidar_sim/conv_net.hpp"
#include "lidar_sim/error.hpp"
#include "support.hpp"

using namespace lidar_sim;

namespace {

// Independent reference forward pass built from the architecture table.
Tensor ref_conv(const ConvLayer& L, const Tensor& x) {
  Tensor y(L.out_ch, x.h, x.w);
  const int p = (L.kh - 1) / 2;
  for (int o = 0; o < L.out_ch; ++o)
    for (int r = 0; r < x.h; ++r)
      for (int c = 0; c < x.w; ++c) {
        double s = L.biases[o];
        for (int i = 0; i < L.in_ch; ++i)
          for (int ky = 0; ky < L.kh; ++ky)
            for (int kx = 0; kx < L.kw; ++kx) {
              const int rr = r + ky - p, cc = c + kx - p;
              if (rr < 0 || rr >= x.h || cc < 0 || cc >= x.w) continue;
              s += L.weights[((o * L.in_ch + i) * L.kh + ky) * L.kw + kx] * x.at(i, rr, cc);
            }
        y.at(o, r, c) = s;
      }
  return y;
}

Tensor ref_tconv(const ConvLayer& L, const Tensor& x) {
  Tensor y(L.out_ch, x.h * 2, x.w * 2);
  for (int o = 0; o < L.out_ch; ++o)
    for (int r = 0; r < y.h; ++r)
      for (int c = 0; c < y.w; ++c) {
        double s = L.biases[o];
        for (int i = 0; i < L.in_ch; ++i) s += L.weights[((o * L.in_ch + i) * 2 + r % 2) * 2 + c % 2] * x.at(i, r / 2, c / 2);
        y.at(o, r, c) = s;
      }
  return y;
}

Tensor ref_pool(const Tensor& x) {
  Tensor y(x.c, x.h / 2, x.w / 2);
  for (int ch = 0; ch < x.c; ++ch)
    for (int r = 0; r < y.h; ++r)
      for (int c = 0; c < y.w; ++c)
        y.at(ch, r, c) = std::max({x.at(ch, 2 * r, 2 * c), x.at(ch, 2 * r, 2 * c + 1), x.at(ch, 2 * r + 1, 2 * c),
                                   x.at(ch, 2 * r + 1, 2 * c + 1)});
  return y;
}

Tensor relu(Tensor t) {
  for (auto& v : t.v) v = std::max(0.0, v);
  return t;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.v.size());
  return y;
}

Tensor ref_forward(const EpwNetwork& net, Tensor x) {
  const auto a = architecture(net.variant, net.base_channels);
  std::size_t i = 0;
  Tensor skip[3];
  for (int l = 0; l < 3; ++l) {
    for (int k = 0; k < a.convs_per_block; ++k) x = relu(ref_conv(net.layers[i++], x));
    skip[l] = x;
    x = ref_pool(x);
  }
  if (a.unet_blocks)
    for (int k = 0; k < a.convs_per_block; ++k) x = relu(ref_conv(net.layers[i++], x));
  for (int l = 2; l >= 0; --l) {
    x = relu(ref_tconv(net.layers[i++], x));
    if (a.skips) x = concat(skip[l], x);
    if (a.unet_blocks)
      for (int k = 0; k < a.convs_per_block; ++k) x = relu(ref_conv(net.layers[i++], x));
  }
  x = ref_conv(net.layers[i++], x);
  EXPECT_EQ(i, net.layers.size());
  return x;
}

Tensor random_input(int h, int w, std::uint64_t seed) {
  Tensor t(2, h, w);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : t.v) v = u(rng);
  return t;
}

EpwNetwork single_weight_net(double w) {
  EpwNetwork n;
  ConvLayer l;
  l.out_ch = l.in_ch = l.kh = l.kw = 1;
  l.weights = {w};
  l.biases = {0.5};
  n.layers.push_back(l);
  return n;
}

}  // namespace

TEST(Variant, Names) {
  for (auto v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_EQ(parse_variant("tiny-lf"), Variant::TinyUnetLF);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
}

TEST(Architecture, Table) {
  const auto u = architecture(Variant::Unet, 16);
  EXPECT_EQ(u.channels, (std::array<int, 4>{16, 32, 64, 128}));
  EXPECT_EQ(u.convs_per_block, 2);
  EXPECT_TRUE(u.skips);
  EXPECT_EQ(architecture(Variant::UnetLF, 16).channels, (std::array<int, 4>{8, 16, 32, 64}));
  EXPECT_EQ(architecture(Variant::TinyUnet, 16).convs_per_block, 1);
  EXPECT_FALSE(architecture(Variant::Cae, 16).skips);
  EXPECT_EQ(architecture(Variant::CaeLF, 1).channels[0], 1);
  EXPECT_THROW(build_network(Variant::Unet, 0, 1), ConfigError);
}

TEST(BuildNetwork, DeterministicAndHeScaled) {
  EXPECT_EQ(build_network(Variant::Cae, 4, 3), build_network(Variant::Cae, 4, 3));
  EXPECT_NE(build_network(Variant::Cae, 4, 3), build_network(Variant::Cae, 4, 4));
  const auto net = build_network(Variant::Unet, 16, 1);
  for (const auto& l : net.layers) {
    for (double b : l.biases) EXPECT_EQ(b, 0.0);
    const double fan_in = l.kind == LayerKind::Conv ? l.in_ch * l.kh * l.kw : l.in_ch;
    double s2 = 0.0;
    for (double w : l.weights) s2 += w * w;
    const double sd = std::sqrt(s2 / l.weights.size());
    if (l.weights.size() > 1000) EXPECT_NEAR(sd, std::sqrt(2.0 / fan_in), 0.1 * std::sqrt(2.0 / fan_in));
  }
}

TEST(BuildNetwork, LightVariantsHalveKernels) {
  for (auto [full, lf] : {std::pair{Variant::Unet, Variant::UnetLF}, std::pair{Variant::TinyUnet, Variant::TinyUnetLF},
                          std::pair{Variant::Cae, Variant::CaeLF}}) {
    const auto a = build_network(full, 16, 1), b = build_network(lf, 16, 1);
    EXPECT_LT(b.parameter_count(), a.parameter_count());
    ASSERT_EQ(a.layers.size(), b.layers.size());
    for (std::size_t i = 0; i + 1 < a.layers.size(); ++i) EXPECT_EQ(a.layers[i].out_ch, 2 * b.layers[i].out_ch);
    EXPECT_EQ(a.layers.back().out_ch, 1);
    EXPECT_EQ(b.layers.back().out_ch, 1);
  }
}

TEST(Forward, OutputShapeForEveryVariant) {
  for (auto v : kAllVariants) {
    const auto net = build_network(v, 16, 2);
    const auto y = forward(net, random_input(16, 232, 1));
    EXPECT_EQ(y.c, 1);
    EXPECT_EQ(y.h, 16);
    EXPECT_EQ(y.w, 232);
    for (double x : y.v) ASSERT_TRUE(std::isfinite(x));
  }
  const auto net = build_network(Variant::TinyUnet, 2, 2);
  EXPECT_THROW(forward(net, random_input(16, 230, 1)), DimensionError);
  EXPECT_THROW(forward(net, Tensor(3, 8, 8)), DimensionError);
  EXPECT_EQ(forward(net, random_input(24, 40, 1)).w, 40);
}

TEST(Forward, ZeroWeightsGiveZeroOutput) {
  auto net = build_network(Variant::Unet, 4, 1);
  for (auto& l : net.layers) std::fill(l.weights.begin(), l.weights.end(), 0.0);
  for (double v : forward(net, Tensor(2, 8, 16)).v) EXPECT_EQ(v, 0.0);
}

TEST(Forward, MatchesDirectConvolutionReference) {
  for (auto v : kAllVariants) {
    EpwNetwork net;
    Tensor x, t;
    test::perturbed_problem(v, 2, 8, 8, 42, net, x, t);
    const auto got = forward(net, x);
    const auto want = ref_forward(net, x);
    ASSERT_EQ(got.v.size(), want.v.size());
    for (std::size_t i = 0; i < got.v.size(); ++i) ASSERT_NEAR(got.v[i], want.v[i], 1e-12) << variant_name(v);
  }
}

TEST(Forward, ReceptiveFieldIsLocal) {
  // Column reach of the Unet: 3x3 convs add one cell per side at their
  // scale, pools and transpose convs at most two.
  for (auto v : {Variant::Unet, Variant::TinyUnet, Variant::Cae}) {
    const auto a = architecture(v, 4);
    int reach = 0;
    for (int l = 0; l < 3; ++l) reach += a.convs_per_block * (1 << l) + 2 * (1 << l);
    if (a.unet_blocks) reach += a.convs_per_block * 8;
    for (int l = 2; l >= 0; --l) reach += 2 * (2 << l) + (a.unet_blocks ? a.convs_per_block * (1 << l) : 0);
    EpwNetwork net;
    Tensor x, t;
    test::perturbed_problem(v, 4, 16, 232, 5, net, x, t);
    const auto base = forward(net, x);
    x.at(0, 8, 116) += 0.5;
    x.at(1, 8, 116) += 0.5;
    const auto moved = forward(net, x);
    bool changed = false;
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 232; ++c) {
        const bool diff = base.at(0, r, c) != moved.at(0, r, c);
        if (std::abs(c - 116) > reach) ASSERT_FALSE(diff) << variant_name(v) << " col " << c;
        changed |= diff;
      }
    EXPECT_TRUE(changed);
    EXPECT_LT(reach, 116);
  }
}

TEST(Forward, SkipAblation) {
  for (auto v : kAllVariants) {
    EpwNetwork net;
    Tensor x1, t;
    test::perturbed_problem(v, 4, 16, 32, 8, net, x1, t);
    const Tensor x2 = random_input(16, 32, 99);
    const auto y1 = forward(net, x1, {true}), y2 = forward(net, x2, {true});
    const bool unet = architecture(v, 4).skips;
    EXPECT_EQ(y1 == y2, !unet) << variant_name(v);
  }
}

TEST(Loss, Identities) {
  const auto none = single_weight_net(0.0);
  Tensor a(1, 1, 2), b(1, 1, 2);
  a.v = {1.0, 2.0};
  b.v = {1.0, 4.0};
  EXPECT_EQ(loss(a, a, none, 0.0), 0.0);
  EXPECT_NEAR(loss(a, b, none, 0.0), 2.0, 1e-12);
  EXPECT_NEAR(loss(a, a, single_weight_net(3.0), 2.0), 9.0, 1e-12);
  const auto net = build_network(Variant::TinyUnetLF, 4, 1);
  const double lam = 0.37;
  EXPECT_NEAR(loss(a, b, net, lam), loss(a, b, net, 0.0) + 0.5 * lam * net.squared_weight_norm(), 1e-12);
  Tensor c(1, 2, 1);
  EXPECT_THROW(loss(a, c, none, 0.0), DimensionError);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (auto v : {Variant::TinyUnet, Variant::CaeLF}) {
    EpwNetwork net;
    Tensor x, t;
    test::perturbed_problem(v, 1, 8, 8, 3, net, x, t);
    const auto r = test::check_gradients(net, x, t, 1e-2);
    EXPECT_GT(r.checked, 50u);
    EXPECT_LT(r.worst, 1e-4) << variant_name(v);
  }
}

TEST(Backward, PenaltyGradientAndZeroResidual) {
  EpwNetwork net;
  Tensor x, t;
  test::perturbed_problem(Variant::TinyUnetLF, 2, 8, 8, 4, net, x, t);
  const Tensor pred = forward(net, x);
  const auto zero = backward(net, x, pred, 0.0);
  EXPECT_EQ(zero.loss, 0.0);
  for (const auto& g : zero.grads.weights)
    for (double v : g) ASSERT_EQ(v, 0.0);
  const double lam = 0.25;
  const auto pen = backward(net, x, pred, lam);
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (std::size_t k = 0; k < net.layers[l].weights.size(); ++k)
      ASSERT_DOUBLE_EQ(pen.grads.weights[l][k], lam * net.layers[l].weights[k]);
}

namespace {
std::vector<TrainSample> tiny_set(std::uint64_t seed, int n) {
  const auto spec = SensorSpec::desk();
  const auto d = make_dataset(SceneConfig::road(), spec, n, 1, seed);
  return make_training_set(d.train, spec, 0);
}
}  // namespace

TEST(Train, FullBatchDescent) {
  const auto set = tiny_set(1, 1);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.learning_rate = 2e-3;
  cfg.max_epochs = 50;
  cfg.early_stop_patience = 49;
  cfg.lambda = 0.0;
  const auto r = train(build_network(Variant::TinyUnetLF, 4, 1), set, set, cfg);
  ASSERT_EQ(r.history.train_loss.size(), 50u);
  int ups = 0;
  for (std::size_t i = 1; i < r.history.train_loss.size(); ++i) ups += r.history.train_loss[i] > r.history.train_loss[i - 1];
  EXPECT_LE(ups, 2);
  EXPECT_LT(r.history.train_loss.back(), r.history.train_loss.front());
}

TEST(Train, PatienceZeroAndDeterminism) {
  const auto set = tiny_set(2, 3);
  TrainConfig cfg;
  cfg.learning_rate = 5e-2;
  cfg.max_epochs = 30;
  cfg.early_stop_patience = 0;
  const auto r = train(build_network(Variant::CaeLF, 2, 1), set, set, cfg);
  const auto& v = r.history.val_l1;
  std::size_t expect = v.size();
  double best = v.at(0);
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] < best)) {
      expect = i + 1;
      break;
    }
    best = v[i];
  }
  EXPECT_EQ(v.size(), expect);
  EXPECT_EQ(r.best_epoch, static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin()));

  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 3;
  cfg.early_stop_patience = 2;
  const auto a = train(build_network(Variant::TinyUnetLF, 2, 1), set, set, cfg);
  const auto b = train(build_network(Variant::TinyUnetLF, 2, 1), set, set, cfg);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.net, b.net);
}

TEST(Train, ConfigAndDataErrors) {
  TrainConfig cfg;
  cfg.early_stop_patience = cfg.max_epochs;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  const auto set = tiny_set(3, 1);
  EXPECT_THROW(train(build_network(Variant::Cae, 2, 1), {}, set, {}), DataError);
}

TEST(PredictFrame, EmptyAndMasked) {
  const auto spec = SensorSpec::desk();
  std::vector<EpwNetwork> nets{build_network(Variant::TinyUnetLF, 2, 1)};
  for (auto& l : nets[0].layers) std::fill(l.biases.begin(), l.biases.end(), 1.0);
  EXPECT_TRUE(predict_frame(nets, DenseFrame{}, spec).points.empty());

  const auto d = make_dataset(SceneConfig::road(), spec, 1, 1, 4);
  const auto out = predict_frame(nets, d.train[0].dense, spec);
  EXPECT_EQ(out.points.size(), truth_scan(d.train[0].dense).points.size());
  for (const auto& p : out.points) EXPECT_GE(p.epw, 0.0);

  const auto x = make_training_set(d.train, spec, 0)[0].input;
  const auto m = masked_prediction(nets[0], x);
  for (int r = 0; r < x.h; ++r)
    for (int c = 0; c < x.w; ++c)
      if (x.at(0, r, c) == 0.0) ASSERT_EQ(m.at(0, r, c), 0.0);
}

TEST(Bench, AccuracyAndTrainedBeatsUntrained) {
  Tensor a(1, 8, 8);
  for (auto& v : a.v) v = 3.0;
  EXPECT_EQ(accuracy_percent(a, a, 1.0), 100.0);
  Tensor b = a;
  b.v[0] = 5.0;
  EXPECT_DOUBLE_EQ(accuracy_percent(b, a, 1.0), 100.0 * 63 / 64);

  const auto spec = SensorSpec::desk();
  const auto set = tiny_set(5, 6);
  TrainConfig cfg;
  cfg.learning_rate = 3e-2;
  cfg.max_epochs = 4;
  cfg.early_stop_patience = 3;
  const auto untrained = build_network(Variant::TinyUnetLF, 4, 2);
  const auto r = train(untrained, set, set, cfg);
  const auto before = bench_network(untrained, set, spec.rows(), spec.cols(), 2);
  const auto after = bench_network(r.net, set, spec.rows(), spec.cols(), 2);
  EXPECT_LT(after.mse, before.mse);
  EXPECT_GT(after.latency_ms, 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  EpwNetwork net;
  Tensor x, t;
  test::perturbed_problem(Variant::Unet, 2, 8, 16, 6, net, x, t);
  net.history.train_loss = {3.0, 2.0};
  net.history.val_l1 = {1.5, 1.25};
  std::stringstream ss;
  write_checkpoint(ss, net);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "EPWM");
  std::stringstream in(bytes);
  const auto back = read_checkpoint(in);
  EXPECT_EQ(back, net);
  EXPECT_EQ(forward(back, x), forward(net, x));

  const auto path = test::temp_dir("ckpt") / "n.epwm";
  save_checkpoint(path.string(), net);
  EXPECT_EQ(load_checkpoint(path.string()), net);

  std::string bad = bytes;
  bad[0] = 'Q';
  std::stringstream s1(bad);
  EXPECT_THROW(read_checkpoint(s1), FormatError);
  std::string shape = bytes;
  shape[13] = static_cast<char>(shape[13] + 1);  // first layer out_ch
  std::stringstream s2(shape);
  EXPECT_THROW(read_checkpoint(s2), FormatError);
  std::stringstream s3(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(read_checkpoint(s3), FormatError);
}
