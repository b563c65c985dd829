#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "msnas/evolution.hpp"
#include "msnas/proxy.hpp"
#include "oracles.hpp"

using namespace msnas;

namespace {

ProxyConfig tiny_proxy() {
  ProxyConfig cfg;
  cfg.num_classes = 6;
  cfg.clips_per_class = 5;
  cfg.frames = 8;
  cfg.spatial = 8;
  cfg.motion_periods = {2, 4, 8};
  cfg.seed = 3;
  return cfg;
}

GraphDefaults tiny_space() {
  GraphDefaults d;
  d.level_budget = {0, 8, 8, 16, 16};
  d.stem_channels = 4;
  return d;
}

LayerSchedule tiny_schedule(int classes) {
  LayerSchedule s;
  s.d_per_level = {0, 4, 4, 8, 8};
  s.stem_channels = 4;
  s.num_classes = classes;
  return s;
}

ArchitectureGraph tiny_chain(const GraphDefaults& d) {
  ArchitectureGraph g;
  g.level_channel_budget = d.level_budget;
  g.nodes.push_back({0, 0, NodeKind::AppearanceStem, d.stem_channels, 1, 4});
  g.nodes.push_back({1, 0, NodeKind::MotionStem, d.stem_channels, 1, 4});
  g.nodes.push_back({2, 1, NodeKind::Intermediate, d.level_budget[1], 1, 1});
  g.nodes.push_back({3, 2, NodeKind::Intermediate, d.level_budget[2], 2, 2});
  g.nodes.push_back({4, 3, NodeKind::Intermediate, d.level_budget[3], 4, 2});
  g.nodes.push_back({5, 4, NodeKind::Intermediate, d.level_budget[4], 2, 2});
  g.edges = {{0, 2, 0.0}, {1, 2, 0.0}, {2, 3, 0.0}, {3, 4, 0.0}, {4, 5, 0.0}};
  return canonicalized(std::move(g));
}

// Multinomial logistic regression on time-averaged appearance frames: the
// motion-blind probe used to audit class separability.
double appearance_probe_top1(const Dataset& ds) {
  const int S = ds.cfg.spatial, T = ds.cfg.frames, C = ds.cfg.channels_appearance;
  const int dim = S * S * C + 1;
  const int K = ds.cfg.num_classes;
  const auto features = [&](const Clip& clip) {
    std::vector<double> f(static_cast<size_t>(dim), 0.0);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < S * S * C; ++i)
        f[static_cast<size_t>(i)] +=
            clip.appearance[static_cast<size_t>(t * S * S * C + i)] / T;
    f[static_cast<size_t>(dim - 1)] = 1.0;  // bias
    return f;
  };

  std::vector<double> w(static_cast<size_t>(K * dim), 0.0);
  const double lr = 0.5;
  for (int epoch = 0; epoch < 120; ++epoch) {
    for (int id : ds.train_indices) {
      const Clip& clip = ds.clips[static_cast<size_t>(id)];
      const auto f = features(clip);
      std::vector<double> logits(static_cast<size_t>(K), 0.0);
      double mx = -1e300;
      for (int k = 0; k < K; ++k) {
        for (int i = 0; i < dim; ++i)
          logits[static_cast<size_t>(k)] += w[static_cast<size_t>(k * dim + i)] * f[static_cast<size_t>(i)];
        mx = std::max(mx, logits[static_cast<size_t>(k)]);
      }
      double z = 0;
      for (int k = 0; k < K; ++k) z += std::exp(logits[static_cast<size_t>(k)] - mx);
      for (int k = 0; k < K; ++k) {
        const double p = std::exp(logits[static_cast<size_t>(k)] - mx) / z;
        const double g = p - (k == clip.label ? 1.0 : 0.0);
        for (int i = 0; i < dim; ++i)
          w[static_cast<size_t>(k * dim + i)] -= lr * g * f[static_cast<size_t>(i)];
      }
    }
  }

  int hits = 0;
  for (int id : ds.val_indices) {
    const Clip& clip = ds.clips[static_cast<size_t>(id)];
    const auto f = features(clip);
    int best = 0;
    double best_v = -1e300;
    for (int k = 0; k < K; ++k) {
      double v = 0;
      for (int i = 0; i < dim; ++i)
        v += w[static_cast<size_t>(k * dim + i)] * f[static_cast<size_t>(i)];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (best == clip.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.val_indices.size());
}

}  // namespace

TEST_CASE("dataset generation is deterministic and factorial") {
  ProxyConfig cfg;  // 12 classes = 4 appearance groups x 3 motion periods
  cfg.clips_per_class = 4;
  const Dataset a = generate_dataset(cfg);
  const Dataset b = generate_dataset(cfg);
  REQUIRE(a.clips.size() == 48);
  CHECK(a.appearance_groups() == 4);
  for (size_t i = 0; i < a.clips.size(); ++i) {
    CHECK(a.clips[i].label == b.clips[i].label);
    CHECK(a.clips[i].appearance == b.clips[i].appearance);
    CHECK(a.clips[i].motion == b.clips[i].motion);
  }
  // 20% fixed split: 1 of 4 clips per class held out.
  CHECK(a.val_indices.size() == 12);
  CHECK(a.train_indices.size() == 36);

  ProxyConfig different = cfg;
  different.seed = 5;
  const Dataset c = generate_dataset(different);
  CHECK(c.clips[0].appearance != a.clips[0].appearance);
}

TEST_CASE("degenerate proxy configurations are rejected") {
  ProxyConfig cfg;
  cfg.num_classes = 5;
  CHECK_THROWS_AS(generate_dataset(cfg), Error);  // top-5 undefined
  cfg = ProxyConfig{};
  cfg.num_classes = 10;  // not a multiple of 3 periods
  CHECK_THROWS_AS(generate_dataset(cfg), Error);
  cfg = ProxyConfig{};
  cfg.spatial = 4;
  CHECK_THROWS_AS(generate_dataset(cfg), Error);
  cfg = ProxyConfig{};
  cfg.motion_periods = {2, 4, 32};  // period exceeds the clip length
  CHECK_THROWS_AS(generate_dataset(cfg), Error);
}

TEST_CASE("a motion-blind linear probe cannot separate classes within a group") {
  ProxyConfig cfg;
  cfg.num_classes = 12;
  cfg.clips_per_class = 20;
  cfg.spatial = 8;
  cfg.frames = 8;
  const Dataset ds = generate_dataset(cfg);
  const double top1 = appearance_probe_top1(ds);
  // Appearance identifies the 4 groups but not the 3 periods inside each:
  // the probe should score near 1/3 and is bounded well below mastery.
  CHECK(top1 <= 1.0 / 3.0 + 0.12);
  CHECK(top1 >= 0.15);  // the appearance signal itself is learnable
}

TEST_CASE("lr schedule: warmup then cosine decay") {
  TrainerConfig cfg;
  cfg.iterations = 200;
  cfg.lr = 0.4;
  cfg.warmup = 20;
  CHECK(lr_schedule(0, cfg) == 0.0);
  CHECK(lr_schedule(10, cfg) == doctest::Approx(0.2));
  CHECK(lr_schedule(20, cfg) == doctest::Approx(0.4));
  CHECK(lr_schedule(110, cfg) == doctest::Approx(0.2));  // cosine midpoint
  CHECK(lr_schedule(200, cfg) < 1e-12);
  CHECK_THROWS_AS(lr_schedule(-1, cfg), Error);
  cfg.warmup = 300;
  CHECK_THROWS_AS(lr_schedule(0, cfg), Error);
  // Default warmup is 5% of the iteration budget.
  cfg.warmup = -1;
  cfg.iterations = 100;
  CHECK(lr_schedule(5, cfg) == doctest::Approx(cfg.lr));
}

TEST_CASE("zero-iteration training leaves the network untouched") {
  const GraphDefaults space = tiny_space();
  ArchitectureGraph g = tiny_chain(space);
  g.edges[0].logit = 0.25;
  ExecutableNetwork net = compile(g, tiny_schedule(6));
  const Dataset ds = generate_dataset(tiny_proxy());
  TrainerConfig cfg;
  cfg.iterations = 0;
  const TrainResult r = train(net, ds, cfg);
  CHECK(r.steps == 0);
  CHECK(r.gates.at({0, 2}) == 0.25);  // gates at init
  CHECK(net.graph_with_trained_logits() == g);
}

TEST_CASE("training reduces the loss, moves the gates, and is bit-reproducible") {
  const GraphDefaults space = tiny_space();
  const Dataset ds = generate_dataset(tiny_proxy());

  const auto run = [&] {
    CompileOptions opts;
    opts.init_seed = 17;
    ExecutableNetwork net = compile(tiny_chain(space), tiny_schedule(6), opts);
    TrainerConfig cfg;
    cfg.iterations = 60;
    cfg.batch = 8;
    cfg.lr = 0.05;
    cfg.seed = 5;
    const TrainResult r = train(net, ds, cfg);
    return std::make_pair(r, net.parameters()[0].values());
  };

  const auto [r1, params1] = run();
  CHECK(r1.steps == 60);
  CHECK(r1.final_loss < r1.initial_loss);
  bool gate_moved = false;
  for (const auto& [edge, logit] : r1.gates) gate_moved |= logit != 0.0;
  CHECK(gate_moved);

  const auto [r2, params2] = run();
  CHECK(params1 == params2);  // bit-identical reruns
  CHECK(r1.final_loss == r2.final_loss);
}

TEST_CASE("weight decay shrinks unused weights by exactly (1 - lr*wd) per step") {
  // The second appearance stem never feeds anything, so its parameters see
  // zero data gradient and only decay.
  GraphDefaults space = tiny_space();
  ArchitectureGraph g = tiny_chain(space);
  BlockNode dead;
  dead.id = 6;
  dead.level = 0;
  dead.kind = NodeKind::AppearanceStem;
  dead.channels = space.stem_channels;
  dead.spatial_stride = 4;
  g.nodes.push_back(dead);
  g = canonicalized(std::move(g));
  REQUIRE(validate_graph(g).ok);

  ExecutableNetwork before = compile(g, tiny_schedule(6));
  ExecutableNetwork net = compile(g, tiny_schedule(6));
  const Dataset ds = generate_dataset(tiny_proxy());
  TrainerConfig cfg;
  cfg.iterations = 1;
  cfg.warmup = 0;  // step 0 already runs at the base rate
  cfg.lr = 0.05;
  cfg.weight_decay = 1e-2;
  cfg.momentum = 0.0;
  train(net, ds, cfg);

  // With zero data gradient the update is w -= lr * (wd * w), i.e. the
  // weight shrinks by the factor (1 - lr*wd).
  const real lr = static_cast<real>(cfg.lr);
  const real wd = static_cast<real>(cfg.weight_decay);
  long long decayed_exactly = 0, total = 0;
  for (size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& old_vals = before.parameters()[i].values();
    const auto& new_vals = net.parameters()[i].values();
    for (size_t j = 0; j < old_vals.size(); ++j) {
      ++total;
      if (new_vals[j] == old_vals[j] - lr * (wd * old_vals[j])) ++decayed_exactly;
    }
  }
  // The dead stem holds a 7x7 conv (49*2*4), its BN pair, a temporal conv
  // (5*4*4) and its BN pair: 392 + 8 + 80 + 8 = 488 parameters.
  CHECK(decayed_exactly >= 488);
  CHECK(decayed_exactly < total);  // live weights moved by data gradients too
}

TEST_CASE("evaluation: top5 dominates top1 and untrained nets sit at chance") {
  const GraphDefaults space = tiny_space();
  const Dataset ds = generate_dataset(tiny_proxy());
  double top1_sum = 0;
  const int nets = 12;
  for (int i = 0; i < nets; ++i) {
    CompileOptions opts;
    opts.init_seed = 1000 + static_cast<uint64_t>(i);
    ExecutableNetwork net = compile(tiny_chain(space), tiny_schedule(6), opts);
    const EvalResult r = evaluate(net, ds);
    CHECK(r.top5 >= r.top1);
    top1_sum += r.top1;
  }
  // 6 classes: expected top-1 of random networks is 1/6.
  const double mean_top1 = top1_sum / nets;
  CHECK(mean_top1 > 1.0 / 6.0 - 0.15);
  CHECK(mean_top1 < 1.0 / 6.0 + 0.15);
}

TEST_CASE("a small network memorizes the training split") {
  const GraphDefaults space = tiny_space();
  ProxyConfig pcfg = tiny_proxy();
  pcfg.clips_per_class = 3;
  const Dataset ds = generate_dataset(pcfg);
  CompileOptions opts;
  opts.init_seed = 3;
  ExecutableNetwork net = compile(tiny_chain(space), tiny_schedule(6), opts);
  TrainerConfig cfg;
  cfg.iterations = 240;
  cfg.lr = 0.04;
  cfg.seed = 11;
  const TrainResult r = train(net, ds, cfg);
  CHECK(r.final_loss < r.initial_loss);
  const EvalResult on_train = evaluate_on(net, ds, ds.train_indices);
  CHECK(on_train.top1 >= 0.8);  // near-perfect memorization of 12 clips
  CHECK(on_train.top5 >= on_train.top1);
}

TEST_CASE("dataset files round-trip") {
  const Dataset ds = generate_dataset(tiny_proxy());
  const std::string path = "tiny_dataset.bin";
  save_dataset(ds, path);
  const Dataset loaded = load_dataset(path);
  CHECK(loaded.cfg.num_classes == ds.cfg.num_classes);
  CHECK(loaded.cfg.seed == ds.cfg.seed);
  CHECK(loaded.cfg.motion_periods == ds.cfg.motion_periods);
  REQUIRE(loaded.clips.size() == ds.clips.size());
  for (size_t i = 0; i < ds.clips.size(); ++i) {
    CHECK(loaded.clips[i].label == ds.clips[i].label);
    CHECK(loaded.clips[i].appearance == ds.clips[i].appearance);
    CHECK(loaded.clips[i].motion == ds.clips[i].motion);
  }
  CHECK(loaded.train_indices == ds.train_indices);

  // Truncated files are detected.
  {
    std::FILE* f = std::fopen(path.c_str(), "rb+");
    REQUIRE(f);
    std::fclose(f);
    std::FILE* t = std::fopen("truncated.bin", "wb");
    std::string bytes;
    {
      std::FILE* src = std::fopen(path.c_str(), "rb");
      char buf[4096];
      size_t n;
      while ((n = std::fread(buf, 1, sizeof buf, src)) > 0) bytes.append(buf, n);
      std::fclose(src);
    }
    std::fwrite(bytes.data(), 1, bytes.size() / 2, t);
    std::fclose(t);
  }
  CHECK_THROWS_AS(load_dataset("truncated.bin"), IoError);
  CHECK_THROWS_AS(load_dataset("missing.bin"), IoError);
  std::remove(path.c_str());
  std::remove("truncated.bin");
}
