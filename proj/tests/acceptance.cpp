// Acceptance suite: runs every gate criterion end to end and prints one
// pass/fail line per criterion. Exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "msnas/config.hpp"
#include "msnas/evolution.hpp"
#include "oracles.hpp"

using namespace msnas;
using clock_type = std::chrono::steady_clock;

namespace {

struct Criterion {
  int id;
  const char* name;
  std::function<bool(std::string&)> run;
};

std::string g_compare_config = "configs/compare.toml";

bool approx_chance(double v, double expect, double tol) { return std::abs(v - expect) < tol; }

// --- 1: dilated convolution vs. the summation oracle and filter inflation ----

bool criterion_dilated_conv(std::string& detail) {
  Rng rng(0xACC1);
  long checked = 0;
  for (int r : {1, 2, 4, 8})
    for (int taps : {3, 5})
      for (int len = 1; len <= 12; ++len)
        for (int rep = 0; rep < 4; ++rep) {
          std::vector<double> f(static_cast<size_t>(len)), k(static_cast<size_t>(taps));
          for (auto& v : f) v = rng.normal();
          for (auto& v : k) v = rng.normal();
          Tensor x = Tensor::from({1, len, 1, 1, 1}, std::vector<real>(f.begin(), f.end()));
          Tensor w = Tensor::from({taps, 1, 1}, std::vector<real>(k.begin(), k.end()));
          const Tensor got = temporal_conv1d_dilated(x, w, r);

          const auto brute = oracles::dilated_conv_brute(f, k, r);
          const auto inflated = inflate_filter(std::vector<real>(k.begin(), k.end()), r);
          Tensor wi = Tensor::from({static_cast<int>(inflated.size()), 1, 1}, inflated);
          const Tensor via_inflation = temporal_conv1d_dilated(x, wi, 1);
          for (int t = 0; t < len; ++t) {
            const size_t i = static_cast<size_t>(t);
            if (got.values()[i] != brute[i]) {
              detail = "mismatch vs summation oracle at r=" + std::to_string(r);
              return false;
            }
            if (got.values()[i] != via_inflation.values()[i]) {
              detail = "mismatch vs inflated filter at r=" + std::to_string(r);
              return false;
            }
            ++checked;
          }
        }
  detail = std::to_string(checked) + " outputs exact";
  return true;
}

// --- 2: finite-difference gradient checks over randomized shapes --------------

bool criterion_grad_checks(std::string& detail) {
  Rng rng(0xACC2);
  const auto rand_tensor = [&](std::vector<int> shape, bool grad = true) {
    std::vector<real> data(static_cast<size_t>(numel(shape)));
    for (auto& v : data) v = static_cast<real>(rng.normal());
    return Tensor::from(std::move(shape), std::move(data), grad);
  };
  double worst = 0.0;
  std::string worst_op = "none";
  int shapes = 0;
  const auto check = [&](const char* op, double err) {
    ++shapes;
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };

  for (int round = 0; round < 5 && worst < 1e-4; ++round) {
    const int b = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int t = 3 + static_cast<int>(rng.uniform_int(0, 6));
    const int s = 2 + static_cast<int>(rng.uniform_int(0, 2));
    const int ci = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int co = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int dil = std::vector<int>{1, 2, 4, 8}[static_cast<size_t>(rng.uniform_int(0, 3))];

    Tensor x5 = rand_tensor({b, t, s, s, ci});
    check("temporal_conv1d_dilated",
          grad_check([&](const std::vector<Tensor>& in) {
            return temporal_conv1d_dilated(in[0], in[1], dil);
          }, {x5, rand_tensor({3, ci, co})}));
    check("temporal_conv1d_depthwise",
          grad_check([&](const std::vector<Tensor>& in) {
            return temporal_conv1d_depthwise(in[0], in[1], dil);
          }, {x5, rand_tensor({5, ci})}));
    const int stride = 1 + static_cast<int>(rng.uniform_int(0, 1));
    check("conv2d", grad_check([&](const std::vector<Tensor>& in) {
            return conv2d(in[0], in[1], stride);
          }, {x5, rand_tensor({3, 3, ci, co})}));
    check("conv1x1", grad_check([&](const std::vector<Tensor>& in) {
            return conv1x1(in[0], in[1]);
          }, {x5, rand_tensor({ci, co})}));
    check("max_pool_spatial", grad_check([&](const std::vector<Tensor>& in) {
            return max_pool_spatial(in[0], 2, 2);
          }, {x5}));
    check("avg_pool_spatial",
          grad_check([](const std::vector<Tensor>& in) { return avg_pool_spatial(in[0]); }, {x5}));
    check("relu", grad_check([](const std::vector<Tensor>& in) { return relu(in[0]); }, {x5}));
    check("sigmoid", grad_check([](const std::vector<Tensor>& in) { return sigmoid(in[0]); }, {x5}));
    check("add", grad_check([](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
                            {x5, rand_tensor({b, t, s, s, ci})}));
    check("gated_weighted_sum", grad_check([](const std::vector<Tensor>& in) {
            return gated_weighted_sum({in[0], in[1]}, {in[2], in[3]});
          }, {x5, rand_tensor({b, t, s, s, ci}), rand_tensor({1}), rand_tensor({1})}));
    Tensor bn_x = rand_tensor({8, t, 2, 2, ci});
    check("batch_norm", grad_check([](const std::vector<Tensor>& in) {
            BatchNormState state;
            return batch_norm(in[0], in[1], in[2], state, true);
          }, {bn_x, rand_tensor({ci}), rand_tensor({ci})}));
    Tensor btc = rand_tensor({2 + b, t, ci + 1});
    check("pool_time_avg",
          grad_check([](const std::vector<Tensor>& in) { return pool_time_avg(in[0]); }, {btc}));
    check("pool_time_max",
          grad_check([](const std::vector<Tensor>& in) { return pool_time_max(in[0]); }, {btc}));
    Tensor flat = rand_tensor({3, 7});
    check("linear", grad_check([](const std::vector<Tensor>& in) {
            return linear(in[0], in[1], in[2]);
          }, {flat, rand_tensor({7, 6}), rand_tensor({6})}));
    check("softmax",
          grad_check([](const std::vector<Tensor>& in) { return softmax(in[0]); }, {flat}));
    check("softmax_cross_entropy", grad_check([](const std::vector<Tensor>& in) {
            return softmax_cross_entropy(in[0], {1, 0, 6}, 0.2);
          }, {flat}));
    check("concat_channels", grad_check([](const std::vector<Tensor>& in) {
            return concat_channels({in[0], in[1]});
          }, {btc, rand_tensor({2 + b, t, 2})}));
    check("avg_pool_axes", grad_check([](const std::vector<Tensor>& in) {
            return avg_pool(in[0], {1, 3});
          }, {x5}));
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d shape/op checks, max rel err %.2e (%s)", shapes, worst,
                worst_op.c_str());
  detail = buf;
  return worst < 1e-4 && shapes >= 50;
}

// --- 3: exact split/merge invariance and budget conservation ------------------

bool criterion_parameter_invariance(std::string& detail) {
  const LayerSchedule schedule = LayerSchedule::desk();
  MutationConfig mcfg;
  GraphDefaults defaults;
  Rng rng(0xACC3);
  int splits = 0, merges = 0;
  for (int i = 0; i < 1000; ++i) {
    const ArchitectureGraph g = random_architecture(mcfg, defaults, rng);
    const ParameterBreakdown before = parameter_count(g, schedule);

    std::vector<NodeId> splittable;
    for (const auto& n : g.nodes)
      if (n.kind == NodeKind::Intermediate && n.channels % 2 == 0) splittable.push_back(n.id);
    if (!splittable.empty()) {
      const NodeId id = splittable[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(splittable.size()) - 1))];
      const ArchitectureGraph split = split_node(g, id, rng);
      if (parameter_count(split, schedule).block_conv != before.block_conv) {
        detail = "split changed block conv params (graph " + std::to_string(i) + ")";
        return false;
      }
      ++splits;
      // And back: merging the twins must restore the exact count.
      const auto twins = [&] {
        std::vector<NodeId> at;
        for (const auto& n : split.nodes)
          if (n.level == g.node(id).level) at.push_back(n.id);
        return at;
      }();
      if (twins.size() >= 2) {
        const ArchitectureGraph merged = merge_nodes(split, twins[0], twins[1], rng);
        if (parameter_count(merged, schedule).block_conv != before.block_conv) {
          detail = "merge changed block conv params (graph " + std::to_string(i) + ")";
          return false;
        }
        ++merges;
      }
    }

    // Budget conservation under a random operator sequence.
    if (i % 100 == 0) {
      ArchitectureGraph h = g;
      for (int step = 0; step < 10; ++step) {
        const int op = static_cast<int>(rng.uniform_int(0, 3));
        try {
          if (op == 0) {
            const auto ids = h.nodes_at_level(static_cast<int>(rng.uniform_int(1, 4)));
            h = split_node(h, ids[static_cast<size_t>(rng.uniform_int(
                                  0, static_cast<int>(ids.size()) - 1))], rng);
          } else if (op == 1) {
            const auto ids = h.nodes_at_level(static_cast<int>(rng.uniform_int(1, 4)));
            if (ids.size() >= 2) h = merge_nodes(h, ids[0], ids[1], rng);
          } else if (op == 2) {
            h = guided_edge_mutation(h, mcfg, rng);
          } else {
            h = random_edge_mutation(h, 1.0 / 3.0, rng);
          }
        } catch (const Error&) {
          continue;
        }
        for (int level = 1; level <= kNumLevels; ++level) {
          int sum = 0;
          for (const auto& n : h.nodes)
            if (n.level == level) sum += n.channels;
          if (sum != defaults.level_budget[static_cast<size_t>(level)]) {
            detail = "budget broken at level " + std::to_string(level);
            return false;
          }
        }
        if (!validate_graph(h).ok) {
          detail = "operator sequence produced an invalid graph";
          return false;
        }
      }
    }
  }
  detail = std::to_string(splits) + " splits, " + std::to_string(merges) + " merges exact";
  return true;
}

// --- 4: connection-learning-guided mutation statistics ------------------------

bool criterion_guided_statistics(std::string& detail) {
  // Two stems + one node per level: 14 slots. Four parent edges, two weak,
  // leaves 10 candidates at add-probability 2/10.
  ArchitectureGraph g;
  g.level_channel_budget = {0, 16, 32, 64, 128};
  g.nodes.push_back({0, 0, NodeKind::AppearanceStem, 8, 1, 4});
  g.nodes.push_back({1, 0, NodeKind::MotionStem, 8, 1, 4});
  g.nodes.push_back({2, 1, NodeKind::Intermediate, 16, 1, 1});
  g.nodes.push_back({3, 2, NodeKind::Intermediate, 32, 2, 2});
  g.nodes.push_back({4, 3, NodeKind::Intermediate, 64, 4, 2});
  g.nodes.push_back({5, 4, NodeKind::Intermediate, 128, 1, 2});
  g.edges = {{0, 2, 4.6}, {2, 3, 4.6}, {3, 4, -4.6}, {4, 5, -4.6}};
  g = canonicalized(std::move(g));
  if (g.all_possible_edges().size() != 14) {
    detail = "unexpected slot count";
    return false;
  }

  MutationConfig cfg;
  cfg.threshold_mode = MutationConfig::ThresholdMode::Constant;
  cfg.threshold_b = 0.5;
  Rng rng(0xACC4);
  const int trials = 10000;
  double total_added = 0;
  for (int i = 0; i < trials; ++i) {
    GuidedMutationStats stats;
    const ArchitectureGraph child = guided_edge_mutation(g, cfg, rng, &stats);
    if (stats.kept != 2 || stats.dropped != 2) {
      detail = "threshold retention wrong";
      return false;
    }
    // E_c1 subset of E_p: every nonzero-logit edge must be parental.
    for (const auto& e : child.edges) {
      const Edge* p = g.find_edge(e.src, e.dst);
      if (e.logit != 0.0 && (!p || p->logit != e.logit)) {
        detail = "non-parental edge carries a trained gate";
        return false;
      }
    }
    total_added += stats.added;
  }
  const auto bound = oracles::binomial_mean_bound(10, 0.2, trials);
  const double mean_added = total_added / trials;
  if (std::abs(mean_added - bound.mean) >= bound.three_sigma) {
    detail = "mean additions " + std::to_string(mean_added) + " outside 3 sigma of 2.0";
    return false;
  }

  // Uniform threshold: retention frequency equals the gate.
  for (double gate_target : {0.3, 0.7}) {
    ArchitectureGraph h = g;
    const double logit = std::log(gate_target / (1.0 - gate_target));
    h.edges[1].logit = logit;
    MutationConfig ucfg;  // uniform mode
    int retained = 0;
    for (int i = 0; i < trials; ++i) {
      const ArchitectureGraph child = guided_edge_mutation(h, ucfg, rng, nullptr);
      const Edge* e = child.find_edge(h.edges[1].src, h.edges[1].dst);
      if (e && e->logit == logit) ++retained;
    }
    const auto freq_bound = oracles::bernoulli_freq_bound(gate_target, trials);
    if (std::abs(static_cast<double>(retained) / trials - gate_target) >=
        freq_bound.three_sigma) {
      detail = "retention frequency off for gate " + std::to_string(gate_target);
      return false;
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "mean additions %.3f (expect 2.0 +- %.3f)", mean_added,
                bound.three_sigma);
  detail = buf;
  return true;
}

// --- 5: bundled reference model fidelity ---------------------------------------

bool criterion_reference_fidelity(std::string& detail) {
  std::string text;
  {
    // The shipped table sits next to the compare config.
    std::string path = g_compare_config;
    const auto slash = path.find_last_of('/');
    path = (slash == std::string::npos ? std::string() : path.substr(0, slash + 1)) +
           "reference.arch";
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) f = std::fopen("configs/reference.arch", "rb");
    if (!f) {
      detail = "reference.arch not found next to the compare config";
      return false;
    }
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
    std::fclose(f);
  }
  const ArchitectureGraph g = decode_table(text);

  struct Row {
    int level;
    std::vector<NodeId> inputs;
    int c, r, stride;
  };
  const std::vector<Row> expected = {
      {0, {}, 32, 4, 4},          {0, {}, 32, 4, 4},
      {0, {}, 32, 1, 4},          {0, {}, 32, 1, 4},
      {1, {1}, 32, 1, 1},         {1, {0}, 32, 4, 1},
      {1, {0, 1, 2, 3}, 32, 1, 1}, {1, {2, 3}, 32, 2, 1},
      {2, {0, 4, 5, 6, 7}, 64, 2, 2}, {2, {0, 2, 4, 7}, 64, 1, 2},
      {2, {0, 5, 7}, 64, 4, 2},   {2, {0, 5}, 64, 1, 2},
      {3, {4, 8, 10, 11}, 256, 1, 2}, {3, {8, 9}, 256, 4, 2},
      {4, {12, 13}, 512, 2, 2},
  };
  if (g.nodes.size() != expected.size()) {
    detail = "node count " + std::to_string(g.nodes.size());
    return false;
  }
  for (size_t i = 0; i < expected.size(); ++i) {
    const BlockNode& n = g.node(static_cast<NodeId>(i));
    const Row& e = expected[i];
    if (n.level != e.level || n.channels != e.c || n.temporal_resolution != e.r ||
        n.spatial_stride != e.stride || g.inputs_of(n.id) != e.inputs) {
      detail = "row " + std::to_string(i) + " mismatch";
      return false;
    }
  }
  if (!validate_graph(g).ok) {
    detail = "reference model fails validation";
    return false;
  }
  if (decode_table(encode_table(g)) != g) {
    detail = "encode/decode round trip not the identity";
    return false;
  }

  ExecutableNetwork net = compile(g, LayerSchedule::desk());
  Rng rng(0xACC5);
  const auto input = [&](int c) {
    std::vector<real> data(static_cast<size_t>(8) * 16 * 16 * 16 * c);
    for (auto& v : data) v = static_cast<real>(rng.normal());
    return Tensor::from({8, 16, 16, 16, c}, std::move(data));
  };
  const Tensor probs = net.predict(input(2), input(2));
  for (real v : probs.values())
    if (!std::isfinite(static_cast<double>(v))) {
      detail = "non-finite output";
      return false;
    }
  detail = "15 rows match; compiles and runs at desk scale (" +
           std::to_string(net.num_trainable()) + " parameters)";
  return true;
}

// --- 6: baseline menagerie trains above chance ---------------------------------

bool criterion_baselines(std::string& detail) {
  const ProxyConfig proxy;  // desk defaults: 12 classes, 16x16x16
  const Dataset ds = generate_dataset(proxy);
  const double chance_bar = 2.0 / proxy.num_classes;
  std::string parts;
  for (const auto& name : baseline_names()) {
    const auto t0 = clock_type::now();
    const ArchitectureGraph g = build_baseline(baseline_from_string(name));
    LayerSchedule schedule = LayerSchedule::desk();
    schedule.num_classes = proxy.num_classes;
    CompileOptions copts;
    copts.init_seed = 0xACC6;
    ExecutableNetwork net = compile(g, schedule, copts);
    TrainerConfig tcfg;
    tcfg.iterations = 700;  // within the 1000-iteration budget
    tcfg.seed = 0xACC6;
    train(net, ds, tcfg);
    const EvalResult ev = evaluate(net, ds);
    const double secs = std::chrono::duration<double>(clock_type::now() - t0).count();
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s top1=%.3f (%.0fs) ", name.c_str(), ev.top1, secs);
    parts += buf;
    if (ev.top1 <= chance_bar) {
      detail = parts + "- top1 below 2/num_classes";
      return false;
    }
    if (secs > 300.0) {
      detail = parts + "- exceeded 5 minutes";
      return false;
    }
  }
  detail = parts;
  return true;
}

// --- 7: guided vs. random search comparison ------------------------------------

bool criterion_search_comparison(std::string& detail) {
  RunConfig run = default_run_config();
  try {
    run = load_config(g_compare_config);
  } catch (const std::exception& e) {
    detail = std::string("cannot load compare config: ") + e.what();
    return false;
  }
  SearchConfig cfg = run.search;
  if (cfg.population_size != 20 || cfg.tournament_size != 5 || cfg.rounds != 40) {
    detail = "compare config must use population 20, tournament 5, 40 rounds";
    return false;
  }
  const std::vector<Strategy> strategies{Strategy::Guided, Strategy::StandardRandomEdges,
                                         Strategy::PureRandomSearch};
  const std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
  const int workers = std::max(2u, std::thread::hardware_concurrency());

  const auto t0 = clock_type::now();
  const CompareResult result = compare_strategies(cfg, strategies, seeds, workers);
  const double secs = std::chrono::duration<double>(clock_type::now() - t0).count();

  const auto summary_of = [&](Strategy s) {
    for (const auto& sum : result.summaries)
      if (sum.strategy == to_string(s)) return sum;
    return CompareResult::Summary{};
  };
  const auto guided = summary_of(Strategy::Guided);
  const auto standard = summary_of(Strategy::StandardRandomEdges);
  const auto pure = summary_of(Strategy::PureRandomSearch);

  int wins_vs_standard = 0, wins_vs_pure = 0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (guided.per_seed_final[i] > standard.per_seed_final[i]) ++wins_vs_standard;
    if (guided.per_seed_final[i] > pure.per_seed_final[i]) ++wins_vs_pure;
  }

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "guided %.3f+-%.3f, random-edges %.3f+-%.3f, random-search %.3f+-%.3f; "
                "guided wins %d/5 and %d/5 seeds; %.0fs",
                guided.final_top3_mean, guided.final_top3_std, standard.final_top3_mean,
                standard.final_top3_std, pure.final_top3_mean, pure.final_top3_std,
                wins_vs_standard, wins_vs_pure, secs);
  detail = buf;

  return guided.final_top3_mean >= standard.final_top3_mean &&
         guided.final_top3_mean >= pure.final_top3_mean && wins_vs_standard >= 4 &&
         wins_vs_pure >= 4 && secs < 3600.0;
}

// --- 8: determinism and checkpointing --------------------------------------------

bool criterion_determinism(std::string& detail) {
  SearchConfig cfg;
  cfg.population_size = 4;
  cfg.tournament_size = 2;
  cfg.init_rounds = 4;
  cfg.rounds = 4;
  cfg.seed = 21;
  cfg.space.level_budget = {0, 8, 8, 16, 16};
  cfg.space.stem_channels = 4;
  cfg.schedule.d_per_level = {0, 4, 4, 8, 8};
  cfg.schedule.stem_channels = 4;
  cfg.proxy.num_classes = 6;
  cfg.proxy.clips_per_class = 4;
  cfg.proxy.frames = 8;
  cfg.proxy.spatial = 8;
  cfg.trainer.iterations = 8;

  for (int workers : {1, 2}) {
    SearchConfig c = cfg;
    c.workers = workers;
    const SearchState a = run_search(c);
    const SearchState b = run_search(c);
    if (history_csv(a) != history_csv(b)) {
      detail = "history differs across reruns at workers=" + std::to_string(workers);
      return false;
    }
  }

  const SearchState full = run_search(cfg);
  SearchConfig half_cfg = cfg;
  half_cfg.rounds = 2;
  SearchState half = run_search(half_cfg);
  checkpoint_save(half, "acceptance_ckpt.json");
  SearchState resumed = checkpoint_load("acceptance_ckpt.json");
  std::remove("acceptance_ckpt.json");
  resumed.cfg.rounds = cfg.rounds;
  const SearchState finished = resume_search(std::move(resumed));
  if (history_csv(finished) != history_csv(full)) {
    detail = "resumed run differs from the uninterrupted run";
    return false;
  }
  detail = "rerun and resume histories byte-identical (workers 1 and 2)";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) g_compare_config = argv[++i];
    else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only.push_back(std::atoi(argv[++i]));
  }

  const std::vector<Criterion> criteria = {
      {1, "dilated-conv oracle equivalence", criterion_dilated_conv},
      {2, "gradient checks (64-bit, rel err < 1e-4)", criterion_grad_checks},
      {3, "split/merge parameter invariance", criterion_parameter_invariance},
      {4, "guided edge mutation statistics", criterion_guided_statistics},
      {5, "reference model fidelity", criterion_reference_fidelity},
      {6, "baseline menagerie trains above chance", criterion_baselines},
      {7, "guided vs. random search comparison", criterion_search_comparison},
      {8, "determinism and checkpoint resume", criterion_determinism},
  };

  setvbuf(stdout, nullptr, _IONBF, 0);
  bool all_pass = true;
  for (const auto& criterion : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), criterion.id) == only.end())
      continue;
    const auto t0 = clock_type::now();
    std::string detail;
    bool pass = false;
    try {
      pass = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(clock_type::now() - t0).count();
    std::printf("[%d] %-45s %s (%.1fs) %s\n", criterion.id, criterion.name,
                pass ? "PASS" : "FAIL", secs, detail.c_str());
    all_pass &= pass;
  }
  return all_pass ? 0 : 1;
}
