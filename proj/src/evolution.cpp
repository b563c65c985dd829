#include "msnas/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace msnas {

using nlohmann::json;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Guided: return "guided";
    case Strategy::StandardRandomEdges: return "standard_random_edges";
    case Strategy::PureRandomSearch: return "pure_random_search";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& name) {
  for (Strategy s : {Strategy::Guided, Strategy::StandardRandomEdges, Strategy::PureRandomSearch})
    if (name == to_string(s)) return s;
  throw Error("unknown strategy '" + name + "'");
}

void SearchConfig::validate() const {
  if (population_size < 2) throw ConfigError("population_size must be >= 2");
  if (tournament_size < 1 || tournament_size > population_size)
    throw ConfigError("tournament_size must lie in [1, population_size]");
  if (init_rounds < population_size)
    throw ConfigError("init_rounds must cover the population size");
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (proxy.num_classes < 6) throw ConfigError("proxy.num_classes must be >= 6");
  if (trainer.warmup > trainer.iterations)
    throw ConfigError("trainer.warmup must not exceed trainer.iterations");
  if (mutation.init_edge_prob <= 0.0 || mutation.init_edge_prob > 1.0)
    throw ConfigError("mutation.init_edge_prob must lie in (0,1]");
}

double fitness_of(ExecutableNetwork& net, const Dataset& ds) {
  if (net.num_classes() < 6) throw Error("fitness: top-5 needs at least 6 classes");
  const EvalResult r = evaluate(net, ds);
  return r.top1 + r.top5;
}

int tournament_select(const std::vector<Evaluated>& population, int k, Rng& rng) {
  if (population.empty()) throw Error("tournament_select: empty population");
  if (k < 1 || k > static_cast<int>(population.size()))
    throw Error("tournament_select: k out of range");
  const auto subset = rng.sample_without_replacement(static_cast<int>(population.size()), k);
  int best = -1;
  for (int idx : subset)
    if (best < 0 || population[static_cast<size_t>(idx)].fitness >
                        population[static_cast<size_t>(best)].fitness ||
        (population[static_cast<size_t>(idx)].fitness ==
             population[static_cast<size_t>(best)].fitness &&
         idx < best))
      best = idx;
  return best;
}

ChildOutcome make_child(const Evaluated& parent, Strategy strategy, const SearchConfig& cfg,
                        Rng& rng) {
  ChildOutcome out;
  char buf[96];
  switch (strategy) {
    case Strategy::Guided: {
      GuidedMutationStats st;
      out.graph = guided_edge_mutation(parent.graph, cfg.mutation, rng, &st);
      std::snprintf(buf, sizeof buf, "guided kept=%d dropped=%d added=%d repaired=%d", st.kept,
                    st.dropped, st.added, st.repaired);
      out.note = buf;
      break;
    }
    case Strategy::StandardRandomEdges: {
      int toggled = 0;
      out.graph = random_edge_mutation(parent.graph, 1.0 / 3.0, rng, &toggled);
      std::snprintf(buf, sizeof buf, "random-edges toggled=%d", toggled);
      out.note = buf;
      break;
    }
    case Strategy::PureRandomSearch:
      out.graph = random_architecture(cfg.mutation, cfg.space, rng);
      out.note = "random";
      return out;
  }

  out.node_ops = static_cast<int>(rng.uniform_int(0, cfg.mutation.max_node_ops));
  for (int op = 0; op < out.node_ops; ++op) {
    bool applied = false;
    for (int attempt = 0; attempt < 20 && !applied; ++attempt) {
      const int kind = static_cast<int>(rng.uniform_int(0, 2));
      if (kind == 0) {  // split
        std::vector<NodeId> eligible;
        for (const auto& n : out.graph.nodes)
          if (n.kind == NodeKind::Intermediate && n.channels % 2 == 0) eligible.push_back(n.id);
        if (eligible.empty()) continue;
        const NodeId id = eligible[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
        out.graph = split_node(out.graph, id, rng);
        out.note += " split";
        applied = true;
      } else if (kind == 1) {  // merge
        std::vector<int> levels;
        for (int level = 1; level <= kNumLevels; ++level)
          if (out.graph.nodes_at_level(level).size() >= 2) levels.push_back(level);
        if (levels.empty()) continue;
        const int level = levels[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(levels.size()) - 1))];
        const auto ids = out.graph.nodes_at_level(level);
        const auto pick = rng.sample_without_replacement(static_cast<int>(ids.size()), 2);
        out.graph = merge_nodes(out.graph, ids[static_cast<size_t>(pick[0])],
                                ids[static_cast<size_t>(pick[1])], rng);
        out.note += " merge";
        applied = true;
      } else {  // temporal resolution change
        std::vector<NodeId> eligible;
        for (const auto& n : out.graph.nodes)
          if (resolution_mutable(n)) eligible.push_back(n.id);
        if (eligible.empty()) continue;
        const NodeId id = eligible[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
        out.graph = change_temporal_resolution(out.graph, id, rng, cfg.mutation.allowed_resolutions);
        out.note += " res";
        applied = true;
      }
    }
  }
  return out;
}

namespace {

struct Pending {
  int round = 0;
  ArchitectureGraph graph;
  std::string note;
};

Pending produce_candidate(const SearchConfig& cfg, const std::vector<Evaluated>& snapshot,
                          int round) {
  Pending p;
  p.round = round;
  Rng rng(derive_seed(cfg.seed, 2ULL * static_cast<uint64_t>(round)));
  if (round < cfg.init_rounds || cfg.strategy == Strategy::PureRandomSearch || snapshot.empty()) {
    p.graph = random_architecture(cfg.mutation, cfg.space, rng);
    p.note = "random";
  } else {
    const int parent = tournament_select(snapshot, cfg.tournament_size, rng);
    ChildOutcome child = make_child(snapshot[static_cast<size_t>(parent)], cfg.strategy, cfg, rng);
    p.graph = std::move(child.graph);
    p.note = std::move(child.note);
  }
  return p;
}

Evaluated evaluate_candidate(const SearchConfig& cfg, const Dataset& ds, Pending& p) {
  Evaluated ev;
  ev.graph = p.graph;
  // One fixed evaluation stream per run (common random numbers): fitness
  // is a pure function of the architecture, so selection compares
  // structures instead of training luck.
  const uint64_t eval_seed = derive_seed(cfg.seed, 0xE7A1ULL);
  try {
    CompileOptions copts = cfg.compile_opts;
    copts.init_seed = eval_seed;
    LayerSchedule sched = cfg.schedule;
    sched.num_classes = cfg.proxy.num_classes;
    ExecutableNetwork net = compile(ev.graph, sched, copts);
    TrainerConfig tcfg = cfg.trainer;
    tcfg.seed = derive_seed(eval_seed, 0x7ea1ULL);
    train(net, ds, tcfg);
    const EvalResult r = evaluate(net, ds);
    ev.top1 = r.top1;
    ev.top5 = r.top5;
    ev.fitness = r.top1 + r.top5;
    ev.graph = net.graph_with_trained_logits();
  } catch (const std::exception& e) {
    ev.fitness = 0.0;  // failed candidates score zero and the search continues
    p.note += std::string(" [failed: ") + e.what() + "]";
  }
  return ev;
}

void commit(SearchState& state, Evaluated ev, std::string note, const RoundCallback& on_round) {
  const double child_fitness = ev.fitness;
  if (!state.has_best || ev.fitness > state.best.fitness) {
    state.best = ev;
    state.has_best = true;
  }
  state.population.push_back(std::move(ev));
  if (static_cast<int>(state.population.size()) > state.cfg.population_size) {
    size_t worst = 0;
    for (size_t i = 1; i < state.population.size(); ++i)
      if (state.population[i].fitness < state.population[worst].fitness) worst = i;
    state.population.erase(state.population.begin() + static_cast<long>(worst));
  }

  std::vector<double> fits;
  fits.reserve(state.population.size());
  for (const auto& m : state.population) fits.push_back(m.fitness);
  std::sort(fits.rbegin(), fits.rend());
  const size_t top = std::min<size_t>(3, fits.size());
  double top3 = 0.0;
  for (size_t i = 0; i < top; ++i) top3 += fits[i];
  top3 /= static_cast<double>(top);

  RoundRecord rec;
  rec.round = state.rounds_done;
  rec.child_fitness = child_fitness;
  rec.best = state.best.fitness;
  rec.top3_mean = top3;
  rec.note = std::move(note);
  state.history.push_back(rec);
  ++state.rounds_done;
  if (on_round) on_round(state.history.back());
}

}  // namespace

SearchState init_search(const SearchConfig& cfg) {
  cfg.validate();
  SearchState state;
  state.cfg = cfg;
  return state;
}

void evolve_round(SearchState& state, const Dataset& ds) {
  Pending p = produce_candidate(state.cfg, state.population, state.rounds_done);
  Evaluated ev = evaluate_candidate(state.cfg, ds, p);
  commit(state, std::move(ev), std::move(p.note), {});
}

SearchState resume_search(SearchState state, const RunOptions& options) {
  state.cfg.validate();
  Dataset local;
  const Dataset* ds = options.dataset;
  if (!ds) {
    local = generate_dataset(state.cfg.proxy);
    ds = &local;
  }

  const int total = state.cfg.total_rounds();
  const int w = std::max(1, state.cfg.workers);
  while (state.rounds_done < total) {
    const int start = state.rounds_done;
    const int end = std::min(total, (start / w + 1) * w);

    std::vector<Pending> pending;
    for (int r = start; r < end; ++r)
      pending.push_back(produce_candidate(state.cfg, state.population, r));

    std::vector<Evaluated> results(pending.size());
    if (pending.size() == 1) {
      results[0] = evaluate_candidate(state.cfg, *ds, pending[0]);
    } else {
      std::vector<std::thread> pool;
      for (size_t i = 0; i < pending.size(); ++i)
        pool.emplace_back([&, i] { results[i] = evaluate_candidate(state.cfg, *ds, pending[i]); });
      for (auto& t : pool) t.join();
    }
    for (size_t i = 0; i < pending.size(); ++i)
      commit(state, std::move(results[i]), std::move(pending[i].note), options.on_round);

    if (!options.checkpoint_path.empty()) {
      const int every = options.checkpoint_every;
      const bool crossed = every > 0 && state.rounds_done / every > start / every;
      if (crossed || state.rounds_done == total)
        checkpoint_save(state, options.checkpoint_path);
    }
  }
  return state;
}

SearchState run_search(const SearchConfig& cfg, const RunOptions& options) {
  return resume_search(init_search(cfg), options);
}

// --- checkpointing ---------------------------------------------------------

namespace {

json config_to_json(const SearchConfig& c) {
  json j;
  j["population_size"] = c.population_size;
  j["tournament_size"] = c.tournament_size;
  j["init_rounds"] = c.init_rounds;
  j["rounds"] = c.rounds;
  j["strategy"] = to_string(c.strategy);
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["mutation"] = {
      {"threshold_mode",
       c.mutation.threshold_mode == MutationConfig::ThresholdMode::Constant ? "constant"
                                                                            : "uniform"},
      {"threshold_b", c.mutation.threshold_b},
      {"max_node_ops", c.mutation.max_node_ops},
      {"allowed_resolutions", c.mutation.allowed_resolutions},
      {"init_edge_prob", c.mutation.init_edge_prob},
      {"init_splits_min", c.mutation.init_splits_min},
      {"init_splits_max", c.mutation.init_splits_max},
      {"keep_inherited_logits", c.mutation.keep_inherited_logits},
      {"init_retry_budget", c.mutation.init_retry_budget}};
  j["space"] = {{"level_budget", c.space.level_budget},
                {"level_stride", c.space.level_stride},
                {"stem_channels", c.space.stem_channels}};
  j["schedule"] = {{"m_per_level", c.schedule.m_per_level},
                   {"d_per_level", c.schedule.d_per_level},
                   {"stem_channels", c.schedule.stem_channels},
                   {"expansion", c.schedule.expansion},
                   {"num_classes", c.schedule.num_classes},
                   {"in_channels_appearance", c.schedule.in_channels_appearance},
                   {"in_channels_motion", c.schedule.in_channels_motion},
                   {"concat_level4", c.schedule.concat_level4}};
  j["proxy"] = {{"num_classes", c.proxy.num_classes},
                {"clips_per_class", c.proxy.clips_per_class},
                {"frames", c.proxy.frames},
                {"spatial", c.proxy.spatial},
                {"channels_appearance", c.proxy.channels_appearance},
                {"channels_motion", c.proxy.channels_motion},
                {"motion_periods", c.proxy.motion_periods},
                {"val_fraction", c.proxy.val_fraction},
                {"appearance_noise", c.proxy.appearance_noise},
                {"motion_noise", c.proxy.motion_noise},
                {"seed", c.proxy.seed}};
  j["trainer"] = {{"iterations", c.trainer.iterations}, {"batch", c.trainer.batch},
                  {"lr", c.trainer.lr},                 {"warmup", c.trainer.warmup},
                  {"momentum", c.trainer.momentum},     {"weight_decay", c.trainer.weight_decay},
                  {"label_smoothing", c.trainer.label_smoothing},
                  {"gate_lr_multiplier", c.trainer.gate_lr_multiplier},
                  {"seed", c.trainer.seed}};
  j["compile"] = {{"temporal_pool",
                   c.compile_opts.temporal_pool == TemporalPoolMode::Average ? "avg" : "max"},
                  {"bn_momentum", c.compile_opts.bn_momentum},
                  {"bn_eps", c.compile_opts.bn_eps}};
  return j;
}

template <typename T, size_t N>
void fill_array(std::array<T, N>& out, const json& j) {
  if (j.size() != N) throw IoError("checkpoint: bad array length");
  for (size_t i = 0; i < N; ++i) out[i] = j[i].get<T>();
}

SearchConfig config_from_json(const json& j) {
  SearchConfig c;
  c.population_size = j.at("population_size").get<int>();
  c.tournament_size = j.at("tournament_size").get<int>();
  c.init_rounds = j.at("init_rounds").get<int>();
  c.rounds = j.at("rounds").get<int>();
  c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  c.seed = j.at("seed").get<uint64_t>();
  c.workers = j.at("workers").get<int>();
  const json& m = j.at("mutation");
  c.mutation.threshold_mode = m.at("threshold_mode").get<std::string>() == "constant"
                                  ? MutationConfig::ThresholdMode::Constant
                                  : MutationConfig::ThresholdMode::UniformRandom;
  c.mutation.threshold_b = m.at("threshold_b").get<double>();
  c.mutation.max_node_ops = m.at("max_node_ops").get<int>();
  c.mutation.allowed_resolutions = m.at("allowed_resolutions").get<std::vector<int>>();
  c.mutation.init_edge_prob = m.at("init_edge_prob").get<double>();
  c.mutation.init_splits_min = m.at("init_splits_min").get<int>();
  c.mutation.init_splits_max = m.at("init_splits_max").get<int>();
  c.mutation.keep_inherited_logits = m.at("keep_inherited_logits").get<bool>();
  c.mutation.init_retry_budget = m.at("init_retry_budget").get<int>();
  const json& sp = j.at("space");
  fill_array(c.space.level_budget, sp.at("level_budget"));
  fill_array(c.space.level_stride, sp.at("level_stride"));
  c.space.stem_channels = sp.at("stem_channels").get<int>();
  const json& sc = j.at("schedule");
  fill_array(c.schedule.m_per_level, sc.at("m_per_level"));
  fill_array(c.schedule.d_per_level, sc.at("d_per_level"));
  c.schedule.stem_channels = sc.at("stem_channels").get<int>();
  c.schedule.expansion = sc.at("expansion").get<int>();
  c.schedule.num_classes = sc.at("num_classes").get<int>();
  c.schedule.in_channels_appearance = sc.at("in_channels_appearance").get<int>();
  c.schedule.in_channels_motion = sc.at("in_channels_motion").get<int>();
  c.schedule.concat_level4 = sc.at("concat_level4").get<bool>();
  const json& p = j.at("proxy");
  c.proxy.num_classes = p.at("num_classes").get<int>();
  c.proxy.clips_per_class = p.at("clips_per_class").get<int>();
  c.proxy.frames = p.at("frames").get<int>();
  c.proxy.spatial = p.at("spatial").get<int>();
  c.proxy.channels_appearance = p.at("channels_appearance").get<int>();
  c.proxy.channels_motion = p.at("channels_motion").get<int>();
  c.proxy.motion_periods = p.at("motion_periods").get<std::vector<int>>();
  c.proxy.val_fraction = p.at("val_fraction").get<double>();
  c.proxy.appearance_noise = p.at("appearance_noise").get<double>();
  c.proxy.motion_noise = p.at("motion_noise").get<double>();
  c.proxy.seed = p.at("seed").get<uint64_t>();
  const json& t = j.at("trainer");
  c.trainer.iterations = t.at("iterations").get<int>();
  c.trainer.batch = t.at("batch").get<int>();
  c.trainer.lr = t.at("lr").get<double>();
  c.trainer.warmup = t.at("warmup").get<int>();
  c.trainer.momentum = t.at("momentum").get<double>();
  c.trainer.weight_decay = t.at("weight_decay").get<double>();
  c.trainer.label_smoothing = t.at("label_smoothing").get<double>();
  c.trainer.gate_lr_multiplier = t.at("gate_lr_multiplier").get<double>();
  c.trainer.seed = t.at("seed").get<uint64_t>();
  const json& co = j.at("compile");
  c.compile_opts.temporal_pool = co.at("temporal_pool").get<std::string>() == "avg"
                                     ? TemporalPoolMode::Average
                                     : TemporalPoolMode::Max;
  c.compile_opts.bn_momentum = co.at("bn_momentum").get<double>();
  c.compile_opts.bn_eps = co.at("bn_eps").get<double>();
  return c;
}

json member_to_json(const Evaluated& ev) {
  return json{{"table", encode_table(ev.graph)},
              {"fitness", ev.fitness},
              {"top1", ev.top1},
              {"top5", ev.top5}};
}

Evaluated member_from_json(const json& j) {
  Evaluated ev;
  ev.graph = decode_table(j.at("table").get<std::string>());
  ev.fitness = j.at("fitness").get<double>();
  ev.top1 = j.at("top1").get<double>();
  ev.top5 = j.at("top5").get<double>();
  return ev;
}

}  // namespace

void checkpoint_save(const SearchState& state, const std::string& path) {
  json j;
  j["format"] = "msnas-checkpoint";
  j["version"] = 1;
  j["config"] = config_to_json(state.cfg);
  j["rounds_done"] = state.rounds_done;
  j["population"] = json::array();
  for (const auto& m : state.population) j["population"].push_back(member_to_json(m));
  if (state.has_best) j["best"] = member_to_json(state.best);
  j["history"] = json::array();
  for (const auto& h : state.history)
    j["history"].push_back(json{{"round", h.round},
                                {"child_fitness", h.child_fitness},
                                {"best", h.best},
                                {"top3_mean", h.top3_mean},
                                {"note", h.note}});
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os << j.dump(1);
    if (!os) throw IoError("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move checkpoint into place at " + path);
}

SearchState checkpoint_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "msnas-checkpoint")
      throw IoError("not a checkpoint file: " + path);
    if (j.at("version").get<int>() != 1)
      throw IoError("unsupported checkpoint version in " + path);
    SearchState state;
    state.cfg = config_from_json(j.at("config"));
    state.rounds_done = j.at("rounds_done").get<int>();
    for (const auto& m : j.at("population")) state.population.push_back(member_from_json(m));
    if (j.contains("best")) {
      state.best = member_from_json(j.at("best"));
      state.has_best = true;
    }
    for (const auto& h : j.at("history")) {
      RoundRecord rec;
      rec.round = h.at("round").get<int>();
      rec.child_fitness = h.at("child_fitness").get<double>();
      rec.best = h.at("best").get<double>();
      rec.top3_mean = h.at("top3_mean").get<double>();
      rec.note = h.at("note").get<std::string>();
      state.history.push_back(rec);
    }
    return state;
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint: ") + e.what());
  }
}

// --- strategy comparison ------------------------------------------------------

CompareResult compare_strategies(const SearchConfig& base, const std::vector<Strategy>& strategies,
                                 const std::vector<uint64_t>& seeds, int workers,
                                 const RoundCallback& on_round) {
  if (strategies.empty() || seeds.empty())
    throw Error("compare_strategies: need at least one strategy and one seed");
  const Dataset ds = generate_dataset(base.proxy);

  struct Job {
    Strategy strategy;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Strategy s : strategies)
    for (uint64_t seed : seeds) jobs.push_back({s, seed});

  std::vector<SearchState> states(jobs.size());
  std::mutex cb_mutex;
  std::atomic<size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      SearchConfig cfg = base;
      cfg.strategy = jobs[i].strategy;
      cfg.seed = jobs[i].seed;
      cfg.workers = 1;  // per-run sequencing keeps results worker-count independent
      RunOptions opts;
      opts.dataset = &ds;
      if (on_round)
        opts.on_round = [&](const RoundRecord& rec) {
          std::lock_guard<std::mutex> lock(cb_mutex);
          on_round(rec);
        };
      states[i] = run_search(cfg, opts);
    }
  };
  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  CompareResult result;
  for (size_t i = 0; i < jobs.size(); ++i)
    for (const auto& rec : states[i].history)
      result.rows.push_back({to_string(jobs[i].strategy), jobs[i].seed, rec.round, rec.top3_mean,
                             rec.best, rec.child_fitness});

  for (Strategy s : strategies) {
    CompareResult::Summary summary;
    summary.strategy = to_string(s);
    for (size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].strategy != s) continue;
      if (states[i].history.empty()) continue;
      summary.per_seed_final.push_back(states[i].history.back().top3_mean);
    }
    double mean = 0.0;
    for (double v : summary.per_seed_final) mean += v;
    mean /= static_cast<double>(std::max<size_t>(1, summary.per_seed_final.size()));
    double var = 0.0;
    for (double v : summary.per_seed_final) var += (v - mean) * (v - mean);
    summary.final_top3_mean = mean;
    summary.final_top3_std = summary.per_seed_final.size() > 1
                                 ? std::sqrt(var / (summary.per_seed_final.size() - 1.0))
                                 : 0.0;
    result.summaries.push_back(std::move(summary));
  }
  return result;
}

namespace {

std::string csv_header() { return "strategy,seed,round,top3_mean,best,child_fitness\n"; }

void append_row(std::string& out, const std::string& strategy, uint64_t seed, int round,
                double top3, double best, double child) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%llu,%d,%.6f,%.6f,%.6f\n", strategy.c_str(),
                static_cast<unsigned long long>(seed), round, top3, best, child);
  out += buf;
}

}  // namespace

std::string compare_csv(const CompareResult& result) {
  std::string out = csv_header();
  for (const auto& row : result.rows)
    append_row(out, row.strategy, row.seed, row.round, row.top3_mean, row.best,
               row.child_fitness);
  return out;
}

std::string history_csv(const SearchState& state) {
  std::string out = csv_header();
  for (const auto& rec : state.history)
    append_row(out, to_string(state.cfg.strategy), state.cfg.seed, rec.round, rec.top3_mean,
               rec.best, rec.child_fitness);
  return out;
}

}  // namespace msnas
