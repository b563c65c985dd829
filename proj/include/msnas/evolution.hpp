#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msnas/builder.hpp"
#include "msnas/mutations.hpp"
#include "msnas/proxy.hpp"

namespace msnas {

enum class Strategy { Guided, StandardRandomEdges, PureRandomSearch };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);  // throws Error on unknown name

struct SearchConfig {
  int population_size = 20;
  int tournament_size = 5;
  int init_rounds = 30;  // leading rounds fill the pool with random models
  int rounds = 40;       // evolution rounds after initialization
  Strategy strategy = Strategy::Guided;
  uint64_t seed = 1;
  int workers = 1;  // parallel speculative candidate evaluations
  MutationConfig mutation;
  GraphDefaults space;
  LayerSchedule schedule;
  ProxyConfig proxy;
  TrainerConfig trainer;
  CompileOptions compile_opts;

  int total_rounds() const { return init_rounds + rounds; }
  void validate() const;  // throws ConfigError
};

struct Evaluated {
  ArchitectureGraph graph;  // carries the trained gate logits
  double fitness = 0.0;     // top1 + top5, in [0, 2]
  double top1 = 0.0;
  double top5 = 0.0;
};

struct RoundRecord {
  int round = 0;
  double child_fitness = 0.0;
  double best = 0.0;       // best fitness seen so far
  double top3_mean = 0.0;  // mean fitness of the current top-3 pool members
  std::string note;
};

struct SearchState {
  SearchConfig cfg;
  std::vector<Evaluated> population;
  int rounds_done = 0;
  bool has_best = false;
  Evaluated best;
  std::vector<RoundRecord> history;
};

// top1 + top5 on the validation split; requires >= 6 classes.
double fitness_of(ExecutableNetwork& net, const Dataset& ds);

// Uniform k-subset without replacement; returns the index of the
// max-fitness member, ties broken by earlier insertion order.
int tournament_select(const std::vector<Evaluated>& population, int k, Rng& rng);

struct ChildOutcome {
  ArchitectureGraph graph;
  int node_ops = 0;
  std::string note;
};

// Guided: connection-learning-guided edge mutation; standard: random
// toggling of a third of the edge slots; both followed by 0..4 node
// operators. Pure random search returns a fresh random member instead.
ChildOutcome make_child(const Evaluated& parent, Strategy strategy, const SearchConfig& cfg,
                        Rng& rng);

SearchState init_search(const SearchConfig& cfg);

// One select -> mutate -> train -> insert -> evict-min cycle.
void evolve_round(SearchState& state, const Dataset& ds);

using RoundCallback = std::function<void(const RoundRecord&)>;

struct RunOptions {
  const Dataset* dataset = nullptr;  // generated from cfg.proxy when null
  RoundCallback on_round;
  std::string checkpoint_path;  // written at worker-batch boundaries when set
  int checkpoint_every = 0;
};

// Runs (or resumes) a search to cfg.total_rounds(). With workers > 1,
// batches of candidates are evaluated speculatively against a population
// snapshot and committed in round order, so results are reproducible for a
// fixed (seed, workers) pair.
SearchState run_search(const SearchConfig& cfg, const RunOptions& options = {});
SearchState resume_search(SearchState state, const RunOptions& options = {});

void checkpoint_save(const SearchState& state, const std::string& path);
SearchState checkpoint_load(const std::string& path);

// --- strategy comparison -----------------------------------------------------

struct CompareResult {
  struct Row {
    std::string strategy;
    uint64_t seed = 0;
    int round = 0;
    double top3_mean = 0.0;
    double best = 0.0;
    double child_fitness = 0.0;
  };
  struct Summary {
    std::string strategy;
    double final_top3_mean = 0.0;  // mean over seeds of the final-round top-3 mean
    double final_top3_std = 0.0;
    std::vector<double> per_seed_final;
  };
  std::vector<Row> rows;
  std::vector<Summary> summaries;
};

// Identical proxy task and budgets across strategies; runs are spread over
// `workers` threads with each run evaluated sequentially, so the output is
// independent of the worker count.
CompareResult compare_strategies(const SearchConfig& base, const std::vector<Strategy>& strategies,
                                 const std::vector<uint64_t>& seeds, int workers,
                                 const RoundCallback& on_round = {});

std::string compare_csv(const CompareResult& result);
std::string history_csv(const SearchState& state);

}  // namespace msnas
