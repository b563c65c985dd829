// Command-line surface: evolve, compare, build, train, validate.
// Exit codes: 0 ok, 1 usage/config, 2 validation, 3 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "msnas/config.hpp"
#include "msnas/evolution.hpp"

namespace fs = std::filesystem;
using namespace msnas;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct ValidationFailure {
  std::string message;
};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << content;
  if (!os) throw IoError("failed writing " + path.string());
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// Shared per-command state: config file plus flag overrides (flags win).
struct CommandContext {
  std::string config_path;
  bool print_config = false;
  RunConfig cfg = default_run_config();

  int64_t seed = -1;
  int rounds = -1, init_rounds = -1, population = -1, tournament = -1, workers = -1;
  int iterations = -1;
  std::string strategy, out_dir;

  void add_common(CLI::App* cmd, bool with_search_flags) {
    cmd->add_option("--config", config_path, "TOML configuration file");
    cmd->add_option("--seed", seed, "master seed override");
    cmd->add_option("--out", out_dir, "output directory (default: $MSNAS_OUT or ./runs)");
    cmd->add_option("--iterations", iterations, "proxy training iterations per candidate");
    cmd->add_flag("--print-config", print_config,
                  "print the effective configuration and exit");
    if (with_search_flags) {
      cmd->add_option("--rounds", rounds, "evolution rounds");
      cmd->add_option("--init-rounds", init_rounds, "random initialization rounds");
      cmd->add_option("--population", population, "population size");
      cmd->add_option("--tournament", tournament, "tournament size");
      cmd->add_option("--workers", workers, "parallel workers");
      cmd->add_option("--strategy", strategy,
                      "guided | standard_random_edges | pure_random_search");
    }
  }

  void resolve() {
    if (!config_path.empty()) {
      try {
        cfg = load_config(config_path);
      } catch (const IoError& e) {
        throw ConfigError(e.what());  // unreadable config is a usage error
      }
    }
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (rounds >= 0) cfg.search.rounds = rounds;
    if (init_rounds >= 0) cfg.search.init_rounds = init_rounds;
    if (population >= 0) cfg.search.population_size = population;
    if (tournament >= 0) cfg.search.tournament_size = tournament;
    if (workers >= 0) cfg.search.workers = workers;
    if (iterations >= 0) cfg.search.trainer.iterations = iterations;
    if (!strategy.empty()) cfg.search.strategy = strategy_from_string(strategy);
    finalize_config(cfg);
  }

  // True when the command should exit after printing the config.
  bool handle_print_config() {
    if (!print_config) return false;
    std::cout << print_config_text();
    return true;
  }
  std::string print_config_text() { return msnas::print_config(cfg); }
};

void print_round(const RoundRecord& rec) {
  std::printf("round %3d  child %.4f  best %.4f  top3 %.4f  %s\n", rec.round, rec.child_fitness,
              rec.best, rec.top3_mean, rec.note.c_str());
  std::fflush(stdout);
}

ArchitectureGraph load_architecture(const std::string& spec, const GraphDefaults& space) {
  if (spec == "reference") return decode_table(reference_table_text());
  for (const auto& name : baseline_names())
    if (name == spec) return build_baseline(baseline_from_string(spec), space);
  return decode_table(read_file(spec));
}

void write_search_outputs(const SearchState& state, const fs::path& out) {
  fs::create_directories(out);
  write_file(out / "history.csv", history_csv(state));
  if (state.has_best) {
    write_file(out / "best.arch", encode_table(state.best.graph));
    write_file(out / "best.dot", export_dot(state.best.graph));
  }
  checkpoint_save(state, (out / "checkpoint.json").string());
}

int cmd_evolve(CommandContext& ctx, const std::string& resume, int checkpoint_every) {
  if (ctx.handle_print_config()) return kExitOk;
  const fs::path out = resolve_out_dir(ctx.cfg);
  fs::create_directories(out);

  RunOptions options;
  options.on_round = print_round;
  options.checkpoint_path = (out / "checkpoint.json").string();
  options.checkpoint_every = checkpoint_every;

  SearchState state;
  if (!resume.empty()) {
    state = checkpoint_load(resume);
    if (ctx.rounds >= 0) state.cfg.rounds = ctx.rounds;
    std::printf("resuming at round %d of %d\n", state.rounds_done, state.cfg.total_rounds());
    state = resume_search(std::move(state), options);
  } else {
    state = run_search(ctx.cfg.search, options);
  }
  write_search_outputs(state, out);
  if (state.has_best)
    std::printf("best fitness %.4f (top1 %.4f top5 %.4f); outputs in %s\n", state.best.fitness,
                state.best.top1, state.best.top5, out.string().c_str());
  return kExitOk;
}

int cmd_compare(CommandContext& ctx, const std::string& strategies_csv,
                const std::string& seeds_csv) {
  if (ctx.handle_print_config()) return kExitOk;
  std::vector<Strategy> strategies;
  std::vector<uint64_t> seeds;
  try {
    for (const auto& name : split_csv(strategies_csv))
      strategies.push_back(strategy_from_string(name));
    for (const auto& tok : split_csv(seeds_csv)) seeds.push_back(std::stoull(tok));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad --strategies/--seeds: ") + e.what());
  }

  const fs::path out = resolve_out_dir(ctx.cfg);
  fs::create_directories(out);
  const int workers = std::max(1, ctx.cfg.search.workers);
  const CompareResult result =
      compare_strategies(ctx.cfg.search, strategies, seeds, workers, print_round);

  write_file(out / "comparison.csv", compare_csv(result));
  std::string summary = "strategy,final_top3_mean,final_top3_std\n";
  std::printf("%-24s %12s %12s\n", "strategy", "final top3", "std");
  for (const auto& s : result.summaries) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", s.strategy.c_str(), s.final_top3_mean,
                  s.final_top3_std);
    summary += buf;
    std::printf("%-24s %12.4f %12.4f\n", s.strategy.c_str(), s.final_top3_mean, s.final_top3_std);
  }
  write_file(out / "summary.csv", summary);
  std::printf("outputs in %s\n", out.string().c_str());
  return kExitOk;
}

int cmd_build(CommandContext& ctx, const std::string& target, bool reference,
              const std::string& dot_path, const std::string& schedule_name) {
  if (ctx.handle_print_config()) return kExitOk;
  LayerSchedule schedule = ctx.cfg.search.schedule;
  GraphDefaults defaults = ctx.cfg.search.space;
  if (schedule_name == "full") {
    schedule = LayerSchedule::reference_scale();
    defaults = GraphDefaults::reference_scale();
  } else if (schedule_name != "desk") {
    throw ConfigError("--schedule must be 'desk' or 'full'");
  }
  schedule.num_classes = ctx.cfg.search.proxy.num_classes;

  ArchitectureGraph g;
  if (reference) {
    g = decode_table(reference_table_text());
  } else if (target.empty()) {
    throw ConfigError("build: give an architecture name/file or --reference");
  } else {
    bool is_baseline = false;
    for (const auto& name : baseline_names()) is_baseline |= name == target;
    g = is_baseline ? build_baseline(baseline_from_string(target), defaults)
                    : decode_table(read_file(target));
  }

  const ValidationReport report = validate_graph(g);
  if (!report.ok) throw ValidationFailure{report.to_string()};

  std::cout << summarize(g) << "\n";
  const ParameterBreakdown p = parameter_count(g, schedule);
  std::printf("parameters (classes=%d):\n", schedule.num_classes);
  std::printf("  stems      conv %10lld   bn %8lld\n", p.stem_conv, p.stem_bn);
  std::printf("  blocks     conv %10lld   bn %8lld\n", p.block_conv, p.block_bn);
  std::printf("  adapters        %10lld\n", p.adapter);
  std::printf("  edge gates      %10lld\n", p.edge_logits);
  std::printf("  head            %10lld\n", p.head);
  std::printf("  total           %10lld\n", p.total());
  if (!dot_path.empty()) {
    write_file(dot_path, export_dot(g));
    std::printf("wrote %s\n", dot_path.c_str());
  }
  return kExitOk;
}

int cmd_train(CommandContext& ctx, const std::string& target) {
  if (ctx.handle_print_config()) return kExitOk;
  ArchitectureGraph g = load_architecture(target, ctx.cfg.search.space);
  const ValidationReport report = validate_graph(g);
  if (!report.ok) throw ValidationFailure{report.to_string()};

  const SearchConfig& s = ctx.cfg.search;
  const Dataset ds = generate_dataset(s.proxy);
  LayerSchedule schedule = s.schedule;
  schedule.num_classes = s.proxy.num_classes;
  CompileOptions copts = s.compile_opts;
  copts.init_seed = ctx.cfg.seed;
  ExecutableNetwork net = compile(g, schedule, copts);
  std::printf("compiled: %s, %lld trainable parameters\n", summarize(g).c_str(),
              net.num_trainable());

  TrainerConfig tcfg = s.trainer;
  tcfg.seed = ctx.cfg.seed;
  const TrainResult tr = train(net, ds, tcfg);
  if (tr.steps > 0)
    std::printf("trained %d steps, loss %.4f -> %.4f\n", tr.steps, tr.initial_loss,
                tr.final_loss);
  const EvalResult ev = evaluate(net, ds);
  std::printf("top1 %.4f  top5 %.4f  fitness %.4f\n", ev.top1, ev.top5, ev.top1 + ev.top5);

  const fs::path out = resolve_out_dir(ctx.cfg);
  fs::create_directories(out);
  write_file(out / "trained.arch", encode_table(net.graph_with_trained_logits()));
  std::printf("wrote %s\n", (out / "trained.arch").string().c_str());
  return kExitOk;
}

int cmd_validate(const std::string& path) {
  const ArchitectureGraph g = decode_table(read_file(path));
  const ValidationReport report = validate_graph(g);
  std::cout << summarize(g) << "\n";
  if (!report.ok) {
    std::cout << report.to_string();
    return kExitValidation;
  }
  std::cout << "ok\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evolutionary architecture search for multi-stream video networks"};
  app.require_subcommand(1);

  CommandContext evolve_ctx, compare_ctx, build_ctx, train_ctx;
  std::string resume_path, dot_path, build_target, train_target, validate_path;
  std::string strategies = "guided,standard_random_edges,pure_random_search";
  std::string seeds = "1,2,3,4,5";
  std::string schedule_name = "desk";
  int checkpoint_every = 10;

  CLI::App* evolve = app.add_subcommand("evolve", "run the architecture search");
  evolve_ctx.add_common(evolve, true);
  evolve->add_option("--resume", resume_path, "resume from a checkpoint file");
  evolve->add_option("--checkpoint-every", checkpoint_every, "rounds between checkpoints");

  CLI::App* compare = app.add_subcommand("compare", "compare search strategies");
  compare_ctx.add_common(compare, true);
  compare->add_option("--strategies", strategies, "comma-separated strategy list");
  compare->add_option("--seeds", seeds, "comma-separated seed list");

  CLI::App* build = app.add_subcommand("build", "build and inspect an architecture");
  build_ctx.add_common(build, false);
  build->add_option("target", build_target, "baseline name or architecture table file");
  build->add_flag("--reference", "build the bundled reference architecture");
  build->add_option("--dot", dot_path, "write a DOT rendering to this path");
  build->add_option("--schedule", schedule_name, "layer schedule: desk | full");

  CLI::App* train_cmd = app.add_subcommand("train", "train one architecture on the proxy task");
  train_ctx.add_common(train_cmd, false);
  train_cmd->add_option("target", train_target,
                        "architecture table file, baseline name, or 'reference'")
      ->required();

  CLI::App* validate_cmd = app.add_subcommand("validate", "validate an architecture table file");
  validate_cmd->add_option("file", validate_path, "architecture table file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (evolve->parsed()) {
      evolve_ctx.resolve();
      return cmd_evolve(evolve_ctx, resume_path, checkpoint_every);
    }
    if (compare->parsed()) {
      compare_ctx.resolve();
      return cmd_compare(compare_ctx, strategies, seeds);
    }
    if (build->parsed()) {
      build_ctx.resolve();
      return cmd_build(build_ctx, build_target, build->count("--reference") > 0, dot_path,
                       schedule_name);
    }
    if (train_cmd->parsed()) {
      train_ctx.resolve();
      return cmd_train(train_ctx, train_target);
    }
    if (validate_cmd->parsed()) return cmd_validate(validate_path);
  } catch (const ValidationFailure& e) {
    std::cerr << e.message;
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
