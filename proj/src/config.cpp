#include "msnas/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <type_traits>

namespace msnas {

namespace {

struct TomlValue {
  enum class Kind { Int, Float, Bool, String, Array };
  Kind kind = Kind::Int;
  int64_t i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;
  std::vector<double> array;
  bool array_integral = true;
  int line = 0;
};

std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string drop_comment(const std::string& line) {
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
}

double parse_number(const std::string& tok, const std::string& origin, int line, bool* integral) {
  try {
    size_t used = 0;
    if (tok.find_first_of(".eE") == std::string::npos ||
        (tok.size() > 1 && tok[0] == '0' && tok[1] == 'x')) {
      const long long v = std::stoll(tok, &used, 0);
      if (used != tok.size()) fail(origin, line, "bad number '" + tok + "'");
      if (integral) *integral = true;
      return static_cast<double>(v);
    }
    const double v = std::stod(tok, &used);
    if (used != tok.size()) fail(origin, line, "bad number '" + tok + "'");
    if (integral) *integral = false;
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(origin, line, "bad number '" + tok + "'");
  }
}

std::map<std::string, TomlValue> parse_toml(const std::string& text, const std::string& origin) {
  std::map<std::string, TomlValue> out;
  std::istringstream is(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = strip(drop_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, line_no, "unterminated section header");
      section = strip(line.substr(1, line.size() - 2));
      if (section.empty()) fail(origin, line_no, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected key = value");
    std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty() || value.empty()) fail(origin, line_no, "expected key = value");
    if (!section.empty()) key = section + "." + key;
    if (out.count(key)) fail(origin, line_no, "duplicate key '" + key + "'");

    TomlValue v;
    v.line = line_no;
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"') fail(origin, line_no, "unterminated string");
      v.kind = TomlValue::Kind::String;
      v.s = value.substr(1, value.size() - 2);
    } else if (value == "true" || value == "false") {
      v.kind = TomlValue::Kind::Bool;
      v.b = value == "true";
    } else if (value.front() == '[') {
      if (value.back() != ']') fail(origin, line_no, "unterminated array");
      v.kind = TomlValue::Kind::Array;
      std::istringstream as(value.substr(1, value.size() - 2));
      std::string tok;
      while (std::getline(as, tok, ',')) {
        tok = strip(tok);
        if (tok.empty()) fail(origin, line_no, "empty array entry");
        bool integral = true;
        v.array.push_back(parse_number(tok, origin, line_no, &integral));
        v.array_integral = v.array_integral && integral;
      }
    } else {
      bool integral = true;
      const double num = parse_number(value, origin, line_no, &integral);
      if (integral) {
        v.kind = TomlValue::Kind::Int;
        v.i = static_cast<int64_t>(num);
      } else {
        v.kind = TomlValue::Kind::Float;
        v.f = num;
      }
    }
    out.emplace(std::move(key), std::move(v));
  }
  return out;
}

struct Reader {
  const std::string& origin;
  const std::string& key;
  const TomlValue& v;

  [[noreturn]] void fail_kind(const char* want) const {
    fail(origin, v.line, "key '" + key + "' expects " + want);
  }
  int64_t as_int() const {
    if (v.kind != TomlValue::Kind::Int) fail_kind("an integer");
    return v.i;
  }
  uint64_t as_uint() const { return static_cast<uint64_t>(as_int()); }
  double as_double() const {
    if (v.kind == TomlValue::Kind::Int) return static_cast<double>(v.i);
    if (v.kind == TomlValue::Kind::Float) return v.f;
    fail_kind("a number");
  }
  bool as_bool() const {
    if (v.kind != TomlValue::Kind::Bool) fail_kind("a boolean");
    return v.b;
  }
  std::string as_string() const {
    if (v.kind != TomlValue::Kind::String) fail_kind("a string");
    return v.s;
  }
  std::vector<int> as_int_array() const {
    if (v.kind != TomlValue::Kind::Array || !v.array_integral) fail_kind("an integer array");
    std::vector<int> out;
    for (double d : v.array) out.push_back(static_cast<int>(d));
    return out;
  }
  std::vector<double> as_double_array() const {
    if (v.kind != TomlValue::Kind::Array) fail_kind("an array");
    return v.array;
  }
};

template <typename T, size_t N>
void fill_levels(std::array<T, N>& dest, const std::vector<T>& src, const Reader& r) {
  if (src.size() != kNumLevels) fail(r.origin, r.v.line, "key '" + r.key + "' expects 4 entries");
  for (int level = 1; level <= kNumLevels; ++level)
    dest[static_cast<size_t>(level)] = src[static_cast<size_t>(level - 1)];
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  if (std::strtod(buf, nullptr) == v) return buf;
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, size_t N>
std::string fmt_levels(const std::array<T, N>& a) {
  std::string out = "[";
  for (int level = 1; level <= kNumLevels; ++level) {
    if (level > 1) out += ", ";
    if constexpr (std::is_same_v<T, double>) out += fmt_double(a[static_cast<size_t>(level)]);
    else out += std::to_string(a[static_cast<size_t>(level)]);
  }
  return out + "]";
}

std::string fmt_ints(const std::vector<int>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(v[i]);
  }
  return out + "]";
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  const auto kv = parse_toml(text, origin);
  for (const auto& [key, value] : kv) {
    const Reader r{origin, key, value};
    SearchConfig& s = cfg.search;
    if (key == "seed") cfg.seed = r.as_uint();
    else if (key == "out_dir") cfg.out_dir = r.as_string();
    else if (key == "search.population") s.population_size = static_cast<int>(r.as_int());
    else if (key == "search.tournament") s.tournament_size = static_cast<int>(r.as_int());
    else if (key == "search.init_rounds") s.init_rounds = static_cast<int>(r.as_int());
    else if (key == "search.rounds") s.rounds = static_cast<int>(r.as_int());
    else if (key == "search.strategy") s.strategy = strategy_from_string(r.as_string());
    else if (key == "search.workers") s.workers = static_cast<int>(r.as_int());
    else if (key == "mutation.threshold_mode") {
      const std::string mode = r.as_string();
      if (mode == "constant") s.mutation.threshold_mode = MutationConfig::ThresholdMode::Constant;
      else if (mode == "uniform")
        s.mutation.threshold_mode = MutationConfig::ThresholdMode::UniformRandom;
      else fail(origin, value.line, "threshold_mode must be 'constant' or 'uniform'");
    } else if (key == "mutation.threshold_b") s.mutation.threshold_b = r.as_double();
    else if (key == "mutation.max_node_ops") s.mutation.max_node_ops = static_cast<int>(r.as_int());
    else if (key == "mutation.init_edge_prob") s.mutation.init_edge_prob = r.as_double();
    else if (key == "mutation.init_splits_min") s.mutation.init_splits_min = static_cast<int>(r.as_int());
    else if (key == "mutation.init_splits_max") s.mutation.init_splits_max = static_cast<int>(r.as_int());
    else if (key == "mutation.keep_inherited_logits") s.mutation.keep_inherited_logits = r.as_bool();
    else if (key == "mutation.allowed_resolutions") {
      s.mutation.allowed_resolutions = r.as_int_array();
      for (int res : s.mutation.allowed_resolutions)
        if (res != 1 && res != 2 && res != 4 && res != 8)
          fail(origin, value.line, "allowed_resolutions entries must be in {1,2,4,8}");
    } else if (key == "schedule.m") fill_levels(s.schedule.m_per_level, r.as_double_array(), r);
    else if (key == "schedule.d") fill_levels(s.schedule.d_per_level, r.as_int_array(), r);
    else if (key == "schedule.budgets") fill_levels(s.space.level_budget, r.as_int_array(), r);
    else if (key == "schedule.strides") fill_levels(s.space.level_stride, r.as_int_array(), r);
    else if (key == "schedule.stem_channels") {
      s.schedule.stem_channels = static_cast<int>(r.as_int());
      s.space.stem_channels = s.schedule.stem_channels;
    } else if (key == "schedule.expansion") s.schedule.expansion = static_cast<int>(r.as_int());
    else if (key == "schedule.in_channels") {
      s.schedule.in_channels_appearance = static_cast<int>(r.as_int());
      s.schedule.in_channels_motion = s.schedule.in_channels_appearance;
      s.proxy.channels_appearance = s.schedule.in_channels_appearance;
      s.proxy.channels_motion = s.schedule.in_channels_appearance;
    } else if (key == "schedule.concat_level4") s.schedule.concat_level4 = r.as_bool();
    else if (key == "schedule.temporal_pool") {
      const std::string mode = r.as_string();
      if (mode == "avg") s.compile_opts.temporal_pool = TemporalPoolMode::Average;
      else if (mode == "max") s.compile_opts.temporal_pool = TemporalPoolMode::Max;
      else fail(origin, value.line, "temporal_pool must be 'avg' or 'max'");
    } else if (key == "proxy.classes") s.proxy.num_classes = static_cast<int>(r.as_int());
    else if (key == "proxy.clips_per_class") s.proxy.clips_per_class = static_cast<int>(r.as_int());
    else if (key == "proxy.frames") s.proxy.frames = static_cast<int>(r.as_int());
    else if (key == "proxy.spatial") s.proxy.spatial = static_cast<int>(r.as_int());
    else if (key == "proxy.motion_periods") s.proxy.motion_periods = r.as_int_array();
    else if (key == "proxy.val_fraction") s.proxy.val_fraction = r.as_double();
    else if (key == "proxy.appearance_noise") s.proxy.appearance_noise = r.as_double();
    else if (key == "proxy.motion_noise") s.proxy.motion_noise = r.as_double();
    else if (key == "proxy.seed") s.proxy.seed = r.as_uint();
    else if (key == "trainer.iterations") s.trainer.iterations = static_cast<int>(r.as_int());
    else if (key == "trainer.batch") s.trainer.batch = static_cast<int>(r.as_int());
    else if (key == "trainer.lr") s.trainer.lr = r.as_double();
    else if (key == "trainer.warmup") s.trainer.warmup = static_cast<int>(r.as_int());
    else if (key == "trainer.momentum") s.trainer.momentum = r.as_double();
    else if (key == "trainer.weight_decay") s.trainer.weight_decay = r.as_double();
    else if (key == "trainer.label_smoothing") s.trainer.label_smoothing = r.as_double();
    else if (key == "trainer.gate_lr_multiplier") s.trainer.gate_lr_multiplier = r.as_double();
    else fail(origin, value.line, "unknown key '" + key + "'");
  }
  finalize_config(cfg);
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  RunConfig cfg = default_run_config();
  apply_config_text(cfg, buf.str(), path);
  return cfg;
}

void finalize_config(RunConfig& cfg) {
  cfg.search.seed = cfg.seed;
  cfg.search.schedule.num_classes = cfg.search.proxy.num_classes;
  cfg.search.space.stem_channels = cfg.search.schedule.stem_channels;
}

std::string resolve_out_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("MSNAS_OUT"); env && *env) return env;
  return "runs";
}

std::string print_config(const RunConfig& cfg) {
  const SearchConfig& s = cfg.search;
  std::ostringstream os;
  os << "# run configuration; regenerate with --print-config\n";
  os << "seed = " << cfg.seed << "  # master seed; all outputs are a pure function of it\n";
  os << "out_dir = \"" << resolve_out_dir(cfg) << "\"\n\n";

  os << "[search]\n";
  os << "population = " << s.population_size << "  # architectures kept in the pool\n";
  os << "tournament = " << s.tournament_size << "  # random subset size for parent selection\n";
  os << "init_rounds = " << s.init_rounds << "  # leading rounds insert random models\n";
  os << "rounds = " << s.rounds << "  # evolution rounds after initialization\n";
  os << "strategy = \"" << to_string(s.strategy)
     << "\"  # guided | standard_random_edges | pure_random_search\n";
  os << "workers = " << s.workers << "  # parallel candidate evaluations\n\n";

  os << "[mutation]\n";
  os << "threshold_mode = \""
     << (s.mutation.threshold_mode == MutationConfig::ThresholdMode::Constant ? "constant"
                                                                              : "uniform")
     << "\"  # edge-keep threshold B: fresh uniform draw per edge, or the constant below\n";
  os << "threshold_b = " << fmt_double(s.mutation.threshold_b) << "\n";
  os << "max_node_ops = " << s.mutation.max_node_ops
     << "  # node operators per child, uniform on 0..max\n";
  os << "init_edge_prob = " << fmt_double(s.mutation.init_edge_prob)
     << "  # connection probability of initial over-connected models\n";
  os << "init_splits_min = " << s.mutation.init_splits_min << "\n";
  os << "init_splits_max = " << s.mutation.init_splits_max
     << "  # random split count drawn per initial model\n";
  os << "keep_inherited_logits = " << (s.mutation.keep_inherited_logits ? "true" : "false")
     << "  # children keep trained gate values on inherited edges\n";
  os << "allowed_resolutions = " << fmt_ints(s.mutation.allowed_resolutions) << "\n\n";

  os << "[schedule]\n";
  os << "m = " << fmt_levels(s.schedule.m_per_level)
     << "  # residual modules per level; full scale uses [1.5, 2, 3, 1.5]\n";
  os << "d = " << fmt_levels(s.schedule.d_per_level)
     << "  # 2D conv width per level; full scale uses [64, 128, 256, 512]\n";
  os << "budgets = " << fmt_levels(s.space.level_budget)
     << "  # per-level channel budget; full scale uses [64, 128, 256, 512]\n";
  os << "strides = " << fmt_levels(s.space.level_stride) << "\n";
  os << "stem_channels = " << s.schedule.stem_channels
     << "  # two-stem width, halved for four stems; full scale: 64\n";
  os << "expansion = " << s.schedule.expansion << "  # block output width = expansion * C\n";
  os << "in_channels = " << s.schedule.in_channels_appearance
     << "  # channels per input modality\n";
  os << "concat_level4 = " << (s.schedule.concat_level4 ? "true" : "false")
     << "  # concatenate level-4 outputs instead of averaging\n";
  os << "temporal_pool = \""
     << (s.compile_opts.temporal_pool == TemporalPoolMode::Average ? "avg" : "max")
     << "\"  # sink temporal pooling\n\n";

  os << "[proxy]\n";
  os << "classes = " << s.proxy.num_classes
     << "  # appearance groups x motion periods; >= 6 so top-5 is defined\n";
  os << "clips_per_class = " << s.proxy.clips_per_class << "\n";
  os << "frames = " << s.proxy.frames << "\n";
  os << "spatial = " << s.proxy.spatial << "\n";
  os << "motion_periods = " << fmt_ints(s.proxy.motion_periods)
     << "  # oscillation periods; only the right temporal dilations resolve them all\n";
  os << "val_fraction = " << fmt_double(s.proxy.val_fraction) << "\n";
  os << "appearance_noise = " << fmt_double(s.proxy.appearance_noise) << "\n";
  os << "motion_noise = " << fmt_double(s.proxy.motion_noise) << "\n";
  os << "seed = " << s.proxy.seed << "  # dataset seed, independent of the search seed\n\n";

  os << "[trainer]\n";
  os << "iterations = " << s.trainer.iterations
     << "  # proxy training budget per candidate; full scale trains 10k\n";
  os << "batch = " << s.trainer.batch << "  # full scale: 512\n";
  os << "lr = " << fmt_double(s.trainer.lr) << "  # full scale: 3.2\n";
  os << "warmup = " << s.trainer.warmup
     << "  # linear warmup steps; negative = 5% of iterations (full scale: 12000)\n";
  os << "momentum = " << fmt_double(s.trainer.momentum) << "\n";
  os << "weight_decay = " << fmt_double(s.trainer.weight_decay) << "\n";
  os << "label_smoothing = " << fmt_double(s.trainer.label_smoothing) << "\n";
  os << "gate_lr_multiplier = " << fmt_double(s.trainer.gate_lr_multiplier)
     << "  # boosts gate-logit updates so short proxy runs learn usable gates\n";
  return os.str();
}

}  // namespace msnas
