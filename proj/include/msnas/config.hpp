#pragma once

#include <string>

#include "msnas/evolution.hpp"

namespace msnas {

// One declarative file drives a run; flags override individual values.
struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir;  // empty: MSNAS_OUT env var, then "runs"
  SearchConfig search;
};

RunConfig default_run_config();

// Strict TOML-subset reader: [sections], key = value with integers,
// floats, booleans, quoted strings and numeric arrays. Unknown keys are
// rejected.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);

// Re-syncs the derived fields (master seed, class counts, stem widths)
// after edits; called by load_config and after flag overrides.
void finalize_config(RunConfig& cfg);

// Annotated TOML holding every value of cfg; parsing it back reproduces
// the configuration exactly.
std::string print_config(const RunConfig& cfg);

std::string resolve_out_dir(const RunConfig& cfg);

}  // namespace msnas
