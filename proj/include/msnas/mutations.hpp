#pragma once

#include <string>
#include <vector>

#include "msnas/graph.hpp"
#include "msnas/rng.hpp"
#include "msnas/schedule.hpp"

namespace msnas {

struct MutationConfig {
  enum class ThresholdMode { Constant, UniformRandom };

  // Gate threshold B for the guided edge mutation: an inherited edge is
  // kept when sigmoid(logit) > B, with B either a constant or a fresh
  // uniform draw per edge.
  ThresholdMode threshold_mode = ThresholdMode::UniformRandom;
  double threshold_b = 0.5;

  int max_node_ops = 4;  // a child receives 0..max_node_ops node mutations
  std::vector<int> allowed_resolutions{1, 2, 4, 8};
  double init_edge_prob = 0.5;  // p for initial random connectivity
  int init_splits_min = 1;
  int init_splits_max = 5;
  bool keep_inherited_logits = true;  // children keep parent gate values on kept edges
  int init_retry_budget = 1000;
};

struct GuidedMutationStats {
  int kept = 0;
  int dropped = 0;
  int added = 0;
  int repaired = 0;
};

// All operators are pure: they take a valid graph and an rng handle and
// return a new graph, repaired to validity where noted.

// Replaces an intermediate node by two half-width copies sharing its
// connections (inherited edges keep the parent's logits, both children
// keep the parent's r). Throws Error when the node is not intermediate or
// its channel count is odd.
ArchitectureGraph split_node(const ArchitectureGraph& g, NodeId id, Rng& rng);

// Union-merges two same-level intermediate nodes; duplicate (src,dst)
// pairs collapse keeping the larger gate, r is drawn from the two parents.
ArchitectureGraph merge_nodes(const ArchitectureGraph& g, NodeId a, NodeId b, Rng& rng);

// Resamples r uniformly from allowed \ {current}. Eligible nodes are
// intermediates and appearance stems (motion stems carry no temporal conv).
ArchitectureGraph change_temporal_resolution(const ArchitectureGraph& g, NodeId id, Rng& rng,
                                             const std::vector<int>& allowed = {1, 2, 4, 8});

bool resolution_mutable(const BlockNode& n);

// Connection-learning-guided edge mutation: keeps parent edges whose gate
// exceeds B, then adds each absent candidate edge independently with
// probability |dropped| / |absent|, and repairs the result.
ArchitectureGraph guided_edge_mutation(const ArchitectureGraph& g, const MutationConfig& cfg,
                                       Rng& rng, GuidedMutationStats* stats = nullptr);

// Toggles round(fraction * |possible edges|) uniformly chosen edge slots
// and repairs the result.
ArchitectureGraph random_edge_mutation(const ArchitectureGraph& g, double fraction, Rng& rng,
                                       int* toggled = nullptr);

// Adds uniformly chosen valid edges (logit 0) until the graph validates;
// never removes an edge. Exposed for tests.
ArchitectureGraph repair(ArchitectureGraph g, Rng& rng, int* added = nullptr);

// One random member: {2 or 4} stems, two nodes per level 1..3 and one
// level-4 node, 1..5 splits, random temporal resolutions, each candidate
// edge present with probability p; rejection-sampled until valid.
ArchitectureGraph random_architecture(const MutationConfig& cfg, const GraphDefaults& defaults,
                                      Rng& rng);

std::vector<ArchitectureGraph> init_population(int size, const MutationConfig& cfg,
                                               const GraphDefaults& defaults, Rng& rng);

}  // namespace msnas
