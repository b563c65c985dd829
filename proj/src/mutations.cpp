#include "msnas/mutations.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "msnas/errors.hpp"

namespace msnas {

ArchitectureGraph split_node(const ArchitectureGraph& g, NodeId id, Rng& /*rng*/) {
  const BlockNode& target = g.node(id);
  if (target.kind != NodeKind::Intermediate)
    throw Error("split_node: node " + std::to_string(id) + " is not intermediate");
  if (target.channels % 2 != 0)
    throw Error("split_node: node " + std::to_string(id) + " has odd channel count");

  ArchitectureGraph out = g;
  const NodeId sibling = static_cast<NodeId>(out.nodes.size());
  BlockNode& first = out.nodes[static_cast<size_t>(id)];
  first.channels /= 2;
  BlockNode second = first;
  second.id = sibling;
  out.nodes.push_back(second);
  // Identical input/output connections, inherited gate values.
  std::vector<Edge> extra;
  for (const auto& e : out.edges) {
    if (e.src == id) extra.push_back({sibling, e.dst, e.logit});
    if (e.dst == id) extra.push_back({e.src, sibling, e.logit});
  }
  out.edges.insert(out.edges.end(), extra.begin(), extra.end());
  return canonicalized(std::move(out));
}

ArchitectureGraph merge_nodes(const ArchitectureGraph& g, NodeId a, NodeId b, Rng& rng) {
  if (a == b) throw Error("merge_nodes: need two distinct nodes");
  const BlockNode& na = g.node(a);
  const BlockNode& nb = g.node(b);
  if (na.kind != NodeKind::Intermediate || nb.kind != NodeKind::Intermediate)
    throw Error("merge_nodes: both nodes must be intermediate");
  if (na.level != nb.level) throw Error("merge_nodes: nodes are on different levels");

  ArchitectureGraph out = g;
  BlockNode& merged = out.nodes[static_cast<size_t>(a)];
  merged.channels = na.channels + nb.channels;
  merged.temporal_resolution =
      rng.bernoulli(0.5) ? na.temporal_resolution : nb.temporal_resolution;
  if (na.spatial_stride != nb.spatial_stride)
    merged.spatial_stride = rng.bernoulli(0.5) ? na.spatial_stride : nb.spatial_stride;

  // Union of connections; duplicate pairs keep the larger gate.
  std::vector<Edge> edges;
  for (auto e : out.edges) {
    if (e.src == b) e.src = a;
    if (e.dst == b) e.dst = a;
    if (e.src == a && e.dst == a) continue;  // cannot happen for level-ordered edges
    bool dup = false;
    for (auto& kept : edges)
      if (kept.src == e.src && kept.dst == e.dst) {
        kept.logit = std::max(kept.logit, e.logit);
        dup = true;
        break;
      }
    if (!dup) edges.push_back(e);
  }
  out.edges = std::move(edges);
  out.nodes.erase(out.nodes.begin() + b);
  // Re-point ids above the removed slot.
  for (auto& n : out.nodes)
    if (n.id > b) --n.id;
  for (auto& e : out.edges) {
    if (e.src > b) --e.src;
    if (e.dst > b) --e.dst;
  }
  return canonicalized(std::move(out));
}

bool resolution_mutable(const BlockNode& n) {
  return n.kind == NodeKind::Intermediate || n.kind == NodeKind::AppearanceStem;
}

ArchitectureGraph change_temporal_resolution(const ArchitectureGraph& g, NodeId id, Rng& rng,
                                             const std::vector<int>& allowed) {
  const BlockNode& target = g.node(id);
  if (!resolution_mutable(target))
    throw Error("change_temporal_resolution: node " + std::to_string(id) +
                " has no temporal conv");
  std::vector<int> options;
  for (int r : allowed)
    if (r != target.temporal_resolution) options.push_back(r);
  if (options.empty())
    throw Error("change_temporal_resolution: no alternative resolution available");
  ArchitectureGraph out = g;
  out.nodes[static_cast<size_t>(id)].temporal_resolution =
      options[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(options.size()) - 1))];
  return out;
}

ArchitectureGraph repair(ArchitectureGraph g, Rng& rng, int* added) {
  int added_count = 0;
  const auto add_uniform = [&](std::vector<std::pair<NodeId, NodeId>>& candidates) {
    const auto& pick =
        candidates[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(candidates.size()) - 1))];
    g.edges.push_back({pick.first, pick.second, 0.0});
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& x, const Edge& y) {
      return std::make_pair(x.src, x.dst) < std::make_pair(y.src, y.dst);
    });
    ++added_count;
  };

  for (;;) {
    bool fixed_one = false;
    for (const auto& n : g.nodes) {
      if (n.is_stem()) continue;
      if (g.inputs_of(n.id).empty()) {
        std::vector<std::pair<NodeId, NodeId>> candidates;
        for (const auto& src : g.nodes)
          if (src.level < n.level) candidates.emplace_back(src.id, n.id);
        if (candidates.empty()) throw Error("repair: no possible incoming edge for node");
        add_uniform(candidates);
        fixed_one = true;
        break;
      }
      if (n.level < kNumLevels && g.outputs_of(n.id).empty()) {
        std::vector<std::pair<NodeId, NodeId>> candidates;
        for (const auto& dst : g.nodes)
          if (dst.level > n.level) candidates.emplace_back(n.id, dst.id);
        if (candidates.empty()) throw Error("repair: no possible outgoing edge for node");
        add_uniform(candidates);
        fixed_one = true;
        break;
      }
    }
    if (fixed_one) continue;

    if (longest_path_depth(g) < kNumLevels) {
      // Absent consecutive-level edges deepen the longest path.
      std::vector<std::pair<NodeId, NodeId>> candidates;
      for (const auto& s : g.nodes)
        for (const auto& d : g.nodes)
          if (d.level == s.level + 1 && !g.has_edge(s.id, d.id))
            candidates.emplace_back(s.id, d.id);
      if (candidates.empty())
        throw Error("repair: cannot reach required depth (a level has no nodes)");
      add_uniform(candidates);
      continue;
    }
    break;
  }
  if (added) *added = added_count;
  return g;
}

ArchitectureGraph guided_edge_mutation(const ArchitectureGraph& g, const MutationConfig& cfg,
                                       Rng& rng, GuidedMutationStats* stats) {
  if (cfg.threshold_mode == MutationConfig::ThresholdMode::Constant &&
      (cfg.threshold_b <= 0.0 || cfg.threshold_b >= 1.0))
    throw Error("guided_edge_mutation: constant threshold must lie in (0,1)");

  ArchitectureGraph out = g;
  std::vector<Edge> kept;
  for (const auto& e : g.edges) {
    const double threshold = cfg.threshold_mode == MutationConfig::ThresholdMode::Constant
                                 ? cfg.threshold_b
                                 : rng.uniform();
    if (gate_of(e.logit) > threshold)
      kept.push_back({e.src, e.dst, cfg.keep_inherited_logits ? e.logit : 0.0});
  }
  const int dropped = static_cast<int>(g.edges.size() - kept.size());

  std::vector<std::pair<NodeId, NodeId>> absent;
  for (const auto& slot : g.all_possible_edges())
    if (!g.has_edge(slot.first, slot.second)) absent.push_back(slot);

  const double add_prob =
      absent.empty() ? 0.0 : static_cast<double>(dropped) / static_cast<double>(absent.size());
  int added = 0;
  out.edges = std::move(kept);
  for (const auto& slot : absent)
    if (rng.uniform() < add_prob) {
      out.edges.push_back({slot.first, slot.second, 0.0});
      ++added;
    }
  std::sort(out.edges.begin(), out.edges.end(), [](const Edge& x, const Edge& y) {
    return std::make_pair(x.src, x.dst) < std::make_pair(y.src, y.dst);
  });

  int repaired = 0;
  out = repair(std::move(out), rng, &repaired);
  if (stats) {
    stats->kept = static_cast<int>(g.edges.size()) - dropped;
    stats->dropped = dropped;
    stats->added = added;
    stats->repaired = repaired;
  }
  return out;
}

ArchitectureGraph random_edge_mutation(const ArchitectureGraph& g, double fraction, Rng& rng,
                                       int* toggled) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw Error("random_edge_mutation: fraction must lie in (0,1]");
  const auto slots = g.all_possible_edges();
  const int k = static_cast<int>(
      std::llround(fraction * static_cast<double>(slots.size())));
  if (toggled) *toggled = k;
  if (k == 0) return g;

  std::map<std::pair<NodeId, NodeId>, double> present;
  for (const auto& e : g.edges) present[{e.src, e.dst}] = e.logit;
  const auto chosen = rng.sample_without_replacement(static_cast<int>(slots.size()), k);
  for (int idx : chosen) {
    const auto& slot = slots[static_cast<size_t>(idx)];
    const auto it = present.find(slot);
    if (it != present.end()) present.erase(it);
    else present.emplace(slot, 0.0);
  }
  ArchitectureGraph out = g;
  out.edges.clear();
  for (const auto& [slot, logit] : present) out.edges.push_back({slot.first, slot.second, logit});
  return repair(std::move(out), rng, nullptr);
}

ArchitectureGraph random_architecture(const MutationConfig& cfg, const GraphDefaults& defaults,
                                      Rng& rng) {
  if (cfg.init_edge_prob <= 0.0 || cfg.init_edge_prob > 1.0)
    throw Error("random_architecture: init_edge_prob must lie in (0,1]");
  for (int attempt = 0; attempt < cfg.init_retry_budget; ++attempt) {
    ArchitectureGraph g;
    g.level_channel_budget = defaults.level_budget;
    int next = 0;
    const int stems = rng.bernoulli(0.5) ? 2 : 4;
    const int stem_c = stems == 2 ? defaults.stem_channels
                                  : std::max(1, defaults.stem_channels / 2);
    for (int s = 0; s < stems; ++s) {
      BlockNode n;
      n.id = next++;
      n.level = 0;
      n.kind = s < stems / 2 ? NodeKind::AppearanceStem : NodeKind::MotionStem;
      n.channels = stem_c;
      n.spatial_stride = 4;
      g.nodes.push_back(n);
    }
    for (int level = 1; level <= kNumLevels; ++level) {
      const int count = level == kNumLevels ? 1 : 2;
      const int budget = defaults.level_budget[static_cast<size_t>(level)];
      if (budget % count != 0) throw Error("random_architecture: budget not divisible");
      for (int i = 0; i < count; ++i) {
        BlockNode n;
        n.id = next++;
        n.level = level;
        n.kind = NodeKind::Intermediate;
        n.channels = budget / count;
        n.spatial_stride = defaults.level_stride[static_cast<size_t>(level)];
        g.nodes.push_back(n);
      }
    }

    const int splits =
        static_cast<int>(rng.uniform_int(cfg.init_splits_min, cfg.init_splits_max));
    for (int s = 0; s < splits; ++s) {
      std::vector<size_t> eligible;
      for (size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].kind == NodeKind::Intermediate && g.nodes[i].channels % 2 == 0)
          eligible.push_back(i);
      if (eligible.empty()) break;
      const size_t pick =
          eligible[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
      BlockNode clone = g.nodes[pick];
      g.nodes[pick].channels /= 2;
      clone.id = next++;
      clone.channels = g.nodes[pick].channels;
      g.nodes.push_back(clone);  // no edges exist yet, so connections stay trivially identical
    }

    for (auto& n : g.nodes)
      n.temporal_resolution = cfg.allowed_resolutions[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(cfg.allowed_resolutions.size()) - 1))];

    g = canonicalized(std::move(g));
    for (const auto& slot : g.all_possible_edges())
      if (rng.uniform() < cfg.init_edge_prob) g.edges.push_back({slot.first, slot.second, 0.0});
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& x, const Edge& y) {
      return std::make_pair(x.src, x.dst) < std::make_pair(y.src, y.dst);
    });

    if (validate_graph(g).ok) return g;
  }
  throw Error("random_architecture: retry budget exhausted (" +
              std::to_string(cfg.init_retry_budget) + " attempts)");
}

std::vector<ArchitectureGraph> init_population(int size, const MutationConfig& cfg,
                                               const GraphDefaults& defaults, Rng& rng) {
  if (size < 2) throw Error("init_population: size must be >= 2");
  std::vector<ArchitectureGraph> out;
  out.reserve(static_cast<size_t>(size));
  for (int i = 0; i < size; ++i) out.push_back(random_architecture(cfg, defaults, rng));
  return out;
}

}  // namespace msnas
