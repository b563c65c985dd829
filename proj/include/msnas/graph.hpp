#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace msnas {

inline constexpr int kNumLevels = 4;  // block levels 1..4; level 0 is the stem level
inline constexpr std::array<int, 4> kAllowedResolutions{1, 2, 4, 8};

enum class NodeKind { AppearanceStem, MotionStem, Intermediate };

const char* to_string(NodeKind kind);

using NodeId = int;

struct BlockNode {
  NodeId id = -1;
  int level = 0;                 // 0 = stem, 1..4 = block levels
  NodeKind kind = NodeKind::Intermediate;
  int channels = 0;              // C
  int temporal_resolution = 1;   // r in {1,2,4,8}
  int spatial_stride = 1;        // applied at the block's first 2D conv

  bool is_stem() const { return level == 0; }

  friend bool operator==(const BlockNode&, const BlockNode&) = default;
};

struct Edge {
  NodeId src = -1;
  NodeId dst = -1;
  double logit = 0.0;  // gate weight is sigmoid(logit)

  friend bool operator==(const Edge&, const Edge&) = default;
};

double gate_of(double logit);

struct Violation {
  std::string rule;
  std::string detail;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;

  void add(std::string rule, std::string detail);
  std::string to_string() const;
};

// Level-ordered DAG of convolutional blocks. Values are treated as
// immutable: mutation operators return new graphs. Nodes are kept in
// canonical order (ascending level, insertion order within a level) and
// ids always equal positions, which makes the table serialization and
// structural comparisons trivial.
struct ArchitectureGraph {
  std::vector<BlockNode> nodes;
  std::vector<Edge> edges;                    // sorted by (src, dst), unique pairs
  std::array<int, kNumLevels + 1> level_channel_budget{};  // index 1..4; stems excluded

  const BlockNode& node(NodeId id) const;
  bool has_edge(NodeId src, NodeId dst) const;
  const Edge* find_edge(NodeId src, NodeId dst) const;
  std::vector<NodeId> inputs_of(NodeId id) const;   // ascending
  std::vector<NodeId> outputs_of(NodeId id) const;  // ascending
  std::vector<NodeId> nodes_at_level(int level) const;
  int stem_count() const;
  int stem_width() const;  // max stem channel count

  // All (src, dst) pairs with level(src) < level(dst) over the current
  // node set, i.e. the candidate edge space the search explores.
  std::vector<std::pair<NodeId, NodeId>> all_possible_edges() const;

  ArchitectureGraph with_logits(const std::map<std::pair<NodeId, NodeId>, double>& logits) const;

  friend bool operator==(const ArchitectureGraph&, const ArchitectureGraph&) = default;
};

// Re-sorts nodes by (level, previous order), rewrites ids to positions and
// normalizes edge order. Every function producing a graph calls this.
ArchitectureGraph canonicalized(ArchitectureGraph g);

ValidationReport validate_graph(const ArchitectureGraph& g);

// Edge count of the longest stem-to-level-4 path; 0 if no level-4 node is
// reachable from a stem.
int longest_path_depth(const ArchitectureGraph& g);

// Structure-sensitive 64-bit label per node, stable under node relabeling
// (iterated neighborhood hashing). Used to derive parameter-init streams
// so isomorphic graphs compile to identical networks.
std::vector<uint64_t> structural_colors(const ArchitectureGraph& g);

// --- Table-form serialization -------------------------------------------
//
// One row per node in the format
//   index: level, [inputs], C, r, stride
// where stems use [RGB] / [Flow] as their input list. `#` starts a comment.
// Edge gate logits follow the rows as lines `w <src> <dst> <logit>`.

std::string encode_table(const ArchitectureGraph& g);
ArchitectureGraph decode_table(const std::string& text);

// One-line structural summary ("15 nodes (4 stems), 31 edges, depth 4").
std::string summarize(const ArchitectureGraph& g);

// DOT rendering with edge pen widths proportional to the learned gates;
// the implicit sink is drawn as its own node.
std::string export_dot(const ArchitectureGraph& g);

// The bundled reference architecture (4 stems, 15 nodes) used by tests and
// `build --reference`.
const std::string& reference_table_text();

}  // namespace msnas
