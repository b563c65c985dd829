#include "msnas/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "msnas/errors.hpp"

namespace msnas {

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::AppearanceStem: return "appearance_stem";
    case NodeKind::MotionStem: return "motion_stem";
    case NodeKind::Intermediate: return "intermediate";
  }
  return "?";
}

double gate_of(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

void ValidationReport::add(std::string rule, std::string detail) {
  ok = false;
  violations.push_back({std::move(rule), std::move(detail)});
}

std::string ValidationReport::to_string() const {
  if (ok) return "ok";
  std::ostringstream os;
  for (const auto& v : violations) os << v.rule << ": " << v.detail << "\n";
  return os.str();
}

const BlockNode& ArchitectureGraph::node(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes.size()))
    throw Error("unknown node id " + std::to_string(id));
  return nodes[static_cast<size_t>(id)];
}

const Edge* ArchitectureGraph::find_edge(NodeId src, NodeId dst) const {
  auto it = std::lower_bound(edges.begin(), edges.end(), std::make_pair(src, dst),
                             [](const Edge& e, const std::pair<NodeId, NodeId>& key) {
                               return std::make_pair(e.src, e.dst) < key;
                             });
  if (it != edges.end() && it->src == src && it->dst == dst) return &*it;
  return nullptr;
}

bool ArchitectureGraph::has_edge(NodeId src, NodeId dst) const { return find_edge(src, dst) != nullptr; }

std::vector<NodeId> ArchitectureGraph::inputs_of(NodeId id) const {
  std::vector<NodeId> out;
  for (const auto& e : edges)
    if (e.dst == id) out.push_back(e.src);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<NodeId> ArchitectureGraph::outputs_of(NodeId id) const {
  std::vector<NodeId> out;
  for (const auto& e : edges)
    if (e.src == id) out.push_back(e.dst);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<NodeId> ArchitectureGraph::nodes_at_level(int level) const {
  std::vector<NodeId> out;
  for (const auto& n : nodes)
    if (n.level == level) out.push_back(n.id);
  return out;
}

int ArchitectureGraph::stem_count() const {
  return static_cast<int>(nodes_at_level(0).size());
}

int ArchitectureGraph::stem_width() const {
  int w = 0;
  for (const auto& n : nodes)
    if (n.is_stem()) w = std::max(w, n.channels);
  return w;
}

std::vector<std::pair<NodeId, NodeId>> ArchitectureGraph::all_possible_edges() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (const auto& a : nodes)
    for (const auto& b : nodes)
      if (a.level < b.level) out.emplace_back(a.id, b.id);
  std::sort(out.begin(), out.end());
  return out;
}

ArchitectureGraph ArchitectureGraph::with_logits(
    const std::map<std::pair<NodeId, NodeId>, double>& logits) const {
  ArchitectureGraph g = *this;
  for (auto& e : g.edges) {
    auto it = logits.find({e.src, e.dst});
    if (it != logits.end()) e.logit = it->second;
  }
  return g;
}

ArchitectureGraph canonicalized(ArchitectureGraph g) {
  std::vector<size_t> order(g.nodes.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return g.nodes[a].level < g.nodes[b].level;
  });
  std::vector<NodeId> remap(g.nodes.size(), -1);
  std::vector<BlockNode> nodes;
  nodes.reserve(g.nodes.size());
  for (size_t pos = 0; pos < order.size(); ++pos) {
    BlockNode n = g.nodes[order[pos]];
    remap[static_cast<size_t>(n.id)] = static_cast<NodeId>(pos);
    n.id = static_cast<NodeId>(pos);
    nodes.push_back(n);
  }
  for (auto& e : g.edges) {
    e.src = remap[static_cast<size_t>(e.src)];
    e.dst = remap[static_cast<size_t>(e.dst)];
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
    return std::make_pair(a.src, a.dst) < std::make_pair(b.src, b.dst);
  });
  for (size_t i = 1; i < g.edges.size(); ++i)
    if (g.edges[i].src == g.edges[i - 1].src && g.edges[i].dst == g.edges[i - 1].dst)
      throw Error("duplicate edge " + std::to_string(g.edges[i].src) + "->" +
                  std::to_string(g.edges[i].dst));
  g.nodes = std::move(nodes);
  return g;
}

ValidationReport validate_graph(const ArchitectureGraph& g) {
  ValidationReport report;
  const int n = static_cast<int>(g.nodes.size());

  for (const auto& node : g.nodes) {
    const std::string who = "node " + std::to_string(node.id);
    if (node.level < 0 || node.level > kNumLevels)
      report.add("level range", who + " has level " + std::to_string(node.level));
    if ((node.level == 0) != (node.kind != NodeKind::Intermediate))
      report.add("stem level", who + " kind " + to_string(node.kind) + " at level " +
                                   std::to_string(node.level));
    if (node.channels <= 0)
      report.add("channels positive", who + " has C=" + std::to_string(node.channels));
    if (std::find(kAllowedResolutions.begin(), kAllowedResolutions.end(),
                  node.temporal_resolution) == kAllowedResolutions.end())
      report.add("temporal resolution", who + " has r=" + std::to_string(node.temporal_resolution));
    if (node.spatial_stride != 1 && node.spatial_stride != 2 && node.spatial_stride != 4)
      report.add("spatial stride", who + " has stride " + std::to_string(node.spatial_stride));
  }

  for (const auto& e : g.edges) {
    const std::string who = "edge " + std::to_string(e.src) + "->" + std::to_string(e.dst);
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      report.add("edge endpoints", who + " references a missing node");
      continue;
    }
    if (g.node(e.src).level >= g.node(e.dst).level)
      report.add("edge reverses level ordering", who);
  }

  for (int level = 1; level <= kNumLevels; ++level) {
    int sum = 0;
    for (const auto& node : g.nodes)
      if (node.level == level) sum += node.channels;
    if (sum != g.level_channel_budget[static_cast<size_t>(level)])
      report.add("channel budget",
                 "level " + std::to_string(level) + " sums to " + std::to_string(sum) +
                     " under budget " +
                     std::to_string(g.level_channel_budget[static_cast<size_t>(level)]));
  }

  for (const auto& node : g.nodes) {
    if (node.is_stem()) continue;
    const std::string who = "node " + std::to_string(node.id);
    if (g.inputs_of(node.id).empty()) report.add("disconnected", who + " has no incoming edge");
    if (node.level < kNumLevels && g.outputs_of(node.id).empty())
      report.add("disconnected", who + " has no outgoing edge");
  }

  // Only meaningful once the structural checks hold.
  if (report.ok && longest_path_depth(g) < kNumLevels)
    report.add("depth", "longest stem-to-level-4 path has " +
                            std::to_string(longest_path_depth(g)) + " edges, need " +
                            std::to_string(kNumLevels));
  return report;
}

int longest_path_depth(const ArchitectureGraph& g) {
  // Node ids are topologically ordered by level, so a single pass works.
  constexpr int kUnreached = -1;
  std::vector<int> depth(g.nodes.size(), kUnreached);
  for (const auto& node : g.nodes)
    if (node.is_stem()) depth[static_cast<size_t>(node.id)] = 0;
  for (const auto& node : g.nodes) {
    if (node.is_stem()) continue;
    int best = kUnreached;
    for (const auto& e : g.edges)
      if (e.dst == node.id && depth[static_cast<size_t>(e.src)] != kUnreached)
        best = std::max(best, depth[static_cast<size_t>(e.src)] + 1);
    depth[static_cast<size_t>(node.id)] = best;
  }
  int result = 0;
  for (const auto& node : g.nodes)
    if (node.level == kNumLevels && depth[static_cast<size_t>(node.id)] > result)
      result = depth[static_cast<size_t>(node.id)];
  return result;
}

namespace {

uint64_t mix64(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return h;
}

}  // namespace

std::vector<uint64_t> structural_colors(const ArchitectureGraph& g) {
  std::vector<uint64_t> colors(g.nodes.size());
  for (const auto& n : g.nodes) {
    uint64_t c = 0x9d3f6e1aULL;
    c = mix64(c, static_cast<uint64_t>(n.level));
    c = mix64(c, static_cast<uint64_t>(n.kind));
    c = mix64(c, static_cast<uint64_t>(n.channels));
    c = mix64(c, static_cast<uint64_t>(n.temporal_resolution));
    c = mix64(c, static_cast<uint64_t>(n.spatial_stride));
    colors[static_cast<size_t>(n.id)] = c;
  }
  // Influence can travel at most kNumLevels hops, so a fixed iteration
  // count reaches the refinement fixpoint.
  for (int iter = 0; iter <= kNumLevels + 1; ++iter) {
    std::vector<uint64_t> next = colors;
    for (const auto& n : g.nodes) {
      std::vector<uint64_t> in, out;
      for (const auto& e : g.edges) {
        if (e.dst == n.id) in.push_back(colors[static_cast<size_t>(e.src)]);
        if (e.src == n.id) out.push_back(colors[static_cast<size_t>(e.dst)]);
      }
      std::sort(in.begin(), in.end());
      std::sort(out.begin(), out.end());
      uint64_t c = mix64(colors[static_cast<size_t>(n.id)], 0x51ed2701ULL);
      for (uint64_t v : in) c = mix64(c, v);
      c = mix64(c, 0xabcd1234ULL);
      for (uint64_t v : out) c = mix64(c, v);
      next[static_cast<size_t>(n.id)] = c;
    }
    colors = std::move(next);
  }
  return colors;
}

// --- Table-form serialization -------------------------------------------

namespace {

std::string format_logit(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void row_error(int row, const std::string& what) {
  throw ParseError("row " + std::to_string(row) + ": " + what);
}

}  // namespace

std::string encode_table(const ArchitectureGraph& graph) {
  ArchitectureGraph g = canonicalized(graph);
  std::ostringstream os;
  os << "# index: level, [inputs], C, r, stride\n";
  for (const auto& n : g.nodes) {
    os << n.id << ": " << n.level << ", [";
    if (n.is_stem()) {
      os << (n.kind == NodeKind::AppearanceStem ? "RGB" : "Flow");
    } else {
      const auto ins = g.inputs_of(n.id);
      for (size_t i = 0; i < ins.size(); ++i) os << (i ? "," : "") << ins[i];
    }
    os << "], " << n.channels << ", " << n.temporal_resolution << ", " << n.spatial_stride
       << "\n";
  }
  for (const auto& e : g.edges)
    os << "w " << e.src << " " << e.dst << " " << format_logit(e.logit) << "\n";
  return os.str();
}

ArchitectureGraph decode_table(const std::string& text) {
  ArchitectureGraph g;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  bool in_logit_section = false;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string line = strip(raw);
    if (line.empty()) continue;

    if (line[0] == 'w' && (line.size() == 1 || line[1] == ' ' || line[1] == '\t')) {
      in_logit_section = true;
      std::istringstream ls(line.substr(1));
      NodeId src, dst;
      double logit;
      if (!(ls >> src >> dst >> logit))
        throw ParseError("line " + std::to_string(line_no) + ": malformed logit line '" + line + "'");
      std::string rest;
      if (ls >> rest)
        throw ParseError("line " + std::to_string(line_no) + ": trailing content on logit line");
      bool found = false;
      for (auto& e : g.edges)
        if (e.src == src && e.dst == dst) {
          e.logit = logit;
          found = true;
        }
      if (!found)
        throw ParseError("line " + std::to_string(line_no) + ": logit for missing edge " +
                         std::to_string(src) + "->" + std::to_string(dst));
      continue;
    }
    if (in_logit_section)
      throw ParseError("line " + std::to_string(line_no) + ": node row after logit section");

    const int row = static_cast<int>(g.nodes.size());
    const auto colon = line.find(':');
    if (colon == std::string::npos) row_error(row, "missing ':' in '" + line + "'");
    int index;
    try {
      index = std::stoi(strip(line.substr(0, colon)));
    } catch (const std::exception&) {
      row_error(row, "bad row index in '" + line + "'");
    }
    if (index != row) row_error(row, "row index " + std::to_string(index) + " out of order");

    std::string rest = strip(line.substr(colon + 1));
    const auto lb = rest.find('[');
    const auto rb = rest.find(']');
    if (lb == std::string::npos || rb == std::string::npos || rb < lb)
      row_error(row, "missing input list");
    std::string head = strip(rest.substr(0, lb));
    if (!head.empty() && head.back() == ',') head.pop_back();
    const std::string list = strip(rest.substr(lb + 1, rb - lb - 1));
    std::string tail = strip(rest.substr(rb + 1));
    if (!tail.empty() && tail.front() == ',') tail = strip(tail.substr(1));

    int level;
    try {
      level = std::stoi(head);
    } catch (const std::exception&) {
      row_error(row, "bad level field");
    }
    int fields[3];
    {
      std::istringstream ts(tail);
      std::string tok;
      int k = 0;
      while (std::getline(ts, tok, ',')) {
        if (k >= 3) row_error(row, "too many fields");
        try {
          fields[k++] = std::stoi(strip(tok));
        } catch (const std::exception&) {
          row_error(row, "bad numeric field '" + strip(tok) + "'");
        }
      }
      if (k != 3) row_error(row, "expected C, r, stride");
    }

    BlockNode node;
    node.id = row;
    node.level = level;
    node.channels = fields[0];
    node.temporal_resolution = fields[1];
    node.spatial_stride = fields[2];

    if (level == 0) {
      if (list == "RGB") node.kind = NodeKind::AppearanceStem;
      else if (list == "Flow") node.kind = NodeKind::MotionStem;
      else row_error(row, "unknown stem kind '" + list + "'");
    } else {
      node.kind = NodeKind::Intermediate;
      if (level < 0 || level > kNumLevels) row_error(row, "level out of range");
      std::istringstream ls(list);
      std::string tok;
      std::vector<NodeId> seen;
      while (std::getline(ls, tok, ',')) {
        tok = strip(tok);
        if (tok.empty()) row_error(row, "empty input entry");
        NodeId src;
        try {
          src = std::stoi(tok);
        } catch (const std::exception&) {
          row_error(row, "bad input reference '" + tok + "'");
        }
        if (src < 0 || src >= row) row_error(row, "input " + tok + " is not an earlier row");
        if (g.nodes[static_cast<size_t>(src)].level >= level)
          row_error(row, "input " + tok + " does not have a lower level");
        if (std::find(seen.begin(), seen.end(), src) != seen.end())
          row_error(row, "duplicate input " + tok);
        seen.push_back(src);
        g.edges.push_back({src, row, 0.0});
      }
    }
    g.nodes.push_back(node);
  }
  if (g.nodes.empty()) throw ParseError("no rows found");
  for (int level = 1; level <= kNumLevels; ++level) {
    int sum = 0;
    for (const auto& n : g.nodes)
      if (n.level == level) sum += n.channels;
    g.level_channel_budget[static_cast<size_t>(level)] = sum;
  }
  return canonicalized(std::move(g));
}

std::string summarize(const ArchitectureGraph& g) {
  std::ostringstream os;
  os << g.nodes.size() << " nodes (" << g.stem_count() << " stems), " << g.edges.size()
     << " edges, depth " << longest_path_depth(g);
  return os.str();
}

std::string export_dot(const ArchitectureGraph& g) {
  std::ostringstream os;
  os << "digraph arch {\n  rankdir=TB;\n  node [shape=box, style=rounded];\n";
  for (const auto& n : g.nodes) {
    os << "  n" << n.id << " [label=\"" << n.id << " L" << n.level;
    if (n.is_stem()) os << (n.kind == NodeKind::AppearanceStem ? " RGB" : " Flow");
    os << "\\nC=" << n.channels << " r=" << n.temporal_resolution << "\"];\n";
  }
  os << "  sink [label=\"sink\", shape=oval];\n";
  char buf[64];
  for (const auto& e : g.edges) {
    const double gate = gate_of(e.logit);
    std::snprintf(buf, sizeof buf, "%.2f", gate);
    os << "  n" << e.src << " -> n" << e.dst << " [penwidth=" << 0.4 + 3.6 * gate
       << ", label=\"" << buf << "\"];\n";
  }
  for (const auto& n : g.nodes)
    if (n.level == kNumLevels) os << "  n" << n.id << " -> sink [style=dashed];\n";
  os << "}\n";
  return os.str();
}

const std::string& reference_table_text() {
  static const std::string text =
      "# bundled reference architecture\n"
      "0: 0, [RGB], 32, 4, 4\n"
      "1: 0, [RGB], 32, 4, 4\n"
      "2: 0, [Flow], 32, 1, 4\n"
      "3: 0, [Flow], 32, 1, 4\n"
      "4: 1, [1], 32, 1, 1\n"
      "5: 1, [0], 32, 4, 1\n"
      "6: 1, [0,1,2,3], 32, 1, 1\n"
      "7: 1, [2,3], 32, 2, 1\n"
      "8: 2, [0,4,5,6,7], 64, 2, 2\n"
      "9: 2, [0,2,4,7], 64, 1, 2\n"
      "10: 2, [0,5,7], 64, 4, 2\n"
      "11: 2, [0,5], 64, 1, 2\n"
      "12: 3, [4,8,10,11], 256, 1, 2\n"
      "13: 3, [8,9], 256, 4, 2\n"
      "14: 4, [12,13], 512, 2, 2\n";
  return text;
}

}  // namespace msnas
