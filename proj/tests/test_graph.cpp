#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "msnas/errors.hpp"
#include "msnas/graph.hpp"
#include "msnas/mutations.hpp"
#include "msnas/schedule.hpp"

using namespace msnas;

namespace {

ArchitectureGraph chain_graph() {
  // stem -> L1 -> L2 -> L3 -> L4, one node per level, desk budgets.
  ArchitectureGraph g;
  g.level_channel_budget = {0, 16, 32, 64, 128};
  g.nodes.push_back({0, 0, NodeKind::AppearanceStem, 8, 1, 4});
  g.nodes.push_back({1, 1, NodeKind::Intermediate, 16, 1, 1});
  g.nodes.push_back({2, 2, NodeKind::Intermediate, 32, 2, 2});
  g.nodes.push_back({3, 3, NodeKind::Intermediate, 64, 4, 2});
  g.nodes.push_back({4, 4, NodeKind::Intermediate, 128, 1, 2});
  for (int i = 0; i < 4; ++i) g.edges.push_back({i, i + 1, 0.0});
  return canonicalized(std::move(g));
}

}  // namespace

TEST_CASE("reference architecture decodes to the expected 15-node graph") {
  const ArchitectureGraph g = decode_table(reference_table_text());
  REQUIRE(g.nodes.size() == 15);
  CHECK(g.stem_count() == 4);
  CHECK(validate_graph(g).ok);

  // Row 8: level 2, inputs [0,4,5,6,7], C=64, r=2, stride 2.
  const BlockNode& n8 = g.node(8);
  CHECK(n8.level == 2);
  CHECK(n8.channels == 64);
  CHECK(n8.temporal_resolution == 2);
  CHECK(n8.spatial_stride == 2);
  CHECK(g.inputs_of(8) == std::vector<NodeId>{0, 4, 5, 6, 7});

  CHECK(g.node(0).kind == NodeKind::AppearanceStem);
  CHECK(g.node(2).kind == NodeKind::MotionStem);
  CHECK(g.node(14).level == 4);
  CHECK(g.inputs_of(14) == std::vector<NodeId>{12, 13});
  // Induced budgets follow the listed channel sizes.
  CHECK(g.level_channel_budget[1] == 128);
  CHECK(g.level_channel_budget[4] == 512);
}

TEST_CASE("validation reports specific violations") {
  ArchitectureGraph g = chain_graph();
  CHECK(validate_graph(g).ok);

  SUBCASE("edge reversing level order") {
    g.edges.push_back({3, 1, 0.0});
    std::sort(g.edges.begin(), g.edges.end(),
              [](const Edge& a, const Edge& b) {
                return std::make_pair(a.src, a.dst) < std::make_pair(b.src, b.dst);
              });
    const auto report = validate_graph(g);
    REQUIRE_FALSE(report.ok);
    bool found = false;
    for (const auto& v : report.violations) found |= v.rule == "edge reverses level ordering";
    CHECK(found);
  }

  SUBCASE("channel budget mismatch") {
    g.nodes[2].channels = 40;  // level-2 sum 40 under budget 32
    const auto report = validate_graph(g);
    REQUIRE_FALSE(report.ok);
    bool found = false;
    for (const auto& v : report.violations) found |= v.rule == "channel budget";
    CHECK(found);
  }

  SUBCASE("disconnected intermediate") {
    g.edges.erase(g.edges.begin());  // L1 node loses its only input
    const auto report = validate_graph(g);
    REQUIRE_FALSE(report.ok);
    bool found = false;
    for (const auto& v : report.violations) found |= v.rule == "disconnected";
    CHECK(found);
  }

  SUBCASE("bad temporal resolution") {
    g.nodes[1].temporal_resolution = 3;
    CHECK_FALSE(validate_graph(g).ok);
  }
}

TEST_CASE("longest path depth") {
  CHECK(longest_path_depth(chain_graph()) == 4);

  // Skip connections shorten the path: stem -> L2 -> L4 only.
  ArchitectureGraph g;
  g.level_channel_budget = {0, 0, 32, 0, 128};
  g.nodes.push_back({0, 0, NodeKind::AppearanceStem, 8, 1, 4});
  g.nodes.push_back({1, 2, NodeKind::Intermediate, 32, 1, 2});
  g.nodes.push_back({2, 4, NodeKind::Intermediate, 128, 1, 2});
  g.edges.push_back({0, 1, 0.0});
  g.edges.push_back({1, 2, 0.0});
  g = canonicalized(std::move(g));
  CHECK(longest_path_depth(g) == 2);

  // No reachable level-4 node.
  g.edges.pop_back();
  CHECK(longest_path_depth(g) == 0);

  // Level ordering caps the depth at 4; the reference model attains it.
  CHECK(longest_path_depth(decode_table(reference_table_text())) == 4);
}

TEST_CASE("encode/decode round trip") {
  const ArchitectureGraph ref = decode_table(reference_table_text());
  CHECK(decode_table(encode_table(ref)) == ref);

  // Logits serialize with full precision.
  ArchitectureGraph g = chain_graph();
  g.edges[0].logit = 0.1234567890123456789;
  g.edges[1].logit = -3.75;
  CHECK(decode_table(encode_table(g)) == g);

  MutationConfig mcfg;
  GraphDefaults defaults;
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    ArchitectureGraph r = random_architecture(mcfg, defaults, rng);
    for (auto& e : r.edges) e.logit = rng.normal();
    CHECK(decode_table(encode_table(r)) == r);
  }
}

TEST_CASE("decode rejects malformed tables") {
  CHECK_THROWS_AS(decode_table(""), ParseError);
  // Unknown stem kind.
  CHECK_THROWS_AS(decode_table("0: 0, [Depth], 8, 1, 4\n"), ParseError);
  // Input referencing a later row.
  CHECK_THROWS_AS(decode_table("0: 0, [RGB], 8, 1, 4\n1: 1, [2], 8, 1, 1\n"), ParseError);
  // Input from an equal-or-higher level (would create a cycle).
  CHECK_THROWS_AS(
      decode_table("0: 0, [RGB], 8, 1, 4\n1: 2, [0], 8, 1, 1\n2: 1, [1], 8, 1, 1\n"),
      ParseError);
  // Out-of-order row index.
  CHECK_THROWS_AS(decode_table("1: 0, [RGB], 8, 1, 4\n"), ParseError);
  // Logit line for a missing edge.
  CHECK_THROWS_AS(decode_table("0: 0, [RGB], 8, 1, 4\nw 0 1 0.5\n"), ParseError);
  // Duplicate input reference.
  CHECK_THROWS_AS(decode_table("0: 0, [RGB], 8, 1, 4\n1: 1, [0, 0], 8, 1, 1\n"), ParseError);

  // Comments and blank lines are fine.
  const ArchitectureGraph g =
      decode_table("# comment\n\n0: 0, [RGB], 8, 1, 4  # stem\n1: 4, [0], 8, 1, 2\n");
  CHECK(g.nodes.size() == 2);
}

TEST_CASE("DOT export") {
  ArchitectureGraph g;
  g.level_channel_budget = {0, 0, 0, 0, 16};
  g.nodes.push_back({0, 0, NodeKind::AppearanceStem, 8, 1, 4});
  g.nodes.push_back({1, 4, NodeKind::Intermediate, 16, 1, 2});
  g.edges.push_back({0, 1, 0.0});
  g = canonicalized(std::move(g));

  const std::string dot = export_dot(g);
  CHECK(dot.find("n0") != std::string::npos);
  CHECK(dot.find("n1") != std::string::npos);
  CHECK(dot.find("label=\"0.50\"") != std::string::npos);  // sigmoid(0) = 0.5
  CHECK(dot.find("sink") != std::string::npos);

  const std::string ref_dot = export_dot(decode_table(reference_table_text()));
  for (int i = 0; i < 15; ++i)
    CHECK(ref_dot.find("n" + std::to_string(i) + " ") != std::string::npos);
  CHECK(ref_dot.find("n14 -> sink") != std::string::npos);
}

TEST_CASE("module sequences and conv layer counts") {
  CHECK(module_sequence(0.5) == std::vector<ModuleKind>{ModuleKind::Plain2D});
  CHECK(module_sequence(1.0) ==
        std::vector<ModuleKind>{ModuleKind::Plain2D, ModuleKind::TwoPlusOneD});
  CHECK(module_sequence(1.5).size() == 3);
  CHECK(conv_layer_count(1.5) == 9);
  CHECK(conv_layer_count(2.0) == 12);
  CHECK(conv_layer_count(3.0) == 18);
  CHECK(module_sequence(11.5).size() == 23);
  CHECK_THROWS_AS(module_sequence(0.75), Error);
  CHECK_THROWS_AS(module_sequence(0.0), Error);
}

TEST_CASE("parameter count matches the hand-enumerated chain") {
  // Every layer of the stem->L1->L2->L3->L4 chain at the desk schedule,
  // summed by hand:
  //   stem:   7x7 conv 49*2*8 + temporal 5*8*8          = 1104, bn 32
  //   L1:     8*16 + 9*16*8 + 8*64 + proj 8*64          = 2304, bn 304
  //   L2:     64*32 + 9*32*16 + 16*128 + proj 64*128
  //         + dw 3*128 + 9*128*16 + 16*128              = 37760, bn 1152
  //   L3:     128*64 + 9*64*32 + 32*256 + proj 128*256
  //         + dw 3*256 + 9*256*32 + 32*256              = 150272, bn 2304
  //   L4:     256*128 + 9*128*64 + 64*512 + proj 256*512 = 270336, bn 2432
  //   head:   512*12 + 12                                = 6156
  const ArchitectureGraph g = chain_graph();
  const LayerSchedule s = LayerSchedule::desk();
  const ParameterBreakdown p = parameter_count(g, s);
  CHECK(p.stem_conv == 1104);
  CHECK(p.stem_bn == 32);
  CHECK(p.block_conv == 2304 + 37760 + 150272 + 270336);
  CHECK(p.block_bn == 304 + 1152 + 2304 + 2432);
  CHECK(p.adapter == 0);  // unsplit chain: widths line up exactly
  CHECK(p.edge_logits == 4);
  CHECK(p.head == 6156);
  CHECK(p.total() == 474160);
}

TEST_CASE("block-internal parameter count is split-invariant") {
  const ArchitectureGraph g = chain_graph();
  const LayerSchedule s = LayerSchedule::desk();
  Rng rng(3);
  const ParameterBreakdown before = parameter_count(g, s);
  const ArchitectureGraph split = split_node(g, 2, rng);
  const ParameterBreakdown after = parameter_count(split, s);
  CHECK(after.block_conv == before.block_conv);
  CHECK(validate_graph(split).ok);
}

TEST_CASE("parameter count of an empty graph keeps only the classifier bias") {
  ArchitectureGraph g;  // budgets all zero
  const ParameterBreakdown p = parameter_count(g, LayerSchedule::desk());
  CHECK(p.block_conv == 0);
  CHECK(p.stem_conv == 0);
  CHECK(p.adapter == 0);
  CHECK(p.head == 12);  // bias of the 12-way classifier
}

TEST_CASE("structural colors separate distinct nodes and match twins") {
  const ArchitectureGraph ref = decode_table(reference_table_text());
  const auto colors = structural_colors(ref);
  CHECK(colors.size() == ref.nodes.size());
  // The stems share attributes but differ in out-connectivity.
  CHECK(colors[0] != colors[1]);
  CHECK(colors[2] != colors[3]);
  // Distinct level-1 nodes with different connectivity get distinct colors.
  CHECK(colors[4] != colors[5]);
  CHECK(colors[5] != colors[6]);

  // Split children share every attribute and connection: genuine twins.
  Rng rng(5);
  const ArchitectureGraph split = split_node(chain_graph(), 2, rng);
  const auto split_colors = structural_colors(split);
  const auto level2 = split.nodes_at_level(2);
  REQUIRE(level2.size() == 2);
  CHECK(split_colors[static_cast<size_t>(level2[0])] ==
        split_colors[static_cast<size_t>(level2[1])]);
}
