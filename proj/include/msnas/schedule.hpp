#pragma once

#include <array>
#include <vector>

#include "msnas/graph.hpp"

namespace msnas {

enum class ModuleKind { Plain2D, TwoPlusOneD };

// Residual-module pattern of one block: floor(m) repetitions of
// [2D, (2+1)D] and, for fractional m, one trailing 2D module. m = 1.5
// therefore yields [2D, (2+1)D, 2D]. Every module holds three conv layers.
std::vector<ModuleKind> module_sequence(double m);

int conv_layer_count(double m);

// Per-level layer widths of the compiled networks plus the knobs shared by
// the builder and the parameter accounting.
struct LayerSchedule {
  std::array<double, kNumLevels + 1> m_per_level{0, 0.5, 1, 1, 0.5};
  std::array<int, kNumLevels + 1> d_per_level{0, 8, 16, 32, 64};  // 2D conv width D_v
  int stem_channels = 8;   // width of stems in two-stem models; four-stem models use half
  int expansion = 4;       // block output width = expansion * C
  int num_classes = 12;
  int in_channels_appearance = 2;
  int in_channels_motion = 2;
  bool concat_level4 = false;  // sink combines level-4 outputs by mean unless set

  static LayerSchedule desk();
  // Full-size preset kept for documentation; not a training target here.
  static LayerSchedule reference_scale();
};

// Defaults for constructing fresh graphs (initial population, baselines).
struct GraphDefaults {
  std::array<int, kNumLevels + 1> level_budget{0, 16, 32, 64, 128};
  std::array<int, kNumLevels + 1> level_stride{0, 1, 2, 2, 2};
  int stem_channels = 8;  // halved when a model uses four stems

  static GraphDefaults desk();
  static GraphDefaults reference_scale();
};

// Width every incoming tensor is adapted to before the gated sum at a
// level-v block. Constant per level so that block-internal parameter
// counts do not depend on connectivity.
int block_in_width(const ArchitectureGraph& g, const LayerSchedule& s, int level);

int block_out_width(const BlockNode& n, const LayerSchedule& s);

// Width of the classifier input (level-4 outputs are adapted to it).
int head_width(const ArchitectureGraph& g, const LayerSchedule& s);

struct ParameterBreakdown {
  long long stem_conv = 0;
  long long stem_bn = 0;
  long long block_conv = 0;  // module conv + projection weights; exactly invariant under split/merge
  long long block_bn = 0;
  long long adapter = 0;     // channel-matching 1x1 convs on edges and at the sink
  long long edge_logits = 0;
  long long head = 0;

  long long total() const {
    return stem_conv + stem_bn + block_conv + block_bn + adapter + edge_logits + head;
  }
};

// Exact count of trainable scalars in the network compile() would produce.
ParameterBreakdown parameter_count(const ArchitectureGraph& g, const LayerSchedule& s);

}  // namespace msnas
