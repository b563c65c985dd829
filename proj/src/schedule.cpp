#include "msnas/schedule.hpp"

#include <cmath>

#include "msnas/errors.hpp"

namespace msnas {

std::vector<ModuleKind> module_sequence(double m) {
  const double doubled = 2.0 * m;
  const auto rounded = static_cast<long>(std::llround(doubled));
  if (std::abs(doubled - static_cast<double>(rounded)) > 1e-9 || rounded < 1)
    throw Error("module count m must be a positive multiple of 0.5, got " + std::to_string(m));
  std::vector<ModuleKind> seq;
  const long pairs = rounded / 2;
  for (long i = 0; i < pairs; ++i) {
    seq.push_back(ModuleKind::Plain2D);
    seq.push_back(ModuleKind::TwoPlusOneD);
  }
  if (rounded % 2 == 1) seq.push_back(ModuleKind::Plain2D);
  return seq;
}

int conv_layer_count(double m) { return 3 * static_cast<int>(module_sequence(m).size()); }

LayerSchedule LayerSchedule::desk() { return LayerSchedule{}; }

LayerSchedule LayerSchedule::reference_scale() {
  LayerSchedule s;
  s.m_per_level = {0, 1.5, 2, 3, 1.5};
  s.d_per_level = {0, 64, 128, 256, 512};
  s.stem_channels = 64;
  return s;
}

GraphDefaults GraphDefaults::desk() { return GraphDefaults{}; }

GraphDefaults GraphDefaults::reference_scale() {
  GraphDefaults d;
  d.level_budget = {0, 64, 128, 256, 512};
  d.stem_channels = 64;
  return d;
}

int block_in_width(const ArchitectureGraph& g, const LayerSchedule& s, int level) {
  if (level < 1 || level > kNumLevels) throw Error("block_in_width: bad level");
  if (level == 1) return g.stem_width();
  return s.expansion * g.level_channel_budget[static_cast<size_t>(level - 1)];
}

int block_out_width(const BlockNode& n, const LayerSchedule& s) {
  return n.is_stem() ? n.channels : s.expansion * n.channels;
}

int head_width(const ArchitectureGraph& g, const LayerSchedule& s) {
  return s.expansion * g.level_channel_budget[kNumLevels];
}

ParameterBreakdown parameter_count(const ArchitectureGraph& g, const LayerSchedule& s) {
  ParameterBreakdown p;

  for (const auto& n : g.nodes) {
    if (n.is_stem()) {
      const int cin = n.kind == NodeKind::AppearanceStem ? s.in_channels_appearance
                                                         : s.in_channels_motion;
      p.stem_conv += 49LL * cin * n.channels;
      p.stem_bn += 2LL * n.channels;
      if (n.kind == NodeKind::AppearanceStem) {
        p.stem_conv += 5LL * n.channels * n.channels;
        p.stem_bn += 2LL * n.channels;
      }
      continue;
    }

    const int in_w = block_in_width(g, s, n.level);
    const int d = s.d_per_level[static_cast<size_t>(n.level)];
    const int c = n.channels;
    const int out_w = s.expansion * c;
    const auto seq = module_sequence(s.m_per_level[static_cast<size_t>(n.level)]);
    for (size_t j = 0; j < seq.size(); ++j) {
      const int entry = j == 0 ? in_w : out_w;
      if (seq[j] == ModuleKind::Plain2D) {
        p.block_conv += static_cast<long long>(entry) * c;  // 1x1 bottleneck entry
        p.block_bn += 2LL * c;
        p.block_conv += 9LL * c * d;
        p.block_bn += 2LL * d;
      } else {
        p.block_conv += 3LL * entry;  // depthwise temporal taps
        p.block_bn += 2LL * entry;
        p.block_conv += 9LL * entry * d;
        p.block_bn += 2LL * d;
      }
      p.block_conv += static_cast<long long>(d) * out_w;  // 1x1 expansion
      p.block_bn += 2LL * out_w;
      if (j == 0) {  // projected shortcut, always present on the first module
        p.block_conv += static_cast<long long>(entry) * out_w;
        p.block_bn += 2LL * out_w;
      }
    }
  }

  for (const auto& e : g.edges) {
    const int src_w = block_out_width(g.node(e.src), s);
    const int dst_w = block_in_width(g, s, g.node(e.dst).level);
    if (src_w != dst_w) p.adapter += static_cast<long long>(src_w) * dst_w;
  }
  p.edge_logits = static_cast<long long>(g.edges.size());

  const int h = head_width(g, s);
  int head_in = 0;
  int level4 = 0;
  for (const auto& n : g.nodes) {
    if (n.level != kNumLevels) continue;
    ++level4;
    const int w = block_out_width(n, s);
    if (w != h) p.adapter += static_cast<long long>(w) * h;
  }
  head_in = s.concat_level4 ? level4 * h : h;
  p.head = static_cast<long long>(head_in) * s.num_classes + s.num_classes;
  return p;
}

}  // namespace msnas
